//! Low-discrepancy point sets.
//!
//! Sobol' points in base 2 with Joe–Kuo direction numbers (up to 32
//! dimensions), optionally randomized by a digital shift or by Owen's
//! nested uniform scrambling, plus star-discrepancy evaluation used to
//! sanity-check point-set quality.

mod discrepancy;
mod sobol;

pub use discrepancy::{star_discrepancy, DiscrepancyMode};
pub use sobol::{sobol_points, MAX_DIM};

use std::io::{self, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowDiscError {
    #[error("dimension {0} exceeds the direction-number table (max {MAX_DIM})")]
    DimensionExceedsTable(usize),
    #[error("point count must be at least 1")]
    ZeroCount,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("discrepancy mode mismatch: {0}")]
    ModeMismatch(String),
}

/// How a Sobol' point set is randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScrambleKind {
    None,
    /// XOR of every coordinate with one uniform 53-bit vector.
    DigitalShift,
    /// Owen's nested uniform scrambling in base 2.
    OwenNested,
}

impl std::str::FromStr for ScrambleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ScrambleKind::None),
            "shift" | "digital-shift" => Ok(ScrambleKind::DigitalShift),
            "owen" | "owen-nested" => Ok(ScrambleKind::OwenNested),
            other => Err(format!("unknown scramble kind `{other}`")),
        }
    }
}

impl std::fmt::Display for ScrambleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScrambleKind::None => "none",
            ScrambleKind::DigitalShift => "shift",
            ScrambleKind::OwenNested => "owen",
        })
    }
}

/// A randomization scheme. Identical `(kind, seed, n, d)` always reproduce
/// the same bits; `seed` is ignored when `kind` is [`ScrambleKind::None`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomizationScheme {
    pub kind: ScrambleKind,
    pub seed: u64,
}

impl RandomizationScheme {
    pub const NONE: RandomizationScheme = RandomizationScheme {
        kind: ScrambleKind::None,
        seed: 0,
    };

    pub fn new(kind: ScrambleKind, seed: u64) -> Self {
        RandomizationScheme { kind, seed }
    }

    pub fn owen(seed: u64) -> Self {
        Self::new(ScrambleKind::OwenNested, seed)
    }

    pub fn shift(seed: u64) -> Self {
        Self::new(ScrambleKind::DigitalShift, seed)
    }

    /// Same kind, different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self::new(self.kind, seed)
    }
}

/// `n` points in `[0,1)^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl PointSet {
    /// Builds a point set from row-major values, checking shape and range.
    pub fn from_rows(n: usize, d: usize, values: Vec<f64>) -> Option<Self> {
        if values.len() != n * d || values.iter().any(|v| !(0.0..1.0).contains(v)) {
            return None;
        }
        Some(PointSet { n, d, values })
    }

    pub(crate) fn from_raw(n: usize, d: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * d);
        PointSet { n, d, values }
    }

    /// `n` i.i.d. uniform points; used where a plain Monte Carlo stream
    /// stands in for a QMC one.
    pub fn iid<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        let values = (0..n * d).map(|_| rng.random::<f64>()).collect();
        PointSet { n, d, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// One row per point, comma separated, shortest round-trip decimal text.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}
