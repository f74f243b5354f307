//! Bundled state-space models. Each uses the bootstrap construction: the
//! Markov kernel is the state transition and the potential is the
//! observation density.

mod linear_gaussian;
mod msv;
mod neural;
mod toy;

pub use linear_gaussian::{
    build_linear_gaussian, kalman_suite, simulate_linear_gaussian, KalmanOutput,
    LinearGaussianModel, LinearGaussianParams,
};
pub use msv::{build_msv, simulate_msv, MsvModel, MsvParams};
pub use neural::{build_neural, simulate_neural, NeuralDecodingModel, NeuralDecodingParams};
pub use toy::{build_toy, simulate_toy, ToyModel, ToyUnivariateParams};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::transforms::TransformError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("observations have {got} columns, model expects {want}")]
    ObservationWidth { got: usize, want: usize },
    #[error("no observations")]
    NoObservations,
    #[error("parameter file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Observations `y_0, ..., y_T`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    dim: usize,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(ModelError::NoObservations);
        }
        Ok(Observations { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of time points, `T + 1`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last time index `T`.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The first `t + 1` observations.
    pub fn truncated(&self, t: usize) -> Self {
        Observations {
            dim: self.dim,
            values: self.values[..(t + 1) * self.dim].to_vec(),
        }
    }

    fn expect_dim(&self, want: usize) -> Result<(), ModelError> {
        if self.dim != want {
            return Err(ModelError::ObservationWidth {
                got: self.dim,
                want,
            });
        }
        Ok(())
    }
}

/// Flat `key = value` parameter text. Blank lines and `#` comments are
/// skipped; values are comma-separated number lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamFile {
    entries: BTreeMap<String, Vec<f64>>,
}

impl ParamFile {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ModelError::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            let nums = value
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ModelError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            entries.insert(key.trim().to_string(), nums);
        }
        Ok(ParamFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(|v| v.as_slice())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    fn scalar(&self, key: &str) -> Result<Option<f64>, ModelError> {
        match self.get(key) {
            None => Ok(None),
            Some([v]) => Ok(Some(*v)),
            Some(_) => Err(ModelError::InvalidParameter(format!("`{key}` must be a single number"))),
        }
    }

    /// A list of length `n`; a single number is broadcast.
    fn list(&self, key: &str, n: usize) -> Result<Option<Vec<f64>>, ModelError> {
        match self.get(key) {
            None => Ok(None),
            Some([v]) => Ok(Some(vec![*v; n])),
            Some(v) if v.len() == n => Ok(Some(v.to_vec())),
            Some(v) => Err(ModelError::InvalidParameter(format!(
                "`{key}` has {} entries, expected {n}",
                v.len()
            ))),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ModelError> {
        match self.scalar(key)? {
            None => Ok(None),
            Some(v) if v >= 1.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(v) => Err(ModelError::InvalidParameter(format!(
                "`{key}` = {v} is not a positive integer"
            ))),
        }
    }

    /// Rejects keys outside `prefix` or not in `known`.
    fn check_keys(&self, prefix: &str, known: &[&str]) -> Result<(), ModelError> {
        for k in self.entries.keys() {
            let ok = k
                .strip_prefix(prefix)
                .and_then(|s| s.strip_prefix('.'))
                .is_some_and(|s| known.contains(&s));
            if !ok {
                return Err(ModelError::InvalidParameter(format!(
                    "unknown key `{k}` for model `{prefix}`"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn log_normal_pdf_chol(r: &mut [f64], chol: &[f64], log_det: f64) -> f64 {
    // Solve L z = r in place; log N = -0.5 |z|^2 - log det L - d log sqrt(2 pi).
    let d = r.len();
    for i in 0..d {
        let row = &chol[i * d..i * d + i];
        let s: f64 = row.iter().zip(&r[..i]).map(|(a, b)| a * b).sum();
        r[i] = (r[i] - s) / chol[i * d + i];
    }
    let q: f64 = r.iter().map(|v| v * v).sum();
    -0.5 * q - log_det - d as f64 * crate::transforms::LN_SQRT_2PI
}

/// Row-major lower Cholesky factor and `log det L`.
pub(crate) fn cholesky_flat(
    m: &nalgebra::DMatrix<f64>,
    name: &'static str,
) -> Result<(Vec<f64>, f64), ModelError> {
    let d = m.nrows();
    let l = m
        .clone()
        .cholesky()
        .ok_or(ModelError::NotPositiveDefinite(name))?
        .l();
    let flat: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|ij| l[ij]).collect();
    let log_det = (0..d).map(|i| l[(i, i)].ln()).sum();
    Ok((flat, log_det))
}
