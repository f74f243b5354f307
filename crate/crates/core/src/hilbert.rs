//! Discrete Hilbert curve on `[0,1)^d`.
//!
//! A point is quantized to `m` bits per axis and mapped to its position
//! along the order-`m` curve (a `d*m`-bit integer). Encoding and decoding use
//! Skilling's transpose formulation of Butz's algorithm. For `d = 1` the
//! curve is the identity.

use thiserror::Error;

/// Widest packed index.
pub const MAX_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("coordinate {index} = {value} is outside [0, 1)")]
    CoordinateOutOfRange { index: usize, value: f64 },
    #[error("resolution d*m = {d}*{m} must lie in 1..=64")]
    ResolutionOverflow { d: usize, m: u32 },
    #[error("cannot sort an empty point list")]
    Empty,
}

/// Position of a cell along the order-`m` curve in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HilbertIndex {
    pub bits: u64,
    pub d: u32,
    pub m: u32,
}

/// Choice of bits per axis when sorting particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    /// `floor(64 / d)` bits per axis.
    #[default]
    Max,
    /// A fixed number of bits per axis.
    Fixed(u32),
    /// Smallest `m` at which all indices are distinct, capped at `floor(64 / d)`.
    Auto,
}

impl Resolution {
    pub fn max_bits(d: usize) -> u32 {
        MAX_BITS / d as u32
    }
}

fn check_resolution(d: usize, m: u32) -> Result<(), HilbertError> {
    if d == 0 || m == 0 || (d as u64) * (m as u64) > MAX_BITS as u64 {
        return Err(HilbertError::ResolutionOverflow { d, m });
    }
    Ok(())
}

#[inline]
fn quantize(v: f64, m: u32) -> u64 {
    // v < 1 so v * 2^m < 2^m; the cast truncates toward zero.
    (v * (m as f64).exp2()) as u64
}

fn check_point(p: &[f64]) -> Result<(), HilbertError> {
    for (index, &value) in p.iter().enumerate() {
        if !(0.0..1.0).contains(&value) {
            return Err(HilbertError::CoordinateOutOfRange { index, value });
        }
    }
    Ok(())
}

/// Index of the order-`m` cell containing `p`.
pub fn hilbert_index(p: &[f64], m: u32) -> Result<HilbertIndex, HilbertError> {
    let d = p.len();
    check_resolution(d, m)?;
    check_point(p)?;
    Ok(HilbertIndex {
        bits: index_unchecked(p, m),
        d: d as u32,
        m,
    })
}

fn index_unchecked(p: &[f64], m: u32) -> u64 {
    let d = p.len();
    if d == 1 {
        return quantize(p[0], m);
    }
    let mut buf = [0u64; 64];
    let x = &mut buf[..d];
    for (xi, &v) in x.iter_mut().zip(p) {
        *xi = quantize(v, m);
    }
    axes_to_transpose(x, m);
    interleave(x, m)
}

/// Center of cell `k` along the curve.
pub fn hilbert_cell_center(k: HilbertIndex) -> Vec<f64> {
    let d = k.d as usize;
    let scale = (-(k.m as f64)).exp2();
    if d == 1 {
        return vec![(k.bits as f64 + 0.5) * scale];
    }
    let mut x = deinterleave(k.bits, d, k.m);
    transpose_to_axes(&mut x, k.m);
    x.iter().map(|&c| (c as f64 + 0.5) * scale).collect()
}

/// Stable permutation ordering `points` (row-major, `d` per point) along
/// the curve; ties keep their input order.
pub fn hilbert_sort(points: &[f64], d: usize, m: u32) -> Result<Vec<usize>, HilbertError> {
    if points.is_empty() {
        return Err(HilbertError::Empty);
    }
    check_resolution(d, m)?;
    for p in points.chunks_exact(d) {
        check_point(p)?;
    }
    let keys: Vec<u64> = points.chunks_exact(d).map(|p| index_unchecked(p, m)).collect();
    Ok(argsort_keys(&keys))
}

/// Sorts under a [`Resolution`] policy and reports the `m` used.
pub fn hilbert_sort_with(
    points: &[f64],
    d: usize,
    resolution: Resolution,
) -> Result<(Vec<usize>, u32), HilbertError> {
    let cap = Resolution::max_bits(d);
    match resolution {
        Resolution::Max => Ok((hilbert_sort(points, d, cap)?, cap)),
        Resolution::Fixed(m) => Ok((hilbert_sort(points, d, m)?, m)),
        Resolution::Auto => {
            if points.is_empty() {
                return Err(HilbertError::Empty);
            }
            check_resolution(d, cap)?;
            for p in points.chunks_exact(d) {
                check_point(p)?;
            }
            let n = points.len() / d;
            let lg = usize::BITS - n.saturating_sub(1).leading_zeros();
            let mut m = lg.div_ceil(d as u32).clamp(1, cap);
            loop {
                let keys: Vec<u64> =
                    points.chunks_exact(d).map(|p| index_unchecked(p, m)).collect();
                let order = argsort_keys(&keys);
                let distinct = order.windows(2).all(|w| keys[w[0]] != keys[w[1]]);
                if distinct || m == cap {
                    return Ok((order, m));
                }
                m += 1;
            }
        }
    }
}

fn argsort_keys(keys: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_unstable_by_key(|&i| (keys[i], i));
    order
}

/// Spaces the low 32 bits of `v` out to the even bit positions.
#[inline]
fn spread2(v: u64) -> u64 {
    let mut x = v & 0xffff_ffff;
    x = (x | x << 16) & 0x0000_ffff_0000_ffff;
    x = (x | x << 8) & 0x00ff_00ff_00ff_00ff;
    x = (x | x << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    (x | x << 1) & 0x5555_5555_5555_5555
}

/// Most significant bit level first; within a level axis 0 first.
fn interleave(x: &[u64], m: u32) -> u64 {
    if x.len() == 2 {
        return spread2(x[0]) << 1 | spread2(x[1]);
    }
    let mut h = 0u64;
    for level in (0..m).rev() {
        for &xi in x {
            h = (h << 1) | ((xi >> level) & 1);
        }
    }
    h
}

fn deinterleave(h: u64, d: usize, m: u32) -> Vec<u64> {
    let mut x = vec![0u64; d];
    let total = d as u32 * m;
    for pos in 0..total {
        let bit = (h >> (total - 1 - pos)) & 1;
        let axis = pos as usize % d;
        let level = m - 1 - pos / d as u32;
        x[axis] |= bit << level;
    }
    x
}

fn axes_to_transpose(x: &mut [u64], bits: u32) {
    let n = x.len();
    let top = 1u64 << (bits - 1);
    let mut q = top;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            // Branch-free: invert the low bits of x[0] if bit q of x[i] is
            // set, otherwise exchange them with those of x[i].
            let set = ((x[i] & q) != 0) as u64;
            let mask = set.wrapping_neg();
            let t = (x[0] ^ x[i]) & p & !mask;
            x[0] ^= (p & mask) | t;
            x[i] ^= t;
        }
        q >>= 1;
    }
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = top;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in x.iter_mut() {
        *xi ^= t;
    }
}

fn transpose_to_axes(x: &mut [u64], bits: u32) {
    let n = x.len();
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let end = 2u64 << (bits - 1);
    let mut q = 2u64;
    while q != end {
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use rand::Rng;

    fn idx(bits: u64, d: u32, m: u32) -> HilbertIndex {
        HilbertIndex { bits, d, m }
    }

    #[test]
    fn one_dimensional_identity() {
        assert_eq!(hilbert_index(&[0.3], 3).unwrap().bits, 2);
        assert_eq!(hilbert_cell_center(idx(2, 1, 3)), vec![0.3125]);
    }

    #[test]
    fn quadrants_form_an_edge_path() {
        let centers: Vec<Vec<f64>> = (0..4).map(|k| hilbert_cell_center(idx(k, 2, 1))).collect();
        for c in &centers {
            assert!(c.iter().all(|&v| v == 0.25 || v == 0.75));
        }
        for w in centers.windows(2) {
            let diffs: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).collect();
            assert_eq!(diffs.iter().filter(|&&v| v == 0.5).count(), 1);
            assert_eq!(diffs.iter().filter(|&&v| v == 0.0).count(), 1);
        }
    }

    #[test]
    fn round_trip_d2_m3() {
        for k in 0..64 {
            let c = hilbert_cell_center(idx(k, 2, 3));
            assert_eq!(hilbert_index(&c, 3).unwrap().bits, k);
        }
    }

    #[test]
    fn d3_m2_covers_all_cells() {
        let mut seen = std::collections::HashSet::new();
        for k in 0..64 {
            let c = hilbert_cell_center(idx(k, 3, 2));
            let cell: Vec<u64> = c.iter().map(|v| (v * 4.0) as u64).collect();
            assert!(seen.insert(cell));
        }
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            hilbert_index(&[1.0, 0.2], 4),
            Err(HilbertError::CoordinateOutOfRange { index: 0, .. })
        ));
        assert!(matches!(
            hilbert_index(&[-0.1], 4),
            Err(HilbertError::CoordinateOutOfRange { .. })
        ));
        assert!(matches!(
            hilbert_index(&[0.1, 0.2, 0.3], 22),
            Err(HilbertError::ResolutionOverflow { .. })
        ));
        assert!(matches!(
            hilbert_index(&[0.1], 0),
            Err(HilbertError::ResolutionOverflow { .. })
        ));
        assert_eq!(hilbert_sort(&[], 2, 4), Err(HilbertError::Empty));
    }

    #[test]
    fn scalar_sort() {
        assert_eq!(hilbert_sort(&[0.9, 0.1, 0.5], 1, 64).unwrap(), vec![1, 2, 0]);
        assert_eq!(hilbert_sort(&[0.4], 1, 64).unwrap(), vec![0]);
    }

    #[test]
    fn ties_keep_input_order() {
        let pts = [0.5, 0.5, 0.1, 0.1, 0.5, 0.5, 0.1, 0.1];
        assert_eq!(hilbert_sort(&pts, 2, 4).unwrap(), vec![1, 3, 0, 2]);
    }

    #[test]
    fn full_resolution_in_one_dimension() {
        let a = 0.5;
        let b = 0.5 + f64::EPSILON;
        assert!(hilbert_index(&[a], 64).unwrap() < hilbert_index(&[b], 64).unwrap());
    }

    #[test]
    fn auto_resolution_separates_particles() {
        let mut rng = stream_rng(1, 0);
        let pts: Vec<f64> = (0..2 * 500).map(|_| rng.random::<f64>()).collect();
        let (order, m) = hilbert_sort_with(&pts, 2, Resolution::Auto).unwrap();
        assert!(m < 32);
        let full = hilbert_sort(&pts, 2, 32).unwrap();
        assert_eq!(order, full);
    }

    #[test]
    fn holder_surrogate_d2() {
        for m in 1..=6u32 {
            let cells = 1u64 << (2 * m);
            let centers: Vec<Vec<f64>> =
                (0..cells).map(|k| hilbert_cell_center(idx(k, 2, m))).collect();
            let mut worst = 0.0f64;
            for a in 0..cells as usize {
                for b in a + 1..cells as usize {
                    let dist = (centers[a][0] - centers[b][0])
                        .abs()
                        .max((centers[a][1] - centers[b][1]).abs());
                    let gap = ((b - a) as f64 / cells as f64).sqrt();
                    worst = worst.max(dist / gap);
                }
            }
            assert!(worst <= 4.0, "m={m}: C_H = {worst}");
        }
    }
}
