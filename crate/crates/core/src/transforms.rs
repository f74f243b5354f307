//! Inverse-CDF utilities used to write transitions as deterministic maps of
//! uniforms, and the logistic map of the state space into the unit cube.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("probability {0} is outside the open interval (0, 1)")]
    Domain(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("invalid bounds on coordinate {0}: lower must be below upper")]
    Bounds(usize),
}

/// Smallest uniform handed to an inverse CDF.
pub const U_MIN: f64 = 1.0 / (1u64 << 54) as f64;
/// Largest uniform handed to an inverse CDF.
pub const U_MAX: f64 = 1.0 - 1.0 / (1u64 << 53) as f64;

/// Pulls a `[0,1)` uniform into the open interval.
#[inline]
pub fn open_unit(u: f64) -> f64 {
    u.clamp(U_MIN, U_MAX)
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `N(mean, sd^2)` at `x`.
#[inline]
pub fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal quantile (Wichura's AS 241, PPND16).
pub fn norm_inv_cdf(u: f64) -> Result<f64, TransformError> {
    if u > 0.0 && u < 1.0 {
        Ok(ppnd16(u))
    } else {
        Err(TransformError::Domain(u))
    }
}

#[allow(clippy::excessive_precision)]
pub(crate) fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608_0;
        let den = ((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061_0e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083_0e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
            * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// A Gaussian kernel `x_prev -> N(offset + matrix * x_prev, L L^T)`, with
/// `L` lower triangular and positive on the diagonal.
///
/// Matrices are stored row-major so that per-particle evaluation does not
/// allocate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernelSpec {
    dim: usize,
    prev_dim: usize,
    offset: Vec<f64>,
    matrix: Vec<f64>,
    chol: Vec<f64>,
    log_det_chol: f64,
}

impl GaussianKernelSpec {
    /// Factorizes `covariance`; `matrix` is `dim x prev_dim`.
    pub fn new(
        offset: Vec<f64>,
        matrix: &DMatrix<f64>,
        covariance: &DMatrix<f64>,
    ) -> Result<Self, TransformError> {
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(TransformError::NotPositiveDefinite)?
            .l();
        Self::from_cholesky(offset, matrix, &chol)
    }

    pub fn from_cholesky(
        offset: Vec<f64>,
        matrix: &DMatrix<f64>,
        chol: &DMatrix<f64>,
    ) -> Result<Self, TransformError> {
        let dim = offset.len();
        if chol.nrows() != dim || chol.ncols() != dim || matrix.nrows() != dim {
            return Err(TransformError::Shape(format!(
                "offset has {dim} entries, matrix is {}x{}, factor is {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                chol.nrows(),
                chol.ncols()
            )));
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            if !(chol[(i, i)] > 0.0) {
                return Err(TransformError::NotPositiveDefinite);
            }
            for j in 0..=i {
                l[i * dim + j] = chol[(i, j)];
            }
        }
        let prev_dim = matrix.ncols();
        let m: Vec<f64> = (0..dim)
            .flat_map(|i| (0..prev_dim).map(move |j| (i, j)))
            .map(|(i, j)| matrix[(i, j)])
            .collect();
        let log_det_chol = (0..dim).map(|i| l[i * dim + i].ln()).sum();
        Ok(GaussianKernelSpec {
            dim,
            prev_dim,
            offset,
            matrix: m,
            chol: l,
            log_det_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prev_dim(&self) -> usize {
        self.prev_dim
    }

    /// Mean `offset + matrix * x_prev` written into `out`.
    pub fn mean_into(&self, x_prev: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.matrix[i * self.prev_dim..(i + 1) * self.prev_dim];
            *o = self.offset[i] + row.iter().zip(x_prev).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Inverse Rosenblatt map with `u` clamped into the open unit cube.
    pub fn sample_into(&self, x_prev: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        for (zi, &ui) in z.iter_mut().zip(u) {
            *zi = ppnd16(open_unit(ui));
        }
        self.mean_into(x_prev, out);
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            out[i] += row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Log density of the kernel at `x` given `x_prev`.
    pub fn log_density(&self, x_prev: &[f64], x: &[f64]) -> f64 {
        let d = self.dim;
        let mut r = [0.0f64; 16];
        let mut rv;
        let r: &mut [f64] = if d <= 16 {
            &mut r[..d]
        } else {
            rv = vec![0.0; d];
            &mut rv
        };
        self.mean_into(x_prev, r);
        let mut quad = 0.0;
        for i in 0..d {
            let mut v = x[i] - r[i];
            for j in 0..i {
                v -= self.chol[i * d + j] * r[j];
            }
            v /= self.chol[i * d + i];
            r[i] = v;
            quad += v * v;
        }
        -0.5 * quad - self.log_det_chol - d as f64 * LN_SQRT_2PI
    }
}

/// `mean(x_prev) + L * (Phi^{-1}(u_1), ..., Phi^{-1}(u_d))`.
///
/// For a Gaussian, this is exactly the chain-rule inversion of the
/// conditional CDFs taken in coordinate order: the conditional law of
/// coordinate `i` given earlier ones depends on them only through row `i`
/// of `L`.
pub fn gaussian_rosenblatt_inv(
    spec: &GaussianKernelSpec,
    x_prev: &[f64],
    u: &[f64],
) -> Result<Vec<f64>, TransformError> {
    if u.len() != spec.dim || x_prev.len() != spec.prev_dim {
        return Err(TransformError::Shape(format!(
            "expected u of length {} and x_prev of length {}",
            spec.dim, spec.prev_dim
        )));
    }
    if let Some(&bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(TransformError::Domain(bad));
    }
    let mut out = vec![0.0; spec.dim];
    spec.sample_into(x_prev, u, &mut out);
    Ok(out)
}

/// Per-coordinate constants of the logistic map.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PsiBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, TransformError> {
        if lower.len() != upper.len() {
            return Err(TransformError::Shape(format!(
                "{} lower vs {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(TransformError::Bounds(i));
            }
        }
        Ok(PsiBounds { lower, upper })
    }

    /// `mean_i -/+ 2 sd_i`.
    pub fn from_moments(mean: &[f64], sd: &[f64]) -> Result<Self, TransformError> {
        let lower = mean.iter().zip(sd).map(|(m, s)| m - 2.0 * s).collect();
        let upper = mean.iter().zip(sd).map(|(m, s)| m + 2.0 * s).collect();
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Appends one coordinate.
    pub fn extended(&self, lower: f64, upper: f64) -> Result<Self, TransformError> {
        let mut l = vec![lower];
        let mut u = vec![upper];
        l.extend_from_slice(&self.lower);
        u.extend_from_slice(&self.upper);
        Self::new(l, u)
    }
}

/// Smallest and largest value fed to the Hilbert encoder.
pub const PSI_EPS: f64 = f64::EPSILON;

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `psi_i(x_i) = 1 / (1 + exp(-(x_i - lower_i) / (upper_i - lower_i)))`.
pub fn psi_logistic(x: &[f64], b: &PsiBounds) -> Vec<f64> {
    x.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .map(|(&xi, (&l, &u))| logistic((xi - l) / (u - l)))
        .collect()
}

pub fn psi_logistic_inv(p: &[f64], b: &PsiBounds) -> Vec<f64> {
    p.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .map(|(&pi, (&l, &u))| l + (u - l) * (pi.ln() - (-pi).ln_1p()))
        .collect()
}

/// `psi` clamped to `[PSI_EPS, 1 - PSI_EPS]`, written into `out`; this is
/// the form handed to the Hilbert encoder.
#[inline]
pub fn psi_clamped_into(x: &[f64], b: &PsiBounds, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let l = b.lower[i];
        let z = (x[i] - l) / (b.upper[i] - l);
        let v = logistic(z);
        *o = if v.is_nan() {
            0.5
        } else {
            v.clamp(PSI_EPS, 1.0 - PSI_EPS)
        };
    }
}
