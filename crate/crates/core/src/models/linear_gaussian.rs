//! Linear-Gaussian state-space model with exact Kalman and
//! Rauch-Tung-Striebel recursions.
//!
//! `x_0 ~ N(m0, P0)`, `x_t = A x_{t-1} + N(0, Q)`, `y_t = B x_t + N(0, R)`.
//! Parameter-file keys (prefix `lg.`): `d`, `dy`, `a`, `q`, `b`, `r`, `m0`,
//! `p0`. Matrices are row-major lists; a single number `s` means `s * I`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{cholesky_flat, log_normal_pdf_chol, ModelError, Observations, ParamFile};
use crate::fk::FeynmanKac;
use crate::seed::stream_rng;
use crate::transforms::{GaussianKernelSpec, PsiBounds};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianParams {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl LinearGaussianParams {
    /// Scalar AR(1) observed in noise, started from its stationary law.
    pub fn scalar(rho: f64, q: f64, r: f64) -> Self {
        let p0 = if rho.abs() < 1.0 { q / (1.0 - rho * rho) } else { q };
        LinearGaussianParams {
            a: DMatrix::from_element(1, 1, rho),
            q: DMatrix::from_element(1, 1, q),
            b: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, r),
            m0: DVector::zeros(1),
            p0: DMatrix::from_element(1, 1, p0),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.dim();
        let dy = self.obs_dim();
        let shapes = [
            ("a", &self.a, d, d),
            ("q", &self.q, d, d),
            ("b", &self.b, dy, d),
            ("r", &self.r, dy, dy),
            ("p0", &self.p0, d, d),
        ];
        for (name, m, rows, cols) in shapes {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(ModelError::InvalidParameter(format!(
                    "`{name}` is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if self.m0.len() != d || d == 0 || dy == 0 {
            return Err(ModelError::InvalidParameter("`m0` length must equal d".into()));
        }
        for (name, m) in [("q", &self.q), ("r", &self.r), ("p0", &self.p0)] {
            if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
                return Err(ModelError::InvalidParameter(format!("`{name}` is not symmetric")));
            }
            cholesky_flat(m, name)?;
        }
        Ok(())
    }

    /// Reads `lg.*` keys; missing keys fall back to the scalar
    /// `(rho, q, r) = (0.9, 1, 1)` model.
    pub fn from_param_file(p: &ParamFile) -> Result<Self, ModelError> {
        p.check_keys("lg", &["d", "dy", "a", "q", "b", "r", "m0", "p0"])?;
        let d = p.count("lg.d")?.unwrap_or(1);
        let dy = p.count("lg.dy")?.unwrap_or(d);
        let mat = |key: &str, rows: usize, cols: usize, default: f64| -> Result<DMatrix<f64>, ModelError> {
            match p.get(key) {
                None => Ok(DMatrix::identity(rows, cols) * default),
                Some([s]) => Ok(DMatrix::identity(rows, cols) * *s),
                Some(v) if v.len() == rows * cols => Ok(DMatrix::from_row_slice(rows, cols, v)),
                Some(v) => Err(ModelError::InvalidParameter(format!(
                    "`{key}` has {} entries, expected {}",
                    v.len(),
                    rows * cols
                ))),
            }
        };
        let a = mat("lg.a", d, d, 0.9)?;
        let q = mat("lg.q", d, d, 1.0)?;
        let b = mat("lg.b", dy, d, 1.0)?;
        let r = mat("lg.r", dy, dy, 1.0)?;
        let m0 = DVector::from_vec(p.list("lg.m0", d)?.unwrap_or(vec![0.0; d]));
        let p0 = match p.get("lg.p0") {
            Some(_) => mat("lg.p0", d, d, 1.0)?,
            None => stationary_or(&a, &q),
        };
        let params = LinearGaussianParams { a, q, b, r, m0, p0 };
        params.validate()?;
        Ok(params)
    }
}

/// Stationary covariance when `A` is stable, else `Q`.
fn stationary_or(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..10_000 {
        let next = a * &p * a.transpose() + q;
        let delta = (&next - &p).abs().max();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return q.clone();
        }
        if delta < 1e-14 * p.abs().max() {
            return p;
        }
    }
    q.clone()
}

pub struct LinearGaussianModel {
    params: LinearGaussianParams,
    obs: Observations,
    init: GaussianKernelSpec,
    trans: GaussianKernelSpec,
    b: Vec<f64>,
    r_chol: Vec<f64>,
    r_log_det: f64,
    bounds: PsiBounds,
}

pub fn build_linear_gaussian(
    params: &LinearGaussianParams,
    obs: &Observations,
) -> Result<LinearGaussianModel, ModelError> {
    params.validate()?;
    let d = params.dim();
    obs.expect_dim(params.obs_dim())?;
    let init = GaussianKernelSpec::new(params.m0.iter().copied().collect(), &DMatrix::zeros(d, 0), &params.p0)
        .map_err(|_| ModelError::NotPositiveDefinite("p0"))?;
    let trans = GaussianKernelSpec::new(vec![0.0; d], &params.a, &params.q)
        .map_err(|_| ModelError::NotPositiveDefinite("q"))?;
    let (r_chol, r_log_det) = cholesky_flat(&params.r, "r")?;
    let b = params.b.transpose().iter().copied().collect();

    // Envelope of the marginal means +- 2 sd over the horizon.
    let mut mean = params.m0.clone();
    let mut cov = params.p0.clone();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for t in 0..=obs.horizon() {
        if t > 0 {
            mean = &params.a * &mean;
            cov = &params.a * &cov * params.a.transpose() + &params.q;
        }
        for i in 0..d {
            let sd = cov[(i, i)].sqrt();
            lower[i] = lower[i].min(mean[i] - 2.0 * sd);
            upper[i] = upper[i].max(mean[i] + 2.0 * sd);
        }
    }
    let bounds = PsiBounds::new(lower, upper)?;
    Ok(LinearGaussianModel {
        params: params.clone(),
        obs: obs.clone(),
        init,
        trans,
        b,
        r_chol,
        r_log_det,
        bounds,
    })
}

impl LinearGaussianModel {
    pub fn params(&self) -> &LinearGaussianParams {
        &self.params
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    fn log_obs(&self, t: usize, x: &[f64]) -> f64 {
        let d = x.len();
        let y = self.obs.row(t);
        let dy = y.len();
        let mut r = [0.0f64; 16];
        let mut rv;
        let r: &mut [f64] = if dy <= 16 {
            &mut r[..dy]
        } else {
            rv = vec![0.0; dy];
            &mut rv
        };
        for (i, ri) in r.iter_mut().enumerate() {
            let row = &self.b[i * d..(i + 1) * d];
            *ri = y[i] - row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        log_normal_pdf_chol(r, &self.r_chol, self.r_log_det)
    }
}

impl FeynmanKac for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn horizon(&self) -> usize {
        self.obs.horizon()
    }

    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        self.init.sample_into(&[], u, out);
    }

    fn sample_transition(&self, _t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        self.trans.sample_into(prev, v, out);
    }

    fn log_g0(&self, x: &[f64]) -> f64 {
        self.log_obs(0, x)
    }

    fn log_g(&self, t: usize, _prev: &[f64], x: &[f64]) -> f64 {
        self.log_obs(t, x)
    }

    fn psi_bounds(&self) -> &PsiBounds {
        &self.bounds
    }

    fn log_transition_density(&self, _t: usize, prev: &[f64], x: &[f64]) -> Option<f64> {
        Some(self.trans.log_density(prev, x))
    }
}

fn gaussian_draw<R: rand::Rng>(rng: &mut R, mean: &DVector<f64>, chol: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + chol * z
}

/// Simulates `(x_{0:T}, y_{0:T})`; returns the observations and the states.
pub fn simulate_linear_gaussian(
    params: &LinearGaussianParams,
    t_max: usize,
    seed: u64,
) -> Result<(Observations, Vec<f64>), ModelError> {
    params.validate()?;
    let chol = |m: &DMatrix<f64>, name| {
        m.clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or(ModelError::NotPositiveDefinite(name))
    };
    let (lp, lq, lr) = (chol(&params.p0, "p0")?, chol(&params.q, "q")?, chol(&params.r, "r")?);
    let mut rng = stream_rng(seed, 0);
    let zero_y = DVector::zeros(params.obs_dim());
    let zero_x = DVector::zeros(params.dim());
    let mut x = gaussian_draw(&mut rng, &params.m0, &lp);
    let mut states = Vec::new();
    let mut ys = Vec::new();
    for t in 0..=t_max {
        if t > 0 {
            x = &params.a * &x + gaussian_draw(&mut rng, &zero_x, &lq);
        }
        let y = &params.b * &x + gaussian_draw(&mut rng, &zero_y, &lr);
        states.extend(x.iter());
        ys.extend(y.iter());
    }
    Ok((Observations::new(params.obs_dim(), ys)?, states))
}

/// Exact filtering and smoothing moments and log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    /// `log p(y_{0:T})`.
    pub loglik: f64,
    /// `log p(y_{0:t})` for every `t`.
    pub partial_loglik: Vec<f64>,
    pub filter_means: Vec<DVector<f64>>,
    pub filter_covs: Vec<DMatrix<f64>>,
    pub smoother_means: Vec<DVector<f64>>,
    pub smoother_covs: Vec<DMatrix<f64>>,
}

pub fn kalman_suite(params: &LinearGaussianParams, obs: &Observations) -> Result<KalmanOutput, ModelError> {
    params.validate()?;
    obs.expect_dim(params.obs_dim())?;
    let (a, q, b, r) = (&params.a, &params.q, &params.b, &params.r);
    let d = params.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let mut m = params.m0.clone();
    let mut p = params.p0.clone();
    let mut loglik = 0.0;
    let mut partial = Vec::with_capacity(obs.len());
    let mut fm = Vec::with_capacity(obs.len());
    let mut fp: Vec<DMatrix<f64>> = Vec::with_capacity(obs.len());
    for t in 0..obs.len() {
        if t > 0 {
            m = a * &m;
            p = a * &p * a.transpose() + q;
        }
        let y = DVector::from_column_slice(obs.row(t));
        let s = b * &p * b.transpose() + r;
        let s = 0.5 * (&s + s.transpose());
        let chol = s.clone().cholesky().ok_or(ModelError::NotPositiveDefinite("innovation"))?;
        let resid = &y - b * &m;
        let z = chol.l().solve_lower_triangular(&resid).expect("triangular solve");
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        loglik += -0.5 * z.norm_squared() - log_det - y.len() as f64 * crate::transforms::LN_SQRT_2PI;
        partial.push(loglik);
        let k = (chol.solve(&(b * &p))).transpose();
        m = &m + &k * resid;
        let ikb = &id - &k * b;
        p = &ikb * &p * ikb.transpose() + &k * r * k.transpose();
        fm.push(m.clone());
        fp.push(p.clone());
    }
    let n = fm.len();
    let mut sm = fm.clone();
    let mut sp = fp.clone();
    for t in (0..n - 1).rev() {
        let pred = a * &fp[t] * a.transpose() + q;
        let chol = pred.clone().cholesky().ok_or(ModelError::NotPositiveDefinite("prediction"))?;
        let j = chol.solve(&(a * &fp[t])).transpose();
        sm[t] = &fm[t] + &j * (&sm[t + 1] - a * &fm[t]);
        sp[t] = &fp[t] + &j * (&sp[t + 1] - &pred) * j.transpose();
    }
    Ok(KalmanOutput {
        loglik,
        partial_loglik: partial,
        filter_means: fm,
        filter_covs: fp,
        smoother_means: sm,
        smoother_covs: sp,
    })
}
