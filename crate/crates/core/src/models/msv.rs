//! Multivariate stochastic volatility:
//! `y_t = S_t^{1/2} eps_t`, `x_t = mu + Phi (x_{t-1} - mu) + Psi^{1/2} nu_t`,
//! `S_t = diag(exp(x_t))`, `(eps_t, nu_t) ~ N(0, C)`, with `x_0` drawn from
//! the stationary law.
//!
//! Because `eps_t` and `nu_t` are correlated the potential depends on both
//! `x_{t-1}` and `x_t`: given the transition noise `nu_t`, `eps_t` is
//! Gaussian with mean `C_en C_nn^{-1} nu_t`.
//!
//! Parameter-file keys (prefix `msv.`): `d`, `phi`, `mu`, `psi2` (one value
//! or `d` values), `c` (the full `2d x 2d` matrix, row-major).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{cholesky_flat, log_normal_pdf_chol, ModelError, Observations, ParamFile};
use crate::fk::FeynmanKac;
use crate::seed::stream_rng;
use crate::transforms::{GaussianKernelSpec, PsiBounds};

#[derive(Debug, Clone, PartialEq)]
pub struct MsvParams {
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
    pub psi2: Vec<f64>,
    /// Correlation matrix of `(eps, nu)`.
    pub c: DMatrix<f64>,
}

impl MsvParams {
    /// `phi = 0.9`, `mu = -9`, `psi2 = 0.1` in every coordinate with the
    /// block correlation
    /// `[[0.6 J + 0.4 I, -0.1 J - 0.2 I], [-0.1 J - 0.2 I, 0.8 J + 0.2 I]]`
    /// (`J` the all-ones matrix).
    pub fn default_for(d: usize) -> Self {
        MsvParams {
            phi: vec![0.9; d],
            mu: vec![-9.0; d],
            psi2: vec![0.1; d],
            c: block_correlation(d, -0.1, -0.2),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.dim();
        if d == 0 || self.mu.len() != d || self.psi2.len() != d {
            return Err(ModelError::InvalidParameter("phi, mu and psi2 must have length d >= 1".into()));
        }
        if self.c.nrows() != 2 * d || self.c.ncols() != 2 * d {
            return Err(ModelError::InvalidParameter(format!("c must be {0}x{0}", 2 * d)));
        }
        if !self.phi.iter().all(|p| p.abs() < 1.0) {
            return Err(ModelError::InvalidParameter("|phi_i| must be < 1".into()));
        }
        if !self.psi2.iter().all(|p| *p > 0.0 && p.is_finite()) || !self.mu.iter().all(|m| m.is_finite()) {
            return Err(ModelError::InvalidParameter("psi2 must be positive and mu finite".into()));
        }
        let asym = (&self.c - self.c.transpose()).abs().max();
        let diag = self.c.diagonal().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        if !(asym <= 1e-12 && diag <= 1e-12) {
            return Err(ModelError::InvalidParameter(
                "c must be symmetric with unit diagonal".into(),
            ));
        }
        cholesky_flat(&self.c, "c")?;
        Ok(())
    }

    pub fn from_param_file(p: &ParamFile) -> Result<Self, ModelError> {
        p.check_keys("msv", &["d", "phi", "mu", "psi2", "c"])?;
        let d = p.count("msv.d")?.unwrap_or(1);
        let mut out = Self::default_for(d);
        if let Some(v) = p.list("msv.phi", d)? {
            out.phi = v;
        }
        if let Some(v) = p.list("msv.mu", d)? {
            out.mu = v;
        }
        if let Some(v) = p.list("msv.psi2", d)? {
            out.psi2 = v;
        }
        if let Some(v) = p.get("msv.c") {
            if v.len() != 4 * d * d {
                return Err(ModelError::InvalidParameter(format!(
                    "`msv.c` has {} entries, expected {}",
                    v.len(),
                    4 * d * d
                )));
            }
            out.c = DMatrix::from_row_slice(2 * d, 2 * d, v);
        }
        out.validate()?;
        Ok(out)
    }

    fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        (
            self.c.view((0, 0), (d, d)).into_owned(),
            self.c.view((0, d), (d, d)).into_owned(),
            self.c.view((d, d), (d, d)).into_owned(),
        )
    }

    /// Covariance `Psi^{1/2} C_nn Psi^{1/2}` of the transition noise.
    pub fn transition_cov(&self) -> DMatrix<f64> {
        let (_, _, cnn) = self.blocks();
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| cnn[(i, j)] * (self.psi2[i] * self.psi2[j]).sqrt())
    }

    /// Stationary covariance `V_ij = Q_ij / (1 - phi_i phi_j)`.
    pub fn stationary_cov(&self) -> DMatrix<f64> {
        let q = self.transition_cov();
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| q[(i, j)] / (1.0 - self.phi[i] * self.phi[j]))
    }
}

/// `[[0.6 J + 0.4 I, a J + b I], [a J + b I, 0.8 J + 0.2 I]]`.
pub(crate) fn block_correlation(d: usize, a: f64, b: f64) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let eye = if i == j { 1.0 } else { 0.0 };
            c[(i, j)] = 0.6 + 0.4 * eye;
            c[(d + i, d + j)] = 0.8 + 0.2 * eye;
            c[(i, d + j)] = a + b * eye;
            c[(d + i, j)] = a + b * eye;
        }
    }
    c
}

pub struct MsvModel {
    params: MsvParams,
    obs: Observations,
    init: GaussianKernelSpec,
    trans: GaussianKernelSpec,
    inv_sd: Vec<f64>,
    /// `C_en C_nn^{-1}`, row-major.
    gain: Vec<f64>,
    cond_chol: Vec<f64>,
    cond_log_det: f64,
    marg_chol: Vec<f64>,
    marg_log_det: f64,
    bounds: PsiBounds,
}

pub fn build_msv(params: &MsvParams, obs: &Observations) -> Result<MsvModel, ModelError> {
    params.validate()?;
    let d = params.dim();
    obs.expect_dim(d)?;
    let (cee, cen, cnn) = params.blocks();
    let cnn_chol = cnn.clone().cholesky().ok_or(ModelError::NotPositiveDefinite("c"))?;
    // gain = C_en C_nn^{-1} = (C_nn^{-1} C_ne)^T
    let gain_m = cnn_chol.solve(&cen.transpose()).transpose();
    let cond = &cee - &gain_m * cen.transpose();
    let cond = 0.5 * (&cond + cond.transpose());
    let (cond_chol, cond_log_det) = cholesky_flat(&cond, "c")?;
    let (marg_chol, marg_log_det) = cholesky_flat(&cee, "c")?;

    let phi = DMatrix::from_diagonal(&DVector::from_column_slice(&params.phi));
    let offset: Vec<f64> = (0..d).map(|i| (1.0 - params.phi[i]) * params.mu[i]).collect();
    let trans = GaussianKernelSpec::new(offset, &phi, &params.transition_cov())?;
    let v = params.stationary_cov();
    let init = GaussianKernelSpec::new(params.mu.clone(), &DMatrix::zeros(d, 0), &v)?;
    let sd: Vec<f64> = (0..d).map(|i| v[(i, i)].sqrt()).collect();
    let bounds = PsiBounds::from_moments(&params.mu, &sd)?;
    Ok(MsvModel {
        params: params.clone(),
        obs: obs.clone(),
        init,
        trans,
        inv_sd: params.psi2.iter().map(|p| 1.0 / p.sqrt()).collect(),
        gain: gain_m.transpose().iter().copied().collect(),
        cond_chol,
        cond_log_det,
        marg_chol,
        marg_log_det,
        bounds,
    })
}

const STACK: usize = 16;

impl MsvModel {
    pub fn params(&self) -> &MsvParams {
        &self.params
    }

    /// Standardized returns `y_i exp(-x_i / 2)` into `out`; returns the
    /// log-Jacobian `-sum x_i / 2`.
    fn standardize(&self, t: usize, x: &[f64], out: &mut [f64]) -> f64 {
        let y = self.obs.row(t);
        let mut jac = 0.0;
        for i in 0..x.len() {
            out[i] = y[i] * (-0.5 * x[i]).exp();
            jac -= 0.5 * x[i];
        }
        jac
    }
}

impl FeynmanKac for MsvModel {
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
        let d = x.len();
        let mut buf = [0.0; STACK];
        let mut heap;
        let e: &mut [f64] = if d <= STACK {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let jac = self.standardize(0, x, e);
        log_normal_pdf_chol(e, &self.marg_chol, self.marg_log_det) + jac
    }

    fn log_g(&self, t: usize, prev: &[f64], x: &[f64]) -> f64 {
        let d = x.len();
        let mut buf = [0.0; 2 * STACK];
        let mut heap;
        let scratch: &mut [f64] = if d <= STACK {
            &mut buf[..2 * d]
        } else {
            heap = vec![0.0; 2 * d];
            &mut heap
        };
        let (e, nu) = scratch.split_at_mut(d);
        let p = &self.params;
        for i in 0..d {
            nu[i] = (x[i] - p.mu[i] - p.phi[i] * (prev[i] - p.mu[i])) * self.inv_sd[i];
        }
        let jac = self.standardize(t, x, e);
        for i in 0..d {
            let row = &self.gain[i * d..(i + 1) * d];
            e[i] -= row.iter().zip(nu.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        log_normal_pdf_chol(e, &self.cond_chol, self.cond_log_det) + jac
    }

    fn psi_bounds(&self) -> &PsiBounds {
        &self.bounds
    }

    fn log_transition_density(&self, _t: usize, prev: &[f64], x: &[f64]) -> Option<f64> {
        Some(self.trans.log_density(prev, x))
    }
}

/// Simulates returns and log-volatilities; returns observations and states.
pub fn simulate_msv(params: &MsvParams, t_max: usize, seed: u64) -> Result<(Observations, Vec<f64>), ModelError> {
    params.validate()?;
    let d = params.dim();
    let lc = params.c.clone().cholesky().ok_or(ModelError::NotPositiveDefinite("c"))?.l();
    let lv = params
        .stationary_cov()
        .cholesky()
        .ok_or(ModelError::NotPositiveDefinite("stationary covariance"))?
        .l();
    let mut rng = stream_rng(seed, 0);
    let mut normals = |k: usize| DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = DVector::from_column_slice(&params.mu) + &lv * normals(d);
    let mut xs = Vec::with_capacity((t_max + 1) * d);
    let mut ys = Vec::with_capacity((t_max + 1) * d);
    for t in 0..=t_max {
        let en = &lc * normals(2 * d);
        if t > 0 {
            for i in 0..d {
                x[i] = params.mu[i] + params.phi[i] * (x[i] - params.mu[i]) + params.psi2[i].sqrt() * en[d + i];
            }
        }
        xs.extend(x.iter());
        ys.extend((0..d).map(|i| (0.5 * x[i]).exp() * en[i]));
    }
    Ok((Observations::new(d, ys)?, xs))
}
