//! Neural decoding: positions `p` and velocities `v` in the plane,
//! `p_t = p_{t-1} + delta v_{t-1}`, `v_t = v_{t-1} + N(0, sigma2 I)`,
//! `x_0 ~ N(0, I_4)`, and `d_y` conditionally independent spike counts
//! `y_ti ~ Poisson(delta exp(alpha_i + beta_i . x_t))`.
//!
//! Only the velocities are random, so the transition consumes a
//! two-dimensional uniform.
//!
//! Parameter-file keys (prefix `neural.`): `dy`, `delta`, `sigma2`, `seed`
//! (draws `alpha_i ~ N(2.5, 1)` and `beta_i ~ U[0,1]^4`), or explicit
//! `alpha` (`dy` values) and `beta` (`dy x 4`, row-major).

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{ModelError, Observations, ParamFile};
use crate::fk::FeynmanKac;
use crate::seed::stream_rng;
use crate::transforms::{open_unit, ppnd16, PsiBounds};

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDecodingParams {
    pub delta: f64,
    pub sigma2: f64,
    pub alpha: Vec<f64>,
    /// `d_y x 4`, row-major.
    pub beta: Vec<f64>,
}

pub const DEFAULT_TUNING_SEED: u64 = 20_140_101;

impl Default for NeuralDecodingParams {
    fn default() -> Self {
        Self::with_seed(10, 0.03, 0.019, DEFAULT_TUNING_SEED)
    }
}

impl NeuralDecodingParams {
    /// Draws the tuning parameters from `seed`.
    pub fn with_seed(dy: usize, delta: f64, sigma2: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let alpha = (0..dy).map(|_| 2.5 + rng.sample::<f64, _>(StandardNormal)).collect();
        let beta = (0..dy * STATE_DIM).map(|_| rng.random::<f64>()).collect();
        NeuralDecodingParams {
            delta,
            sigma2,
            alpha,
            beta,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.delta > 0.0 && self.sigma2 > 0.0) {
            return Err(ModelError::InvalidParameter("delta and sigma2 must be positive".into()));
        }
        if self.alpha.is_empty() || self.beta.len() != self.alpha.len() * STATE_DIM {
            return Err(ModelError::InvalidParameter("beta must be dy x 4 with dy >= 1".into()));
        }
        Ok(())
    }

    pub fn from_param_file(p: &ParamFile) -> Result<Self, ModelError> {
        p.check_keys("neural", &["dy", "delta", "sigma2", "seed", "alpha", "beta"])?;
        let dy = p.count("neural.dy")?.unwrap_or(10);
        let delta = p.scalar("neural.delta")?.unwrap_or(0.03);
        let sigma2 = p.scalar("neural.sigma2")?.unwrap_or(0.019);
        let seed = p.scalar("neural.seed")?.map_or(DEFAULT_TUNING_SEED, |s| s as u64);
        let mut out = Self::with_seed(dy, delta, sigma2, seed);
        if let Some(a) = p.list("neural.alpha", dy)? {
            out.alpha = a;
        }
        if let Some(b) = p.get("neural.beta") {
            out.beta = b.to_vec();
        }
        out.validate()?;
        Ok(out)
    }

    /// `log lambda_i - log delta = alpha_i + beta_i . x`.
    fn log_rate(&self, i: usize, x: &[f64]) -> f64 {
        let b = &self.beta[i * STATE_DIM..(i + 1) * STATE_DIM];
        self.alpha[i] + b.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

pub struct NeuralDecodingModel {
    params: NeuralDecodingParams,
    obs: Observations,
    sigma: f64,
    /// `sum_i log(y_ti!)` per `t`.
    log_fact: Vec<f64>,
    bounds: PsiBounds,
}

/// Variances of the exact marginal law of `x_t` (mean zero).
fn marginal_var(delta: f64, sigma2: f64, t: usize) -> [f64; STATE_DIM] {
    // Per axis (p, v): P <- Phi P Phi^T + diag(0, sigma2), Phi = [[1, delta], [0, 1]].
    let (mut pp, mut pv, mut vv) = (1.0, 0.0, 1.0);
    for _ in 0..t {
        let npp = pp + 2.0 * delta * pv + delta * delta * vv;
        let npv = pv + delta * vv;
        let nvv = vv + sigma2;
        (pp, pv, vv) = (npp, npv, nvv);
    }
    [pp, pp, vv, vv]
}

pub fn build_neural(params: &NeuralDecodingParams, obs: &Observations) -> Result<NeuralDecodingModel, ModelError> {
    params.validate()?;
    obs.expect_dim(params.obs_dim())?;
    let log_fact = (0..obs.len())
        .map(|t| {
            obs.row(t)
                .iter()
                .map(|&y| (2..=y.max(0.0) as u64).map(|k| (k as f64).ln()).sum::<f64>())
                .sum()
        })
        .collect();
    let var = marginal_var(params.delta, params.sigma2, obs.horizon());
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let bounds = PsiBounds::from_moments(&[0.0; STATE_DIM], &sd)?;
    Ok(NeuralDecodingModel {
        params: params.clone(),
        obs: obs.clone(),
        sigma: params.sigma2.sqrt(),
        log_fact,
        bounds,
    })
}

impl NeuralDecodingModel {
    pub fn params(&self) -> &NeuralDecodingParams {
        &self.params
    }

    fn log_obs(&self, t: usize, x: &[f64]) -> f64 {
        let y = self.obs.row(t);
        let ln_delta = self.params.delta.ln();
        let mut s = -self.log_fact[t];
        for (i, &yi) in y.iter().enumerate() {
            let eta = self.params.log_rate(i, x);
            s += yi * (ln_delta + eta) - self.params.delta * eta.exp();
        }
        s
    }
}

impl FeynmanKac for NeuralDecodingModel {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.obs.horizon()
    }

    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = ppnd16(open_unit(ui));
        }
    }

    fn sample_transition(&self, _t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        let delta = self.params.delta;
        out[0] = prev[0] + delta * prev[2];
        out[1] = prev[1] + delta * prev[3];
        out[2] = prev[2] + self.sigma * ppnd16(open_unit(v[0]));
        out[3] = prev[3] + self.sigma * ppnd16(open_unit(v[1]));
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
}

/// Simulates spike counts; returns observations and states.
pub fn simulate_neural(
    params: &NeuralDecodingParams,
    t_max: usize,
    seed: u64,
) -> Result<(Observations, Vec<f64>), ModelError> {
    params.validate()?;
    let mut rng = stream_rng(seed, 0);
    let sigma = params.sigma2.sqrt();
    let mut x = [0.0; STATE_DIM];
    for xi in x.iter_mut() {
        *xi = rng.sample(StandardNormal);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 0..=t_max {
        if t > 0 {
            let (z0, z1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            x = [
                x[0] + params.delta * x[2],
                x[1] + params.delta * x[3],
                x[2] + sigma * z0,
                x[3] + sigma * z1,
            ];
        }
        xs.extend(x);
        for i in 0..params.obs_dim() {
            let lambda = params.delta * params.log_rate(i, &x).exp();
            let y = Poisson::new(lambda)
                .map_err(|e| ModelError::InvalidParameter(format!("Poisson rate {lambda}: {e}")))?
                .sample(&mut rng);
            ys.push(y);
        }
    }
    Ok((Observations::new(params.obs_dim(), ys)?, xs))
}
