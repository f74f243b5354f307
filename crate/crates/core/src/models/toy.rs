//! Univariate nonlinear benchmark:
//! `x_t = b1 x + b2 x / (1 + x^2) + b3 cos(b4 t) + sigma nu_t`,
//! `y_t = x_t^2 / a + eps_t`, `x_0 ~ N(0, x0_var)`.
//!
//! Parameter-file keys (prefix `toy.`): `a`, `b` (four values), `sigma2`,
//! `x0_var`, `x0` (starting state used by the simulator).

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ModelError, Observations, ParamFile};
use crate::fk::FeynmanKac;
use crate::seed::stream_rng;
use crate::transforms::{normal_log_pdf, open_unit, ppnd16, PsiBounds};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyUnivariateParams {
    pub a: f64,
    pub b: [f64; 4],
    pub sigma2: f64,
    pub x0_var: f64,
    /// Initial state of simulated data.
    pub x0: f64,
}

impl Default for ToyUnivariateParams {
    fn default() -> Self {
        ToyUnivariateParams {
            a: 20.0,
            b: [0.5, 25.0, 8.0, 1.2],
            sigma2: 10.0,
            x0_var: 2.0,
            x0: 0.1,
        }
    }
}

impl ToyUnivariateParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.b.iter().all(|v| v.is_finite()) && self.x0.is_finite();
        if !(self.a > 0.0 && self.sigma2 > 0.0 && self.x0_var > 0.0 && finite) {
            return Err(ModelError::InvalidParameter(
                "toy model needs a > 0, sigma2 > 0, x0_var > 0 and finite b".into(),
            ));
        }
        Ok(())
    }

    pub fn from_param_file(p: &ParamFile) -> Result<Self, ModelError> {
        p.check_keys("toy", &["a", "b", "sigma2", "x0_var", "x0"])?;
        let mut out = Self::default();
        if let Some(v) = p.scalar("toy.a")? {
            out.a = v;
        }
        if let Some(v) = p.list("toy.b", 4)? {
            out.b.copy_from_slice(&v);
        }
        if let Some(v) = p.scalar("toy.sigma2")? {
            out.sigma2 = v;
        }
        if let Some(v) = p.scalar("toy.x0_var")? {
            out.x0_var = v;
        }
        if let Some(v) = p.scalar("toy.x0")? {
            out.x0 = v;
        }
        out.validate()?;
        Ok(out)
    }

    /// Deterministic part of the transition.
    pub fn drift(&self, t: usize, x: f64) -> f64 {
        let [b1, b2, b3, b4] = self.b;
        b1 * x + b2 * x / (1.0 + x * x) + b3 * (b4 * t as f64).cos()
    }
}

pub struct ToyModel {
    params: ToyUnivariateParams,
    obs: Observations,
    sigma: f64,
    bounds: PsiBounds,
}

const PILOT_STEPS: usize = 10_000;
const PILOT_SEED: u64 = 0x7079_6c6f_7400_0001;

/// State range of a long pilot run, widened by 10% of its width per side.
fn pilot_bounds(p: &ToyUnivariateParams) -> Result<PsiBounds, ModelError> {
    let mut rng = stream_rng(PILOT_SEED, 0);
    let sigma = p.sigma2.sqrt();
    let z: f64 = rng.sample(StandardNormal);
    let mut x = p.x0_var.sqrt() * z;
    let (mut lo, mut hi) = (x, x);
    for t in 1..=PILOT_STEPS {
        let z: f64 = rng.sample(StandardNormal);
        x = p.drift(t, x) + sigma * z;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let margin = 0.1 * (hi - lo).max(f64::MIN_POSITIVE);
    Ok(PsiBounds::new(vec![lo - margin], vec![hi + margin])?)
}

pub fn build_toy(params: &ToyUnivariateParams, obs: &Observations) -> Result<ToyModel, ModelError> {
    params.validate()?;
    obs.expect_dim(1)?;
    Ok(ToyModel {
        params: params.clone(),
        obs: obs.clone(),
        sigma: params.sigma2.sqrt(),
        bounds: pilot_bounds(params)?,
    })
}

impl ToyModel {
    pub fn params(&self) -> &ToyUnivariateParams {
        &self.params
    }

    fn log_obs(&self, t: usize, x: f64) -> f64 {
        normal_log_pdf(self.obs.row(t)[0], x * x / self.params.a, 1.0)
    }
}

impl FeynmanKac for ToyModel {
    fn dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.obs.horizon()
    }

    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        out[0] = self.params.x0_var.sqrt() * ppnd16(open_unit(u[0]));
    }

    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = self.params.drift(t, prev[0]) + self.sigma * ppnd16(open_unit(v[0]));
    }

    fn log_g0(&self, x: &[f64]) -> f64 {
        self.log_obs(0, x[0])
    }

    fn log_g(&self, t: usize, _prev: &[f64], x: &[f64]) -> f64 {
        self.log_obs(t, x[0])
    }

    fn psi_bounds(&self) -> &PsiBounds {
        &self.bounds
    }

    fn log_transition_density(&self, t: usize, prev: &[f64], x: &[f64]) -> Option<f64> {
        Some(normal_log_pdf(x[0], self.params.drift(t, prev[0]), self.sigma))
    }
}

/// Simulates from `x_0 = params.x0`; returns observations and states.
pub fn simulate_toy(
    params: &ToyUnivariateParams,
    t_max: usize,
    seed: u64,
) -> Result<(Observations, Vec<f64>), ModelError> {
    params.validate()?;
    let mut rng = stream_rng(seed, 0);
    let sigma = params.sigma2.sqrt();
    let mut x = params.x0;
    let mut xs = Vec::with_capacity(t_max + 1);
    let mut ys = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        if t > 0 {
            let z: f64 = rng.sample(StandardNormal);
            x = params.drift(t, x) + sigma * z;
        }
        let e: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(x * x / params.a + e);
    }
    Ok((Observations::new(1, ys)?, xs))
}
