//! Particle marginal Metropolis-Hastings with SMC, SQMC or exact
//! likelihoods, plus chain diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::fk::{run, Engine, FeynmanKac, FilterError, PointSource, Resampler, RunOptions};
use crate::hilbert::Resolution;
use crate::lowdisc::{RandomizationScheme, ScrambleKind};
use crate::models::{
    build_linear_gaussian, build_msv, kalman_suite, LinearGaussianParams, ModelError, MsvParams, Observations,
};
use crate::seed::{derive, stream_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmmhError {
    #[error("proposal covariance: {0}")]
    InvalidSigma(String),
    #[error("initial parameter has zero prior density")]
    InitOutsidePrior,
    #[error("chain needs at least {min} iterations, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("chain coordinate is constant")]
    ZeroVariance,
    #[error("the family has no exact likelihood")]
    NoExactLikelihood,
    #[error("coordinate {0} out of range")]
    Coordinate(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// A parametrized state-space model with a prior.
pub trait ParameterModelFamily: Sync {
    fn dim(&self) -> usize;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta{i}")).collect()
    }

    /// Log prior density up to a constant; `-inf` outside the support.
    fn log_prior(&self, theta: &[f64]) -> f64;

    fn build(&self, theta: &[f64]) -> Result<Box<dyn FeynmanKac + Send + '_>, ModelError>;

    fn exact_log_likelihood(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmmhEngine {
    Smc(Resampler),
    Sqmc(ScrambleKind),
    Exact,
}

impl std::str::FromStr for PmmhEngine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smc" => Ok(PmmhEngine::Smc(Resampler::Systematic)),
            "sqmc" => Ok(PmmhEngine::Sqmc(ScrambleKind::OwenNested)),
            "exact" => Ok(PmmhEngine::Exact),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainSample {
    pub p: usize,
    pub names: Vec<String>,
    /// `n_iter x p`, row-major.
    pub chain: Vec<f64>,
    /// Log-likelihood estimate carried by each row.
    pub loglik: Vec<f64>,
    /// Whether row `i` was reached by an accepted move (row 0: false).
    pub accepted: Vec<bool>,
    pub sigma: DMatrix<f64>,
}

impl MarkovChainSample {
    pub fn len(&self) -> usize {
        self.loglik.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loglik.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.chain[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.chain.iter().skip(j).step_by(self.p).copied().collect()
    }
}

/// Square root of a symmetric positive semidefinite matrix via its
/// eigendecomposition.
fn proposal_factor(sigma: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>, PmmhError> {
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(PmmhError::InvalidSigma(format!(
            "expected {p}x{p}, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !sigma.iter().all(|v| v.is_finite()) {
        return Err(PmmhError::InvalidSigma("non-finite entry".into()));
    }
    let scale = sigma.abs().max().max(f64::MIN_POSITIVE);
    if (sigma - sigma.transpose()).abs().max() > 1e-12 * scale {
        return Err(PmmhError::InvalidSigma("not symmetric".into()));
    }
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(PmmhError::InvalidSigma("not positive semidefinite".into()));
    }
    let root = DVector::from_iterator(p, eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Log-likelihood estimate at `theta`; weight collapse gives `-inf`.
fn log_likelihood<F: ParameterModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    n: usize,
    engine: PmmhEngine,
    seed: u64,
) -> Result<f64, PmmhError> {
    let e = match engine {
        PmmhEngine::Exact => return family.exact_log_likelihood(theta).ok_or(PmmhError::NoExactLikelihood),
        PmmhEngine::Smc(resampler) => Engine::Smc { resampler, seed },
        PmmhEngine::Sqmc(kind) => Engine::Sqmc {
            points: PointSource::Qmc(RandomizationScheme::new(kind, seed)),
            resolution: Resolution::Max,
        },
    };
    let model = family.build(theta)?;
    match run(&model, n, model.horizon(), e, RunOptions::default()) {
        Ok(out) => Ok(out.log_z()),
        Err(FilterError::WeightCollapse { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e.into()),
    }
}

/// Gaussian random-walk Metropolis-Hastings on `theta` with the likelihood
/// replaced by a fresh filter estimate at every proposal. The estimate of
/// the current state is carried, never recomputed.
pub fn pmmh_run<F: ParameterModelFamily + ?Sized>(
    family: &F,
    theta0: &[f64],
    sigma: &DMatrix<f64>,
    n_iter: usize,
    n: usize,
    engine: PmmhEngine,
    seed: u64,
) -> Result<MarkovChainSample, PmmhError> {
    let p = family.dim();
    if theta0.len() != p {
        return Err(PmmhError::InvalidSigma(format!("theta0 has {} entries, expected {p}", theta0.len())));
    }
    let factor = proposal_factor(sigma, p)?;
    let mut lp = family.log_prior(theta0);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return Err(PmmhError::InitOutsidePrior);
    }
    let mut theta = DVector::from_column_slice(theta0);
    let mut ll = log_likelihood(family, theta0, n, engine, derive(seed, 0))?;
    let mut rng = stream_rng(seed, 0);

    let mut chain = Vec::with_capacity(n_iter * p);
    let mut loglik = Vec::with_capacity(n_iter);
    let mut accepted = Vec::with_capacity(n_iter);
    if n_iter > 0 {
        chain.extend(theta.iter());
        loglik.push(ll);
        accepted.push(false);
    }
    for i in 1..n_iter {
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let log_u: f64 = rng.random::<f64>().ln();
        let prop = &theta + &factor * z;
        let lp_new = family.log_prior(prop.as_slice());
        let mut moved = false;
        if lp_new > f64::NEG_INFINITY {
            let ll_new = log_likelihood(family, prop.as_slice(), n, engine, derive(seed, i as u64))?;
            let ratio = lp_new + ll_new - lp - ll;
            if ll_new > f64::NEG_INFINITY && (log_u < ratio || ll == f64::NEG_INFINITY) {
                theta = prop;
                lp = lp_new;
                ll = ll_new;
                moved = true;
            }
        }
        chain.extend(theta.iter());
        loglik.push(ll);
        accepted.push(moved);
    }
    Ok(MarkovChainSample {
        p,
        names: family.names(),
        chain,
        loglik,
        accepted,
        sigma: sigma.clone(),
    })
}

/// Accepted moves over proposals.
pub fn acceptance_rate(chain: &MarkovChainSample) -> f64 {
    if chain.len() < 2 {
        return 0.0;
    }
    chain.accepted[1..].iter().filter(|&&a| a).count() as f64 / (chain.len() - 1) as f64
}

pub const ESS_MIN_LEN: usize = 100;

/// Effective sample size of one coordinate.
pub fn mcmc_ess(chain: &MarkovChainSample, coordinate: usize) -> Result<f64, PmmhError> {
    if coordinate >= chain.p {
        return Err(PmmhError::Coordinate(coordinate));
    }
    ess(&chain.column(coordinate))
}

/// `n / (1 + 2 sum_k rho_k)` with Geyer's initial positive sequence: sums
/// of adjacent autocovariance pairs are accumulated while positive.
pub fn ess(x: &[f64]) -> Result<f64, PmmhError> {
    let n = x.len();
    if n < ESS_MIN_LEN {
        return Err(PmmhError::TooShort {
            min: ESS_MIN_LEN,
            got: n,
        });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = autocov(0);
    if !(g0 > 0.0) {
        return Err(PmmhError::ZeroVariance);
    }
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    Ok(n as f64 / tau.max(f64::MIN_POSITIVE))
}

/// Scalar AR(1) observed in Gaussian noise with unknown autoregression
/// `rho ~ U(-1, 1)`; the exact likelihood comes from the Kalman filter.
pub struct LinearGaussianFamily {
    pub obs: Observations,
    pub q: f64,
    pub r: f64,
}

impl LinearGaussianFamily {
    fn params(&self, rho: f64) -> LinearGaussianParams {
        LinearGaussianParams::scalar(rho, self.q, self.r)
    }
}

impl ParameterModelFamily for LinearGaussianFamily {
    fn dim(&self) -> usize {
        1
    }

    fn names(&self) -> Vec<String> {
        vec!["rho".into()]
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if theta[0] > -1.0 && theta[0] < 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn build(&self, theta: &[f64]) -> Result<Box<dyn FeynmanKac + Send + '_>, ModelError> {
        Ok(Box::new(build_linear_gaussian(&self.params(theta[0]), &self.obs)?))
    }

    fn exact_log_likelihood(&self, theta: &[f64]) -> Option<f64> {
        kalman_suite(&self.params(theta[0]), &self.obs).ok().map(|k| k.loglik)
    }
}

/// Bivariate stochastic volatility without leverage. Parameters:
/// `(phi_1, phi_2, mu_1, mu_2, psi2_1, psi2_2, rho_eps, rho_nu)`.
///
/// Priors: `phi_i ~ U(0, 1)`, `1 / psi2_i ~ Gamma(shape 10 e^-10, rate
/// 10 e^-3)`, flat on `mu`, and a uniform correlation within each noise
/// block, i.e. `rho ~ U(-1, 1)`.
pub struct SvFamily {
    pub obs: Observations,
}

impl SvFamily {
    pub const DIM: usize = 8;

    pub const GAMMA_SHAPE: f64 = 10.0 * 4.539_992_976_248_485e-5;
    pub const GAMMA_RATE: f64 = 10.0 * 0.049_787_068_367_863_944;

    pub fn params(theta: &[f64]) -> MsvParams {
        MsvParams {
            phi: theta[0..2].to_vec(),
            mu: theta[2..4].to_vec(),
            psi2: theta[4..6].to_vec(),
            c: no_leverage_correlation(theta[6], theta[7]),
        }
    }

    /// Parameter values used to simulate the synthetic data set.
    pub fn reference_theta() -> Vec<f64> {
        vec![0.9, 0.9, -9.0, -9.0, 0.1, 0.1, 0.6, 0.8]
    }
}

/// `blockdiag([[1, r_e], [r_e, 1]], [[1, r_n], [r_n, 1]])`.
fn no_leverage_correlation(rho_eps: f64, rho_nu: f64) -> DMatrix<f64> {
    let mut c = DMatrix::identity(4, 4);
    c[(0, 1)] = rho_eps;
    c[(1, 0)] = rho_eps;
    c[(2, 3)] = rho_nu;
    c[(3, 2)] = rho_nu;
    c
}

impl ParameterModelFamily for SvFamily {
    fn dim(&self) -> usize {
        Self::DIM
    }

    fn names(&self) -> Vec<String> {
        ["phi1", "phi2", "mu1", "mu2", "psi2_1", "psi2_2", "rho_eps", "rho_nu"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let phi_ok = theta[0..2].iter().all(|&p| p > 0.0 && p < 1.0);
        let psi_ok = theta[4..6].iter().all(|&s| s > 0.0 && s.is_finite());
        let rho_ok = theta[6..8].iter().all(|&r| r > -1.0 && r < 1.0);
        let mu_ok = theta[2..4].iter().all(|m| m.is_finite());
        if !(phi_ok && psi_ok && rho_ok && mu_ok) {
            return f64::NEG_INFINITY;
        }
        // Density of psi2 when 1/psi2 ~ Gamma(a, b): s^{-a-1} exp(-b / s).
        theta[4..6]
            .iter()
            .map(|&s| -(Self::GAMMA_SHAPE + 1.0) * s.ln() - Self::GAMMA_RATE / s)
            .sum()
    }

    fn build(&self, theta: &[f64]) -> Result<Box<dyn FeynmanKac + Send + '_>, ModelError> {
        Ok(Box::new(build_msv(&Self::params(theta), &self.obs)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::simulate_linear_gaussian;

    fn lg_family() -> LinearGaussianFamily {
        let (obs, _) = simulate_linear_gaussian(&LinearGaussianParams::scalar(0.7, 1.0, 0.5), 30, 4).unwrap();
        LinearGaussianFamily { obs, q: 1.0, r: 0.5 }
    }

    #[test]
    fn chain_shape_and_rejections() {
        let f = lg_family();
        let sigma = DMatrix::from_element(1, 1, 0.04);
        let c = pmmh_run(&f, &[0.5], &sigma, 200, 32, PmmhEngine::Smc(Resampler::Systematic), 3).unwrap();
        assert_eq!(c.len(), 200);
        assert_eq!(c.row(0), &[0.5]);
        for i in 1..c.len() {
            let same = c.row(i) == c.row(i - 1) && c.loglik[i] == c.loglik[i - 1];
            assert_eq!(!c.accepted[i], same, "i={i}");
            assert!(f.log_prior(c.row(i)) > f64::NEG_INFINITY);
        }
    }

    #[test]
    fn proposals_outside_the_prior_are_rejected() {
        let f = lg_family();
        // Huge steps: almost every proposal leaves (-1, 1).
        let sigma = DMatrix::from_element(1, 1, 1e6);
        let c = pmmh_run(&f, &[0.5], &sigma, 100, 8, PmmhEngine::Exact, 1).unwrap();
        assert!(c.chain.iter().all(|&r| r > -1.0 && r < 1.0));
        assert_eq!(acceptance_rate(&c), 0.0);
    }

    #[test]
    fn errors() {
        let f = lg_family();
        let sigma = DMatrix::from_element(1, 1, 0.01);
        assert_eq!(
            pmmh_run(&f, &[1.5], &sigma, 10, 8, PmmhEngine::Exact, 1),
            Err(PmmhError::InitOutsidePrior)
        );
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            pmmh_run(&f, &[0.5], &neg, 10, 8, PmmhEngine::Exact, 1),
            Err(PmmhError::InvalidSigma(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(proposal_factor(&asym, 2).is_err());
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = proposal_factor(&psd, 2).unwrap();
        assert!((&l * l.transpose() - psd).abs().max() < 1e-12);
        let sv = SvFamily { obs: f.obs.clone() };
        assert_eq!(
            pmmh_run(&sv, &SvFamily::reference_theta(), &DMatrix::identity(8, 8), 2, 8, PmmhEngine::Exact, 1),
            Err(PmmhError::NoExactLikelihood)
        );
    }

    #[test]
    fn acceptance_extremes() {
        let mut c = MarkovChainSample {
            p: 1,
            names: vec!["x".into()],
            chain: vec![0.0; 5],
            loglik: vec![0.0; 5],
            accepted: vec![false; 5],
            sigma: DMatrix::identity(1, 1),
        };
        assert_eq!(acceptance_rate(&c), 0.0);
        c.accepted = vec![false, true, true, true, true];
        assert_eq!(acceptance_rate(&c), 1.0);
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let mut rng = stream_rng(12, 0);
        let iid: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let e = ess(&iid).unwrap();
        assert!((9_000.0..=11_000.0).contains(&e), "{e}");

        let n = 100_000;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = 0.5 * x + z;
                x
            })
            .collect();
        let e = ess(&ar).unwrap();
        let want = n as f64 / 3.0;
        assert!((e - want).abs() < 0.15 * want, "{e} vs {want}");

        assert_eq!(ess(&[1.0; 200]), Err(PmmhError::ZeroVariance));
        assert!(matches!(ess(&[1.0; 10]), Err(PmmhError::TooShort { .. })));
    }

    #[test]
    fn sv_prior_support() {
        let sv = SvFamily {
            obs: Observations::new(2, vec![0.0; 4]).unwrap(),
        };
        let t = SvFamily::reference_theta();
        assert!(sv.log_prior(&t).is_finite());
        for (i, bad) in [(0, 1.0), (1, 0.0), (4, 0.0), (6, -1.0), (7, 1.2)] {
            let mut b = t.clone();
            b[i] = bad;
            assert_eq!(sv.log_prior(&b), f64::NEG_INFINITY, "coordinate {i}");
        }
        // Gamma(a, b) on 1/s: log-density ratio between two psi2 values.
        let mut a = t.clone();
        a[4] = 0.2;
        let diff = sv.log_prior(&a) - sv.log_prior(&t);
        let want = -(SvFamily::GAMMA_SHAPE + 1.0) * 2f64.ln() - SvFamily::GAMMA_RATE * (5.0 - 10.0);
        assert!((diff - want).abs() < 1e-12);
        assert!((SvFamily::GAMMA_SHAPE - 10.0 * (-10f64).exp()).abs() < 1e-18);
        assert!((SvFamily::GAMMA_RATE - 10.0 * (-3f64).exp()).abs() < 1e-15);
    }
}
