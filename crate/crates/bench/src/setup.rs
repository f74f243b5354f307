//! Model, engine and test-function selection shared by the CLI and the
//! experiment harness.

use std::fmt;
use std::str::FromStr;

use sqmc::fk::{Engine, FeynmanKac, PointSource, Resampler};
use sqmc::hilbert::Resolution;
use sqmc::lowdisc::{RandomizationScheme, ScrambleKind};
use sqmc::models::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearGaussian,
    Toy,
    Msv,
    Neural,
}

impl ModelKind {
    /// Namespace of the model's parameter-file keys.
    pub fn prefix(self) -> &'static str {
        match self {
            ModelKind::LinearGaussian => "lg",
            ModelKind::Toy => "toy",
            ModelKind::Msv => "msv",
            ModelKind::Neural => "neural",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lg" | "linear-gaussian" => Ok(ModelKind::LinearGaussian),
            "toy" => Ok(ModelKind::Toy),
            "msv" | "sv" => Ok(ModelKind::Msv),
            "neural" => Ok(ModelKind::Neural),
            other => Err(format!("unknown model `{other}` (expected lg, toy, msv or neural)")),
        }
    }
}

/// Parameters of one of the bundled models.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    LinearGaussian(LinearGaussianParams),
    Toy(ToyUnivariateParams),
    Msv(MsvParams),
    Neural(NeuralDecodingParams),
}

impl ModelConfig {
    pub fn from_params(kind: ModelKind, pf: &ParamFile) -> Result<Self, ModelError> {
        if let Some(key) = pf.keys().find(|k| !k.starts_with(&format!("{}.", kind.prefix()))) {
            return Err(ModelError::InvalidParameter(format!(
                "key `{key}` does not belong to model `{}`",
                kind.prefix()
            )));
        }
        Ok(match kind {
            ModelKind::LinearGaussian => ModelConfig::LinearGaussian(LinearGaussianParams::from_param_file(pf)?),
            ModelKind::Toy => ModelConfig::Toy(ToyUnivariateParams::from_param_file(pf)?),
            ModelKind::Msv => ModelConfig::Msv(MsvParams::from_param_file(pf)?),
            ModelKind::Neural => ModelConfig::Neural(NeuralDecodingParams::from_param_file(pf)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::LinearGaussian(_) => ModelKind::LinearGaussian,
            ModelConfig::Toy(_) => ModelKind::Toy,
            ModelConfig::Msv(_) => ModelKind::Msv,
            ModelConfig::Neural(_) => ModelKind::Neural,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelConfig::LinearGaussian(p) => p.dim(),
            ModelConfig::Toy(_) => 1,
            ModelConfig::Msv(p) => p.dim(),
            ModelConfig::Neural(_) => 4,
        }
    }

    /// Simulated observations `y_{0:t}` and states `x_{0:t}`.
    pub fn simulate(&self, t: usize, seed: u64) -> Result<(Observations, Vec<f64>), ModelError> {
        match self {
            ModelConfig::LinearGaussian(p) => simulate_linear_gaussian(p, t, seed),
            ModelConfig::Toy(p) => simulate_toy(p, t, seed),
            ModelConfig::Msv(p) => simulate_msv(p, t, seed),
            ModelConfig::Neural(p) => simulate_neural(p, t, seed),
        }
    }

    pub fn build(&self, obs: &Observations) -> Result<Box<dyn FeynmanKac + Send>, ModelError> {
        Ok(match self {
            ModelConfig::LinearGaussian(p) => Box::new(build_linear_gaussian(p, obs)?),
            ModelConfig::Toy(p) => Box::new(build_toy(p, obs)?),
            ModelConfig::Msv(p) => Box::new(build_msv(p, obs)?),
            ModelConfig::Neural(p) => Box::new(build_neural(p, obs)?),
        })
    }

    /// Exact filter and likelihood, when the model is linear-Gaussian.
    pub fn kalman(&self, obs: &Observations) -> Option<Result<KalmanOutput, ModelError>> {
        match self {
            ModelConfig::LinearGaussian(p) => Some(kalman_suite(p, obs)),
            _ => None,
        }
    }
}

/// Where SQMC draws its per-step points from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Scheme(ScrambleKind),
    Iid,
}

impl FromStr for PointKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" => Ok(PointKind::Iid),
            "owen" => Ok(PointKind::Scheme(ScrambleKind::OwenNested)),
            "shift" => Ok(PointKind::Scheme(ScrambleKind::DigitalShift)),
            "none" => Ok(PointKind::Scheme(ScrambleKind::None)),
            other => Err(format!("unknown scheme `{other}` (expected none, shift, owen or iid)")),
        }
    }
}

/// A filter configuration without its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineSpec {
    Smc(Resampler),
    Sqmc(PointKind, Resolution),
}

impl EngineSpec {
    pub fn engine(&self, seed: u64) -> Engine {
        match *self {
            EngineSpec::Smc(resampler) => Engine::Smc { resampler, seed },
            EngineSpec::Sqmc(points, resolution) => Engine::Sqmc {
                points: match points {
                    PointKind::Iid => PointSource::Iid(seed),
                    PointKind::Scheme(kind) => PointSource::Qmc(RandomizationScheme::new(kind, seed)),
                },
                resolution,
            },
        }
    }

    pub fn is_sqmc(&self) -> bool {
        matches!(self, EngineSpec::Sqmc(..))
    }
}

impl FromStr for EngineSpec {
    type Err = String;
    /// `smc[-systematic|-multinomial]` or `sqmc[-owen|-shift|-none|-iid]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, tail) = s.split_once('-').unwrap_or((s, ""));
        match head {
            "smc" => Ok(EngineSpec::Smc(if tail.is_empty() { Resampler::Systematic } else { tail.parse()? })),
            "sqmc" => Ok(EngineSpec::Sqmc(
                if tail.is_empty() { PointKind::Scheme(ScrambleKind::OwenNested) } else { tail.parse()? },
                Resolution::Max,
            )),
            _ => Err(format!("unknown engine `{s}`")),
        }
    }
}

impl fmt::Display for EngineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineSpec::Smc(Resampler::Systematic) => write!(f, "smc-systematic"),
            EngineSpec::Smc(Resampler::Multinomial) => write!(f, "smc-multinomial"),
            EngineSpec::Sqmc(p, _) => {
                let s = match p {
                    PointKind::Iid => "iid",
                    PointKind::Scheme(ScrambleKind::OwenNested) => "owen",
                    PointKind::Scheme(ScrambleKind::DigitalShift) => "shift",
                    PointKind::Scheme(ScrambleKind::None) => "none",
                };
                write!(f, "sqmc-{s}")
            }
        }
    }
}

pub fn parse_resolution(s: &str) -> Result<Resolution, String> {
    match s {
        "max" => Ok(Resolution::Max),
        "auto" => Ok(Resolution::Auto),
        m => m
            .parse()
            .map(Resolution::Fixed)
            .map_err(|_| format!("resolution must be max, auto or a bit count, got `{m}`")),
    }
}

/// A monomial test function `x_i^k`, written `xi` or `xi^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Monomial {
    pub coord: usize,
    pub power: i32,
}

impl Monomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        x[self.coord].powi(self.power)
    }
}

impl FromStr for Monomial {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("test function must look like x0 or x1^2, got `{s}`");
        let rest = s.trim().strip_prefix('x').ok_or_else(bad)?;
        let (c, p) = rest.split_once('^').unwrap_or((rest, "1"));
        let coord = c.parse().map_err(|_| bad())?;
        let power = p.parse().map_err(|_| bad())?;
        Ok(Monomial { coord, power })
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.power == 1 {
            write!(f, "x{}", self.coord)
        } else {
            write!(f, "x{}^{}", self.coord, self.power)
        }
    }
}

/// Comma-separated list of monomials.
pub fn parse_monomials(s: &str) -> Result<Vec<Monomial>, String> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}
