//! Replicated SMC/SQMC runs summarized as mean, variance, MSE and gain
//! factors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sqmc::fk::{run, FeynmanKac, FilterError, RunOptions};
use sqmc::hilbert::Resolution;
use sqmc::lowdisc::ScrambleKind;
use sqmc::models::{Observations, ParamFile};
use sqmc::seed::derive;

use crate::io::load_observations;
use crate::setup::{parse_resolution, EngineSpec, ModelConfig, ModelKind, PointKind};

/// The scalar each replicate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `log Z_T`.
    LogZ,
    /// `log Z_t`.
    PartialLogZ(usize),
    /// Filtering expectation of coordinate `coord` at time `t`.
    Mean { coord: usize, t: Option<usize> },
}

impl FromStr for Target {
    type Err = String;
    /// `logz`, `logz@t`, `x<i>` or `x<i>@t`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, at) = match s.split_once('@') {
            Some((h, t)) => (h, Some(t.parse::<usize>().map_err(|_| format!("bad time in `{s}`"))?)),
            None => (s, None),
        };
        if head == "logz" {
            return Ok(at.map_or(Target::LogZ, Target::PartialLogZ));
        }
        let coord = head
            .strip_prefix('x')
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| format!("target must be logz, logz@t, x<i> or x<i>@t, got `{s}`"))?;
        Ok(Target::Mean { coord, t: at })
    }
}

impl Target {
    /// Last time step the filter must reach.
    fn horizon(&self, t_max: usize) -> usize {
        match *self {
            Target::LogZ | Target::Mean { t: None, .. } => t_max,
            Target::PartialLogZ(t) | Target::Mean { t: Some(t), .. } => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSource {
    Kalman,
    HighN,
    None,
}

impl FromStr for ReferenceSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kalman" => Ok(ReferenceSource::Kalman),
            "high-n" | "high-n-run" => Ok(ReferenceSource::HighN),
            "none" => Ok(ReferenceSource::None),
            other => Err(format!("unknown reference `{other}` (expected kalman, high-n or none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Simulate { t: usize, seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub data: DataSource,
    pub target: Target,
    pub engines: Vec<EngineSpec>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed_base: u64,
    pub reference: ReferenceSource,
}

/// Runs and particle count behind a high-N reference value.
pub const REFERENCE_RUNS: usize = 20;
pub const REFERENCE_FACTOR: usize = 8;

const KEYS: &[&str] = &[
    "model",
    "params",
    "data",
    "t",
    "data_seed",
    "target",
    "engines",
    "n",
    "replicates",
    "seed_base",
    "reference",
    "resolution",
];

impl ExperimentSpec {
    /// Parses flat `key = value` text. Model parameters may be given inline
    /// under the model's namespace (`toy.a = 20`) or through `params = <file>`;
    /// relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut inline = String::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("line {}: expected key = value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.contains('.') {
                inline.push_str(line);
                inline.push('\n');
            } else if !KEYS.contains(&k) {
                bail!("line {}: unknown key `{k}`", i + 1);
            } else if kv.insert(k.to_string(), v.to_string()).is_some() {
                bail!("line {}: duplicate key `{k}`", i + 1);
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let kind: ModelKind = get("model").context("missing `model`")?.parse().map_err(anyhow::Error::msg)?;
        let mut params_text = match get("params") {
            Some(p) => {
                let path = base_dir.join(p);
                std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?
            }
            None => String::new(),
        };
        params_text.push('\n');
        params_text.push_str(&inline);
        let model = ModelConfig::from_params(kind, &ParamFile::parse(&params_text)?)?;

        let parse_u64 = |k: &str, default: u64| -> Result<u64> {
            get(k).map_or(Ok(default), |v| v.parse().with_context(|| format!("`{k}` must be an integer")))
        };
        let data = match get("data") {
            Some(p) => DataSource::File(base_dir.join(p)),
            None => DataSource::Simulate {
                t: parse_u64("t", 100)? as usize,
                seed: parse_u64("data_seed", 1)?,
            },
        };
        let target = get("target").unwrap_or("logz").parse().map_err(anyhow::Error::msg)?;
        let resolution = get("resolution").map_or(Ok(Resolution::Max), parse_resolution).map_err(anyhow::Error::msg)?;
        let engines = get("engines")
            .unwrap_or("smc, sqmc")
            .split(',')
            .map(|e| {
                e.trim().parse::<EngineSpec>().map(|s| match s {
                    EngineSpec::Sqmc(p, _) => EngineSpec::Sqmc(p, resolution),
                    smc => smc,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(anyhow::Error::msg)?;
        let n_grid = get("n")
            .context("missing `n`")?
            .split(',')
            .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad particle count `{v}`")))
            .collect::<Result<Vec<_>>>()?;
        let spec = ExperimentSpec {
            model,
            data,
            target,
            engines,
            n_grid,
            replicates: parse_u64("replicates", 100)? as usize,
            seed_base: parse_u64("seed_base", 0)?,
            reference: get("reference").unwrap_or("none").parse().map_err(anyhow::Error::msg)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            bail!("need at least 2 replicates");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            bail!("particle grid must be nonempty and positive");
        }
        if self.engines.is_empty() {
            bail!("no engines listed");
        }
        if self.reference == ReferenceSource::Kalman && self.model.kind() != ModelKind::LinearGaussian {
            bail!("a Kalman reference needs the linear-Gaussian model");
        }
        Ok(())
    }

    pub fn observations(&self) -> Result<Observations> {
        match &self.data {
            DataSource::Simulate { t, seed } => Ok(self.model.simulate(*t, *seed)?.0),
            DataSource::File(p) => load_observations(p),
        }
    }
}

/// Summary of the replicates of one engine at one `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub n: usize,
    /// Position of the engine in the spec.
    pub engine_index: usize,
    pub engine: String,
    /// Replicates that completed.
    pub replicates: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub mse: Option<f64>,
    /// Mean wall-clock time per replicate, nanoseconds.
    pub wall_ns: f64,
    /// First error among the failed replicates.
    pub error: Option<String>,
}

impl GainRow {
    /// MSE when a reference exists, otherwise the variance.
    pub fn error_metric(&self) -> Option<f64> {
        self.mse.or(self.variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub reference: Option<f64>,
    /// Ordered by `n`, then engine position.
    pub rows: Vec<GainRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub n: usize,
    pub engine_index: usize,
    pub engine: String,
    /// Error metric of the first engine over that of this one.
    pub gain: f64,
}

impl GainTable {
    pub fn row(&self, n: usize, engine_index: usize) -> Option<&GainRow> {
        self.rows.iter().find(|r| r.n == n && r.engine_index == engine_index)
    }

    fn engine_indices(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.rows.iter().map(|r| r.engine_index).collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// `MSE_first / MSE_other` per `N` for every engine after the first
    /// (variances when there is no reference).
    pub fn gains(&self) -> Vec<Gain> {
        let idx = self.engine_indices();
        let Some((&base, others)) = idx.split_first() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| others.contains(&r.engine_index)) {
            let b = self.row(r.n, base).and_then(GainRow::error_metric);
            if let (Some(b), Some(o)) = (b, r.error_metric()) {
                if o > 0.0 {
                    out.push(Gain {
                        n: r.n,
                        engine_index: r.engine_index,
                        engine: r.engine.clone(),
                        gain: b / o,
                    });
                }
            }
        }
        out
    }

    /// Gains at equal computing time: the first engine's error curve is
    /// interpolated log-linearly in wall-clock time at each row of the
    /// others. Rows outside the first engine's time range are skipped.
    pub fn time_matched_gains(&self) -> Vec<Gain> {
        let idx = self.engine_indices();
        let Some((&base, others)) = idx.split_first() else {
            return Vec::new();
        };
        let mut curve: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.engine_index == base && r.wall_ns > 0.0)
            .filter_map(|r| r.error_metric().filter(|&m| m > 0.0).map(|m| (r.wall_ns.ln(), m.ln())))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| others.contains(&r.engine_index)) {
            let Some(m) = r.error_metric().filter(|&m| m > 0.0) else {
                continue;
            };
            if r.wall_ns <= 0.0 {
                continue;
            }
            if let Some(b) = interpolate(&curve, r.wall_ns.ln()) {
                out.push(Gain {
                    n: r.n,
                    engine_index: r.engine_index,
                    engine: r.engine.clone(),
                    gain: b.exp() / m,
                });
            }
        }
        out
    }
}

/// Piecewise-linear interpolation on sorted `(x, y)` pairs.
fn interpolate(curve: &[(f64, f64)], x: f64) -> Option<f64> {
    let i = curve.partition_point(|p| p.0 < x);
    if i < curve.len() && curve[i].0 == x {
        return Some(curve[i].1);
    }
    if i == 0 || i == curve.len() {
        return None;
    }
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

/// One estimate of `target` from a fresh filter run.
pub fn estimate(
    model: &dyn FeynmanKac,
    target: Target,
    n: usize,
    engine: EngineSpec,
    seed: u64,
) -> Result<f64, FilterError> {
    let horizon = target.horizon(model.horizon());
    let e = engine.engine(seed);
    match target {
        Target::LogZ | Target::PartialLogZ(_) => Ok(run(model, n, horizon, e, RunOptions::default())?.log_z()),
        Target::Mean { coord, .. } => {
            if coord >= model.dim() {
                return Err(FilterError::PointDimension(coord));
            }
            let phi = move |x: &[f64], out: &mut [f64]| out[0] = x[coord];
            let opts = RunOptions {
                keep_particles: false,
                moment: Some((&phi, 1)),
            };
            Ok(run(model, n, horizon, e, opts)?.steps[horizon].moment[0])
        }
    }
}

fn reference_value(spec: &ExperimentSpec, model: &dyn FeynmanKac, obs: &Observations) -> Result<Option<f64>> {
    let t_max = spec.target.horizon(model.horizon());
    if t_max > model.horizon() {
        bail!("target time {t_max} is past the last observation {}", model.horizon());
    }
    match spec.reference {
        ReferenceSource::None => Ok(None),
        ReferenceSource::Kalman => {
            let k = spec.model.kalman(obs).context("a Kalman reference needs the linear-Gaussian model")??;
            Ok(Some(match spec.target {
                Target::LogZ => k.loglik,
                Target::PartialLogZ(t) => k.partial_loglik[t],
                Target::Mean { coord, .. } => *k.filter_means[t_max]
                    .get(coord)
                    .with_context(|| format!("no state coordinate {coord}"))?,
            }))
        }
        ReferenceSource::HighN => {
            let n = REFERENCE_FACTOR * spec.n_grid.iter().max().copied().unwrap_or(1);
            let engine = EngineSpec::Sqmc(PointKind::Scheme(ScrambleKind::OwenNested), Resolution::Max);
            let mut sum = 0.0;
            for i in 0..REFERENCE_RUNS {
                let seed = derive(spec.seed_base, 0x7265_6600_0000_0000 + i as u64);
                sum += estimate(model, spec.target, n, engine, seed).context("reference run failed")?;
            }
            Ok(Some(sum / REFERENCE_RUNS as f64))
        }
    }
}

/// Executes every `(engine, N, replicate)` cell on `workers` threads.
/// Replicate `r` uses seed `seed_base + r`. Engine failures are recorded
/// in their row and do not stop the experiment.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<GainTable> {
    spec.validate()?;
    let obs = spec.observations()?;
    let model = spec.model.build(&obs)?;
    let model: &dyn FeynmanKac = model.as_ref();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    pool.install(|| {
        let reference = reference_value(spec, model, &obs)?;
        let jobs: Vec<(usize, usize, usize)> = (0..spec.n_grid.len())
            .flat_map(|ni| (0..spec.engines.len()).flat_map(move |ei| (0..spec.replicates).map(move |r| (ni, ei, r))))
            .collect();
        let results: Vec<(Result<f64, FilterError>, u64)> = jobs
            .par_iter()
            .map(|&(ni, ei, r)| {
                let started = Instant::now();
                let est = estimate(
                    model,
                    spec.target,
                    spec.n_grid[ni],
                    spec.engines[ei],
                    spec.seed_base.wrapping_add(r as u64),
                );
                (est, started.elapsed().as_nanos() as u64)
            })
            .collect();
        let rows = results
            .chunks(spec.replicates)
            .zip(jobs.chunks(spec.replicates))
            .map(|(cell, job)| {
                let (ni, ei, _) = job[0];
                summarize(spec.n_grid[ni], ei, spec.engines[ei].to_string(), cell, reference)
            })
            .collect();
        Ok(GainTable { reference, rows })
    })
}

fn summarize(
    n: usize,
    engine_index: usize,
    engine: String,
    cell: &[(Result<f64, FilterError>, u64)],
    reference: Option<f64>,
) -> GainRow {
    let ok: Vec<f64> = cell.iter().filter_map(|(e, _)| e.as_ref().ok().copied()).collect();
    let error = cell.iter().find_map(|(e, _)| e.as_ref().err().map(|e| e.to_string()));
    let k = ok.len() as f64;
    let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / k);
    let variance = mean.filter(|_| ok.len() >= 2).map(|m| ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0));
    let mse = reference.filter(|_| !ok.is_empty()).map(|r| ok.iter().map(|v| (v - r).powi(2)).sum::<f64>() / k);
    GainRow {
        n,
        engine_index,
        engine,
        replicates: ok.len(),
        failed: cell.len() - ok.len(),
        mean,
        variance,
        mse,
        wall_ns: cell.iter().map(|c| c.1 as f64).sum::<f64>() / cell.len() as f64,
        error,
    }
}
