//! The `sqmc` command-line interface.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sqmc::fk::{run, FeynmanKac, PointSource, Resampler, RunOptions};
use sqmc::lowdisc::{sobol_points, star_discrepancy, DiscrepancyMode, RandomizationScheme, ScrambleKind};
use sqmc::models::{LinearGaussianParams, Observations, ParamFile};
use sqmc::pmmh::{acceptance_rate, mcmc_ess, pmmh_run, LinearGaussianFamily, ParameterModelFamily, PmmhEngine, SvFamily, ESS_MIN_LEN};
use sqmc::seed::derive;
use sqmc::smoothing::{backward_pass, forward_smoothing_additive};

use crate::experiment::{run_experiment, ExperimentSpec};
use crate::io::{fmt_f64, load_observations, parse_matrix, write_observations, write_series};
use crate::report::emit_all;
use crate::setup::{parse_monomials, parse_resolution, EngineSpec, ModelConfig, ModelKind, Monomial, PointKind};

#[derive(Parser, Debug)]
#[command(name = "sqmc", version, about = "Sequential quasi-Monte Carlo filtering toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Star discrepancy of a Sobol' point set.
    Discrepancy(DiscrepancyArgs),
    /// Simulate observations from a model.
    Simulate(SimulateArgs),
    /// Run a filter and write log-evidence and moments per step.
    Filter(FilterArgs),
    /// Run a filter and print the final log-evidence.
    Loglik(LoglikArgs),
    /// Smoothing by forward additive recursion or backward sampling.
    Smooth(SmoothArgs),
    /// Particle marginal Metropolis-Hastings.
    Pmmh(PmmhArgs),
    /// Replicated SMC/SQMC comparison from a spec file.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiscrepancyModeArg {
    Exact1d,
    Grid,
    Sample,
}

#[derive(Args, Debug)]
pub struct DiscrepancyArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dim: usize,
    /// none, shift or owen.
    #[arg(long, default_value = "none")]
    pub scheme: ScrambleKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "grid")]
    pub mode: DiscrepancyModeArg,
    /// Random anchors for `--mode sample`.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Also write the points as CSV.
    #[arg(long)]
    pub points_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// lg, toy, msv or neural.
    #[arg(long)]
    pub model: ModelKind,
    /// Parameter file of `key = value` lines.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Observation CSV; simulated from the model when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the simulated data.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let text = match &self.params {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Ok(ModelConfig::from_params(self.model, &ParamFile::parse(&text)?)?)
    }

    /// The model built on `y_{0:t}`.
    fn load(&self, t: Option<usize>) -> Result<(ModelConfig, Observations, Box<dyn FeynmanKac + Send>)> {
        let config = self.config()?;
        let obs = match (&self.data, t) {
            (Some(p), t) => {
                let obs = load_observations(p)?;
                match t {
                    Some(t) if t > obs.horizon() => bail!("--t {t} exceeds the data horizon {}", obs.horizon()),
                    Some(t) => obs.truncated(t),
                    None => obs,
                }
            }
            (None, Some(t)) => config.simulate(t, self.data_seed)?.0,
            (None, None) => bail!("give --t or --data"),
        };
        let model = config.build(&obs)?;
        Ok((config, obs, model))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Smc,
    Sqmc,
}

#[derive(Args, Debug)]
pub struct EngineArgs {
    #[arg(long, value_enum)]
    pub engine: EngineArg,
    /// systematic or multinomial (SMC).
    #[arg(long, default_value = "systematic")]
    pub resampler: Resampler,
    /// none, shift, owen or iid (SQMC).
    #[arg(long, default_value = "owen")]
    pub scheme: PointKind,
    /// Hilbert bits per axis: max, auto or a number (SQMC).
    #[arg(long, default_value = "max", value_parser = parse_resolution)]
    pub resolution: sqmc::hilbert::Resolution,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EngineArgs {
    fn spec(&self) -> EngineSpec {
        match self.engine {
            EngineArg::Smc => EngineSpec::Smc(self.resampler),
            EngineArg::Sqmc => EngineSpec::Sqmc(self.scheme, self.resolution),
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: SimulateModelArgs,
    #[arg(long)]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the hidden states.
    #[arg(long)]
    pub states_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateModelArgs {
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub n: usize,
    /// Last time step; defaults to the data horizon.
    #[arg(long)]
    pub t: Option<usize>,
    /// Test functions such as `x0,x0^2`.
    #[arg(long)]
    pub moments: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LoglikArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SmoothMode {
    Additive,
    Backward,
}

#[derive(Args, Debug)]
pub struct SmoothArgs {
    #[arg(long, value_enum)]
    pub mode: SmoothMode,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub n: usize,
    /// Backward trajectories; defaults to `--n`.
    #[arg(long)]
    pub nb: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Test functions such as `x0,x0^2`.
    #[arg(long, default_value = "x0")]
    pub phi: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    /// Scalar AR(1) plus noise, unknown autoregression.
    Lg,
    /// Bivariate stochastic volatility without leverage, 8 parameters.
    Sv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PmmhEngineArg {
    Smc,
    Sqmc,
    Exact,
}

#[derive(Args, Debug)]
pub struct PmmhArgs {
    #[arg(long, value_enum)]
    pub model_family: FamilyArg,
    #[arg(long, value_enum)]
    pub engine: PmmhEngineArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub iters: usize,
    /// Proposal covariance: one matrix row per line.
    #[arg(long)]
    pub sigma: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting point, comma-separated; defaults to the simulation values.
    #[arg(long)]
    pub theta0: Option<String>,
    /// Observation CSV; simulated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Length of simulated data minus one.
    #[arg(long, default_value_t = 100)]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discrepancy(a) => discrepancy(a),
        Command::Simulate(a) => simulate(a),
        Command::Filter(a) => filter(a),
        Command::Loglik(a) => loglik(a),
        Command::Smooth(a) => smooth(a),
        Command::Pmmh(a) => pmmh(a),
        Command::Bench(a) => bench(a),
    }
}

fn discrepancy(a: DiscrepancyArgs) -> Result<()> {
    let ps = sobol_points(a.n, a.dim, RandomizationScheme::new(a.scheme, a.seed))?;
    if let Some(p) = &a.points_out {
        ps.write_csv(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))?;
    }
    let mode = match a.mode {
        DiscrepancyModeArg::Exact1d => DiscrepancyMode::Exact1d,
        DiscrepancyModeArg::Grid => DiscrepancyMode::GridExact,
        DiscrepancyModeArg::Sample => DiscrepancyMode::SampleEstimate {
            samples: a.samples,
            seed: a.seed,
        },
    };
    println!("{}", fmt_f64(star_discrepancy(&ps, mode)?));
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let args = ModelArgs {
        model: a.model.model,
        params: a.model.params,
        data: None,
        data_seed: a.seed,
    };
    let config = args.config()?;
    let (obs, states) = config.simulate(a.t, a.seed)?;
    write_observations(output(&a.out)?, &obs)?;
    if let Some(p) = &a.states_out {
        write_series(File::create(p)?, "x", config.state_dim(), &states)?;
    }
    Ok(())
}

fn filter(a: FilterArgs) -> Result<()> {
    let (_, obs, model) = a.model.load(a.t)?;
    let phis = match &a.moments {
        Some(s) => parse_monomials(s).map_err(anyhow::Error::msg)?,
        None => Vec::new(),
    };
    check_coords(&phis, model.dim())?;
    let moment = |x: &[f64], out: &mut [f64]| {
        for (o, p) in out.iter_mut().zip(&phis) {
            *o = p.eval(x);
        }
    };
    let opts = RunOptions {
        keep_particles: false,
        moment: (!phis.is_empty()).then_some((&moment as _, phis.len())),
    };
    let out = run(model.as_ref(), a.n, obs.horizon(), a.engine.spec().engine(a.engine.seed), opts)?;
    let mut w = csv::Writer::from_writer(output(&a.out)?);
    let mut header = vec!["t".to_string(), "log_z".to_string()];
    header.extend(phis.iter().map(|p| p.to_string()));
    header.push("nanos".into());
    w.write_record(&header)?;
    for (t, s) in out.steps.iter().enumerate() {
        let mut rec = vec![t.to_string(), fmt_f64(s.log_z)];
        rec.extend(s.moment.iter().map(|&v| fmt_f64(v)));
        rec.push(s.nanos.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn loglik(a: LoglikArgs) -> Result<()> {
    let (_, obs, model) = a.model.load(a.t)?;
    let started = Instant::now();
    let out = run(
        model.as_ref(),
        a.n,
        obs.horizon(),
        a.engine.spec().engine(a.engine.seed),
        RunOptions::default(),
    )?;
    let nanos = started.elapsed().as_nanos();
    println!("{}", fmt_f64(out.log_z()));
    if a.out.is_some() {
        let mut w = csv::Writer::from_writer(output(&a.out)?);
        w.write_record(["t", "log_z", "nanos"])?;
        w.write_record([obs.horizon().to_string(), fmt_f64(out.log_z()), nanos.to_string()])?;
        w.flush()?;
    }
    Ok(())
}

fn check_coords(phis: &[Monomial], dim: usize) -> Result<()> {
    if let Some(p) = phis.iter().find(|p| p.coord >= dim) {
        bail!("test function {p} needs coordinate {} but the state has dimension {dim}", p.coord);
    }
    Ok(())
}

fn smooth(a: SmoothArgs) -> Result<()> {
    let (_, obs, model) = a.model.load(a.t)?;
    let phis = parse_monomials(&a.phi).map_err(anyhow::Error::msg)?;
    if phis.is_empty() {
        bail!("--phi is empty");
    }
    check_coords(&phis, model.dim())?;
    let t_max = obs.horizon();
    let spec = a.engine.spec();
    let engine = spec.engine(a.engine.seed);
    // columns[k][t]
    let columns: Vec<Vec<f64>> = match a.mode {
        SmoothMode::Additive => phis
            .iter()
            .map(|p| {
                let f = |x: &[f64]| p.eval(x);
                forward_smoothing_additive(model.as_ref(), &f, a.n, t_max, engine)
            })
            .collect::<Result<_, _>>()?,
        SmoothMode::Backward => {
            let opts = RunOptions {
                keep_particles: true,
                moment: None,
            };
            let out = run(model.as_ref(), a.n, t_max, engine, opts)?;
            let back_seed = derive(a.engine.seed, 0x6261_636b);
            let points = match spec {
                EngineSpec::Sqmc(PointKind::Scheme(kind), _) => PointSource::Qmc(RandomizationScheme::new(kind, back_seed)),
                _ => PointSource::Iid(back_seed),
            };
            let tr = backward_pass(&out, model.as_ref(), a.nb.unwrap_or(a.n), points)?;
            phis.iter()
                .map(|p| {
                    (0..=t_max)
                        .map(|t| (0..tr.n_b).map(|n| p.eval(tr.state(n, t))).sum::<f64>() / tr.n_b as f64)
                        .collect()
                })
                .collect()
        }
    };
    let mut w = csv::Writer::from_writer(output(&a.out)?);
    let mut header = vec!["t".to_string()];
    header.extend(phis.iter().map(|p| p.to_string()));
    w.write_record(&header)?;
    for t in 0..=t_max {
        let mut rec = vec![t.to_string()];
        rec.extend(columns.iter().map(|c| fmt_f64(c[t])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Data-generating value of the autoregression in the `lg` family.
pub const LG_FAMILY_RHO: f64 = 0.7;

fn pmmh(a: PmmhArgs) -> Result<()> {
    let family: Box<dyn ParameterModelFamily> = match a.model_family {
        FamilyArg::Lg => {
            let obs = match &a.data {
                Some(p) => load_observations(p)?,
                None => sqmc::models::simulate_linear_gaussian(&LinearGaussianParams::scalar(LG_FAMILY_RHO, 1.0, 1.0), a.t, a.data_seed)?.0,
            };
            Box::new(LinearGaussianFamily { obs, q: 1.0, r: 1.0 })
        }
        FamilyArg::Sv => {
            let obs = match &a.data {
                Some(p) => load_observations(p)?,
                None => sqmc::models::simulate_msv(&SvFamily::params(&SvFamily::reference_theta()), a.t, a.data_seed)?.0,
            };
            Box::new(SvFamily { obs })
        }
    };
    let theta0: Vec<f64> = match &a.theta0 {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad theta0 entry `{v}`")))
            .collect::<Result<_>>()?,
        None => match a.model_family {
            FamilyArg::Lg => vec![LG_FAMILY_RHO],
            FamilyArg::Sv => SvFamily::reference_theta(),
        },
    };
    let sigma = parse_matrix(&std::fs::read_to_string(&a.sigma).with_context(|| format!("reading {}", a.sigma.display()))?)?;
    let engine = match a.engine {
        PmmhEngineArg::Smc => PmmhEngine::Smc(Resampler::Systematic),
        PmmhEngineArg::Sqmc => PmmhEngine::Sqmc(ScrambleKind::OwenNested),
        PmmhEngineArg::Exact => PmmhEngine::Exact,
    };
    let chain = pmmh_run(family.as_ref(), &theta0, &sigma, a.iters, a.n, engine, a.seed)?;

    let mut w = csv::Writer::from_writer(output(&a.out)?);
    let mut header = vec!["iteration".to_string()];
    header.extend(chain.names.iter().cloned());
    header.extend(["loglik".to_string(), "accepted".to_string()]);
    w.write_record(&header)?;
    for i in 0..chain.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(chain.row(i).iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(chain.loglik[i]));
        rec.push((chain.accepted[i] as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);

    let mut err = io::stderr().lock();
    writeln!(err, "acceptance rate: {}", fmt_f64(acceptance_rate(&chain)))?;
    if chain.len() >= ESS_MIN_LEN {
        for (j, name) in chain.names.iter().enumerate() {
            match mcmc_ess(&chain, j) {
                Ok(e) => writeln!(err, "ess {name}: {e:.1}")?,
                Err(e) => writeln!(err, "ess {name}: {e}")?,
            }
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&a.spec)?;
    let table = run_experiment(&spec, a.workers)?;
    emit_all(&table, &a.out_dir)?;
    print_summary(&table, &a.out_dir);
    Ok(())
}

fn print_summary(table: &crate::experiment::GainTable, dir: &Path) {
    if let Some(r) = table.reference {
        println!("reference: {}", fmt_f64(r));
    }
    for r in &table.rows {
        println!(
            "n={:<7} {:<16} mean={:<24} var={:<24} mse={:<24} failed={}",
            r.n,
            r.engine,
            r.mean.map(fmt_f64).unwrap_or_default(),
            r.variance.map(fmt_f64).unwrap_or_default(),
            r.mse.map(fmt_f64).unwrap_or_default(),
            r.failed
        );
    }
    for g in table.gains() {
        println!("gain n={} {}: {:.3}", g.n, g.engine, g.gain);
    }
    for g in table.time_matched_gains() {
        println!("time-matched gain n={} {}: {:.3}", g.n, g.engine, g.gain);
    }
    println!("wrote {}", dir.display());
}
