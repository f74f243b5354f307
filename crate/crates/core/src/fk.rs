//! Feynman-Kac models and the two particle engines: the bootstrap-style
//! particle filter (SMC) and its quasi-Monte Carlo counterpart (SQMC).
//!
//! Weights are kept in log space. The running log-evidence is updated at
//! every step so partial log-likelihoods come for free.

use std::ops::Range;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::hilbert::{hilbert_sort_with, HilbertError, Resolution};
use crate::lowdisc::{sobol_points, LowDiscError, RandomizationScheme, MAX_DIM};
use crate::resample::{labels_into, normalize_log_weights, sorted_uniforms_with, systematic_into};
use crate::seed::{derive, stream_rng};
use crate::transforms::{psi_clamped_into, PsiBounds};

/// A Feynman-Kac model with its inverse-transform maps.
///
/// `sample_initial` maps a point of `[0,1)^initial_noise_dim` to `x_0`;
/// `sample_transition` maps `(x_{t-1}, v)` with `v` in `[0,1)^noise_dim` to
/// `x_t`. Log-potentials may be `-inf` (zero weight).
pub trait FeynmanKac: Sync {
    fn dim(&self) -> usize;

    /// Dimension of the transition randomness `v`.
    fn noise_dim(&self) -> usize {
        self.dim()
    }

    fn initial_noise_dim(&self) -> usize {
        self.dim()
    }

    /// Last time index for which the potentials are defined.
    fn horizon(&self) -> usize;

    fn sample_initial(&self, u: &[f64], out: &mut [f64]);

    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]);

    fn log_g0(&self, x: &[f64]) -> f64;

    fn log_g(&self, t: usize, prev: &[f64], x: &[f64]) -> f64;

    /// Bounds of the logistic map applied before the Hilbert sort.
    fn psi_bounds(&self) -> &PsiBounds;

    /// State coordinates entering the Hilbert sort of the time-`t`
    /// particles.
    fn sort_coordinates(&self, _t: usize) -> Range<usize> {
        0..self.dim()
    }

    /// `log m_t(x | prev)` when the transition has a density.
    fn log_transition_density(&self, _t: usize, _prev: &[f64], _x: &[f64]) -> Option<f64> {
        None
    }
}

impl<M: FeynmanKac + ?Sized> FeynmanKac for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn initial_noise_dim(&self) -> usize {
        (**self).initial_noise_dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        (**self).sample_initial(u, out)
    }
    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).sample_transition(t, prev, v, out)
    }
    fn log_g0(&self, x: &[f64]) -> f64 {
        (**self).log_g0(x)
    }
    fn log_g(&self, t: usize, prev: &[f64], x: &[f64]) -> f64 {
        (**self).log_g(t, prev, x)
    }
    fn psi_bounds(&self) -> &PsiBounds {
        (**self).psi_bounds()
    }
    fn sort_coordinates(&self, t: usize) -> Range<usize> {
        (**self).sort_coordinates(t)
    }
    fn log_transition_density(&self, t: usize, prev: &[f64], x: &[f64]) -> Option<f64> {
        (**self).log_transition_density(t, prev, x)
    }
}

impl<M: FeynmanKac + ?Sized + Send> FeynmanKac for Box<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn initial_noise_dim(&self) -> usize {
        (**self).initial_noise_dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        (**self).sample_initial(u, out)
    }
    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).sample_transition(t, prev, v, out)
    }
    fn log_g0(&self, x: &[f64]) -> f64 {
        (**self).log_g0(x)
    }
    fn log_g(&self, t: usize, prev: &[f64], x: &[f64]) -> f64 {
        (**self).log_g(t, prev, x)
    }
    fn psi_bounds(&self) -> &PsiBounds {
        (**self).psi_bounds()
    }
    fn sort_coordinates(&self, t: usize) -> Range<usize> {
        (**self).sort_coordinates(t)
    }
    fn log_transition_density(&self, t: usize, prev: &[f64], x: &[f64]) -> Option<f64> {
        (**self).log_transition_density(t, prev, x)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("all particle weights vanished at t = {t}")]
    WeightCollapse { t: usize },
    #[error("particle count must be positive")]
    NoParticles,
    #[error("requested horizon {requested} exceeds the model horizon {available}")]
    HorizonExceeded { requested: usize, available: usize },
    #[error("point set of dimension {0} exceeds the Sobol' table")]
    PointDimension(usize),
    #[error("particles at t = {0} were not stored")]
    NoSnapshot(usize),
    #[error("t = {t} is outside the filtered range 0..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },
    #[error("model has no transition density")]
    MissingDensity,
    #[error(transparent)]
    LowDisc(#[from] LowDiscError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampler {
    Multinomial,
    Systematic,
}

impl std::str::FromStr for Resampler {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multinomial" => Ok(Resampler::Multinomial),
            "systematic" => Ok(Resampler::Systematic),
            other => Err(format!("unknown resampler `{other}`")),
        }
    }
}

/// Source of the per-step point sets in SQMC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    /// Sobol' points; randomized schemes are reseeded at every step.
    Qmc(RandomizationScheme),
    /// I.i.d. uniforms from the given seed. With these SQMC has the law of
    /// SMC with multinomial resampling.
    Iid(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Smc { resampler: Resampler, seed: u64 },
    Sqmc { points: PointSource, resolution: Resolution },
}

/// A test function evaluated on every particle; writes its values into the
/// output slice.
pub type Moment<'a> = &'a (dyn Fn(&[f64], &mut [f64]) + Sync);

/// Per-run options beyond the engine.
#[derive(Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Store every time step's particles and weights.
    pub keep_particles: bool,
    /// Weighted average of this function at every step, with its output
    /// width.
    pub moment: Option<(Moment<'a>, usize)>,
}

/// Weighted particles at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSnapshot {
    pub dim: usize,
    /// Row-major, one state per particle.
    pub states: Vec<f64>,
    /// Normalized weights, aligned with `states`.
    pub weights: Vec<f64>,
    /// Whether the particles are in Hilbert order.
    pub hilbert_sorted: bool,
}

impl ParticleSnapshot {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Running `log Z_t^N`.
    pub log_z: f64,
    /// Weighted moment estimate, empty when none was requested.
    pub moment: Vec<f64>,
    /// Wall-clock time of the step.
    pub nanos: u64,
    pub particles: Option<ParticleSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub engine: Engine,
    pub n: usize,
    pub steps: Vec<StepRecord>,
    /// Largest Hilbert resolution used (bits per axis), SQMC only.
    pub hilbert_bits: Option<u32>,
}

impl FilterOutput {
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    fn step(&self, t: usize) -> Result<&StepRecord, FilterError> {
        self.steps.get(t).ok_or(FilterError::TimeOutOfRange {
            t,
            horizon: self.horizon(),
        })
    }

    pub fn snapshot(&self, t: usize) -> Result<&ParticleSnapshot, FilterError> {
        self.step(t)?
            .particles
            .as_ref()
            .ok_or(FilterError::NoSnapshot(t))
    }

    /// Final log-evidence.
    pub fn log_z(&self) -> f64 {
        self.steps[self.horizon()].log_z
    }
}

/// `sum_n W_t^n phi(x_t^n)` from stored particles.
pub fn estimate_moment(
    output: &FilterOutput,
    t: usize,
    phi: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Vec<f64>, FilterError> {
    let snap = output.snapshot(t)?;
    let mut acc: Vec<f64> = Vec::new();
    for (n, &w) in snap.weights.iter().enumerate() {
        let v = phi(snap.state(n));
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += w * b;
        }
    }
    Ok(acc)
}

/// `log Z_t^N`.
pub fn log_evidence(output: &FilterOutput, t: usize) -> Result<f64, FilterError> {
    Ok(output.step(t)?.log_z)
}

/// Runs `engine` on `model` over `0..=t_max` with `n` particles.
pub fn run<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    t_max: usize,
    engine: Engine,
    opts: RunOptions<'_>,
) -> Result<FilterOutput, FilterError> {
    if n == 0 {
        return Err(FilterError::NoParticles);
    }
    if t_max > model.horizon() {
        return Err(FilterError::HorizonExceeded {
            requested: t_max,
            available: model.horizon(),
        });
    }
    match engine {
        Engine::Smc { resampler, seed } => smc(model, n, t_max, resampler, seed, opts),
        Engine::Sqmc { points, resolution } => sqmc(model, n, t_max, points, resolution, opts),
    }
}

/// Particle filter with resampling at every step.
pub fn smc_run<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    t_max: usize,
    resampler: Resampler,
    seed: u64,
    opts: RunOptions<'_>,
) -> Result<FilterOutput, FilterError> {
    run(model, n, t_max, Engine::Smc { resampler, seed }, opts)
}

/// Sequential quasi-Monte Carlo filter.
pub fn sqmc_run<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    t_max: usize,
    points: PointSource,
    resolution: Resolution,
    opts: RunOptions<'_>,
) -> Result<FilterOutput, FilterError> {
    run(model, n, t_max, Engine::Sqmc { points, resolution }, opts)
}

/// Normalizes weights, updates `log_z` and records the step.
struct Recorder<'a> {
    opts: RunOptions<'a>,
    steps: Vec<StepRecord>,
    log_z: f64,
}

impl<'a> Recorder<'a> {
    fn new(opts: RunOptions<'a>, t_max: usize) -> Self {
        Recorder {
            opts,
            steps: Vec::with_capacity(t_max + 1),
            log_z: 0.0,
        }
    }

    fn weigh(&mut self, t: usize, log_w: &[f64]) -> Result<Vec<f64>, FilterError> {
        let (w, log_mean) =
            normalize_log_weights(log_w).ok_or(FilterError::WeightCollapse { t })?;
        self.log_z += log_mean;
        Ok(w)
    }

    fn moment(&self, d: usize, states: &[f64], w: &[f64]) -> Vec<f64> {
        let Some((phi, width)) = self.opts.moment else {
            return Vec::new();
        };
        let mut acc = vec![0.0; width];
        let mut buf = vec![0.0; width];
        for (x, &wn) in states.chunks_exact(d).zip(w) {
            if wn == 0.0 {
                continue;
            }
            phi(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += wn * b;
            }
        }
        acc
    }

    fn push(&mut self, moment: Vec<f64>, started: Instant, particles: Option<ParticleSnapshot>) {
        self.steps.push(StepRecord {
            log_z: self.log_z,
            moment,
            nanos: started.elapsed().as_nanos() as u64,
            particles,
        });
    }
}

fn smc<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    t_max: usize,
    resampler: Resampler,
    seed: u64,
    opts: RunOptions<'_>,
) -> Result<FilterOutput, FilterError> {
    let d = model.dim();
    let mut rec = Recorder::new(opts, t_max);
    let mut x = vec![0.0; n * d];
    let mut x_new = vec![0.0; n * d];
    let mut log_w = vec![0.0; n];
    let mut labels = Vec::with_capacity(n);

    let started = Instant::now();
    let mut rng = stream_rng(seed, 0);
    let mut u = vec![0.0; model.initial_noise_dim()];
    for (xn, lw) in x.chunks_exact_mut(d).zip(log_w.iter_mut()) {
        u.iter_mut().for_each(|v| *v = rng.random());
        model.sample_initial(&u, xn);
        *lw = model.log_g0(xn);
    }
    let mut w = rec.weigh(0, &log_w)?;
    let m = rec.moment(d, &x, &w);
    let snap = snapshot(opts, d, &x, &w, false);
    rec.push(m, started, snap);

    let mut v = vec![0.0; model.noise_dim()];
    for t in 1..=t_max {
        let started = Instant::now();
        let mut rng = stream_rng(seed, t as u64);
        labels.clear();
        match resampler {
            Resampler::Systematic => systematic_into(&w, n, rng.random(), &mut labels),
            Resampler::Multinomial => labels_into(sorted_uniforms_with(n, &mut rng), &w, &mut labels),
        }
        for ((xn, lw), &a) in x_new.chunks_exact_mut(d).zip(log_w.iter_mut()).zip(&labels) {
            let prev = &x[a * d..(a + 1) * d];
            v.iter_mut().for_each(|vi| *vi = rng.random());
            model.sample_transition(t, prev, &v, xn);
            *lw = model.log_g(t, prev, xn);
        }
        std::mem::swap(&mut x, &mut x_new);
        w = rec.weigh(t, &log_w)?;
        let m = rec.moment(d, &x, &w);
        let snap = snapshot(opts, d, &x, &w, false);
        rec.push(m, started, snap);
    }
    Ok(FilterOutput {
        engine: Engine::Smc { resampler, seed },
        n,
        steps: rec.steps,
        hilbert_bits: None,
    })
}

fn snapshot(
    opts: RunOptions<'_>,
    d: usize,
    x: &[f64],
    w: &[f64],
    hilbert_sorted: bool,
) -> Option<ParticleSnapshot> {
    opts.keep_particles.then(|| ParticleSnapshot {
        dim: d,
        states: x.to_vec(),
        weights: w.to_vec(),
        hilbert_sorted,
    })
}

/// `n` points in `[0,1)^dim` for step `t`.
fn step_points(source: PointSource, n: usize, dim: usize, t: usize) -> Result<Vec<f64>, FilterError> {
    match source {
        PointSource::Qmc(scheme) => {
            if dim > MAX_DIM {
                return Err(FilterError::PointDimension(dim));
            }
            let scheme = scheme.reseeded(derive(scheme.seed, t as u64));
            Ok(sobol_points(n, dim, scheme)?.values().to_vec())
        }
        PointSource::Iid(seed) => {
            let mut rng = stream_rng(seed, t as u64);
            Ok((0..n * dim).map(|_| rng.random()).collect())
        }
    }
}

/// Hilbert order of the particles: a scalar sort when one coordinate is
/// sorted, otherwise the curve order of their logistic images.
pub(crate) fn hilbert_order<M: FeynmanKac + ?Sized>(
    model: &M,
    t: usize,
    x: &[f64],
    resolution: Resolution,
) -> Result<(Vec<usize>, u32), FilterError> {
    let d = model.dim();
    let n = x.len() / d;
    let coords = model.sort_coordinates(t);
    let k = coords.len();
    if k == 1 {
        let c = coords.start;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a * d + c].total_cmp(&x[b * d + c]).then(a.cmp(&b)));
        return Ok((order, 64));
    }
    let bounds = model.psi_bounds();
    let sub = PsiBounds::new(
        bounds.lower()[coords.clone()].to_vec(),
        bounds.upper()[coords.clone()].to_vec(),
    )
    .expect("model bounds are valid");
    let mut p = vec![0.0; n * k];
    for (pn, xn) in p.chunks_exact_mut(k).zip(x.chunks_exact(d)) {
        psi_clamped_into(&xn[coords.clone()], &sub, pn);
    }
    Ok(hilbert_sort_with(&p, k, resolution)?)
}

fn sqmc<M: FeynmanKac + ?Sized>(
    model: &M,
    n: usize,
    t_max: usize,
    points: PointSource,
    resolution: Resolution,
    opts: RunOptions<'_>,
) -> Result<FilterOutput, FilterError> {
    let d = model.dim();
    let dv = model.noise_dim();
    let mut rec = Recorder::new(opts, t_max);
    let mut bits = 0u32;

    let started = Instant::now();
    let d0 = model.initial_noise_dim();
    let u0 = step_points(points, n, d0, 0)?;
    let mut x = vec![0.0; n * d];
    let mut log_w = vec![0.0; n];
    for ((xn, lw), un) in x.chunks_exact_mut(d).zip(log_w.iter_mut()).zip(u0.chunks_exact(d0)) {
        model.sample_initial(un, xn);
        *lw = model.log_g0(xn);
    }
    let mut w = rec.weigh(0, &log_w)?;
    let m = rec.moment(d, &x, &w);

    // Particles in Hilbert order with their weights.
    let mut xs = vec![0.0; n * d];
    let mut ws = vec![0.0; n];
    let mut x_new = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut order_u: Vec<usize> = (0..n).collect();

    let mut sort_into = |t: usize, x: &[f64], w: &[f64], xs: &mut [f64], ws: &mut [f64]| {
        let (sigma, m) = hilbert_order(model, t, x, resolution)?;
        bits = bits.max(m);
        for (j, &i) in sigma.iter().enumerate() {
            xs[j * d..(j + 1) * d].copy_from_slice(&x[i * d..(i + 1) * d]);
            ws[j] = w[i];
        }
        Ok::<(), FilterError>(())
    };

    let sorted_snapshot = |xs: &[f64], ws: &[f64]| snapshot(opts, d, xs, ws, true);

    if t_max > 0 || opts.keep_particles {
        sort_into(0, &x, &w, &mut xs, &mut ws)?;
    }
    rec.push(m, started, sorted_snapshot(&xs, &ws));

    let width = 1 + dv;
    for t in 1..=t_max {
        let started = Instant::now();
        let u = step_points(points, n, width, t)?;
        // Stable sort on the first coordinate.
        for (i, o) in order_u.iter_mut().enumerate() {
            *o = i;
        }
        order_u.sort_by(|&a, &b| u[a * width].total_cmp(&u[b * width]).then(a.cmp(&b)));
        labels.clear();
        labels_into(order_u.iter().map(|&i| u[i * width]), &ws, &mut labels);
        for (((xn, lw), &a), &ui) in x_new
            .chunks_exact_mut(d)
            .zip(log_w.iter_mut())
            .zip(&labels)
            .zip(&order_u)
        {
            let prev = &xs[a * d..(a + 1) * d];
            let v = &u[ui * width + 1..(ui + 1) * width];
            model.sample_transition(t, prev, v, xn);
            *lw = model.log_g(t, prev, xn);
        }
        std::mem::swap(&mut x, &mut x_new);
        w = rec.weigh(t, &log_w)?;
        let m = rec.moment(d, &x, &w);
        if t < t_max || opts.keep_particles {
            sort_into(t, &x, &w, &mut xs, &mut ws)?;
        }
        rec.push(m, started, sorted_snapshot(&xs, &ws));
    }
    Ok(FilterOutput {
        engine: Engine::Sqmc { points, resolution },
        n,
        steps: rec.steps,
        hilbert_bits: Some(bits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::norm_inv_cdf;

    /// Gaussian random walk with constant potentials.
    struct Flat {
        bounds: PsiBounds,
        dim: usize,
    }

    impl Flat {
        fn new(dim: usize) -> Self {
            Flat {
                bounds: PsiBounds::new(vec![-3.0; dim], vec![3.0; dim]).unwrap(),
                dim,
            }
        }
    }

    impl FeynmanKac for Flat {
        fn dim(&self) -> usize {
            self.dim
        }
        fn horizon(&self) -> usize {
            usize::MAX
        }
        fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
            for (o, &ui) in out.iter_mut().zip(u) {
                *o = norm_inv_cdf(crate::transforms::open_unit(ui)).unwrap();
            }
        }
        fn sample_transition(&self, _t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
            for ((o, &p), &vi) in out.iter_mut().zip(prev).zip(v) {
                *o = p + norm_inv_cdf(crate::transforms::open_unit(vi)).unwrap();
            }
        }
        fn log_g0(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn log_g(&self, _t: usize, _prev: &[f64], _x: &[f64]) -> f64 {
            0.0
        }
        fn psi_bounds(&self) -> &PsiBounds {
            &self.bounds
        }
    }

    /// Potential `exp(-x^2 / 2)` at every step.
    struct Bump(Flat);

    impl FeynmanKac for Bump {
        fn dim(&self) -> usize {
            self.0.dim
        }
        fn horizon(&self) -> usize {
            usize::MAX
        }
        fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
            self.0.sample_initial(u, out)
        }
        fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
            self.0.sample_transition(t, prev, v, out)
        }
        fn log_g0(&self, x: &[f64]) -> f64 {
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
        fn log_g(&self, _t: usize, _prev: &[f64], x: &[f64]) -> f64 {
            self.log_g0(x)
        }
        fn psi_bounds(&self) -> &PsiBounds {
            &self.0.bounds
        }
    }

    fn engines() -> Vec<Engine> {
        vec![
            Engine::Smc {
                resampler: Resampler::Systematic,
                seed: 1,
            },
            Engine::Smc {
                resampler: Resampler::Multinomial,
                seed: 1,
            },
            Engine::Sqmc {
                points: PointSource::Qmc(RandomizationScheme::owen(1)),
                resolution: Resolution::Max,
            },
            Engine::Sqmc {
                points: PointSource::Qmc(RandomizationScheme::NONE),
                resolution: Resolution::Auto,
            },
            Engine::Sqmc {
                points: PointSource::Iid(1),
                resolution: Resolution::Max,
            },
        ]
    }

    #[test]
    fn constant_potentials_give_unit_evidence() {
        for d in [1, 2] {
            let m = Flat::new(d);
            for e in engines() {
                let out = run(&m, 33, 5, e, RunOptions::default()).unwrap();
                assert!(out.steps.iter().all(|s| s.log_z == 0.0), "{e:?}");
            }
        }
    }

    #[test]
    fn single_particle_evidence_is_product_of_potentials() {
        let m = Bump(Flat::new(2));
        for e in engines() {
            let out = run(
                &m,
                1,
                4,
                e,
                RunOptions {
                    keep_particles: true,
                    moment: None,
                },
            )
            .unwrap();
            let mut want = m.log_g0(out.snapshot(0).unwrap().state(0));
            assert_eq!(log_evidence(&out, 0).unwrap(), want);
            for t in 1..=4 {
                want += m.log_g(t, &[], out.snapshot(t).unwrap().state(0));
                assert!((log_evidence(&out, t).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_are_normalized_and_snapshots_sorted() {
        let m = Bump(Flat::new(2));
        let opts = RunOptions {
            keep_particles: true,
            moment: None,
        };
        for e in engines() {
            let out = run(&m, 100, 3, e, opts).unwrap();
            for t in 0..=3 {
                let s = out.snapshot(t).unwrap();
                assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if s.hilbert_sorted {
                    let (order, _) = hilbert_order(&m, t, &s.states, Resolution::Max).unwrap();
                    assert_eq!(order, (0..100).collect::<Vec<_>>());
                }
            }
        }
    }

    #[test]
    fn moment_hook_matches_stored_particles() {
        let m = Bump(Flat::new(2));
        let phi = |x: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = x[0];
        };
        let opts = RunOptions {
            keep_particles: true,
            moment: Some((&phi, 2)),
        };
        for e in engines() {
            let out = run(&m, 64, 3, e, opts).unwrap();
            for t in 0..=3 {
                let est = estimate_moment(&out, t, |x| vec![1.0, x[0]]).unwrap();
                let hook = &out.steps[t].moment;
                assert!((hook[0] - 1.0).abs() < 1e-12);
                assert!((est[1] - hook[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unweighted_identity_moment_is_the_mean() {
        let m = Flat::new(1);
        let out = run(
            &m,
            50,
            2,
            engines()[0],
            RunOptions {
                keep_particles: true,
                moment: None,
            },
        )
        .unwrap();
        let s = out.snapshot(2).unwrap();
        let mean = s.states.iter().sum::<f64>() / 50.0;
        assert!((estimate_moment(&out, 2, |x| x.to_vec()).unwrap()[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn unscrambled_sqmc_is_deterministic() {
        let m = Bump(Flat::new(3));
        let e = Engine::Sqmc {
            points: PointSource::Qmc(RandomizationScheme::NONE),
            resolution: Resolution::Max,
        };
        let opts = RunOptions {
            keep_particles: true,
            moment: None,
        };
        let mut a = run(&m, 128, 4, e, opts).unwrap();
        let mut b = run(&m, 128, 4, e, opts).unwrap();
        for s in a.steps.iter_mut().chain(b.steps.iter_mut()) {
            s.nanos = 0;
        }
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        struct Dead(Flat);
        impl FeynmanKac for Dead {
            fn dim(&self) -> usize {
                1
            }
            fn horizon(&self) -> usize {
                3
            }
            fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
                self.0.sample_initial(u, out)
            }
            fn sample_transition(&self, t: usize, p: &[f64], v: &[f64], out: &mut [f64]) {
                self.0.sample_transition(t, p, v, out)
            }
            fn log_g0(&self, _x: &[f64]) -> f64 {
                0.0
            }
            fn log_g(&self, t: usize, _p: &[f64], _x: &[f64]) -> f64 {
                if t == 2 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            fn psi_bounds(&self) -> &PsiBounds {
                &self.0.bounds
            }
        }
        let m = Dead(Flat::new(1));
        for e in engines() {
            assert_eq!(
                run(&m, 8, 3, e, RunOptions::default()),
                Err(FilterError::WeightCollapse { t: 2 })
            );
            assert!(matches!(
                run(&m, 8, 4, e, RunOptions::default()),
                Err(FilterError::HorizonExceeded { .. })
            ));
            assert_eq!(run(&m, 0, 1, e, RunOptions::default()), Err(FilterError::NoParticles));
        }
        let out = run(&m, 4, 1, engines()[0], RunOptions::default()).unwrap();
        assert_eq!(out.snapshot(0), Err(FilterError::NoSnapshot(0)));
        assert!(matches!(log_evidence(&out, 5), Err(FilterError::TimeOutOfRange { .. })));
    }
}
