//! Smoothing on top of the particle engines.
//!
//! Forward smoothing reruns the filter on an augmented chain: either the
//! running sum of an additive functional is carried next to the state, or
//! the whole path is. The backward pass draws trajectories from stored
//! filter output, reweighting by the transition density.

use std::ops::Range;

use rand::Rng;

use crate::fk::{run, Engine, FeynmanKac, FilterError, FilterOutput, PointSource, RunOptions};
use crate::lowdisc::{sobol_points, MAX_DIM};
use crate::resample::labels_into;
use crate::seed::stream_rng;
use crate::transforms::PsiBounds;

/// Chain `z_t = (sum_{s<t} phi(x_s), x_t)`. The running sum is coordinate 0.
pub struct AdditiveModel<'a, M: ?Sized> {
    inner: &'a M,
    phi: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    bounds: PsiBounds,
}

impl<'a, M: FeynmanKac + ?Sized> AdditiveModel<'a, M> {
    /// The running-sum coordinate gets logistic bounds `(t_max + 1)` times
    /// the range of `phi` over the corners and center of the state bounds,
    /// widened to contain 0.
    pub fn new(inner: &'a M, phi: &'a (dyn Fn(&[f64]) -> f64 + Sync), t_max: usize) -> Self {
        let b = inner.psi_bounds();
        let mid: Vec<f64> = b.lower().iter().zip(b.upper()).map(|(l, u)| 0.5 * (l + u)).collect();
        let vals: Vec<f64> = [b.lower(), b.upper(), &mid[..]]
            .iter()
            .map(|x| phi(x))
            .filter(|v| v.is_finite())
            .collect();
        let scale = (t_max + 1) as f64;
        let mut lo = vals.iter().copied().fold(0.0, f64::min) * scale;
        let mut hi = vals.iter().copied().fold(0.0, f64::max) * scale;
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let bounds = b.extended(lo, hi).expect("finite ordered bounds");
        AdditiveModel { inner, phi, bounds }
    }
}

impl<M: FeynmanKac + ?Sized> FeynmanKac for AdditiveModel<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn initial_noise_dim(&self) -> usize {
        self.inner.initial_noise_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        self.inner.sample_initial(u, &mut out[1..]);
    }
    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = prev[0] + (self.phi)(&prev[1..]);
        self.inner.sample_transition(t, &prev[1..], v, &mut out[1..]);
    }
    fn log_g0(&self, z: &[f64]) -> f64 {
        self.inner.log_g0(&z[1..])
    }
    fn log_g(&self, t: usize, prev: &[f64], z: &[f64]) -> f64 {
        self.inner.log_g(t, &prev[1..], &z[1..])
    }
    fn psi_bounds(&self) -> &PsiBounds {
        &self.bounds
    }
}

/// Estimates of `E[sum_{s<=t} phi(x_s) | y_{0:t}]` for `t = 0..=t_max`.
pub fn forward_smoothing_additive<M: FeynmanKac + ?Sized>(
    model: &M,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    n: usize,
    t_max: usize,
    engine: Engine,
) -> Result<Vec<f64>, FilterError> {
    let aug = AdditiveModel::new(model, phi, t_max);
    let closure = |z: &[f64], out: &mut [f64]| out[0] = z[0] + phi(&z[1..]);
    let out = run(
        &aug,
        n,
        t_max,
        engine,
        RunOptions {
            keep_particles: false,
            moment: Some((&closure, 1)),
        },
    )?;
    Ok(out.steps.iter().map(|s| s.moment[0]).collect())
}

/// Chain carrying the whole path: slot `s` of the state holds `x_s`, slots
/// after `t` are zero. The Hilbert sort at time `t` uses the first `t + 1`
/// slots, so it needs `(t + 1) d <= 64`.
pub struct PathModel<'a, M: ?Sized> {
    inner: &'a M,
    slots: usize,
    bounds: PsiBounds,
}

impl<'a, M: FeynmanKac + ?Sized> PathModel<'a, M> {
    pub fn new(inner: &'a M, t_max: usize) -> Self {
        let b = inner.psi_bounds();
        let slots = t_max + 1;
        let lower = b.lower().repeat(slots);
        let upper = b.upper().repeat(slots);
        PathModel {
            inner,
            slots,
            bounds: PsiBounds::new(lower, upper).expect("valid bounds"),
        }
    }
}

impl<M: FeynmanKac + ?Sized> FeynmanKac for PathModel<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim() * self.slots
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn initial_noise_dim(&self) -> usize {
        self.inner.initial_noise_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon().min(self.slots - 1)
    }
    fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
        let d = self.inner.dim();
        out.fill(0.0);
        self.inner.sample_initial(u, &mut out[..d]);
    }
    fn sample_transition(&self, t: usize, prev: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.inner.dim();
        out.copy_from_slice(prev);
        let (head, tail) = out.split_at_mut(t * d);
        self.inner
            .sample_transition(t, &head[(t - 1) * d..], v, &mut tail[..d]);
    }
    fn log_g0(&self, z: &[f64]) -> f64 {
        self.inner.log_g0(&z[..self.inner.dim()])
    }
    fn log_g(&self, t: usize, _prev: &[f64], z: &[f64]) -> f64 {
        let d = self.inner.dim();
        self.inner.log_g(t, &z[(t - 1) * d..t * d], &z[t * d..(t + 1) * d])
    }
    fn psi_bounds(&self) -> &PsiBounds {
        &self.bounds
    }
    fn sort_coordinates(&self, t: usize) -> Range<usize> {
        0..(t + 1) * self.inner.dim()
    }
}

/// Estimates of `E[phi(t, x_{0:t}) | y_{0:t}]` by filtering whole paths.
/// `phi` receives the path flattened as `x_0, ..., x_t`.
pub fn forward_smoothing_path<M: FeynmanKac + ?Sized>(
    model: &M,
    phi: &(dyn Fn(usize, &[f64]) -> f64 + Sync),
    n: usize,
    t_max: usize,
    engine: Engine,
) -> Result<Vec<f64>, FilterError> {
    let path = PathModel::new(model, t_max);
    let d = model.dim();
    let out = run(
        &path,
        n,
        t_max,
        engine,
        RunOptions {
            keep_particles: true,
            moment: None,
        },
    )?;
    (0..=t_max)
        .map(|t| {
            let snap = out.snapshot(t)?;
            Ok(snap
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * phi(t, &snap.state(i)[..(t + 1) * d]))
                .sum())
        })
        .collect()
}

/// `n_b` trajectories of length `T + 1`, each state copied from the stored
/// filter particles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub n_b: usize,
    pub len: usize,
    pub dim: usize,
    /// `[trajectory][t][coordinate]`.
    pub states: Vec<f64>,
    /// Particle index selected at every `(trajectory, t)`.
    pub indices: Vec<usize>,
}

impl TrajectorySet {
    pub fn trajectory(&self, n: usize) -> &[f64] {
        let w = self.len * self.dim;
        &self.states[n * w..(n + 1) * w]
    }

    pub fn state(&self, n: usize, t: usize) -> &[f64] {
        let i = (n * self.len + t) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn index(&self, n: usize, t: usize) -> usize {
        self.indices[n * self.len + t]
    }

    /// Average state at time `t` over trajectories.
    pub fn mean(&self, t: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for n in 0..self.n_b {
            for (a, b) in acc.iter_mut().zip(self.state(n, t)) {
                *a += b;
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.n_b as f64);
        acc
    }
}

/// The backward uniforms `u~` in `[0,1)^{T+1}`, row-major. Sobol' points
/// need `T + 1 <= 32`; longer horizons fall back to i.i.d. uniforms seeded
/// from the scheme.
fn backward_points(points: PointSource, n_b: usize, len: usize) -> Result<Vec<f64>, FilterError> {
    match points {
        PointSource::Qmc(scheme) if len <= MAX_DIM => Ok(sobol_points(n_b, len, scheme)?.values().to_vec()),
        PointSource::Qmc(scheme) => iid(scheme.seed, n_b * len),
        PointSource::Iid(seed) => iid(seed, n_b * len),
    }
}

fn iid(seed: u64, k: usize) -> Result<Vec<f64>, FilterError> {
    let mut rng = stream_rng(seed, 0);
    Ok((0..k).map(|_| rng.random()).collect())
}

/// Backward sampling of `n_b` trajectories from a filter run that stored
/// its particles.
///
/// The final states come from inverting the time-`T` weights at the sorted
/// first coordinates of `u~`; then, for `t = T-1, ..., 0`, trajectory `n`
/// selects among the time-`t` particles with probabilities proportional to
/// `W_t^m m_{t+1}(x~_{t+1}^n | x_t^m)`, inverting at coordinate `T - t` of
/// the same point `tau(n)`.
pub fn backward_pass<M: FeynmanKac + ?Sized>(
    output: &FilterOutput,
    model: &M,
    n_b: usize,
    points: PointSource,
) -> Result<TrajectorySet, FilterError> {
    if n_b == 0 {
        return Err(FilterError::NoParticles);
    }
    let t_max = output.horizon();
    let len = t_max + 1;
    let d = model.dim();
    let snaps = (0..=t_max)
        .map(|t| output.snapshot(t))
        .collect::<Result<Vec<_>, _>>()?;
    if t_max > 0 {
        let s = snaps[0];
        if model
            .log_transition_density(1, s.state(0), snaps[1].state(0))
            .is_none()
        {
            return Err(FilterError::MissingDensity);
        }
    }

    let u = backward_points(points, n_b, len)?;
    let mut tau: Vec<usize> = (0..n_b).collect();
    tau.sort_by(|&a, &b| u[a * len].total_cmp(&u[b * len]).then(a.cmp(&b)));

    let mut indices = vec![0usize; n_b * len];
    let mut states = vec![0.0; n_b * len * d];
    let mut last = Vec::with_capacity(n_b);
    labels_into(tau.iter().map(|&i| u[i * len]), &snaps[t_max].weights, &mut last);
    for (n, &a) in last.iter().enumerate() {
        indices[n * len + t_max] = a;
        let at = (n * len + t_max) * d;
        states[at..at + d].copy_from_slice(snaps[t_max].state(a));
    }

    let n_part = output.n;
    let mut log_w = vec![0.0; n_part];
    let mut cum = vec![0.0; n_part];
    for t in (0..t_max).rev() {
        let snap = snaps[t];
        let ln_w: Vec<f64> = snap.weights.iter().map(|w| w.ln()).collect();
        for n in 0..n_b {
            let next_at = (n * len + t + 1) * d;
            let next = &states[next_at..next_at + d];
            let mut max = f64::NEG_INFINITY;
            for (m, lw) in log_w.iter_mut().enumerate() {
                *lw = if ln_w[m] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    ln_w[m]
                        + model
                            .log_transition_density(t + 1, snap.state(m), next)
                            .ok_or(FilterError::MissingDensity)?
                };
                max = max.max(*lw);
            }
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(FilterError::WeightCollapse { t });
            }
            let mut s = 0.0;
            for (c, lw) in cum.iter_mut().zip(&log_w) {
                s += (lw - max).exp();
                *c = s;
            }
            let target = u[tau[n] * len + (t_max - t)] * s;
            let mut a = cum.partition_point(|&c| c < target).min(n_part - 1);
            // A target of exactly 0 must not land on a zero-weight particle.
            while a + 1 < n_part && log_w[a] == f64::NEG_INFINITY {
                a += 1;
            }
            indices[n * len + t] = a;
            let at = (n * len + t) * d;
            states[at..at + d].copy_from_slice(snap.state(a));
        }
    }
    Ok(TrajectorySet {
        n_b,
        len,
        dim: d,
        states,
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::{estimate_moment, Resampler};
    use crate::hilbert::Resolution;
    use crate::lowdisc::RandomizationScheme;
    use crate::models::{build_linear_gaussian, simulate_linear_gaussian, LinearGaussianParams};

    fn lg(t: usize) -> crate::models::LinearGaussianModel {
        let p = LinearGaussianParams::scalar(0.9, 1.0, 1.0);
        let (obs, _) = simulate_linear_gaussian(&p, t, 11).unwrap();
        build_linear_gaussian(&p, &obs).unwrap()
    }

    fn sqmc(seed: u64) -> Engine {
        Engine::Sqmc {
            points: PointSource::Qmc(RandomizationScheme::owen(seed)),
            resolution: Resolution::Max,
        }
    }

    #[test]
    fn zero_functional_gives_zero() {
        let m = lg(5);
        let zero = |_: &[f64]| 0.0;
        let est = forward_smoothing_additive(&m, &zero, 64, 5, sqmc(1)).unwrap();
        assert!(est.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizon_zero_is_the_filter_moment() {
        let m = lg(0);
        let id = |x: &[f64]| x[0];
        let e = sqmc(3);
        let est = forward_smoothing_additive(&m, &id, 128, 0, e).unwrap();
        let out = run(
            &m,
            128,
            0,
            e,
            RunOptions {
                keep_particles: true,
                moment: None,
            },
        )
        .unwrap();
        let want = estimate_moment(&out, 0, |x| vec![x[0]]).unwrap()[0];
        assert!((est[0] - want).abs() < 1e-12);
    }

    #[test]
    fn path_and_additive_agree_at_time_zero_and_one() {
        let m = lg(1);
        let id = |x: &[f64]| x[0];
        let sum = |_t: usize, p: &[f64]| p.iter().sum::<f64>();
        let e = Engine::Smc {
            resampler: Resampler::Systematic,
            seed: 4,
        };
        let a = forward_smoothing_additive(&m, &id, 256, 1, e).unwrap();
        let b = forward_smoothing_path(&m, &sum, 256, 1, e).unwrap();
        // Same seed, same uniforms: the augmented chains carry identical states.
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!((a[1] - b[1]).abs() < 1e-12);
    }

    #[test]
    fn path_smoothing_hits_the_bit_cap() {
        let m = lg(70);
        let sum = |_t: usize, p: &[f64]| p.iter().sum::<f64>();
        let err = forward_smoothing_path(&m, &sum, 16, 70, sqmc(1)).unwrap_err();
        assert!(matches!(err, FilterError::Hilbert(_)));
    }

    #[test]
    fn horizon_zero_backward_draws_final_particles() {
        let m = lg(0);
        let out = run(
            &m,
            32,
            0,
            sqmc(2),
            RunOptions {
                keep_particles: true,
                moment: None,
            },
        )
        .unwrap();
        let traj = backward_pass(&out, &m, 16, PointSource::Qmc(RandomizationScheme::owen(5))).unwrap();
        let snap = out.snapshot(0).unwrap();
        for n in 0..16 {
            assert_eq!(traj.state(n, 0), snap.state(traj.index(n, 0)));
            assert!(snap.weights[traj.index(n, 0)] > 0.0);
        }
    }

    /// With a transition density that ignores the previous state the
    /// backward weights are the filter weights, so the selection at every
    /// `t` is the Algorithm-2 inversion of `W_t`.
    #[test]
    fn flat_density_reduces_to_filter_weights() {
        struct Flat(crate::models::LinearGaussianModel);
        impl FeynmanKac for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn horizon(&self) -> usize {
                self.0.horizon()
            }
            fn sample_initial(&self, u: &[f64], out: &mut [f64]) {
                self.0.sample_initial(u, out)
            }
            fn sample_transition(&self, t: usize, p: &[f64], v: &[f64], out: &mut [f64]) {
                self.0.sample_transition(t, p, v, out)
            }
            fn log_g0(&self, x: &[f64]) -> f64 {
                self.0.log_g0(x)
            }
            fn log_g(&self, t: usize, p: &[f64], x: &[f64]) -> f64 {
                self.0.log_g(t, p, x)
            }
            fn psi_bounds(&self) -> &PsiBounds {
                self.0.psi_bounds()
            }
            fn log_transition_density(&self, _t: usize, _p: &[f64], _x: &[f64]) -> Option<f64> {
                Some(-1.5)
            }
        }
        let m = Flat(lg(3));
        let out = run(
            &m,
            64,
            3,
            sqmc(9),
            RunOptions {
                keep_particles: true,
                moment: None,
            },
        )
        .unwrap();
        let nb = 32;
        let traj = backward_pass(&out, &m, nb, PointSource::Qmc(RandomizationScheme::owen(8))).unwrap();
        let u = sobol_points(nb, 4, RandomizationScheme::owen(8)).unwrap();
        let mut tau: Vec<usize> = (0..nb).collect();
        tau.sort_by(|&a, &b| u.get(a, 0).total_cmp(&u.get(b, 0)));
        for t in 0..3 {
            let w = &out.snapshot(t).unwrap().weights;
            for n in 0..nb {
                let target = u.get(tau[n], 3 - t);
                let mut s = 0.0;
                let want = w
                    .iter()
                    .position(|wm| {
                        s += wm;
                        s >= target
                    })
                    .unwrap_or(63);
                assert_eq!(traj.index(n, t), want, "t={t} n={n}");
            }
        }
    }

    #[test]
    fn missing_density_is_reported() {
        let p = crate::models::NeuralDecodingParams::default();
        let (obs, _) = crate::models::simulate_neural(&p, 3, 1).unwrap();
        let m = crate::models::build_neural(&p, &obs).unwrap();
        let out = run(
            &m,
            16,
            3,
            sqmc(1),
            RunOptions {
                keep_particles: true,
                moment: None,
            },
        )
        .unwrap();
        assert_eq!(
            backward_pass(&out, &m, 4, PointSource::Iid(1)),
            Err(FilterError::MissingDensity)
        );
    }
}
