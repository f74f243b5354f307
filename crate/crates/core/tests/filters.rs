use nalgebra::{DMatrix, DVector};
use sqmc::fk::{run, Engine, FeynmanKac, PointSource, Resampler, RunOptions};
use sqmc::hilbert::Resolution;
use sqmc::lowdisc::{sobol_points, RandomizationScheme};
use sqmc::models::*;
use sqmc::smoothing::forward_smoothing_additive;

fn engines(seed: u64) -> [(&'static str, Engine); 4] {
    [
        (
            "smc-systematic",
            Engine::Smc {
                resampler: Resampler::Systematic,
                seed,
            },
        ),
        (
            "smc-multinomial",
            Engine::Smc {
                resampler: Resampler::Multinomial,
                seed,
            },
        ),
        (
            "sqmc-owen",
            Engine::Sqmc {
                points: PointSource::Qmc(RandomizationScheme::owen(seed)),
                resolution: Resolution::Max,
            },
        ),
        (
            "sqmc-iid",
            Engine::Sqmc {
                points: PointSource::Iid(seed),
                resolution: Resolution::Max,
            },
        ),
    ]
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn lg2() -> LinearGaussianParams {
    LinearGaussianParams {
        a: DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.7]),
        q: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]),
        b: DMatrix::identity(2, 2),
        r: DMatrix::from_diagonal_element(2, 2, 0.5),
        m0: DVector::zeros(2),
        p0: DMatrix::identity(2, 2),
    }
}

#[test]
fn filtering_means_match_kalman() {
    let reps = 40;
    let n = 512;
    for params in [LinearGaussianParams::scalar(0.9, 1.0, 1.0), lg2()] {
        let d = params.dim();
        let (obs, _) = simulate_linear_gaussian(&params, 15, 21).unwrap();
        let model = build_linear_gaussian(&params, &obs).unwrap();
        let k = kalman_suite(&params, &obs).unwrap();
        let id = |x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
        let opts = RunOptions {
            keep_particles: false,
            moment: Some((&id, d)),
        };
        for (name, _) in engines(0) {
            let outs: Vec<_> = (0..reps)
                .map(|r| {
                    let e = engines(1000 + r).into_iter().find(|(m, _)| *m == name).unwrap().1;
                    run(&model, n, 15, e, opts).unwrap()
                })
                .collect();
            for t in 0..=15 {
                for i in 0..d {
                    let est: Vec<f64> = outs.iter().map(|o| o.steps[t].moment[i]).collect();
                    let (m, sd) = mean_sd(&est);
                    let want = k.filter_means[t][i];
                    let post_sd = k.filter_covs[t][(i, i)].sqrt();
                    // Ratio estimators carry an O(1/N) bias.
                    let tol = 4.0 * sd / (reps as f64).sqrt() + 2.0 * post_sd / n as f64;
                    assert!((m - want).abs() < tol, "{name} d={d} t={t} i={i}: {m} vs {want} (tol {tol})");
                }
            }
        }
    }
}

#[test]
fn evidence_is_unbiased_and_sqmc_is_tighter() {
    let params = LinearGaussianParams::scalar(0.9, 1.0, 1.0);
    let (obs, _) = simulate_linear_gaussian(&params, 10, 3).unwrap();
    let model = build_linear_gaussian(&params, &obs).unwrap();
    let exact = kalman_suite(&params, &obs).unwrap().loglik;
    let mut var = Vec::new();
    for (name, _) in engines(0) {
        let log_z: Vec<f64> = (0..400)
            .map(|r| {
                let e = engines(r).into_iter().find(|(m, _)| *m == name).unwrap().1;
                run(&model, 64, 10, e, RunOptions::default()).unwrap().log_z()
            })
            .collect();
        let ratio: Vec<f64> = log_z.iter().map(|l| (l - exact).exp()).collect();
        let (m, sd) = mean_sd(&ratio);
        assert!((m - 1.0).abs() < 3.0 * sd / 20.0, "{name}: Z ratio {m} (sd {sd})");
        var.push((name, mean_sd(&log_z).1.powi(2)));
    }
    let v = |n: &str| var.iter().find(|(m, _)| *m == n).unwrap().1;
    assert!(v("sqmc-owen") < v("smc-systematic"), "{var:?}");
    assert!(v("sqmc-owen") < v("sqmc-iid"), "{var:?}");
}

#[test]
fn msv_kernels_reproduce_gaussian_moments() {
    let p = MsvParams::default_for(2);
    let (obs, _) = simulate_msv(&p, 3, 1).unwrap();
    let m = build_msv(&p, &obs).unwrap();
    let n = 1 << 16;
    let prev = [-8.5, -9.7];
    let u = sobol_points(n, 2, RandomizationScheme::owen(4)).unwrap();
    let mut x0 = vec![0.0; 2 * n];
    let mut x1 = vec![0.0; 2 * n];
    for i in 0..n {
        m.sample_initial(u.row(i), &mut x0[2 * i..2 * i + 2]);
        m.sample_transition(1, &prev, u.row(i), &mut x1[2 * i..2 * i + 2]);
    }
    let check = |x: &[f64], mean: [f64; 2], cov: &DMatrix<f64>| {
        let mut mu = [0.0; 2];
        for i in 0..n {
            mu[0] += x[2 * i] / n as f64;
            mu[1] += x[2 * i + 1] / n as f64;
        }
        for a in 0..2 {
            assert!((mu[a] - mean[a]).abs() < 5.0 * (cov[(a, a)] / n as f64).sqrt(), "mean {a}: {mu:?} vs {mean:?}");
            for b in 0..2 {
                let c: f64 = (0..n).map(|i| (x[2 * i + a] - mu[a]) * (x[2 * i + b] - mu[b])).sum::<f64>() / n as f64;
                let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / n as f64).sqrt();
                assert!((c - cov[(a, b)]).abs() < 5.0 * se, "cov ({a},{b}): {c} vs {}", cov[(a, b)]);
            }
        }
    };
    check(&x0, [p.mu[0], p.mu[1]], &p.stationary_cov());
    let mean1 = [0, 1].map(|i| p.mu[i] + p.phi[i] * (prev[i] - p.mu[i]));
    check(&x1, mean1, &p.transition_cov());
}

#[test]
fn every_model_simulates_and_filters() {
    let t = 30;
    let models: Vec<(&str, Box<dyn FeynmanKac>)> = vec![
        ("lg", {
            let p = lg2();
            let (o, _) = simulate_linear_gaussian(&p, t, 1).unwrap();
            Box::new(build_linear_gaussian(&p, &o).unwrap())
        }),
        ("toy", {
            let p = ToyUnivariateParams::default();
            let (o, _) = simulate_toy(&p, t, 1).unwrap();
            Box::new(build_toy(&p, &o).unwrap())
        }),
        ("msv2", {
            let p = MsvParams::default_for(2);
            let (o, _) = simulate_msv(&p, t, 1).unwrap();
            Box::new(build_msv(&p, &o).unwrap())
        }),
        ("msv4", {
            let p = MsvParams::default_for(4);
            let (o, _) = simulate_msv(&p, t, 1).unwrap();
            Box::new(build_msv(&p, &o).unwrap())
        }),
        ("neural", {
            let p = NeuralDecodingParams::default();
            let (o, _) = simulate_neural(&p, t, 1).unwrap();
            Box::new(build_neural(&p, &o).unwrap())
        }),
    ];
    for (name, m) in &models {
        assert_eq!(m.horizon(), t);
        for (e_name, e) in engines(5) {
            let out = run(m.as_ref(), 256, t, e, RunOptions::default()).unwrap();
            assert_eq!(out.steps.len(), t + 1);
            assert!(out.steps.iter().all(|s| s.log_z.is_finite()), "{name} {e_name}");
        }
    }
}

#[test]
fn toy_engines_agree_on_evidence() {
    let p = ToyUnivariateParams::default();
    let (obs, _) = simulate_toy(&p, 50, 8).unwrap();
    let m = build_toy(&p, &obs).unwrap();
    let stats: Vec<(f64, f64)> = [0usize, 2]
        .iter()
        .map(|&k| {
            let z: Vec<f64> = (0..30)
                .map(|r| run(&m, 1024, 50, engines(r)[k].1, RunOptions::default()).unwrap().log_z())
                .collect();
            mean_sd(&z)
        })
        .collect();
    let (smc, sqmc) = (stats[0], stats[1]);
    // log Z^N is biased down by about half its variance.
    let tol = 4.0 * ((smc.1.powi(2) + sqmc.1.powi(2)) / 30.0).sqrt() + smc.1.powi(2);
    assert!((smc.0 - sqmc.0).abs() < tol, "{smc:?} vs {sqmc:?}");
    assert!(sqmc.1 < smc.1);
}

#[test]
fn additive_smoothing_matches_rts_sums() {
    let params = LinearGaussianParams::scalar(0.9, 1.0, 1.0);
    let t_max = 20;
    let (obs, _) = simulate_linear_gaussian(&params, t_max, 2).unwrap();
    let model = build_linear_gaussian(&params, &obs).unwrap();
    let phi = |x: &[f64]| x[0];
    let want: Vec<f64> = (0..=t_max)
        .map(|t| {
            let k = kalman_suite(&params, &obs.truncated(t)).unwrap();
            k.smoother_means.iter().map(|m| m[0]).sum()
        })
        .collect();
    let reps = 20;
    for k in [0usize, 2] {
        let runs: Vec<Vec<f64>> = (0..reps)
            .map(|r| forward_smoothing_additive(&model, &phi, 1024, t_max, engines(r)[k].1).unwrap())
            .collect();
        for t in [0, 5, 10, 20] {
            let est: Vec<f64> = runs.iter().map(|v| v[t]).collect();
            let (m, sd) = mean_sd(&est);
            let tol = 4.0 * sd / (reps as f64).sqrt() + 0.05;
            assert!((m - want[t]).abs() < tol, "engine {k} t={t}: {m} vs {} (tol {tol})", want[t]);
        }
    }
}
