use proptest::prelude::*;
use rand::Rng;
use sqmc::resample::{
    inverse_transform_labels, multinomial_labels, sorted_uniforms, systematic_labels,
};
use sqmc::seed::stream_rng;

/// Asymptotic Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..100 {
        let k = k as f64;
        let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * (-2.0 * k * k * x * x).exp();
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn random_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random() })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn single_sorted_uniform_passes_ks() {
    let draws = 10_000;
    let mut v: Vec<f64> = (0..draws)
        .map(|i| sorted_uniforms(1, 0x5eed_0000 + i as u64)[0])
        .collect();
    v.sort_by(f64::total_cmp);
    let n = draws as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let p = kolmogorov_tail(d * n.sqrt());
    assert!(p > 0.001, "KS D = {d}, p = {p}");
}

#[test]
fn systematic_offspring_are_unbiased() {
    let w = [0.05, 0.4, 0.0, 0.25, 0.3];
    let n = w.len();
    let draws = 10_000;
    let mut rng = stream_rng(77, 0);
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..draws {
        let labels = systematic_labels(&w, n, rng.random()).unwrap();
        let mut c = vec![0.0; n];
        labels.iter().for_each(|&a| c[a] += 1.0);
        for m in 0..n {
            sum[m] += c[m];
            sum_sq[m] += c[m] * c[m];
        }
    }
    for m in 0..n {
        let mean = sum[m] / draws as f64;
        let var = sum_sq[m] / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        let want = n as f64 * w[m];
        assert!((mean - want).abs() <= 3.0 * se + 1e-12, "m={m}: {mean} vs {want} (se {se})");
    }
}

#[test]
fn multinomial_offspring_moments() {
    let w = [0.1, 0.2, 0.3, 0.4];
    let n = w.len();
    let reps = 10_000;
    let mut rng = stream_rng(5, 0);
    let mut counts = vec![vec![0.0; reps]; n];
    for r in 0..reps {
        for a in multinomial_labels(&w, &mut rng).unwrap() {
            counts[a][r] += 1.0;
        }
    }
    for m in 0..n {
        let p = w[m];
        let mean: f64 = counts[m].iter().sum::<f64>() / reps as f64;
        let var: f64 = counts[m].iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        // Mean: Binomial(n, p). Standard error of the sample mean.
        let mv = n as f64 * p * (1.0 - p);
        assert!((mean - n as f64 * p).abs() < 3.0 * (mv / reps as f64).sqrt());
        // Variance: the sample variance has sd about sqrt((mu4 - v^2) / reps).
        let mu4 = mv * (1.0 + 3.0 * (n as f64 - 2.0) * p * (1.0 - p));
        let sd_var = ((mu4 - mv * mv) / reps as f64).sqrt();
        assert!((var - mv).abs() < 3.0 * sd_var, "m={m}: var {var} vs {mv}");
    }
}

/// Cumulative-sum oracle.
fn brute(u: &[f64], w: &[f64]) -> Vec<usize> {
    u.iter()
        .map(|&x| {
            let mut s = 0.0;
            for (m, &wm) in w.iter().enumerate() {
                s += wm;
                if s >= x {
                    return m;
                }
            }
            w.len() - 1
        })
        .collect()
}

#[test]
fn agrees_with_brute_force_on_random_instances() {
    let mut rng = stream_rng(2718, 0);
    for _ in 0..10_000 {
        let n = rng.random_range(1..30);
        let k = rng.random_range(1..30);
        let w = random_weights(n, &mut rng);
        let mut u: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        u.sort_by(f64::total_cmp);
        assert_eq!(inverse_transform_labels(&u, &w).unwrap(), brute(&u, &w));
    }
}

proptest! {
    #[test]
    fn labels_are_monotone(
        raw in prop::collection::vec(0.0f64..1.0, 1..50),
        mut u in prop::collection::vec(0.0f64..1.0, 1..50),
    ) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 0.0);
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        u.sort_by(f64::total_cmp);
        let labels = inverse_transform_labels(&u, &w).unwrap();
        prop_assert!(labels.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(labels.iter().all(|&a| w[a] > 0.0 || u.contains(&0.0)));
    }
}
