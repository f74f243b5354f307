use rand::Rng;

use super::{LowDiscError, PointSet};
use crate::seed::stream_rng;

/// How [`star_discrepancy`] evaluates the supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscrepancyMode {
    /// Sorted-points closed form; `d = 1` only.
    Exact1d,
    /// Exhaustive search over anchored boxes whose upper corners lie on the
    /// grid spanned by the point coordinates. Guarded to `d <= 3`,
    /// `n <= 2^10`.
    GridExact,
    /// Maximum local discrepancy over `samples` random anchors: a lower
    /// bound on the star discrepancy.
    SampleEstimate { samples: usize, seed: u64 },
}

const GRID_MAX_DIM: usize = 3;
const GRID_MAX_POINTS: usize = 1 << 10;

/// Star discrepancy `sup_b | #{u in [0,b)} / n - vol([0,b)) |`.
pub fn star_discrepancy(ps: &PointSet, mode: DiscrepancyMode) -> Result<f64, LowDiscError> {
    match mode {
        DiscrepancyMode::Exact1d => {
            if ps.dim() != 1 {
                return Err(LowDiscError::ModeMismatch(format!(
                    "exact-1d requires d = 1, got d = {}",
                    ps.dim()
                )));
            }
            Ok(exact_1d(&ps.column(0)))
        }
        DiscrepancyMode::GridExact => {
            if ps.dim() > GRID_MAX_DIM || ps.len() > GRID_MAX_POINTS {
                return Err(LowDiscError::ModeMismatch(format!(
                    "grid-exact requires d <= {GRID_MAX_DIM} and n <= {GRID_MAX_POINTS}, got d = {}, n = {}",
                    ps.dim(),
                    ps.len()
                )));
            }
            Ok(grid_exact(ps))
        }
        DiscrepancyMode::SampleEstimate { samples, seed } => Ok(sampled(ps, samples, seed)),
    }
}

fn exact_1d(points: &[f64]) -> f64 {
    let mut u = points.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| {
            let i = i as f64;
            ((i + 1.0) / n - x).max(x - i / n)
        })
        .fold(0.0, f64::max)
}

/// For each upper corner `b` built from point coordinates (or 1), compare
/// the volume with the open-box count and the closed-box count. The last
/// axis is swept over sorted coordinates so counting is incremental.
fn grid_exact(ps: &PointSet) -> f64 {
    let n = ps.len();
    let d = ps.dim();
    let nf = n as f64;
    let grids: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut g = ps.column(j);
            g.push(1.0);
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        })
        .collect();

    let mut best = 0.0f64;
    let lead = d - 1;
    let mut idx = vec![0usize; lead];
    let mut last: Vec<f64> = Vec::with_capacity(n);
    loop {
        let corner: Vec<f64> = (0..lead).map(|j| grids[j][idx[j]]).collect();
        let lead_vol: f64 = corner.iter().product();
        for closed in [false, true] {
            last.clear();
            last.extend(ps.rows().filter_map(|r| {
                let inside = (0..lead).all(|j| {
                    if closed {
                        r[j] <= corner[j]
                    } else {
                        r[j] < corner[j]
                    }
                });
                inside.then_some(r[lead])
            }));
            last.sort_by(f64::total_cmp);
            let mut below = 0usize;
            let mut upto = 0usize;
            for &b in &grids[lead] {
                while below < last.len() && last[below] < b {
                    below += 1;
                }
                while upto < last.len() && last[upto] <= b {
                    upto += 1;
                }
                let vol = lead_vol * b;
                if closed {
                    if b < 1.0 {
                        best = best.max(upto as f64 / nf - vol);
                    }
                } else {
                    best = best.max(vol - below as f64 / nf);
                }
            }
        }
        // odometer over the leading axes
        let mut j = 0;
        loop {
            if j == lead {
                return best;
            }
            idx[j] += 1;
            if idx[j] < grids[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn sampled(ps: &PointSet, samples: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0);
    let nf = ps.len() as f64;
    let mut best = 0.0f64;
    let mut b = vec![0.0; ps.dim()];
    for _ in 0..samples {
        for bj in b.iter_mut() {
            *bj = rng.random::<f64>();
        }
        let vol: f64 = b.iter().product();
        let open = ps
            .rows()
            .filter(|r| r.iter().zip(&b).all(|(x, y)| x < y))
            .count() as f64;
        let closed = ps
            .rows()
            .filter(|r| r.iter().zip(&b).all(|(x, y)| x <= y))
            .count() as f64;
        best = best.max(vol - open / nf).max(closed / nf - vol);
    }
    best
}
