use super::{LowDiscError, PointSet, RandomizationScheme, ScrambleKind};
use crate::seed::{derive, mix64};

/// Number of dimensions with provisioned direction numbers.
pub const MAX_DIM: usize = 32;

const BITS: usize = 32;

/// Joe–Kuo (new-joe-kuo-6.21201) parameters for dimensions 2..=32:
/// degree `s`, interior polynomial coefficients `a`, initial `m_1..m_s`.
/// Dimension 1 is the van der Corput sequence and has no entry.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
    (7, 7, &[1, 1, 3, 13, 7, 35, 63]),
    (7, 8, &[1, 3, 5, 9, 1, 25, 53]),
    (7, 14, &[1, 3, 1, 13, 9, 35, 107]),
    (7, 19, &[1, 3, 1, 5, 27, 61, 31]),
    (7, 21, &[1, 1, 5, 11, 19, 41, 61]),
    (7, 28, &[1, 3, 5, 3, 3, 13, 69]),
    (7, 31, &[1, 1, 7, 13, 1, 19, 1]),
    (7, 32, &[1, 3, 7, 5, 13, 19, 59]),
    (7, 37, &[1, 1, 3, 9, 25, 29, 41]),
    (7, 41, &[1, 3, 5, 13, 23, 1, 55]),
    (7, 42, &[1, 3, 7, 3, 13, 59, 17]),
];

/// 32-bit direction numbers `v_j`, most significant digit first.
pub(crate) fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = 1 << (31 - j);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 1];
    let s = s as usize;
    for j in 0..s.min(BITS) {
        v[j] = m[j] << (31 - j);
    }
    for j in s..BITS {
        let mut x = v[j - s] ^ (v[j - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[j - k];
            }
        }
        v[j] = x;
    }
    v
}

/// The first `n` points of the `d`-dimensional Sobol' sequence (Gray-code
/// order), randomized per `scheme`.
///
/// Coordinates carry 53 fractional bits: the 32 Sobol' digits followed by
/// zeros (`None`), by shifted bits (`DigitalShift`), or by scrambled bits
/// (`OwenNested`). Values are `k / 2^53` and so always lie in `[0, 1)`.
pub fn sobol_points(
    n: usize,
    d: usize,
    scheme: RandomizationScheme,
) -> Result<PointSet, LowDiscError> {
    if n == 0 {
        return Err(LowDiscError::ZeroCount);
    }
    if d == 0 {
        return Err(LowDiscError::ZeroDimension);
    }
    if d > MAX_DIM {
        return Err(LowDiscError::DimensionExceedsTable(d));
    }
    assert!(
        (n as u64) <= 1u64 << BITS,
        "Sobol' generator supports at most 2^32 points"
    );

    let dirs: Vec<[u32; BITS]> = (0..d).map(direction_numbers).collect();
    // Scrambling depth: below ceil(log2 n) digits every point sits alone in
    // its subtree, so the remaining digits are filled from one node hash.
    let depth = (n.next_power_of_two().trailing_zeros() as usize).min(BITS);
    let keys: Vec<u64> = (0..d).map(|j| derive(scheme.seed, j as u64)).collect();

    let mut state = vec![0u32; d];
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        if i > 0 {
            let c = i.trailing_zeros() as usize;
            for (s, dir) in state.iter_mut().zip(&dirs) {
                *s ^= dir[c];
            }
        }
        for (j, &x) in state.iter().enumerate() {
            let bits53 = match scheme.kind {
                ScrambleKind::None => (x as u64) << 21,
                ScrambleKind::DigitalShift => ((x as u64) << 21) ^ (mix64(keys[j]) >> 11),
                ScrambleKind::OwenNested => owen_scramble(x, keys[j], depth),
            };
            values.push(to_unit(bits53));
        }
    }
    Ok(PointSet::from_raw(n, d, values))
}

#[inline]
fn to_unit(bits53: u64) -> f64 {
    debug_assert!(bits53 < 1 << 53);
    bits53 as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn node_bit(key: u64, node: u64) -> u64 {
    mix64(key ^ mix64(node)) >> 63
}

/// Nested uniform scrambling of one 32-digit coordinate, returning 53 bits.
///
/// Digit `k < depth` is flipped by a random bit attached to the tree node
/// identified by the `k` preceding input digits. Nodes below `depth` are
/// visited by at most one point, so their flips are i.i.d. and the whole
/// tail is drawn from a single hash of the depth-`depth` node.
fn owen_scramble(x: u32, key: u64, depth: usize) -> u64 {
    let x = x as u64;
    let mut flips = 0u64;
    for k in 0..depth {
        let prefix = x >> (BITS - k);
        let node = (1u64 << k) | prefix;
        flips |= node_bit(key, node) << (BITS - 1 - k);
    }
    let scrambled = x ^ flips;
    let upper = scrambled >> (BITS - depth);
    let tail_node = (1u64 << depth) | (x >> (BITS - depth));
    let tail_bits = 53 - depth;
    let tail = mix64(key ^ mix64(tail_node ^ 0x5bd1_e995_0000_0000)) >> (64 - tail_bits);
    (upper << tail_bits) | tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(ps: &PointSet, j: usize) -> Vec<u64> {
        ps.column(j)
            .into_iter()
            .map(|v| (v * (1u64 << 32) as f64) as u64)
            .collect()
    }

    /// Independent bit-level construction of the first coordinate: the
    /// bit-reversed Gray code of the index.
    fn van_der_corput_gray(i: u32) -> f64 {
        let g = i ^ (i >> 1);
        g.reverse_bits() as f64 / (1u64 << 32) as f64
    }

    #[test]
    fn first_four_points_1d() {
        let ps = sobol_points(4, 1, RandomizationScheme::NONE).unwrap();
        assert_eq!(ps.values(), &[0.0, 0.5, 0.75, 0.25]);
    }

    #[test]
    fn first_coordinate_matches_bit_oracle() {
        let ps = sobol_points(16, 1, RandomizationScheme::NONE).unwrap();
        for i in 0..16 {
            assert_eq!(ps.get(i, 0), van_der_corput_gray(i as u32));
        }
    }

    #[test]
    fn origin_first() {
        let ps = sobol_points(1, 3, RandomizationScheme::NONE).unwrap();
        assert_eq!(ps.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_reference_table_row() {
        // Row 1000 of the unscrambled 32-dimensional sequence, 32-bit
        // integers, taken from an independent Joe–Kuo implementation.
        const ROW_1000: [u64; 32] = [
            943718400, 415236096, 2227175424, 2906652672, 1203765248, 3896508416, 197132288,
            3862953984, 2151677952, 297795584, 364904448, 1094713344, 692060160, 1648361472,
            616562688, 1589641216, 3091202048, 1480589312, 4257218560, 3116367872, 2243952640,
            2361393152, 4081057792, 2319450112, 2503999488, 3896508416, 171966464, 4206886912,
            255852544, 1463812096, 633339904, 624951296,
        ];
        let ps = sobol_points(1001, 32, RandomizationScheme::NONE).unwrap();
        for (j, &want) in ROW_1000.iter().enumerate() {
            assert_eq!(ints(&ps, j)[1000], want, "dimension {j}");
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            sobol_points(4, 33, RandomizationScheme::NONE),
            Err(LowDiscError::DimensionExceedsTable(33))
        );
        assert_eq!(
            sobol_points(0, 2, RandomizationScheme::NONE),
            Err(LowDiscError::ZeroCount)
        );
    }

    #[test]
    fn nesting_unscrambled() {
        for d in [1, 2, 5, 32] {
            let a = sobol_points(100, d, RandomizationScheme::NONE).unwrap();
            let b = sobol_points(200, d, RandomizationScheme::NONE).unwrap();
            assert_eq!(a.values(), &b.values()[..100 * d]);
        }
    }

    #[test]
    fn deterministic_for_every_kind() {
        for kind in [ScrambleKind::None, ScrambleKind::DigitalShift, ScrambleKind::OwenNested] {
            let s = RandomizationScheme::new(kind, 99);
            assert_eq!(sobol_points(300, 4, s), sobol_points(300, 4, s));
        }
    }

    #[test]
    fn owen_one_point_per_elementary_interval() {
        for m in 0..=10u32 {
            let n = 1usize << m;
            for seed in 0..4 {
                let ps = sobol_points(n, 1, RandomizationScheme::owen(seed)).unwrap();
                let mut hit = vec![false; n];
                for v in ps.column(0) {
                    let k = (v * n as f64) as usize;
                    assert!(!hit[k], "m={m} seed={seed} interval {k} hit twice");
                    hit[k] = true;
                }
            }
        }
    }

    #[test]
    fn owen_keeps_two_dimensional_net_strata() {
        // 2^m points in 2-d: every 2^-a x 2^-(m-a) box holds exactly one.
        let m = 8;
        let n = 1usize << m;
        let ps = sobol_points(n, 2, RandomizationScheme::owen(5)).unwrap();
        for a in 0..=m {
            let mut count = vec![0u32; n];
            for r in ps.rows() {
                let i = (r[0] * (1u64 << a) as f64) as usize;
                let j = (r[1] * (1u64 << (m - a)) as f64) as usize;
                count[(i << (m - a)) | j] += 1;
            }
            assert!(count.iter().all(|&c| c == 1), "a={a}");
        }
    }

    #[test]
    fn digital_shift_preserves_xor_structure() {
        let n = 256;
        let plain = sobol_points(n, 3, RandomizationScheme::NONE).unwrap();
        let shifted = sobol_points(n, 3, RandomizationScheme::shift(17)).unwrap();
        for depth in 1..=8u32 {
            let digits = |v: f64| (v * (1u64 << depth) as f64) as u64;
            for j in 0..3 {
                let p = plain.column(j);
                let s = shifted.column(j);
                for a in 0..n {
                    for b in [0, 1, a / 2, n - 1] {
                        assert_eq!(
                            digits(p[a]) ^ digits(p[b]),
                            digits(s[a]) ^ digits(s[b])
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn owen_marginal_mean() {
        // Mean of 2^10 scrambled points; the band is three standard
        // deviations of a mean of i.i.d. uniforms.
        let n = 1 << 10;
        let band = 3.0 * (1.0 / 12.0 / n as f64).sqrt();
        for seed in 0..8 {
            let ps = sobol_points(n, 2, RandomizationScheme::owen(seed)).unwrap();
            for j in 0..2 {
                let mean = ps.column(j).iter().sum::<f64>() / n as f64;
                assert!((mean - 0.5).abs() < band, "seed {seed} coord {j} mean {mean}");
            }
        }
    }

    #[test]
    fn owen_first_point_uniform_across_seeds() {
        // Marginal uniformity under the seed distribution: the first point's
        // coordinate over many seeds behaves like i.i.d. U[0,1).
        let seeds = 4000;
        let mut bins = [0usize; 10];
        let mut sum = 0.0;
        for seed in 0..seeds {
            let v = sobol_points(64, 3, RandomizationScheme::owen(seed)).unwrap().get(0, 2);
            sum += v;
            bins[(v * 10.0) as usize] += 1;
        }
        let mean = sum / seeds as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12.0 / seeds as f64).sqrt());
        let expected = seeds as f64 / 10.0;
        let chi2: f64 = bins
            .iter()
            .map(|&b| (b as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn values_in_unit_interval() {
        for kind in [ScrambleKind::None, ScrambleKind::DigitalShift, ScrambleKind::OwenNested] {
            let ps = sobol_points(777, 7, RandomizationScheme::new(kind, 3)).unwrap();
            assert!(ps.values().iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
}
