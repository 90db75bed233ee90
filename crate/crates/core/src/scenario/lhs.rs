//! Latin hypercube sampling on the unit cube.

use rand::seq::SliceRandom;
use rand::Rng;

/// `n` points in `[0, 1)^dims`; along every dimension each of the `n`
/// equal-width strata holds exactly one point.
pub fn lhs<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[d] = stratum_sample(perm[i], n, rng);
        }
    }
    points
}

/// Uniform draw inside stratum `k` of `n`.
pub fn stratum_sample<R: Rng + ?Sized>(k: usize, n: usize, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    ((k as f64 + u) / n as f64).min(next_below(((k + 1) as f64) / n as f64))
}

/// Index of the stratum of `n` that contains `u`.
pub fn stratum_of(u: f64, n: usize) -> usize {
    ((u * n as f64).floor() as usize).min(n - 1)
}

/// Maps a unit sample onto `[lo, hi)`.
pub fn scale(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

fn next_below(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn one_point_per_stratum(n in 1usize..120, dims in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = lhs(n, dims, &mut rng);
            prop_assert_eq!(pts.len(), n);
            for d in 0..dims {
                let mut seen = vec![false; n];
                for p in &pts {
                    prop_assert!((0.0..1.0).contains(&p[d]));
                    let k = stratum_of(p[d], n);
                    prop_assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
    }

    #[test]
    fn stratum_bounds_are_exclusive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..7 {
            for _ in 0..100 {
                let u = stratum_sample(k, 7, &mut rng);
                assert_eq!(stratum_of(u, 7), k);
            }
        }
    }
}
