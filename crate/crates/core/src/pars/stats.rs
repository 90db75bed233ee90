//! Streaming per-feature mean and variance.

use serde::{Deserialize, Serialize};

/// Welford accumulator with Chan's parallel merge. Counts are kept per
/// feature so statistics from different sources can be placed side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: Vec<u64>,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: vec![0; dim],
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for k in 0..self.dim() {
            self.count[k] += 1;
            let d = x[k] - self.mean[k];
            self.mean[k] += d / self.count[k] as f64;
            self.m2[k] += d * (x[k] - self.mean[k]);
        }
    }

    pub fn merge(&mut self, other: &RunningStats) {
        for k in 0..self.dim() {
            self.merge_feature(k, other, k);
        }
    }

    /// Merges feature `from` of `other` into feature `k` of `self`.
    pub fn merge_feature(&mut self, k: usize, other: &RunningStats, from: usize) {
        let nb = other.count[from];
        if nb == 0 {
            return;
        }
        let na = self.count[k];
        if na == 0 {
            self.count[k] = nb;
            self.mean[k] = other.mean[from];
            self.m2[k] = other.m2[from];
            return;
        }
        let (fa, fb) = (na as f64, nb as f64);
        let n = fa + fb;
        let d = other.mean[from] - self.mean[k];
        self.mean[k] += d * fb / n;
        self.m2[k] += other.m2[from] + d * d * fa * fb / n;
        self.count[k] = na + nb;
    }

    /// Population variance; one for a feature with no samples so that a
    /// fresh accumulator normalizes as the identity.
    pub fn variance(&self) -> Vec<f64> {
        self.m2
            .iter()
            .zip(&self.count)
            .map(|(s, &n)| if n == 0 { 1.0 } else { (s / n as f64).max(0.0) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        let mean: Vec<f64> = (0..dim).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let var = (0..dim)
            .map(|k| rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n)
            .collect();
        (mean, var)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn merge_matches_batch(
            rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3), 2..60),
            cut in 0usize..60,
        ) {
            let cut = cut.min(rows.len());
            let mut a = RunningStats::new(3);
            let mut b = RunningStats::new(3);
            for r in &rows[..cut] {
                a.push(r);
            }
            for r in &rows[cut..] {
                b.push(r);
            }
            a.merge(&b);
            let (mean, var) = batch(&rows);
            prop_assert!(a.count.iter().all(|&n| n as usize == rows.len()));
            let v = a.variance();
            for k in 0..3 {
                prop_assert!(close(a.mean[k], mean[k]));
                prop_assert!(close(v[k], var[k]));
                prop_assert!(v[k] >= 0.0);
            }
        }
    }

    #[test]
    fn empty_is_identity() {
        let s = RunningStats::new(2);
        assert_eq!(s.variance(), vec![1.0, 1.0]);
        let mut t = RunningStats::new(2);
        t.push(&[1.0, 2.0]);
        let before = t.clone();
        t.merge(&s);
        assert_eq!(t, before);
    }
}
