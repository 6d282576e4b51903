//! Deterministic one-dimensional K-means (k-means++ seeding, Lloyd updates)
//! and the codebook initialization built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gmm::{GmmCodebook, SIGMA_FLOOR};
use crate::{Error, Result};

pub const MAX_LLOYD_ITERS: usize = 100;

/// Result of clustering: one label per input value.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Clustering {
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.centroids.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = (x - centroids[0]).abs();
    for (j, &c) in centroids.iter().enumerate().skip(1) {
        let d = (x - c).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Clusters `values` into at most `k` groups. The group count drops to the
/// number of distinct values when there are fewer than `k`.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if values.len() < k {
        return Err(Error::Input(format!("{} values cannot form {k} groups", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("values must be finite".into()));
    }
    let k = k.min(distinct_count(values));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.random_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|&x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        // there is always a value at positive distance while centroids < distinct
        let c = values[pick.expect("a value distinct from all centroids")];
        centroids.push(c);
        for (d, &x) in d2.iter_mut().zip(values) {
            *d = d.min((x - c).powi(2));
        }
    }

    let mut labels: Vec<usize> = values.iter().map(|&x| nearest(&centroids, x)).collect();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in values.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            } else {
                // reseed an empty group at the worst-served value
                let (far, _) = values
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| (i, (x - centroids[labels[i]]).abs()))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                centroids[j] = values[far];
            }
        }
        let next: Vec<usize> = values.iter().map(|&x| nearest(&centroids, x)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }

    // drop groups that ended up empty
    let counts = Clustering { centroids: centroids.clone(), labels: labels.clone() }.counts();
    if counts.contains(&0) {
        let mut remap = vec![usize::MAX; k];
        let mut kept = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                remap[j] = kept.len();
                kept.push(centroids[j]);
            }
        }
        for l in &mut labels {
            *l = remap[*l];
        }
        centroids = kept;
    }
    Ok(Clustering { centroids, labels })
}

/// Codebook initialized from K-means groups: group means, sample standard
/// deviations (floored for degenerate groups) and group proportions.
pub fn kmeans_init(values: &[f64], k: usize, tau: f64, seed: u64) -> Result<GmmCodebook> {
    let clustering = kmeans_1d(values, k, seed)?;
    codebook_from_groups(values, &clustering, tau)
}

pub fn codebook_from_groups(values: &[f64], c: &Clustering, tau: f64) -> Result<GmmCodebook> {
    let k = c.centroids.len();
    let counts = c.counts();
    let mut sums = vec![0.0; k];
    for (&x, &l) in values.iter().zip(&c.labels) {
        sums[l] += x;
    }
    let mu: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let mut ss = vec![0.0; k];
    for (&x, &l) in values.iter().zip(&c.labels) {
        ss[l] += (x - mu[l]).powi(2);
    }
    let sigma = ss
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            let sd = if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 };
            if sd > 0.0 {
                sd
            } else {
                SIGMA_FLOOR
            }
        })
        .collect();
    let m = values.len() as f64;
    let pi = counts.iter().map(|&n| n as f64 / m).collect();
    GmmCodebook::new(mu, sigma, pi, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_group_uses_whole_set() {
        let cb = kmeans_init(&[1.0, 2.0, 3.0], 1, 1.0, 0).unwrap();
        assert_eq!(cb.mu, vec![2.0]);
        assert_eq!(cb.sigma, vec![1.0]);
        assert_eq!(cb.pi, vec![1.0]);
    }

    #[test]
    fn zero_variance_groups_are_floored() {
        let cb = kmeans_init(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0], 2, 1.0, 7).unwrap();
        let mut mu = cb.mu.clone();
        mu.sort_by(f64::total_cmp);
        assert_eq!(mu, vec![0.0, 10.0]);
        assert_eq!(cb.sigma, vec![SIGMA_FLOOR, SIGMA_FLOOR]);
        assert_eq!(cb.pi, vec![0.5, 0.5]);
    }

    #[test]
    fn two_pairs_split_cleanly() {
        for seed in 0..20 {
            let cb = kmeans_init(&[0.0, 1.0, 10.0, 11.0], 2, 1.0, seed).unwrap();
            let mut pairs: Vec<(f64, f64)> = cb.mu.iter().copied().zip(cb.sigma.iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(pairs[0].0, 0.5);
            assert_eq!(pairs[1].0, 10.5);
            assert!((pairs[0].1 - 0.5f64.sqrt()).abs() < 1e-15);
            assert!((pairs[1].1 - 0.5f64.sqrt()).abs() < 1e-15);
            assert_eq!(cb.pi, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(kmeans_init(&[1.0], 2, 1.0, 0), Err(Error::Input(_))));
    }

    #[test]
    fn fewer_distinct_values_than_k() {
        let c = kmeans_1d(&[1.0, 1.0, 2.0, 2.0, 2.0], 4, 0).unwrap();
        assert_eq!(c.centroids.len(), 2);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let vals: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1013) as f64 / 97.0).collect();
        assert_eq!(kmeans_1d(&vals, 8, 42).unwrap(), kmeans_1d(&vals, 8, 42).unwrap());
    }
}
