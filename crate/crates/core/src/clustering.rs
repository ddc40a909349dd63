//! Seeded k-means (k-means++ initialisation, Lloyd iterations).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each vector to its centroid.
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// `max(2, round(sqrt(n)))`, capped at `n`.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(2).min(n)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn assign(model: &ClusterModel, vector: &[f64]) -> Result<usize, ClusterError> {
    let dim = model.centroids[0].len();
    if vector.len() != dim {
        return Err(ClusterError::DimensionMismatch {
            index: 0,
            expected: dim,
            got: vector.len(),
        });
    }
    Ok(nearest(&model.centroids, vector).0)
}

pub fn kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel, ClusterError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidArgument(format!(
            "k = {k} outside 1..={n}"
        )));
    }
    let dim = vectors[0].len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(ClusterError::DimensionMismatch {
                index,
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::InvalidArgument(format!(
                "vector {index} is not finite"
            )));
        }
    }
    let distinct: HashSet<Vec<u64>> = vectors
        .iter()
        .map(|v| v.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    if distinct.len() < k {
        return Err(ClusterError::InvalidArgument(format!(
            "k = {k} exceeds the {} distinct vectors",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(vectors, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut inertia = settle(vectors, &mut centroids, &mut assignments);
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq(&mean, &centroids[j]).sqrt());
            centroids[j] = mean;
        }
        let next = settle(vectors, &mut centroids, &mut assignments);
        assert!(
            next <= inertia + 1e-9 * (1.0 + inertia),
            "k-means inertia increased from {inertia} to {next}"
        );
        inertia = next;
        if shift < tol {
            break;
        }
    }
    log::debug!("kmeans k={k} n={n}: {iterations} iterations, inertia {inertia}");
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        seed,
        iterations,
    })
}

fn plus_plus(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if w > 0.0 && acc > r {
                pick = Some(i);
                break;
            }
        }
        // Rounding can leave `r` past the last positive weight.
        let pick = pick
            .or_else(|| d2.iter().rposition(|&w| w > 0.0))
            .expect("enough distinct vectors");
        let c = vectors[pick].clone();
        for (w, v) in d2.iter_mut().zip(vectors) {
            *w = w.min(sq(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns every vector to its nearest centroid, repairing empty clusters by
/// moving in the vector farthest from its centroid. Returns the inertia.
fn settle(vectors: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) -> f64 {
    let k = centroids.len();
    loop {
        let mut dist = vec![0.0; vectors.len()];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            let (j, d) = nearest(centroids, v);
            assignments[i] = j;
            dist[i] = d;
            counts[j] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return dist.iter().sum();
        };
        let mut far = None;
        for (i, &d) in dist.iter().enumerate() {
            if counts[assignments[i]] > 1 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("a cluster with more than one member");
        centroids[empty] = vectors[i].clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ]
    }

    #[test]
    fn single_cluster_is_mean() {
        let m = kmeans(&blobs(), 1, 0, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert_eq!(m.centroids, vec![vec![5.0, 0.5]]);
        assert_eq!(m.assignments, vec![0; 4]);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let m = kmeans(&blobs(), 4, 3, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut a = m.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn two_blobs() {
        for seed in 0..10 {
            let m = kmeans(&blobs(), 2, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
            assert_eq!(m.assignments[0], m.assignments[1]);
            assert_eq!(m.assignments[2], m.assignments[3]);
            assert_ne!(m.assignments[0], m.assignments[2]);
            assert!((m.inertia - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn assign_ties_go_low() {
        let m = ClusterModel {
            k: 3,
            centroids: vec![vec![0.0], vec![5.0], vec![2.0]],
            assignments: vec![],
            inertia: 0.0,
            seed: 0,
            iterations: 0,
        };
        assert_eq!(assign(&m, &[5.0]).unwrap(), 1);
        assert_eq!(assign(&m, &[1.0]).unwrap(), 0);
        assert!(assign(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn duplicates_force_repair() {
        let vs = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0], vec![2.0]];
        let m = kmeans(&vs, 3, 1, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        for c in 0..3 {
            assert!(m.members(c).count() > 0);
        }
        assert!(kmeans(&vs, 4, 1, DEFAULT_MAX_ITERS, DEFAULT_TOL).is_err());
    }

    #[test]
    fn invalid_arguments() {
        assert!(kmeans(&blobs(), 0, 0, 10, 1e-6).is_err());
        assert!(kmeans(&blobs(), 5, 0, 10, 1e-6).is_err());
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert!(matches!(
            kmeans(&ragged, 1, 0, 10, 1e-6),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn default_k_heuristic() {
        assert_eq!(default_k(4), 2);
        assert_eq!(default_k(2), 2);
        assert_eq!(default_k(30), 5);
        assert_eq!(default_k(1), 1);
    }
}
