//! Seeded k-means and representative selection.
//!
//! Rows are sorted by pool index before anything else, so the result does
//! not depend on the order the rows arrive in. Initialization is k-means++
//! (D^2 weighting). Lloyd iterations stop when no center moves more than
//! `KMEANS_TOLERANCE` or after `KMEANS_MAX_ITERATIONS`. A cluster that
//! empties during Lloyd iterations is re-seeded at the point farthest from
//! its assigned center. Distance ties go to the lower cluster id, selection
//! ties to the lower pool index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, StrategyError};

pub const KMEANS_MAX_ITERATIONS: usize = 300;
pub const KMEANS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Pool indices in ascending order, aligned with `assignment`.
    pub indices: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centroids.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn sorted_rows(embeddings: &EmbeddingMatrix) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rows: Vec<(usize, &Vec<f64>)> =
        embeddings.row_index_map().iter().copied().zip(embeddings.vectors()).collect();
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter().map(|(i, v)| (i, v.clone())).unzip()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();

    while centroids.len() < k {
        let total: f64 = dist.iter().enumerate().filter(|(i, _)| !chosen[*i]).map(|(_, d)| d).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if chosen[i] || d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total has a positive entry")
        } else {
            // Every remaining point coincides with a center.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[next]));
        }
    }
    centroids
}

pub fn kmeans(embeddings: &EmbeddingMatrix, k: usize, seed: u64) -> Result<KMeansFit, StrategyError> {
    let n = embeddings.len();
    if k == 0 {
        return Err(StrategyError::Validation("k must be at least 1".into()));
    }
    if k > n {
        return Err(StrategyError::Size { requested: k, available: n });
    }
    let (indices, points) = sorted_rows(embeddings);
    let dim = embeddings.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);
    let mut assignment = vec![0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        let mut distances = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_center(p, &centroids);
            assignment[i] = c;
            distances[i] = d;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut updated = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                updated[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let mut far = 0;
                for i in 1..n {
                    if distances[i] > distances[far] {
                        far = i;
                    }
                }
                updated[c] = points[far].clone();
                distances[far] = 0.0;
            }
        }
        let shift = centroids.iter().zip(&updated).map(|(a, b)| squared_distance(a, b).sqrt()).fold(0.0, f64::max);
        centroids = updated;
        if shift <= KMEANS_TOLERANCE {
            converged = true;
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest_center(p, &centroids).0;
    }
    Ok(KMeansFit { centroids, indices, points, assignment, iterations, converged })
}

impl KMeansFit {
    /// Per cluster, the member nearest its centroid. A cluster left empty
    /// by the final assignment takes the nearest point not already chosen.
    pub fn representatives(&self) -> Vec<usize> {
        let k = self.centroids.len();
        let mut chosen: Vec<Option<usize>> = vec![None; k];
        let mut best = vec![f64::INFINITY; k];
        for (row, &c) in self.assignment.iter().enumerate() {
            let d = squared_distance(&self.points[row], &self.centroids[c]);
            if d < best[c] {
                best[c] = d;
                chosen[c] = Some(row);
            }
        }
        let mut taken: Vec<bool> = vec![false; self.points.len()];
        for row in chosen.iter().flatten() {
            taken[*row] = true;
        }
        for (c, slot) in chosen.iter_mut().enumerate() {
            if slot.is_none() {
                let mut pick: Option<(usize, f64)> = None;
                for (row, p) in self.points.iter().enumerate() {
                    if taken[row] {
                        continue;
                    }
                    let d = squared_distance(p, &self.centroids[c]);
                    if pick.is_none_or(|(_, bd)| d < bd) {
                        pick = Some((row, d));
                    }
                }
                let (row, _) = pick.expect("k never exceeds the point count");
                taken[row] = true;
                *slot = Some(row);
            }
        }
        chosen.into_iter().map(|row| self.indices[row.expect("filled above")]).collect()
    }
}

/// `k` representative pool indices, one per cluster, ordered by cluster id.
pub fn select_kmeans(embeddings: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Vec<usize>, StrategyError> {
    Ok(kmeans(embeddings, k, seed)?.representatives())
}
