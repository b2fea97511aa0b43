//! k-means with k-means++ seeding over sparse feature vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureVector;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Result of a k-means fit. `assignment[i]` is the cluster of input `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub m: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Nearest centroid, lowest index on ties.
    pub fn assign(&self, v: &FeatureVector) -> Result<usize> {
        let dim = self.centroids.first().map_or(0, Vec::len);
        if v.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: v.dim(),
            });
        }
        let norms: Vec<f64> = self.centroids.iter().map(|c| sq_norm(c)).collect();
        Ok(nearest(v, &self.centroids, &norms).0)
    }

    /// Maps ids (in input order) to cluster indices.
    pub fn by_id<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
        ids.into_iter()
            .zip(&self.assignment)
            .map(|(id, &c)| (id.to_string(), c))
            .collect()
    }
}

pub fn assign(c: &Clustering, v: &FeatureVector) -> Result<usize> {
    c.assign(v)
}

fn sq_norm(c: &[f64]) -> f64 {
    c.iter().map(|x| x * x).sum()
}

fn nearest(v: &FeatureVector, centroids: &[Vec<f64>], norms: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, (c, &n)) in centroids.iter().zip(norms).enumerate() {
        let d = v.squared_distance_dense(c, n);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's algorithm seeded with k-means++.
///
/// Stops when the largest centroid displacement drops below `tol` or after
/// `max_iter` iterations. A cluster that goes empty takes over the point
/// farthest from its own centroid, so the result always has `m` non-empty
/// clusters.
pub fn kmeans_fit(vectors: &[FeatureVector], m: usize, seed: u64, max_iter: usize, tol: f64) -> Result<Clustering> {
    if m == 0 {
        return Err(Error::invalid("cluster count must be positive"));
    }
    if vectors.len() < m {
        return Err(Error::invalid(format!(
            "cannot form {m} clusters from {} vectors",
            vectors.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: v.dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, m, &mut rng);
    let n = vectors.len();
    let mut assignment = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let norms: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
        let mut dists = vec![0.0; n];
        for (i, v) in vectors.iter().enumerate() {
            let (k, d) = nearest(v, &centroids, &norms);
            assignment[i] = k;
            dists[i] = d;
        }
        repair_empty(&mut assignment, &mut dists, m);

        let mut next = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (v, &k) in vectors.iter().zip(&assignment) {
            counts[k] += 1;
            for (j, x) in v.iter() {
                next[k][j] += x;
            }
        }
        for (c, &cnt) in next.iter_mut().zip(&counts) {
            let inv = 1.0 / cnt as f64;
            c.iter_mut().for_each(|x| *x *= inv);
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        trace.push(inertia_of(vectors, &centroids, &assignment));
        if shift < tol {
            break;
        }
    }

    Ok(Clustering {
        m,
        seed,
        inertia: *trace.last().unwrap(),
        inertia_trace: trace,
        centroids,
        assignment,
        iterations,
    })
}

fn inertia_of(vectors: &[FeatureVector], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    vectors
        .iter()
        .zip(assignment)
        .map(|(v, &k)| v.squared_distance_dense(&centroids[k], sq_norm(&centroids[k])))
        .sum()
}

fn plus_plus_init(vectors: &[FeatureVector], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![vectors[first].to_dense()];
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| v.squared_distance_dense(&centroids[0], sq_norm(&centroids[0])))
        .collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !chosen[*i]).map(|(_, d)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if chosen[i] || d == 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // Rounding can walk past the last candidate.
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && d2[i] > 0.0).unwrap())
        } else {
            let remaining: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        chosen[pick] = true;
        let c = vectors[pick].to_dense();
        let cn = sq_norm(&c);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(v.squared_distance_dense(&c, cn));
        }
        centroids.push(c);
    }
    centroids
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(assignment: &mut [usize], dists: &mut [f64], m: usize) {
    let mut counts = vec![0usize; m];
    for &k in assignment.iter() {
        counts[k] += 1;
    }
    for empty in 0..m {
        if counts[empty] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            if best.is_none_or(|b| dists[i] > dists[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("n >= m guarantees a donor cluster");
        counts[assignment[i]] -= 1;
        assignment[i] = empty;
        counts[empty] = 1;
        dists[i] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts1(xs: &[f64]) -> Vec<FeatureVector> {
        xs.iter().map(|&x| FeatureVector::from_pairs(1, [(0, x)]).unwrap()).collect()
    }

    /// Best 2-partition of a 1-D point set by exhaustive enumeration.
    fn best_two_partition(xs: &[f64]) -> (Vec<bool>, f64) {
        let n = xs.len();
        let mut best = (vec![], f64::INFINITY);
        for mask in 1..(1u32 << n) - 1 {
            let side: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let cost: f64 = [true, false]
                .iter()
                .map(|&s| {
                    let group: Vec<f64> = xs.iter().zip(&side).filter(|(_, &b)| b == s).map(|(x, _)| *x).collect();
                    let mean = group.iter().sum::<f64>() / group.len() as f64;
                    group.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                })
                .sum();
            if cost < best.1 {
                best = (side, cost);
            }
        }
        best
    }

    #[test]
    fn one_dimensional_two_clusters() {
        let xs = [0.0, 0.1, 10.0, 10.1];
        let (side, cost) = best_two_partition(&xs);
        let c = kmeans_fit(&pts1(&xs), 2, 3, 100, 1e-9).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.assignment[i] == c.assignment[j], side[i] == side[j]);
            }
        }
        assert_abs_diff_eq!(c.inertia, cost, epsilon = 1e-12);
        let mut cents: Vec<f64> = c.centroids.iter().map(|v| v[0]).collect();
        cents.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(cents[0], 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(cents[1], 10.05, epsilon = 1e-12);
    }

    #[test]
    fn m_equals_n_and_m_one() {
        let xs = [1.0, 4.0, 9.0, 2.5];
        let c = kmeans_fit(&pts1(&xs), 4, 0, 100, 1e-9).unwrap();
        assert_abs_diff_eq!(c.inertia, 0.0, epsilon = 1e-12);
        assert_eq!(c.sizes(), vec![1; 4]);
        let c = kmeans_fit(&pts1(&xs), 1, 0, 100, 1e-9).unwrap();
        assert_abs_diff_eq!(c.centroids[0][0], 4.125, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert!(kmeans_fit(&pts1(&[1.0]), 2, 0, 10, 1e-6).is_err());
        assert!(kmeans_fit(&pts1(&[1.0]), 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn duplicates_still_yield_m_clusters() {
        let c = kmeans_fit(&pts1(&[1.0, 1.0, 1.0, 5.0]), 3, 11, 50, 1e-9).unwrap();
        assert!(c.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn assign_rules() {
        let c = Clustering {
            m: 5,
            seed: 0,
            centroids: vec![vec![9.0, 9.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![0.3, 0.7], vec![-1.0, 0.0]],
            assignment: vec![],
            inertia: 0.0,
            inertia_trace: vec![],
            iterations: 0,
        };
        assert_eq!(c.assign(&FeatureVector::from_dense(&[0.3, 0.7]).unwrap()).unwrap(), 3);
        // (0, 0) is equidistant from centroids 1 and 4 (distance 1); 3 is closer.
        let far = Clustering {
            centroids: vec![vec![9.0, 9.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![3.0, 3.0], vec![-1.0, 0.0]],
            ..c.clone()
        };
        assert_eq!(far.assign(&FeatureVector::zeros(2)).unwrap(), 1);
        assert!(c.assign(&FeatureVector::zeros(3)).is_err());
    }
}
