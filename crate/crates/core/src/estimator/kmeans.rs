use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lloyd iteration cap.
pub const MAX_LLOYD_ITERATIONS: usize = 100;
/// Independent k-means++ initialisations tried per call.
pub const DEFAULT_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Clusters left empty because every point coincides with its centroid.
    pub empty_clusters: usize,
    /// Number of reseed events during Lloyd iterations.
    pub reseeds: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centroids until assignments stop changing.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>) -> KMeansResult {
    let m = init.len();
    let dim = init.first().map_or(0, Vec::len);
    let mut centroids = init;
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut reseeds = 0;
    let mut iterations = 0;
    let mut empty_clusters = 0;
    for it in 0..MAX_LLOYD_ITERATIONS {
        iterations = it + 1;
        let next: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut new_assign: Vec<usize> = next.iter().map(|x| x.0).collect();
        let mut dist: Vec<f64> = next.iter().map(|x| x.1).collect();

        let mut sizes = vec![0usize; m];
        for &a in &new_assign {
            sizes[a] += 1;
        }
        empty_clusters = 0;
        for c in 0..m {
            if sizes[c] > 0 {
                continue;
            }
            // farthest point from its centroid, taken from a cluster that can spare it
            let mut far: Option<(usize, f64)> = None;
            for (i, &d) in dist.iter().enumerate() {
                if sizes[new_assign[i]] > 1 && d > 0.0 && far.is_none_or(|(_, fd)| d > fd) {
                    far = Some((i, d));
                }
            }
            match far {
                Some((i, _)) => {
                    sizes[new_assign[i]] -= 1;
                    new_assign[i] = c;
                    sizes[c] = 1;
                    dist[i] = 0.0;
                    centroids[c] = points[i].clone();
                    reseeds += 1;
                }
                None => empty_clusters += 1,
            }
        }

        let changed = new_assign != assignments;
        assignments = new_assign;
        // centroid update in point order
        let mut sums = vec![vec![0.0; dim]; m];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..m {
            if sizes[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        inertia,
        iterations,
        empty_clusters,
        reseeds,
    }
}

/// k-means with k-means++ seeding; the best of `restarts` runs (and of the
/// optional warm-start centroids) by inertia is returned.
pub fn kmeans_with(
    points: &[Vec<f64>],
    m: usize,
    seed: u64,
    restarts: usize,
    warm_start: Option<&[Vec<f64>]>,
) -> Result<KMeansResult> {
    if m == 0 {
        return Err(Error::Precondition("number of clusters must be at least 1".into()));
    }
    if m > points.len() {
        return Err(Error::Precondition(format!(
            "{m} clusters requested for {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    let mut consider = |r: KMeansResult| {
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    };
    if let Some(w) = warm_start {
        if w.len() == m {
            consider(lloyd(points, w.to_vec()));
        }
    }
    for _ in 0..restarts.max(1) {
        let init = plus_plus_init(points, m, &mut rng);
        consider(lloyd(points, init));
    }
    Ok(best.expect("at least one run"))
}

/// k-means clustering of `points` into `m` groups, deterministic in `seed`.
pub fn kmeans_cluster(points: &[Vec<f64>], m: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(points, m, seed, DEFAULT_RESTARTS, None)
}

/// Permutation `perm` minimising `Σ_m ‖centroids[perm[m]] − targets[m]‖²`,
/// exhaustive for small `m`, greedy otherwise.
pub fn align_labels(centroids: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<usize> {
    let m = centroids.len();
    let cost = |perm: &[usize]| -> f64 { (0..m).map(|i| sq_dist(&centroids[perm[i]], &targets[i])).sum() };
    if m <= 7 {
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best = perm.clone();
        let mut best_cost = cost(&perm);
        // Heap's algorithm
        let mut c = vec![0usize; m];
        let mut i = 0;
        while i < m {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                let k = cost(&perm);
                if k < best_cost {
                    best_cost = k;
                    best = perm.clone();
                }
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        return best;
    }
    let mut used = vec![false; m];
    let mut perm = vec![0; m];
    for (t, target) in targets.iter().enumerate() {
        let mut pick = (usize::MAX, f64::INFINITY);
        for (c, cent) in centroids.iter().enumerate() {
            let d = sq_dist(cent, target);
            if !used[c] && d < pick.1 {
                pick = (c, d);
            }
        }
        used[pick.0] = true;
        perm[t] = pick.0;
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_cluster_centroid_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let r = kmeans_cluster(&pts, 1, 3).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 0]);
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-15);
        assert!((r.centroids[0][1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn separated_blobs_are_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        for i in 0..100 {
            let cx = if i % 2 == 0 { 0.0 } else { 100.0 };
            pts.push(vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)]);
        }
        let r = kmeans_cluster(&pts, 2, 11).unwrap();
        for i in 0..100 {
            assert_eq!(r.assignments[i], r.assignments[i % 2]);
        }
        assert_ne!(r.assignments[0], r.assignments[1]);
    }

    #[test]
    fn identical_points_leave_a_cluster_empty() {
        let pts = vec![vec![2.0, 2.0]; 6];
        let r = kmeans_cluster(&pts, 2, 1).unwrap();
        assert_eq!(r.empty_clusters, 1);
        let sizes = r.cluster_sizes();
        assert_eq!(sizes.iter().filter(|&&s| s > 0).count(), 1);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn empty_cluster_is_reseeded_from_farthest_point() {
        // both initial centroids at the left blob: the second starts empty
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.2]];
        let r = lloyd(&pts, vec![vec![0.0], vec![-50.0]]);
        assert!(r.reseeds >= 1);
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
    }

    #[test]
    fn too_many_clusters() {
        assert!(kmeans_cluster(&[vec![1.0]], 2, 0).is_err());
        assert!(kmeans_cluster(&[vec![1.0]], 0, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random()]).collect();
        assert_eq!(kmeans_cluster(&pts, 3, 4).unwrap(), kmeans_cluster(&pts, 3, 4).unwrap());
    }

    #[test]
    fn alignment_recovers_permutation() {
        let targets = vec![vec![0.0], vec![10.0], vec![20.0], vec![30.0]];
        let cents = vec![vec![29.0], vec![1.0], vec![21.0], vec![9.0]];
        assert_eq!(align_labels(&cents, &targets), vec![1, 3, 2, 0]);
        let big_t: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 * 10.0]).collect();
        let big_c: Vec<Vec<f64>> = (0..9).rev().map(|i| vec![i as f64 * 10.0 + 0.5]).collect();
        assert_eq!(align_labels(&big_c, &big_t), (0..9).rev().collect::<Vec<_>>());
    }
}
