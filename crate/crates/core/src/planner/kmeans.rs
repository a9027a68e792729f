//! Spherical k-means: unit-norm rows, unit-norm centroids, distance
//! `1 - cos`. Seeding is k-means++ with `(1 - cos)^2` weights.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::neumaier_sum;
use crate::rng;
use crate::store::EmbeddingMatrix;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Cluster index per input row.
    pub assignments: Vec<usize>,
    /// `k` unit-norm centroid rows.
    pub centroids: Vec<Vec<f64>>,
    /// Sum over rows of `1 - cos(row, assigned centroid)`.
    pub inertia: f64,
    pub iterations_used: usize,
    /// Which restart produced this result.
    pub restart_index: usize,
    /// Inertia after seeding and after every iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
    /// Final inertia of every restart, by restart index.
    pub restart_inertias: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kmeans_spherical(x: &EmbeddingMatrix, params: KMeansParams) -> Result<ClusteringResult> {
    if !x.is_normalized() {
        return Err(Error::NotNormalized);
    }
    let KMeansParams {
        k,
        restarts,
        max_iter,
        seed,
    } = params;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if k > x.rows() {
        return Err(Error::TooFewPoints { k, rows: x.rows() });
    }
    if k > 1 && x.iter_rows().all(|r| r == x.row(0)) {
        return Err(Error::DegenerateInput { k });
    }

    let points: Vec<Vec<f64>> = x.iter_rows().map(unit_f64).collect();
    let runs: Vec<Restart> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(&points, k, max_iter, rng::stream(seed, r as u64)))
        .collect();

    // min inertia, ties to the lowest restart index
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.inertia.total_cmp(&b.inertia))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let restart_inertias = runs.iter().map(|r| r.inertia).collect();
    let win = runs.into_iter().nth(best).expect("index in range");
    Ok(ClusteringResult {
        assignments: win.assignments,
        centroids: win.centroids,
        inertia: win.inertia,
        iterations_used: win.iterations,
        restart_index: best,
        inertia_trace: win.trace,
        restart_inertias,
    })
}

struct Restart {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn run_restart(points: &[Vec<f64>], k: usize, max_iter: usize, mut rng: rng::StreamRng) -> Restart {
    let mut centroids = seed_plus_plus(points, k, &mut rng);
    let (mut assignments, mut inertia) = assign(points, &mut centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    for it in 1..=max_iter {
        update_centroids(points, &assignments, &mut centroids);
        let (next, next_inertia) = assign(points, &mut centroids);
        let unchanged = next == assignments;
        assignments = next;
        inertia = next_inertia;
        trace.push(inertia);
        iterations = it;
        if unchanged {
            break;
        }
    }
    Restart {
        assignments,
        centroids,
        inertia,
        iterations,
        trace,
    }
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut rng::StreamRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| distance(p, &points[first])).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a centroid
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[pick] = true;
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(distance(p, &points[pick]));
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

/// Nearest-centroid assignment (ties to the lower centroid index), then
/// repair of empty clusters. Returns assignments and inertia.
fn assign(points: &[Vec<f64>], centroids: &mut [Vec<f64>]) -> (Vec<usize>, f64) {
    let k = centroids.len();
    let mut assignments = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = distance(p, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        assignments.push(best);
        dists.push(best_d);
    }
    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        // farthest point among clusters that can spare one becomes a singleton
        let donor = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n guarantees a cluster with two members");
        sizes[assignments[donor]] -= 1;
        sizes[c] = 1;
        assignments[donor] = c;
        centroids[c] = points[donor].clone();
        dists[donor] = distance(&points[donor], &centroids[c]);
    }
    (assignments, neumaier_sum(&dists))
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (centroid, sum) in centroids.iter_mut().zip(sums) {
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        // members cancel out: every direction is equally good, keep the old one
        if norm > 1e-12 {
            *centroid = sum.into_iter().map(|v| v / norm).collect();
        }
    }
}

fn unit_f64(r: &[f32]) -> Vec<f64> {
    let v: Vec<f64> = r.iter().map(|&x| f64::from(x)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 - cos` for unit vectors, clamped to `[0, 2]`.
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b).clamp(-1.0, 1.0)
}
