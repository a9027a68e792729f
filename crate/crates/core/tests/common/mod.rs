//! Fixture builders and independent reference implementations shared by the
//! integration tests. The oracles follow the definitions literally and avoid
//! the library's own helpers.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stylekit::filter::GrayImage;
use stylekit::store::{EmbeddingMatrix, ImageSet, TokenVocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, h: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..h).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
        .collect()
}

/// Rows normalized in f32, so they satisfy the stored norm tolerance.
pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, h: usize) -> Vec<Vec<f32>> {
    gaussian_rows(rng, n, h)
        .into_iter()
        .map(|r| {
            let norm = r.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt() as f32;
            r.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

pub fn matrix(rows: &[Vec<f32>], normalized: bool) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows, normalized).unwrap()
}

pub fn rows_f64(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

pub fn naive_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Mean over all pairs of `max(cos, 0)`.
pub fn naive_fidelity(gen: &EmbeddingMatrix, refs: &EmbeddingMatrix) -> f64 {
    let (g, d) = (rows_f64(gen), rows_f64(refs));
    let mut total = 0.0;
    for v in &g {
        for r in &d {
            let c = naive_cos(v, r);
            total += if c > 0.0 { c } else { 0.0 };
        }
    }
    total / (g.len() * d.len()) as f64
}

/// Geometric mean of population standard deviations, as a direct product.
pub fn naive_diversity(gen: &EmbeddingMatrix) -> f64 {
    let g = rows_f64(gen);
    let n = g.len() as f64;
    let h = g[0].len();
    let mut product = 1.0;
    for c in 0..h {
        let mean = g.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = g.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        product *= var.sqrt();
    }
    product.powf(1.0 / h as f64)
}

pub fn token_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("tok{i:03}")).collect()
}

/// `n` tokens in rank order with unit-norm Gaussian embeddings.
pub fn vocab(n: usize, h: usize, seed: u64) -> TokenVocabulary {
    let mut r = rng(seed);
    let rows = unit_rows(&mut r, n, h);
    TokenVocabulary::from_ranked(token_names(n), matrix(&rows, true)).unwrap()
}

/// Spherical k-means objective of a labeling, `Σ_c (|C| − ‖Σ_{x∈C} x̂‖)`,
/// with rows rescaled to unit norm first.
pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let points: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.iter().map(|v| v / n).collect()
        })
        .collect();
    let mut total = 0.0;
    for c in 0..k {
        let mut sum = vec![0.0; dim];
        let mut size = 0.0;
        for (p, &l) in points.iter().zip(labels) {
            if l == c {
                size += 1.0;
                for (s, v) in sum.iter_mut().zip(p) {
                    *s += v;
                }
            }
        }
        total += size - sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    total
}

/// Best 2-partition by exhaustive enumeration (both parts non-empty).
/// Labels are normalized so point 0 is in part 0.
pub fn brute_force_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u64..(1 << (n - 1)) {
        // point 0 always in part 0; the remaining n-1 bits choose the rest
        let labels: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        if labels.iter().all(|&l| l == 0) {
            continue;
        }
        let inertia = partition_inertia(points, &labels, 2);
        if inertia < best.0 {
            best = (inertia, labels);
        }
    }
    best
}

pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Bradley-Terry log-likelihood in log-strength coordinates.
pub fn bt_loglik(wins: &[Vec<f64>], theta: &[f64]) -> f64 {
    let k = wins.len();
    let mut ll = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j && wins[i][j] > 0.0 {
                let p = 1.0 / (1.0 + (theta[j] - theta[i]).exp());
                ll += wins[i][j] * p.ln();
            }
        }
    }
    ll
}

fn grid_point(k: usize, free: &[f64]) -> Vec<f64> {
    // log-strengths summing to zero
    let mut t = free.to_vec();
    t.push(-free.iter().sum::<f64>());
    debug_assert_eq!(t.len(), k);
    t
}

/// Maximizes the likelihood over a grid of zero-sum log-strengths in
/// `[-4, 4]`: a 0.05 sweep, then a 1e-3 sweep around the best point.
pub fn bt_grid_search(wins: &[Vec<f64>]) -> Vec<f64> {
    let k = wins.len();
    assert!((2..=3).contains(&k));
    let sweep = |center: &[f64], half: f64, step: f64| -> Vec<f64> {
        let steps = (2.0 * half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, center.to_vec());
        let axis = |c: f64, s: i64| c - half + s as f64 * step;
        if k == 2 {
            for a in 0..=steps {
                let free = [axis(center[0], a)];
                let ll = bt_loglik(wins, &grid_point(k, &free));
                if ll > best.0 {
                    best = (ll, free.to_vec());
                }
            }
        } else {
            for a in 0..=steps {
                for b in 0..=steps {
                    let free = [axis(center[0], a), axis(center[1], b)];
                    let ll = bt_loglik(wins, &grid_point(k, &free));
                    if ll > best.0 {
                        best = (ll, free.to_vec());
                    }
                }
            }
        }
        best.1
    };
    let coarse = sweep(&vec![0.0; k - 1], 4.0, 0.05);
    let fine = sweep(&coarse, 0.06, 1e-3);
    grid_point(k, &fine)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn noise_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<u8>()).collect()).unwrap()
}

/// Smooth gradient plus a per-image pattern; distinct seeds give images
/// with low mutual SSIM.
pub fn pattern_image(seed: u64, w: usize, h: usize) -> GrayImage {
    let mut r = rng(seed);
    let fx: f64 = r.random_range(0.2..1.2);
    let fy: f64 = r.random_range(0.2..1.2);
    let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let pixels = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let v = 127.5 + 120.0 * (fx * x as f64 + fy * y as f64 + phase).sin();
            v.round() as u8
        })
        .collect();
    GrayImage::new(w, h, pixels).unwrap()
}

/// Writes PNGs named `<id>.png` into `dir` and returns their paths.
pub fn write_pngs(dir: &Path, ids: &[String], images: &[GrayImage]) -> Vec<PathBuf> {
    ids.iter()
        .zip(images)
        .map(|(id, img)| {
            let p = dir.join(format!("{id}.png"));
            img.save_png(&p).unwrap();
            p
        })
        .collect()
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:04}")).collect()
}

pub fn image_set(ids: Vec<String>, clip: Vec<Vec<f32>>, style: Vec<Vec<f32>>, pixels: Option<Vec<PathBuf>>) -> ImageSet {
    ImageSet::new(ids, Some(matrix(&clip, true)), Some(matrix(&style, true)), pixels).unwrap()
}

/// Unit vector along axis `i` of an `h`-dimensional space.
pub fn axis(h: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; h];
    v[i] = 1.0;
    v
}

/// Unit vector `cos(t)·e_a + sin(t)·e_b`.
pub fn rotated(h: usize, a: usize, b: usize, t: f64) -> Vec<f32> {
    let mut v = vec![0.0; h];
    v[a] = t.cos() as f32;
    v[b] = t.sin() as f32;
    v
}
