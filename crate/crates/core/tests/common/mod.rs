//! Reference computations written as plain loops, independent of the
//! library's matrix code.

#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shadowvlad::encoding::ClusterModel;
use shadowvlad::features::LocalFeatureSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_set(rng: &mut ChaCha8Rng, id: &str, h: usize, w: usize, d: usize) -> LocalFeatureSet {
    let x = Array2::from_shape_fn((h * w, d), |_| gaussian(rng));
    LocalFeatureSet::new(id, h, w, x, None).unwrap()
}

/// Model built from random centroids, then perturbed so the affine
/// parameters no longer mirror the centroids exactly.
pub fn random_model(rng: &mut ChaCha8Rng, k: usize, s: usize, d: usize, scale: f64, perturb: f64) -> ClusterModel {
    let reps = Array2::from_shape_fn((k, d), |_| gaussian(rng));
    let shadows = Array3::from_shape_fn((k, s, d), |_| gaussian(rng));
    let mut m = ClusterModel::from_centroids(reps, shadows, scale).unwrap();
    if perturb > 0.0 {
        m.weights_mut().iter_mut().for_each(|v| *v += perturb * gaussian(rng));
        m.biases_mut().iter_mut().for_each(|v| *v += perturb * gaussian(rng));
        m.residual_centroids_mut().iter_mut().for_each(|v| *v += perturb * gaussian(rng));
    }
    m
}

pub fn l2_rows(fs: &LocalFeatureSet) -> Vec<Vec<f64>> {
    let x = fs.features();
    (0..x.nrows())
        .map(|i| {
            let n = (0..x.ncols()).map(|j| x[(i, j)] * x[(i, j)]).sum::<f64>().sqrt();
            (0..x.ncols()).map(|j| x[(i, j)] / n).collect()
        })
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// alpha and beta from the affine logits, one feature at a time.
pub fn affine_attention(x: &[Vec<f64>], model: &ClusterModel) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (k, s1, d) = model.weights().dim();
    let w = model.weights();
    let b = model.biases();
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for xi in x {
        let mut z = vec![vec![0.0; s1]; k];
        for c in 0..k {
            for n in 0..s1 {
                let mut acc = b[(c, n)];
                for j in 0..d {
                    acc += w[(c, n, j)] * xi[j];
                }
                z[c][n] = acc;
            }
        }
        let reps: Vec<f64> = z.iter().map(|row| row[0]).collect();
        alpha.push(softmax(&reps));
        beta.push(z.iter().map(|row| softmax(row)[0]).collect());
    }
    (alpha, beta)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// alpha and beta straight from squared distances to the centroids.
pub fn distance_attention(x: &[Vec<f64>], model: &ClusterModel) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let a = model.scale();
    let reps = model.representatives();
    let sh = model.shadows();
    let (k, s, d) = sh.dim();
    let row = |i: usize| -> Vec<f64> { (0..d).map(|j| reps[(i, j)]).collect() };
    let shadow = |i: usize, l: usize| -> Vec<f64> { (0..d).map(|j| sh[(i, l, j)]).collect() };
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for xi in x {
        let logits: Vec<f64> = (0..k).map(|c| -a * sq_dist(xi, &row(c))).collect();
        alpha.push(softmax(&logits));
        beta.push(
            (0..k)
                .map(|c| {
                    let mut g = vec![-a * sq_dist(xi, &row(c))];
                    g.extend((0..s).map(|l| -a * sq_dist(xi, &shadow(c, l))));
                    softmax(&g)[0]
                })
                .collect(),
        );
    }
    (alpha, beta)
}

/// Weighted residual sums by explicit loops over features, clusters and depth.
pub fn triple_loop_raw(x: &[Vec<f64>], alpha: &[Vec<f64>], beta: &[Vec<f64>], model: &ClusterModel) -> Vec<f64> {
    let c = model.residual_centroids();
    let (k, d) = c.dim();
    let mut v = vec![0.0; k * d];
    for i in 0..x.len() {
        for kk in 0..k {
            for j in 0..d {
                v[kk * d + j] += alpha[i][kk] * beta[i][kk] * (x[i][j] - c[(kk, j)]);
            }
        }
    }
    v
}

pub fn finalize_loop(raw: &[f64], d: usize) -> Vec<f64> {
    let mut out = raw.to_vec();
    for block in out.chunks_mut(d) {
        let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            block.iter_mut().for_each(|v| *v /= n);
        }
    }
    let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    out.iter_mut().for_each(|v| *v /= n);
    out
}

pub fn reference_descriptor(fs: &LocalFeatureSet, model: &ClusterModel) -> Vec<f64> {
    let x = l2_rows(fs);
    let (alpha, beta) = affine_attention(&x, model);
    finalize_loop(&triple_loop_raw(&x, &alpha, &beta, model), model.depth())
}

pub fn reference_tuple_loss(
    q: &LocalFeatureSet,
    p: &LocalFeatureSet,
    negs: &[LocalFeatureSet],
    model: &ClusterModel,
    margin: f64,
) -> f64 {
    let fq = reference_descriptor(q, model);
    let dp = sq_dist(&fq, &reference_descriptor(p, model));
    let mut total = 0.0;
    for n in negs {
        let dn = sq_dist(&fq, &reference_descriptor(n, model));
        total += (dp - dn + margin).max(0.0);
    }
    total / negs.len() as f64
}

/// Recall@N by scoring every query against every database item.
pub fn brute_force_recall(
    db: &[(String, Vec<f64>, shadowvlad::features::GeoTag)],
    queries: &[(Vec<f64>, shadowvlad::features::GeoTag)],
    n_values: &[usize],
    radius: f64,
) -> Vec<f64> {
    let mut hits = vec![0usize; n_values.len()];
    for (q, qtag) in queries {
        let mut scored: Vec<(f64, &str, f64)> = db
            .iter()
            .map(|(id, d, t)| (sq_dist(q, d).sqrt(), id.as_str(), qtag.distance(t)))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        for (h, &n) in hits.iter_mut().zip(n_values) {
            if scored.iter().take(n).any(|s| s.2 <= radius) {
                *h += 1;
            }
        }
    }
    hits.into_iter().map(|h| h as f64 / queries.len() as f64).collect()
}
