//! Analytic gradients of the tuple loss with respect to the affine weights,
//! biases and residual centroids. Features are treated as constants.

use ndarray::{Array1, Array2, Array3, Axis, Zip};

use crate::encoding::{forward, ClusterModel, Forward};
use crate::error::Result;
use crate::features::LocalFeatureSet;

/// Gradient (or update) buffers shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `[K, S+1, D]`
    pub weights: Array3<f64>,
    /// `[K, S+1]`
    pub biases: Array2<f64>,
    /// `[K, D]`
    pub residual_centroids: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &ClusterModel) -> Self {
        Self {
            weights: Array3::zeros(model.weights().raw_dim()),
            biases: Array2::zeros(model.biases().raw_dim()),
            residual_centroids: Array2::zeros(model.residual_centroids().raw_dim()),
        }
    }

    pub fn scaled_add(&mut self, factor: f64, other: &Gradients) {
        self.weights.scaled_add(factor, &other.weights);
        self.biases.scaled_add(factor, &other.biases);
        self.residual_centroids.scaled_add(factor, &other.residual_centroids);
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.biases *= factor;
        self.residual_centroids *= factor;
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .chain(self.residual_centroids.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }

    /// Flattened in the order weights, biases, residual centroids.
    pub fn to_vec(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .chain(self.residual_centroids.iter())
            .copied()
            .collect()
    }
}

/// Accumulates into `grads` the parameter gradient of a scalar whose
/// gradient with respect to this image's final descriptor is `grad_out`.
pub fn backward_image(fwd: &Forward, grad_out: &Array1<f64>, model: &ClusterModel, grads: &mut Gradients) {
    let (k, s1, d) = model.weights().dim();
    let f = &fwd.output;

    // global L2 normalization
    let proj = f.dot(grad_out);
    let g_intra = ((grad_out - &(f * proj)) / fwd.intra_norm)
        .into_shape_with_order((k, d))
        .expect("descriptor is K*D");

    // per-block intra-normalization; zero blocks carry no gradient
    let mut g_raw = Array2::<f64>::zeros((k, d));
    for c in 0..k {
        let n = fwd.block_norms[c];
        if n > 0.0 {
            let u = fwd.intra.row(c);
            let gu = g_intra.row(c);
            let p = u.dot(&gu);
            g_raw.row_mut(c).assign(&((&gu - &(&u * p)) / n));
        }
    }

    // V_k = sum_i g_ik (x_i - c_k)
    let mass = fwd.weights.sum_axis(Axis(0));
    for c in 0..k {
        grads
            .residual_centroids
            .row_mut(c)
            .scaled_add(-mass[c], &g_raw.row(c));
    }
    // d/d g_ik = gV_k . x_i - gV_k . c_k
    let mut g_w = fwd.x.dot(&g_raw.t());
    let offsets: Array1<f64> = g_raw
        .rows()
        .into_iter()
        .zip(model.residual_centroids().rows())
        .map(|(gv, ck)| gv.dot(&ck))
        .collect();
    g_w -= &offsets;

    let n = fwd.x.nrows();
    let mut g_logits = Array3::<f64>::zeros((n, k, s1));
    let beta = fwd.group_probs.index_axis(Axis(2), 0);
    for i in 0..n {
        // alpha softmax over representative channels
        let mut dot = 0.0;
        for c in 0..k {
            dot += fwd.alpha[(i, c)] * g_w[(i, c)] * beta[(i, c)];
        }
        for c in 0..k {
            let a = fwd.alpha[(i, c)];
            let b = beta[(i, c)];
            let g_alpha = g_w[(i, c)] * b;
            g_logits[(i, c, 0)] += a * (g_alpha - dot);
            // beta is channel 0 of the cluster's own softmax
            let g_beta = g_w[(i, c)] * a;
            for ch in 0..s1 {
                let p = fwd.group_probs[(i, c, ch)];
                let delta = if ch == 0 { 1.0 } else { 0.0 };
                g_logits[(i, c, ch)] += g_beta * b * (delta - p);
            }
        }
    }

    let g_flat = g_logits
        .into_shape_with_order((n, k * s1))
        .expect("contiguous logits");
    let gw = g_flat.t().dot(&fwd.x);
    grads.weights += &gw.into_shape_with_order((k, s1, d)).expect("contiguous");
    let gb = g_flat.sum_axis(Axis(0));
    grads.biases += &gb.into_shape_with_order((k, s1)).expect("contiguous");
}

/// Tuple loss and its gradient. Hinge-inactive triplets contribute nothing.
pub fn tuple_gradients(
    query: &LocalFeatureSet,
    positive: &LocalFeatureSet,
    negatives: &[&LocalFeatureSet],
    model: &ClusterModel,
    margin: f64,
) -> Result<(f64, Gradients)> {
    let fq = forward(query, model)?;
    let fp = forward(positive, model)?;
    let fns = negatives
        .iter()
        .map(|n| forward(n, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(tuple_gradients_from_forward(&fq, &fp, &fns, model, margin))
}

pub fn tuple_gradients_from_forward(
    fq: &Forward,
    fp: &Forward,
    fns: &[Forward],
    model: &ClusterModel,
    margin: f64,
) -> (f64, Gradients) {
    let mut grads = Gradients::zeros_like(model);
    if fns.is_empty() {
        return (0.0, grads);
    }
    let scale = 1.0 / fns.len() as f64;
    let q = &fq.output;
    let p = &fp.output;
    let dp = (q - p).mapv(|v| v * v).sum();

    let mut g_q = Array1::<f64>::zeros(q.len());
    let mut g_p = Array1::<f64>::zeros(q.len());
    let mut loss = 0.0;
    let mut active: Vec<(usize, Array1<f64>)> = Vec::new();
    for (j, fnj) in fns.iter().enumerate() {
        let nj = &fnj.output;
        let dn = (q - nj).mapv(|v| v * v).sum();
        let h = dp - dn + margin;
        if h > 0.0 {
            loss += h * scale;
            // d/dq (|q-p|^2 - |q-n|^2) = 2(n - p)
            Zip::from(&mut g_q).and(p).and(nj).for_each(|g, &pv, &nv| *g += 2.0 * scale * (nv - pv));
            Zip::from(&mut g_p).and(q).and(p).for_each(|g, &qv, &pv| *g -= 2.0 * scale * (qv - pv));
            active.push((j, (q - nj).mapv(|v| 2.0 * scale * v)));
        }
    }
    if active.is_empty() {
        return (0.0, grads);
    }
    backward_image(fq, &g_q, model, &mut grads);
    backward_image(fp, &g_p, model, &mut grads);
    for (j, g_n) in &active {
        backward_image(&fns[*j], g_n, model, &mut grads);
    }
    (loss, grads)
}
