//! Hierarchical weighting and descriptor embedding.
//!
//! Every local feature `x_i` gets one logit per cluster channel,
//! `z_{ikn} = w_{kn} . x_i + b_{kn}`. A softmax over the representative
//! channels (`n = 0`) of all clusters gives the soft-assignment `alpha`; a
//! softmax over the `S + 1` channels of one cluster gives the intra-cluster
//! saliency `beta` as the representative's share. Residuals to the cluster's
//! residual centroid are weighted by `alpha * beta`, summed per cluster,
//! intra-normalized and L2-normalized.

mod descriptor;
mod export;
mod model;

pub use descriptor::{finalize, squared_distance, Descriptor, DescriptorSet, DescriptorState, DESCRIPTOR_MAGIC};
pub use export::{write_attention_csv, ATTENTION_CSV_HEADER};
pub use model::{centroids_to_affine, ClusterModel, DEFAULT_SCALE, MODEL_MAGIC, MODEL_VERSION};

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::features::LocalFeatureSet;

/// Per-feature attention: `alpha` and `beta`, both `[H*W, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
}

/// Numerically stable softmax in place.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Logits for every feature and channel, `[N, K*(S+1)]`.
fn logits(x: ArrayView2<'_, f64>, model: &ClusterModel) -> Result<Array2<f64>> {
    model.check_depth(x.ncols())?;
    let (k, s1, d) = model.weights().dim();
    let w = model
        .weights()
        .view()
        .into_shape_with_order((k * s1, d))
        .expect("weights are contiguous");
    let b = model
        .biases()
        .view()
        .into_shape_with_order(k * s1)
        .expect("biases are contiguous");
    let mut z = x.dot(&w.t());
    z += &b;
    Ok(z)
}

/// Softmax over the representative channels.
fn alpha_from_logits(z: &Array2<f64>, k: usize, s1: usize) -> Array2<f64> {
    let mut alpha = Array2::zeros((z.nrows(), k));
    let mut buf = vec![0.0; k];
    for (zi, mut ai) in z.rows().into_iter().zip(alpha.rows_mut()) {
        for (c, v) in buf.iter_mut().enumerate() {
            *v = zi[c * s1];
        }
        softmax_in_place(&mut buf);
        ai.assign(&ndarray::ArrayView1::from(&buf[..]));
    }
    alpha
}

/// Softmax within each cluster's channel group, `[N, K, S+1]`.
fn group_probs_from_logits(z: &Array2<f64>, k: usize, s1: usize) -> Array3<f64> {
    let mut p = z
        .to_owned()
        .into_shape_with_order((z.nrows(), k, s1))
        .expect("logits are contiguous");
    for mut group in p.lanes_mut(Axis(2)) {
        softmax_in_place(group.as_slice_mut().expect("contiguous lane"));
    }
    p
}

/// Soft-assignment `alpha` `[H*W, K]`; each row sums to one.
pub fn soft_assign(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<Array2<f64>> {
    let z = logits(fs.features().view(), model)?;
    Ok(alpha_from_logits(&z, model.num_clusters(), model.num_shadows() + 1))
}

/// Intra-cluster saliency `beta` `[H*W, K]`. Identically one without shadows.
pub fn intra_weight(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<Array2<f64>> {
    let z = logits(fs.features().view(), model)?;
    let p = group_probs_from_logits(&z, model.num_clusters(), model.num_shadows() + 1);
    Ok(p.index_axis(Axis(2), 0).to_owned())
}

pub fn attention_maps(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<AttentionMaps> {
    let z = logits(fs.features().view(), model)?;
    let (k, s1) = (model.num_clusters(), model.num_shadows() + 1);
    Ok(AttentionMaps {
        alpha: alpha_from_logits(&z, k, s1),
        beta: group_probs_from_logits(&z, k, s1).index_axis(Axis(2), 0).to_owned(),
    })
}

/// `V_k = sum_i g_ik (x_i - c_k)`, returned as `[K, D]`.
fn weighted_residuals(x: ArrayView2<'_, f64>, g: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    let mut v = g.t().dot(&x);
    let mass = g.sum_axis(Axis(0));
    for ((mut vk, ck), m) in v.rows_mut().into_iter().zip(centroids.rows()).zip(mass.iter()) {
        vk.scaled_add(-m, &ck);
    }
    v
}

fn raw_descriptor(v: Array2<f64>) -> Descriptor {
    let d = v.ncols();
    Descriptor::new(v.into_raw_vec_and_offset().0, d, DescriptorState::Raw)
}

/// Double-weighted residual aggregation on already-normalized features.
/// Returns the raw descriptor and the attention maps used to build it.
pub fn aggregate(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<(Descriptor, AttentionMaps)> {
    let maps = attention_maps(fs, model)?;
    let g = &maps.alpha * &maps.beta;
    let v = weighted_residuals(fs.features().view(), &g, model.residual_centroids());
    Ok((raw_descriptor(v), maps))
}

/// Full pipeline: normalize, weight, aggregate, finalize.
pub fn encode(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<Descriptor> {
    let x = fs.normalize()?;
    let (raw, _) = aggregate(&x, model)?;
    finalize(&raw)
}

/// Soft-assignment VLAD without intra-cluster weighting. Shadows, if any,
/// are ignored. Reference path for the shadow-free reduction.
pub fn encode_netvlad(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<Descriptor> {
    let x = fs.normalize()?;
    let alpha = soft_assign(&x, model)?;
    let v = weighted_residuals(x.features().view(), &alpha, model.residual_centroids());
    finalize(&raw_descriptor(v))
}

/// Cached intermediate values of one forward pass, consumed by the gradient
/// computation.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Normalized features `[N, D]`.
    pub x: Array2<f64>,
    pub alpha: Array2<f64>,
    /// Per-cluster channel probabilities `[N, K, S+1]`; `beta` is channel 0.
    pub group_probs: Array3<f64>,
    /// `alpha * beta`, `[N, K]`.
    pub weights: Array2<f64>,
    /// Raw visual-word vectors `[K, D]`.
    pub raw: Array2<f64>,
    pub block_norms: Array1<f64>,
    /// Intra-normalized blocks `[K, D]`.
    pub intra: Array2<f64>,
    pub intra_norm: f64,
    /// Final unit-norm descriptor, `K*D`.
    pub output: Array1<f64>,
}

impl Forward {
    pub fn beta(&self) -> Array2<f64> {
        self.group_probs.index_axis(Axis(2), 0).to_owned()
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor::new(self.output.to_vec(), self.raw.ncols(), DescriptorState::FullyNormalized)
    }
}

/// Runs [`encode`] and keeps every intermediate.
pub fn forward(fs: &LocalFeatureSet, model: &ClusterModel) -> Result<Forward> {
    let xs = fs.normalize()?;
    let z = logits(xs.features().view(), model)?;
    let (k, s1) = (model.num_clusters(), model.num_shadows() + 1);
    let alpha = alpha_from_logits(&z, k, s1);
    let group_probs = group_probs_from_logits(&z, k, s1);
    let weights = &alpha * &group_probs.index_axis(Axis(2), 0);
    let x = xs.features().to_owned();
    let raw = weighted_residuals(x.view(), &weights, model.residual_centroids());

    let block_norms: Array1<f64> = raw.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut intra = raw.clone();
    for (mut row, &n) in intra.rows_mut().into_iter().zip(block_norms.iter()) {
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    let intra_norm = intra.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(intra_norm > 0.0) {
        return Err(Error::DegenerateDescriptor);
    }
    let output = intra.iter().map(|v| v / intra_norm).collect();
    Ok(Forward {
        x,
        alpha,
        group_probs,
        weights,
        raw,
        block_norms,
        intra,
        intra_norm,
        output,
    })
}
