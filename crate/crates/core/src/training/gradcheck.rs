//! Central finite-difference verification of the analytic tuple gradient.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::backward::tuple_gradients;
use super::loss::tuple_loss;
use crate::encoding::{encode, ClusterModel};
use crate::error::Result;
use crate::features::LocalFeatureSet;

/// Size of the random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub depth: usize,
    pub clusters: usize,
    pub shadows: usize,
    pub height: usize,
    pub width: usize,
    pub negatives: usize,
    pub step: f64,
    pub margin: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            clusters: 4,
            shadows: 2,
            height: 2,
            width: 3,
            negatives: 2,
            step: 1e-5,
            margin: 1.0,
        }
    }
}

/// Partials smaller than this are compared on an absolute scale, since the
/// central difference carries roughly `1e-16 / h` of rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// A model and a tuple of feature sets: query, positive, negatives.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub model: ClusterModel,
    pub query: LocalFeatureSet,
    pub positive: LocalFeatureSet,
    pub negatives: Vec<LocalFeatureSet>,
    pub margin: f64,
}

impl GradCheckInstance {
    pub fn loss(&self, model: &ClusterModel) -> Result<f64> {
        let q = encode(&self.query, model)?;
        let p = encode(&self.positive, model)?;
        let ns = self
            .negatives
            .iter()
            .map(|n| encode(n, model))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = ns.iter().map(|n| n.values()).collect();
        Ok(tuple_loss(q.values(), p.values(), &refs, self.margin))
    }

    /// Smallest hinge argument magnitude; finite differences are unreliable near 0.
    pub fn hinge_clearance(&self) -> Result<f64> {
        let q = encode(&self.query, &self.model)?;
        let p = encode(&self.positive, &self.model)?;
        let dp = crate::encoding::squared_distance(q.values(), p.values());
        let mut clearance = f64::INFINITY;
        for n in &self.negatives {
            let dn = crate::encoding::squared_distance(q.values(), encode(n, &self.model)?.values());
            clearance = clearance.min((dp - dn + self.margin).abs());
        }
        Ok(clearance)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, shape: usize) -> Vec<f64> {
    (0..shape).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<f64> {
    let mut v = gaussian(rng, rows * dim);
    for row in v.chunks_exact_mut(dim) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Random instance whose hinges are all clear of their kinks.
pub fn random_instance(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, s, d) = (cfg.clusters, cfg.shadows, cfg.depth);
    let n = cfg.height * cfg.width;
    loop {
        let scale = rng.random_range(1.0..5.0);
        let reps = Array2::from_shape_vec((k, d), unit_rows(&mut rng, k, d)).expect("shape");
        let shadows = Array3::from_shape_vec((k, s, d), unit_rows(&mut rng, k * s, d)).expect("shape");
        let mut model = ClusterModel::from_centroids(reps, shadows, scale)?;
        // decouple trained parameters from their initial tie
        model.weights_mut().iter_mut().for_each(|w| *w += 0.3 * rng.sample::<f64, _>(StandardNormal));
        model.biases_mut().iter_mut().for_each(|b| *b += 0.3 * rng.sample::<f64, _>(StandardNormal));
        model
            .residual_centroids_mut()
            .iter_mut()
            .for_each(|c| *c += 0.2 * rng.sample::<f64, _>(StandardNormal));
        let mut image = |name: String| {
            let x = Array2::from_shape_vec((n, d), gaussian(&mut rng, n * d)).expect("shape");
            LocalFeatureSet::new(name, cfg.height, cfg.width, x, None)
        };
        let query = image("q".into())?;
        let positive = image("p".into())?;
        let negatives = (0..cfg.negatives)
            .map(|j| image(format!("n{j}")))
            .collect::<Result<Vec<_>>>()?;
        let inst = GradCheckInstance {
            model,
            query,
            positive,
            negatives,
            margin: cfg.margin,
        };
        if inst.hinge_clearance()? > 1e-2 {
            return Ok(inst);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
}

fn param_mut(model: &mut ClusterModel, mut idx: usize) -> &mut f64 {
    let nw = model.weights().len();
    let nb = model.biases().len();
    if idx < nw {
        return model.weights_mut().iter_mut().nth(idx).expect("index");
    }
    idx -= nw;
    if idx < nb {
        return model.biases_mut().iter_mut().nth(idx).expect("index");
    }
    model.residual_centroids_mut().iter_mut().nth(idx - nb).expect("index")
}

/// Compares every analytic partial against a central difference.
pub fn check_instance(inst: &GradCheckInstance, step: f64) -> Result<GradCheckReport> {
    let negs: Vec<&LocalFeatureSet> = inst.negatives.iter().collect();
    let (loss, grads) = tuple_gradients(&inst.query, &inst.positive, &negs, &inst.model, inst.margin)?;
    let analytic = grads.to_vec();
    let mut probe = inst.model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *param_mut(&mut probe, i);
        *param_mut(&mut probe, i) = orig + step;
        let up = inst.loss(&probe)?;
        *param_mut(&mut probe, i) = orig - step;
        let down = inst.loss(&probe)?;
        *param_mut(&mut probe, i) = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * step)));
    }
    Ok(GradCheckReport {
        loss,
        parameters: analytic.len(),
        max_relative_error: worst,
        max_abs_gradient: grads.max_abs(),
    })
}

pub fn gradient_check(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    check_instance(&random_instance(seed, cfg)?, cfg.step)
}
