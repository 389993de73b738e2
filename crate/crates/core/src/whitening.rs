//! PCA whitening and dimensionality reduction of descriptors.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::binio::{ByteReader, ByteWriter};
use crate::encoding::{Descriptor, DescriptorState};
use crate::error::{Error, Result};

pub const WHITENING_MAGIC: &[u8; 4] = b"SRLW";
const WHITENING_VERSION: u32 = 1;
/// Eigenvalue regularizer added before the inverse square root.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// `x -> projection . (x - mean)`, rows scaled to unit output variance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Array1<f64>,
    projection: Array2<f64>,
    epsilon: f64,
}

/// Result of a fit: the transform and the spectrum it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningFit {
    pub transform: WhiteningTransform,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub requested_dim: usize,
}

impl WhiteningFit {
    pub fn was_clamped(&self) -> bool {
        self.transform.output_dim() < self.requested_dim
    }
}

fn eigen_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Fits on the rows of `descriptors` (one descriptor per row).
///
/// When fewer than `target_dim` eigenvalues exceed `epsilon` the output
/// dimension is clamped with a warning.
pub fn fit_whitening<D: AsRef<[f64]>>(descriptors: &[D], target_dim: usize, epsilon: f64) -> Result<WhiteningFit> {
    let m = descriptors.len();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let dim = descriptors[0].as_ref().len();
    if target_dim == 0 || target_dim > dim {
        return Err(Error::Config(format!("target_dim must lie in 1..={dim}, got {target_dim}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("whitening epsilon must be > 0".into()));
    }
    let mut mean = Array1::<f64>::zeros(dim);
    for d in descriptors {
        let d = d.as_ref();
        if d.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "whitening input",
                expected: dim,
                found: d.len(),
            });
        }
        mean += &ndarray::ArrayView1::from(d);
    }
    mean /= m as f64;
    let centered = DMatrix::from_fn(m, dim, |i, j| descriptors[i].as_ref()[j] - mean[j]);
    let denom = (m - 1) as f64;

    // eigenvectors of the covariance as columns of `vectors`
    let (values, vectors) = if m < dim {
        let gram = (&centered * centered.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let mut vecs = &centered.transpose() * &eig.eigenvectors;
        for (j, &l) in eig.eigenvalues.iter().enumerate() {
            let n = vecs.column(j).norm();
            if l > 0.0 && n > 0.0 {
                vecs.column_mut(j).unscale_mut(n);
            } else {
                vecs.column_mut(j).fill(0.0);
            }
        }
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), vecs)
    } else {
        let cov = (centered.transpose() * &centered) / denom;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    };

    let order = eigen_order(&values);
    let available = order.iter().filter(|&&i| values[i] > epsilon).count();
    if available == 0 {
        return Err(Error::RankDeficient {
            requested: target_dim,
            available,
        });
    }
    let kept = if available < target_dim {
        log::warn!("whitening: only {available} eigenvalues exceed {epsilon:e}; clamping {target_dim} to {available}");
        available
    } else {
        target_dim
    };
    let mut projection = Array2::<f64>::zeros((kept, dim));
    for (r, &i) in order.iter().take(kept).enumerate() {
        let col = vectors.column(i);
        // deterministic sign: largest-magnitude entry positive
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let s = sign / (values[i] + epsilon).sqrt();
        for j in 0..dim {
            projection[(r, j)] = col[j] * s;
        }
    }
    Ok(WhiteningFit {
        transform: WhiteningTransform {
            mean,
            projection,
            epsilon,
        },
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
        requested_dim: target_dim,
    })
}

/// Like [`fit_whitening`] but refuses to clamp.
pub fn fit_whitening_strict<D: AsRef<[f64]>>(descriptors: &[D], target_dim: usize, epsilon: f64) -> Result<WhiteningTransform> {
    let fit = fit_whitening(descriptors, target_dim, epsilon)?;
    if fit.was_clamped() {
        return Err(Error::RankDeficient {
            requested: target_dim,
            available: fit.transform.output_dim(),
        });
    }
    Ok(fit.transform)
}

impl WhiteningTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// `[output_dim, input_dim]`
    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    /// The affine part without the final normalization.
    pub fn project(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "whitening input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let centered = &ndarray::ArrayView1::from(x) - &self.mean;
        Ok(self.projection.dot(&centered))
    }

    /// Projects, then L2-normalizes.
    pub fn apply(&self, desc: &Descriptor) -> Result<Descriptor> {
        let y = self.project(desc.values())?;
        let n = y.dot(&y).sqrt();
        if !(n > 0.0) {
            return Err(Error::DegenerateDescriptor);
        }
        Ok(Descriptor::new(
            y.iter().map(|v| v / n).collect(),
            self.output_dim(),
            DescriptorState::Whitened,
        ))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(WHITENING_MAGIC);
        w.u32(WHITENING_VERSION);
        w.dim(self.input_dim())?;
        w.dim(self.output_dim())?;
        w.f64(self.epsilon);
        w.f64s(self.mean.iter());
        w.f64s(self.projection.iter());
        Ok(w.finish())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        r.magic(WHITENING_MAGIC)?;
        let version = r.u32()?;
        if version != WHITENING_VERSION {
            return Err(r.format_error(format!("unsupported whitening version {version}")));
        }
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        if output > input {
            return Err(r.format_error(format!("output dimension {output} exceeds input {input}")));
        }
        let epsilon = r.f64()?;
        let mean = Array1::from(r.f64_vec(input)?);
        let n = input
            .checked_mul(output)
            .ok_or_else(|| r.format_error("projection size overflow"))?;
        let projection = Array2::from_shape_vec((output, input), r.f64_vec(n)?).expect("sized");
        r.expect_end()?;
        Ok(Self {
            mean,
            projection,
            epsilon,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
