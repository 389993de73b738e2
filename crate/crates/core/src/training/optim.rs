use std::fs;
use std::path::Path;

use ndarray::Zip;

use super::backward::Gradients;
use crate::binio::{ByteReader, ByteWriter};
use crate::encoding::ClusterModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SRLC";
const CHECKPOINT_VERSION: u32 = 1;

/// SGD with classical momentum and L2 weight decay folded into the gradient:
/// `v = mu * v + (g + wd * p)`, `p -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Gradients,
}

impl Sgd {
    pub fn new(model: &ClusterModel, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Gradients::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut ClusterModel, grads: &Gradients, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let update = |p: &mut f64, v: &mut f64, &g: &f64| {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        };
        Zip::from(model.weights_mut())
            .and(&mut self.velocity.weights)
            .and(&grads.weights)
            .for_each(update);
        Zip::from(model.biases_mut())
            .and(&mut self.velocity.biases)
            .and(&grads.biases)
            .for_each(update);
        Zip::from(model.residual_centroids_mut())
            .and(&mut self.velocity.residual_centroids)
            .and(&grads.residual_centroids)
            .for_each(update);
    }
}

/// Model plus optimizer state after `epoch` completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ClusterModel,
    pub optimizer: Sgd,
    pub epoch: usize,
    pub learning_rate: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = self.model.to_bytes()?;
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.dim(model.len())?;
        w.bytes(&model);
        w.dim(self.epoch)?;
        w.f64(self.learning_rate);
        w.f64(self.optimizer.momentum);
        w.f64(self.optimizer.weight_decay);
        let v = &self.optimizer.velocity;
        w.f64s(v.weights.iter());
        w.f64s(v.biases.iter());
        w.f64s(v.residual_centroids.iter());
        Ok(w.finish())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.format_error(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let start = r.offset();
        let model = ClusterModel::from_bytes(r.take(len)?).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset: offset + start,
                message,
            },
            other => other,
        })?;
        let epoch = r.u32()? as usize;
        let learning_rate = r.f64()?;
        let momentum = r.f64()?;
        let weight_decay = r.f64()?;
        let mut optimizer = Sgd::new(&model, momentum, weight_decay);
        let v = &mut optimizer.velocity;
        let fill = |r: &mut ByteReader<'_>, dst: &mut dyn Iterator<Item = &mut f64>, n: usize| -> Result<()> {
            for (d, s) in dst.zip(r.f64_vec(n)?) {
                *d = s;
            }
            Ok(())
        };
        let (nw, nb, nc) = (v.weights.len(), v.biases.len(), v.residual_centroids.len());
        fill(&mut r, &mut v.weights.iter_mut(), nw)?;
        fill(&mut r, &mut v.biases.iter_mut(), nb)?;
        fill(&mut r, &mut v.residual_centroids.iter_mut(), nc)?;
        r.expect_end()?;
        Ok(Self {
            model,
            optimizer,
            epoch,
            learning_rate,
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
