//! Weakly supervised training of the pooling parameters.
//!
//! Each epoch re-encodes the training images with the current model, mines
//! one tuple per training query (best positive, hardest negatives), and runs
//! mini-batch SGD with momentum on the triplet ranking loss. The model with the
//! best validation Recall@1 is returned.

mod backward;
mod gradcheck;
mod loss;
mod mining;
mod optim;

pub use backward::{backward_image, tuple_gradients, tuple_gradients_from_forward, Gradients};
pub use gradcheck::{
    check_instance, gradient_check, random_instance, relative_error, GradCheckConfig, GradCheckInstance, GradCheckReport,
    RELATIVE_ERROR_FLOOR,
};
pub use loss::{triplet_loss, tuple_loss};
pub use mining::{mine_tuple, mine_tuples, Candidate, MiningConfig, MiningOutcome, TrainingTuple};
pub use optim::{Checkpoint, Sgd, CHECKPOINT_MAGIC};

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoding::{encode, ClusterModel, Descriptor};
use crate::error::{Error, Result};
use crate::evaluation::{recall_at, DescriptorIndex, DEFAULT_SUCCESS_RADIUS_M};
use crate::features::{DatasetSplit, GeoTag, LocalFeatureSet, Role, Split, SyntheticDataset};

/// Optimizer, schedule and mining settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub epochs: usize,
    /// The learning rate halves after every this many epochs.
    pub lr_halving_period: usize,
    /// Stop after this many epochs without a new best validation Recall@1.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub mining: MiningConfig,
    /// Geographic success radius for validation recall.
    pub success_radius: f64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.001,
            margin: 0.1,
            epochs: 30,
            lr_halving_period: 5,
            early_stop_patience: 10,
            batch_size: 4,
            mining: MiningConfig::default(),
            success_radius: DEFAULT_SUCCESS_RADIUS_M,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("invalid training setting: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be > 0");
        }
        if self.lr_halving_period == 0 || self.early_stop_patience == 0 || self.batch_size == 0 {
            return bad("lr_halving_period, early_stop_patience and batch_size must be >= 1");
        }
        if self.mining.num_negatives == 0 {
            return bad("num_negatives must be >= 1");
        }
        if !(self.mining.positive_radius >= 0.0 && self.mining.negative_radius >= self.mining.positive_radius) {
            return bad("radii must satisfy 0 <= positive_radius <= negative_radius");
        }
        if !(self.success_radius >= 0.0) {
            return bad("success_radius must be >= 0");
        }
        Ok(())
    }

    /// Learning rate during epoch `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.saturating_sub(1) / self.lr_halving_period;
        self.learning_rate * 0.5f64.powi(halvings as i32)
    }
}

/// Feature sets with positions and a train/val, database/query split.
#[derive(Debug, Clone)]
pub struct PlaceDataset {
    pub sets: Vec<LocalFeatureSet>,
    pub geotags: Vec<GeoTag>,
    pub split: DatasetSplit,
    by_id: HashMap<String, usize>,
}

impl PlaceDataset {
    /// Every id in the split must name a feature set with a geotag.
    pub fn new(sets: Vec<LocalFeatureSet>, geotags: &[(String, GeoTag)], split: DatasetSplit) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(sets.len());
        for (i, fs) in sets.iter().enumerate() {
            if by_id.insert(fs.image_id().to_string(), i).is_some() {
                return Err(Error::DuplicateId(fs.image_id().to_string()));
            }
        }
        let tag_of: HashMap<&str, GeoTag> = geotags.iter().map(|(id, t)| (id.as_str(), *t)).collect();
        let mut tags = Vec::with_capacity(sets.len());
        for fs in &sets {
            let tag = tag_of
                .get(fs.image_id())
                .ok_or_else(|| Error::UnknownId(fs.image_id().to_string()))?;
            tags.push(*tag);
        }
        crate::features::geo_common_frame(tags.iter())?;
        for e in &split.entries {
            if !by_id.contains_key(&e.image_id) {
                return Err(Error::UnknownId(e.image_id.clone()));
            }
        }
        Ok(Self {
            sets,
            geotags: tags,
            split,
            by_id,
        })
    }

    pub fn from_synthetic(ds: &SyntheticDataset, val_fraction: f64) -> Result<Self> {
        let tags: Vec<(String, GeoTag)> = ds
            .sets
            .iter()
            .zip(&ds.geotags)
            .map(|(fs, t)| (fs.image_id().to_string(), *t))
            .collect();
        Self::new(ds.sets.clone(), &tags, ds.split(val_fraction))
    }

    /// Set indices of one split and role, in manifest order.
    pub fn indices(&self, split: Split, role: Role) -> Vec<usize> {
        self.split.ids(split, role).into_iter().map(|id| self.by_id[id]).collect()
    }
}

/// One line of training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_recall_at_1: f64,
    pub learning_rate: f64,
}

pub const HISTORY_HEADER: &str = "epoch,mean_loss,val_recall@1,lr";

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// Validation Recall@1 of the starting model.
    pub initial_val_recall_at_1: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose model was returned.
    pub best_epoch: usize,
}

impl History {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{HISTORY_HEADER}")?;
        for r in &self.epochs {
            writeln!(out, "{},{},{},{}", r.epoch, r.mean_loss, r.val_recall_at_1, r.learning_rate)?;
        }
        Ok(())
    }

    pub fn best_val_recall_at_1(&self) -> Option<f64> {
        self.epochs
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .map(|r| r.val_recall_at_1)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_model: ClusterModel,
    /// State after the last epoch run, for resuming.
    pub last: Checkpoint,
    pub history: History,
}

fn encode_all(dataset: &PlaceDataset, indices: &[usize], model: &ClusterModel) -> Result<Vec<Descriptor>> {
    indices
        .par_iter()
        .map(|&i| encode(&dataset.sets[i], model))
        .collect()
}

/// Validation Recall@1 of `model`: val queries against the val database.
pub fn validation_recall_at_1(dataset: &PlaceDataset, model: &ClusterModel, radius: f64) -> Result<f64> {
    let db = dataset.indices(Split::Val, Role::Database);
    let queries = dataset.indices(Split::Val, Role::Query);
    let db_desc = encode_all(dataset, &db, model)?;
    let q_desc = encode_all(dataset, &queries, model)?;
    let index = DescriptorIndex::build(
        db.iter()
            .zip(db_desc)
            .map(|(&i, d)| (dataset.sets[i].image_id().to_string(), d.into_values(), dataset.geotags[i])),
    )?;
    let q: Vec<(Vec<f64>, GeoTag)> = queries
        .iter()
        .zip(q_desc)
        .map(|(&i, d)| (d.into_values(), dataset.geotags[i]))
        .collect();
    Ok(recall_at(&index, &q, &[1], radius)?.recalls[0])
}

/// Trains from scratch (fresh optimizer state).
pub fn train(dataset: &PlaceDataset, model: &ClusterModel, cfg: &SgdConfig) -> Result<TrainOutcome> {
    let start = Checkpoint {
        model: model.clone(),
        optimizer: Sgd::new(model, cfg.momentum, cfg.weight_decay),
        epoch: 0,
        learning_rate: cfg.learning_rate,
    };
    resume(dataset, start, cfg)
}

/// Continues from `start` up to `cfg.epochs` total epochs.
pub fn resume(dataset: &PlaceDataset, start: Checkpoint, cfg: &SgdConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_db = dataset.indices(Split::Train, Role::Database);
    let train_q = dataset.indices(Split::Train, Role::Query);
    if train_db.is_empty() || train_q.is_empty() {
        return Err(Error::TooFewSamples {
            needed: 1,
            got: train_db.len().min(train_q.len()),
        });
    }

    let Checkpoint {
        mut model,
        mut optimizer,
        epoch: done,
        mut learning_rate,
    } = start;
    optimizer.momentum = cfg.momentum;
    optimizer.weight_decay = cfg.weight_decay;

    let initial = validation_recall_at_1(dataset, &model, cfg.success_radius)?;
    log::info!("initial val recall@1 {initial:.4}");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // keep the shuffle stream aligned with an uninterrupted run
    for _ in 0..done {
        let mut skip: Vec<usize> = (0..train_q.len()).collect();
        skip.shuffle(&mut rng);
    }

    let mut best: Option<(f64, usize, ClusterModel)> = None;
    let mut stale = 0;
    let mut records = Vec::new();
    let mut last_epoch = done;
    for epoch in done + 1..=cfg.epochs {
        learning_rate = cfg.learning_rate_at(epoch);
        let db_desc = encode_all(dataset, &train_db, &model)?;
        let q_desc = encode_all(dataset, &train_q, &model)?;
        let db_c: Vec<Candidate<'_>> = train_db
            .iter()
            .zip(&db_desc)
            .map(|(&i, d)| Candidate {
                id: dataset.sets[i].image_id(),
                descriptor: d.values(),
                geotag: dataset.geotags[i],
            })
            .collect();
        let q_c: Vec<Candidate<'_>> = train_q
            .iter()
            .zip(&q_desc)
            .map(|(&i, d)| Candidate {
                id: dataset.sets[i].image_id(),
                descriptor: d.values(),
                geotag: dataset.geotags[i],
            })
            .collect();
        let mut tuples = mine_tuples(&q_c, &db_c, &cfg.mining).tuples;
        // the shuffle draws over every query so the stream does not depend on mining
        let mut order: Vec<usize> = (0..train_q.len()).collect();
        order.shuffle(&mut rng);
        let rank: HashMap<usize, usize> = order.iter().enumerate().map(|(r, &q)| (q, r)).collect();
        tuples.sort_by_key(|t| rank[&t.query]);

        let mut loss_sum = 0.0;
        for batch in tuples.chunks(cfg.batch_size) {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|t| {
                    let negs: Vec<&LocalFeatureSet> = t.negatives.iter().map(|&n| &dataset.sets[train_db[n]]).collect();
                    tuple_gradients(
                        &dataset.sets[train_q[t.query]],
                        &dataset.sets[train_db[t.positive]],
                        &negs,
                        &model,
                        cfg.margin,
                    )
                })
                .collect::<Result<_>>()?;
            let mut total = Gradients::zeros_like(&model);
            for (l, g) in &results {
                loss_sum += l;
                total.scaled_add(1.0, g);
            }
            total.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model, &total, learning_rate);
        }
        let mean_loss = if tuples.is_empty() {
            log::warn!("epoch {epoch}: no training tuples could be mined");
            0.0
        } else {
            loss_sum / tuples.len() as f64
        };

        let recall = validation_recall_at_1(dataset, &model, cfg.success_radius)?;
        log::info!("epoch {epoch}: loss {mean_loss:.6} val recall@1 {recall:.4} lr {learning_rate}");
        records.push(EpochRecord {
            epoch,
            mean_loss,
            val_recall_at_1: recall,
            learning_rate,
        });
        last_epoch = epoch;
        if best.as_ref().is_none_or(|b| recall > b.0) {
            best = Some((recall, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (done, model.clone()),
    };
    Ok(TrainOutcome {
        best_model,
        last: Checkpoint {
            model,
            optimizer,
            epoch: last_epoch,
            learning_rate,
        },
        history: History {
            initial_val_recall_at_1: initial,
            epochs: records,
            best_epoch,
        },
    })
}
