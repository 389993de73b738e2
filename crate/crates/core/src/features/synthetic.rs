//! Planted-place generator: a desk-scale stand-in for geotagged street imagery.
//!
//! Every place owns a set of informative prototypes that reappear, perturbed,
//! in each of its views and carry static labels. The rest of each view is
//! clutter drawn from a few modes shared by all places, labeled with dynamic
//! classes. Clutter therefore carries no place identity.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ClassId, DatasetSplit, GeoTag, LocalFeatureSet, Role, SemanticPartition, Split, SplitEntry};
use crate::error::{Error, Result};

/// Distance between neighbouring place centers on the planar grid.
pub const PLACE_SPACING_M: f64 = 100.0;
/// Views are scattered uniformly in a disk of this radius around the center.
pub const VIEW_JITTER_M: f64 = 2.0;

const STATIC_LABELS: [ClassId; 4] = [0, 2, 7, 8];
const DYNAMIC_LABELS: [ClassId; 3] = [10, 11, 13];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlaceSpec {
    pub num_places: usize,
    pub views_per_place: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of each view's features that are place-specific, in (0, 1).
    pub informative_fraction: f64,
    /// Spread of clutter around its shared modes.
    pub clutter_noise_scale: f64,
    /// Per-view perturbation of informative prototypes.
    pub view_noise_scale: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticPlaceSpec {
    fn default() -> Self {
        Self {
            num_places: 40,
            views_per_place: 4,
            dim: 32,
            height: 6,
            width: 6,
            informative_fraction: 0.15,
            clutter_noise_scale: 1.0,
            view_noise_scale: 1.0,
            rng_seed: 7,
        }
    }
}

impl SyntheticPlaceSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_places", self.num_places),
            ("views_per_place", self.views_per_place),
            ("height", self.height),
            ("width", self.width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.dim < 2 {
            return Err(Error::InvalidSpec("dim must be at least 2".into()));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "informative_fraction {} outside (0, 1)",
                self.informative_fraction
            )));
        }
        for (name, v) in [
            ("clutter_noise_scale", self.clutter_noise_scale),
            ("view_noise_scale", self.view_noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Number of informative features per view.
    pub fn informative_per_view(&self) -> usize {
        (self.informative_fraction * (self.height * self.width) as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub sets: Vec<LocalFeatureSet>,
    pub geotags: Vec<GeoTag>,
    /// Place index of each set.
    pub places: Vec<usize>,
    pub views_per_place: usize,
}

impl SyntheticDataset {
    /// Holds out the last `ceil(val_fraction * places)` places for validation.
    /// View 0 of every place is the database image, the others are queries.
    pub fn split(&self, val_fraction: f64) -> DatasetSplit {
        let num_places = self.places.iter().max().map_or(0, |m| m + 1);
        let num_val = (val_fraction * num_places as f64).ceil() as usize;
        let first_val = num_places.saturating_sub(num_val);
        let entries = self
            .sets
            .iter()
            .zip(&self.places)
            .enumerate()
            .map(|(i, (fs, &p))| SplitEntry {
                image_id: fs.image_id().to_string(),
                split: if p >= first_val { Split::Val } else { Split::Train },
                role: if i % self.views_per_place == 0 {
                    Role::Database
                } else {
                    Role::Query
                },
            })
            .collect();
        DatasetSplit { entries }
    }

    pub fn partition() -> SemanticPartition {
        SemanticPartition::new(STATIC_LABELS, DYNAMIC_LABELS).unwrap()
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates the dataset. A pure function of `spec`.
pub fn generate_synthetic_dataset(spec: &SyntheticPlaceSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let d = spec.dim;
    let cells = spec.height * spec.width;
    let n_inf = spec.informative_per_view();
    let per_component = |scale: f64| scale / (d as f64).sqrt();

    let clutter_modes: Vec<Vec<f64>> = DYNAMIC_LABELS.iter().map(|_| random_unit(&mut rng, d)).collect();
    let cols = (spec.num_places as f64).sqrt().ceil() as usize;

    let mut sets = Vec::with_capacity(spec.num_places * spec.views_per_place);
    let mut geotags = Vec::with_capacity(sets.capacity());
    let mut places = Vec::with_capacity(sets.capacity());
    for p in 0..spec.num_places {
        let prototypes: Vec<Vec<f64>> = (0..n_inf).map(|_| random_unit(&mut rng, d)).collect();
        let center = (
            PLACE_SPACING_M * (p % cols) as f64,
            PLACE_SPACING_M * (p / cols) as f64,
        );
        for v in 0..spec.views_per_place {
            let mut slots: Vec<usize> = (0..cells).collect();
            slots.shuffle(&mut rng);
            let mut feats = Array2::<f64>::zeros((cells, d));
            let mut labels = vec![0 as ClassId; cells];
            for (j, &cell) in slots.iter().enumerate() {
                let (base, noise, label) = if j < n_inf {
                    (
                        &prototypes[j],
                        per_component(spec.view_noise_scale),
                        STATIC_LABELS[j % STATIC_LABELS.len()],
                    )
                } else {
                    let m = rng.random_range(0..clutter_modes.len());
                    (&clutter_modes[m], per_component(spec.clutter_noise_scale), DYNAMIC_LABELS[m])
                };
                for (k, b) in base.iter().enumerate() {
                    let e: f64 = rng.sample(StandardNormal);
                    // stored as float32 on disk; keep memory and file identical
                    feats[(cell, k)] = (b + noise * e) as f32 as f64;
                }
                labels[cell] = label;
            }
            let r = VIEW_JITTER_M * rng.random::<f64>().sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            geotags.push(GeoTag::planar(center.0 + r * theta.cos(), center.1 + r * theta.sin()));
            sets.push(LocalFeatureSet::new(
                format!("p{p:04}_v{v:02}"),
                spec.height,
                spec.width,
                feats,
                Some(labels),
            )?);
            places.push(p);
        }
    }
    Ok(SyntheticDataset {
        sets,
        geotags,
        places,
        views_per_place: spec.views_per_place,
    })
}
