use std::cmp::Ordering;

use crate::encoding::squared_distance;
use crate::error::{Error, Result};
use crate::features::GeoTag;

/// Geographic thresholds and tuple size for weakly supervised mining.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    /// Database images at most this far from the query are potential positives.
    pub positive_radius: f64,
    /// Database images farther than this are definite negatives.
    pub negative_radius: f64,
    pub num_negatives: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            positive_radius: 10.0,
            negative_radius: 25.0,
            num_negatives: 10,
        }
    }
}

/// An image as seen by the miner: id, current descriptor, position.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub id: &'a str,
    pub descriptor: &'a [f64],
    pub geotag: GeoTag,
}

/// One query, its best positive and its hardest negatives. Indices refer to
/// the query and database slices given to the miner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTuple {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningOutcome {
    pub tuples: Vec<TrainingTuple>,
    pub skipped_no_positive: usize,
    pub skipped_no_negative: usize,
}

fn by_distance_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Picks the nearest (in descriptor space) geographic positive and the
/// `num_negatives` nearest geographic negatives. Ties go to the smaller id.
/// A tuple with no definite negative is returned with an empty list.
pub fn mine_tuple(query_index: usize, query: &Candidate<'_>, database: &[Candidate<'_>], cfg: &MiningConfig) -> Result<TrainingTuple> {
    let mut positives: Vec<(f64, &str, usize)> = Vec::new();
    let mut negatives: Vec<(f64, &str, usize)> = Vec::new();
    for (i, c) in database.iter().enumerate() {
        let geo = query.geotag.distance(&c.geotag);
        if geo <= cfg.positive_radius {
            positives.push((squared_distance(query.descriptor, c.descriptor), c.id, i));
        } else if geo > cfg.negative_radius {
            negatives.push((squared_distance(query.descriptor, c.descriptor), c.id, i));
        }
    }
    let positive = positives
        .iter()
        .min_by(|a, b| by_distance_then_id(&(a.0, a.1), &(b.0, b.1)))
        .map(|p| p.2)
        .ok_or_else(|| Error::NoPositive(query.id.to_string()))?;
    negatives.sort_by(|a, b| by_distance_then_id(&(a.0, a.1), &(b.0, b.1)));
    Ok(TrainingTuple {
        query: query_index,
        positive,
        negatives: negatives.iter().take(cfg.num_negatives).map(|n| n.2).collect(),
    })
}

/// Mines one tuple per query. Queries without a positive or without any
/// negative are skipped and counted.
pub fn mine_tuples(queries: &[Candidate<'_>], database: &[Candidate<'_>], cfg: &MiningConfig) -> MiningOutcome {
    let mut out = MiningOutcome::default();
    for (qi, q) in queries.iter().enumerate() {
        match mine_tuple(qi, q, database, cfg) {
            Ok(t) if t.negatives.is_empty() => out.skipped_no_negative += 1,
            Ok(t) => out.tuples.push(t),
            Err(_) => out.skipped_no_positive += 1,
        }
    }
    if out.skipped_no_positive > 0 {
        log::warn!("{} queries without a geographic positive were skipped", out.skipped_no_positive);
    }
    out
}
