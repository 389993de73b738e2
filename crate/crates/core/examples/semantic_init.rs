//! Semantic-constrained initialization suppresses dynamic-labeled features.
//!
//! cargo run --example semantic_init

use shadowvlad::encoding::attention_maps;
use shadowvlad::features::{generate_synthetic_dataset, LabelKind, SyntheticDataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_normal, init_semantic, sample_pool, SemanticInitConfig};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec::default())?;
    let partition = SyntheticDataset::partition();
    let pool = sample_pool(&ds.sets, 20000, 3)?;
    let cfg = SemanticInitConfig {
        clusters: 16,
        shadows: 2,
        candidates: None,
        scale: 30.0,
        seed: 3,
    };
    let semantic = init_semantic(&pool, &partition, &cfg)?;
    let normal = init_normal(pool.features.view(), 16, 2, 30.0, 3)?;

    for (name, model) in [("normal", &normal), ("semantic", &semantic)] {
        let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
        for fs in &ds.sets {
            let maps = attention_maps(fs, model)?;
            let labels = fs.labels().expect("synthetic features are labeled");
            for (i, &l) in labels.iter().enumerate() {
                // saliency of a feature: sum over clusters of alpha * beta
                let s: f64 = maps.alpha.row(i).iter().zip(maps.beta.row(i)).map(|(a, b)| a * b).sum();
                let slot = match partition.kind(l) {
                    LabelKind::Static => 0,
                    LabelKind::Dynamic => 1,
                    LabelKind::Unused => continue,
                };
                sums[slot] += s;
                counts[slot] += 1;
            }
        }
        println!(
            "{name:>8}: mean saliency static {:.3} dynamic {:.3}",
            sums[0] / counts[0] as f64,
            sums[1] / counts[1] as f64
        );
    }
    Ok(())
}
