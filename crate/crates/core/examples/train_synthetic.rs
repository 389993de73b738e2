//! Train a small model on synthetic places and print the history.
//!
//! cargo run --release --example train_synthetic

use shadowvlad::features::{generate_synthetic_dataset, Split, SyntheticDataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_semantic, sample_pool, SemanticInitConfig};
use shadowvlad::training::{train, PlaceDataset, SgdConfig};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec::default())?;
    let data = PlaceDataset::from_synthetic(&ds, 0.2)?;
    let train_ids: Vec<&str> = data.split.ids_in(Split::Train);
    let train_sets: Vec<_> = ds
        .sets
        .iter()
        .filter(|s| train_ids.contains(&s.image_id()))
        .cloned()
        .collect();
    let pool = sample_pool(&train_sets, 20000, 5)?;
    let model = init_semantic(
        &pool,
        &SyntheticDataset::partition(),
        &SemanticInitConfig {
            clusters: 16,
            shadows: 2,
            candidates: None,
            scale: 30.0,
            seed: 5,
        },
    )?;

    let cfg = SgdConfig {
        epochs: 6,
        seed: 5,
        ..SgdConfig::default()
    };
    let out = train(&data, &model, &cfg)?;
    let mut csv = Vec::new();
    out.history.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!(
        "initial val recall@1 {:.3}, returned epoch {}",
        out.history.initial_val_recall_at_1, out.history.best_epoch
    );
    Ok(())
}
