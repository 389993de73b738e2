//! Write the alpha/beta maps of two images as CSV on stdout.
//!
//! cargo run --example attention_export > attention.csv

use std::io::Write;

use shadowvlad::encoding::{attention_maps, write_attention_csv};
use shadowvlad::features::{generate_synthetic_dataset, SyntheticDataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_semantic, sample_pool, SemanticInitConfig};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec {
        num_places: 10,
        ..SyntheticPlaceSpec::default()
    })?;
    let pool = sample_pool(&ds.sets, 5000, 6)?;
    let model = init_semantic(
        &pool,
        &SyntheticDataset::partition(),
        &SemanticInitConfig {
            clusters: 4,
            shadows: 1,
            candidates: None,
            scale: 30.0,
            seed: 6,
        },
    )?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (j, fs) in ds.sets.iter().take(2).enumerate() {
        write_attention_csv(&mut out, fs, &attention_maps(fs, &model)?, j == 0)?;
    }
    out.flush()?;
    Ok(())
}
