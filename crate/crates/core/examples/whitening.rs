//! Fit PCA whitening on training descriptors and apply it.
//!
//! cargo run --example whitening

use shadowvlad::encoding::encode;
use shadowvlad::features::{generate_synthetic_dataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_normal, sample_pool};
use shadowvlad::whitening::{fit_whitening, DEFAULT_EPSILON};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec::default())?;
    let pool = sample_pool(&ds.sets, 5000, 2)?;
    let model = init_normal(pool.features.view(), 4, 1, 30.0, 2)?;
    let descs = ds.sets.iter().map(|s| encode(s, &model)).collect::<shadowvlad::Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = descs.iter().map(|d| d.values()).collect();

    let fit = fit_whitening(&rows, 64, DEFAULT_EPSILON)?;
    let t = &fit.transform;
    println!(
        "{} descriptors, {} -> {} dims, top eigenvalues {:.2e} {:.2e} {:.2e}",
        rows.len(),
        t.input_dim(),
        t.output_dim(),
        fit.eigenvalues[0],
        fit.eigenvalues[1],
        fit.eigenvalues[2]
    );
    let w = t.apply(&descs[0])?;
    println!("whitened norm {:.12}, state {:?}", w.norm(), w.state());
    Ok(())
}
