//! Recall@N of encoded queries against an exact nearest-neighbor index.
//!
//! cargo run --example recall_benchmark

use shadowvlad::encoding::encode;
use shadowvlad::evaluation::{recall_at, DescriptorIndex, DEFAULT_SUCCESS_RADIUS_M};
use shadowvlad::features::{generate_synthetic_dataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_normal, sample_pool};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec::default())?;
    let pool = sample_pool(&ds.sets, 10000, 4)?;
    let model = init_normal(pool.features.view(), 16, 0, 30.0, 4)?;
    let views = ds.views_per_place;

    let mut db = Vec::new();
    let mut queries = Vec::new();
    for (i, (fs, tag)) in ds.sets.iter().zip(&ds.geotags).enumerate() {
        let d = encode(fs, &model)?.into_values();
        if i % views == 0 {
            db.push((fs.image_id().to_string(), d, *tag));
        } else {
            queries.push((d, *tag));
        }
    }
    let index = DescriptorIndex::build(db)?;
    let report = recall_at(&index, &queries, &[1, 5, 10], DEFAULT_SUCCESS_RADIUS_M)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));

    let top = index.query(&queries[0].0, 3)?;
    for n in top {
        println!("{} at {:.4}", index.id(n.index), n.distance);
    }
    Ok(())
}
