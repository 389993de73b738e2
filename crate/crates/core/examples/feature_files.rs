//! Generate a small synthetic dataset and round-trip it through the on-disk formats.
//!
//! cargo run --example feature_files

use shadowvlad::features::{
    generate_synthetic_dataset, read_dataset_dir, read_feature_file, write_dataset_dir, write_feature_file, GeoTag,
    SyntheticDataset, SyntheticPlaceSpec,
};

fn main() -> shadowvlad::Result<()> {
    let spec = SyntheticPlaceSpec {
        num_places: 6,
        views_per_place: 3,
        ..SyntheticPlaceSpec::default()
    };
    let ds = generate_synthetic_dataset(&spec)?;
    let first = &ds.sets[0];
    println!(
        "{} images, first is {} with a {}x{} grid of {}-d features",
        ds.sets.len(),
        first.image_id(),
        first.height(),
        first.width(),
        first.depth()
    );

    let dir = std::env::temp_dir().join("shadowvlad-feature-files");
    let single = dir.join("single.srlf");
    std::fs::create_dir_all(&dir)?;
    write_feature_file(first, &single)?;
    let back = read_feature_file(&single)?;
    assert_eq!(&back, first);
    println!("single file: {} bytes", std::fs::metadata(&single)?.len());

    let tags: Vec<(String, GeoTag)> = ds
        .sets
        .iter()
        .zip(&ds.geotags)
        .map(|(s, t)| (s.image_id().to_string(), *t))
        .collect();
    let split = ds.split(0.2);
    write_dataset_dir(&dir, &ds.sets, &tags, Some(&split), Some(&SyntheticDataset::partition()))?;
    let files = read_dataset_dir(&dir)?;
    println!(
        "dataset directory {} holds {} images, {} in the split manifest",
        dir.display(),
        files.sets.len(),
        files.split.map_or(0, |s| s.entries.len())
    );
    Ok(())
}
