//! Encode one image and inspect its attention weights.
//!
//! cargo run --example encode_image

use shadowvlad::encoding::{attention_maps, encode, encode_netvlad, ClusterModel};
use shadowvlad::features::{generate_synthetic_dataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_normal, sample_pool};

fn main() -> shadowvlad::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticPlaceSpec::default())?;
    let pool = sample_pool(&ds.sets, 5000, 1)?;
    let model = init_normal(pool.features.view(), 16, 2, 30.0, 1)?;
    let image = &ds.sets[0];

    let desc = encode(image, &model)?;
    println!("descriptor: {} values in {} blocks, norm {:.12}", desc.len(), model.num_clusters(), desc.norm());

    let maps = attention_maps(image, &model)?;
    for i in 0..3 {
        let row = maps.alpha.row(i);
        let (k, a) = row
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (k, &a)| if a > best.1 { (k, a) } else { best });
        println!("feature {i}: strongest cluster {k} alpha {a:.3} beta {:.3}", maps.beta[(i, k)]);
    }

    // without shadows the descriptor is plain soft-assignment VLAD
    let plain = ClusterModel::without_shadows(model.representatives().clone(), model.scale())?;
    let a = encode(image, &plain)?;
    let b = encode_netvlad(image, &plain)?;
    let gap = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("S=0 against the baseline encoder: max difference {gap:e}");
    Ok(())
}
