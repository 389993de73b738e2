mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use shadowvlad::encoding::{attention_maps, encode, encode_netvlad, squared_distance};
use shadowvlad::evaluation::{recall_at, DescriptorIndex};
use shadowvlad::features::{GeoTag, LocalFeatureSet};
use shadowvlad::training::{mine_tuple, Candidate, MiningConfig};

#[derive(Debug, Clone)]
struct Shape {
    k: usize,
    s: usize,
    d: usize,
    h: usize,
    w: usize,
    scale: f64,
    seed: u64,
}

fn shapes() -> impl Strategy<Value = Shape> {
    (1usize..6, 0usize..4, 2usize..9, 1usize..4, 1usize..4, 0.1f64..60.0, any::<u64>())
        .prop_map(|(k, s, d, h, w, scale, seed)| Shape { k, s, d, h, w, scale, seed })
}

fn fake_db(seed: u64, size: usize, dim: usize, spread: f64) -> Vec<(String, Vec<f64>, GeoTag)> {
    let mut r = rng(seed);
    (0..size)
        .map(|i| {
            let tag = GeoTag::planar(spread * gaussian(&mut r), spread * gaussian(&mut r));
            (format!("db{i:03}"), (0..dim).map(|_| gaussian(&mut r)).collect(), tag)
        })
        .collect()
}

fn fake_queries(seed: u64, size: usize, dim: usize, spread: f64) -> Vec<(Vec<f64>, GeoTag)> {
    fake_db(seed ^ 0x5eed, size, dim, spread).into_iter().map(|(_, d, t)| (d, t)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn descriptor_is_unit_and_matches_reference(sh in shapes()) {
        let mut r = rng(sh.seed);
        let model = random_model(&mut r, sh.k, sh.s, sh.d, sh.scale, 0.3);
        let fs = random_set(&mut r, "x", sh.h, sh.w, sh.d);
        let desc = encode(&fs, &model).unwrap();
        prop_assert!((desc.norm() - 1.0).abs() < 1e-9);
        let reference = reference_descriptor(&fs, &model);
        for (a, b) in desc.values().iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_a_distribution(sh in shapes()) {
        let mut r = rng(sh.seed);
        let model = random_model(&mut r, sh.k, sh.s, sh.d, sh.scale, 0.3);
        let fs = random_set(&mut r, "x", sh.h, sh.w, sh.d);
        let maps = attention_maps(&fs, &model).unwrap();
        for row in maps.alpha.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
        prop_assert!(maps.beta.iter().all(|&b| (0.0..=1.0).contains(&b)));
        if sh.s == 0 {
            prop_assert!(maps.beta.iter().all(|&b| b == 1.0));
        }
    }

    #[test]
    fn no_shadows_reduces_to_soft_assignment(mut sh in shapes()) {
        sh.s = 0;
        let mut r = rng(sh.seed);
        let model = random_model(&mut r, sh.k, 0, sh.d, sh.scale, 0.3);
        let fs = random_set(&mut r, "x", sh.h, sh.w, sh.d);
        let a = encode(&fs, &model).unwrap();
        let b = encode_netvlad(&fs, &model).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_ignores_feature_order(sh in shapes(), rot in 0usize..16) {
        let mut r = rng(sh.seed);
        let model = random_model(&mut r, sh.k, sh.s, sh.d, sh.scale, 0.3);
        let fs = random_set(&mut r, "x", sh.h, sh.w, sh.d);
        let n = sh.h * sh.w;
        let x = fs.features();
        let shuffled = Array2::from_shape_fn((n, sh.d), |(i, j)| x[((i + rot) % n, j)]);
        let moved = LocalFeatureSet::new("y", sh.h, sh.w, shuffled, None).unwrap();
        let a = encode(&fs, &model).unwrap();
        let b = encode(&moved, &model).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_matches_oracle_and_is_monotone(seed in any::<u64>(), size in 5usize..60, radius in 1.0f64..80.0) {
        let db = fake_db(seed, size, 6, 60.0);
        let queries = fake_queries(seed, 20, 6, 60.0);
        let index = DescriptorIndex::build(db.clone()).unwrap();
        let n: Vec<usize> = (1..=size).collect();
        let report = recall_at(&index, &queries, &n, radius).unwrap();
        prop_assert_eq!(&report.recalls, &brute_force_recall(&db, &queries, &n, radius));
        prop_assert!(report.recalls.windows(2).all(|w| w[0] <= w[1]));
        let wider = recall_at(&index, &queries, &n, radius * 2.0).unwrap();
        prop_assert!(report.recalls.iter().zip(&wider.recalls).all(|(a, b)| a <= b));
    }

    #[test]
    fn recall_ignores_database_order(seed in any::<u64>(), size in 2usize..40, rot in 1usize..40) {
        let db = fake_db(seed, size, 5, 40.0);
        let queries = fake_queries(seed, 15, 5, 40.0);
        let mut rotated = db.clone();
        rotated.rotate_left(rot % size);
        let n = [1, 3, 10];
        let a = recall_at(&DescriptorIndex::build(db).unwrap(), &queries, &n, 25.0).unwrap();
        let b = recall_at(&DescriptorIndex::build(rotated).unwrap(), &queries, &n, 25.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mined_tuples_respect_radii(seed in any::<u64>(), size in 2usize..50, pos in 2.0f64..20.0, gap in 0.0f64..30.0, neg in 1usize..12) {
        let cfg = MiningConfig { positive_radius: pos, negative_radius: pos + gap, num_negatives: neg };
        let db = fake_db(seed, size, 4, 30.0);
        let cands: Vec<Candidate> = db.iter().map(|(id, d, t)| Candidate { id, descriptor: d, geotag: *t }).collect();
        let queries = fake_queries(seed, 10, 4, 30.0);
        for (qi, (d, t)) in queries.iter().enumerate() {
            let q = Candidate { id: "q", descriptor: d, geotag: *t };
            let Ok(tuple) = mine_tuple(qi, &q, &cands, &cfg) else {
                prop_assert!(cands.iter().all(|c| c.geotag.distance(t) > cfg.positive_radius));
                continue;
            };
            prop_assert!(cands[tuple.positive].geotag.distance(t) <= cfg.positive_radius);
            prop_assert!(tuple.negatives.len() <= neg);
            let far = cands.iter().filter(|c| c.geotag.distance(t) > cfg.negative_radius).count();
            prop_assert_eq!(tuple.negatives.len(), far.min(neg));
            for &i in &tuple.negatives {
                prop_assert!(cands[i].geotag.distance(t) > cfg.negative_radius);
            }
            let dists: Vec<f64> = tuple.negatives.iter().map(|&i| squared_distance(d, cands[i].descriptor)).collect();
            prop_assert!(dists.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
