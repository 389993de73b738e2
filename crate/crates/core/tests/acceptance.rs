//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use ndarray::Array2;
use shadowvlad::encoding::{aggregate, attention_maps, encode, encode_netvlad, ClusterModel};
use shadowvlad::evaluation::{recall_at, DescriptorIndex};
use shadowvlad::features::{generate_synthetic_dataset, LabelKind, Split, SyntheticDataset, SyntheticPlaceSpec};
use shadowvlad::init::{init_semantic, sample_pool, SemanticInitConfig, DEFAULT_POOL_SIZE};
use shadowvlad::training::{random_instance, tuple_gradients, GradCheckConfig};
use shadowvlad::whitening::{fit_whitening, DEFAULT_EPSILON};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_correctness() -> Check {
    let cfg = GradCheckConfig::default();
    let h = 1e-5;
    let floor = shadowvlad::training::RELATIVE_ERROR_FLOOR;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = random_instance(1000 + seed, &cfg).map_err(|e| e.to_string())?;
        let negs: Vec<_> = inst.negatives.iter().collect();
        let (_, g) = tuple_gradients(&inst.query, &inst.positive, &negs, &inst.model, inst.margin)
            .map_err(|e| e.to_string())?;
        let loss = |m: &ClusterModel| reference_tuple_loss(&inst.query, &inst.positive, &inst.negatives, m, inst.margin);
        let mut rel = |a: f64, probe: &mut dyn FnMut(&mut ClusterModel, f64)| {
            let mut up = inst.model.clone();
            probe(&mut up, h);
            let mut down = inst.model.clone();
            probe(&mut down, -h);
            let n = (loss(&up) - loss(&down)) / (2.0 * h);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
        };
        for (idx, &a) in g.weights.indexed_iter() {
            rel(a, &mut |m, d| m.weights_mut()[idx] += d);
        }
        for (idx, &a) in g.biases.indexed_iter() {
            rel(a, &mut |m, d| m.biases_mut()[idx] += d);
        }
        for (idx, &a) in g.residual_centroids.indexed_iter() {
            rel(a, &mut |m, d| m.residual_centroids_mut()[idx] += d);
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst < 1e-5 && elapsed < Duration::from_secs(30),
        format!("20 instances, max relative error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn reduction_equivalence() -> Check {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 2 + i % 7;
        let k = 1 + i % 5;
        let model = random_model(&mut r, k, 0, d, 0.5 + (i % 10) as f64 * 3.0, 0.2);
        let fs = random_set(&mut r, "img", 1 + i % 3, 2 + i % 4, d);
        let a = encode(&fs, &model).map_err(|e| e.to_string())?;
        let b = encode_netvlad(&fs, &model).map_err(|e| e.to_string())?;
        worst = worst.max(max_gap(a.values(), b.values()));
    }
    ensure(worst <= 1e-12, format!("100 images, max difference {worst:e}"))
}

fn affine_distance_equivalence() -> Check {
    let mut r = rng(12);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let d = 2 + i % 7;
        let k = 1 + i % 6;
        let s = i % 4;
        let scale = [0.1, 1.0, 5.0, 30.0][i % 4];
        let model = random_model(&mut r, k, s, d, scale, 0.0);
        let x = vec![random_unit(&mut r, d)];
        let (a1, b1) = affine_attention(&x, &model);
        let (a2, b2) = distance_attention(&x, &model);
        worst = worst.max(max_gap(&a1[0], &a2[0])).max(max_gap(&b1[0], &b2[0]));
        // the library's own attention must agree too
        let fs = shadowvlad::features::LocalFeatureSet::new("u", 1, 1, Array2::from_shape_vec((1, d), x[0].clone()).unwrap(), None)
            .unwrap();
        let maps = attention_maps(&fs, &model).map_err(|e| e.to_string())?;
        worst = worst
            .max(max_gap(maps.alpha.row(0).as_slice().unwrap(), &a2[0]))
            .max(max_gap(maps.beta.row(0).as_slice().unwrap(), &b2[0]));
    }
    ensure(worst <= 1e-10, format!("1000 trials, max difference {worst:e}"))
}

fn aggregation_oracle() -> Check {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for d in 2..=8 {
        for k in 1..=8 {
            for s in [0, 1, 2, 3] {
                let model = random_model(&mut r, k, s, d, 1.0 + (d * k) as f64 / 4.0, 0.3);
                let fs = random_set(&mut r, "img", 1 + (k % 3), 1 + (d % 4), d);
                let x = l2_rows(&fs);
                let (alpha, beta) = affine_attention(&x, &model);
                let raw = triple_loop_raw(&x, &alpha, &beta, &model);
                let (lib_raw, _) = aggregate(&fs.normalize().unwrap(), &model).map_err(|e| e.to_string())?;
                worst = worst.max(max_gap(lib_raw.values(), &raw));
                let lib = encode(&fs, &model).map_err(|e| e.to_string())?;
                worst = worst.max(max_gap(lib.values(), &finalize_loop(&raw, d)));
                cases += 1;
            }
        }
    }
    ensure(worst <= 1e-12, format!("{cases} instances, max difference {worst:e}"))
}

fn normalization() -> Check {
    let mut r = rng(14);
    let (mut norm_dev, mut sum_dev, mut beta_lo, mut beta_hi) = (0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    let mut check = |fs: &shadowvlad::features::LocalFeatureSet, model: &ClusterModel| -> Result<(), String> {
        let desc = encode(fs, model).map_err(|e| e.to_string())?;
        norm_dev = norm_dev.max((desc.norm() - 1.0).abs());
        let maps = attention_maps(fs, model).map_err(|e| e.to_string())?;
        for row in maps.alpha.rows() {
            sum_dev = sum_dev.max((row.sum() - 1.0).abs());
        }
        for &b in maps.beta.iter() {
            beta_lo = beta_lo.min(b);
            beta_hi = beta_hi.max(b);
        }
        Ok(())
    };
    for i in 0..300 {
        let d = 2 + i % 9;
        let model = random_model(&mut r, 1 + i % 8, i % 4, d, [0.5, 5.0, 30.0, 100.0][i % 4], 0.5);
        check(&random_set(&mut r, "img", 1 + i % 4, 1 + i % 5, d), &model)?;
    }
    ensure(
        norm_dev <= 1e-9 && sum_dev <= 1e-9 && beta_lo >= 0.0 && beta_hi <= 1.0,
        format!("300 images: |norm-1| {norm_dev:.1e}, |sum alpha-1| {sum_dev:.1e}, beta in [{beta_lo:.3e}, {beta_hi:.6}]"),
    )
}

fn semantic_init_behavior() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [7u64, 8, 9] {
        let ds = generate_synthetic_dataset(&SyntheticPlaceSpec {
            rng_seed: seed,
            ..SyntheticPlaceSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let partition = SyntheticDataset::partition();
        let split = ds.split(0.2);
        let train_ids = split.ids_in(Split::Train);
        let train: Vec<_> = ds.sets.iter().filter(|s| train_ids.contains(&s.image_id())).cloned().collect();
        let pool = sample_pool(&train, DEFAULT_POOL_SIZE, seed).map_err(|e| e.to_string())?;
        let cfg = SemanticInitConfig {
            clusters: 64,
            shadows: 2,
            candidates: None,
            scale: 30.0,
            seed,
        };
        let model = init_semantic(&pool, &partition, &cfg).map_err(|e| e.to_string())?;
        let (mut stat, mut dynm) = ((0.0, 0usize), (0.0, 0usize));
        for fs in &ds.sets {
            let maps = attention_maps(fs, &model).map_err(|e| e.to_string())?;
            for (i, &l) in fs.labels().unwrap().iter().enumerate() {
                let saliency: f64 = (0..64).map(|k| maps.alpha[(i, k)] * maps.beta[(i, k)]).sum();
                match partition.kind(l) {
                    LabelKind::Static => {
                        stat.0 += saliency;
                        stat.1 += 1;
                    }
                    LabelKind::Dynamic => {
                        dynm.0 += saliency;
                        dynm.1 += 1;
                    }
                    LabelKind::Unused => {}
                }
            }
        }
        let (ms, md) = (stat.0 / stat.1 as f64, dynm.0 / dynm.1 as f64);
        ok &= ms - md >= 0.05;
        lines.push(format!("seed {seed}: static {ms:.3} dynamic {md:.3}"));
    }
    ensure(ok, lines.join("; "))
}

fn retrieval_oracle() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [21u64, 22, 23] {
        let ds = generate_synthetic_dataset(&SyntheticPlaceSpec {
            num_places: 200,
            views_per_place: 2,
            dim: 16,
            height: 3,
            width: 3,
            rng_seed: seed,
            ..SyntheticPlaceSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let mut r = rng(seed);
        let proj: Vec<Vec<f64>> = (0..12).map(|_| (0..16).map(|_| gaussian(&mut r)).collect()).collect();
        let fake = |fs: &shadowvlad::features::LocalFeatureSet| -> Vec<f64> {
            let x = fs.features();
            let mean: Vec<f64> = (0..16).map(|j| (0..x.nrows()).map(|i| x[(i, j)]).sum::<f64>()).collect();
            proj.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| a * b).sum()).collect()
        };
        let mut db = Vec::new();
        let mut queries = Vec::new();
        for (i, (fs, tag)) in ds.sets.iter().zip(&ds.geotags).enumerate() {
            if i % 2 == 0 {
                db.push((fs.image_id().to_string(), fake(fs), *tag));
            } else {
                queries.push((fake(fs), *tag));
            }
        }
        let n = [1, 5, 10];
        let index = DescriptorIndex::build(db.clone()).map_err(|e| e.to_string())?;
        let report = recall_at(&index, &queries, &n, 25.0).map_err(|e| e.to_string())?;
        let oracle = brute_force_recall(&db, &queries, &n, 25.0);
        let monotone = report.recalls.windows(2).all(|w| w[0] <= w[1]);
        ok &= report.recalls == oracle && monotone && db.len() == 200;
        lines.push(format!("seed {seed}: {:?}", report.recalls));
    }
    ensure(ok, format!("200-image database; {}", lines.join("; ")))
}

fn whitening_identity() -> Check {
    let mut r = rng(31);
    let model = random_model(&mut r, 4, 2, 8, 1.0, 0.0);
    let train: Vec<Vec<f64>> = (0..400)
        .map(|i| encode(&random_set(&mut r, &format!("w{i}"), 2, 2, 8), &model).map(|d| d.into_values()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let dim = train[0].len();
    let fit = fit_whitening(&train, dim, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let out: Vec<Vec<f64>> = train
        .iter()
        .map(|x| fit.transform.project(x).map(|y| y.to_vec()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let m = out.len() as f64;
    let mut mean = vec![0.0; dim];
    for y in &out {
        for j in 0..dim {
            mean[j] += y[j] / m;
        }
    }
    let mut dev: f64 = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let c: f64 = out.iter().map(|y| (y[a] - mean[a]) * (y[b] - mean[b])).sum::<f64>() / (m - 1.0);
            dev = dev.max((c - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    let lambda_min = fit.eigenvalues.last().copied().unwrap_or(0.0);
    ensure(
        dev <= 1e-6 && fit.transform.output_dim() == dim,
        format!(
            "{} training descriptors of length {dim}, max |cov - I| {dev:.1e}, smallest eigenvalue {lambda_min:.1e}",
            out.len()
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_shadowvlad")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_summary(dir: &Path) -> Result<BTreeMap<String, f64>, String> {
    let text = fs::read_to_string(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let mut rows = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let name = parts.next().unwrap_or_default().to_string();
        let r1: f64 = parts.next().and_then(|v| v.parse().ok()).ok_or("bad summary row")?;
        rows.insert(name, r1);
    }
    Ok(rows)
}

fn learning_behavior() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("repro");
    let start = Instant::now();
    run_cli(&["repro-synthetic", "--seed", "1", "--out", out.to_str().unwrap()])?;
    let elapsed = start.elapsed();
    let s = read_summary(&out)?;
    let history = fs::read_to_string(out.join("sc_history.csv")).map_err(|e| e.to_string())?;
    let epochs = history.lines().count() - 1;
    let (sc, base, init) = (s["sc"], s["baseline"], s["sc_init"]);
    let places = fs::read_to_string(out.join("data/geotags.csv")).map_err(|e| e.to_string())?.lines().count() - 1;
    ensure(
        elapsed < Duration::from_secs(120) && sc >= base && sc >= init && epochs == 10,
        format!(
            "{places} images, {epochs} epochs in {:.1}s; val recall@1 trained {sc:.3}, S=0 baseline {base:.3}, at init {init:.3}",
            elapsed.as_secs_f64()
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let data = p("data");
    run_cli(&["synth", "--seed", "4", "--out", &data, "--places", "16", "--views", "3"])?;
    run_cli(&["init", "--seed", "4", "--data", &data, "--mode", "normal", "--clusters", "8", "--out", &p("normal.srlm")])?;
    run_cli(&["init", "--seed", "4", "--data", &data, "--mode", "semantic", "--clusters", "8", "--out", &p("sc.srlm")])?;
    run_cli(&[
        "train",
        "--seed",
        "4",
        "--data",
        &data,
        "--model",
        &p("sc.srlm"),
        "--epochs",
        "2",
        "--out",
        &p("trained.srlm"),
        "--history",
        &p("history.csv"),
        "--checkpoint",
        &p("ck.srlc"),
    ])?;
    for (split, role, name) in [("val", "db", "db.srld"), ("val", "query", "q.srld"), ("train", "all", "train.srld")] {
        run_cli(&[
            "encode",
            "--data",
            &data,
            "--model",
            &p("trained.srlm"),
            "--split",
            split,
            "--role",
            role,
            "--out",
            &p(name),
        ])?;
    }
    run_cli(&[
        "whiten",
        "--fit",
        &p("train.srld"),
        "--whiten-dim",
        "32",
        "--save-transform",
        &p("w.srlw"),
        "--input",
        &p("db.srld"),
        "--out",
        &p("wdb.srld"),
    ])?;
    run_cli(&[
        "eval",
        "--db",
        &p("db.srld"),
        "--queries",
        &p("q.srld"),
        "--geotags",
        &format!("{data}/geotags.csv"),
        "--out",
        &p("recall.csv"),
        "--gnuplot",
        &p("recall.dat"),
    ])?;
    run_cli(&["attention-export", "--data", &data, "--model", &p("trained.srlm"), "--split", "val", "--out", &p("att.csv")])?;
    run_cli(&["gradcheck", "--seed", "4", "--instances", "2"])?;
    run_cli(&["repro-synthetic", "--seed", "4", "--clusters", "8", "--epochs", "2", "--out", &p("repro")])?;
    Ok(())
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    ensure(
        differing.is_empty() && fa.len() == fb.len(),
        format!("{} output files compared across two runs, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn main() {
    let checks: [(&str, fn() -> Check); 10] = [
        ("gradient correctness", gradient_correctness),
        ("reduction equivalence", reduction_equivalence),
        ("affine/distance equivalence", affine_distance_equivalence),
        ("aggregation oracle", aggregation_oracle),
        ("normalization", normalization),
        ("semantic-init behavior", semantic_init_behavior),
        ("learning behavior", learning_behavior),
        ("retrieval oracle", retrieval_oracle),
        ("whitening", whitening_identity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
