use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{Invocation, Settings};
use crate::encoding::{attention_maps, encode, encode_netvlad, write_attention_csv, ClusterModel, DescriptorSet, DEFAULT_SCALE};
use crate::error::{Error, Result};
use crate::evaluation::{recall_at, DescriptorIndex, RecallReport, DEFAULT_SUCCESS_RADIUS_M};
use crate::features::{
    generate_synthetic_dataset, read_dataset_dir, read_geotags, write_dataset_dir, DatasetFiles, DatasetSplit, GeoTag,
    LocalFeatureSet, Role, SemanticPartition, Split, SyntheticDataset, SyntheticPlaceSpec,
};
use crate::init::{init_normal, init_semantic, sample_pool, SemanticInitConfig, DEFAULT_POOL_SIZE};
use crate::training::{gradient_check, resume, train, Checkpoint, GradCheckConfig, MiningConfig, PlaceDataset, SgdConfig, TrainOutcome};
use crate::whitening::{fit_whitening, fit_whitening_strict, WhiteningTransform, DEFAULT_EPSILON};

pub const DEFAULT_CLUSTERS: usize = 64;
pub const DEFAULT_SHADOWS: usize = 2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_WHITEN_DIM: usize = 4096;
pub const DEFAULT_RECALL_N: [usize; 3] = [1, 5, 10];
pub const DEFAULT_GRADCHECK_INSTANCES: u64 = 20;
pub const DEFAULT_GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const REPRO_EPOCHS: usize = 10;

pub(super) fn dispatch(inv: &Invocation) -> Result<()> {
    let s = &inv.settings;
    match inv.command.name {
        "synth" => synth(s, inv.seed()?),
        "init" => init(s, inv.seed()?),
        "train" => train_cmd(s, inv.seed()?),
        "encode" => encode_cmd(s),
        "whiten" => whiten(s),
        "eval" => eval(s),
        "gradcheck" => gradcheck(s, inv.seed()?),
        "attention-export" => attention_export(s),
        "repro-synthetic" => repro(s, inv.seed()?),
        other => unreachable!("unregistered command {other}"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn synthetic_spec(s: &Settings, seed: u64) -> Result<SyntheticPlaceSpec> {
    let d = SyntheticPlaceSpec::default();
    let spec = SyntheticPlaceSpec {
        num_places: s.get_or("places", d.num_places)?,
        views_per_place: s.get_or("views", d.views_per_place)?,
        dim: s.get_or("dim", d.dim)?,
        height: s.get_or("height", d.height)?,
        width: s.get_or("width", d.width)?,
        informative_fraction: s.get_or("informative_fraction", d.informative_fraction)?,
        clutter_noise_scale: s.get_or("clutter_noise", d.clutter_noise_scale)?,
        view_noise_scale: s.get_or("view_noise", d.view_noise_scale)?,
        rng_seed: seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn tagged(ds: &SyntheticDataset) -> Vec<(String, GeoTag)> {
    ds.sets
        .iter()
        .zip(&ds.geotags)
        .map(|(fs, t)| (fs.image_id().to_string(), *t))
        .collect()
}

fn val_fraction(s: &Settings) -> Result<f64> {
    let f = s.get_or("val_fraction", DEFAULT_VAL_FRACTION)?;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {f}")));
    }
    Ok(f)
}

fn synth(s: &Settings, seed: u64) -> Result<()> {
    let out: PathBuf = s.require("out")?;
    let ds = generate_synthetic_dataset(&synthetic_spec(s, seed)?)?;
    let split = ds.split(val_fraction(s)?);
    write_dataset_dir(&out, &ds.sets, &tagged(&ds), Some(&split), Some(&SyntheticDataset::partition()))?;
    println!("wrote {} images to {}", ds.sets.len(), out.display());
    Ok(())
}

/// Training-split images, or every image when no split manifest exists.
fn training_sets(files: &DatasetFiles) -> Vec<LocalFeatureSet> {
    match &files.split {
        Some(split) => {
            let ids: std::collections::HashSet<&str> = split.ids_in(Split::Train).into_iter().collect();
            files
                .sets
                .iter()
                .filter(|fs| ids.contains(fs.image_id()))
                .cloned()
                .collect()
        }
        None => files.sets.clone(),
    }
}

struct InitParams {
    clusters: usize,
    shadows: usize,
    scale: f64,
    pool_size: usize,
    candidates: Option<usize>,
}

fn init_params(s: &Settings) -> Result<InitParams> {
    let p = InitParams {
        clusters: s.get_or("clusters", DEFAULT_CLUSTERS)?,
        shadows: s.get_or("shadows", DEFAULT_SHADOWS)?,
        scale: s.get_or("scale", DEFAULT_SCALE)?,
        pool_size: s.get_or("pool_size", DEFAULT_POOL_SIZE)?,
        candidates: s.get("candidates")?,
    };
    if p.clusters == 0 || p.pool_size == 0 || !(p.scale > 0.0) {
        return Err(Error::Config("clusters, pool_size and scale must be positive".into()));
    }
    Ok(p)
}

fn init_model(sets: &[LocalFeatureSet], mode: &str, p: &InitParams, partition: &SemanticPartition, seed: u64) -> Result<ClusterModel> {
    let pool = sample_pool(sets, p.pool_size, seed)?;
    match mode {
        "normal" => init_normal(pool.features.view(), p.clusters, p.shadows, p.scale, seed),
        "semantic" => init_semantic(
            &pool,
            partition,
            &SemanticInitConfig {
                clusters: p.clusters,
                shadows: p.shadows,
                candidates: p.candidates,
                scale: p.scale,
                seed,
            },
        ),
        other => Err(Error::Config(format!("mode must be normal or semantic, got {other:?}"))),
    }
}

fn init(s: &Settings, seed: u64) -> Result<()> {
    let data: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let mode: String = s.get_or("mode", "normal".to_string())?;
    let p = init_params(s)?;
    let files = read_dataset_dir(&data)?;
    let partition = match s.get::<PathBuf>("partition")? {
        Some(path) => SemanticPartition::read(path)?,
        None => files.partition.clone().unwrap_or_else(SemanticPartition::cityscapes),
    };
    let model = init_model(&training_sets(&files), &mode, &p, &partition, seed)?;
    model.save(&out)?;
    println!(
        "initialized {mode} model K={} S={} D={} -> {}",
        model.num_clusters(),
        model.num_shadows(),
        model.depth(),
        out.display()
    );
    Ok(())
}

fn sgd_config(s: &Settings, seed: u64, default_epochs: usize) -> Result<SgdConfig> {
    let d = SgdConfig::default();
    let m = MiningConfig::default();
    let cfg = SgdConfig {
        learning_rate: s.get_or("learning_rate", d.learning_rate)?,
        momentum: s.get_or("momentum", d.momentum)?,
        weight_decay: s.get_or("weight_decay", d.weight_decay)?,
        margin: s.get_or("margin", d.margin)?,
        epochs: s.get_or("epochs", default_epochs)?,
        lr_halving_period: s.get_or("lr_halving_period", d.lr_halving_period)?,
        early_stop_patience: s.get_or("early_stop_patience", d.early_stop_patience)?,
        batch_size: s.get_or("batch_size", d.batch_size)?,
        mining: MiningConfig {
            positive_radius: s.get_or("positive_radius", m.positive_radius)?,
            negative_radius: s.get_or("negative_radius", m.negative_radius)?,
            num_negatives: s.get_or("num_negatives", m.num_negatives)?,
        },
        success_radius: s.get_or("success_radius", d.success_radius)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn place_dataset(files: DatasetFiles) -> Result<PlaceDataset> {
    let split = files
        .split
        .ok_or_else(|| Error::Config("dataset directory has no split.csv".into()))?;
    PlaceDataset::new(files.sets, &files.geotags, split)
}

fn write_history(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    outcome.history.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn train_cmd(s: &Settings, seed: u64) -> Result<()> {
    let data: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let cfg = sgd_config(s, seed, SgdConfig::default().epochs)?;
    let dataset = place_dataset(read_dataset_dir(&data)?)?;
    let outcome = match s.get::<PathBuf>("resume")? {
        Some(path) => resume(&dataset, Checkpoint::load(path)?, &cfg)?,
        None => {
            let model = ClusterModel::load(s.require::<PathBuf>("model")?)?;
            train(&dataset, &model, &cfg)?
        }
    };
    outcome.best_model.save(&out)?;
    if let Some(path) = s.get::<PathBuf>("history")? {
        write_history(&outcome, &path)?;
    }
    if let Some(path) = s.get::<PathBuf>("checkpoint")? {
        outcome.last.save(path)?;
    }
    let h = &outcome.history;
    println!(
        "val recall@1: initial {} best {} (epoch {}) -> {}",
        h.initial_val_recall_at_1,
        h.best_val_recall_at_1().unwrap_or(h.initial_val_recall_at_1),
        h.best_epoch,
        out.display()
    );
    Ok(())
}

fn select_ids(files: &DatasetFiles, s: &Settings) -> Result<Vec<usize>> {
    if let Some(ids) = s.list::<String>("ids")? {
        return ids
            .iter()
            .map(|id| {
                files
                    .sets
                    .iter()
                    .position(|fs| fs.image_id() == id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect();
    }
    let split: String = s.get_or("split", "all".to_string())?;
    let role: String = s.get_or("role", "all".to_string())?;
    let split = match split.as_str() {
        "all" => None,
        v => Some(v.parse::<Split>()?),
    };
    let role = match role.as_str() {
        "all" => None,
        v => Some(v.parse::<Role>()?),
    };
    if split.is_none() && role.is_none() {
        return Ok((0..files.sets.len()).collect());
    }
    let manifest: &DatasetSplit = files
        .split
        .as_ref()
        .ok_or_else(|| Error::Config("selecting by split or role needs split.csv".into()))?;
    let wanted: std::collections::HashSet<&str> = manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|v| e.split == v) && role.is_none_or(|v| e.role == v))
        .map(|e| e.image_id.as_str())
        .collect();
    Ok((0..files.sets.len())
        .filter(|&i| wanted.contains(files.sets[i].image_id()))
        .collect())
}

fn encode_sets(sets: &[&LocalFeatureSet], model: &ClusterModel, baseline: bool) -> Result<DescriptorSet> {
    let descs = sets
        .par_iter()
        .map(|fs| if baseline { encode_netvlad(fs, model) } else { encode(fs, model) })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DescriptorSet::default();
    for (fs, d) in sets.iter().zip(descs) {
        out.push(fs.image_id(), d);
    }
    Ok(out)
}

fn encode_cmd(s: &Settings) -> Result<()> {
    let data: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let model = ClusterModel::load(s.require::<PathBuf>("model")?)?;
    let files = read_dataset_dir(&data)?;
    let chosen: Vec<&LocalFeatureSet> = select_ids(&files, s)?.into_iter().map(|i| &files.sets[i]).collect();
    let set = encode_sets(&chosen, &model, s.switch("baseline")?)?;
    set.save(&out)?;
    println!("encoded {} images -> {}", set.len(), out.display());
    Ok(())
}

fn fit_transform(fit_set: &DescriptorSet, s: &Settings) -> Result<WhiteningTransform> {
    let rows: Vec<&[f64]> = fit_set.descriptors.iter().map(|d| d.values()).collect();
    let dim = rows.first().map_or(0, |r| r.len());
    let mut target: usize = s.get_or("whiten_dim", DEFAULT_WHITEN_DIM)?;
    if target > dim {
        log::warn!("whiten_dim {target} exceeds descriptor length {dim}; using {dim}");
        target = dim;
    }
    let eps = s.get_or("whiten_epsilon", DEFAULT_EPSILON)?;
    if s.switch("strict")? {
        fit_whitening_strict(&rows, target, eps)
    } else {
        Ok(fit_whitening(&rows, target, eps)?.transform)
    }
}

fn whiten_set(t: &WhiteningTransform, set: &DescriptorSet) -> Result<DescriptorSet> {
    let descs = set
        .descriptors
        .par_iter()
        .map(|d| t.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptorSet {
        ids: set.ids.clone(),
        descriptors: descs,
    })
}

fn whiten(s: &Settings) -> Result<()> {
    let transform = match (s.get::<PathBuf>("fit")?, s.get::<PathBuf>("transform")?) {
        (Some(fit), None) => fit_transform(&DescriptorSet::load(fit)?, s)?,
        (None, Some(path)) => WhiteningTransform::load(path)?,
        _ => return Err(Error::Config("whiten needs exactly one of --fit or --transform".into())),
    };
    if let Some(path) = s.get::<PathBuf>("save_transform")? {
        transform.save(&path)?;
        println!(
            "whitening {} -> {} dims saved to {}",
            transform.input_dim(),
            transform.output_dim(),
            path.display()
        );
    }
    if let Some(input) = s.get::<PathBuf>("input")? {
        let out: PathBuf = s.require("out")?;
        let white = whiten_set(&transform, &DescriptorSet::load(input)?)?;
        white.save(&out)?;
        println!("whitened {} descriptors -> {}", white.len(), out.display());
    }
    Ok(())
}

fn recall_n(s: &Settings) -> Result<Vec<usize>> {
    let n = s.list::<usize>("n")?.unwrap_or_else(|| DEFAULT_RECALL_N.to_vec());
    if n.is_empty() || n.contains(&0) {
        return Err(Error::Config("n must list positive cut-offs".into()));
    }
    Ok(n)
}

fn evaluate_sets(
    db: &DescriptorSet,
    queries: &DescriptorSet,
    tags: &[(String, GeoTag)],
    n: &[usize],
    radius: f64,
) -> Result<(DescriptorIndex, RecallReport)> {
    let tag_of: std::collections::HashMap<&str, GeoTag> = tags.iter().map(|(id, t)| (id.as_str(), *t)).collect();
    let lookup = |id: &str| tag_of.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()));
    let entries = db
        .ids
        .iter()
        .zip(&db.descriptors)
        .map(|(id, d)| Ok((id.clone(), d.values().to_vec(), lookup(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let index = DescriptorIndex::build(entries)?;
    let q = queries
        .ids
        .iter()
        .zip(&queries.descriptors)
        .map(|(id, d)| Ok((d.values().to_vec(), lookup(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = recall_at(&index, &q, n, radius)?;
    Ok((index, report))
}

fn write_report(report: &RecallReport, csv: &Path, gnuplot: Option<&Path>) -> Result<()> {
    let mut w = create(csv)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(g) = gnuplot {
        let mut w = create(g)?;
        report.write_gnuplot(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn eval(s: &Settings) -> Result<()> {
    let db = DescriptorSet::load(s.require::<PathBuf>("db")?)?;
    let queries = DescriptorSet::load(s.require::<PathBuf>("queries")?)?;
    let tags = read_geotags(s.require::<PathBuf>("geotags")?)?;
    let out: PathBuf = s.require("out")?;
    let radius = s.get_or("success_radius", DEFAULT_SUCCESS_RADIUS_M)?;
    let (index, report) = evaluate_sets(&db, &queries, &tags, &recall_n(s)?, radius)?;
    write_report(&report, &out, s.get::<PathBuf>("gnuplot")?.as_deref())?;
    if let Some(path) = s.get::<PathBuf>("index")? {
        index.save(path)?;
    }
    for (n, r) in report.n_values.iter().zip(&report.recalls) {
        println!("recall@{n} = {r}");
    }
    if report.without_positive > 0 {
        println!("queries without any in-range database image: {}", report.without_positive);
    }
    Ok(())
}

fn gradcheck(s: &Settings, seed: u64) -> Result<()> {
    let instances: u64 = s.get_or("instances", DEFAULT_GRADCHECK_INSTANCES)?;
    let tolerance: f64 = s.get_or("tolerance", DEFAULT_GRADCHECK_TOLERANCE)?;
    let cfg = GradCheckConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let r = gradient_check(seed.wrapping_add(i), &cfg)?;
        worst = worst.max(r.max_relative_error);
    }
    println!("instances={instances} max_relative_error={worst:e}");
    if worst < tolerance {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Error::GradientMismatch {
            max_relative_error: worst,
            tolerance,
        })
    }
}

fn attention_export(s: &Settings) -> Result<()> {
    let data: PathBuf = s.require("data")?;
    let out: PathBuf = s.require("out")?;
    let model = ClusterModel::load(s.require::<PathBuf>("model")?)?;
    let files = read_dataset_dir(&data)?;
    let chosen = select_ids(&files, s)?;
    let maps = chosen
        .par_iter()
        .map(|&i| attention_maps(&files.sets[i], &model))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&out)?;
    for (j, (&i, m)) in chosen.iter().zip(&maps).enumerate() {
        write_attention_csv(&mut w, &files.sets[i], m, j == 0)?;
    }
    w.flush()?;
    println!("exported attention of {} images -> {}", chosen.len(), out.display());
    Ok(())
}

/// Train-split descriptors (database and queries) for fitting whitening.
fn split_sets(dataset: &PlaceDataset, split: Split, role: Role) -> Vec<&LocalFeatureSet> {
    dataset.indices(split, role).into_iter().map(|i| &dataset.sets[i]).collect()
}

fn repro(s: &Settings, seed: u64) -> Result<()> {
    let out: PathBuf = s.require("out")?;
    let spec = synthetic_spec(s, seed)?;
    let ds = generate_synthetic_dataset(&spec)?;
    let tags = tagged(&ds);
    let split = ds.split(val_fraction(s)?);
    let partition = SyntheticDataset::partition();
    write_dataset_dir(out.join("data"), &ds.sets, &tags, Some(&split), Some(&partition))?;
    let dataset = PlaceDataset::new(ds.sets.clone(), &tags, split)?;
    let train_sets: Vec<LocalFeatureSet> = split_sets(&dataset, Split::Train, Role::Database)
        .into_iter()
        .chain(split_sets(&dataset, Split::Train, Role::Query))
        .cloned()
        .collect();

    let p = init_params(s)?;
    let cfg = sgd_config(s, seed, REPRO_EPOCHS)?;
    let n = recall_n(s)?;
    let radius = cfg.success_radius;
    let val_db = split_sets(&dataset, Split::Val, Role::Database);
    let val_q = split_sets(&dataset, Split::Val, Role::Query);
    let evaluate = |model: &ClusterModel, baseline: bool| -> Result<RecallReport> {
        let db = encode_sets(&val_db, model, baseline)?;
        let q = encode_sets(&val_q, model, baseline)?;
        Ok(evaluate_sets(&db, &q, &tags, &n, radius)?.1)
    };

    let sc_init = init_model(&train_sets, "semantic", &p, &partition, seed)?;
    sc_init.save(out.join("sc_init.srlm"))?;
    let base_params = InitParams { shadows: 0, ..p };
    let base_init = init_model(&train_sets, "normal", &base_params, &partition, seed)?;
    base_init.save(out.join("baseline_init.srlm"))?;

    let sc = train(&dataset, &sc_init, &cfg)?;
    sc.best_model.save(out.join("sc.srlm"))?;
    write_history(&sc, &out.join("sc_history.csv"))?;
    let base = train(&dataset, &base_init, &cfg)?;
    base.best_model.save(out.join("baseline.srlm"))?;
    write_history(&base, &out.join("baseline_history.csv"))?;

    let r_init = evaluate(&sc_init, false)?;
    let r_sc = evaluate(&sc.best_model, false)?;
    let r_base = evaluate(&base.best_model, false)?;

    // whitening fit on training descriptors only
    let train_refs: Vec<&LocalFeatureSet> = train_sets.iter().collect();
    let train_desc = encode_sets(&train_refs, &sc.best_model, false)?;
    let transform = fit_transform(&train_desc, s)?;
    transform.save(out.join("sc_whitening.srlw"))?;
    let white_db = whiten_set(&transform, &encode_sets(&val_db, &sc.best_model, false)?)?;
    let white_q = whiten_set(&transform, &encode_sets(&val_q, &sc.best_model, false)?)?;
    let r_white = evaluate_sets(&white_db, &white_q, &tags, &n, radius)?.1;

    let rows = [
        ("sc_init", &r_init),
        ("sc", &r_sc),
        ("baseline", &r_base),
        ("sc_whitened", &r_white),
    ];
    for (name, r) in rows {
        write_report(r, &out.join(format!("recall_{name}.csv")), Some(&out.join(format!("recall_{name}.dat"))))?;
    }
    let mut summary = create(&out.join("summary.csv"))?;
    let header: Vec<String> = n.iter().map(|v| format!("recall@{v}")).collect();
    writeln!(summary, "model,{}", header.join(","))?;
    for (name, r) in rows {
        let vals: Vec<String> = r.recalls.iter().map(|v| v.to_string()).collect();
        writeln!(summary, "{name},{}", vals.join(","))?;
        println!("{name:<12} {}", vals.join(" "));
    }
    summary.flush()?;

    let r1 = |r: &RecallReport| r.recalls[0];
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!("sc >= baseline at recall@{}: {}", n[0], verdict(r1(&r_sc) >= r1(&r_base)));
    println!("sc >= sc_init at recall@{}: {}", n[0], verdict(r1(&r_sc) >= r1(&r_init)));
    Ok(())
}
