use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shadowvlad::cli::{COMMANDS, KEYS};

fn shadowvlad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadowvlad")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = shadowvlad(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn small_dataset(dir: &Path) -> String {
    let data = path(dir, "data");
    ok(&["synth", "--seed", "3", "--out", &data, "--places", "12", "--views", "3"]);
    data
}

#[test]
fn eval_reports_monotone_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = small_dataset(dir);
    ok(&["init", "--seed", "3", "--data", &data, "--clusters", "6", "--out", &path(dir, "m.srlm")]);
    for role in ["db", "query"] {
        ok(&[
            "encode", "--data", &data, "--model", &path(dir, "m.srlm"), "--split", "val", "--role", role, "--out",
            &path(dir, &format!("{role}.srld")),
        ]);
    }
    ok(&[
        "eval", "--db", &path(dir, "db.srld"), "--queries", &path(dir, "query.srld"), "--geotags",
        &format!("{data}/geotags.csv"), "--n", "1,5,10", "--out", &path(dir, "recall.csv"),
    ]);
    let csv = fs::read_to_string(dir.join("recall.csv")).unwrap();
    let rows: Vec<(usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (n, r) = l.split_once(',').unwrap();
            (n.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 5, 10]);
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.1)));
}

#[test]
fn semantic_init_without_matching_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path());
    let part = path(tmp.path(), "partition.txt");
    fs::write(&part, "static=900\ndynamic=901\n").unwrap();
    let out = shadowvlad(&[
        "init", "--seed", "1", "--data", &data, "--mode", "semantic", "--clusters", "4", "--partition", &part, "--out",
        &path(tmp.path(), "m.srlm"),
    ]);
    assert_eq!(out.status.code(), Some(31));
    assert!(error_line(&out).starts_with("error: InsufficientStatic: "));
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck", "--seed", "9", "--instances", "3"]);
    assert!(stdout.lines().any(|l| l == "PASS"), "{stdout}");
}

#[test]
fn errors_are_single_classified_lines() {
    let out = shadowvlad(&["synth", "--out", "/nonexistent/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error: ConfigError: "));

    let out = shadowvlad(&["encode", "--data", "/nonexistent/data", "--model", "m", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error: IoError: "));

    let out = shadowvlad(&["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = path(tmp.path(), "run.cfg");
    fs::write(&cfg, format!("out = {}\nplaces = 50\nviews = 2\n", path(tmp.path(), "data"))).unwrap();
    ok(&["synth", "--config", &cfg, "--seed", "2", "--places", "5", "--threads", "1"]);
    let tags = fs::read_to_string(tmp.path().join("data/geotags.csv")).unwrap();
    assert_eq!(tags.lines().count() - 1, 10);
}

#[test]
fn config_docs_cover_every_key_and_command() {
    let docs = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.md")).unwrap();
    for key in KEYS {
        assert!(docs.contains(&format!("`{}`", key.name)), "undocumented key {}", key.name);
    }
    for c in COMMANDS {
        assert!(docs.contains(&format!("`{}`", c.name)), "undocumented command {}", c.name);
    }
}
