//! Drive the command line from code: the synthetic pipeline end to end.
//!
//! cargo run --release --example cli_pipeline

fn main() {
    let out = std::env::temp_dir().join("shadowvlad-cli-pipeline");
    let out = out.to_string_lossy();
    let code = shadowvlad::cli::run([
        "shadowvlad",
        "repro-synthetic",
        "--seed",
        "1",
        "--clusters",
        "16",
        "--epochs",
        "3",
        "--out",
        out.as_ref(),
    ]);
    std::process::exit(code);
}
