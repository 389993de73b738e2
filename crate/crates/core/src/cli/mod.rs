//! The `shadowvlad` command line.
//!
//! Every command reads an optional `--config FILE` of `key = value` lines;
//! flags of the same name override the file. Randomized commands require
//! `--seed`. Failures print one line `error: <Class>: <message>` to stderr
//! and exit with the class's code.

mod commands;
pub mod settings;

pub use settings::{flag_name, key_info, KeyInfo, KeyKind, Settings, KEYS};

use std::ffi::OsString;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::error::{Error, Result};

/// A subcommand and the configuration keys it reads.
#[derive(Debug, Clone, Copy)]
pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [&'static str],
    pub randomized: bool,
}

const SYNTH_KEYS: &[&str] = &[
    "out",
    "places",
    "views",
    "dim",
    "height",
    "width",
    "informative_fraction",
    "clutter_noise",
    "view_noise",
    "val_fraction",
];
const INIT_KEYS: &[&str] = &[
    "data",
    "out",
    "mode",
    "clusters",
    "shadows",
    "scale",
    "pool_size",
    "candidates",
    "partition",
];
const TRAIN_KEYS: &[&str] = &[
    "data",
    "model",
    "out",
    "learning_rate",
    "momentum",
    "weight_decay",
    "margin",
    "epochs",
    "lr_halving_period",
    "early_stop_patience",
    "batch_size",
    "num_negatives",
    "positive_radius",
    "negative_radius",
    "success_radius",
    "history",
    "checkpoint",
    "resume",
];
const REPRO_KEYS: &[&str] = &[
    "out",
    "places",
    "views",
    "dim",
    "height",
    "width",
    "informative_fraction",
    "clutter_noise",
    "view_noise",
    "val_fraction",
    "clusters",
    "shadows",
    "scale",
    "pool_size",
    "candidates",
    "learning_rate",
    "momentum",
    "weight_decay",
    "margin",
    "epochs",
    "lr_halving_period",
    "early_stop_patience",
    "batch_size",
    "num_negatives",
    "positive_radius",
    "negative_radius",
    "success_radius",
    "whiten_dim",
    "whiten_epsilon",
    "n",
];

pub const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "synth",
        about: "Generate a synthetic planted-place dataset directory",
        keys: SYNTH_KEYS,
        randomized: true,
    },
    CommandSpec {
        name: "init",
        about: "Initialize a cluster model (normal or semantic)",
        keys: INIT_KEYS,
        randomized: true,
    },
    CommandSpec {
        name: "train",
        about: "Train a cluster model with the triplet ranking loss",
        keys: TRAIN_KEYS,
        randomized: true,
    },
    CommandSpec {
        name: "encode",
        about: "Encode images of a dataset directory into a descriptor set",
        keys: &["data", "model", "out", "split", "role", "baseline"],
        randomized: false,
    },
    CommandSpec {
        name: "whiten",
        about: "Fit and/or apply PCA whitening to a descriptor set",
        keys: &[
            "input",
            "out",
            "fit",
            "transform",
            "save_transform",
            "whiten_dim",
            "whiten_epsilon",
            "strict",
        ],
        randomized: false,
    },
    CommandSpec {
        name: "eval",
        about: "Recall@N of query descriptors against a database",
        keys: &["db", "queries", "geotags", "n", "success_radius", "out", "gnuplot", "index"],
        randomized: false,
    },
    CommandSpec {
        name: "gradcheck",
        about: "Check analytic gradients against finite differences",
        keys: &["instances", "tolerance"],
        randomized: true,
    },
    CommandSpec {
        name: "attention-export",
        about: "Export per-feature alpha and beta maps as CSV",
        keys: &["data", "model", "out", "split", "role", "ids"],
        randomized: false,
    },
    CommandSpec {
        name: "repro-synthetic",
        about: "Run synth, init, train, whiten and eval end to end",
        keys: REPRO_KEYS,
        randomized: true,
    },
];

fn build_cli() -> Command {
    let mut cli = Command::new("shadowvlad")
        .about("Attention-weighted VLAD with shadow centroids for place recognition")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value configuration file"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .help("worker thread cap"),
        )
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("log progress to stderr"),
        );
    for spec in COMMANDS {
        let mut sub = Command::new(spec.name).about(spec.about);
        if spec.randomized {
            sub = sub.arg(Arg::new("seed").long("seed").value_name("N").help("random seed (required)"));
        }
        for key in spec.keys {
            let info = key_info(key).expect("registered key");
            let arg = Arg::new(info.name).long(flag_name(info.name)).help(info.help);
            sub = sub.arg(match info.kind {
                KeyKind::Value => arg.value_name("VALUE"),
                KeyKind::Switch => arg.action(ArgAction::SetTrue),
            });
        }
        cli = cli.subcommand(sub);
    }
    cli
}

fn parse_threads(m: &ArgMatches) -> Result<Option<usize>> {
    m.get_one::<String>("threads")
        .map(|t| match t.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("--threads expects a positive integer, got {t:?}"))),
        })
        .transpose()
}

/// Parsed invocation: command, merged settings, seed.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: &'static CommandSpec,
    pub settings: Settings,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub verbose: bool,
}

impl Invocation {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("{} requires --seed", self.command.name)))
    }
}

/// Parses arguments. `Ok(None)` means help or version was printed.
pub fn parse_args<I, T>(args: I) -> Result<Option<Invocation>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(None);
            }
            let msg = e.to_string();
            let line = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return Err(Error::Config(line.to_string()));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = COMMANDS.iter().find(|c| c.name == name).expect("known command");
    let mut settings = match sub.get_one::<String>("config") {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for key in command.keys {
        if sub.value_source(key) != Some(ValueSource::CommandLine) {
            continue;
        }
        match key_info(key).expect("registered").kind {
            KeyKind::Value => settings.set(key, sub.get_one::<String>(key).expect("value").clone()),
            KeyKind::Switch => settings.set(key, "true"),
        }
    }
    let seed = if command.randomized {
        sub.get_one::<String>("seed")
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| Error::Config(format!("--seed expects an unsigned integer, got {s:?}")))
            })
            .transpose()?
    } else {
        None
    };
    Ok(Some(Invocation {
        command,
        settings,
        seed,
        threads: parse_threads(sub)?,
        verbose: sub.get_flag("verbose"),
    }))
}

/// Runs one invocation, inside a capped thread pool when requested.
pub fn execute(inv: &Invocation) -> Result<()> {
    let _ = env_logger::Builder::new()
        .filter_level(if inv.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .try_init();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = inv.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| commands::dispatch(inv))
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = parse_args(args).and_then(|inv| match inv {
        Some(inv) => execute(&inv),
        None => Ok(()),
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.class());
            e.exit_code()
        }
    }
}
