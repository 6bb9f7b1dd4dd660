//! Operator surface of taxograph: `taxograph <command> [--config=FILE] [--key=value ...]`.

mod commands;
pub mod config;
pub mod palette;

use std::collections::BTreeMap;
use std::path::PathBuf;

use taxograph::{Error, Result};

pub use config::{RunConfig, KEYS, SEED_ENV};

pub const COMMANDS: [&str; 6] = ["synth", "train", "eval", "infer", "gradcheck", "ablate"];

pub fn usage() -> String {
    let mut s = String::from(
        "usage: taxograph <command> [--config=FILE] [--key=value ...]\n\n\
         commands:\n\
         \x20 synth      write synthetic images, masks, manifests and embeddings\n\
         \x20 train      train a model, write a checkpoint and a step log\n\
         \x20 eval       score a checkpoint on a manifest or the synthetic test split\n\
         \x20 infer      write color and raw masks for one image\n\
         \x20 gradcheck  run the finite-difference gradient suite\n\
         \x20 ablate     train the component grid and print a comparison table\n\n\
         keys:\n",
    );
    for (k, v, help) in KEYS {
        s.push_str(&format!("  {k:<26} {help} [{v}]\n"));
    }
    s.push_str(&format!("\n{SEED_ENV} overrides the file's seed; flags override both.\n"));
    s
}

/// The command, the config file and the `--key=value` overrides.
fn parse_args(argv: &[String]) -> Result<(String, Option<PathBuf>, BTreeMap<String, String>)> {
    let (cmd, rest) = argv
        .split_first()
        .ok_or_else(|| Error::Usage("missing command".into()))?;
    if !COMMANDS.contains(&cmd.as_str()) {
        return Err(Error::Usage(format!("unknown command {cmd:?}")));
    }
    let mut file = None;
    let mut flags = BTreeMap::new();
    for arg in rest {
        let (k, v) = arg
            .strip_prefix("--")
            .and_then(|a| a.split_once('='))
            .ok_or_else(|| Error::Usage(format!("expected --key=value, got {arg:?}")))?;
        if k == "config" {
            file = Some(PathBuf::from(v));
        } else if flags.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Usage(format!("--{k} given twice")));
        }
    }
    Ok((cmd.clone(), file, flags))
}

/// Run one command; returns the process exit status.
pub fn run(argv: &[String]) -> i32 {
    if argv.is_empty() || matches!(argv[0].as_str(), "-h" | "--help" | "help") {
        print!("{}", usage());
        return if argv.is_empty() { 1 } else { 0 };
    }
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = parse_args(argv).and_then(|(cmd, file, flags)| {
        let cfg = RunConfig::resolve(file.as_deref(), env_seed.as_deref(), &flags)?;
        for line in cfg.to_text().lines() {
            eprintln!("# {line}");
        }
        commands::dispatch(&cmd, &cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                eprintln!("run `taxograph --help` for usage");
            }
            e.exit_code()
        }
    }
}
