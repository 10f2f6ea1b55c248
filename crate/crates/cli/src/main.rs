//! Pipeline driver: dataset generation, training, inference, evaluation,
//! iterative refinement, and report emission.

mod commands;
mod config;
mod figures;

use anyhow::{anyhow, bail, Context, Result};
use config::PipelineConfig;
use std::path::PathBuf;

const USAGE: &str = "\
vmuq <command> [options]

commands:
  generate  --config PATH --out DIR [--seed N]
  train     --config PATH --dataset DIR --out DIR [--condition cig|rtm] [--seed N]
  infer     --config PATH --checkpoint DIR --dataset DIR --example IDX --out DIR [--n N] [--seed N]
  evaluate  --config PATH --ensemble DIR --dataset DIR --out DIR
  aspire    --config PATH --dataset DIR --out DIR [--seed N]
  report    --runs DIR --out DIR

common options:
  --config PATH    sectioned key/value config file
  --seed U64       override the config's root seed
  --out DIR        output directory (owned by the command)
  --threads N      worker threads (default: all cores)

any config key can be overridden with VMUQ_<SECTION>__<KEY>=value";

struct Args {
    flags: std::collections::BTreeMap<String, String>,
}

impl Args {
    fn parse(raw: &[String]) -> Result<Args> {
        let mut flags = std::collections::BTreeMap::new();
        let mut i = 0;
        while i < raw.len() {
            let key = raw[i]
                .strip_prefix("--")
                .ok_or_else(|| anyhow!("unexpected argument {:?}", raw[i]))?;
            let value = raw
                .get(i + 1)
                .ok_or_else(|| anyhow!("--{key} needs a value"))?;
            flags.insert(key.to_string(), value.clone());
            i += 2;
        }
        Ok(Args { flags })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.flags.get(key).map(|s| s.as_str())
    }

    fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| anyhow!("missing required --{key}"))
    }

    fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|s| s.parse::<u64>().with_context(|| format!("--{key}")))
            .transpose()
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|s| s.parse::<usize>().with_context(|| format!("--{key}")))
            .transpose()
    }
}

fn load_config(args: &Args) -> Result<PipelineConfig> {
    let path = args.require_path("config")?;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    PipelineConfig::from_text(&text, args.u64_opt("seed")?)
}

fn dispatch(command: &str, args: &Args) -> Result<()> {
    if let Some(n) = args.usize_opt("threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match command {
        "generate" => {
            let cfg = load_config(args)?;
            commands::generate::run(&cfg, &args.require_path("out")?)
        }
        "train" => {
            let cfg = load_config(args)?;
            commands::train_cmd::run(
                &cfg,
                &args.require_path("dataset")?,
                &args.require_path("out")?,
                args.get("condition").unwrap_or("cig"),
            )
        }
        "infer" => {
            let cfg = load_config(args)?;
            let example = args
                .usize_opt("example")?
                .ok_or_else(|| anyhow!("missing required --example"))?;
            commands::infer::run(
                &cfg,
                &args.require_path("checkpoint")?,
                &args.require_path("dataset")?,
                example,
                args.usize_opt("n")?,
                &args.require_path("out")?,
            )
        }
        "evaluate" => {
            let cfg = load_config(args)?;
            commands::evaluate::run(
                &cfg,
                &args.require_path("ensemble")?,
                &args.require_path("dataset")?,
                &args.require_path("out")?,
            )
        }
        "aspire" => {
            let cfg = load_config(args)?;
            commands::aspire_cmd::run(&cfg, &args.require_path("dataset")?, &args.require_path("out")?)
        }
        "report" => commands::report::run(&args.require_path("runs")?, &args.require_path("out")?),
        other => bail!("unknown command {other:?}\n\n{USAGE}"),
    }
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = argv.first() else {
        eprintln!("{USAGE}");
        std::process::exit(2);
    };
    if command == "--help" || command == "help" {
        println!("{USAGE}");
        return;
    }
    let args = match Args::parse(&argv[1..]) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[args]: {e:#}");
            std::process::exit(2);
        }
    };
    if let Err(e) = dispatch(command, &args) {
        eprintln!("error[{command}]: {e:#}");
        std::process::exit(1);
    }
}
