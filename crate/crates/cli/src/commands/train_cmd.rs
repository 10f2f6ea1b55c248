//! `vmuq train`: fit a conditional denoiser on a generated dataset.

use crate::config::PipelineConfig;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use vmuq::dataset::{self, ConditionMode, Split};
use vmuq::diffusion::{train_observed, TraceEntry, TrainTrace};
use vmuq::rng::derive_seed;
use vmuq::store::{self, RunManifest};

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainMeta {
    pub condition_mode: String,
    pub dataset_dir: String,
    pub cond_channels: usize,
    pub stopped_early_at: Option<usize>,
}

pub fn run(cfg: &PipelineConfig, dataset_dir: &Path, out: &Path, condition: &str) -> Result<()> {
    let mode = ConditionMode::parse(condition)?;
    let snapshot = format!("{}\n# condition = {condition}\n", cfg.snapshot);
    if super::up_to_date(out, &snapshot)? {
        println!("train: {} is up to date, skipping", out.display());
        return Ok(());
    }
    let verify = store::verify_manifest(&dataset_dir.join("manifest.json"))
        .context("dataset manifest")?;
    if !verify.ok {
        bail!(
            "dataset manifest failed verification: missing {:?}, mismatched {:?}",
            verify.missing,
            verify.mismatched
        );
    }
    let ds = dataset::load_dataset(dataset_dir).context("loading dataset")?;
    let pairs = dataset::training_pairs_mode(&ds, Split::Train, mode);
    let val_pairs = dataset::training_pairs_mode(&ds, Split::Val, mode);
    if pairs.is_empty() {
        bail!("dataset has no training examples");
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = derive_seed(cfg.seed, "train", mode as u64);
    println!(
        "train: {} pairs, {} condition channels, {} steps, widths {:?}",
        pairs.len(),
        pairs[0].cond.c,
        train_cfg.steps,
        train_cfg.widths
    );

    std::fs::create_dir_all(out)?;
    let trace_path = out.join("training_curve.csv");
    let mut entries: Vec<TraceEntry> = Vec::new();
    let result = train_observed(&pairs, &val_pairs, &train_cfg, &mut |e| {
        entries.push(e.clone());
    });
    let (net, trace) = match result {
        Ok(ok) => ok,
        Err(e) => {
            // Persist the partial loss trace so the failure is inspectable.
            let partial = TrainTrace {
                entries,
                stopped_early_at: None,
            };
            store::write_atomic(&trace_path, partial.to_csv().as_bytes())?;
            return Err(anyhow!(e)).context(format!(
                "training diverged; loss trace at {}",
                trace_path.display()
            ));
        }
    };

    let mut manifest = RunManifest::new(&snapshot);
    manifest.record_seed("train", train_cfg.seed);
    let ckpt_meta = net.save(&out.join("checkpoint"))?;
    manifest.record_artifact("checkpoint/weights.vmuq", ckpt_meta.weights_hash.clone());
    manifest.record_artifact(
        "checkpoint/checkpoint.json",
        store::hash_file(&out.join("checkpoint/checkpoint.json"))?,
    );
    let csv = trace.to_csv();
    store::write_atomic(&trace_path, csv.as_bytes())?;
    manifest.record_artifact("training_curve.csv", store::hex_digest(csv.as_bytes()));
    let meta = TrainMeta {
        condition_mode: condition.to_string(),
        dataset_dir: dataset_dir.display().to_string(),
        cond_channels: pairs[0].cond.c,
        stopped_early_at: trace.stopped_early_at,
    };
    let meta_bytes = serde_json::to_vec_pretty(&meta)?;
    store::write_atomic(&out.join("train_meta.json"), &meta_bytes)?;
    manifest.record_artifact("train_meta.json", store::hex_digest(&meta_bytes));
    store::write_manifest(out, &manifest)?;
    println!(
        "train: saved checkpoint ({} parameters) to {}",
        net.param_count(),
        out.display()
    );
    Ok(())
}
