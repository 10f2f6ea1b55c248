//! `vmuq infer`: summarize one observation (a single extended migration)
//! and draw a posterior ensemble.

use crate::config::PipelineConfig;
use crate::figures;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use vmuq::dataset::{self, ConditionMode};
use vmuq::diffusion::{ensemble, NoiseSchedule, SamplerSettings, ScoreNetwork};
use vmuq::rng::derive_seed;
use vmuq::store::{self, RunManifest, Tensor};
use vmuq::wavesim::summary_statistic;

#[derive(Debug, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub example_index: usize,
    pub n_samples: usize,
    pub sampler_steps: usize,
    pub churn: f64,
    pub condition_mode: String,
    pub std_convergence: Option<f64>,
    pub extended_migrations: u64,
    pub velocity_lo: f64,
    pub velocity_hi: f64,
    pub noise_norm: f64,
}

pub fn run(
    cfg: &PipelineConfig,
    checkpoint_dir: &Path,
    dataset_dir: &Path,
    example_index: usize,
    n_override: Option<usize>,
    out: &Path,
) -> Result<()> {
    let n_samples = n_override.unwrap_or(cfg.sampling.n_samples);
    let snapshot = format!(
        "{}\n# infer example {example_index} n {n_samples}\n",
        cfg.snapshot
    );
    if super::up_to_date(out, &snapshot)? {
        println!("infer: {} is up to date, skipping", out.display());
        return Ok(());
    }
    let net = ScoreNetwork::load(&checkpoint_dir.join("checkpoint"))
        .context("loading checkpoint")?;
    let train_meta: super::train_cmd::TrainMeta = serde_json::from_slice(
        &std::fs::read(checkpoint_dir.join("train_meta.json"))
            .context("reading train_meta.json")?,
    )?;
    let mode = ConditionMode::parse(&train_meta.condition_mode)?;
    let ds = dataset::load_dataset(dataset_dir).context("loading dataset")?;
    let Some(ex) = ds.examples.get(example_index) else {
        bail!(
            "example {example_index} not in dataset of {} examples",
            ds.examples.len()
        );
    };

    // The single extended migration of amortized inference.
    let calls_before = vmuq::wavesim::migration_call_count();
    let vol = summary_statistic(
        &ex.migration_velocity,
        &ex.shots,
        &ds.meta.geometry,
        &ds.meta.wavelet,
        &ds.meta.offsets_m,
    )
    .context("summary statistic")?;
    let migrations = vmuq::wavesim::migration_call_count() - calls_before;
    let cond = dataset::normalize_summary_mode(&vol, mode);
    if cond.c != net.cond_channels() {
        bail!(
            "condition has {} channels, checkpoint expects {}",
            cond.c,
            net.cond_channels()
        );
    }

    let schedule = NoiseSchedule::karras_with_data(
        0.002,
        80.0,
        7.0,
        cfg.sampling.sampler_steps,
        net.net.cfg.sigma_data,
    )?;
    let settings = SamplerSettings {
        schedule,
        churn: cfg.sampling.churn,
    };
    let seeds: Vec<u64> = (0..n_samples)
        .map(|i| derive_seed(cfg.seed, "infer", (example_index * 1_000_000 + i) as u64))
        .collect();
    println!("infer: example {example_index}, {n_samples} samples");
    let ens = ensemble(&net, &cond, &settings, &seeds).context("sampling ensemble")?;

    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(&snapshot);
    manifest.record_seed("infer-root", cfg.seed);

    let (nz, nx) = (ens.mean.nz, ens.mean.nx);
    let mut sample_data = Vec::with_capacity(n_samples * nz * nx);
    for s in &ens.samples {
        sample_data.extend_from_slice(s.values());
    }
    let t = Tensor::from_f64(vec![n_samples as u64, nz as u64, nx as u64], sample_data);
    manifest.record_artifact("samples.vmuq", store::write_tensor(&out.join("samples.vmuq"), &t)?);
    let mean_t = Tensor::from_f64(vec![nz as u64, nx as u64], ens.mean.values().to_vec());
    manifest.record_artifact("mean.vmuq", store::write_tensor(&out.join("mean.vmuq"), &mean_t)?);
    let std_t = Tensor::from_f64(vec![nz as u64, nx as u64], ens.std.values().to_vec());
    manifest.record_artifact("std.vmuq", store::write_tensor(&out.join("std.vmuq"), &std_t)?);

    // Renderings with fixed windows recorded in sidecars.
    let (lo, hi) = (ds.meta.velocity_lo, ds.meta.velocity_hi);
    figures::write_field_png(&out.join("mean.png"), &ens.mean, lo, hi, "posterior mean, m/s")?;
    manifest.record_artifact("mean.png", store::hash_file(&out.join("mean.png"))?);
    manifest.record_artifact("mean.json", store::hash_file(&out.join("mean.json"))?);
    let std_hi = ens.std.max().max(1e-9);
    figures::write_field_png(&out.join("std.png"), &ens.std, 0.0, std_hi, "posterior std, m/s")?;
    manifest.record_artifact("std.png", store::hash_file(&out.join("std.png"))?);
    manifest.record_artifact("std.json", store::hash_file(&out.join("std.json"))?);
    figures::write_field_png(
        &out.join("sample0.png"),
        &ens.samples[0],
        lo,
        hi,
        "first posterior sample, m/s",
    )?;
    manifest.record_artifact("sample0.png", store::hash_file(&out.join("sample0.png"))?);
    manifest.record_artifact("sample0.json", store::hash_file(&out.join("sample0.json"))?);

    let meta = EnsembleMeta {
        example_index,
        n_samples,
        sampler_steps: cfg.sampling.sampler_steps,
        churn: cfg.sampling.churn,
        condition_mode: train_meta.condition_mode.clone(),
        std_convergence: ens.std_convergence,
        extended_migrations: migrations,
        velocity_lo: lo,
        velocity_hi: hi,
        noise_norm: ex.shots.noise_norm(),
    };
    let meta_bytes = serde_json::to_vec_pretty(&meta)?;
    store::write_atomic(&out.join("ensemble.json"), &meta_bytes)?;
    manifest.record_artifact("ensemble.json", store::hex_digest(&meta_bytes));
    store::write_manifest(out, &manifest)?;
    println!(
        "infer: wrote ensemble (std convergence {:?}, {} extended migration) to {}",
        ens.std_convergence,
        migrations,
        out.display()
    );
    Ok(())
}
