//! `vmuq aspire`: the iterative refinement workflow with per-iteration
//! evaluation on the held-out test split.

use crate::config::PipelineConfig;
use crate::figures;
use anyhow::{bail, Context, Result};
use std::path::Path;
use vmuq::aspire::{aspire_infer, bottom_salt_mask, migration_ensemble, run_aspire};
use vmuq::dataset::{self, Split};
use vmuq::rng::derive_seed;
use vmuq::store::{self, RunManifest};
use vmuq::uqmetrics;

pub fn run(cfg: &PipelineConfig, dataset_dir: &Path, out: &Path) -> Result<()> {
    let snapshot = format!("{}\n# aspire\n", cfg.snapshot);
    if super::up_to_date(out, &snapshot)? {
        println!("aspire: {} is up to date, skipping", out.display());
        return Ok(());
    }
    let verify = store::verify_manifest(&dataset_dir.join("manifest.json"))
        .context("dataset manifest")?;
    if !verify.ok {
        bail!("dataset manifest failed verification");
    }
    let ds = dataset::load_dataset(dataset_dir).context("loading dataset")?;
    let acfg = cfg.aspire_config();
    println!(
        "aspire: K = {} iterations, flood schedule {:?}",
        acfg.iterations, acfg.flood_schedule
    );
    let run = run_aspire(&ds, &acfg, Some(out)).context("aspire training loop")?;

    // Per-iteration evaluation over the test split: one inference chain
    // per observation yields every iteration's ensemble.
    let tests: Vec<_> = ds.split(Split::Test).collect();
    let mut per_iter_rows: Vec<Vec<String>> = vec![Vec::new(); acfg.iterations];
    let mut root_manifest = RunManifest::new(&snapshot);
    root_manifest.record_seed("aspire", cfg.seed);
    let mut first_final_samples: Option<Vec<vmuq::field::Field2>> = None;
    for ex in &tests {
        let ensembles = aspire_infer(
            &run.networks,
            &ex.shots,
            &ex.migration_velocity,
            &ds.meta,
            &acfg,
            derive_seed(cfg.seed, "aspire-eval", ex.index as u64),
        )
        .with_context(|| format!("inference on example {}", ex.index))?;
        if first_final_samples.is_none() {
            first_final_samples = Some(ensembles.last().unwrap().samples.clone());
        }
        for (k, ens) in ensembles.iter().enumerate() {
            let loaded = super::evaluate::LoadedEnsemble {
                meta: super::infer::EnsembleMeta {
                    example_index: ex.index,
                    n_samples: ens.samples.len(),
                    sampler_steps: acfg.infer_sampler_steps,
                    churn: 0.0,
                    condition_mode: "cig".into(),
                    std_convergence: ens.std_convergence,
                    extended_migrations: (k + 1) as u64,
                    velocity_lo: ds.meta.velocity_lo,
                    velocity_hi: ds.meta.velocity_hi,
                    noise_norm: ex.shots.noise_norm(),
                },
                samples: ens.samples.clone(),
                mean: ens.mean.clone(),
                std: ens.std.clone(),
            };
            let report = super::evaluate::compute_report(cfg, &ds, ex, &loaded)?;
            report.validate()?;
            let edir = out
                .join(format!("iter{}", k + 1))
                .join(format!("eval_ex{:04}", ex.index));
            let mut manifest = RunManifest::new(&snapshot);
            super::evaluate::write_report_files(
                cfg, &ds, ex, &loaded, &report, &edir, &mut manifest,
            )?;
            // Bottom-salt fidelity for salt examples.
            let salt_mask = bottom_salt_mask(&ex.salt_mask, cfg.aspire.bottom_salt_margin);
            let masked_rmse = if salt_mask.iter().any(|&b| b) {
                let r = uqmetrics::rmse_masked(
                    &ex.truth.values,
                    &loaded.mean,
                    &salt_mask,
                    ds.meta.velocity_lo,
                    ds.meta.velocity_hi,
                )?;
                figures::write_csv(
                    &edir.join("bottom_salt.csv"),
                    "masked_rmse",
                    &[r.to_string()],
                )?;
                manifest.record_artifact(
                    "bottom_salt.csv",
                    store::hash_file(&edir.join("bottom_salt.csv"))?,
                );
                Some(r)
            } else {
                None
            };
            store::write_manifest(&edir, &manifest)?;
            per_iter_rows[k].push(format!(
                "{},{},{}",
                ex.index,
                report.csv_row(),
                masked_rmse.map(|r| r.to_string()).unwrap_or_default()
            ));
        }
    }
    for (k, rows) in per_iter_rows.iter().enumerate() {
        let path = out.join(format!("iter{}", k + 1)).join("test_metrics.csv");
        figures::write_csv(
            &path,
            &format!("example,{},bottom_salt_rmse", vmuq::uqmetrics::MetricsReport::csv_header()),
            rows,
        )?;
        root_manifest.record_artifact(
            format!("iter{}/test_metrics.csv", k + 1),
            store::hash_file(&path)?,
        );
    }

    // Final-product uncertainty: migrations of the observed data in
    // posterior velocities of the last iteration, for the first test line.
    if cfg.aspire.migration_ensemble >= 2 {
        if let (Some(ex), Some(samples)) = (tests.first(), first_final_samples) {
            let m = cfg.aspire.migration_ensemble.min(samples.len());
            let velocities: Vec<_> = samples[..m]
                .iter()
                .map(|s| {
                    vmuq::geomodel::VelocityModel::new(ex.truth.dz, ex.truth.dx, s.clone())
                        .map(vmuq::geomodel::VelocityModel::clamped)
                })
                .collect::<vmuq::Result<_>>()?;
            let (img_mean, img_std) =
                migration_ensemble(&velocities, &ex.shots, &ds.meta.geometry, &ds.meta.wavelet, m)?;
            let lo = img_mean.min();
            let hi = img_mean.max();
            figures::write_field_png(
                &out.join("migration_mean.png"),
                &img_mean,
                lo,
                hi,
                "mean of migrations in posterior velocities",
            )?;
            let shi = img_std.max().max(1e-30);
            figures::write_field_png(
                &out.join("migration_std.png"),
                &img_std,
                0.0,
                shi,
                "std of migrations in posterior velocities",
            )?;
            for name in ["migration_mean.png", "migration_mean.json", "migration_std.png", "migration_std.json"] {
                root_manifest.record_artifact(name, store::hash_file(&out.join(name))?);
            }
        }
    }
    store::write_manifest(out, &root_manifest)?;
    println!("aspire: wrote per-iteration outputs to {}", out.display());
    Ok(())
}
