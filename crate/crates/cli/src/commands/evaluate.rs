//! `vmuq evaluate`: score an ensemble against its ground truth with the
//! four UQ metrics plus RMSE/SSIM, and emit the diagnostic figures.

use crate::config::PipelineConfig;
use crate::figures;
use anyhow::{bail, Context, Result};
use std::path::Path;
use vmuq::dataset::{self, Dataset, SimulatedExample};
use vmuq::field::{percentile, Field2};
use vmuq::store::{self, RunManifest};
use vmuq::uqmetrics::{self, MetricsMetadata, MetricsReport};
use vmuq::wavesim::forward_model;

pub struct LoadedEnsemble {
    pub meta: super::infer::EnsembleMeta,
    pub samples: Vec<Field2>,
    pub mean: Field2,
    pub std: Field2,
}

pub fn load_ensemble(dir: &Path) -> Result<LoadedEnsemble> {
    let meta: super::infer::EnsembleMeta =
        serde_json::from_slice(&std::fs::read(dir.join("ensemble.json"))?)
            .context("ensemble.json")?;
    let t = store::read_tensor(&dir.join("samples.vmuq"))?;
    let dims = t.dims().to_vec();
    if dims.len() != 3 {
        bail!("samples tensor must be 3D");
    }
    let (n, nz, nx) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let flat = t.as_f64();
    let samples = (0..n)
        .map(|i| Field2::from_vec(nz, nx, flat[i * nz * nx..(i + 1) * nz * nx].to_vec()))
        .collect::<vmuq::Result<_>>()?;
    let mean_t = store::read_tensor(&dir.join("mean.vmuq"))?;
    let mean = Field2::from_vec(nz, nx, mean_t.as_f64())?;
    let std_t = store::read_tensor(&dir.join("std.vmuq"))?;
    let std = Field2::from_vec(nz, nx, std_t.as_f64())?;
    Ok(LoadedEnsemble {
        meta,
        samples,
        mean,
        std,
    })
}

/// Compute the six-metric report for one ensemble. The data-fit residual
/// pushes the posterior mean (or first sample) through the forward
/// operator, costing one simulation.
pub fn compute_report(
    cfg: &PipelineConfig,
    ds: &Dataset,
    ex: &SimulatedExample,
    ens: &LoadedEnsemble,
) -> Result<MetricsReport> {
    let gt = &ex.truth.values;
    let (lo, hi) = (ds.meta.velocity_lo, ds.meta.velocity_hi);
    let m = &cfg.metrics;

    let rmse = uqmetrics::rmse(gt, &ens.mean, lo, hi)?;
    let ssim = uqmetrics::ssim(gt, &ens.mean)?;
    let cov = uqmetrics::coverage(&ens.samples, gt, m.coverage_lo, m.coverage_hi)?;
    // Calibration on band-normalized velocities so UCE is dimensionless
    // and comparable across runs; z-score is scale-invariant already.
    let span = hi - lo;
    let gt_n = gt.map(|v| (v - lo) / span);
    let mean_n = ens.mean.map(|v| (v - lo) / span);
    let std_n = ens.std.map(|v| v / span);
    let (_, uce) = uqmetrics::calibration(&gt_n, &mean_n, &std_n, m.n_bins)?;
    let (_, z_pct) = uqmetrics::z_score(gt, &ens.mean, &ens.std, m.z_threshold)?;

    let source = if m.data_fit_on == "sample0" {
        &ens.samples[0]
    } else {
        &ens.mean
    };
    let model = vmuq::geomodel::VelocityModel::new(
        ex.truth.dz,
        ex.truth.dx,
        source.clone(),
    )?
    .clamped();
    let predicted = forward_model(&model, &ds.meta.geometry, &ds.meta.wavelet)
        .context("forward modeling the posterior estimate")?;
    let residual = predicted.sub(&ex.shots).map_err(anyhow::Error::from)?;
    let fit = uqmetrics::data_fit(ex.shots.noise_norm(), residual.norm())?;

    let report = MetricsReport {
        rmse,
        ssim,
        coverage_pct: cov,
        uce,
        z_score_pct: z_pct,
        data_fit_pct: fit,
        metadata: MetricsMetadata {
            n_bins: m.n_bins,
            coverage_lo_pct: m.coverage_lo,
            coverage_hi_pct: m.coverage_hi,
            z_threshold: m.z_threshold,
            n_samples: ens.samples.len(),
        },
    };
    report.validate()?;
    Ok(report)
}

pub fn write_report_files(
    cfg: &PipelineConfig,
    ds: &Dataset,
    ex: &SimulatedExample,
    ens: &LoadedEnsemble,
    report: &MetricsReport,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let m = &cfg.metrics;
    let gt = &ex.truth.values;

    figures::write_csv(
        &out.join("metrics.csv"),
        MetricsReport::csv_header(),
        &[report.csv_row()],
    )?;
    manifest.record_artifact("metrics.csv", store::hash_file(&out.join("metrics.csv"))?);
    let json = serde_json::to_vec_pretty(report)?;
    store::write_atomic(&out.join("metrics.json"), &json)?;
    manifest.record_artifact("metrics.json", store::hex_digest(&json));

    let span = ds.meta.velocity_hi - ds.meta.velocity_lo;
    let gt_n = gt.map(|v| (v - ds.meta.velocity_lo) / span);
    let mean_n = ens.mean.map(|v| (v - ds.meta.velocity_lo) / span);
    let std_n = ens.std.map(|v| v / span);
    let (bins, _) = uqmetrics::calibration(&gt_n, &mean_n, &std_n, m.n_bins)?;
    let rows: Vec<String> = bins
        .iter()
        .enumerate()
        .map(|(i, b)| format!("{},{},{},{}", i, b.mean_uncertainty, b.mean_error, b.count))
        .collect();
    figures::write_csv(
        &out.join("calibration.csv"),
        "bin,mean_uncertainty,mean_error,count",
        &rows,
    )?;
    manifest.record_artifact(
        "calibration.csv",
        store::hash_file(&out.join("calibration.csv"))?,
    );

    let (zmap, _) = uqmetrics::z_score(gt, &ens.mean, &ens.std, m.z_threshold)?;
    figures::write_zscore_png(&out.join("zscore.png"), &zmap, m.z_threshold)?;
    manifest.record_artifact("zscore.png", store::hash_file(&out.join("zscore.png"))?);
    manifest.record_artifact("zscore.json", store::hash_file(&out.join("zscore.json"))?);

    // Coverage trace down one column: gt against the percentile band.
    let col = m.trace_column.unwrap_or(gt.nx / 2).min(gt.nx - 1);
    let mut rows = Vec::with_capacity(gt.nz);
    for iz in 0..gt.nz {
        let vals: Vec<f64> = ens.samples.iter().map(|s| s.at(iz, col)).collect();
        let lo_p = percentile(&vals, m.coverage_lo);
        let hi_p = percentile(&vals, m.coverage_hi);
        rows.push(format!(
            "{},{},{},{},{}",
            iz,
            gt.at(iz, col),
            lo_p,
            hi_p,
            ens.mean.at(iz, col)
        ));
    }
    figures::write_csv(
        &out.join("coverage_trace.csv"),
        "depth_index,gt,p_lo,p_hi,mean",
        &rows,
    )?;
    manifest.record_artifact(
        "coverage_trace.csv",
        store::hash_file(&out.join("coverage_trace.csv"))?,
    );
    Ok(())
}

pub fn run(
    cfg: &PipelineConfig,
    ensemble_dir: &Path,
    dataset_dir: &Path,
    out: &Path,
) -> Result<()> {
    let snapshot = format!("{}\n# evaluate {}\n", cfg.snapshot, ensemble_dir.display());
    if super::up_to_date(out, &snapshot)? {
        println!("evaluate: {} is up to date, skipping", out.display());
        return Ok(());
    }
    let ens = load_ensemble(ensemble_dir).context("loading ensemble")?;
    let ds = dataset::load_dataset(dataset_dir).context("loading dataset")?;
    let Some(ex) = ds.examples.get(ens.meta.example_index) else {
        bail!("ground truth {} not in dataset", ens.meta.example_index);
    };
    let report = compute_report(cfg, &ds, ex, &ens)?;
    let mut manifest = RunManifest::new(&snapshot);
    write_report_files(cfg, &ds, ex, &ens, &report, out, &mut manifest)?;
    store::write_manifest(out, &manifest)?;
    println!(
        "evaluate: rmse {:.4} ssim {:.3} coverage {:.1}% uce {:.4} z {:.1}% fit {:.1}%",
        report.rmse,
        report.ssim,
        report.coverage_pct,
        report.uce,
        report.z_score_pct,
        report.data_fit_pct
    );
    Ok(())
}
