//! `vmuq report`: median metrics across evaluated examples, one row per
//! condition, as markdown and CSV.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;
use vmuq::store;
use vmuq::uqmetrics::MetricsReport;

/// Median with the even-count average convention.
pub fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Collect `metrics.json` reports grouped by condition: every immediate
/// subdirectory of `run_dir` that contains `eval_*/metrics.json` entries
/// is one condition named after the subdirectory.
pub fn collect(run_dir: &Path) -> Result<BTreeMap<String, Vec<MetricsReport>>> {
    let mut by_condition: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    let mut dirs: Vec<_> = std::fs::read_dir(run_dir)
        .with_context(|| format!("reading {}", run_dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    for dir in dirs {
        let condition = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("unknown")
            .to_string();
        let mut evals: Vec<_> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.starts_with("eval_"))
                        .unwrap_or(false)
            })
            .collect();
        evals.sort();
        for eval in evals {
            let mpath = eval.join("metrics.json");
            if mpath.exists() {
                let report: MetricsReport =
                    serde_json::from_slice(&std::fs::read(&mpath)?)
                        .with_context(|| format!("parsing {}", mpath.display()))?;
                by_condition.entry(condition.clone()).or_default().push(report);
            }
        }
    }
    by_condition.retain(|_, v| !v.is_empty());
    Ok(by_condition)
}

pub fn run(run_dir: &Path, out: &Path) -> Result<()> {
    let by_condition = collect(run_dir)?;
    if by_condition.is_empty() {
        bail!("no evaluated runs found under {}", run_dir.display());
    }
    std::fs::create_dir_all(out)?;

    let mut csv_rows = Vec::new();
    let mut md = String::from(
        "| condition | n | RMSE | SSIM | Coverage % | UCE | z-score % | Data fit % |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for (condition, reports) in &by_condition {
        let pick = |f: fn(&MetricsReport) -> f64| -> f64 {
            let mut v: Vec<f64> = reports.iter().map(f).collect();
            median(&mut v)
        };
        let rmse = pick(|r| r.rmse);
        let ssim = pick(|r| r.ssim);
        let cov = pick(|r| r.coverage_pct);
        let uce = pick(|r| r.uce);
        let z = pick(|r| r.z_score_pct);
        let fit = pick(|r| r.data_fit_pct);
        csv_rows.push(format!(
            "{condition},{},{rmse},{ssim},{cov},{uce},{z},{fit}",
            reports.len()
        ));
        md.push_str(&format!(
            "| {condition} | {} | {rmse:.4} | {ssim:.4} | {cov:.2} | {uce:.5} | {z:.2} | {fit:.2} |\n",
            reports.len()
        ));
    }
    crate::figures::write_csv(
        &out.join("report.csv"),
        "condition,n,rmse,ssim,coverage_pct,uce,z_score_pct,data_fit_pct",
        &csv_rows,
    )?;
    store::write_atomic(&out.join("report.md"), md.as_bytes())?;
    println!("report: {} conditions\n{md}", by_condition.len());
    Ok(())
}
