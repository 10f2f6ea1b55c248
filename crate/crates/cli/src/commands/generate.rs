//! `vmuq generate`: simulate the paired dataset and persist it.

use crate::config::PipelineConfig;
use anyhow::{Context, Result};
use std::path::Path;
use vmuq::dataset;

pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    if super::up_to_date(out, &cfg.snapshot)? {
        println!("generate: {} is up to date, skipping", out.display());
        return Ok(());
    }
    let n = cfg.dataset.n_total();
    println!(
        "generate: simulating {n} examples ({} train / {} val / {} test) on a {}x{} grid",
        cfg.dataset.n_train,
        cfg.dataset.n_val,
        cfg.dataset.n_test,
        cfg.dataset.geomodel.nz,
        cfg.dataset.geomodel.nx
    );
    let ds = dataset::build_dataset(&cfg.dataset).context("building dataset")?;
    dataset::save_dataset(out, &ds, &cfg.snapshot).context("saving dataset")?;
    println!("generate: wrote {} examples to {}", n, out.display());
    Ok(())
}
