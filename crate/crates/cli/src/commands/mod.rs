pub mod aspire_cmd;
pub mod evaluate;
pub mod generate;
pub mod infer;
pub mod report;
pub mod train_cmd;

use anyhow::Result;
use std::path::Path;
use vmuq::store;

/// A command is up to date when its output manifest verifies and was
/// produced from an identical config snapshot; reruns then skip all work.
pub fn up_to_date(out: &Path, snapshot: &str) -> Result<bool> {
    let mpath = out.join("manifest.json");
    if !mpath.exists() {
        return Ok(false);
    }
    let manifest = match store::read_manifest(&mpath) {
        Ok(m) => m,
        Err(_) => return Ok(false),
    };
    if manifest.config_snapshot != snapshot {
        return Ok(false);
    }
    Ok(store::verify_manifest(&mpath)?.ok)
}
