//! Bit-exact persistence for tensors, checkpoints, and run manifests.
//!
//! Tensor files use a fixed little-endian layout: 4-byte magic `VMUQ`,
//! u32 format version, u32 dtype code (1 = f32, 2 = f64), u32 ndim,
//! `ndim` u64 dims, then the row-major payload. Manifests are JSON files
//! listing every artifact with its SHA-256 content hash.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"VMUQ";
pub const FORMAT_VERSION: u32 = 1;

/// In-memory tensor with dtype tag; dims are row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32 { dims: Vec<u64>, data: Vec<f32> },
    F64 { dims: Vec<u64>, data: Vec<f64> },
}

impl Tensor {
    pub fn dims(&self) -> &[u64] {
        match self {
            Tensor::F32 { dims, .. } | Tensor::F64 { dims, .. } => dims,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::F32 { data, .. } => data.len(),
            Tensor::F64 { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_f64(dims: Vec<u64>, data: Vec<f64>) -> Self {
        Tensor::F64 { dims, data }
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            Tensor::F32 { data, .. } => data.iter().map(|&v| v as f64).collect(),
            Tensor::F64 { data, .. } => data.clone(),
        }
    }

    fn dtype_code(&self) -> u32 {
        match self {
            Tensor::F32 { .. } => 1,
            Tensor::F64 { .. } => 2,
        }
    }

    fn element_count(&self) -> u64 {
        self.dims().iter().product()
    }

    fn is_finite(&self) -> bool {
        match self {
            Tensor::F32 { data, .. } => data.iter().all(|v| v.is_finite()),
            Tensor::F64 { data, .. } => data.iter().all(|v| v.is_finite()),
        }
    }
}

/// Serialize a tensor to `path` (write-temp-then-rename) and return the
/// SHA-256 hash of the file bytes.
pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<String> {
    if !tensor.is_finite() {
        return Err(Error::config(format!(
            "refusing to write non-finite tensor to {}",
            path.display()
        )));
    }
    if tensor.element_count() != tensor.len() as u64 {
        return Err(Error::shape(format!(
            "dims {:?} imply {} elements, payload has {}",
            tensor.dims(),
            tensor.element_count(),
            tensor.len()
        )));
    }
    let mut bytes = Vec::with_capacity(16 + 8 * tensor.dims().len() + tensor.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&tensor.dtype_code().to_le_bytes());
    bytes.extend_from_slice(&(tensor.dims().len() as u32).to_le_bytes());
    for d in tensor.dims() {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::F32 { data, .. } => {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::F64 { data, .. } => {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_atomic(path, &bytes)?;
    Ok(hex_digest(&bytes))
}

/// Read and validate a tensor file.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let parse = |offset: u64, reason: String| Error::Parse {
        path: path.display().to_string(),
        offset,
        reason,
    };
    if bytes.len() < 16 {
        return Err(parse(0, format!("file too short: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(parse(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(parse(4, format!("unsupported format version {version}")));
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let elem_size = match dtype {
        1 => 4usize,
        2 => 8usize,
        other => return Err(parse(8, format!("unknown dtype code {other}"))),
    };
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_len = 16 + 8 * ndim;
    if bytes.len() < header_len {
        return Err(parse(
            16,
            format!("truncated header: need {} bytes, have {}", header_len, bytes.len()),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 16 + 8 * i;
        dims.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    let count = dims.iter().product::<u64>() as usize;
    // Cross-check against the real file size before allocating.
    let expected = header_len + count * elem_size;
    if bytes.len() != expected {
        return Err(parse(
            header_len as u64,
            format!("payload length mismatch: expected {} bytes, actual {}", expected, bytes.len()),
        ));
    }
    let payload = &bytes[header_len..];
    Ok(match dtype {
        1 => Tensor::F32 {
            dims,
            data: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        },
        _ => Tensor::F64 {
            dims,
            data: payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        },
    })
}

/// Run manifest: content hashes for every artifact plus the configuration
/// snapshot and design-decision flags that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config_snapshot: String,
    pub seeds: BTreeMap<String, u64>,
    pub decision_flags: BTreeMap<String, String>,
    /// Artifact path (relative to the manifest directory) -> SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_snapshot: impl Into<String>) -> Self {
        RunManifest {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config_snapshot: config_snapshot.into(),
            seeds: BTreeMap::new(),
            decision_flags: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record_seed(&mut self, name: impl Into<String>, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    pub fn record_flag(&mut self, name: impl Into<String>, value: impl ToString) {
        self.decision_flags.insert(name.into(), value.to_string());
    }

    pub fn record_artifact(&mut self, rel_path: impl Into<String>, hash: impl Into<String>) {
        self.artifacts.insert(rel_path.into(), hash.into());
    }
}

/// Outcome of re-hashing every artifact listed in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub missing: Vec<String>,
    pub mismatched: Vec<String>,
    pub checked: usize,
}

/// Write `manifest.json` into `dir` and return its path.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&path, &json)?;
    Ok(path)
}

/// Re-hash every artifact named by the manifest at `path`.
pub fn verify_manifest(path: &Path) -> Result<VerifyReport> {
    let manifest = read_manifest(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    for (rel, expected) in &manifest.artifacts {
        let p = dir.join(rel);
        match fs::read(&p) {
            Ok(bytes) => {
                if hex_digest(&bytes) != *expected {
                    mismatched.push(rel.clone());
                }
            }
            Err(_) => missing.push(rel.clone()),
        }
    }
    Ok(VerifyReport {
        ok: missing.is_empty() && mismatched.is_empty(),
        missing,
        mismatched,
        checked: manifest.artifacts.len(),
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let mut f = fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

/// SHA-256 hex digest of a byte slice.
pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Hash an existing file's bytes.
pub fn hash_file(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

/// Write bytes to a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("vmuq-store-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_all_dtypes_and_ranks() {
        let dir = tmpdir("roundtrip");
        let mut rng = Prng::seeded(11);
        for ndim in 1..=4usize {
            let dims: Vec<u64> = (0..ndim).map(|i| (i + 2) as u64).collect();
            let count = dims.iter().product::<u64>() as usize;
            let data64: Vec<f64> = (0..count).map(|_| rng.normal()).collect();
            let t64 = Tensor::F64 {
                dims: dims.clone(),
                data: data64.clone(),
            };
            let p = dir.join(format!("t64_{ndim}.vmuq"));
            write_tensor(&p, &t64).unwrap();
            assert_eq!(read_tensor(&p).unwrap(), t64);

            let t32 = Tensor::F32 {
                dims,
                data: data64.iter().map(|&v| v as f32).collect(),
            };
            let p = dir.join(format!("t32_{ndim}.vmuq"));
            write_tensor(&p, &t32).unwrap();
            assert_eq!(read_tensor(&p).unwrap(), t32);
        }
    }

    #[test]
    fn layout_of_2x2_f32_zeros() {
        let dir = tmpdir("layout");
        let t = Tensor::F32 {
            dims: vec![2, 2],
            data: vec![0.0; 4],
        };
        let p = dir.join("z.vmuq");
        write_tensor(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 32 + 16);
        assert_eq!(&bytes[0..4], b"VMUQ");
        assert!(bytes[32..].iter().all(|&b| b == 0));
    }

    #[test]
    fn same_tensor_same_hash() {
        let dir = tmpdir("hash");
        let t = Tensor::from_f64(vec![3], vec![1.0, 2.0, 3.0]);
        let h1 = write_tensor(&dir.join("a.vmuq"), &t).unwrap();
        let h2 = write_tensor(&dir.join("b.vmuq"), &t).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn corrupted_magic_is_a_parse_error_at_offset_zero() {
        let dir = tmpdir("magic");
        let p = dir.join("bad.vmuq");
        let t = Tensor::from_f64(vec![2], vec![1.0, 2.0]);
        write_tensor(&p, &t).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        match read_tensor(&p) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_names_expected_and_actual_lengths() {
        let dir = tmpdir("trunc");
        let p = dir.join("short.vmuq");
        let t = Tensor::from_f64(vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        write_tensor(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        match read_tensor(&p) {
            Err(Error::Parse { reason, .. }) => {
                assert!(reason.contains("expected") && reason.contains("actual"), "{reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_tensor_is_rejected() {
        let dir = tmpdir("nonfinite");
        let t = Tensor::from_f64(vec![1], vec![f64::NAN]);
        assert!(write_tensor(&dir.join("nan.vmuq"), &t).is_err());
    }

    #[test]
    fn manifest_verify_passes_then_fails_on_flip() {
        let dir = tmpdir("manifest");
        let t = Tensor::from_f64(vec![2], vec![5.0, 6.0]);
        let h = write_tensor(&dir.join("x.vmuq"), &t).unwrap();
        let mut m = RunManifest::new("cfg");
        m.record_artifact("x.vmuq", h);
        m.record_seed("root", 9);
        let mpath = write_manifest(&dir, &m).unwrap();
        let rep = verify_manifest(&mpath).unwrap();
        assert!(rep.ok, "{rep:?}");

        // Flip one payload byte; verification must name exactly that artifact.
        let p = dir.join("x.vmuq");
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&p, &bytes).unwrap();
        let rep = verify_manifest(&mpath).unwrap();
        assert!(!rep.ok);
        assert_eq!(rep.mismatched, vec!["x.vmuq".to_string()]);
        assert!(rep.missing.is_empty());
    }

    #[test]
    fn missing_artifact_is_reported_by_path() {
        let dir = tmpdir("missing");
        let mut m = RunManifest::new("cfg");
        m.record_artifact("ghost.vmuq", "00".repeat(32));
        let mpath = write_manifest(&dir, &m).unwrap();
        let rep = verify_manifest(&mpath).unwrap();
        assert!(!rep.ok);
        assert_eq!(rep.missing, vec!["ghost.vmuq".to_string()]);
    }
}
