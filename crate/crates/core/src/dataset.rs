//! Paired-dataset construction: synthetic earth models, simulated shot
//! data, poor migration velocities, and physics-based summary volumes,
//! split into train/validation/test and persisted bit-exactly.

use crate::diffusion::{Chw, TrainingPair, VelocityNorm};
use crate::error::{Error, Result};
use crate::field::{percentile, Field2};
use crate::geomodel::{
    generate_layered_model, insert_salt_body, make_migration_velocity, GeomodelConfig, SaltMask,
    VelocityModel,
};
use crate::rng::derive_seed;
use crate::store::{self, RunManifest, Tensor};
use crate::wavesim::{
    add_band_limited_noise, forward_model, ricker, stable_dt, summary_statistic,
    AcquisitionGeometry, ImageVolume, ShotRecord, ShotSet, Wavelet,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Acquisition knobs resolved to concrete numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub n_shots: usize,
    pub source_depth_m: f64,
    pub receiver_interval_m: f64,
    pub receiver_depth_m: f64,
    pub jitter: bool,
    /// 0 selects a conservative stable step automatically.
    pub dt: f64,
    pub record_time_s: f64,
    pub wavelet_f: f64,
    pub wavelet_t0: f64,
    pub snr_db: f64,
}

impl AcquisitionConfig {
    pub fn resolve_dt(&self, model: &VelocityModel) -> f64 {
        if self.dt > 0.0 {
            self.dt
        } else {
            stable_dt(model)
        }
    }

    pub fn nt(&self, dt: f64) -> usize {
        (self.record_time_s / dt).ceil() as usize
    }
}

/// Subsurface-offset axis: `n_side` offsets on each side of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub n_offsets_side: usize,
    pub offset_spacing_cells: usize,
}

impl SummaryConfig {
    pub fn offsets_m(&self, dx: f64) -> Vec<f64> {
        crate::wavesim::symmetric_offsets(self.n_offsets_side, self.offset_spacing_cells, dx)
    }

    pub fn n_channels(&self) -> usize {
        2 * self.n_offsets_side + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub geomodel: GeomodelConfig,
    pub acquisition: AcquisitionConfig,
    pub summary: SummaryConfig,
    /// Gaussian std-devs (cells) for the migration-velocity smoother.
    pub migration_kernel: (f64, f64),
    pub migration_time_domain: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.geomodel.validate()?;
        if self.n_train == 0 {
            return Err(Error::config("need at least one training example"));
        }
        if self.acquisition.n_shots == 0 || self.acquisition.record_time_s <= 0.0 {
            return Err(Error::config("bad acquisition section"));
        }
        if self.acquisition.wavelet_f <= 0.0 {
            return Err(Error::config("wavelet frequency must be positive"));
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One fully simulated example.
#[derive(Debug, Clone)]
pub struct SimulatedExample {
    pub index: usize,
    pub split: Split,
    pub truth: VelocityModel,
    pub salt_mask: SaltMask,
    pub migration_velocity: VelocityModel,
    pub shots: ShotSet,
    pub summary: ImageVolume,
}

/// Dataset-level metadata persisted alongside the examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: DatasetConfig,
    pub geometry: AcquisitionGeometry,
    pub wavelet: Wavelet,
    pub offsets_m: Vec<f64>,
    /// Dataset-wide velocity band over the train split, used for
    /// normalization and metric scaling.
    pub velocity_lo: f64,
    pub velocity_hi: f64,
    pub n_examples: usize,
}

impl DatasetMeta {
    pub fn velocity_norm(&self) -> VelocityNorm {
        VelocityNorm {
            lo: self.velocity_lo,
            hi: self.velocity_hi,
            clamp: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub examples: Vec<SimulatedExample>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> impl Iterator<Item = &SimulatedExample> {
        self.examples.iter().filter(move |e| e.split == which)
    }
}

fn split_of(idx: usize, cfg: &DatasetConfig) -> Split {
    if idx < cfg.n_train {
        Split::Train
    } else if idx < cfg.n_train + cfg.n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Shared acquisition for the whole dataset (amortized inference sees one
/// geometry): a surface line over the configured grid.
pub fn build_geometry(cfg: &DatasetConfig) -> Result<(AcquisitionGeometry, Wavelet)> {
    // A velocity-band probe model fixes the CFL bound for every example.
    let probe = VelocityModel::new(
        cfg.geomodel.dz,
        cfg.geomodel.dx,
        Field2::constant(cfg.geomodel.nz, cfg.geomodel.nx, crate::geomodel::V_MAX),
    )?;
    let dt = cfg.acquisition.resolve_dt(&probe);
    let nt = cfg.acquisition.nt(dt);
    let geom = AcquisitionGeometry::surface_line(
        &probe,
        cfg.acquisition.n_shots,
        cfg.acquisition.source_depth_m,
        cfg.acquisition.receiver_interval_m,
        cfg.acquisition.receiver_depth_m,
        cfg.acquisition.jitter,
        dt,
        nt,
        derive_seed(cfg.seed, "geometry", 0),
    )?;
    let w = ricker(cfg.acquisition.wavelet_f, cfg.acquisition.wavelet_t0, dt, nt)?;
    Ok((geom, w))
}

/// Simulate example `idx`: model, salt, shots (+noise), poor migration
/// velocity, and the conditioning summary volume.
pub fn simulate_example(
    cfg: &DatasetConfig,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
    idx: usize,
) -> Result<SimulatedExample> {
    let model_seed = derive_seed(cfg.seed, "geomodel", idx as u64);
    let salt_seed = derive_seed(cfg.seed, "salt", idx as u64);
    let noise_seed = derive_seed(cfg.seed, "noise", idx as u64);

    let base = generate_layered_model(&cfg.geomodel, model_seed)?;
    let (truth, salt_mask) = insert_salt_body(&base, &cfg.geomodel, salt_seed)?;
    let clean = forward_model(&truth, geom, w)?;
    let shots = add_band_limited_noise(&clean, cfg.acquisition.snr_db, w, noise_seed)?;
    let migration_velocity = make_migration_velocity(
        &truth,
        &salt_mask,
        cfg.migration_kernel,
        cfg.migration_time_domain,
    )?;
    let offsets = cfg.summary.offsets_m(cfg.geomodel.dx);
    let mut summary = summary_statistic(&migration_velocity, &shots, geom, w, &offsets)?;
    summary.migration_velocity_id = format!("ex{idx:04}:migvel");
    Ok(SimulatedExample {
        index: idx,
        split: split_of(idx, cfg),
        truth,
        salt_mask,
        migration_velocity,
        shots,
        summary,
    })
}

/// Build the whole dataset in memory; examples simulate in parallel.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (geometry, wavelet) = build_geometry(cfg)?;
    let examples: Vec<SimulatedExample> = (0..cfg.n_total())
        .into_par_iter()
        .map(|idx| simulate_example(cfg, &geometry, &wavelet, idx))
        .collect::<Result<_>>()?;
    let meta = make_meta(cfg, geometry, wavelet, &examples)?;
    Ok(Dataset { meta, examples })
}

fn make_meta(
    cfg: &DatasetConfig,
    geometry: AcquisitionGeometry,
    wavelet: Wavelet,
    examples: &[SimulatedExample],
) -> Result<DatasetMeta> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in examples.iter().filter(|e| e.split == Split::Train) {
        lo = lo.min(e.truth.values.min());
        hi = hi.max(e.truth.values.max());
    }
    if !(hi > lo) {
        return Err(Error::config("degenerate velocity band in train split"));
    }
    Ok(DatasetMeta {
        config: cfg.clone(),
        geometry,
        offsets_m: cfg.summary.offsets_m(cfg.geomodel.dx),
        wavelet,
        velocity_lo: lo,
        velocity_hi: hi,
        n_examples: examples.len(),
    })
}

/// Which condition channels a network trains on: the full gather stack or
/// the zero-offset slice alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionMode {
    Cig,
    RtmOnly,
}

impl ConditionMode {
    pub fn tag(&self) -> &'static str {
        match self {
            ConditionMode::Cig => "cig",
            ConditionMode::RtmOnly => "rtm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cig" => Ok(ConditionMode::Cig),
            "rtm" => Ok(ConditionMode::RtmOnly),
            other => Err(Error::config(format!("unknown condition mode {other:?}"))),
        }
    }
}

/// Restrict a summary volume to its zero-offset (RTM) slice.
pub fn rtm_only(vol: &ImageVolume) -> ImageVolume {
    let idx = vol.zero_offset_index();
    let slice = vol.volume.slice(idx).to_vec();
    let mut volume = crate::field::Volume3::zeros(vol.volume.nz, vol.volume.nx, 1);
    volume.values_mut().copy_from_slice(&slice);
    ImageVolume {
        volume,
        offsets_m: vec![0.0],
        migration_velocity_id: vol.migration_velocity_id.clone(),
    }
}

/// Apply the condition mode, then normalize.
pub fn normalize_summary_mode(vol: &ImageVolume, mode: ConditionMode) -> Chw {
    match mode {
        ConditionMode::Cig => normalize_summary(vol),
        ConditionMode::RtmOnly => normalize_summary(&rtm_only(vol)),
    }
}

/// Scale used to normalize one summary volume: its 99.5th-percentile
/// absolute value (amplitudes vary by orders of magnitude across models).
pub fn summary_scale(vol: &ImageVolume) -> f64 {
    let abs: Vec<f64> = vol.volume.values().iter().map(|v| v.abs()).collect();
    let s = percentile(&abs, 99.5);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Normalized condition stack of one summary volume, one channel per
/// subsurface offset.
pub fn normalize_summary(vol: &ImageVolume) -> Chw {
    let s = summary_scale(vol);
    let (nz, nx, nh) = (vol.volume.nz, vol.volume.nx, vol.volume.n_offsets);
    Chw {
        c: nh,
        h: nz,
        w: nx,
        data: vol.volume.values().iter().map(|&v| v / s).collect(),
    }
}

/// Build training pairs for a split: normalized velocity target plus the
/// normalized summary channels ([`normalize_summary`]).
pub fn training_pairs(ds: &Dataset, which: Split) -> Vec<TrainingPair> {
    training_pairs_mode(ds, which, ConditionMode::Cig)
}

pub fn training_pairs_mode(ds: &Dataset, which: Split, mode: ConditionMode) -> Vec<TrainingPair> {
    let norm = ds.meta.velocity_norm();
    ds.split(which)
        .map(|e| TrainingPair {
            target: norm.normalize_field(&e.truth.values),
            cond: normalize_summary_mode(&e.summary, mode),
            norm,
        })
        .collect()
}

// ---------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub index: usize,
    pub split: String,
    pub noise_norm: f64,
    pub migration_velocity_id: String,
}

fn field_tensor(f: &Field2) -> Tensor {
    Tensor::from_f64(vec![f.nz as u64, f.nx as u64], f.values().to_vec())
}

fn shots_tensor(shots: &ShotSet) -> Tensor {
    let n_shots = shots.records.len();
    let n_rec = shots.records[0].n_receivers;
    let nt = shots.records[0].nt;
    let mut data = Vec::with_capacity(n_shots * n_rec * nt);
    for r in &shots.records {
        data.extend(r.samples().iter().map(|&v| v as f32));
    }
    Tensor::F32 {
        dims: vec![n_shots as u64, n_rec as u64, nt as u64],
        data,
    }
}

fn volume_tensor(vol: &ImageVolume) -> Tensor {
    Tensor::F32 {
        dims: vec![
            vol.volume.n_offsets as u64,
            vol.volume.nz as u64,
            vol.volume.nx as u64,
        ],
        data: vol.volume.values().iter().map(|&v| v as f32).collect(),
    }
}

pub fn example_dir(root: &Path, idx: usize) -> std::path::PathBuf {
    root.join("examples").join(format!("ex{idx:04}"))
}

/// Persist the dataset under `dir` and return the populated manifest.
pub fn save_dataset(dir: &Path, ds: &Dataset, config_snapshot: &str) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new(config_snapshot);
    manifest.record_seed("dataset", ds.meta.config.seed);
    manifest.record_flag("migration_kernel_std_cells", format!("{:?}", ds.meta.config.migration_kernel));
    manifest.record_flag("migration_time_domain", ds.meta.config.migration_time_domain);
    manifest.record_flag("summary_scale", "per-volume 99.5th percentile of |values|");
    manifest.record_flag("velocity_band", format!("[{}, {}]", ds.meta.velocity_lo, ds.meta.velocity_hi));

    for e in &ds.examples {
        let edir = example_dir(dir, e.index);
        std::fs::create_dir_all(&edir)?;
        let rel = |name: &str| format!("examples/ex{:04}/{}", e.index, name);
        let h = store::write_tensor(&edir.join("velocity.vmuq"), &field_tensor(&e.truth.values))?;
        manifest.record_artifact(rel("velocity.vmuq"), h);
        let mask_f = Field2::from_vec(
            e.salt_mask.nz,
            e.salt_mask.nx,
            e.salt_mask.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )?;
        let h = store::write_tensor(&edir.join("salt_mask.vmuq"), &field_tensor(&mask_f))?;
        manifest.record_artifact(rel("salt_mask.vmuq"), h);
        let h = store::write_tensor(
            &edir.join("migvel.vmuq"),
            &field_tensor(&e.migration_velocity.values),
        )?;
        manifest.record_artifact(rel("migvel.vmuq"), h);
        let h = store::write_tensor(&edir.join("shots.vmuq"), &shots_tensor(&e.shots))?;
        manifest.record_artifact(rel("shots.vmuq"), h);
        let h = store::write_tensor(&edir.join("summary.vmuq"), &volume_tensor(&e.summary))?;
        manifest.record_artifact(rel("summary.vmuq"), h);
        let emeta = ExampleMeta {
            index: e.index,
            split: e.split.tag().to_string(),
            noise_norm: e.shots.noise_norm(),
            migration_velocity_id: e.summary.migration_velocity_id.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&emeta)?;
        store::write_atomic(&edir.join("example.json"), &bytes)?;
        manifest.record_artifact(rel("example.json"), store::hex_digest(&bytes));
    }
    let meta_bytes = serde_json::to_vec_pretty(&ds.meta)?;
    store::write_atomic(&dir.join("dataset.json"), &meta_bytes)?;
    manifest.record_artifact("dataset.json", store::hex_digest(&meta_bytes));
    store::write_manifest(dir, &manifest)?;
    Ok(manifest)
}

fn field_from_tensor(t: &Tensor) -> Result<Field2> {
    let dims = t.dims();
    if dims.len() != 2 {
        return Err(Error::shape("expected a 2D tensor"));
    }
    Field2::from_vec(dims[0] as usize, dims[1] as usize, t.as_f64())
}

/// Load a dataset previously written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(dir.join("dataset.json"))?)?;
    let dz = meta.config.geomodel.dz;
    let dx = meta.config.geomodel.dx;
    let mut examples = Vec::with_capacity(meta.n_examples);
    for idx in 0..meta.n_examples {
        let edir = example_dir(dir, idx);
        let emeta: ExampleMeta =
            serde_json::from_slice(&std::fs::read(edir.join("example.json"))?)?;
        let truth = VelocityModel::new(
            dz,
            dx,
            field_from_tensor(&store::read_tensor(&edir.join("velocity.vmuq"))?)?,
        )?;
        let mask_f = field_from_tensor(&store::read_tensor(&edir.join("salt_mask.vmuq"))?)?;
        let salt_mask = SaltMask {
            nz: mask_f.nz,
            nx: mask_f.nx,
            cells: mask_f.values().iter().map(|&v| v != 0.0).collect(),
        };
        let migration_velocity = VelocityModel::new(
            dz,
            dx,
            field_from_tensor(&store::read_tensor(&edir.join("migvel.vmuq"))?)?,
        )?;
        let shots_t = store::read_tensor(&edir.join("shots.vmuq"))?;
        let sd = shots_t.dims().to_vec();
        if sd.len() != 3 {
            return Err(Error::shape("shots tensor must be 3D"));
        }
        let flat = shots_t.as_f64();
        let (n_shots, n_rec, nt) = (sd[0] as usize, sd[1] as usize, sd[2] as usize);
        let records = (0..n_shots)
            .map(|s| {
                ShotRecord::new(n_rec, nt, flat[s * n_rec * nt..(s + 1) * n_rec * nt].to_vec())
            })
            .collect();
        let shots = ShotSet {
            records,
            geometry: meta.geometry.clone(),
            noise: Some(crate::wavesim::NoiseRealization {
                eps: Vec::new(),
                norm: emeta.noise_norm,
            }),
        };
        let sum_t = store::read_tensor(&edir.join("summary.vmuq"))?;
        let vd = sum_t.dims().to_vec();
        if vd.len() != 3 {
            return Err(Error::shape("summary tensor must be 3D"));
        }
        let mut volume = crate::field::Volume3::zeros(vd[1] as usize, vd[2] as usize, vd[0] as usize);
        volume.values_mut().copy_from_slice(&sum_t.as_f64());
        let summary = ImageVolume {
            volume,
            offsets_m: meta.offsets_m.clone(),
            migration_velocity_id: emeta.migration_velocity_id,
        };
        let split = match emeta.split.as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(Error::config(format!("unknown split tag {other}"))),
        };
        examples.push(SimulatedExample {
            index: idx,
            split,
            truth,
            salt_mask,
            migration_velocity,
            shots,
            summary,
        });
    }
    Ok(Dataset { meta, examples })
}

/// A small, fast configuration for tests and smoke runs.
pub fn smoke_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        geomodel: GeomodelConfig {
            nz: 16,
            nx: 32,
            dz: 12.5,
            dx: 12.5,
            layers_min: 2,
            layers_max: 4,
            undulation_cells: 1.0,
            salt_probability: 0.0,
            ..GeomodelConfig::default()
        },
        acquisition: AcquisitionConfig {
            n_shots: 2,
            source_depth_m: 12.5,
            receiver_interval_m: 25.0,
            receiver_depth_m: 12.5,
            jitter: true,
            dt: 0.0,
            record_time_s: 0.3,
            wavelet_f: 15.0,
            wavelet_t0: 0.08,
            snr_db: 25.0,
        },
        summary: SummaryConfig {
            n_offsets_side: 1,
            offset_spacing_cells: 1,
        },
        migration_kernel: (2.0, 4.0),
        migration_time_domain: true,
        n_train: 2,
        n_val: 0,
        n_test: 1,
        seed,
    }
}
