//! Sectioned key/value configuration: a human-diffable TOML-style text
//! format with environment-variable overrides (`VMUQ_<SECTION>__<KEY>`).

use anyhow::{anyhow, bail, Context, Result};
use std::collections::BTreeMap;
use vmuq::aspire::AspireConfig;
use vmuq::dataset::{AcquisitionConfig, DatasetConfig, SummaryConfig};
use vmuq::diffusion::{TrainConfig, ValidationConfig};
use vmuq::geomodel::GeomodelConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Str(String),
    List(Vec<f64>),
}

impl Value {
    fn parse(raw: &str) -> Result<Value> {
        let raw = raw.trim();
        if raw.eq_ignore_ascii_case("true") {
            return Ok(Value::Bool(true));
        }
        if raw.eq_ignore_ascii_case("false") {
            return Ok(Value::Bool(false));
        }
        if let Some(inner) = raw.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("unterminated list: {raw}"))?;
            let mut items = Vec::new();
            for part in inner.split(',') {
                let part = part.trim();
                if part.is_empty() {
                    continue;
                }
                items.push(
                    part.parse::<f64>()
                        .with_context(|| format!("bad list item {part:?}"))?,
                );
            }
            return Ok(Value::List(items));
        }
        if let Some(stripped) = raw.strip_prefix('"') {
            let s = stripped
                .strip_suffix('"')
                .ok_or_else(|| anyhow!("unterminated string: {raw}"))?;
            return Ok(Value::Str(s.to_string()));
        }
        if let Ok(n) = raw.parse::<f64>() {
            return Ok(Value::Num(n));
        }
        Ok(Value::Str(raw.to_string()))
    }
}

/// Parsed configuration: `(section, key) -> value`, plus the raw text for
/// manifest snapshots.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    pub entries: BTreeMap<(String, String), Value>,
    pub snapshot: String,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<ConfigMap> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                section = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: bad section header", lineno + 1))?
                    .trim()
                    .to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            if section.is_empty() {
                bail!("line {}: key outside any [section]", lineno + 1);
            }
            entries.insert(
                (section.clone(), key.trim().to_string()),
                Value::parse(value).with_context(|| format!("line {}", lineno + 1))?,
            );
        }
        Ok(ConfigMap {
            entries,
            snapshot: text.to_string(),
        })
    }

    /// Apply `VMUQ_<SECTION>__<KEY>` environment overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        for (name, raw) in std::env::vars() {
            let Some(rest) = name.strip_prefix("VMUQ_") else {
                continue;
            };
            let Some((section, key)) = rest.split_once("__") else {
                continue;
            };
            let section = section.to_ascii_lowercase();
            let key = key.to_ascii_lowercase();
            let value =
                Value::parse(&raw).with_context(|| format!("env override {name}"))?;
            self.snapshot
                .push_str(&format!("\n# env override\n[{section}]\n{key} = {raw}\n"));
            self.entries.insert((section, key), value);
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Num(n)) => Ok(*n),
            Some(other) => bail!("[{section}] {key}: expected a number, got {other:?}"),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        let n = self.f64_or(section, key, default as f64)?;
        if n < 0.0 || n.fract() != 0.0 {
            bail!("[{section}] {key}: expected a non-negative integer, got {n}");
        }
        Ok(n as usize)
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        let n = self.f64_or(section, key, default as f64)?;
        if n < 0.0 || n.fract() != 0.0 {
            bail!("[{section}] {key}: expected a non-negative integer, got {n}");
        }
        Ok(n as u64)
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(other) => bail!("[{section}] {key}: expected a bool, got {other:?}"),
        }
    }

    pub fn str_or(&self, section: &str, key: &str, default: &str) -> Result<String> {
        match self.get(section, key) {
            None => Ok(default.to_string()),
            Some(Value::Str(s)) => Ok(s.clone()),
            Some(other) => bail!("[{section}] {key}: expected a string, got {other:?}"),
        }
    }

    pub fn list_or(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(Value::List(v)) => Ok(v.clone()),
            Some(other) => bail!("[{section}] {key}: expected a list, got {other:?}"),
        }
    }
}

/// Everything the pipeline commands need, resolved and cross-validated.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub metrics: MetricsConfig,
    pub aspire: AspireParams,
    pub seed: u64,
    pub snapshot: String,
}

#[derive(Debug, Clone)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub sampler_steps: usize,
    pub churn: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsConfig {
    pub n_bins: usize,
    pub coverage_lo: f64,
    pub coverage_hi: f64,
    pub z_threshold: f64,
    /// "mean" pushes the posterior mean through the forward operator;
    /// "sample0" uses the first posterior sample.
    pub data_fit_on: String,
    pub trace_column: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AspireParams {
    pub iterations: usize,
    pub flood: Vec<bool>,
    pub rebuild_ensemble: usize,
    pub rebuild_sampler_steps: usize,
    pub flood_threshold: f64,
    pub flood_velocity: f64,
    pub migration_ensemble: usize,
    pub bottom_salt_margin: usize,
}

impl PipelineConfig {
    pub fn from_text(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut map = ConfigMap::parse(text)?;
        map.apply_env()?;
        Self::from_map(map, seed_override)
    }

    pub fn from_map(map: ConfigMap, seed_override: Option<u64>) -> Result<Self> {
        let seed = seed_override.unwrap_or(map.u64_or("seeds", "root", 42)?);

        let g = GeomodelConfig::default();
        let salt_rz = map.list_or("geomodel", "salt_rz_frac", &[g.salt_rz_frac.0, g.salt_rz_frac.1])?;
        let salt_rx = map.list_or("geomodel", "salt_rx_frac", &[g.salt_rx_frac.0, g.salt_rx_frac.1])?;
        if salt_rz.len() != 2 || salt_rx.len() != 2 {
            bail!("[geomodel] salt size ranges need exactly two entries");
        }
        let geomodel = GeomodelConfig {
            nz: map.usize_or("geomodel", "nz", 64)?,
            nx: map.usize_or("geomodel", "nx", 128)?,
            dz: map.f64_or("geomodel", "dz", 12.5)?,
            dx: map.f64_or("geomodel", "dx", 12.5)?,
            layers_min: map.usize_or("geomodel", "layers_min", g.layers_min)?,
            layers_max: map.usize_or("geomodel", "layers_max", g.layers_max)?,
            v_top: map.f64_or("geomodel", "v_top", g.v_top)?,
            v_gradient: map.f64_or("geomodel", "v_gradient", g.v_gradient)?,
            v_perturb: map.f64_or("geomodel", "v_perturb", g.v_perturb)?,
            max_sediment_v: map.f64_or("geomodel", "max_sediment_v", g.max_sediment_v)?,
            undulation_cells: map.f64_or("geomodel", "undulation_cells", g.undulation_cells)?,
            salt_probability: map.f64_or("geomodel", "salt_probability", g.salt_probability)?,
            salt_v: map.f64_or("geomodel", "salt_v", g.salt_v)?,
            salt_rz_frac: (salt_rz[0], salt_rz[1]),
            salt_rx_frac: (salt_rx[0], salt_rx[1]),
            seed,
        };

        let acquisition = AcquisitionConfig {
            n_shots: map.usize_or("acquisition", "n_shots", 8)?,
            source_depth_m: map.f64_or("acquisition", "source_depth_m", geomodel.dz)?,
            receiver_interval_m: map.f64_or("acquisition", "receiver_interval_m", 3.0 * geomodel.dx)?,
            receiver_depth_m: map.f64_or("acquisition", "receiver_depth_m", geomodel.dz)?,
            jitter: map.bool_or("acquisition", "jitter", true)?,
            dt: map.f64_or("acquisition", "dt", 0.0)?,
            record_time_s: map.f64_or("acquisition", "record_time_s", 1.1)?,
            wavelet_f: map.f64_or("acquisition", "wavelet_f", 15.0)?,
            wavelet_t0: map.f64_or("acquisition", "wavelet_t0", 0.1)?,
            snr_db: map.f64_or("acquisition", "snr_db", 25.0)?,
        };

        let summary = SummaryConfig {
            n_offsets_side: map.usize_or("summary", "n_offsets_side", 4)?,
            offset_spacing_cells: map.usize_or("summary", "offset_spacing_cells", 1)?,
        };

        let dataset = DatasetConfig {
            geomodel,
            acquisition,
            summary,
            migration_kernel: (
                map.f64_or("migration", "kernel_z", 3.0)?,
                map.f64_or("migration", "kernel_x", 6.0)?,
            ),
            migration_time_domain: map.bool_or("migration", "time_domain", true)?,
            n_train: map.usize_or("splits", "n_train", 700)?,
            n_val: map.usize_or("splits", "n_val", 8)?,
            n_test: map.usize_or("splits", "n_test", 8)?,
            seed,
        };

        let widths_raw = map.list_or("diffusion", "widths", &[32.0, 64.0, 128.0])?;
        if widths_raw.len() != 3 {
            bail!("[diffusion] widths needs exactly three entries");
        }
        let validation = {
            let every = map.usize_or("diffusion", "val_every", 0)?;
            if every > 0 {
                Some(ValidationConfig {
                    every,
                    ensemble: map.usize_or("diffusion", "val_ensemble", 4)?,
                    sampler_steps: map.usize_or("diffusion", "val_sampler_steps", 15)?,
                    patience: map.usize_or("diffusion", "val_patience", 3)?,
                })
            } else {
                None
            }
        };
        let train = TrainConfig {
            widths: [
                widths_raw[0] as usize,
                widths_raw[1] as usize,
                widths_raw[2] as usize,
            ],
            emb_dim: map.usize_or("diffusion", "emb_dim", 32)?,
            emb_features: map.usize_or("diffusion", "emb_features", 8)?,
            sigma_data: map.f64_or("diffusion", "sigma_data", 0.5)?,
            steps: map.usize_or("diffusion", "steps", 2000)?,
            batch_size: map.usize_or("diffusion", "batch_size", 8)?,
            lr: map.f64_or("diffusion", "lr", 1e-4)?,
            grad_clip: map.f64_or("diffusion", "grad_clip", 1.0)?,
            seed,
            validation,
        };

        let sampling = SamplingConfig {
            n_samples: map.usize_or("sampling", "n_samples", 64)?,
            sampler_steps: map.usize_or("sampling", "sampler_steps", 40)?,
            churn: map.f64_or("sampling", "churn", 0.0)?,
        };

        let metrics = MetricsConfig {
            n_bins: map.usize_or("metrics", "n_bins", 10)?,
            coverage_lo: map.f64_or("metrics", "coverage_lo", 1.0)?,
            coverage_hi: map.f64_or("metrics", "coverage_hi", 99.0)?,
            z_threshold: map.f64_or("metrics", "z_threshold", 2.0)?,
            data_fit_on: map.str_or("metrics", "data_fit_on", "mean")?,
            trace_column: {
                let c = map.usize_or("metrics", "trace_column", usize::MAX)?;
                if c == usize::MAX {
                    None
                } else {
                    Some(c)
                }
            },
        };
        if metrics.data_fit_on != "mean" && metrics.data_fit_on != "sample0" {
            bail!("[metrics] data_fit_on must be \"mean\" or \"sample0\"");
        }

        let flood_raw = map.list_or("aspire", "flood", &[0.0, 1.0])?;
        let aspire = AspireParams {
            iterations: map.usize_or("aspire", "iterations", 2)?,
            flood: flood_raw.iter().map(|&v| v != 0.0).collect(),
            rebuild_ensemble: map.usize_or("aspire", "rebuild_ensemble", 16)?,
            rebuild_sampler_steps: map.usize_or("aspire", "rebuild_sampler_steps", 20)?,
            flood_threshold: map.f64_or("aspire", "flood_threshold", 4200.0)?,
            flood_velocity: map.f64_or("aspire", "flood_velocity", 4500.0)?,
            migration_ensemble: map.usize_or("aspire", "migration_ensemble", 16)?,
            bottom_salt_margin: map.usize_or("aspire", "bottom_salt_margin", 4)?,
        };

        let cfg = PipelineConfig {
            dataset,
            train,
            sampling,
            metrics,
            aspire,
            seed,
            snapshot: map.snapshot,
        };
        cfg.cross_validate()?;
        Ok(cfg)
    }

    /// Consistency checks that must pass before any stage runs: grid
    /// shapes, CFL, and wavelet resolvability.
    pub fn cross_validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|e| anyhow!("dataset config: {e}"))?;
        if self.dataset.geomodel.nz % 4 != 0 || self.dataset.geomodel.nx % 4 != 0 {
            bail!(
                "grid {}x{} must be divisible by 4 for the network",
                self.dataset.geomodel.nz,
                self.dataset.geomodel.nx
            );
        }
        // Builds the geometry, which checks CFL against v_max and the
        // wavelet against the time axis.
        vmuq::dataset::build_geometry(&self.dataset)
            .map_err(|e| anyhow!("acquisition config: {e}"))?;
        Ok(())
    }

    pub fn aspire_config(&self) -> AspireConfig {
        AspireConfig {
            iterations: self.aspire.iterations,
            flood_schedule: self.aspire.flood.clone(),
            train: self.train.clone(),
            rebuild_ensemble: self.aspire.rebuild_ensemble,
            rebuild_sampler_steps: self.aspire.rebuild_sampler_steps,
            infer_ensemble: self.sampling.n_samples,
            infer_sampler_steps: self.sampling.sampler_steps,
            flood_threshold: self.aspire.flood_threshold,
            flood_velocity: self.aspire.flood_velocity,
            seed: self.seed,
        }
    }
}
