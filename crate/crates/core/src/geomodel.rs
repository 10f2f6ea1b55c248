//! Synthetic ground-truth velocity models: sediment layering, optional salt
//! bodies, deliberately poor migration velocities, and salt flooding.

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::rng::Prng;
use serde::{Deserialize, Serialize};

/// Hard velocity bounds for every model in the repo, m/s.
pub const V_MIN: f64 = 1400.0;
pub const V_MAX: f64 = 5000.0;

/// Default velocity threshold for picking top salt, m/s.
pub const DEFAULT_TOP_SALT_THRESHOLD: f64 = 4200.0;

/// Gridded 2D acoustic velocity field in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    pub dz: f64,
    pub dx: f64,
    pub values: Field2,
}

impl VelocityModel {
    pub fn new(dz: f64, dx: f64, values: Field2) -> Result<Self> {
        let m = VelocityModel { dz, dx, values };
        m.validate()?;
        Ok(m)
    }

    pub fn nz(&self) -> usize {
        self.values.nz
    }

    pub fn nx(&self) -> usize {
        self.values.nx
    }

    pub fn validate(&self) -> Result<()> {
        if self.nz() < 8 || self.nx() < 8 {
            return Err(Error::config(format!(
                "grid {}x{} below the 8x8 minimum",
                self.nz(),
                self.nx()
            )));
        }
        if !(self.dz > 0.0 && self.dx > 0.0) {
            return Err(Error::config("grid spacing must be positive"));
        }
        for &v in self.values.values() {
            if !v.is_finite() || !(V_MIN..=V_MAX).contains(&v) {
                return Err(Error::config(format!(
                    "velocity {v} outside [{V_MIN}, {V_MAX}] m/s"
                )));
            }
        }
        Ok(())
    }

    /// Clamp all values into the legal velocity band.
    pub fn clamped(mut self) -> Self {
        for v in self.values.values_mut() {
            *v = v.clamp(V_MIN, V_MAX);
        }
        self
    }
}

/// Boolean salt mask on the same grid as its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaltMask {
    pub nz: usize,
    pub nx: usize,
    pub cells: Vec<bool>,
}

impl SaltMask {
    pub fn empty(nz: usize, nx: usize) -> Self {
        SaltMask {
            nz,
            nx,
            cells: vec![false; nz * nx],
        }
    }

    #[inline]
    pub fn at(&self, iz: usize, ix: usize) -> bool {
        self.cells[iz * self.nx + ix]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    pub fn matches(&self, model: &VelocityModel) -> bool {
        self.nz == model.nz() && self.nx == model.nx()
    }
}

/// Parameters of the layered + salt generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeomodelConfig {
    pub nz: usize,
    pub nx: usize,
    pub dz: f64,
    pub dx: f64,
    /// Inclusive range for the number of sediment layers.
    pub layers_min: usize,
    pub layers_max: usize,
    /// Mean velocity of the shallowest layer, m/s.
    pub v_top: f64,
    /// Velocity-vs-depth trend, m/s per meter.
    pub v_gradient: f64,
    /// Per-layer random deviation from the trend, m/s.
    pub v_perturb: f64,
    /// Cap for sediment velocities, m/s; keeps sediments below salt.
    pub max_sediment_v: f64,
    /// Amplitude of lateral interface undulation, in cells.
    pub undulation_cells: f64,
    pub salt_probability: f64,
    pub salt_v: f64,
    /// Salt half-height range as a fraction of nz.
    pub salt_rz_frac: (f64, f64),
    /// Salt half-width range as a fraction of nx.
    pub salt_rx_frac: (f64, f64),
    /// Base seed for dataset-level derivations.
    pub seed: u64,
}

impl Default for GeomodelConfig {
    fn default() -> Self {
        GeomodelConfig {
            nz: 64,
            nx: 128,
            dz: 12.5,
            dx: 12.5,
            layers_min: 4,
            layers_max: 8,
            v_top: 1500.0,
            v_gradient: 2.2,
            v_perturb: 60.0,
            max_sediment_v: 3500.0,
            undulation_cells: 2.0,
            salt_probability: 0.5,
            salt_v: 4500.0,
            salt_rz_frac: (0.12, 0.25),
            salt_rx_frac: (0.12, 0.3),
            seed: 0,
        }
    }
}

impl GeomodelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nz < 8 || self.nx < 8 {
            return Err(Error::config("grid must be at least 8x8"));
        }
        if !(self.dz > 0.0 && self.dx > 0.0) {
            return Err(Error::config("grid spacing must be positive"));
        }
        if self.layers_min == 0 || self.layers_min > self.layers_max {
            return Err(Error::config(format!(
                "empty layer-count range [{}, {}]",
                self.layers_min, self.layers_max
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_probability) {
            return Err(Error::config("salt probability outside [0, 1]"));
        }
        if self.salt_rz_frac.0 > self.salt_rz_frac.1 || self.salt_rx_frac.0 > self.salt_rx_frac.1 {
            return Err(Error::config("empty salt size range"));
        }
        if !(V_MIN..=V_MAX).contains(&self.salt_v) {
            return Err(Error::config("salt velocity outside velocity band"));
        }
        if self.v_perturb < 0.0 {
            return Err(Error::config("perturbation scale must be non-negative"));
        }
        Ok(())
    }
}

/// One generated layer: top row per column is `top + undulation(x)`.
#[derive(Debug, Clone)]
pub struct LayerLog {
    pub top_row: usize,
    pub mean_velocity: f64,
}

/// Generate a layered sediment model; deterministic given `(cfg, seed)`.
pub fn generate_layered_model(cfg: &GeomodelConfig, seed: u64) -> Result<VelocityModel> {
    generate_layered_model_logged(cfg, seed).map(|(m, _)| m)
}

/// Same as [`generate_layered_model`] but also returns the layer table the
/// generator used, for inspection.
pub fn generate_layered_model_logged(
    cfg: &GeomodelConfig,
    seed: u64,
) -> Result<(VelocityModel, Vec<LayerLog>)> {
    cfg.validate()?;
    let mut rng = Prng::seeded(seed);
    let n_layers = cfg.layers_min + rng.index(cfg.layers_max - cfg.layers_min + 1);
    let nz = cfg.nz;
    let nx = cfg.nx;

    // Nominal interface rows: even split with bounded jitter, kept ordered.
    let mut tops = vec![0usize];
    for k in 1..n_layers {
        let base = k as f64 / n_layers as f64 * nz as f64;
        let jitter = rng.range(-0.25, 0.25) * nz as f64 / n_layers as f64;
        let row = (base + jitter).round().clamp(1.0, (nz - 1) as f64) as usize;
        tops.push(row.max(tops[k - 1] + 1).min(nz - 1));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for &top in &tops {
        let depth_m = (top as f64 + 0.5 * nz as f64 / n_layers as f64) * cfg.dz;
        let v = cfg.v_top + cfg.v_gradient * depth_m + cfg.v_perturb * rng.normal();
        layers.push(LayerLog {
            top_row: top,
            mean_velocity: v.clamp(V_MIN, cfg.max_sediment_v.min(V_MAX)),
        });
    }

    // Lateral undulation shared by all interfaces of one model.
    let phase = rng.range(0.0, std::f64::consts::TAU);
    let cycles = rng.range(0.8, 2.2);
    let amp = cfg.undulation_cells;

    let mut values = Field2::zeros(nz, nx);
    for ix in 0..nx {
        let wobble =
            amp * (std::f64::consts::TAU * cycles * ix as f64 / nx as f64 + phase).sin();
        for iz in 0..nz {
            // Find the deepest layer whose undulated top is at or above iz.
            let mut v = layers[0].mean_velocity;
            for (k, layer) in layers.iter().enumerate() {
                let top = if k == 0 {
                    0.0
                } else {
                    layer.top_row as f64 + wobble
                };
                if (iz as f64) >= top {
                    v = layer.mean_velocity;
                }
            }
            *values.at_mut(iz, ix) = v;
        }
    }

    let model = VelocityModel::new(cfg.dz, cfg.dx, values)?.clamped();
    Ok((model, layers))
}

/// Insert a single connected salt body; no-op when the salt probability
/// roll fails. The body is star-shaped (wobbled ellipse), so connected.
pub fn insert_salt_body(
    model: &VelocityModel,
    cfg: &GeomodelConfig,
    seed: u64,
) -> Result<(VelocityModel, SaltMask)> {
    model.validate()?;
    cfg.validate()?;
    let nz = model.nz();
    let nx = model.nx();
    let mut rng = Prng::seeded(seed);
    if !rng.chance(cfg.salt_probability) {
        return Ok((model.clone(), SaltMask::empty(nz, nx)));
    }

    // Keep the body top below the shallow sediment band.
    let top_limit = (0.18 * nz as f64).ceil() as usize;
    let wobble_amp = 0.12;
    let mut rz = rng.range(cfg.salt_rz_frac.0, cfg.salt_rz_frac.1) * nz as f64;
    let mut rx = rng.range(cfg.salt_rx_frac.0, cfg.salt_rx_frac.1) * nx as f64;
    let cz = rng.range(
        top_limit as f64 + rz * (1.0 + wobble_amp) + 1.0,
        0.85 * nz as f64,
    );
    let cx = rng.range(0.2 * nx as f64, 0.8 * nx as f64);
    // Shrink to fit instead of erroring when the body would leave the grid.
    let max_rz = ((nz as f64 - 1.0 - cz).min(cz - top_limit as f64) / (1.0 + wobble_amp)).max(1.0);
    let max_rx = ((nx as f64 - 1.0 - cx).min(cx) / (1.0 + wobble_amp)).max(1.0);
    rz = rz.min(max_rz);
    rx = rx.min(max_rx);
    let lobes = 2.0 + rng.index(3) as f64;
    let phi = rng.range(0.0, std::f64::consts::TAU);

    let mut out = model.clone();
    let mut mask = SaltMask::empty(nz, nx);
    for iz in 0..nz {
        for ix in 0..nx {
            let uz = (iz as f64 - cz) / rz;
            let ux = (ix as f64 - cx) / rx;
            let rho = (uz * uz + ux * ux).sqrt();
            let theta = uz.atan2(ux);
            if rho <= 1.0 + wobble_amp * (lobes * theta + phi).sin() {
                mask.cells[iz * nx + ix] = true;
                *out.values.at_mut(iz, ix) = cfg.salt_v;
            }
        }
    }
    out.validate()?;
    Ok((out, mask))
}

/// Replace salt cells with the mean of the sediment (non-salt) cells.
pub fn replace_salt_with_sediment_mean(
    model: &VelocityModel,
    mask: &SaltMask,
) -> Result<VelocityModel> {
    if !mask.matches(model) {
        return Err(Error::shape("mask grid does not match model grid"));
    }
    let n_sediment = model.values.values().len() - mask.count();
    if n_sediment == 0 {
        return Err(Error::config(
            "all-salt model: sediment mean is undefined",
        ));
    }
    let sediment_mean = model
        .values
        .values()
        .iter()
        .zip(&mask.cells)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .sum::<f64>()
        / n_sediment as f64;
    let mut out = model.clone();
    for (v, &m) in out.values.values_mut().iter_mut().zip(&mask.cells) {
        if m {
            *v = sediment_mean;
        }
    }
    Ok(out)
}

/// Build a deliberately poor migration velocity: salt replaced by the
/// sediment mean, then smoothed (optionally in vertical two-way time).
pub fn make_migration_velocity(
    model: &VelocityModel,
    mask: &SaltMask,
    kernel: (f64, f64),
    use_time_domain: bool,
) -> Result<VelocityModel> {
    let replaced = replace_salt_with_sediment_mean(model, mask)?;
    let (kz, kx) = kernel;
    if kz < 0.0 || kx < 0.0 {
        return Err(Error::config("kernel std-devs must be non-negative"));
    }
    if kz == 0.0 && kx == 0.0 {
        return Ok(replaced);
    }
    let smoothed = if use_time_domain {
        let (in_time, times) = depth_to_time(&replaced.values, replaced.dz);
        let sm = gaussian_smooth(&in_time, kz, kx);
        time_to_depth(&sm, &times)
    } else {
        gaussian_smooth(&replaced.values, kz, kx)
    };
    Ok(VelocityModel {
        dz: model.dz,
        dx: model.dx,
        values: smoothed,
    }
    .clamped())
}

/// Per-column resampling from depth to uniform vertical two-way time.
/// Returns the resampled field and, per column, the cumulative two-way
/// times of the depth samples (needed to invert the mapping).
fn depth_to_time(field: &Field2, dz: f64) -> (Field2, Vec<Vec<f64>>) {
    let nz = field.nz;
    let nx = field.nx;
    let mut out = Field2::zeros(nz, nx);
    let mut all_times = Vec::with_capacity(nx);
    for ix in 0..nx {
        // t[i] = two-way time to the i-th depth sample.
        let mut t = Vec::with_capacity(nz);
        let mut acc = 0.0;
        for iz in 0..nz {
            t.push(acc);
            acc += 2.0 * dz / field.at(iz, ix);
        }
        let t_max = *t.last().unwrap();
        for j in 0..nz {
            let tau = t_max * j as f64 / (nz - 1) as f64;
            *out.at_mut(j, ix) = interp_monotone(&t, field, ix, tau);
        }
        all_times.push(t);
    }
    (out, all_times)
}

fn time_to_depth(field_t: &Field2, times: &[Vec<f64>]) -> Field2 {
    let nz = field_t.nz;
    let nx = field_t.nx;
    let mut out = Field2::zeros(nz, nx);
    for ix in 0..nx {
        let t = &times[ix];
        let t_max = *t.last().unwrap();
        for iz in 0..nz {
            // Position of this depth sample on the uniform time axis.
            let tau = t[iz];
            let pos = if t_max > 0.0 {
                tau / t_max * (nz - 1) as f64
            } else {
                0.0
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(nz - 1);
            let frac = pos - lo as f64;
            *out.at_mut(iz, ix) =
                field_t.at(lo, ix) * (1.0 - frac) + field_t.at(hi, ix) * frac;
        }
    }
    out
}

/// Linear interpolation of column `ix` of `field` at time `tau`, where the
/// sample times `t` are strictly increasing.
fn interp_monotone(t: &[f64], field: &Field2, ix: usize, tau: f64) -> f64 {
    let n = t.len();
    if tau <= t[0] {
        return field.at(0, ix);
    }
    if tau >= t[n - 1] {
        return field.at(n - 1, ix);
    }
    // Binary search for the bracketing interval.
    let mut lo = 0;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t[mid] <= tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let frac = (tau - t[lo]) / (t[hi] - t[lo]);
    field.at(lo, ix) * (1.0 - frac) + field.at(hi, ix) * frac
}

/// Separable Gaussian smoothing with reflect boundary handling; `kz`, `kx`
/// are std-devs in cells. Zero std-dev on an axis is the identity.
pub fn gaussian_smooth(field: &Field2, kz: f64, kx: f64) -> Field2 {
    assert!(kz >= 0.0 && kx >= 0.0);
    let pass_z = smooth_axis(field, kz, true);
    smooth_axis(&pass_z, kx, false)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        k.push((-0.5 * (d / sigma) * (d / sigma)).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn smooth_axis(field: &Field2, sigma: f64, along_z: bool) -> Field2 {
    if sigma == 0.0 {
        return field.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let nz = field.nz;
    let nx = field.nx;
    let mut out = Field2::zeros(nz, nx);
    let len = if along_z { nz } else { nx } as isize;
    // Reflect with edge repetition: -1 -> 0, -2 -> 1, n -> n-1, ...
    let reflect = |mut i: isize| -> usize {
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= len {
                i = 2 * len - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    for iz in 0..nz {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                let off = j as isize - radius as isize;
                let v = if along_z {
                    field.at(reflect(iz as isize + off), ix)
                } else {
                    field.at(iz, reflect(ix as isize + off))
                };
                acc += w * v;
            }
            *out.at_mut(iz, ix) = acc;
        }
    }
    out
}

/// Shallowest row per column whose velocity reaches `v_threshold`.
pub fn detect_top_salt(model: &VelocityModel, v_threshold: f64) -> Result<Vec<Option<usize>>> {
    if !(v_threshold > V_MIN && v_threshold <= V_MAX) {
        return Err(Error::config(format!(
            "top-salt threshold {v_threshold} outside ({V_MIN}, {V_MAX}]"
        )));
    }
    let mut picks = Vec::with_capacity(model.nx());
    for ix in 0..model.nx() {
        let mut pick = None;
        for iz in 0..model.nz() {
            if model.values.at(iz, ix) >= v_threshold {
                pick = Some(iz);
                break;
            }
        }
        picks.push(pick);
    }
    Ok(picks)
}

/// Extend picked top salt downwards: in every picked column, rows
/// `pick..nz-1` are set to `v_salt`.
pub fn salt_flood(
    model: &VelocityModel,
    picks: &[Option<usize>],
    v_salt: f64,
) -> Result<VelocityModel> {
    if picks.len() != model.nx() {
        return Err(Error::shape(format!(
            "{} picks for {} columns",
            picks.len(),
            model.nx()
        )));
    }
    let mut out = model.clone();
    for (ix, pick) in picks.iter().enumerate() {
        if let Some(k) = pick {
            for iz in *k..model.nz() {
                *out.values.at_mut(iz, ix) = v_salt;
            }
        }
    }
    Ok(out.clamped())
}
