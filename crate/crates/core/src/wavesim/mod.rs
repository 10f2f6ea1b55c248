//! 2D constant-density acoustic modeling, Born linearization, adjoint
//! migration, and subsurface-offset extended migration.

mod kernel;
mod noise;
mod wavelet;

pub use kernel::{Propagator, RING, SPONGE};
pub use noise::add_band_limited_noise;
pub use wavelet::{ricker, Wavelet};

use crate::error::{Error, Result};
use crate::field::{Field2, Volume3};
use crate::geomodel::VelocityModel;
use crate::rng::Prng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Global counter of extended-migration operator applications; the
/// inference-cost contracts are asserted against deltas of this value.
static MIGRATION_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn migration_call_count() -> u64 {
    MIGRATION_CALLS.load(Ordering::SeqCst)
}

/// Source/receiver layout and time axis for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    /// Source positions (x, z) in meters.
    pub sources: Vec<(f64, f64)>,
    /// Receiver positions (x, z) in meters.
    pub receivers: Vec<(f64, f64)>,
    pub dt: f64,
    pub nt: usize,
    /// Whether the receivers were laid out with jittered sampling.
    pub jittered: bool,
    /// Nominal receiver interval in meters.
    pub receiver_base_interval: f64,
}

impl AcquisitionGeometry {
    /// Surface line: sources evenly spread near the surface, receivers on a
    /// regular or jittered line. Jitter perturbs each receiver by up to
    /// +-40% of the base interval; deterministic given `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn surface_line(
        model: &VelocityModel,
        n_shots: usize,
        source_depth: f64,
        receiver_interval: f64,
        receiver_depth: f64,
        jitter: bool,
        dt: f64,
        nt: usize,
        seed: u64,
    ) -> Result<Self> {
        let extent_x = (model.nx() - 1) as f64 * model.dx;
        if n_shots == 0 || receiver_interval <= 0.0 {
            return Err(Error::config("need at least one shot and a positive interval"));
        }
        let sources = (0..n_shots)
            .map(|s| {
                let frac = (s as f64 + 0.5) / n_shots as f64;
                (frac * extent_x, source_depth)
            })
            .collect();
        let mut rng = Prng::seeded(seed);
        let n_rec = (extent_x / receiver_interval).floor() as usize;
        let receivers = (0..n_rec)
            .map(|r| {
                let base = (r as f64 + 0.5) * receiver_interval;
                let x = if jitter {
                    base + rng.range(-0.4, 0.4) * receiver_interval
                } else {
                    base
                };
                (x.clamp(0.0, extent_x), receiver_depth)
            })
            .collect();
        let geom = AcquisitionGeometry {
            sources,
            receivers,
            dt,
            nt,
            jittered: jitter,
            receiver_base_interval: receiver_interval,
        };
        geom.validate(model)?;
        Ok(geom)
    }

    /// Check positions against the grid extent and `dt` against the CFL
    /// bound dt <= 0.9 * min(dx, dz) / (v_max * sqrt(2)).
    pub fn validate(&self, model: &VelocityModel) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::config("geometry needs sources and receivers"));
        }
        if !(self.dt > 0.0) || self.nt == 0 {
            return Err(Error::config("geometry needs dt > 0 and nt > 0"));
        }
        let extent_x = (model.nx() - 1) as f64 * model.dx;
        let extent_z = (model.nz() - 1) as f64 * model.dz;
        for &(x, z) in self.sources.iter().chain(self.receivers.iter()) {
            if !(0.0..=extent_x).contains(&x) || !(0.0..=extent_z).contains(&z) {
                return Err(Error::config(format!(
                    "position ({x}, {z}) outside grid extent ({extent_x}, {extent_z})"
                )));
            }
        }
        let v_max = model.values.max();
        let limit = 0.9 * model.dx.min(model.dz) / (v_max * std::f64::consts::SQRT_2);
        if self.dt > limit {
            return Err(Error::config(format!(
                "dt = {} violates CFL bound {} for v_max = {}",
                self.dt, limit, v_max
            )));
        }
        Ok(())
    }
}

/// Conservative stable time step for the 8th-order stencil on this model.
pub fn stable_dt(model: &VelocityModel) -> f64 {
    0.45 * model.dx.min(model.dz) / model.values.max()
}

/// Pressure record of one source: `n_receivers` traces of `nt` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub n_receivers: usize,
    pub nt: usize,
    data: Vec<f64>,
}

impl ShotRecord {
    pub fn new(n_receivers: usize, nt: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n_receivers * nt);
        ShotRecord {
            n_receivers,
            nt,
            data,
        }
    }

    pub fn zeros(n_receivers: usize, nt: usize) -> Self {
        ShotRecord {
            n_receivers,
            nt,
            data: vec![0.0; n_receivers * nt],
        }
    }

    #[inline]
    pub fn trace(&self, r: usize) -> &[f64] {
        &self.data[r * self.nt..(r + 1) * self.nt]
    }

    #[inline]
    pub fn trace_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.nt..(r + 1) * self.nt]
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Band-limited noise realization retained for the data-fit metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub eps: Vec<ShotRecord>,
    pub norm: f64,
}

/// Collection of receiver-restricted pressure records, one per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub records: Vec<ShotRecord>,
    pub geometry: AcquisitionGeometry,
    pub noise: Option<NoiseRealization>,
}

impl ShotSet {
    pub fn norm(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.samples())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn noise_norm(&self) -> f64 {
        self.noise.as_ref().map(|n| n.norm).unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.samples().iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ShotSet) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.n_receivers == b.n_receivers && a.nt == b.nt)
    }

    /// Elementwise difference `self - other`; noise metadata is dropped.
    pub fn sub(&self, other: &ShotSet) -> Result<ShotSet> {
        if !self.same_shape(other) {
            return Err(Error::shape("shot sets have different shapes"));
        }
        let records = self
            .records
            .iter()
            .zip(&other.records)
            .map(|(a, b)| {
                ShotRecord::new(
                    a.n_receivers,
                    a.nt,
                    a.samples()
                        .iter()
                        .zip(b.samples())
                        .map(|(x, y)| x - y)
                        .collect(),
                )
            })
            .collect();
        Ok(ShotSet {
            records,
            geometry: self.geometry.clone(),
            noise: None,
        })
    }
}

/// Subsurface-offset image gather cube (depth x lateral x offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVolume {
    pub volume: Volume3,
    /// Offset axis in meters; symmetric about 0 and contains 0.
    pub offsets_m: Vec<f64>,
    /// Identifier of the migration velocity this volume was formed in.
    pub migration_velocity_id: String,
}

impl ImageVolume {
    /// Index of the zero-offset slice (the RTM).
    pub fn zero_offset_index(&self) -> usize {
        self.offsets_m
            .iter()
            .position(|&h| h == 0.0)
            .expect("offset axis contains 0 by construction")
    }

    pub fn rtm_slice(&self) -> Field2 {
        self.volume.slice_field(self.zero_offset_index())
    }
}

fn offsets_to_cells(offsets_m: &[f64], dx: f64) -> Result<Vec<i64>> {
    if offsets_m.is_empty() {
        return Err(Error::config("offset list is empty"));
    }
    let mut cells = Vec::with_capacity(offsets_m.len());
    for &h in offsets_m {
        let c = h / dx;
        if (c - c.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "offset {h} m is not a multiple of dx = {dx} m"
            )));
        }
        cells.push(c.round() as i64);
    }
    if !cells.contains(&0) {
        return Err(Error::config("offset axis must contain 0"));
    }
    for &c in &cells {
        if !cells.contains(&-c) {
            return Err(Error::config("offsets must be symmetric about 0"));
        }
        if c.unsigned_abs() as usize > SPONGE {
            return Err(Error::config(format!(
                "offset {} cells exceeds the sponge width {}",
                c, SPONGE
            )));
        }
    }
    Ok(cells)
}

/// Simulate shot records in model `m`; pure function of its inputs.
pub fn forward_model(
    m: &VelocityModel,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
) -> Result<ShotSet> {
    let prop = Propagator::new(m, geom, w)?;
    let records: Vec<ShotRecord> = (0..prop.n_shots())
        .into_par_iter()
        .map(|shot| {
            prop.forward_shot(shot, false)
                .map(|(rec, _)| ShotRecord::new(prop.n_receivers(), geom.nt, rec))
        })
        .collect::<Result<_>>()?;
    Ok(ShotSet {
        records,
        geometry: geom.clone(),
        noise: None,
    })
}

/// Linearized (first-order scattering) modeling of a squared-velocity
/// perturbation `dm` around background `m0`; linear in `dm`.
pub fn born_forward(
    m0: &VelocityModel,
    dm: &Field2,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
) -> Result<ShotSet> {
    if dm.nz != m0.nz() || dm.nx != m0.nx() {
        return Err(Error::shape("perturbation grid does not match model"));
    }
    let prop = Propagator::new(m0, geom, w)?;
    let records: Vec<ShotRecord> = (0..prop.n_shots())
        .into_par_iter()
        .map(|shot| {
            let (_, hist) = prop.forward_shot(shot, true)?;
            let rec = prop.born_shot(hist.as_ref().unwrap(), dm)?;
            Ok(ShotRecord::new(prop.n_receivers(), geom.nt, rec))
        })
        .collect::<Result<_>>()?;
    Ok(ShotSet {
        records,
        geometry: geom.clone(),
        noise: None,
    })
}

/// Exact discrete adjoint of [`born_forward`] applied to `residual`,
/// summed over shots in fixed order.
pub fn migrate(
    m0: &VelocityModel,
    residual: &ShotSet,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
) -> Result<Field2> {
    let vol = extended_migrate(m0, residual, geom, w, &[0.0])?;
    Ok(vol.rtm_slice())
}

/// Subsurface-offset extended migration: offset slice `h` correlates the
/// source-side driver shifted by `-h` with the adjoint field shifted by
/// `+h`, summed over time and shots.
pub fn extended_migrate(
    m0: &VelocityModel,
    residual: &ShotSet,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
    offsets_m: &[f64],
) -> Result<ImageVolume> {
    MIGRATION_CALLS.fetch_add(1, Ordering::SeqCst);
    let offsets_cells = offsets_to_cells(offsets_m, m0.dx)?;
    let prop = Propagator::new(m0, geom, w)?;
    if residual.records.len() != prop.n_shots()
        || residual
            .records
            .iter()
            .any(|r| r.n_receivers != prop.n_receivers() || r.nt != geom.nt)
    {
        return Err(Error::shape("residual shape does not match geometry"));
    }
    let partials: Vec<Volume3> = (0..prop.n_shots())
        .into_par_iter()
        .map(|shot| {
            let (_, hist) = prop.forward_shot(shot, true)?;
            let mut img = Volume3::zeros(prop.nz, prop.nx, offsets_cells.len());
            prop.adjoint_shot(
                hist.as_ref().unwrap(),
                residual.records[shot].samples(),
                &offsets_cells,
                &mut img,
            )?;
            Ok(img)
        })
        .collect::<Result<_>>()?;
    // Fixed-order reduction across shots.
    let mut total = Volume3::zeros(prop.nz, prop.nx, offsets_cells.len());
    for p in &partials {
        total.add_assign(p);
    }
    Ok(ImageVolume {
        volume: total,
        offsets_m: offsets_m.to_vec(),
        migration_velocity_id: String::new(),
    })
}

/// Physics-based summary statistic: simulate in the migration velocity,
/// form the residual against the observed data, and apply the extended
/// migration. One background simulation serves both the residual and the
/// adjoint, so this costs a single extended migration.
pub fn summary_statistic(
    m0: &VelocityModel,
    y_obs: &ShotSet,
    geom: &AcquisitionGeometry,
    w: &Wavelet,
    offsets_m: &[f64],
) -> Result<ImageVolume> {
    MIGRATION_CALLS.fetch_add(1, Ordering::SeqCst);
    let offsets_cells = offsets_to_cells(offsets_m, m0.dx)?;
    let prop = Propagator::new(m0, geom, w)?;
    if y_obs.records.len() != prop.n_shots()
        || y_obs
            .records
            .iter()
            .any(|r| r.n_receivers != prop.n_receivers() || r.nt != geom.nt)
    {
        return Err(Error::shape("observed data shape does not match geometry"));
    }
    let partials: Vec<Volume3> = (0..prop.n_shots())
        .into_par_iter()
        .map(|shot| {
            let (sim, hist) = prop.forward_shot(shot, true)?;
            let obs = y_obs.records[shot].samples();
            let residual: Vec<f64> = sim.iter().zip(obs).map(|(a, b)| a - b).collect();
            let mut img = Volume3::zeros(prop.nz, prop.nx, offsets_cells.len());
            prop.adjoint_shot(hist.as_ref().unwrap(), &residual, &offsets_cells, &mut img)?;
            Ok(img)
        })
        .collect::<Result<_>>()?;
    let mut total = Volume3::zeros(prop.nz, prop.nx, offsets_cells.len());
    for p in &partials {
        total.add_assign(p);
    }
    Ok(ImageVolume {
        volume: total,
        offsets_m: offsets_m.to_vec(),
        migration_velocity_id: String::new(),
    })
}

/// Evenly spaced symmetric offset axis with `n_side` offsets on each side
/// of zero, spaced `spacing_cells` grid cells apart.
pub fn symmetric_offsets(n_side: usize, spacing_cells: usize, dx: f64) -> Vec<f64> {
    let mut offsets = Vec::with_capacity(2 * n_side + 1);
    for i in -(n_side as i64)..=(n_side as i64) {
        offsets.push(i as f64 * spacing_cells as f64 * dx);
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;

    fn homogeneous(v: f64, nz: usize, nx: usize, d: f64) -> VelocityModel {
        VelocityModel::new(d, d, Field2::constant(nz, nx, v)).unwrap()
    }

    fn small_geom(model: &VelocityModel, n_shots: usize, dt: f64, nt: usize) -> AcquisitionGeometry {
        AcquisitionGeometry::surface_line(
            model, n_shots, model.dz, 2.0 * model.dx, model.dz, false, dt, nt, 1,
        )
        .unwrap()
    }

    #[test]
    fn zero_wavelet_gives_zero_records() {
        let m = homogeneous(1500.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 120;
        let geom = small_geom(&m, 1, dt, nt);
        let mut w = ricker(20.0, 0.05, dt, nt).unwrap();
        w.samples.iter_mut().for_each(|s| *s = 0.0);
        let shots = forward_model(&m, &geom, &w).unwrap();
        assert!(shots.records[0].samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_linear_in_the_source() {
        let m = homogeneous(1800.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 150;
        let geom = small_geom(&m, 1, dt, nt);
        let w = ricker(20.0, 0.05, dt, nt).unwrap();
        let mut w2 = w.clone();
        w2.samples.iter_mut().for_each(|s| *s *= 2.0);
        let a = forward_model(&m, &geom, &w).unwrap();
        let b = forward_model(&m, &geom, &w2).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            for (&x, &y) in ra.samples().iter().zip(rb.samples()) {
                let denom: f64 = x.abs().max(1e-300);
                assert!(((y - 2.0 * x).abs() / denom) < 1e-10);
            }
        }
    }

    #[test]
    fn first_arrival_matches_travel_time() {
        // 300 m source-receiver distance at 1500 m/s -> 0.200 s delay.
        let m = homogeneous(1500.0, 24, 80, 10.0);
        let dt = 0.0015;
        let nt = 400;
        let t0 = 0.08;
        let f = 18.0;
        let w = ricker(f, t0, dt, nt).unwrap();
        let geom = AcquisitionGeometry {
            sources: vec![(200.0, 100.0)],
            receivers: vec![(500.0, 100.0)],
            dt,
            nt,
            jittered: false,
            receiver_base_interval: 10.0,
        };
        let shots = forward_model(&m, &geom, &w).unwrap();
        let trace = shots.records[0].trace(0);
        let peak_idx = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        let picked = peak_idx as f64 * dt;

        // Oracle: the 2D response is the wavelet convolved with the
        // cylindrical-wave kernel 1/sqrt(u (u + 2 r/c)), whose peak trails
        // the geometric arrival r/c + t0 by the tail skew. Midpoint
        // quadrature with a fine step resolves the integrable singularity.
        let travel = 0.200f64;
        let du = dt / 64.0;
        let n_u = (0.5 / du) as usize;
        let mut best = (0.0f64, 0.0f64);
        let mut t = travel;
        while t < travel + t0 + 0.15 {
            let mut acc = 0.0;
            for k in 0..n_u {
                let u = (k as f64 + 0.5) * du;
                let tau = t - travel - u - t0;
                let a = std::f64::consts::PI * f * tau;
                let a2 = a * a;
                acc += (1.0 - 2.0 * a2) * (-a2).exp() / (u * (u + 2.0 * travel)).sqrt() * du;
            }
            if acc.abs() > best.1 {
                best = (t, acc.abs());
            }
            t += dt / 4.0;
        }
        let analytic_peak = best.0;
        // Sanity: the analytic peak sits near the geometric arrival.
        assert!((analytic_peak - (travel + t0)).abs() < 0.5 / f);
        assert!(
            (picked - analytic_peak).abs() <= 2.0 * dt,
            "picked {picked}, analytic {analytic_peak}"
        );
    }

    #[test]
    fn born_is_linear_and_zero_on_zero_perturbation() {
        let m = homogeneous(2000.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 120;
        let geom = small_geom(&m, 1, dt, nt);
        let w = ricker(20.0, 0.05, dt, nt).unwrap();
        let zero = born_forward(&m, &Field2::zeros(16, 24), &geom, &w).unwrap();
        assert!(zero.records[0].samples().iter().all(|&v| v == 0.0));

        let mut rng = Prng::seeded(derive_seed(5, "born-lin", 0));
        let mut dm = Field2::zeros(16, 24);
        for v in dm.values_mut() {
            *v = rng.normal() * 1e4;
        }
        let b1 = born_forward(&m, &dm, &geom, &w).unwrap();
        let b2 = born_forward(&m, &dm.scaled(2.0), &geom, &w).unwrap();
        for (ra, rb) in b1.records.iter().zip(&b2.records) {
            for (&x, &y) in ra.samples().iter().zip(rb.samples()) {
                let denom: f64 = x.abs().max(1e-300);
                assert!(((y - 2.0 * x).abs() / denom) < 1e-10);
            }
        }
    }

    use crate::rng::Prng;

    #[test]
    fn migrate_of_zero_residual_is_zero() {
        let m = homogeneous(2000.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 100;
        let geom = small_geom(&m, 1, dt, nt);
        let w = ricker(20.0, 0.05, dt, nt).unwrap();
        let residual = ShotSet {
            records: vec![ShotRecord::zeros(geom.receivers.len(), nt)],
            geometry: geom.clone(),
            noise: None,
        };
        let img = migrate(&m, &residual, &geom, &w).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extended_zero_offset_slice_equals_migrate() {
        let m = homogeneous(2000.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 120;
        let geom = small_geom(&m, 2, dt, nt);
        let w = ricker(20.0, 0.05, dt, nt).unwrap();
        let mut rng = Prng::seeded(3);
        let records = (0..2)
            .map(|_| {
                let mut r = ShotRecord::zeros(geom.receivers.len(), nt);
                for v in r.samples_mut() {
                    *v = rng.normal();
                }
                r
            })
            .collect();
        let residual = ShotSet {
            records,
            geometry: geom.clone(),
            noise: None,
        };
        let rtm = migrate(&m, &residual, &geom, &w).unwrap();
        let offsets = symmetric_offsets(2, 1, m.dx);
        let vol = extended_migrate(&m, &residual, &geom, &w, &offsets).unwrap();
        let slice = vol.rtm_slice();
        for (a, b) in slice.values().iter().zip(rtm.values()) {
            let denom: f64 = b.abs().max(1e-300);
            assert!(
                ((a - b).abs() / denom) < 1e-12,
                "offset-0 slice deviates: {a} vs {b}"
            );
        }
    }

    #[test]
    fn summary_statistic_of_self_data_is_zero() {
        let m = homogeneous(2200.0, 16, 24, 10.0);
        let dt = 0.0015;
        let nt = 120;
        let geom = small_geom(&m, 2, dt, nt);
        let w = ricker(20.0, 0.05, dt, nt).unwrap();
        let y_obs = forward_model(&m, &geom, &w).unwrap();
        let offsets = symmetric_offsets(1, 1, m.dx);
        let vol = summary_statistic(&m, &y_obs, &geom, &w, &offsets).unwrap();
        assert!(vol.volume.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_offsets_are_rejected() {
        let m = homogeneous(2000.0, 16, 24, 10.0);
        let dt = 0.002;
        let nt = 60;
        let geom = small_geom(&m, 1, dt, nt);
        let w = ricker(20.0, 0.04, dt, nt).unwrap();
        let residual = ShotSet {
            records: vec![ShotRecord::zeros(geom.receivers.len(), nt)],
            geometry: geom.clone(),
            noise: None,
        };
        // Not a multiple of dx.
        assert!(extended_migrate(&m, &residual, &geom, &w, &[0.0, 7.3]).is_err());
        // Missing zero offset.
        assert!(extended_migrate(&m, &residual, &geom, &w, &[-10.0, 10.0]).is_err());
        // Asymmetric.
        assert!(extended_migrate(&m, &residual, &geom, &w, &[0.0, 10.0]).is_err());
    }

    #[test]
    fn cfl_violation_is_a_config_error() {
        let m = homogeneous(5000.0, 16, 24, 10.0);
        let geom = AcquisitionGeometry {
            sources: vec![(100.0, 10.0)],
            receivers: vec![(50.0, 10.0)],
            dt: 0.005,
            nt: 10,
            jittered: false,
            receiver_base_interval: 10.0,
        };
        assert!(geom.validate(&m).is_err());
        let w = ricker(20.0, 0.04, 0.005, 10).unwrap();
        assert!(forward_model(&m, &geom, &w).is_err());
    }

    #[test]
    fn jittered_receivers_are_deterministic_and_bounded() {
        let m = homogeneous(2000.0, 16, 64, 10.0);
        let a = AcquisitionGeometry::surface_line(
            &m, 2, 10.0, 40.0, 10.0, true, 0.002, 50, 9,
        )
        .unwrap();
        let b = AcquisitionGeometry::surface_line(
            &m, 2, 10.0, 40.0, 10.0, true, 0.002, 50, 9,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = AcquisitionGeometry::surface_line(
            &m, 2, 10.0, 40.0, 10.0, false, 0.002, 50, 9,
        )
        .unwrap();
        for (j, r) in a.receivers.iter().zip(&c.receivers) {
            assert!((j.0 - r.0).abs() <= 0.4 * 40.0 + 1e-9);
        }
        assert_ne!(a.receivers, c.receivers);
    }
}
