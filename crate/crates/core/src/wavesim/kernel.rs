//! Time-domain acoustic propagation: nonlinear forward modeling, Born
//! linearization, and its exact discrete adjoint.
//!
//! The scheme is 2nd-order in time, 8th-order in space, on a padded grid:
//! a 4-cell hard-zero ring (so the truncated centered Laplacian stays a
//! symmetric operator over the evolving cells) around exponential-damping
//! sponge layers on all four sides, including the top.
//!
//! The Born operator is the line-by-line directional derivative of the
//! implemented recursion with respect to squared velocity, and the migration
//! operator is its line-by-line transpose, so the dot-product test holds to
//! rounding error by construction. The per-step driver field `L u + s` of
//! the background run is stored in memory (desk-scale grids) and reused by
//! both sides of the pair.

use crate::error::{Error, Result};
use crate::field::{Field2, Volume3};
use crate::geomodel::VelocityModel;
use crate::wavesim::{AcquisitionGeometry, Wavelet};

/// Zero-Dirichlet ring that carries the stencil at the padded-grid edge.
pub const RING: usize = 4;
/// Sponge width in cells on each side.
pub const SPONGE: usize = 40;
/// Per-step Cerjan damping coefficient.
const CERJAN: f64 = 0.006;

/// 8th-order centered second-derivative coefficients, c[0] at the center.
const STENCIL: [f64; 5] = [
    -205.0 / 72.0,
    8.0 / 5.0,
    -1.0 / 5.0,
    8.0 / 315.0,
    -1.0 / 560.0,
];

const BLOWUP_CHECK_INTERVAL: usize = 128;

/// Stored background history: `lap(u) + s` per step, interior cells only,
/// kept in f32 to halve the footprint. Both the Born forward and the
/// adjoint read the same values, so adjointness is unaffected.
pub struct DriverHistory {
    nz: usize,
    nx: usize,
    data: Vec<f32>,
}

impl DriverHistory {
    #[inline]
    fn step(&self, n: usize) -> &[f32] {
        &self.data[n * self.nz * self.nx..(n + 1) * self.nz * self.nx]
    }
}

/// Padded-grid propagation machinery for one model + geometry + wavelet.
pub struct Propagator {
    pub nz: usize,
    pub nx: usize,
    nzp: usize,
    nxp: usize,
    /// Offset of the interior origin in the padded grid (= RING + SPONGE).
    off: usize,
    /// Squared velocity on the padded grid.
    b: Vec<f64>,
    /// Damping mask on the padded grid (1 in the interior).
    g: Vec<f64>,
    inv_dz2: f64,
    inv_dx2: f64,
    dt2: f64,
    nt: usize,
    rec_cells: Vec<usize>,
    src_cells: Vec<usize>,
    wavelet: Vec<f64>,
}

impl Propagator {
    pub fn new(
        model: &VelocityModel,
        geom: &AcquisitionGeometry,
        wavelet: &Wavelet,
    ) -> Result<Self> {
        model.validate()?;
        geom.validate(model)?;
        if wavelet.nt != geom.nt || wavelet.dt != geom.dt {
            return Err(Error::config(
                "wavelet time axis does not match acquisition geometry",
            ));
        }
        let nz = model.nz();
        let nx = model.nx();
        let off = RING + SPONGE;
        let nzp = nz + 2 * off;
        let nxp = nx + 2 * off;

        // Squared velocity, edge-replicated into the pad.
        let mut b = vec![0.0; nzp * nxp];
        for pz in 0..nzp {
            let iz = pz.saturating_sub(off).min(nz - 1);
            for px in 0..nxp {
                let ix = px.saturating_sub(off).min(nx - 1);
                let v = model.values.at(iz, ix);
                b[pz * nxp + px] = v * v;
            }
        }

        // Cerjan-style sponge: per-axis profiles, combined multiplicatively.
        let profile = |p: usize, n: usize| -> f64 {
            let d = if p < off {
                (off - p) as f64
            } else if p >= off + n {
                (p - (off + n) + 1) as f64
            } else {
                0.0
            };
            (-(CERJAN * d) * (CERJAN * d)).exp()
        };
        let mut g = vec![0.0; nzp * nxp];
        for pz in 0..nzp {
            let gz = profile(pz, nz);
            for px in 0..nxp {
                g[pz * nxp + px] = gz * profile(px, nx);
            }
        }

        let to_cell = |&(x, z): &(f64, f64)| -> usize {
            let ix = (x / model.dx).round() as usize;
            let iz = (z / model.dz).round() as usize;
            (iz + off) * nxp + (ix + off)
        };
        let rec_cells = geom.receivers.iter().map(to_cell).collect();
        let src_cells = geom.sources.iter().map(to_cell).collect();

        Ok(Propagator {
            nz,
            nx,
            nzp,
            nxp,
            off,
            b,
            g,
            inv_dz2: 1.0 / (model.dz * model.dz),
            inv_dx2: 1.0 / (model.dx * model.dx),
            dt2: geom.dt * geom.dt,
            nt: geom.nt,
            rec_cells,
            src_cells,
            wavelet: wavelet.samples.clone(),
        })
    }

    pub fn n_shots(&self) -> usize {
        self.src_cells.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.rec_cells.len()
    }

    #[inline]
    fn lap_at(&self, u: &[f64], i: usize) -> f64 {
        let nxp = self.nxp;
        let mut acc = STENCIL[0] * (self.inv_dz2 + self.inv_dx2) * u[i];
        for k in 1..=RING {
            acc += STENCIL[k]
                * (self.inv_dx2 * (u[i - k] + u[i + k])
                    + self.inv_dz2 * (u[i - k * nxp] + u[i + k * nxp]));
        }
        acc
    }

    fn check_finite(&self, u: &[f64], context: &'static str, step: usize) -> Result<()> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { context, step });
        }
        Ok(())
    }

    /// Nonlinear forward for one shot. Records the wavefield at the
    /// receivers; optionally stores the per-step driver for Born/adjoint.
    pub fn forward_shot(
        &self,
        shot: usize,
        store: bool,
    ) -> Result<(Vec<f64>, Option<DriverHistory>)> {
        let n = self.nzp * self.nxp;
        let mut u = vec![0.0; n];
        let mut uold = vec![0.0; n];
        let mut unew = vec![0.0; n];
        let mut record = vec![0.0; self.rec_cells.len() * self.nt];
        let mut hist = if store {
            Some(DriverHistory {
                nz: self.nz,
                nx: self.nx,
                data: vec![0.0f32; self.nt * self.nz * self.nx],
            })
        } else {
            None
        };
        let src = self.src_cells[shot];

        for step in 0..self.nt {
            let w_n = self.wavelet[step];
            for pz in RING..self.nzp - RING {
                let row = pz * self.nxp;
                for px in RING..self.nxp - RING {
                    let i = row + px;
                    let lap = self.lap_at(&u, i);
                    unew[i] = 2.0 * u[i] - uold[i] + self.dt2 * self.b[i] * lap;
                }
            }
            // Source term enters through the same dt^2 * b scaling.
            unew[src] += self.dt2 * self.b[src] * w_n;

            if let Some(h) = hist.as_mut() {
                // Driver = lap(u) + s on the interior; recompute lap on the
                // interior rows (cheap relative to the full update).
                let base = step * self.nz * self.nx;
                for iz in 0..self.nz {
                    let prow = (iz + self.off) * self.nxp;
                    for ix in 0..self.nx {
                        let i = prow + ix + self.off;
                        h.data[base + iz * self.nx + ix] = self.lap_at(&u, i) as f32;
                    }
                }
                let (sz, sx) = (src / self.nxp, src % self.nxp);
                let (iz, ix) = (sz - self.off, sx - self.off);
                h.data[base + iz * self.nx + ix] += w_n as f32;
            }

            for i in 0..n {
                unew[i] *= self.g[i];
                u[i] *= self.g[i];
            }
            std::mem::swap(&mut uold, &mut u);
            std::mem::swap(&mut u, &mut unew);
            for (r, &cell) in self.rec_cells.iter().enumerate() {
                record[r * self.nt + step] = u[cell];
            }
            if step % BLOWUP_CHECK_INTERVAL == 0 {
                self.check_finite(&u, "forward_model", step)?;
            }
        }
        self.check_finite(&u, "forward_model", self.nt)?;
        Ok((record, hist))
    }

    /// Born (tangent linear) modeling of one shot around a stored
    /// background: linear in the squared-velocity perturbation `dm`.
    pub fn born_shot(&self, hist: &DriverHistory, dm: &Field2) -> Result<Vec<f64>> {
        debug_assert!(dm.nz == self.nz && dm.nx == self.nx);
        let n = self.nzp * self.nxp;
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        let mut dnew = vec![0.0; n];
        let mut record = vec![0.0; self.rec_cells.len() * self.nt];

        for step in 0..self.nt {
            for pz in RING..self.nzp - RING {
                let row = pz * self.nxp;
                for px in RING..self.nxp - RING {
                    let i = row + px;
                    let lap = self.lap_at(&du, i);
                    dnew[i] = 2.0 * du[i] - dv[i] + self.dt2 * self.b[i] * lap;
                }
            }
            let driver = hist.step(step);
            for iz in 0..self.nz {
                let prow = (iz + self.off) * self.nxp + self.off;
                let drow = &driver[iz * self.nx..(iz + 1) * self.nx];
                let dmrow = dm.row(iz);
                for ix in 0..self.nx {
                    dnew[prow + ix] += self.dt2 * dmrow[ix] * drow[ix] as f64;
                }
            }
            for i in 0..n {
                dnew[i] *= self.g[i];
                du[i] *= self.g[i];
            }
            std::mem::swap(&mut dv, &mut du);
            std::mem::swap(&mut du, &mut dnew);
            for (r, &cell) in self.rec_cells.iter().enumerate() {
                record[r * self.nt + step] = du[cell];
            }
            if step % BLOWUP_CHECK_INTERVAL == 0 {
                self.check_finite(&du, "born_forward", step)?;
            }
        }
        self.check_finite(&du, "born_forward", self.nt)?;
        Ok(record)
    }

    /// Exact transpose of [`Propagator::born_shot`]: accumulates the
    /// subsurface-offset extended image of one shot's residual into `image`.
    ///
    /// Offset slice `h` correlates the driver shifted by `-h` cells with the
    /// adjoint field shifted by `+h` cells; the slice at `h = 0` is exactly
    /// the plain migration.
    pub fn adjoint_shot(
        &self,
        hist: &DriverHistory,
        residual: &[f64],
        offsets_cells: &[i64],
        image: &mut Volume3,
    ) -> Result<()> {
        debug_assert_eq!(residual.len(), self.rec_cells.len() * self.nt);
        let n = self.nzp * self.nxp;
        // p: adjoint of the post-step field; q: adjoint of the carried field.
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut at = vec![0.0; n];
        let mut pnew = vec![0.0; n];

        for step in (0..self.nt).rev() {
            // Adjoint of recording: inject residual samples at receivers.
            for (r, &cell) in self.rec_cells.iter().enumerate() {
                p[cell] += residual[r * self.nt + step];
            }
            for i in 0..n {
                at[i] = self.g[i] * p[i];
            }
            // Imaging condition against the stored driver.
            let driver = hist.step(step);
            for (hi, &h) in offsets_cells.iter().enumerate() {
                let slice = image.slice_mut(hi);
                for iz in 0..self.nz {
                    let prow = (iz + self.off) * self.nxp + self.off;
                    let drow = &driver[iz * self.nx..(iz + 1) * self.nx];
                    let srow = &mut slice[iz * self.nx..(iz + 1) * self.nx];
                    // x - h must be a valid interior column; x + h stays in
                    // the padded grid for any |h| <= RING + SPONGE.
                    let x_lo = (h.max(0)) as usize;
                    let x_hi = (self.nx as i64 + h.min(0)) as usize;
                    for ix in x_lo..x_hi {
                        let xs = (ix as i64 - h) as usize;
                        let xr = (prow as i64 + ix as i64 + h) as usize;
                        srow[ix] += self.dt2 * drow[xs] as f64 * at[xr];
                    }
                }
            }
            // Transpose of the update map.
            let mut bat = pnew; // reuse allocation
            for i in 0..n {
                bat[i] = self.b[i] * at[i];
            }
            pnew = vec![0.0; n];
            for pz in RING..self.nzp - RING {
                let row = pz * self.nxp;
                for px in RING..self.nxp - RING {
                    let i = row + px;
                    pnew[i] = 2.0 * at[i] + self.dt2 * self.lap_at(&bat, i) + self.g[i] * q[i];
                }
            }
            for i in 0..n {
                q[i] = -at[i];
            }
            std::mem::swap(&mut p, &mut pnew);
            // Hand the scratch buffer back for the next iteration.
            pnew = bat;
            if step % BLOWUP_CHECK_INTERVAL == 0 {
                self.check_finite(&p, "migrate", step)?;
            }
        }
        Ok(())
    }
}
