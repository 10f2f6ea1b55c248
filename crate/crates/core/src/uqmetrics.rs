//! Posterior quality metrics: z-score exceedance, uncertainty calibration,
//! coverage, data fit, RMSE, and SSIM.
//!
//! Each metric is pinned precisely enough that an independent brute-force
//! implementation reproduces it to rounding error; the test suite carries
//! those oracles.

use crate::error::{Error, Result};
use crate::field::{percentile_sorted, Field2};
use serde::{Deserialize, Serialize};

/// One evaluated posterior: the four UQ metrics plus RMSE/SSIM, with the
/// knobs that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub ssim: f64,
    pub coverage_pct: f64,
    pub uce: f64,
    pub z_score_pct: f64,
    pub data_fit_pct: f64,
    pub metadata: MetricsMetadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsMetadata {
    pub n_bins: usize,
    pub coverage_lo_pct: f64,
    pub coverage_hi_pct: f64,
    pub z_threshold: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let pct_ok = |p: f64| (0.0..=100.0).contains(&p);
        if !pct_ok(self.coverage_pct) || !pct_ok(self.z_score_pct) {
            return Err(Error::Metric("percentage outside [0, 100]".into()));
        }
        if self.uce < 0.0 || self.rmse < 0.0 {
            return Err(Error::Metric("uce and rmse must be non-negative".into()));
        }
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::Metric("ssim outside [-1, 1]".into()));
        }
        Ok(())
    }

    /// CSV header matching [`MetricsReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "rmse,ssim,coverage_pct,uce,z_score_pct,data_fit_pct"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.rmse, self.ssim, self.coverage_pct, self.uce, self.z_score_pct, self.data_fit_pct
        )
    }
}

fn check_shapes(a: &Field2, b: &Field2) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.nz, a.nx, b.nz, b.nx
        )));
    }
    Ok(())
}

/// Pixel-wise |error| / uncertainty map and the percentage of cells whose
/// ratio exceeds `threshold`. Cells with zero std and zero error score 0;
/// zero std with nonzero error counts as exceeding.
pub fn z_score(
    gt: &Field2,
    mean: &Field2,
    std: &Field2,
    threshold: f64,
) -> Result<(Field2, f64)> {
    check_shapes(gt, mean)?;
    check_shapes(gt, std)?;
    if !(threshold > 0.0) {
        return Err(Error::Metric("z-score threshold must be positive".into()));
    }
    let n = gt.values().len();
    let mut map = Field2::zeros(gt.nz, gt.nx);
    let mut exceed = 0usize;
    for i in 0..n {
        let err = (gt.values()[i] - mean.values()[i]).abs();
        let s = std.values()[i];
        let z = if s > 0.0 {
            err / s
        } else if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        map.values_mut()[i] = z;
        if z > threshold {
            exceed += 1;
        }
    }
    Ok((map, 100.0 * exceed as f64 / n as f64))
}

/// One calibration bin: mean predicted uncertainty, mean absolute error,
/// and the bin population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_uncertainty: f64,
    pub mean_error: f64,
    pub count: usize,
}

/// Equal-count binning of cells by predicted uncertainty; UCE is the
/// occupancy-weighted mean absolute gap between binned error and binned
/// uncertainty. Ties are broken by cell index so the binning is total.
pub fn calibration(
    gt: &Field2,
    mean: &Field2,
    std: &Field2,
    n_bins: usize,
) -> Result<(Vec<CalibrationBin>, f64)> {
    check_shapes(gt, mean)?;
    check_shapes(gt, std)?;
    if n_bins < 2 {
        return Err(Error::Metric("calibration needs at least 2 bins".into()));
    }
    let n = gt.values().len();
    if n < n_bins {
        return Err(Error::Metric(format!(
            "fewer cells ({n}) than bins ({n_bins})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        std.values()[a]
            .partial_cmp(&std.values()[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut bins = Vec::with_capacity(n_bins);
    let mut uce = 0.0;
    for b in 0..n_bins {
        let lo = b * n / n_bins;
        let hi = (b + 1) * n / n_bins;
        let count = hi - lo;
        let mut unc = 0.0;
        let mut err = 0.0;
        for &i in &order[lo..hi] {
            unc += std.values()[i];
            err += (gt.values()[i] - mean.values()[i]).abs();
        }
        unc /= count as f64;
        err /= count as f64;
        uce += count as f64 / n as f64 * (err - unc).abs();
        bins.push(CalibrationBin {
            mean_uncertainty: unc,
            mean_error: err,
            count,
        });
    }
    Ok((bins, uce))
}

/// Percentage of cells whose ground-truth value lies inside the
/// [lo_pct, hi_pct] band of the per-cell sample percentiles (inclusive,
/// linear-interpolation percentiles).
pub fn coverage(samples: &[Field2], gt: &Field2, lo_pct: f64, hi_pct: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Metric("coverage needs at least 2 samples".into()));
    }
    for s in samples {
        check_shapes(gt, s)?;
    }
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct > hi_pct {
        return Err(Error::Metric("bad percentile band".into()));
    }
    let n = gt.values().len();
    let mut covered = 0usize;
    let mut cell = vec![0.0; samples.len()];
    for i in 0..n {
        for (k, s) in samples.iter().enumerate() {
            cell[k] = s.values()[i];
        }
        cell.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = percentile_sorted(&cell, lo_pct);
        let hi = percentile_sorted(&cell, hi_pct);
        let g = gt.values()[i];
        if g >= lo && g <= hi {
            covered += 1;
        }
    }
    Ok(100.0 * covered as f64 / n as f64)
}

/// 100 * noise_norm / residual_norm, uncapped. 100% means the residual has
/// the same normed magnitude as the noise; a zero residual is an error
/// (over-fit sentinel).
pub fn data_fit(noise_norm: f64, residual_norm: f64) -> Result<f64> {
    if noise_norm < 0.0 {
        return Err(Error::Metric("noise norm must be non-negative".into()));
    }
    if residual_norm == 0.0 {
        return Err(Error::Metric(
            "zero residual norm: fit is below machine noise".into(),
        ));
    }
    Ok(100.0 * noise_norm / residual_norm)
}

/// RMSE on velocities normalized to [0, 1] by the dataset-wide band
/// `(v_lo, v_hi)`.
pub fn rmse(gt: &Field2, est: &Field2, v_lo: f64, v_hi: f64) -> Result<f64> {
    check_shapes(gt, est)?;
    if !(v_hi > v_lo) {
        return Err(Error::Metric("empty normalization band".into()));
    }
    let scale = 1.0 / (v_hi - v_lo);
    let n = gt.values().len();
    let sum: f64 = gt
        .values()
        .iter()
        .zip(est.values())
        .map(|(a, b)| {
            let d = (a - b) * scale;
            d * d
        })
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// RMSE over a cell mask only (same normalization convention).
pub fn rmse_masked(
    gt: &Field2,
    est: &Field2,
    mask: &[bool],
    v_lo: f64,
    v_hi: f64,
) -> Result<f64> {
    check_shapes(gt, est)?;
    if mask.len() != gt.values().len() {
        return Err(Error::shape("mask length does not match field"));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Metric("empty mask".into()));
    }
    let scale = 1.0 / (v_hi - v_lo);
    let sum: f64 = gt
        .values()
        .iter()
        .zip(est.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| {
            let d = (a - b) * scale;
            d * d
        })
        .sum();
    Ok((sum / count as f64).sqrt())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean local SSIM with an 11x11 Gaussian window (std 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range max(gt) - min(gt). Windows are evaluated only
/// where they fit entirely inside the field.
pub fn ssim(gt: &Field2, est: &Field2) -> Result<f64> {
    check_shapes(gt, est)?;
    if gt.nz < SSIM_WINDOW || gt.nx < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "field {}x{} smaller than the {}x{} SSIM window",
            gt.nz, gt.nx, SSIM_WINDOW, SSIM_WINDOW
        )));
    }
    let l = {
        let range = gt.max() - gt.min();
        if range > 0.0 {
            range
        } else {
            1.0
        }
    };
    let c1 = (SSIM_K1 * l) * (SSIM_K1 * l);
    let c2 = (SSIM_K2 * l) * (SSIM_K2 * l);

    // Separable Gaussian window, normalized.
    let half = SSIM_WINDOW / 2;
    let mut k = [0.0f64; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half as f64;
        *v = (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let ksum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= ksum;
    }

    // Weighted local moments via two separable passes over valid rows.
    let filt = |f: &Field2, g: &Field2, which: u8| -> Field2 {
        // which: 0 -> f, 1 -> f*f, 2 -> f*g
        let src = |i: usize| -> f64 {
            match which {
                0 => f.values()[i],
                1 => f.values()[i] * f.values()[i],
                _ => f.values()[i] * g.values()[i],
            }
        };
        let nz = f.nz;
        let nx = f.nx;
        let mut tmp = Field2::zeros(nz, nx);
        for iz in 0..nz {
            for ix in half..nx - half {
                let mut acc = 0.0;
                for (j, &w) in k.iter().enumerate() {
                    acc += w * src(iz * nx + ix + j - half);
                }
                *tmp.at_mut(iz, ix) = acc;
            }
        }
        let mut out = Field2::zeros(nz, nx);
        for iz in half..nz - half {
            for ix in half..nx - half {
                let mut acc = 0.0;
                for (j, &w) in k.iter().enumerate() {
                    acc += w * tmp.at(iz + j - half, ix);
                }
                *out.at_mut(iz, ix) = acc;
            }
        }
        out
    };

    let mu1 = filt(gt, est, 0);
    let mu2 = filt(est, gt, 0);
    let s11 = filt(gt, est, 1);
    let s22 = filt(est, gt, 1);
    let s12 = filt(gt, est, 2);

    let mut sum = 0.0;
    let mut count = 0usize;
    for iz in half..gt.nz - half {
        for ix in half..gt.nx - half {
            let m1 = mu1.at(iz, ix);
            let m2 = mu2.at(iz, ix);
            let v1 = s11.at(iz, ix) - m1 * m1;
            let v2 = s22.at(iz, ix) - m2 * m2;
            let cov = s12.at(iz, ix) - m1 * m2;
            let val = ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2))
                / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
            sum += val;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
