//! Noise schedule with the sigma(t) = t convention and the Karras rho
//! discretization for sampling.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_steps: usize,
    pub sigma_data: f64,
    /// Strictly decreasing sigma_i over the sampling steps; the final
    /// entry is 0.
    pub sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// sigma_i = (sigma_max^(1/rho) + i/(n-1) (sigma_min^(1/rho) -
    /// sigma_max^(1/rho)))^rho for i = 0..n, with sigma_n = 0.
    pub fn karras(sigma_min: f64, sigma_max: f64, rho: f64, n_steps: usize) -> Result<Self> {
        Self::karras_with_data(sigma_min, sigma_max, rho, n_steps, 0.5)
    }

    pub fn karras_with_data(
        sigma_min: f64,
        sigma_max: f64,
        rho: f64,
        n_steps: usize,
        sigma_data: f64,
    ) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min < sigma_max) {
            return Err(Error::config(format!(
                "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
            )));
        }
        if n_steps < 2 || rho <= 0.0 {
            return Err(Error::config("need n_steps >= 2 and rho > 0"));
        }
        let inv_rho = 1.0 / rho;
        let hi = sigma_max.powf(inv_rho);
        let lo = sigma_min.powf(inv_rho);
        let mut sigmas: Vec<f64> = (0..n_steps)
            .map(|i| {
                let t = i as f64 / (n_steps - 1) as f64;
                (hi + t * (lo - hi)).powf(rho)
            })
            .collect();
        sigmas.push(0.0);
        Ok(NoiseSchedule {
            sigma_min,
            sigma_max,
            rho,
            n_steps,
            sigma_data,
            sigmas,
        })
    }

    pub fn default_sampling(n_steps: usize) -> Result<Self> {
        Self::karras(0.002, 80.0, 7.0, n_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.len() != self.n_steps + 1 {
            return Err(Error::config("sigma sequence length mismatch"));
        }
        for w in self.sigmas.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::config("sigma sequence must strictly decrease"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn karras_endpoints_and_monotonicity() {
        let s = NoiseSchedule::default_sampling(40).unwrap();
        s.validate().unwrap();
        assert!((s.sigmas[0] - 80.0).abs() < 1e-9);
        assert!((s.sigmas[39] - 0.002).abs() < 1e-9);
        assert_eq!(s.sigmas[40], 0.0);
    }

    #[test]
    fn degenerate_ranges_are_rejected() {
        assert!(NoiseSchedule::karras(1.0, 0.5, 7.0, 10).is_err());
        assert!(NoiseSchedule::karras(0.0, 0.5, 7.0, 10).is_err());
        assert!(NoiseSchedule::karras(0.1, 0.5, 7.0, 1).is_err());
    }
}
