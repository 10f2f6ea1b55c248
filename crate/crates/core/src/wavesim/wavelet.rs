//! Ricker source wavelet.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sampled source signature. Amplitudes are bounded by 1 in magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavelet {
    pub peak_frequency: f64,
    pub time_shift: f64,
    pub dt: f64,
    pub nt: usize,
    pub samples: Vec<f64>,
}

/// Ricker wavelet w(t) = (1 - 2 pi^2 f^2 (t-t0)^2) exp(-pi^2 f^2 (t-t0)^2).
pub fn ricker(f: f64, t0: f64, dt: f64, nt: usize) -> Result<Wavelet> {
    if !(f > 0.0) {
        return Err(Error::config("ricker peak frequency must be positive"));
    }
    if t0 < 0.0 {
        return Err(Error::config("ricker time shift must be non-negative"));
    }
    if !(dt > 0.0) || nt == 0 {
        return Err(Error::config("ricker needs dt > 0 and nt > 0"));
    }
    if f * dt > 0.5 {
        return Err(Error::config(format!(
            "ricker unresolvable: f*dt = {} > 0.5",
            f * dt
        )));
    }
    let pi_f = std::f64::consts::PI * f;
    let samples = (0..nt)
        .map(|n| {
            let tau = n as f64 * dt - t0;
            let a = pi_f * pi_f * tau * tau;
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect();
    Ok(Wavelet {
        peak_frequency: f,
        time_shift: t0,
        dt,
        nt,
        samples,
    })
}
