//! Reverse-SDE posterior sampling: Karras sigma discretization with a
//! 2nd-order Heun predictor and optional stochastic churn.

use crate::diffusion::layers::Chw;
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::ScoreNetwork;
use crate::error::{Error, Result};
use crate::field::Field2;
use crate::rng::Prng;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub schedule: NoiseSchedule,
    /// Stochastic churn strength; 0 is the deterministic Heun sampler.
    pub churn: f64,
}

impl SamplerSettings {
    pub fn deterministic(schedule: NoiseSchedule) -> Self {
        SamplerSettings {
            schedule,
            churn: 0.0,
        }
    }
}

/// Draw one posterior sample conditioned on `cond`; deterministic given
/// `seed`. Output is denormalized through the network's stored mapping.
pub fn sample_posterior(
    net: &ScoreNetwork,
    cond: &Chw,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Field2> {
    settings.schedule.validate()?;
    let sigmas = &settings.schedule.sigmas;
    let n_steps = settings.schedule.n_steps;
    let (h, w) = (cond.h, cond.w);
    let mut rng = Prng::seeded(seed);

    let mut x = Chw::zeros(1, h, w);
    rng.fill_normal(&mut x.data);
    for v in x.data.iter_mut() {
        *v *= sigmas[0];
    }

    let mut scratch = vec![0.0; h * w];
    for i in 0..n_steps {
        let mut sigma = sigmas[i];
        let sigma_next = sigmas[i + 1];
        if settings.churn > 0.0 {
            let gamma = (settings.churn / n_steps as f64).min(2f64.sqrt() - 1.0);
            let sigma_hat = sigma * (1.0 + gamma);
            rng.fill_normal(&mut scratch);
            let extra = (sigma_hat * sigma_hat - sigma * sigma).sqrt();
            for (v, e) in x.data.iter_mut().zip(&scratch) {
                *v += extra * e;
            }
            sigma = sigma_hat;
        }
        let (denoised, _) = net.net.denoise(&x, cond, sigma)?;
        // d = (x - D) / sigma; Euler step to sigma_next, then the Heun
        // trapezoid correction while sigma_next > 0.
        let d1: Vec<f64> = x
            .data
            .iter()
            .zip(&denoised.data)
            .map(|(xv, dv)| (xv - dv) / sigma)
            .collect();
        let dt = sigma_next - sigma;
        if sigma_next > 0.0 {
            let mut x_pred = x.clone();
            for (v, d) in x_pred.data.iter_mut().zip(&d1) {
                *v += dt * d;
            }
            let (denoised2, _) = net.net.denoise(&x_pred, cond, sigma_next)?;
            for k in 0..x.data.len() {
                let d2 = (x_pred.data[k] - denoised2.data[k]) / sigma_next;
                x.data[k] += dt * 0.5 * (d1[k] + d2);
            }
        } else {
            for (v, d) in x.data.iter_mut().zip(&d1) {
                *v += dt * d;
            }
        }
        if !x.is_finite() {
            return Err(Error::SamplingFailed { step: i });
        }
    }

    Ok(net.norm.denormalize_plane(&x))
}
