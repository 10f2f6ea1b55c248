//! Conditional score-based generative model (EDM parameterization) with
//! from-scratch reverse-mode gradients: training on (velocity, summary)
//! pairs and posterior sampling via the reverse SDE.

pub mod layers;
mod net;
mod sampler;
mod schedule;
mod train;

pub use layers::Chw;
pub use net::{edm_coeffs, edm_weight, NetConfig, ScoreNet};
pub use sampler::{sample_posterior, SamplerSettings};
pub use schedule::NoiseSchedule;
pub use train::{
    batch_gradient, train, train_observed, TraceEntry, TrainConfig, TrainTrace, ValidationConfig,
};

use crate::error::{Error, Result};
use crate::field::Field2;
use crate::store::{self, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Linear mapping between physical velocities [lo, hi] m/s and the
/// normalized band [-1, 1] the network operates in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityNorm {
    pub lo: f64,
    pub hi: f64,
    /// Clamp denormalized values back into [lo, hi] (velocity pipelines);
    /// generic users (e.g. the Gaussian toy) leave this off.
    pub clamp: bool,
}

impl VelocityNorm {
    pub fn new(lo: f64, hi: f64, clamp: bool) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::config("empty normalization band"));
        }
        Ok(VelocityNorm { lo, hi, clamp })
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    #[inline]
    pub fn denormalize(&self, u: f64) -> f64 {
        let v = self.lo + 0.5 * (u + 1.0) * (self.hi - self.lo);
        if self.clamp {
            v.clamp(self.lo, self.hi)
        } else {
            v
        }
    }

    pub fn normalize_field(&self, f: &Field2) -> Chw {
        Chw {
            c: 1,
            h: f.nz,
            w: f.nx,
            data: f.values().iter().map(|&v| self.normalize(v)).collect(),
        }
    }

    pub fn denormalize_plane(&self, x: &Chw) -> Field2 {
        debug_assert_eq!(x.c, 1);
        Field2::from_vec(
            x.h,
            x.w,
            x.data.iter().map(|&u| self.denormalize(u)).collect(),
        )
        .expect("shape preserved")
    }
}

/// One training example: normalized target velocity plane plus the
/// normalized condition stack, with the normalization that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub target: Chw,
    pub cond: Chw,
    pub norm: VelocityNorm,
}

impl TrainingPair {
    pub fn validate(&self) -> Result<()> {
        if self.target.c != 1 {
            return Err(Error::shape("target must be a single plane"));
        }
        if self.target.h != self.cond.h || self.target.w != self.cond.w {
            return Err(Error::shape("target and condition grids differ"));
        }
        if !self.target.is_finite() || !self.cond.is_finite() {
            return Err(Error::config("training pair contains non-finite values"));
        }
        Ok(())
    }
}

/// Trained conditional denoiser plus everything needed to use it.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    pub net: ScoreNet,
    pub norm: VelocityNorm,
    pub init_seed: u64,
}

impl ScoreNetwork {
    pub fn cond_channels(&self) -> usize {
        self.net.cfg.cond_channels
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// EDM-preconditioned denoiser on normalized fields.
    pub fn denoise(&self, x_noisy: &Chw, cond: &Chw, sigma: f64) -> Result<Chw> {
        let (d, _) = self.net.denoise(x_noisy, cond, sigma)?;
        if !d.is_finite() {
            return Err(Error::config("denoiser output is non-finite"));
        }
        Ok(d)
    }

    /// Persist as a weights tensor plus a JSON sidecar describing the
    /// architecture and normalization.
    pub fn save(&self, dir: &Path) -> Result<CheckpointMeta> {
        std::fs::create_dir_all(dir)?;
        let weights = Tensor::from_f64(
            vec![self.net.params.len() as u64],
            self.net.params.clone(),
        );
        let hash = store::write_tensor(&dir.join("weights.vmuq"), &weights)?;
        let meta = CheckpointMeta {
            net: self.net.cfg.clone(),
            norm: self.norm,
            init_seed: self.init_seed,
            param_count: self.net.params.len(),
            weights_hash: hash,
        };
        store::write_atomic(
            &dir.join("checkpoint.json"),
            &serde_json::to_vec_pretty(&meta)?,
        )?;
        Ok(meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_slice(&std::fs::read(dir.join("checkpoint.json"))?)?;
        let weights = store::read_tensor(&dir.join("weights.vmuq"))?.as_f64();
        if weights.len() != meta.param_count {
            return Err(Error::Verify(format!(
                "checkpoint weight count {} does not match metadata {}",
                weights.len(),
                meta.param_count
            )));
        }
        let mut net = ScoreNet::new(meta.net.clone(), meta.init_seed);
        if net.params.len() != weights.len() {
            return Err(Error::Verify(
                "architecture layout does not match checkpoint".into(),
            ));
        }
        net.params = weights;
        Ok(ScoreNetwork {
            net,
            norm: meta.norm,
            init_seed: meta.init_seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub net: NetConfig,
    pub norm: VelocityNorm,
    pub init_seed: u64,
    pub param_count: usize,
    pub weights_hash: String,
}

/// Population mean and standard deviation over an ensemble of fields.
pub fn posterior_stats(samples: &[Field2]) -> Result<(Field2, Field2)> {
    if samples.len() < 2 {
        return Err(Error::config("posterior stats need at least 2 samples"));
    }
    let (nz, nx) = (samples[0].nz, samples[0].nx);
    for s in samples {
        if s.nz != nz || s.nx != nx {
            return Err(Error::shape("ensemble members have different shapes"));
        }
    }
    let n = samples.len() as f64;
    let mut mean = Field2::zeros(nz, nx);
    for s in samples {
        mean.add_assign(s);
    }
    for v in mean.values_mut() {
        *v /= n;
    }
    let mut std = Field2::zeros(nz, nx);
    for s in samples {
        for (acc, (sv, mv)) in std
            .values_mut()
            .iter_mut()
            .zip(s.values().iter().zip(mean.values()))
        {
            let d = sv - mv;
            *acc += d * d;
        }
    }
    for v in std.values_mut() {
        *v = (*v / n).sqrt();
    }
    Ok((mean, std))
}

/// N independent posterior samples with derived statistics.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    pub samples: Vec<Field2>,
    pub mean: Field2,
    pub std: Field2,
    pub seeds: Vec<u64>,
    pub settings: SamplerSettings,
    /// |std_N - std_{N/2}| / |std_N|, a convergence diagnostic.
    pub std_convergence: Option<f64>,
}

/// Draw `seeds.len()` independent samples in parallel; seeds must be
/// pairwise distinct.
pub fn ensemble(
    net: &ScoreNetwork,
    cond: &Chw,
    settings: &SamplerSettings,
    seeds: &[u64],
) -> Result<PosteriorEnsemble> {
    if seeds.len() < 2 {
        return Err(Error::config("ensemble needs at least 2 samples"));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("ensemble seeds must be pairwise distinct"));
    }
    let samples: Vec<Field2> = seeds
        .par_iter()
        .map(|&s| sample_posterior(net, cond, settings, s))
        .collect::<Result<_>>()?;
    let (mean, std) = posterior_stats(&samples)?;
    let std_convergence = if samples.len() >= 4 {
        let (_, half_std) = posterior_stats(&samples[..samples.len() / 2])?;
        let diff = half_std.sub(&std).norm();
        let denom = std.norm();
        if denom > 0.0 {
            Some(diff / denom)
        } else {
            None
        }
    } else {
        None
    };
    Ok(PosteriorEnsemble {
        samples,
        mean,
        std,
        seeds: seeds.to_vec(),
        settings: settings.clone(),
        std_convergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn normalization_round_trip_is_exact() {
        let norm = VelocityNorm::new(1400.0, 5000.0, true).unwrap();
        let mut rng = Prng::seeded(1);
        for _ in 0..1000 {
            let v = rng.range(1400.0, 5000.0);
            let rt = norm.denormalize(norm.normalize(v));
            assert!((rt - v).abs() < 1e-12 * 5000.0, "{v} -> {rt}");
        }
        // Unclamped mapping extrapolates.
        let open = VelocityNorm::new(0.0, 1.0, false).unwrap();
        assert!((open.denormalize(3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_stats_trivial_anchors() {
        let c = Field2::constant(4, 4, 7.0);
        let (mean, std) = posterior_stats(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!(mean.values().iter().all(|&v| v == 7.0));
        assert!(std.values().iter().all(|&v| v == 0.0));

        let a = Field2::constant(2, 2, 1.0);
        let b = Field2::constant(2, 2, 3.0);
        let (mean, std) = posterior_stats(&[a, b]).unwrap();
        assert!(mean.values().iter().all(|&v| v == 2.0));
        assert!(std.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn posterior_stats_match_two_pass_oracle() {
        let mut rng = Prng::seeded(11);
        let samples: Vec<Field2> = (0..64)
            .map(|_| {
                let mut f = Field2::zeros(6, 5);
                rng.fill_normal(f.values_mut());
                f
            })
            .collect();
        let (mean, std) = posterior_stats(&samples).unwrap();
        for i in 0..30 {
            let vals: Vec<f64> = samples.iter().map(|s| s.values()[i]).collect();
            let m = vals.iter().sum::<f64>() / 64.0;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 64.0;
            assert!((mean.values()[i] - m).abs() < 1e-12);
            assert!((std.values()[i] - v.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_reject_mismatched_shapes_and_tiny_ensembles() {
        let a = Field2::zeros(4, 4);
        let b = Field2::zeros(4, 5);
        assert!(posterior_stats(&[a.clone()]).is_err());
        assert!(posterior_stats(&[a, b]).is_err());
    }
}
