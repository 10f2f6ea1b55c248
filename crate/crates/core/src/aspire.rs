//! Iterative posterior refinement: recompute summaries in the current
//! posterior-mean velocity (optionally salt-flooded), stack previous
//! iterates into the condition, retrain, and re-infer. Inference costs
//! exactly one extended migration per iteration.

use crate::dataset::{normalize_summary, Dataset, Split};
use crate::diffusion::{
    ensemble, train, Chw, NoiseSchedule, PosteriorEnsemble, SamplerSettings, ScoreNetwork,
    TrainConfig, TrainingPair,
};
use crate::error::{Error, Result};
use crate::field::Field2;
use crate::geomodel::{detect_top_salt, salt_flood, SaltMask, VelocityModel};
use crate::rng::derive_seed;
use crate::store::{self, RunManifest};
use crate::wavesim::{migrate, summary_statistic, ImageVolume, ShotSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AspireConfig {
    /// Total iterations K (the paper's workflow uses two).
    pub iterations: usize,
    /// Per-iteration flooding flags; entry k applies when preparing
    /// iteration k's migration velocity, so entry 0 must be false.
    pub flood_schedule: Vec<bool>,
    pub train: TrainConfig,
    /// Reduced ensemble used when rebuilding the training dataset.
    pub rebuild_ensemble: usize,
    pub rebuild_sampler_steps: usize,
    /// Ensemble size and sampler steps for held-out inference.
    pub infer_ensemble: usize,
    pub infer_sampler_steps: usize,
    pub flood_threshold: f64,
    pub flood_velocity: f64,
    pub seed: u64,
}

impl AspireConfig {
    pub fn defaults(train: TrainConfig, seed: u64) -> Self {
        AspireConfig {
            iterations: 2,
            flood_schedule: vec![false, true],
            train,
            rebuild_ensemble: 16,
            rebuild_sampler_steps: 20,
            infer_ensemble: 64,
            infer_sampler_steps: 40,
            flood_threshold: crate::geomodel::DEFAULT_TOP_SALT_THRESHOLD,
            flood_velocity: 4500.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("aspire needs at least one iteration"));
        }
        if self.flood_schedule.len() != self.iterations {
            return Err(Error::config(format!(
                "flood schedule has {} entries for {} iterations",
                self.flood_schedule.len(),
                self.iterations
            )));
        }
        if self.flood_schedule[0] {
            return Err(Error::config(
                "iteration 1 has no posterior mean to flood",
            ));
        }
        if self.rebuild_ensemble < 2 || self.infer_ensemble < 2 {
            return Err(Error::config("ensembles need at least 2 members"));
        }
        Ok(())
    }
}

/// Training-side state after iteration k (0-based): per-example migration
/// velocities, and the summary/mean histories that build condition stacks.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub k: usize,
    pub migration_velocities: Vec<VelocityModel>,
    /// `summaries[e][j]` = example e's summary from iteration j (0..=k).
    pub summaries: Vec<Vec<ImageVolume>>,
    /// `means[e][j-1]` = example e's posterior mean carried into iteration
    /// j (1..=k).
    pub means: Vec<Vec<VelocityModel>>,
    pub checkpoint_ids: Vec<String>,
}

impl IterationState {
    pub fn validate(&self) -> Result<()> {
        for (s, m) in self.summaries.iter().zip(&self.means) {
            if s.len() != self.k + 1 || m.len() != self.k {
                return Err(Error::config(format!(
                    "history lengths ({}, {}) inconsistent with k = {}",
                    s.len(),
                    m.len(),
                    self.k
                )));
            }
        }
        Ok(())
    }

    /// Channel count of the condition stack: (k+1) * n_offsets + k.
    pub fn condition_channels(&self, n_offsets: usize) -> usize {
        (self.k + 1) * n_offsets + self.k
    }
}

/// State before any refinement: the base dataset's own migration
/// velocities and summaries.
pub fn initial_state(base: &Dataset) -> IterationState {
    let train_examples: Vec<_> = base.split(Split::Train).collect();
    IterationState {
        k: 0,
        migration_velocities: train_examples
            .iter()
            .map(|e| e.migration_velocity.clone())
            .collect(),
        summaries: train_examples
            .iter()
            .map(|e| vec![e.summary.clone()])
            .collect(),
        means: train_examples.iter().map(|_| Vec::new()).collect(),
        checkpoint_ids: Vec::new(),
    }
}

/// Stack normalized summaries 0..=k and normalized posterior means 1..=k
/// into one condition tensor.
pub fn condition_stack(
    summaries: &[ImageVolume],
    means: &[VelocityModel],
    norm: crate::diffusion::VelocityNorm,
) -> Chw {
    let mut cond = normalize_summary(&summaries[0]);
    for s in &summaries[1..] {
        cond = Chw::concat(&cond, &normalize_summary(s));
    }
    for m in means {
        cond = Chw::concat(&cond, &norm.normalize_field(&m.values));
    }
    cond
}

/// Training pairs for the current iteration; at k = 0 this reproduces the
/// base dataset's pairs.
pub fn build_iteration_dataset(base: &Dataset, state: &IterationState) -> Result<Vec<TrainingPair>> {
    state.validate()?;
    let norm = base.meta.velocity_norm();
    let train_examples: Vec<_> = base.split(Split::Train).collect();
    if train_examples.len() != state.summaries.len() {
        return Err(Error::config("state does not cover the train split"));
    }
    Ok(train_examples
        .iter()
        .enumerate()
        .map(|(e, ex)| TrainingPair {
            target: norm.normalize_field(&ex.truth.values),
            cond: condition_stack(&state.summaries[e], &state.means[e], norm),
            norm,
        })
        .collect())
}

/// Apply the flooding step to a posterior mean: threshold-pick top salt
/// and extend it to the bottom of the model.
pub fn flood_mean(mean: &VelocityModel, cfg: &AspireConfig) -> Result<VelocityModel> {
    let picks = detect_top_salt(mean, cfg.flood_threshold)?;
    salt_flood(mean, &picks, cfg.flood_velocity)
}

/// Advance the state with fresh posterior means: set each example's
/// migration velocity to its (optionally flooded) mean, recompute the
/// summary there, and extend both histories.
pub fn advance_state(
    base: &Dataset,
    state: &mut IterationState,
    means: Vec<VelocityModel>,
    flood: bool,
    cfg: &AspireConfig,
) -> Result<()> {
    let train_examples: Vec<_> = base.split(Split::Train).collect();
    if means.len() != train_examples.len() {
        return Err(Error::config("posterior means missing for some examples"));
    }
    let offsets = &base.meta.offsets_m;
    let new: Vec<(VelocityModel, ImageVolume)> = train_examples
        .par_iter()
        .zip(means.par_iter())
        .map(|(ex, mean)| {
            let mig = if flood {
                flood_mean(mean, cfg)?
            } else {
                mean.clone()
            };
            let mut vol = summary_statistic(
                &mig,
                &ex.shots,
                &base.meta.geometry,
                &base.meta.wavelet,
                offsets,
            )?;
            vol.migration_velocity_id = format!("ex{:04}:iter{}", ex.index, state.k + 1);
            Ok((mig, vol))
        })
        .collect::<Result<_>>()?;
    for (e, ((mig, vol), mean)) in new.into_iter().zip(means).enumerate() {
        state.migration_velocities[e] = mig;
        state.summaries[e].push(vol);
        state.means[e].push(mean);
    }
    state.k += 1;
    state.validate()
}

#[derive(Debug)]
pub struct AspireRun {
    pub networks: Vec<ScoreNetwork>,
    pub state: IterationState,
}

/// Train K networks, rebuilding the dataset between iterations with
/// reduced ensembles. When `out_dir` is given, checkpoints, per-iteration
/// means, and a hash manifest are persisted per iteration.
pub fn run_aspire(base: &Dataset, cfg: &AspireConfig, out_dir: Option<&Path>) -> Result<AspireRun> {
    cfg.validate()?;
    let mut state = initial_state(base);
    let mut networks = Vec::with_capacity(cfg.iterations);
    let norm = base.meta.velocity_norm();

    for iter in 0..cfg.iterations {
        if iter > 0 {
            // Infer means for every training example with the latest net.
            let net = networks.last().unwrap();
            let pairs = build_iteration_dataset(base, &state)?;
            let schedule = NoiseSchedule::karras_with_data(
                0.002,
                80.0,
                7.0,
                cfg.rebuild_sampler_steps,
                cfg.train.sigma_data,
            )?;
            let settings = SamplerSettings::deterministic(schedule);
            let means: Vec<VelocityModel> = pairs
                .par_iter()
                .enumerate()
                .map(|(e, pair)| {
                    let seeds: Vec<u64> = (0..cfg.rebuild_ensemble)
                        .map(|i| {
                            derive_seed(
                                cfg.seed,
                                "rebuild",
                                (iter * 1_000_000 + e * 1_000 + i) as u64,
                            )
                        })
                        .collect();
                    let ens = ensemble(net, &pair.cond, &settings, &seeds)?;
                    VelocityModel::new(base.meta.config.geomodel.dz, base.meta.config.geomodel.dx, ens.mean)
                        .map(VelocityModel::clamped)
                })
                .collect::<Result<_>>()?;
            advance_state(base, &mut state, means, cfg.flood_schedule[iter], cfg)?;
        }

        let pairs = build_iteration_dataset(base, &state)?;
        let expected = state.condition_channels(base.meta.offsets_m.len());
        debug_assert_eq!(pairs[0].cond.c, expected);
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = derive_seed(cfg.seed, "aspire-train", iter as u64);
        let val_pairs = iteration_val_pairs(base, &state, iter, cfg)?;
        let (net, trace) = train(&pairs, &val_pairs, &train_cfg)?;

        let checkpoint_id = if let Some(dir) = out_dir {
            persist_iteration(dir, iter, base, &state, &net, &trace, norm)?
        } else {
            format!("iter{}:unpersisted", iter + 1)
        };
        state.checkpoint_ids.push(checkpoint_id);
        networks.push(net);
    }
    Ok(AspireRun { networks, state })
}

/// Validation pairs matching the iteration's condition layout, built by
/// running the inference chain on the validation split.
fn iteration_val_pairs(
    base: &Dataset,
    state: &IterationState,
    iter: usize,
    cfg: &AspireConfig,
) -> Result<Vec<TrainingPair>> {
    if cfg.train.validation.is_none() {
        return Ok(Vec::new());
    }
    if iter == 0 {
        return Ok(crate::dataset::training_pairs(base, Split::Val));
    }
    // Later iterations would need per-val-example inference chains; the
    // reduced-cost choice is to train on the fixed step budget there.
    let _ = state;
    Ok(Vec::new())
}

/// Returns the checkpoint's content hash as its id.
fn persist_iteration(
    dir: &Path,
    iter: usize,
    _base: &Dataset,
    state: &IterationState,
    net: &ScoreNetwork,
    trace: &crate::diffusion::TrainTrace,
    _norm: crate::diffusion::VelocityNorm,
) -> Result<String> {
    let idir = dir.join(format!("iter{}", iter + 1));
    std::fs::create_dir_all(&idir)?;
    let mut manifest = RunManifest::new(format!("aspire iteration {}", iter + 1));
    let meta = net.save(&idir.join("checkpoint"))?;
    manifest.record_artifact("checkpoint/weights.vmuq", meta.weights_hash.clone());
    let ckpt_bytes = std::fs::read(idir.join("checkpoint/checkpoint.json"))?;
    manifest.record_artifact("checkpoint/checkpoint.json", store::hex_digest(&ckpt_bytes));
    let trace_csv = trace.to_csv();
    store::write_atomic(&idir.join("training_curve.csv"), trace_csv.as_bytes())?;
    manifest.record_artifact("training_curve.csv", store::hex_digest(trace_csv.as_bytes()));
    for (e, mig) in state.migration_velocities.iter().enumerate() {
        let t = crate::store::Tensor::from_f64(
            vec![mig.nz() as u64, mig.nx() as u64],
            mig.values.values().to_vec(),
        );
        let rel = format!("migvel_ex{e:04}.vmuq");
        let h = store::write_tensor(&idir.join(&rel), &t)?;
        manifest.record_artifact(rel, h);
    }
    manifest.record_flag("iteration", iter + 1);
    manifest.record_flag("k", state.k);
    store::write_manifest(&idir, &manifest)?;
    Ok(meta.weights_hash)
}

/// Amortized inference chain on one observation: iteration k computes one
/// summary in the current (optionally flooded) mean, samples an ensemble,
/// and feeds its mean forward. Exactly one extended migration per
/// iteration.
pub fn aspire_infer(
    networks: &[ScoreNetwork],
    y_obs: &ShotSet,
    x0: &VelocityModel,
    base_meta: &crate::dataset::DatasetMeta,
    cfg: &AspireConfig,
    observation_seed: u64,
) -> Result<Vec<PosteriorEnsemble>> {
    if networks.is_empty() {
        return Err(Error::config("aspire_infer needs at least one network"));
    }
    let norm = base_meta.velocity_norm();
    let schedule = NoiseSchedule::karras_with_data(
        0.002,
        80.0,
        7.0,
        cfg.infer_sampler_steps,
        cfg.train.sigma_data,
    )?;
    let settings = SamplerSettings::deterministic(schedule);
    let mut mig_vel = x0.clone();
    let mut summaries: Vec<ImageVolume> = Vec::new();
    let mut means: Vec<VelocityModel> = Vec::new();
    let mut out = Vec::with_capacity(networks.len());

    for (k, net) in networks.iter().enumerate() {
        if k > 0 {
            let prev_mean = VelocityModel::new(
                x0.dz,
                x0.dx,
                out.last()
                    .map(|e: &PosteriorEnsemble| e.mean.clone())
                    .unwrap(),
            )?
            .clamped();
            mig_vel = if cfg.flood_schedule[k] {
                flood_mean(&prev_mean, cfg)?
            } else {
                prev_mean.clone()
            };
            means.push(prev_mean);
        }
        let vol = summary_statistic(
            &mig_vel,
            y_obs,
            &base_meta.geometry,
            &base_meta.wavelet,
            &base_meta.offsets_m,
        )?;
        summaries.push(vol);
        let cond = condition_stack(&summaries, &means, norm);
        if cond.c != net.cond_channels() {
            return Err(Error::shape(format!(
                "iteration {k}: condition has {} channels, network expects {}",
                cond.c,
                net.cond_channels()
            )));
        }
        let seeds: Vec<u64> = (0..cfg.infer_ensemble)
            .map(|i| derive_seed(observation_seed, "aspire-infer", (k * 100_000 + i) as u64))
            .collect();
        out.push(ensemble(net, &cond, &settings, &seeds)?);
    }
    Ok(out)
}

/// Migrate the observed data in `m` posterior velocity samples; returns
/// the pixel-wise mean and population std of the images.
pub fn migration_ensemble(
    samples: &[VelocityModel],
    y_obs: &ShotSet,
    geom: &crate::wavesim::AcquisitionGeometry,
    w: &crate::wavesim::Wavelet,
    m: usize,
) -> Result<(Field2, Field2)> {
    if m == 0 || m > samples.len() {
        return Err(Error::config(format!(
            "migration ensemble size {m} outside 1..={}",
            samples.len()
        )));
    }
    let images: Vec<Field2> = samples[..m]
        .par_iter()
        .map(|v| migrate(v, y_obs, geom, w))
        .collect::<Result<_>>()?;
    if m == 1 {
        return Ok((images[0].clone(), Field2::zeros(images[0].nz, images[0].nx)));
    }
    crate::diffusion::posterior_stats(&images)
}

/// Evaluation mask for bottom-salt fidelity: the lower half of the true
/// salt body plus `margin` rows beneath it, per column.
pub fn bottom_salt_mask(mask: &SaltMask, margin: usize) -> Vec<bool> {
    let mut out = vec![false; mask.nz * mask.nx];
    for ix in 0..mask.nx {
        let rows: Vec<usize> = (0..mask.nz).filter(|&iz| mask.at(iz, ix)).collect();
        if rows.is_empty() {
            continue;
        }
        let top = rows[0];
        let bottom = *rows.last().unwrap();
        let mid = (top + bottom) / 2;
        for iz in mid..=(bottom + margin).min(mask.nz - 1) {
            out[iz * mask.nx + ix] = true;
        }
    }
    out
}
