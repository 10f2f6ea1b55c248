//! Denoising-objective training with adaptive moments, gradient clipping,
//! a loss trace, and validation-driven early stopping.

use crate::diffusion::layers::Chw;
use crate::diffusion::net::{edm_weight, NetConfig, ScoreNet};
use crate::diffusion::sampler::{sample_posterior, SamplerSettings};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::{posterior_stats, ScoreNetwork, TrainingPair};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Prng};
use crate::uqmetrics;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub widths: [usize; 3],
    pub emb_dim: usize,
    pub emb_features: usize,
    pub sigma_data: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub validation: Option<ValidationConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Steps between validation evaluations.
    pub every: usize,
    /// Ensemble size per validation example.
    pub ensemble: usize,
    /// Sampler steps used for validation ensembles.
    pub sampler_steps: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            widths: [32, 64, 128],
            emb_dim: 32,
            emb_features: 8,
            sigma_data: 0.5,
            steps: 2000,
            batch_size: 8,
            lr: 1e-4,
            grad_clip: 1.0,
            seed: 0,
            validation: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub loss: f64,
    pub val_rmse: Option<f64>,
    pub val_ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub stopped_early_at: Option<usize>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,val_rmse,val_ssim\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{}\n",
                e.step,
                e.loss,
                e.val_rmse.map(|v| v.to_string()).unwrap_or_default(),
                e.val_ssim.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - Self::BETA1.powi(self.t as i32);
        let b2t = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// One example's contribution: the weighted denoising loss and its
/// parameter gradient, both scaled by `1/batch`.
fn example_loss_and_grad(
    net: &ScoreNet,
    pair: &TrainingPair,
    sigma: f64,
    noise_seed: u64,
    inv_batch: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let mut rng = Prng::seeded(noise_seed);
    let mut x_noisy = pair.target.clone();
    for v in x_noisy.data.iter_mut() {
        *v += sigma * rng.normal();
    }
    let (d, tape) = net.denoise(&x_noisy, &pair.cond, sigma)?;
    let n_pix = d.data.len() as f64;
    let lambda = edm_weight(sigma, net.cfg.sigma_data);
    let mut loss = 0.0;
    let mut d_out = Chw::zeros(1, d.h, d.w);
    for i in 0..d.data.len() {
        let r = d.data[i] - pair.target.data[i];
        loss += r * r;
        d_out.data[i] = inv_batch * lambda * 2.0 * r / n_pix;
    }
    loss = inv_batch * lambda * loss / n_pix;
    net.backward(&tape, &d_out, grad);
    Ok(loss)
}

/// Compute the full-batch analytic gradient once; used by the
/// finite-difference oracle in tests and by the acceptance suite.
pub fn batch_gradient(
    net: &ScoreNet,
    batch: &[(&TrainingPair, f64, u64)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.params.len()];
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (pair, sigma, seed) in batch {
        loss += example_loss_and_grad(net, pair, *sigma, *seed, inv_batch, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Minimize the conditional denoising objective over `pairs`.
/// Deterministic given `cfg.seed`; per-example gradients fan out to
/// worker threads and reduce in fixed batch order.
pub fn train(
    pairs: &[TrainingPair],
    val_pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<(ScoreNetwork, TrainTrace)> {
    train_observed(pairs, val_pairs, cfg, &mut |_| {})
}

/// [`train`] with a per-step observer, so callers can persist the loss
/// trace even when training aborts with a divergence error.
pub fn train_observed(
    pairs: &[TrainingPair],
    val_pairs: &[TrainingPair],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TraceEntry),
) -> Result<(ScoreNetwork, TrainTrace)> {
    if pairs.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    for p in pairs.iter().chain(val_pairs) {
        p.validate()?;
        if p.cond.c != pairs[0].cond.c {
            return Err(Error::shape("inconsistent condition channel counts"));
        }
    }
    let norm = pairs[0].norm;
    let net_cfg = NetConfig {
        cond_channels: pairs[0].cond.c,
        widths: cfg.widths,
        emb_dim: cfg.emb_dim,
        emb_features: cfg.emb_features,
        sigma_data: cfg.sigma_data,
    };
    let init_seed = derive_seed(cfg.seed, "net-init", 0);
    let mut net = ScoreNet::new(net_cfg, init_seed);
    let mut adam = Adam::new(net.params.len(), cfg.lr);
    let mut rng = Prng::seeded(derive_seed(cfg.seed, "train-stream", 0));
    let mut trace = TrainTrace::default();
    let mut best_val = f64::INFINITY;
    let mut evals_since_best = 0usize;

    let batch = cfg.batch_size.max(1);
    for step in 0..cfg.steps {
        // Draw the batch plan sequentially so threading does not touch
        // the random stream.
        let plan: Vec<(usize, f64, u64)> = (0..batch)
            .map(|_| {
                let idx = rng.index(pairs.len());
                let sigma = (-1.2 + 1.2 * rng.normal()).exp();
                let noise_seed = rng.next_u64();
                (idx, sigma, noise_seed)
            })
            .collect();
        let inv_batch = 1.0 / batch as f64;
        let partials: Vec<Result<(f64, Vec<f64>)>> = plan
            .par_iter()
            .map(|&(idx, sigma, noise_seed)| {
                let mut grad = vec![0.0; net.params.len()];
                let loss = example_loss_and_grad(
                    &net,
                    &pairs[idx],
                    sigma,
                    noise_seed,
                    inv_batch,
                    &mut grad,
                )?;
                Ok((loss, grad))
            })
            .collect();
        let mut grad = vec![0.0; net.params.len()];
        let mut loss = 0.0;
        for part in partials {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }

        // Global-norm gradient clipping.
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm > cfg.grad_clip {
            let s = cfg.grad_clip / gnorm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
        adam.step(&mut net.params, &grad);

        let mut entry = TraceEntry {
            step,
            loss,
            val_rmse: None,
            val_ssim: None,
        };
        if let Some(val_cfg) = &cfg.validation {
            if !val_pairs.is_empty() && (step + 1) % val_cfg.every == 0 {
                let snapshot = ScoreNetwork {
                    net: net.clone(),
                    norm,
                    init_seed,
                };
                let (val_rmse, val_ssim) =
                    validate(&snapshot, val_pairs, val_cfg, cfg.seed, step)?;
                entry.val_rmse = Some(val_rmse);
                entry.val_ssim = val_ssim;
                if val_rmse < best_val {
                    best_val = val_rmse;
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                }
                if evals_since_best >= val_cfg.patience {
                    observer(&entry);
                    trace.entries.push(entry);
                    trace.stopped_early_at = Some(step);
                    break;
                }
            }
        }
        observer(&entry);
        trace.entries.push(entry);
    }

    Ok((
        ScoreNetwork {
            net,
            norm,
            init_seed,
        },
        trace,
    ))
}

/// Posterior-mean RMSE (and SSIM when the grid fits a window) over the
/// validation pairs, using a reduced ensemble.
fn validate(
    net: &ScoreNetwork,
    val_pairs: &[TrainingPair],
    cfg: &ValidationConfig,
    seed: u64,
    step: usize,
) -> Result<(f64, Option<f64>)> {
    let schedule = NoiseSchedule::karras_with_data(
        0.002,
        80.0,
        7.0,
        cfg.sampler_steps,
        net.net.cfg.sigma_data,
    )?;
    let settings = SamplerSettings::deterministic(schedule);
    let mut rmse_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut ssim_count = 0usize;
    for (k, pair) in val_pairs.iter().enumerate() {
        let samples: Vec<_> = (0..cfg.ensemble.max(2))
            .into_par_iter()
            .map(|i| {
                let s = derive_seed(seed, "val-sample", (step * 1000 + k * 100 + i) as u64);
                sample_posterior(net, &pair.cond, &settings, s)
            })
            .collect::<Result<_>>()?;
        let (mean, _) = posterior_stats(&samples)?;
        let gt = net.norm.denormalize_plane(&pair.target);
        rmse_sum += uqmetrics::rmse(&gt, &mean, net.norm.lo, net.norm.hi)?;
        if gt.nz >= uqmetrics::SSIM_WINDOW && gt.nx >= uqmetrics::SSIM_WINDOW {
            ssim_sum += uqmetrics::ssim(&gt, &mean)?;
            ssim_count += 1;
        }
    }
    let n = val_pairs.len() as f64;
    Ok((
        rmse_sum / n,
        if ssim_count > 0 {
            Some(ssim_sum / ssim_count as f64)
        } else {
            None
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::VelocityNorm;
    use crate::field::Field2;

    fn tiny_cfg(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            widths: [2, 2, 3],
            emb_dim: 3,
            emb_features: 2,
            sigma_data: 0.5,
            steps,
            batch_size: 4,
            lr: 1e-3,
            grad_clip: 1.0,
            seed,
            validation: None,
        }
    }

    fn smoke_cfg(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            widths: [4, 6, 8],
            emb_dim: 8,
            emb_features: 4,
            lr: 2e-3,
            ..tiny_cfg(steps, seed)
        }
    }

    fn one_pair(h: usize, w: usize, seed: u64) -> TrainingPair {
        let mut rng = Prng::seeded(seed);
        let norm = VelocityNorm::new(1500.0, 4500.0, true).unwrap();
        let gt = Field2::from_fn(h, w, |iz, _| 1600.0 + 250.0 * (iz as f64));
        let mut cond = Chw::zeros(1, h, w);
        rng.fill_normal(&mut cond.data);
        TrainingPair {
            target: norm.normalize_field(&gt),
            cond,
            norm,
        }
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let pair = one_pair(8, 8, 3);
        let cfg = tiny_cfg(1, 5);
        let net_cfg = NetConfig {
            cond_channels: 1,
            widths: cfg.widths,
            emb_dim: cfg.emb_dim,
            emb_features: cfg.emb_features,
            sigma_data: cfg.sigma_data,
        };
        let mut net = ScoreNet::new(net_cfg, 7);
        // Perturb the zero-initialized tails so their gradients are
        // exercised at a generic point.
        let mut rng = Prng::seeded(8);
        for p in net.params.iter_mut() {
            *p += 0.1 * rng.normal();
        }
        assert!(net.param_count() <= 1000);

        let batch = [(&pair, 0.8f64, 99u64), (&pair, 3.0f64, 100u64)];
        let (_, grad) = batch_gradient(&net, &batch).unwrap();

        // Components below the floor sit at the central-difference noise
        // level (~1e-11 absolute for an O(1) loss) and carry no signal.
        let h = 1e-5;
        let floor = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..net.params.len() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let (up, _) = batch_gradient(&net, &batch).unwrap();
            net.params[i] = orig - h;
            let (dn, _) = batch_gradient(&net, &batch).unwrap();
            net.params[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
        assert!(worst < 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn single_pair_training_drives_the_loss_down() {
        let pair = one_pair(8, 8, 1);
        let cfg = smoke_cfg(2000, 2);
        let (_, trace) = train(&[pair], &[], &cfg).unwrap();
        let early: f64 = trace.losses()[..50].iter().sum::<f64>() / 50.0;
        let losses = trace.losses();
        let late: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(
            late < 0.1 * early,
            "loss did not drop: early {early}, late {late}"
        );
    }

    #[test]
    fn loss_moving_average_is_non_increasing_on_the_smoke_dataset() {
        let pair = one_pair(8, 8, 4);
        let cfg = tiny_cfg(800, 6);
        let (_, trace) = train(&[pair], &[], &cfg).unwrap();
        let losses = trace.losses();
        let ma = |lo: usize| -> f64 { losses[lo..lo + 200].iter().sum::<f64>() / 200.0 };
        let first = ma(0);
        let mid = ma(300);
        let last = ma(600);
        assert!(mid <= first * 1.001, "ma rose: {first} -> {mid}");
        assert!(last <= mid * 1.001, "ma rose: {mid} -> {last}");
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let pair = one_pair(8, 8, 9);
        let mut cfg = tiny_cfg(10, 3);
        cfg.lr = 0.0;
        let (trained, _) = train(&[pair], &[], &cfg).unwrap();
        let fresh = ScoreNet::new(trained.net.cfg.clone(), trained.init_seed);
        assert_eq!(trained.net.params, fresh.params);
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let pair = one_pair(8, 8, 12);
        let cfg = tiny_cfg(30, 21);
        let (a, ta) = train(&[pair.clone()], &[], &cfg).unwrap();
        let (b, tb) = train(&[pair], &[], &cfg).unwrap();
        assert_eq!(a.net.params, b.net.params);
        assert_eq!(ta.losses(), tb.losses());
    }

    #[test]
    fn overfit_net_denoises_toward_its_single_target() {
        // Train to convergence on one pair; a large-sigma input should be
        // pulled toward that pair's target.
        let pair = one_pair(8, 8, 31);
        let cfg = smoke_cfg(3000, 32);
        let (net, _) = train(&[pair.clone()], &[], &cfg).unwrap();
        let mut rng = Prng::seeded(33);
        // Large relative to the lognormal training draws (median ~0.3),
        // while still inside the band the net saw during training.
        let sigma = 6.0;
        let mut x_noisy = pair.target.clone();
        for v in x_noisy.data.iter_mut() {
            *v += sigma * rng.normal();
        }
        let d = net.denoise(&x_noisy, &pair.cond, sigma).unwrap();
        let rms: f64 = (d
            .data
            .iter()
            .zip(&pair.target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / d.data.len() as f64)
            .sqrt();
        // Targets live in [-1, 1]; 5% of that dynamic range.
        assert!(rms < 0.1, "denoised rms error {rms}");
    }

    #[test]
    fn sampler_reproduces_a_memorized_target() {
        // Delta-dataset oracle: a net overfit to one pair should funnel
        // any initial noise to that pair's target.
        let pair = one_pair(8, 8, 61);
        let cfg = smoke_cfg(3000, 62);
        let (net, _) = train(&[pair.clone()], &[], &cfg).unwrap();
        let schedule = NoiseSchedule::default_sampling(30).unwrap();
        let settings = SamplerSettings::deterministic(schedule);
        let sample = sample_posterior(&net, &pair.cond, &settings, 9).unwrap();
        let gt = net.norm.denormalize_plane(&pair.target);
        let span = net.norm.hi - net.norm.lo;
        let rms = (sample
            .values()
            .iter()
            .zip(gt.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / gt.values().len() as f64)
            .sqrt();
        assert!(rms / span < 0.05, "sample rms {} of range", rms / span);
    }

    #[test]
    fn sampling_is_deterministic_and_sensitive_to_seed() {
        let pair = one_pair(8, 8, 41);
        let cfg = tiny_cfg(50, 42);
        let (net, _) = train(&[pair.clone()], &[], &cfg).unwrap();
        let schedule = NoiseSchedule::default_sampling(12).unwrap();
        let settings = SamplerSettings::deterministic(schedule);
        let a = sample_posterior(&net, &pair.cond, &settings, 5).unwrap();
        let b = sample_posterior(&net, &pair.cond, &settings, 5).unwrap();
        let c = sample_posterior(&net, &pair.cond, &settings, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_reports_the_step() {
        let pair = one_pair(8, 8, 51);
        let mut cfg = tiny_cfg(5, 52);
        cfg.lr = 1e160;
        cfg.grad_clip = f64::INFINITY;
        match train(&[pair], &[], &cfg) {
            Err(Error::TrainingDiverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
