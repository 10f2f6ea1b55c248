//! Linear-Gaussian end-to-end check of the conditional diffusion stack:
//! with prior N(mu0, s0^2 I) on a 4x4 field and observations y = x + n,
//! n ~ N(0, sn^2 I), the posterior is conjugate Gaussian with
//! mean = (sn^2 mu0 + s0^2 y) / (s0^2 + sn^2) and
//! std = sqrt(s0^2 sn^2 / (s0^2 + sn^2)), so the learned sampler can be
//! scored against closed-form truth.

use vmuq::diffusion::{
    ensemble, posterior_stats, sample_posterior, train, Chw, NoiseSchedule, SamplerSettings,
    TrainConfig, TrainingPair, VelocityNorm,
};
use vmuq::rng::{derive_seed, Prng};

const MU0: f64 = 2.0;
const S0: f64 = 1.0;
const SN: f64 = 0.5;
const DIM: usize = 4;

fn make_pairs(n: usize, norm: VelocityNorm, seed: u64) -> Vec<TrainingPair> {
    let mut rng = Prng::seeded(seed);
    (0..n)
        .map(|_| {
            let mut x = Chw::zeros(1, DIM, DIM);
            let mut y = Chw::zeros(1, DIM, DIM);
            for i in 0..DIM * DIM {
                let xv = MU0 + S0 * rng.normal();
                let yv = xv + SN * rng.normal();
                x.data[i] = norm.normalize(xv);
                y.data[i] = norm.normalize(yv);
            }
            TrainingPair {
                target: x,
                cond: y,
                norm,
            }
        })
        .collect()
}

#[test]
fn sampler_matches_the_conjugate_posterior() {
    // The band is wide enough that samples never need clamping.
    let norm = VelocityNorm::new(MU0 - 5.0 * S0, MU0 + 5.0 * S0, false).unwrap();
    let pairs = make_pairs(2000, norm, 11);
    let cfg = TrainConfig {
        widths: [8, 16, 16],
        emb_dim: 16,
        emb_features: 4,
        sigma_data: 0.5,
        steps: 3000,
        batch_size: 16,
        lr: 1e-3,
        grad_clip: 1.0,
        seed: 21,
        validation: None,
    };
    let (net, trace) = train(&pairs, &[], &cfg).unwrap();
    let losses = trace.losses();
    let early: f64 = losses[..100].iter().sum::<f64>() / 100.0;
    let late: f64 = losses[losses.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(late < early, "training made no progress");

    // A held-out observation.
    let mut rng = Prng::seeded(1234);
    let mut y_obs = vec![0.0; DIM * DIM];
    let mut x_star = vec![0.0; DIM * DIM];
    for i in 0..DIM * DIM {
        x_star[i] = MU0 + S0 * rng.normal();
        y_obs[i] = x_star[i] + SN * rng.normal();
    }
    let cond = Chw {
        c: 1,
        h: DIM,
        w: DIM,
        data: y_obs.iter().map(|&v| norm.normalize(v)).collect(),
    };

    let shrink = S0 * S0 / (S0 * S0 + SN * SN);
    let post_mean: Vec<f64> = y_obs.iter().map(|&y| shrink * y + (1.0 - shrink) * MU0).collect();
    let post_std = (S0 * S0 * SN * SN / (S0 * S0 + SN * SN)).sqrt();

    let schedule = NoiseSchedule::default_sampling(40).unwrap();
    let settings = SamplerSettings::deterministic(schedule);
    let n_draws = 1000usize;
    let samples: Vec<_> = (0..n_draws)
        .map(|i| {
            sample_posterior(&net, &cond, &settings, derive_seed(77, "toy-draw", i as u64))
                .unwrap()
        })
        .collect();
    let (mean, std) = posterior_stats(&samples).unwrap();

    // Posterior mean: mean absolute deviation over the 16 components,
    // within 5% of the prior std.
    let mean_dev: f64 = (0..DIM * DIM)
        .map(|i| (mean.values()[i] - post_mean[i]).abs())
        .sum::<f64>()
        / (DIM * DIM) as f64;
    assert!(
        mean_dev < 0.05 * S0,
        "posterior-mean deviation {mean_dev} exceeds 5% of prior std"
    );

    // Posterior std: mean relative deviation within 15%.
    let std_dev: f64 = (0..DIM * DIM)
        .map(|i| (std.values()[i] - post_std).abs() / post_std)
        .sum::<f64>()
        / (DIM * DIM) as f64;
    assert!(std_dev < 0.15, "posterior-std deviation {std_dev}");

    // Sampler consistency: doubling the step count barely moves a sample.
    let s40 = sample_posterior(&net, &cond, &settings, 555).unwrap();
    let settings80 =
        SamplerSettings::deterministic(NoiseSchedule::default_sampling(80).unwrap());
    let s80 = sample_posterior(&net, &cond, &settings80, 555).unwrap();
    let rmse: f64 = (s40
        .values()
        .iter()
        .zip(s80.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (DIM * DIM) as f64)
        .sqrt();
    let range = norm.hi - norm.lo;
    assert!(
        rmse / range < 0.02,
        "doubling steps moved the sample by {}% of the range",
        100.0 * rmse / range
    );

    // Conditional sensitivity: the shift in the sample mean tracks the
    // analytic posterior-mean shift.
    let mut y2 = y_obs.clone();
    let mut rng2 = Prng::seeded(4321);
    for v in y2.iter_mut() {
        *v += rng2.normal();
    }
    let cond2 = Chw {
        c: 1,
        h: DIM,
        w: DIM,
        data: y2.iter().map(|&v| norm.normalize(v)).collect(),
    };
    let seeds: Vec<u64> = (0..256).map(|i| derive_seed(9, "sens", i)).collect();
    let ens1 = ensemble(&net, &cond, &settings, &seeds).unwrap();
    let ens2 = ensemble(&net, &cond2, &settings, &seeds).unwrap();
    let mut dot = 0.0;
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    for i in 0..DIM * DIM {
        let est = ens2.mean.values()[i] - ens1.mean.values()[i];
        let ana = shrink * (y2[i] - y_obs[i]);
        dot += est * ana;
        n1 += est * est;
        n2 += ana * ana;
    }
    let cosine = dot / (n1.sqrt() * n2.sqrt());
    assert!(cosine > 0.95, "conditional sensitivity cosine {cosine}");
}
