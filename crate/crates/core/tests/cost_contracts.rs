//! Operator-call cost contracts, asserted against the extended-migration
//! counter. These run in one test function (own process) so unrelated
//! migrations cannot perturb the counter deltas.

use vmuq::aspire::{aspire_infer, run_aspire, AspireConfig};
use vmuq::dataset::{build_dataset, smoke_config, Split};
use vmuq::diffusion::TrainConfig;
use vmuq::wavesim::{migration_call_count, summary_statistic};

#[test]
fn inference_cost_contracts_hold() {
    let ds = build_dataset(&smoke_config(71)).unwrap();
    let ex = ds.split(Split::Test).next().unwrap();

    // Plain summary formation: exactly one extended migration.
    let before = migration_call_count();
    let _ = summary_statistic(
        &ex.migration_velocity,
        &ex.shots,
        &ds.meta.geometry,
        &ds.meta.wavelet,
        &ds.meta.offsets_m,
    )
    .unwrap();
    assert_eq!(migration_call_count() - before, 1);

    // ASPIRE inference: exactly K extended migrations per observation.
    let train = TrainConfig {
        widths: [2, 2, 3],
        emb_dim: 3,
        emb_features: 2,
        sigma_data: 0.5,
        steps: 10,
        batch_size: 2,
        lr: 1e-3,
        grad_clip: 1.0,
        seed: 5,
        validation: None,
    };
    let mut acfg = AspireConfig::defaults(train, 6);
    acfg.iterations = 2;
    acfg.flood_schedule = vec![false, false];
    acfg.rebuild_ensemble = 2;
    acfg.rebuild_sampler_steps = 4;
    acfg.infer_ensemble = 2;
    acfg.infer_sampler_steps = 4;
    let run = run_aspire(&ds, &acfg, None).unwrap();

    for k in 1..=2usize {
        let before = migration_call_count();
        let ensembles = aspire_infer(
            &run.networks[..k],
            &ex.shots,
            &ex.migration_velocity,
            &ds.meta,
            &acfg,
            42,
        )
        .unwrap();
        let delta = migration_call_count() - before;
        assert_eq!(delta, k as u64, "K = {k}: saw {delta} migrations");
        assert_eq!(ensembles.len(), k);
    }
}
