//! Salt-related physics checks: where summary energy lands when the
//! migration velocity is missing the salt, and how sub-salt velocity
//! uncertainty propagates into migration-image uncertainty.

use vmuq::aspire::migration_ensemble;
use vmuq::dataset::{build_dataset, smoke_config, Split};
use vmuq::geomodel::{detect_top_salt, DEFAULT_TOP_SALT_THRESHOLD};

fn salt_dataset(seed: u64) -> vmuq::dataset::Dataset {
    let mut cfg = smoke_config(seed);
    cfg.geomodel.nz = 32;
    cfg.geomodel.nx = 48;
    cfg.geomodel.salt_probability = 1.0;
    cfg.geomodel.layers_min = 3;
    cfg.geomodel.layers_max = 4;
    cfg.acquisition.record_time_s = 0.85;
    cfg.acquisition.n_shots = 3;
    cfg.summary.n_offsets_side = 2;
    cfg.n_train = 1;
    cfg.n_val = 0;
    cfg.n_test = 0;
    build_dataset(&cfg).unwrap()
}

#[test]
fn summary_energy_concentrates_at_and_below_the_missing_salt() {
    // Find a seed whose salt roll produced a body.
    let ds = (0..8)
        .map(|s| salt_dataset(900 + s))
        .find(|ds| !ds.examples[0].salt_mask.is_empty())
        .expect("no salt example generated");
    let ex = ds.split(Split::Train).next().unwrap();
    // Shallowest row of the true salt body.
    let picks = detect_top_salt(&ex.truth, DEFAULT_TOP_SALT_THRESHOLD).unwrap();
    let top = picks.iter().flatten().copied().min().unwrap();

    // The summary was computed in the salt-free migration velocity, so
    // the residual is dominated by the missing salt reflections; its
    // image energy should sit at/below the true salt top.
    let vol = &ex.summary.volume;
    let margin = 3usize;
    let split_row = top.saturating_sub(margin);
    let mut above = 0.0;
    let mut below = 0.0;
    for ih in 0..vol.n_offsets {
        let slice = vol.slice(ih);
        for iz in 0..vol.nz {
            let row_energy: f64 = slice[iz * vol.nx..(iz + 1) * vol.nx]
                .iter()
                .map(|v| v * v)
                .sum();
            if iz < split_row {
                above += row_energy;
            } else {
                below += row_energy;
            }
        }
    }
    assert!(
        below > above,
        "salt-top row {top}: energy above {above:.3e} vs at/below {below:.3e}"
    );
}

#[test]
fn migration_std_is_larger_below_the_salt_when_velocities_differ_there() {
    let ds = (0..8)
        .map(|s| salt_dataset(950 + s))
        .find(|ds| {
            let m = &ds.examples[0].salt_mask;
            // Need some headroom below the salt for the comparison.
            !m.is_empty()
                && (0..m.nz)
                    .rev()
                    .find(|&iz| (0..m.nx).any(|ix| m.at(iz, ix)))
                    .map(|bottom| bottom + 6 < m.nz)
                    .unwrap_or(false)
        })
        .expect("no usable salt example");
    let ex = ds.split(Split::Train).next().unwrap();
    let mask = &ex.salt_mask;
    let bottom = (0..mask.nz)
        .rev()
        .find(|&iz| (0..mask.nx).any(|ix| mask.at(iz, ix)))
        .unwrap();
    let top = (0..mask.nz)
        .find(|&iz| (0..mask.nx).any(|ix| mask.at(iz, ix)))
        .unwrap();

    // Two velocity hypotheses that agree above the salt but disagree on
    // the salt bottom: one extends the body three rows deeper, the kind
    // of spread a posterior shows before the bottom is delineated.
    let v_a = ex.truth.clone();
    let mut v_b = ex.truth.clone();
    for iz in bottom + 1..(bottom + 4).min(v_b.nz()) {
        for ix in 0..v_b.nx() {
            if mask.at(bottom, ix) {
                *v_b.values.at_mut(iz, ix) = 4500.0;
            }
        }
    }
    let (mean, std) = migration_ensemble(
        &[v_a, v_b],
        &ex.shots,
        &ds.meta.geometry,
        &ds.meta.wavelet,
        2,
    )
    .unwrap();

    // The plain cross-correlation image decays by orders of magnitude
    // with depth (no illumination compensation), so the comparison is on
    // std relative to the local image magnitude: shared overburden means
    // nearly identical images above the salt, while the moved salt
    // bottom reworks everything beneath it.
    let region_rel_std = |z_lo: usize, z_hi: usize| -> f64 {
        let mut s = 0.0;
        let mut m = 0.0;
        for iz in z_lo..z_hi {
            for ix in 0..std.nx {
                s += std.at(iz, ix);
                m += mean.at(iz, ix).abs();
            }
        }
        s / m
    };
    let above = region_rel_std(0, top);
    let below = region_rel_std(bottom + 1, std.nz.min(bottom + 7));
    assert!(
        below > 3.0 * above,
        "sub-salt relative std {below:.3e} not clearly above above-salt {above:.3e}"
    );
}
