//! Synthetic draw stores for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::model::ModelConfig;
use crate::sampler::{ClassEndpoint, ClassParams, CommonParams, DrawStore, McmcConfig, ParameterDraw, Provenance};

fn class_endpoint(rng: &mut ChaCha20Rng, scale: f64) -> ClassEndpoint {
    ClassEndpoint {
        beta0: scale * rng.random_range(-3.0..3.0),
        beta1: scale * rng.random_range(-0.8..0.2),
        beta2: scale * rng.random_range(-0.01..0.04),
        tau_s: rng.random_range(0.4..2.0),
    }
}

fn common(rng: &mut ChaCha20Rng, beta0_base: f64) -> CommonParams {
    CommonParams {
        beta0_base,
        tau_w: rng.random_range(0.5..2.0),
        tau_e: rng.random_range(0.5..2.0),
        tau0: 1.0,
        tau1: 1.0,
        tau2: 1.0,
        tau0_base: 1.0,
    }
}

/// Random but plausible draws for 2 sites and 3 subjects.
pub(crate) fn store_from(n_draws: usize, n_classes: usize, seed: u64) -> DrawStore {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draws = (0..n_draws)
        .map(|_| {
            let classes = (0..n_classes)
                .map(|_| ClassParams { x: class_endpoint(&mut rng, 1.0), y: class_endpoint(&mut rng, 1.5) })
                .collect();
            let raw: Vec<f64> = (0..n_classes).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            ParameterDraw {
                classes,
                common_x: common(&mut rng, -0.4),
                common_y: common(&mut rng, -0.6),
                pi: raw.iter().map(|v| v / s).collect(),
                site_profile: vec![vec![0.5, 0.5]; n_classes],
                z: vec![1; 3],
                site_effects: vec![vec![[0.0; 2]; n_classes]; 2],
                subject_effects: vec![[0.0; 2]; 3],
                alpha: 2.0,
            }
        })
        .collect();
    DrawStore {
        config: ModelConfig::with_classes(n_classes),
        mcmc: McmcConfig::default(),
        provenance: Provenance {
            seed,
            burn_in: 0,
            keep: n_draws,
            thin: 1,
            dataset_digest: String::new(),
            subject_ids: vec!["a".into(), "b".into(), "c".into()],
            n_sites: 2,
            alpha_acceptance: 0.0,
        },
        draws,
    }
}

pub(crate) fn two_class_store() -> DrawStore {
    store_from(1, 2, 0)
}
