//! Posterior sampling for the latent-class joint trajectory model.

mod draw;
mod gibbs;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use draw::{ClassEndpoint, ClassParams, CommonParams, DrawStore, ParameterDraw, Provenance};

/// Chain length, thinning, seed and the α proposal scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
    pub alpha_step: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 50_000, keep: 1_000, thin: 1, seed: 0, alpha_step: 0.25 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep < 1 {
            return Err(Error::arg("keep must be at least 1"));
        }
        if self.thin < 1 {
            return Err(Error::arg("thin must be at least 1"));
        }
        if !(self.alpha_step > 0.0 && self.alpha_step.is_finite()) {
            return Err(Error::arg("alpha_step must be positive"));
        }
        Ok(())
    }
}

/// Runs `burn_in + keep * thin` sweeps and keeps every `thin`-th draw after burn-in.
pub fn fit(d: &Dataset, mc: &ModelConfig, run: &McmcConfig) -> Result<DrawStore> {
    mc.validate()?;
    run.validate()?;
    if d.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let violations = validate_dataset(d);
    if let Some(v) = violations.first() {
        return Err(Error::data(format!(
            "{} violation(s); first: subject {} field {}: {}",
            violations.len(),
            v.subject_id,
            v.field,
            v.rule
        )));
    }
    if let Some(s) = d.subjects.iter().find(|s| s.n_observations() == 0) {
        return Err(Error::data(format!("subject {} has no post-baseline observations", s.subject_id)));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(run.seed);
    let subjects = gibbs::prepare(d);
    let z = gibbs::kmeans_labels(&subjects, mc.classes, &mut rng);
    let mut g = gibbs::Gibbs::new(mc, subjects, d.n_sites, z, rng, run.alpha_step);
    g.warm_start()?;

    let total = run.burn_in + run.keep * run.thin;
    let mut draws = Vec::with_capacity(run.keep);
    for it in 0..total {
        g.sweep(it)?;
        g.check_finite(it)?;
        if it >= run.burn_in && (it - run.burn_in + 1) % run.thin == 0 {
            draws.push(g.snapshot());
        }
        if (it + 1) % 10_000 == 0 {
            log::debug!("sweep {}/{total}", it + 1);
        }
    }
    let alpha_acceptance = if g.alpha_proposed == 0 { 0.0 } else { g.alpha_accepted as f64 / g.alpha_proposed as f64 };
    log::info!("alpha acceptance rate {alpha_acceptance:.3}");

    let store = DrawStore {
        config: mc.clone(),
        mcmc: run.clone(),
        provenance: Provenance {
            seed: run.seed,
            burn_in: run.burn_in,
            keep: run.keep,
            thin: run.thin,
            dataset_digest: d.digest(),
            subject_ids: d.subjects.iter().map(|s| s.subject_id.clone()).collect(),
            n_sites: d.n_sites,
            alpha_acceptance,
        },
        draws,
    };
    store.validate()?;
    Ok(store)
}

/// Prior probability that subject `i` joins each class given the other labels,
/// with π integrated out: `(n_{-i,c} + α/C) / (n - 1 + α)`.
pub fn conditional_class_prob(counts: &[usize], alpha: f64, n_classes: usize, n: usize) -> Vec<f64> {
    let a = alpha / n_classes as f64;
    let denom = (n as f64 - 1.0) + alpha;
    counts.iter().map(|&k| (k as f64 + a) / denom).collect()
}
