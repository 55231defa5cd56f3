#![allow(dead_code)]

use ctscreen::data::Dataset;
use ctscreen::model::ModelConfig;
use ctscreen::sampler::{fit, DrawStore, McmcConfig};
use ctscreen::simgen::{default_sim_scheme, simulate_study, split_train_test};

pub const STUDY_GRID: &str = "-16:16:2,-24:16:2";

/// Scaled simulation study split into training and test sets.
pub fn study(n_subjects: usize, n_sites: usize, seed: u64) -> (Dataset, Dataset) {
    let mut scheme = default_sim_scheme();
    scheme.n_subjects = n_subjects;
    scheme.n_sites = n_sites;
    let (d, truth) = simulate_study(&scheme, seed).unwrap();
    let (train, test, _, _) = split_train_test(&d, &truth, scheme.train_fraction, seed.wrapping_add(1)).unwrap();
    (train, test)
}

pub fn quick_fit(d: &Dataset, classes: usize, burn_in: usize, keep: usize, seed: u64) -> DrawStore {
    let run = McmcConfig { burn_in, keep, seed, ..McmcConfig::default() };
    fit(d, &ModelConfig::with_classes(classes), &run).unwrap()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Batch-means standard error of the mean of an autocorrelated series.
pub fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(size).take(batches).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect();
    let (_, v) = mean_var(&means);
    (v / batches as f64).sqrt()
}
