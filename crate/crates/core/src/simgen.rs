//! Synthetic pivotal-study generator with ground-truth class labels.
//!
//! The default scheme has 50 sites, 700 subjects and six trajectory classes
//! whose site-effect variance is low, moderate or high. Placebo subjects get
//! a shift on the linear and quadratic coefficients, so twelve distinct mean
//! curves appear. Everyone completes the first two post-baseline visits and
//! drops out after a randomly drawn final visit.
//!
//! Random numbers come from ChaCha20 seeded with `seed_from_u64`. Draw order
//! is fixed, so a given seed reproduces a study bit-for-bit.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Endpoint, Observation, SubjectRecord};
use crate::error::{Error, Result};

/// Quadratic mean curve and site-effect variance for one class and endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Variance of the per-site effect (`1/τ_sc`).
    pub site_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClass {
    pub x: ClassCurve,
    pub y: ClassCurve,
}

impl SimClass {
    pub fn curve(&self, e: Endpoint) -> &ClassCurve {
        match e {
            Endpoint::X => &self.x,
            Endpoint::Y => &self.y,
        }
    }
}

/// Parameters shared by every class for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommonParams {
    pub beta0_base: f64,
    pub mu0_base: f64,
    pub tau0_base: f64,
    pub tau_w: f64,
    pub tau_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScheme {
    pub n_sites: usize,
    pub n_subjects: usize,
    pub class_probs: Vec<f64>,
    pub classes: Vec<SimClass>,
    pub common_x: CommonParams,
    pub common_y: CommonParams,
    /// Added to (β1, β2) of both endpoints for placebo subjects.
    pub treatment_shift: (f64, f64),
    pub visit_times: Vec<f64>,
    /// Leading post-baseline visits every subject completes.
    pub min_postbaseline_visits: usize,
    /// Probabilities over the remaining visits of being the final one.
    pub completion_probs: Vec<f64>,
    pub train_fraction: f64,
}

impl SimScheme {
    pub fn common(&self, e: Endpoint) -> &CommonParams {
        match e {
            Endpoint::X => &self.common_x,
            Endpoint::Y => &self.common_y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let close_to_one = |v: &[f64]| (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if self.n_sites == 0 || self.n_subjects == 0 {
            return Err(Error::arg("scheme needs at least one site and one subject"));
        }
        if self.classes.len() != self.class_probs.len() || self.classes.is_empty() {
            return Err(Error::arg("class_probs and classes differ in length"));
        }
        if !close_to_one(&self.class_probs) || self.class_probs.iter().any(|p| *p < 0.0) {
            return Err(Error::arg("class_probs must be a probability vector"));
        }
        if !close_to_one(&self.completion_probs) || self.completion_probs.iter().any(|p| *p < 0.0) {
            return Err(Error::arg("completion_probs must be a probability vector"));
        }
        if self.visit_times.windows(2).any(|w| w[1] <= w[0]) || self.visit_times.first().is_none_or(|t| *t <= 0.0) {
            return Err(Error::arg("visit_times must be positive and strictly increasing"));
        }
        if self.min_postbaseline_visits + self.completion_probs.len() != self.visit_times.len() {
            return Err(Error::arg("completion_probs must cover exactly the visits after min_postbaseline_visits"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg("train_fraction must lie in (0, 1)"));
        }
        for c in &self.classes {
            for e in Endpoint::BOTH {
                if !(c.curve(e).site_variance >= 0.0) {
                    return Err(Error::arg("site variances must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

fn curve(beta0: f64, beta1: f64, beta2: f64, site_variance: f64) -> ClassCurve {
    ClassCurve { beta0, beta1, beta2, site_variance }
}

/// The reference simulation scheme (six classes, 50 sites, 700 subjects).
pub fn default_sim_scheme() -> SimScheme {
    let x = [
        curve(1.74, -0.38, 0.016, 0.75),
        curve(-0.10, -0.17, 0.007, 0.75),
        curve(5.53, -1.18, 0.049, 1.25),
        curve(1.01, -0.19, 0.011, 1.25),
        curve(2.16, -0.07, 0.023, 2.0),
        curve(6.51, 0.16, -0.006, 2.0),
    ];
    let y = [
        curve(4.05, -0.81, 0.032, 0.9375),
        curve(-0.69, -0.43, 0.017, 0.9375),
        curve(10.52, -0.67, 0.000, 1.5625),
        curve(2.37, -0.26, 0.017, 1.5625),
        curve(4.02, 0.11, 0.018, 2.5),
        curve(10.73, 0.17, -0.011, 2.5),
    ];
    SimScheme {
        n_sites: 50,
        n_subjects: 700,
        class_probs: vec![0.125, 0.125, 0.25, 0.25, 0.125, 0.125],
        classes: x.iter().zip(&y).map(|(&x, &y)| SimClass { x, y }).collect(),
        common_x: CommonParams { beta0_base: -0.4, mu0_base: 10.0, tau0_base: 1.0 / 12.0, tau_w: 1.0, tau_e: 1.0 },
        common_y: CommonParams { beta0_base: -0.6, mu0_base: 16.0, tau0_base: 1.0 / 12.0, tau_w: 1.25, tau_e: 1.25 },
        treatment_shift: (0.25, -0.0025),
        visit_times: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0],
        min_postbaseline_visits: 2,
        completion_probs: vec![0.01, 0.02, 0.04, 0.08, 0.85],
        train_fraction: 0.7,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Placebo,
    Treatment,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Placebo => "placebo",
            Arm::Treatment => "treatment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    /// 1-based class index.
    pub true_class: usize,
    pub arm: Arm,
    pub final_visit: f64,
}

/// Ground truth kept apart from the dataset so fitting cannot see it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthLabels {
    pub subjects: Vec<SubjectTruth>,
    /// `site_effects[site - 1][class - 1][endpoint]`.
    pub site_effects: Vec<Vec<[f64; 2]>>,
}

impl TruthLabels {
    pub fn get(&self, subject_id: &str) -> Option<&SubjectTruth> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "subject_id,true_class,arm,final_visit")?;
        for s in &self.subjects {
            writeln!(out, "{},{},{},{}", s.subject_id, s.true_class, s.arm.as_str(), s.final_visit)?;
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng, mean: f64, var: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

fn categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulates one study under `scheme`.
pub fn simulate_study(scheme: &SimScheme, seed: u64) -> Result<(Dataset, TruthLabels)> {
    scheme.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_classes = scheme.classes.len();

    // Site assignment probabilities: flat Dirichlet, drawn once.
    let mut site_probs: Vec<f64> = (0..scheme.n_sites).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = site_probs.iter().sum();
    site_probs.iter_mut().for_each(|p| *p /= total);

    let site_effects: Vec<Vec<[f64; 2]>> = (0..scheme.n_sites)
        .map(|_| {
            scheme
                .classes
                .iter()
                .map(|c| {
                    let vx = normal(&mut rng, 0.0, c.x.site_variance);
                    let vy = normal(&mut rng, 0.0, c.y.site_variance);
                    [vx, vy]
                })
                .collect()
        })
        .collect();

    let width = scheme.n_subjects.to_string().len().max(4);
    let mut subjects = Vec::with_capacity(scheme.n_subjects);
    let mut truth = Vec::with_capacity(scheme.n_subjects);
    for i in 0..scheme.n_subjects {
        let site = categorical(&mut rng, &site_probs);
        let class = categorical(&mut rng, &scheme.class_probs);
        let arm = if rng.random_bool(0.5) { Arm::Treatment } else { Arm::Placebo };
        let final_idx = scheme.min_postbaseline_visits + categorical(&mut rng, &scheme.completion_probs);
        let times = &scheme.visit_times[..=final_idx];

        let mut baselines = [0.0; 2];
        let mut series: [Vec<Observation>; 2] = Default::default();
        for e in Endpoint::BOTH {
            let common = scheme.common(e);
            let c = scheme.classes[class].curve(e);
            let baseline = normal(&mut rng, common.mu0_base, 1.0 / common.tau0_base);
            let w = normal(&mut rng, 0.0, 1.0 / common.tau_w);
            let v = site_effects[site][class][e.index()];
            let (mut b1, mut b2) = (c.beta1, c.beta2);
            if arm == Arm::Placebo {
                b1 += scheme.treatment_shift.0;
                b2 += scheme.treatment_shift.1;
            }
            series[e.index()] = times
                .iter()
                .map(|&t| {
                    let mean = c.beta0 + common.beta0_base * baseline + b1 * t + b2 * t * t;
                    Observation::new(t, mean + v + w + normal(&mut rng, 0.0, 1.0 / common.tau_e))
                })
                .collect();
            baselines[e.index()] = baseline;
        }
        let id = format!("S{:0width$}", i + 1);
        let [series_x, series_y] = series;
        subjects.push(SubjectRecord {
            subject_id: id.clone(),
            site: site + 1,
            baseline_x: baselines[0],
            baseline_y: baselines[1],
            series_x,
            series_y,
            arm: None,
        });
        truth.push(SubjectTruth { subject_id: id, true_class: class + 1, arm, final_visit: times[times.len() - 1] });
    }
    debug_assert_eq!(site_effects.first().map_or(n_classes, Vec::len), n_classes);

    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), "simulated".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    let dataset = Dataset { subjects, n_sites: scheme.n_sites, metadata };
    Ok((dataset, TruthLabels { subjects: truth, site_effects }))
}

/// Random subject-level split into `round(n·fraction)` training subjects and the rest.
pub fn split_train_test(
    d: &Dataset,
    labels: &TruthLabels,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, TruthLabels, TruthLabels)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = d.subjects.len();
    let n_train = ((n as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }

    let part = |want: bool| {
        let subjects: Vec<SubjectRecord> =
            d.subjects.iter().zip(&is_train).filter(|(_, t)| **t == want).map(|(s, _)| s.clone()).collect();
        let truth = TruthLabels {
            subjects: subjects.iter().filter_map(|s| labels.get(&s.subject_id).cloned()).collect(),
            site_effects: labels.site_effects.clone(),
        };
        let mut ds = Dataset { subjects, n_sites: d.n_sites, metadata: d.metadata.clone() };
        ds.canonicalize();
        (ds, truth)
    };
    let (train, train_truth) = part(true);
    let (test, test_truth) = part(false);
    Ok((train, test, train_truth, test_truth))
}
