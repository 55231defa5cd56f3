//! Metropolis-within-Gibbs sweep over the latent-class joint model.
//!
//! Each sweep updates, in order: class labels, mixture weights, site
//! profiles, trajectory coefficients, site and subject effects, precisions,
//! the concentration α, and the coefficient hyper-precisions.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::{Dataset, Endpoint};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::draw::{ClassEndpoint, ClassParams, CommonParams, ParameterDraw};

/// Sampled precisions are kept inside this range; the diffuse gamma priors
/// otherwise let unoccupied classes drift to values that overflow.
pub(crate) const PRECISION_MIN: f64 = 1e-10;
pub(crate) const PRECISION_MAX: f64 = 1e10;

/// Precision used for site and subject effects when they are switched off.
pub(crate) const EFFECTS_OFF_PRECISION: f64 = 1e10;

const WARM_START_SWEEPS: usize = 10;

/// One subject's observations on one endpoint, with time moments `Σ t^k`, k = 0..4.
#[derive(Debug, Clone, Default)]
pub(crate) struct Series {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub moments: [f64; 5],
}

impl Series {
    fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        let mut moments = [0.0; 5];
        for &t in &times {
            let mut p = 1.0;
            for m in moments.iter_mut() {
                *m += p;
                p *= t;
            }
        }
        Self { times, values, moments }
    }

    fn n(&self) -> usize {
        self.times.len()
    }

    fn gram(&self) -> Matrix3<f64> {
        let s = &self.moments;
        Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SubjectData {
    pub site: usize,
    pub baseline: [f64; 2],
    pub series: [Series; 2],
}

/// Current values of every parameter. Labels and sites are 0-based here.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub classes: Vec<ClassParams>,
    pub common: [CommonParams; 2],
    pub log_pi: Vec<f64>,
    pub site_profile: Vec<Vec<f64>>,
    pub z: Vec<usize>,
    pub v: Vec<Vec<[f64; 2]>>,
    pub w: Vec<[f64; 2]>,
    pub alpha: f64,
}

pub(crate) struct Gibbs<'c> {
    pub cfg: &'c ModelConfig,
    pub subjects: Vec<SubjectData>,
    pub n_sites: usize,
    pub state: State,
    pub rng: ChaCha20Rng,
    pub alpha_step: f64,
    pub alpha_proposed: u64,
    pub alpha_accepted: u64,
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gamma_precision(rng: &mut impl Rng, shape: f64, rate: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numeric(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng).clamp(PRECISION_MIN, PRECISION_MAX))
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for shapes far below 1.
pub(crate) fn log_gamma_variate(rng: &mut impl Rng, shape: f64) -> Result<f64> {
    let bump = shape < 1.0;
    let g = Gamma::new(if bump { shape + 1.0 } else { shape }, 1.0)
        .map_err(|e| Error::Numeric(format!("gamma shape {shape}: {e}")))?;
    let mut lg = g.sample(rng).ln();
    if bump {
        let u: f64 = 1.0 - rng.random::<f64>();
        lg += u.ln() / shape;
    }
    Ok(lg)
}

/// Log of a Dirichlet draw, computed without underflow.
pub(crate) fn log_dirichlet(rng: &mut impl Rng, shapes: &[f64]) -> Result<Vec<f64>> {
    let mut lg = shapes.iter().map(|&a| log_gamma_variate(rng, a)).collect::<Result<Vec<_>>>()?;
    let lse = crate::likelihood::log_sum_exp(&lg);
    lg.iter_mut().for_each(|v| *v -= lse);
    Ok(lg)
}

/// Normalized probabilities from log weights, summing to one within rounding.
pub(crate) fn simplex_from_log(log_p: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Log density of `Dirichlet(α/C, …, α/C)` at `π`, up to terms free of α.
pub(crate) fn alpha_log_target(alpha: f64, log_pi: &[f64]) -> f64 {
    let c = log_pi.len() as f64;
    let a = alpha / c;
    libm::lgamma(alpha) - c * libm::lgamma(a) + (a - 1.0) * log_pi.iter().sum::<f64>()
}

fn categorical_from_log(rng: &mut impl Rng, logw: &mut [f64]) -> Option<usize> {
    let lse = crate::likelihood::normalize_log_weights(logw);
    if !lse.is_finite() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in logw.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(k);
        }
    }
    logw.iter().rposition(|p| *p > 0.0)
}

pub(crate) fn prepare(d: &Dataset) -> Vec<SubjectData> {
    d.subjects
        .iter()
        .map(|s| {
            let series = Endpoint::BOTH.map(|e| {
                let obs = s.series(e);
                Series::new(obs.iter().map(|o| o.time).collect(), obs.iter().map(|o| o.value).collect())
            });
            SubjectData { site: s.site - 1, baseline: [s.baseline_x, s.baseline_y], series }
        })
        .collect()
}

impl<'c> Gibbs<'c> {
    pub fn new(
        cfg: &'c ModelConfig,
        subjects: Vec<SubjectData>,
        n_sites: usize,
        z: Vec<usize>,
        rng: ChaCha20Rng,
        alpha_step: f64,
    ) -> Self {
        let c = cfg.classes;
        let effects_precision = if cfg.random_effects { 1.0 } else { EFFECTS_OFF_PRECISION };
        let hyper = cfg.fixed_coef_precision.unwrap_or(1.0);
        let class_ep = ClassEndpoint { beta0: 0.0, beta1: 0.0, beta2: 0.0, tau_s: effects_precision };
        let common = CommonParams {
            beta0_base: 0.0,
            tau_w: effects_precision,
            tau_e: 1.0,
            tau0: hyper,
            tau1: hyper,
            tau2: hyper,
            tau0_base: hyper,
        };
        let n = subjects.len();
        let state = State {
            classes: vec![ClassParams { x: class_ep, y: class_ep }; c],
            common: [common; 2],
            log_pi: vec![-(c as f64).ln(); c],
            site_profile: vec![vec![1.0 / n_sites as f64; n_sites]; c],
            z,
            v: vec![vec![[0.0; 2]; c]; n_sites],
            w: vec![[0.0; 2]; n],
            alpha: 0.5 * (cfg.alpha_lo + cfg.alpha_hi),
        };
        Self { cfg, subjects, n_sites, state, rng, alpha_step, alpha_proposed: 0, alpha_accepted: 0 }
    }

    /// Coefficient, effect and precision updates with labels held fixed, so
    /// the first label update sees parameters fitted to the initial partition.
    pub fn warm_start(&mut self) -> Result<()> {
        for _ in 0..WARM_START_SWEEPS {
            self.update_betas()?;
            self.update_effects();
            self.update_precisions()?;
            self.update_hyper_precisions()?;
        }
        Ok(())
    }

    pub fn sweep(&mut self, iteration: usize) -> Result<()> {
        self.update_labels(iteration)?;
        self.update_pi()?;
        self.update_site_profiles()?;
        self.update_betas()?;
        self.update_effects();
        self.update_precisions()?;
        self.update_alpha();
        self.update_hyper_precisions()?;
        Ok(())
    }

    fn class_mean(&self, c: usize, e: Endpoint, baseline: f64, t: f64) -> f64 {
        let p = self.state.classes[c].endpoint(e);
        p.beta0 + self.state.common[e.index()].beta0_base * baseline + p.beta1 * t + p.beta2 * t * t
    }

    /// Label update. With random effects on, each subject's effect `w_i` is
    /// integrated out of the label's conditional and then redrawn given the
    /// new label, a blocked draw of `(z_i, w_i)`.
    pub fn update_labels(&mut self, iteration: usize) -> Result<()> {
        let c_max = self.cfg.classes;
        let mut logw = vec![0.0; c_max];
        let log_profile: Vec<Vec<f64>> =
            self.state.site_profile.iter().map(|col| col.iter().map(|p| p.ln()).collect()).collect();
        for i in 0..self.subjects.len() {
            let subj = &self.subjects[i];
            let s = subj.site;
            // Per endpoint: Σr, Σrt, Σrt², Σr² with r = y - β_base·B (- w when effects are off).
            let mut stats = [[0.0; 4]; 2];
            for e in Endpoint::BOTH {
                let k = e.index();
                let base = self.state.common[k].beta0_base * subj.baseline[k];
                let ser = &subj.series[k];
                for (t, y) in ser.times.iter().zip(&ser.values) {
                    let r = y - base;
                    stats[k][0] += r;
                    stats[k][1] += r * t;
                    stats[k][2] += r * t * t;
                    stats[k][3] += r * r;
                }
            }
            for (c, lw) in logw.iter_mut().enumerate() {
                let mut l = self.state.log_pi[c] + log_profile[c][s];
                for e in Endpoint::BOTH {
                    let k = e.index();
                    let ser = &subj.series[k];
                    if ser.n() == 0 {
                        continue;
                    }
                    let p = self.state.classes[c].endpoint(e);
                    let m = &ser.moments;
                    let a = p.beta0 + self.state.v[s][c][k];
                    let (b1, b2) = (p.beta1, p.beta2);
                    let st = &stats[k];
                    let sum_d = st[0] - (a * m[0] + b1 * m[1] + b2 * m[2]);
                    let quad_b = a * a * m[0]
                        + b1 * b1 * m[2]
                        + b2 * b2 * m[4]
                        + 2.0 * (a * b1 * m[1] + a * b2 * m[2] + b1 * b2 * m[3]);
                    let ss_d = st[3] - 2.0 * (a * st[0] + b1 * st[1] + b2 * st[2]) + quad_b;
                    let tau_e = self.state.common[k].tau_e;
                    let q = if self.cfg.random_effects {
                        let tau_w = self.state.common[k].tau_w;
                        ss_d - tau_e / (tau_w + m[0] * tau_e) * sum_d * sum_d
                    } else {
                        ss_d
                    };
                    l -= 0.5 * tau_e * q;
                }
                *lw = l;
            }
            let Some(c_new) = categorical_from_log(&mut self.rng, &mut logw) else {
                return Err(Error::Numeric(format!(
                    "non-finite label conditional for subject {} at iteration {iteration}",
                    i + 1
                )));
            };
            self.state.z[i] = c_new;
            if self.cfg.random_effects {
                for e in Endpoint::BOTH {
                    self.draw_subject_effect(i, e);
                }
            }
        }
        Ok(())
    }

    fn draw_subject_effect(&mut self, i: usize, e: Endpoint) {
        let k = e.index();
        let subj = &self.subjects[i];
        let c = self.state.z[i];
        let v = self.state.v[subj.site][c][k];
        let ser = &subj.series[k];
        let sum_d: f64 =
            ser.times.iter().zip(&ser.values).map(|(t, y)| y - self.class_mean(c, e, subj.baseline[k], *t) - v).sum();
        let common = &self.state.common[k];
        let prec = common.tau_w + ser.n() as f64 * common.tau_e;
        let mean = common.tau_e * sum_d / prec;
        self.state.w[i][k] = mean + std_normal(&mut self.rng) / prec.sqrt();
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cfg.classes];
        for &z in &self.state.z {
            counts[z] += 1;
        }
        counts
    }

    pub fn update_pi(&mut self) -> Result<()> {
        let c = self.cfg.classes as f64;
        let shapes: Vec<f64> = self.class_counts().iter().map(|&n| self.state.alpha / c + n as f64).collect();
        self.state.log_pi = log_dirichlet(&mut self.rng, &shapes)?;
        Ok(())
    }

    pub fn update_site_profiles(&mut self) -> Result<()> {
        let mut counts = vec![vec![0usize; self.n_sites]; self.cfg.classes];
        for (subj, &z) in self.subjects.iter().zip(&self.state.z) {
            counts[z][subj.site] += 1;
        }
        for (c, row) in counts.iter().enumerate() {
            let shapes: Vec<f64> = row.iter().map(|&m| 1.0 + m as f64).collect();
            let lp = log_dirichlet(&mut self.rng, &shapes)?;
            self.state.site_profile[c] = simplex_from_log(&lp);
        }
        Ok(())
    }

    /// Joint draw of every occupied class's (β0, β1, β2) with β_base, per endpoint.
    pub fn update_betas(&mut self) -> Result<()> {
        let counts = self.class_counts();
        let occupied: Vec<usize> = (0..self.cfg.classes).filter(|&c| counts[c] > 0).collect();
        let mut pos = vec![usize::MAX; self.cfg.classes];
        for (k, &c) in occupied.iter().enumerate() {
            pos[c] = k;
        }
        for e in Endpoint::BOTH {
            let ei = e.index();
            let common = self.state.common[ei];
            let dim = 3 * occupied.len() + 1;
            let last = dim - 1;
            let mut xtx = DMatrix::<f64>::zeros(dim, dim);
            let mut xtr = DVector::<f64>::zeros(dim);
            for (i, subj) in self.subjects.iter().enumerate() {
                let ser = &subj.series[ei];
                if ser.n() == 0 {
                    continue;
                }
                let c = self.state.z[i];
                let off = 3 * pos[c];
                let b = subj.baseline[ei];
                let shift = self.state.v[subj.site][c][ei] + self.state.w[i][ei];
                let g = ser.gram();
                for r in 0..3 {
                    for s in 0..3 {
                        xtx[(off + r, off + s)] += g[(r, s)];
                    }
                    xtx[(off + r, last)] += b * ser.moments[r];
                    xtx[(last, off + r)] += b * ser.moments[r];
                }
                xtx[(last, last)] += ser.n() as f64 * b * b;
                for (t, y) in ser.times.iter().zip(&ser.values) {
                    let r = y - shift;
                    xtr[off] += r;
                    xtr[off + 1] += r * t;
                    xtr[off + 2] += r * t * t;
                    xtr[last] += b * r;
                }
            }
            let mut prec = xtx * common.tau_e;
            let mut h = xtr * common.tau_e;
            for k in 0..occupied.len() {
                prec[(3 * k, 3 * k)] += common.tau0;
                prec[(3 * k + 1, 3 * k + 1)] += common.tau1;
                prec[(3 * k + 2, 3 * k + 2)] += common.tau2;
            }
            let mu0 = self.cfg.priors(e).mu0_base;
            prec[(last, last)] += common.tau0_base;
            h[last] += common.tau0_base * mu0;

            let chol = Cholesky::new(prec)
                .ok_or_else(|| Error::Numeric(format!("coefficient precision not positive definite ({e})")))?;
            let mean = chol.solve(&h);
            let noise = DVector::from_fn(dim, |_, _| std_normal(&mut self.rng));
            let lt = chol.l().transpose();
            let dev =
                lt.solve_upper_triangular(&noise).ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
            let draw = mean + dev;

            for c in 0..self.cfg.classes {
                let p = self.state.classes[c].endpoint_mut(e);
                if pos[c] == usize::MAX {
                    p.beta0 = std_normal(&mut self.rng) / common.tau0.sqrt();
                    p.beta1 = std_normal(&mut self.rng) / common.tau1.sqrt();
                    p.beta2 = std_normal(&mut self.rng) / common.tau2.sqrt();
                } else {
                    let off = 3 * pos[c];
                    p.beta0 = draw[off];
                    p.beta1 = draw[off + 1];
                    p.beta2 = draw[off + 2];
                }
            }
            self.state.common[ei].beta0_base = draw[last];
        }
        Ok(())
    }

    /// Site effects per (site, class, endpoint), then subject effects.
    pub fn update_effects(&mut self) {
        if !self.cfg.random_effects {
            return;
        }
        let c_max = self.cfg.classes;
        for e in Endpoint::BOTH {
            let k = e.index();
            let mut sum = vec![vec![0.0; c_max]; self.n_sites];
            let mut cnt = vec![vec![0.0; c_max]; self.n_sites];
            for (i, subj) in self.subjects.iter().enumerate() {
                let c = self.state.z[i];
                let ser = &subj.series[k];
                for (t, y) in ser.times.iter().zip(&ser.values) {
                    sum[subj.site][c] += y - self.class_mean(c, e, subj.baseline[k], *t) - self.state.w[i][k];
                }
                cnt[subj.site][c] += ser.n() as f64;
            }
            let tau_e = self.state.common[k].tau_e;
            for s in 0..self.n_sites {
                for c in 0..c_max {
                    let prec = self.state.classes[c].endpoint(e).tau_s + tau_e * cnt[s][c];
                    let mean = tau_e * sum[s][c] / prec;
                    self.state.v[s][c][k] = mean + std_normal(&mut self.rng) / prec.sqrt();
                }
            }
        }
        for i in 0..self.subjects.len() {
            for e in Endpoint::BOTH {
                self.draw_subject_effect(i, e);
            }
        }
    }

    /// Residual, subject-effect and site-effect precisions.
    pub fn update_precisions(&mut self) -> Result<()> {
        for e in Endpoint::BOTH {
            let k = e.index();
            let pri = *self.cfg.priors(e);
            let mut rss = 0.0;
            let mut n_obs = 0.0;
            for (i, subj) in self.subjects.iter().enumerate() {
                let c = self.state.z[i];
                let shift = self.state.v[subj.site][c][k] + self.state.w[i][k];
                let ser = &subj.series[k];
                for (t, y) in ser.times.iter().zip(&ser.values) {
                    let r = y - self.class_mean(c, e, subj.baseline[k], *t) - shift;
                    rss += r * r;
                }
                n_obs += ser.n() as f64;
            }
            let tau_e = gamma_precision(&mut self.rng, pri.gamma_e + 0.5 * n_obs, pri.gamma_e + 0.5 * rss)?;
            self.state.common[k].tau_e = tau_e;

            if !self.cfg.random_effects {
                continue;
            }
            let n = self.subjects.len() as f64;
            let ssw: f64 = self.state.w.iter().map(|w| w[k] * w[k]).sum();
            self.state.common[k].tau_w =
                gamma_precision(&mut self.rng, pri.gamma_w + 0.5 * n, pri.gamma_w + 0.5 * ssw)?;
            let m = self.n_sites as f64;
            for c in 0..self.cfg.classes {
                let ssv: f64 = self.state.v.iter().map(|row| row[c][k] * row[c][k]).sum();
                let tau_s = gamma_precision(&mut self.rng, pri.gamma_sc + 0.5 * m, pri.gamma_sc + 0.5 * ssv)?;
                self.state.classes[c].endpoint_mut(e).tau_s = tau_s;
            }
        }
        Ok(())
    }

    /// Random-walk Metropolis on α with reflection at the prior bounds.
    pub fn update_alpha(&mut self) {
        let (lo, hi) = (self.cfg.alpha_lo, self.cfg.alpha_hi);
        let mut prop = self.state.alpha + self.alpha_step * std_normal(&mut self.rng);
        while prop < lo || prop > hi {
            prop = if prop < lo { 2.0 * lo - prop } else { 2.0 * hi - prop };
        }
        let log_ratio =
            alpha_log_target(prop, &self.state.log_pi) - alpha_log_target(self.state.alpha, &self.state.log_pi);
        let u: f64 = self.rng.random();
        self.alpha_proposed += 1;
        if u.ln() < log_ratio {
            self.state.alpha = prop;
            self.alpha_accepted += 1;
        }
    }

    pub fn update_hyper_precisions(&mut self) -> Result<()> {
        if self.cfg.fixed_coef_precision.is_some() {
            return Ok(());
        }
        let half_c = 0.5 * self.cfg.classes as f64;
        for e in Endpoint::BOTH {
            let k = e.index();
            let pri = *self.cfg.priors(e);
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for cl in &self.state.classes {
                let p = cl.endpoint(e);
                s0 += p.beta0 * p.beta0;
                s1 += p.beta1 * p.beta1;
                s2 += p.beta2 * p.beta2;
            }
            let tau0 = gamma_precision(&mut self.rng, pri.gamma0 + half_c, pri.gamma0 + 0.5 * s0)?;
            let tau1 = gamma_precision(&mut self.rng, pri.gamma1 + half_c, pri.gamma1 + 0.5 * s1)?;
            let tau2 = gamma_precision(&mut self.rng, pri.gamma2 + half_c, pri.gamma2 + 0.5 * s2)?;
            let d = self.state.common[k].beta0_base - pri.mu0_base;
            let tau0_base = gamma_precision(&mut self.rng, pri.gamma0_base + 0.5, pri.gamma0_base + 0.5 * d * d)?;
            let common = &mut self.state.common[k];
            common.tau0 = tau0;
            common.tau1 = tau1;
            common.tau2 = tau2;
            common.tau0_base = tau0_base;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ParameterDraw {
        let s = &self.state;
        ParameterDraw {
            classes: s.classes.clone(),
            common_x: s.common[0],
            common_y: s.common[1],
            pi: simplex_from_log(&s.log_pi),
            site_profile: s.site_profile.clone(),
            z: s.z.iter().map(|z| z + 1).collect(),
            site_effects: s.v.clone(),
            subject_effects: s.w.clone(),
            alpha: s.alpha,
        }
    }

    pub fn check_finite(&self, iteration: usize) -> Result<()> {
        let s = &self.state;
        let finite = s.classes.iter().all(|c| {
            Endpoint::BOTH.iter().all(|&e| {
                let p = c.endpoint(e);
                p.beta0.is_finite() && p.beta1.is_finite() && p.beta2.is_finite()
            })
        }) && s.common.iter().all(|c| c.beta0_base.is_finite())
            && s.w.iter().all(|w| w[0].is_finite() && w[1].is_finite())
            && s.v.iter().flatten().all(|v| v[0].is_finite() && v[1].is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite parameter at iteration {iteration}")))
        }
    }
}

/// Least-squares quadratic coefficients per endpoint, as k-means features.
fn trajectory_features(subj: &SubjectData) -> [f64; 6] {
    let mut f = [0.0; 6];
    for k in 0..2 {
        let ser = &subj.series[k];
        if ser.n() == 0 {
            continue;
        }
        let mut g = ser.gram();
        // Light ridge keeps subjects with fewer than three visits solvable.
        g[(1, 1)] += 1e-3;
        g[(2, 2)] += 1e-3;
        let mut rhs = Vector3::zeros();
        for (t, y) in ser.times.iter().zip(&ser.values) {
            rhs += Vector3::new(1.0, *t, t * t) * *y;
        }
        if let Some(sol) = g.cholesky().map(|c| c.solve(&rhs)) {
            f[3 * k..3 * k + 3].copy_from_slice(sol.as_slice());
        }
    }
    f
}

/// k-means on standardized trajectory features, seeded k-means++ style.
pub(crate) fn kmeans_labels(subjects: &[SubjectData], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = subjects.len();
    let k = k.min(n).max(1);
    let mut feats: Vec<[f64; 6]> = subjects.iter().map(trajectory_features).collect();
    for j in 0..6 {
        let mean = feats.iter().map(|f| f[j]).sum::<f64>() / n as f64;
        let var = feats.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        feats.iter_mut().for_each(|f| f[j] = (f[j] - mean) / sd);
    }
    let dist2 = |a: &[f64; 6], b: &[f64; 6]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();

    let mut centers = vec![feats[rng.random_range(0..n)]];
    while centers.len() < k {
        let d: Vec<f64> =
            feats.iter().map(|f| centers.iter().map(|c| dist2(f, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, di) in d.iter().enumerate() {
            if u < *di {
                pick = i;
                break;
            }
            u -= di;
        }
        centers.push(feats[pick]);
    }

    let mut labels = vec![0; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| dist2(f, &centers[a]).total_cmp(&dist2(f, &centers[b])))
                .unwrap_or(0);
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0; 6]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (f, &l) in feats.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..6 {
                sums[l][j] += f[j];
            }
        }
        for (c, (s, &m)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if m > 0 {
                for j in 0..6 {
                    c[j] = s[j] / m as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    labels
}
