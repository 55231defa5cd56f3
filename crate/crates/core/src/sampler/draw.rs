//! Posterior draws and their newline-delimited JSON store.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Endpoint;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::McmcConfig;

/// Trajectory coefficients and site-effect precision of one class on one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassEndpoint {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub x: ClassEndpoint,
    pub y: ClassEndpoint,
}

impl ClassParams {
    pub fn endpoint(&self, e: Endpoint) -> &ClassEndpoint {
        match e {
            Endpoint::X => &self.x,
            Endpoint::Y => &self.y,
        }
    }

    pub fn endpoint_mut(&mut self, e: Endpoint) -> &mut ClassEndpoint {
        match e {
            Endpoint::X => &mut self.x,
            Endpoint::Y => &mut self.y,
        }
    }
}

/// Parameters shared across classes for one endpoint, with the coefficient
/// hyper-precisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommonParams {
    pub beta0_base: f64,
    pub tau_w: f64,
    pub tau_e: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau0_base: f64,
}

/// One posterior sample of every model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDraw {
    pub classes: Vec<ClassParams>,
    pub common_x: CommonParams,
    pub common_y: CommonParams,
    /// Mixture weights.
    pub pi: Vec<f64>,
    /// `site_profile[c][s]`: probability of site `s + 1` within class `c + 1`.
    pub site_profile: Vec<Vec<f64>>,
    /// 1-based class label per training subject.
    pub z: Vec<usize>,
    /// `site_effects[s][c]` holds `[v_x, v_y]`.
    pub site_effects: Vec<Vec<[f64; 2]>>,
    /// `subject_effects[i]` holds `[w_x, w_y]`.
    pub subject_effects: Vec<[f64; 2]>,
    pub alpha: f64,
}

impl ParameterDraw {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn common(&self, e: Endpoint) -> &CommonParams {
        match e {
            Endpoint::X => &self.common_x,
            Endpoint::Y => &self.common_y,
        }
    }

    /// Checks the simplex, positivity and label invariants.
    pub fn check(&self, alpha_lo: f64, alpha_hi: f64) -> Result<()> {
        let c = self.classes.len();
        let bad = |msg: String| Err(Error::Numeric(format!("invalid draw: {msg}")));
        if self.pi.len() != c || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return bad("pi is not a simplex".into());
        }
        if self.pi.iter().any(|p| !(*p >= 0.0)) {
            return bad("negative or NaN mixture weight".into());
        }
        if self.site_profile.len() != c {
            return bad("site profile has wrong class count".into());
        }
        for (k, col) in self.site_profile.iter().enumerate() {
            if (col.iter().sum::<f64>() - 1.0).abs() > 1e-10 || col.iter().any(|p| !(*p >= 0.0)) {
                return bad(format!("site profile of class {} is not a simplex", k + 1));
            }
        }
        for (k, cl) in self.classes.iter().enumerate() {
            for e in Endpoint::BOTH {
                let p = cl.endpoint(e);
                if !(p.tau_s > 0.0 && p.tau_s.is_finite()) {
                    return bad(format!("tau_s of class {} endpoint {e}", k + 1));
                }
                if ![p.beta0, p.beta1, p.beta2].iter().all(|b| b.is_finite()) {
                    return bad(format!("non-finite coefficient in class {}", k + 1));
                }
            }
        }
        for e in Endpoint::BOTH {
            let m = self.common(e);
            for v in [m.tau_w, m.tau_e, m.tau0, m.tau1, m.tau2, m.tau0_base] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("non-positive precision on endpoint {e}"));
                }
            }
            if !m.beta0_base.is_finite() {
                return bad(format!("non-finite baseline coefficient on endpoint {e}"));
            }
        }
        if self.z.iter().any(|&z| z < 1 || z > c) {
            return bad("class label out of range".into());
        }
        if !(self.alpha >= alpha_lo && self.alpha <= alpha_hi) {
            return bad(format!("alpha {} outside [{alpha_lo}, {alpha_hi}]", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub dataset_digest: String,
    /// Training subject ids, in the order of `ParameterDraw::z`.
    pub subject_ids: Vec<String>,
    pub n_sites: usize,
    pub alpha_acceptance: f64,
}

/// Retained posterior draws plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub config: ModelConfig,
    pub mcmc: McmcConfig,
    pub provenance: Provenance,
    pub draws: Vec<ParameterDraw>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    mcmc: McmcConfig,
    provenance: Provenance,
    n_draws: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header(Box<Header>),
    Draw(Box<ParameterDraw>),
}

impl DrawStore {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn n_classes(&self) -> usize {
        self.config.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::data("draw store holds no draws"));
        }
        for (q, d) in self.draws.iter().enumerate() {
            if d.n_classes() != self.config.classes {
                return Err(Error::data(format!("draw {q} has {} classes", d.n_classes())));
            }
            d.check(self.config.alpha_lo, self.config.alpha_hi).map_err(|e| Error::data(format!("draw {q}: {e}")))?;
        }
        Ok(())
    }

    /// This store's draws followed by `other`'s.
    pub fn concat(&self, other: &DrawStore) -> DrawStore {
        let mut out = self.clone();
        out.draws.extend(other.draws.iter().cloned());
        out
    }

    /// Writes the header record and one line per draw.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Record::Header(Box::new(Header {
            config: self.config.clone(),
            mcmc: self.mcmc.clone(),
            provenance: self.provenance.clone(),
            n_draws: self.draws.len(),
        }));
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for d in &self.draws {
            serde_json::to_writer(&mut out, &Record::Draw(Box::new(d.clone())))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<DrawStore> {
        let mut header: Option<Header> = None;
        let mut draws = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::data(format!("draw store line {}: {e}", i + 1)))?;
            match rec {
                Record::Header(h) if header.is_none() && draws.is_empty() => header = Some(*h),
                Record::Header(_) => return Err(Error::data(format!("draw store line {}: unexpected header", i + 1))),
                Record::Draw(_) if header.is_none() => {
                    return Err(Error::data("draw store must begin with a header record"))
                }
                Record::Draw(d) => draws.push(*d),
            }
        }
        let h = header.ok_or_else(|| Error::data("draw store is empty"))?;
        if h.n_draws != draws.len() {
            return Err(Error::data(format!(
                "draw store truncated: header announces {} draws, found {}",
                h.n_draws,
                draws.len()
            )));
        }
        let store = DrawStore { config: h.config, mcmc: h.mcmc, provenance: h.provenance, draws };
        store.validate()?;
        Ok(store)
    }

    pub fn read_file(path: &Path) -> Result<DrawStore> {
        let f = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
        Self::read_ndjson(std::io::BufReader::new(f))
    }
}
