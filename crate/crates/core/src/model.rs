//! Model dimensions and prior hyperparameters.

use serde::{Deserialize, Serialize};

use crate::data::Endpoint;
use crate::error::{Error, Result};

/// Gamma shape/rate pairs (shape = rate) and the baseline-coefficient prior
/// mean for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointPriors {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_sc: f64,
    pub gamma_w: f64,
    pub gamma_e: f64,
    pub mu0_base: f64,
    pub gamma0_base: f64,
}

impl Default for EndpointPriors {
    fn default() -> Self {
        Self {
            gamma0: 0.01,
            gamma1: 0.01,
            gamma2: 0.01,
            gamma_sc: 0.01,
            gamma_w: 0.01,
            gamma_e: 0.01,
            mu0_base: 0.0,
            gamma0_base: 0.01,
        }
    }
}

impl EndpointPriors {
    fn gammas(&self) -> [(&'static str, f64); 7] {
        [
            ("gamma0", self.gamma0),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma_sc", self.gamma_sc),
            ("gamma_w", self.gamma_w),
            ("gamma_e", self.gamma_e),
            ("gamma0_base", self.gamma0_base),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Maximum number of latent classes.
    pub classes: usize,
    pub x: EndpointPriors,
    pub y: EndpointPriors,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// When false, site and subject effects are held at zero.
    pub random_effects: bool,
    /// Holds the coefficient prior precisions (τ0, τ1, τ2, τ0,base) fixed at
    /// this value instead of sampling them.
    pub fixed_coef_precision: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: 30,
            x: EndpointPriors::default(),
            y: EndpointPriors::default(),
            alpha_lo: 1.0,
            alpha_hi: 3.0,
            random_effects: true,
            fixed_coef_precision: None,
        }
    }
}

impl ModelConfig {
    pub fn with_classes(classes: usize) -> Self {
        Self { classes, ..Self::default() }
    }

    pub fn priors(&self, e: Endpoint) -> &EndpointPriors {
        match e {
            Endpoint::X => &self.x,
            Endpoint::Y => &self.y,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 {
            return Err(Error::arg("classes must be at least 1"));
        }
        for e in Endpoint::BOTH {
            let p = self.priors(e);
            for (name, v) in p.gammas() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::arg(format!("{name} for endpoint {e} must be positive")));
                }
            }
            if !p.mu0_base.is_finite() {
                return Err(Error::arg(format!("mu0_base for endpoint {e} must be finite")));
            }
        }
        if !(self.alpha_lo >= 1.0) {
            return Err(Error::arg("alpha_lo must be at least 1"));
        }
        if !(self.alpha_lo < self.alpha_hi) || !self.alpha_hi.is_finite() {
            return Err(Error::arg("alpha_lo must be below a finite alpha_hi"));
        }
        if let Some(p) = self.fixed_coef_precision {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::arg("fixed_coef_precision must be positive"));
            }
        }
        Ok(())
    }
}
