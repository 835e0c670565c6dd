use crate::error::{KmsError, Result};
use serde::{Deserialize, Serialize};

/// Physical parameters. Propagators use `mu_rr` (= -epsilon) as their
/// chemical potential; `mu` is the bare value feeding the Wick constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub mass: f64,
    pub beta: f64,
    pub mu: f64,
    pub mu_rr: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub phi0: f64,
    #[serde(default = "one")]
    pub coupling: f64,
    /// μ̃; when given, the condensate relation φ₀² = μ̃/‖v‖₁ is enforced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_tilde: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(mass: f64, beta: f64, mu: f64, epsilon: f64, phi0: f64, coupling: f64) -> Result<Self> {
        let p = ModelParams { mass, beta, mu, mu_rr: -epsilon, epsilon, phi0, coupling, mu_tilde: None };
        p.validate()?;
        Ok(p)
    }

    /// Free-theory defaults: μ = μ̃̃ = -ε, no condensate, unit coupling.
    pub fn simple(beta: f64, epsilon: f64) -> Self {
        Self::new(1.0, beta, -epsilon, epsilon, 0.0, 1.0).expect("valid simple parameters")
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.beta, self.mu, self.mu_rr, self.epsilon, self.phi0, self.coupling];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(KmsError::Invariant("all reals finite".into()));
        }
        if !(self.mass > 0.0) {
            return Err(KmsError::Invariant("mass > 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(KmsError::Invariant("beta > 0".into()));
        }
        if self.mu > 0.0 {
            return Err(KmsError::Invariant("mu ≤ 0".into()));
        }
        if !(self.epsilon > 0.0) || (self.mu_rr + self.epsilon).abs() > 1e-12 * self.epsilon.max(1.0) {
            return Err(KmsError::Invariant("mu_rr = -epsilon < 0".into()));
        }
        if self.phi0 < 0.0 {
            return Err(KmsError::Invariant("phi0 ≥ 0".into()));
        }
        if self.coupling < 0.0 {
            return Err(KmsError::Invariant("coupling ≥ 0".into()));
        }
        Ok(())
    }

    /// Chemical potential entering K = p²/2m - μ_eff.
    pub fn mu_eff(&self) -> f64 {
        self.mu_rr
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        ModelParams { beta, ..self.clone() }
    }
}
