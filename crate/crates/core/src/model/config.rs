//! TOML configuration: sections [model], [grid], [potential], [cutoff].

use super::{Cutoff, GridSpec, ModelParams, Potential};
use crate::error::{KmsError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PerAxis<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Clone> PerAxis<T> {
    fn expand(&self, dim: usize) -> Vec<T> {
        match self {
            PerAxis::One(v) => vec![v.clone(); dim],
            PerAxis::Each(v) => v.clone(),
        }
    }
    fn len(&self) -> Option<usize> {
        match self {
            PerAxis::One(_) => None,
            PerAxis::Each(v) => Some(v.len()),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub dim: Option<usize>,
    pub box_length: PerAxis<f64>,
    pub n_sites: PerAxis<usize>,
    pub n_time: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GSpec {
    Values(Vec<f64>),
    Named(String),
    Shape(GShape),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum GShape {
    Plateau { radius: f64, #[serde(default)] ramp: f64 },
    Site { index: usize },
    Ones,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSection {
    pub g: GSpec,
    #[serde(default)]
    pub chi: Option<Vec<f64>>,
    #[serde(default)]
    pub chi1: Option<Vec<f64>>,
    #[serde(default)]
    pub chi2: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelParams,
    pub grid: GridSection,
    pub potential: Potential,
    pub cutoff: CutoffSection,
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub grid: GridSpec,
    pub potential: Potential,
    pub cutoff: Cutoff,
    /// SHA-256 of the source text (hex); empty when built in code.
    pub config_hash: String,
}

impl Model {
    pub fn new(params: ModelParams, grid: GridSpec, potential: Potential, cutoff: Cutoff) -> Result<Self> {
        params.validate()?;
        if (grid.beta() - params.beta).abs() > 1e-14 * params.beta {
            return Err(KmsError::Invariant("grid beta matches model beta".into()));
        }
        potential.validate(&grid)?;
        if cutoff.g.len() != grid.total_sites() {
            return Err(KmsError::Shape("cutoff length differs from grid sites".into()));
        }
        if let Some(mt) = params.mu_tilde {
            let n = super::norms(&params, &grid, &potential, &cutoff)?;
            if n.v_l1 <= 0.0 {
                return Err(KmsError::Invariant("phi0² = mu_tilde/‖v‖₁ needs ‖v‖₁ > 0".into()));
            }
            let want = mt / n.v_l1;
            if (params.phi0 * params.phi0 - want).abs() > 1e-9 * want.abs().max(1e-300) {
                return Err(KmsError::Invariant(format!(
                    "phi0² = mu_tilde/‖v‖₁ (phi0² = {}, mu_tilde/‖v‖₁ = {})",
                    params.phi0 * params.phi0,
                    want
                )));
            }
        }
        Ok(Model { params, grid, potential, cutoff, config_hash: String::new() })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| KmsError::Parse(e.to_string()))?;
        let mut m = file.build()?;
        m.config_hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Same model with a different inverse temperature (grid rebuilt).
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let grid = GridSpec::new(self.grid.box_length.clone(), self.grid.n_sites.clone(), self.grid.n_time, beta)?;
        let mut m = Model::new(self.params.with_beta(beta), grid, self.potential.clone(), self.cutoff.clone())?;
        m.config_hash = self.config_hash.clone();
        Ok(m)
    }
}

impl ConfigFile {
    pub fn build(&self) -> Result<Model> {
        self.model.validate()?;
        let g = &self.grid;
        let dim = g.dim.or(g.box_length.len()).or(g.n_sites.len()).unwrap_or(3);
        let grid = GridSpec::new(g.box_length.expand(dim), g.n_sites.expand(dim), g.n_time, self.model.beta)?;
        let n = grid.total_sites();
        let gvals = match &self.cutoff.g {
            GSpec::Values(v) => v.clone(),
            GSpec::Named(s) if s == "ones" => vec![1.0; n],
            GSpec::Named(s) => return Err(KmsError::Input(format!("unknown cutoff g '{s}'"))),
            GSpec::Shape(GShape::Ones) => vec![1.0; n],
            GSpec::Shape(GShape::Plateau { radius, ramp }) => Cutoff::plateau(&grid, *radius, *ramp)?.g,
            GSpec::Shape(GShape::Site { index }) => {
                if *index >= n {
                    return Err(KmsError::Shape(format!("cutoff site {index} outside grid")));
                }
                let mut v = vec![0.0; n];
                v[*index] = 1.0;
                v
            }
        };
        let base = Cutoff::from_g(&grid, gvals)?;
        let cutoff = Cutoff::new(
            &grid,
            base.g,
            self.cutoff.chi.clone().unwrap_or(base.chi.clone()),
            self.cutoff.chi1.clone().unwrap_or(base.chi1),
            self.cutoff.chi2.clone().unwrap_or(base.chi2),
        )?;
        Model::new(self.model.clone(), grid, self.potential.clone(), cutoff)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[model]
mass = 1.0
beta = 1.0
mu = -0.5
mu_rr = -0.5
epsilon = 0.5
phi0 = 0.0
coupling = 1.0

[grid]
box_length = 6.0
n_sites = [6]
n_time = 8

[potential]
shape = "gaussian"
width = 0.5
height = 0.01

[cutoff]
g = { shape = "plateau", radius = 1.0, ramp = 1.0 }
"#;

    #[test]
    fn loads_sample() {
        let m = Model::from_toml_str(SAMPLE).unwrap();
        assert_eq!(m.grid.dim(), 1);
        assert_eq!(m.grid.total_sites(), 6);
        assert_eq!(m.config_hash.len(), 64);
    }

    #[test]
    fn names_violated_invariant() {
        let bad = SAMPLE.replace("mu = -0.5", "mu = 0.5");
        let e = Model::from_toml_str(&bad).unwrap_err();
        assert!(e.to_string().contains("mu ≤ 0"), "{e}");
        let bad = SAMPLE.replace("mu_rr = -0.5", "mu_rr = -0.4");
        assert!(Model::from_toml_str(&bad).unwrap_err().to_string().contains("mu_rr = -epsilon"));
        let bad = SAMPLE.replace("phi0 = 0.0", "phi0 = 1.0\nmu_tilde = 0.3");
        assert!(Model::from_toml_str(&bad).unwrap_err().to_string().contains("phi0² = mu_tilde"));
    }

    #[test]
    fn unknown_key_is_parse_error() {
        let bad = SAMPLE.replace("n_time = 8", "n_time = 8\nbogus = 1");
        assert!(matches!(Model::from_toml_str(&bad), Err(KmsError::Parse(_))));
    }
}
