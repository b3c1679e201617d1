//! JSON scenario configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CoefficientSet, RunConfig, SimState};
use crate::equilibrium::EeOptions;
use crate::expr::{parse, Expr, ParseError};
use crate::grid::{build_domain, DiscreteDomain, DomainSpec, ScalarField};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed config: {0}")]
    Json(String),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("formula for {field}: {source}")]
    Formula {
        field: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("{field} at ({x}, {y}): {message}")]
    Evaluation {
        field: &'static str,
        x: f64,
        y: f64,
        message: String,
    },
    #[error("invalid {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub beta: String,
    pub gamma: String,
    pub eta: String,
    pub lambda: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default = "default_s0")]
    pub s: String,
    #[serde(default = "default_i0")]
    pub i: String,
}

fn default_s0() -> String {
    "0.8".into()
}

fn default_i0() -> String {
    "0.2".into()
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData {
            s: default_s0(),
            i: default_i0(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stopping {
    /// Steady-state threshold on `max |dS/dt|, |dI/dt|`.
    pub steady_tol: Option<f64>,
    /// Fixed horizon; when both are given the run stops at whichever comes first.
    pub t_final: Option<f64>,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub max_steps: usize,
}

impl Default for Stopping {
    fn default() -> Self {
        let r = RunConfig::default();
        Stopping {
            steady_tol: r.steady_tol,
            t_final: None,
            dt_init: r.dt_init,
            dt_max: r.dt_max,
            dt_min: r.dt_min,
            max_steps: r.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub newton: bool,
    pub snapshot_every: usize,
    /// Thresholds for the indicator masks `h^(1/q) - S < delta`.
    pub mask_deltas: Vec<f64>,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            newton: false,
            snapshot_every: 0,
            mask_deltas: vec![1e-2, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub domain: DomainSpec,
    pub coefficients: Coefficients,
    pub d_s: f64,
    pub d_i: f64,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub stopping: Stopping,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Parsed formulas of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Formulas {
    pub beta: Expr,
    pub gamma: Expr,
    pub eta: Expr,
    pub lambda: Expr,
    pub s0: Expr,
    pub i0: Expr,
}

impl Formulas {
    /// Whether every coefficient formula is smooth enough for pointwise
    /// second derivatives of `h^(1/q)`.
    pub fn coefficients_twice_differentiable(&self) -> bool {
        [&self.beta, &self.gamma, &self.eta, &self.lambda]
            .iter()
            .all(|e| e.is_twice_differentiable())
    }
}

/// A fully validated config with its domain, coefficients and initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub formulas: Formulas,
    pub domain: Arc<DiscreteDomain>,
    pub coefficients: CoefficientSet,
    pub initial: SimState,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                found: cfg.schema_version,
            });
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn formulas(&self) -> Result<Formulas, ConfigError> {
        let p = |field: &'static str, text: &str| parse(text).map_err(|source| ConfigError::Formula { field, source });
        Ok(Formulas {
            beta: p("beta", &self.coefficients.beta)?,
            gamma: p("gamma", &self.coefficients.gamma)?,
            eta: p("eta", &self.coefficients.eta)?,
            lambda: p("lambda", &self.coefficients.lambda)?,
            s0: p("initial.s", &self.initial.s)?,
            i0: p("initial.i", &self.initial.i)?,
        })
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            t_final: self.stopping.t_final,
            steady_tol: self.stopping.steady_tol,
            dt_init: self.stopping.dt_init,
            dt_max: self.stopping.dt_max,
            dt_min: self.stopping.dt_min,
            max_steps: self.stopping.max_steps,
            snapshot_every: self.toggles.snapshot_every,
            ..RunConfig::default()
        }
    }

    pub fn ee_options(&self) -> EeOptions {
        EeOptions {
            run: self.run_config(),
            newton: self.toggles.newton,
            ..EeOptions::default()
        }
    }

    fn check_scalars(&self) -> Result<(), ConfigError> {
        let s = &self.stopping;
        let checks = [
            ("stopping.dt_init", s.dt_init > 0.0 && s.dt_init.is_finite()),
            ("stopping.dt_max", s.dt_max >= s.dt_init && s.dt_max.is_finite()),
            ("stopping.dt_min", s.dt_min > 0.0 && s.dt_min <= s.dt_init),
            ("stopping.steady_tol", s.steady_tol.is_none_or(|t| t > 0.0)),
            ("stopping.t_final", s.t_final.is_none_or(|t| t > 0.0 && t.is_finite())),
            (
                "stopping (one of steady_tol, t_final is required)",
                s.steady_tol.is_some() || s.t_final.is_some(),
            ),
            ("toggles.mask_deltas", self.toggles.mask_deltas.iter().all(|d| *d > 0.0 && d.is_finite())),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(ConfigError::Invalid(name.to_string())),
            None => Ok(()),
        }
    }

    /// Parses every formula and builds the discrete problem. Nothing is
    /// computed beyond coefficient evaluation.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        self.check_scalars()?;
        let formulas = self.formulas()?;
        let domain = Arc::new(build_domain(&self.domain).map_err(|e| ConfigError::Invalid(format!("domain: {e}")))?);
        let eval = |field: &'static str, e: &Expr| -> Result<ScalarField, ConfigError> {
            let mut values = Vec::with_capacity(domain.len());
            for c in domain.coords() {
                let v = e.eval(c[0], c[1]).map_err(|err| ConfigError::Evaluation {
                    field,
                    x: c[0],
                    y: c[1],
                    message: err.to_string(),
                })?;
                values.push(v);
            }
            ScalarField::new(&domain, values).map_err(|err| ConfigError::Invalid(format!("{field}: {err}")))
        };
        let coefficients = CoefficientSet::new(
            domain.clone(),
            eval("beta", &formulas.beta)?,
            eval("gamma", &formulas.gamma)?,
            eval("eta", &formulas.eta)?,
            eval("lambda", &formulas.lambda)?,
            self.d_s,
            self.d_i,
            self.p,
            self.q,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let initial = SimState::new(eval("initial.s", &formulas.s0)?, eval("initial.i", &formulas.i0)?, 0.0)
            .map_err(|e| ConfigError::Invalid(format!("initial data: {e}")))?;
        Ok(Scenario {
            config: self.clone(),
            formulas,
            domain,
            coefficients,
            initial,
        })
    }
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        ScenarioConfig::from_path(path)?.build()
    }

    /// The same scenario with other diffusion rates.
    pub fn with_diffusion(&self, d_s: f64, d_i: f64) -> Result<Self, ConfigError> {
        let coefficients = self
            .coefficients
            .with_diffusion(d_s, d_i)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut config = self.config.clone();
        config.d_s = d_s;
        config.d_i = d_i;
        Ok(Scenario {
            config,
            coefficients,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "domain": {"kind": "interval", "start": 0, "end": 1, "nodes": 11},
        "coefficients": {"beta": "1", "gamma": "0.5", "eta": "0.5", "lambda": "2"},
        "d_s": 1, "d_i": 1, "p": 1, "q": 1
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.initial, InitialData::default());
        assert_eq!(cfg.toggles.mask_deltas, vec![1e-2, 1e-4]);
        let sc = cfg.build().unwrap();
        assert_eq!(sc.initial.s.values()[3], 0.8);
        assert_eq!(sc.initial.i.values()[3], 0.2);
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = MINIMAL.replace("\"p\": 1", "\"p\": 1, \"extra\": 3");
        assert!(matches!(ScenarioConfig::from_json(&unknown), Err(ConfigError::Json(_))));
        let version = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(ScenarioConfig::from_json(&version), Err(ConfigError::Schema { found: 7 })));
        let formula = MINIMAL.replace("\"beta\": \"1\"", "\"beta\": \"2*\"");
        let err = ScenarioConfig::from_json(&formula).unwrap().build().unwrap_err();
        assert!(matches!(err, ConfigError::Formula { field: "beta", .. }));
        let negative = MINIMAL.replace("\"gamma\": \"0.5\"", "\"gamma\": \"x-0.5\"");
        assert!(matches!(
            ScenarioConfig::from_json(&negative).unwrap().build(),
            Err(ConfigError::Invalid(_))
        ));
        let domain = MINIMAL.replace("\"nodes\": 11", "\"nodes\": 1");
        assert!(ScenarioConfig::from_json(&domain).unwrap().build().is_err());
    }
}
