//! Experiment configuration: a strict JSON schema (unknown keys rejected)
//! describing the instance, the algorithms to run, and the sweep matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pftrl_core::algorithms::{AdaptiveGamma, AlgorithmConfig, AlgorithmKind};
use pftrl_core::generators::{FamilyLaw, FamilySpec, StreamSpec};
use pftrl_core::model::{BoxDomain, LossSpec, RegularizerSpec};
use pftrl_core::ProblemInstance;

/// How the penalty weight is chosen for penalty-based algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Use each algorithm's configured weight as-is.
    #[default]
    Fixed,
    /// Derive the weight from the growth-condition certificate; falls back
    /// to the configured weight when the certificate fails.
    Certificate,
    /// Grow-then-freeze schedule starting from the configured weight.
    Adaptive,
}

/// Per-algorithm settings inside a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSettings {
    pub kind: AlgorithmKind,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub step_scale: Option<f64>,
    #[serde(default)]
    pub adaptive_cap: Option<f64>,
    #[serde(default)]
    pub solver_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub domain: BoxDomain,
    pub losses: LossSpec,
    pub constraints: Vec<StreamSpec>,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    pub algorithms: Vec<AlgorithmSettings>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid_points: usize,
    pub output_dir: String,
    /// Sweep over activation exponents; each value is substituted into every
    /// activation-rate law. Absent means a single pass with the law as-is.
    #[serde(default)]
    pub activation_c: Option<Vec<f64>>,
    /// Override for the sub-√t partition threshold.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub gamma_mode: GammaMode,
    #[serde(default = "default_epsilon")]
    pub condition_epsilon: f64,
    #[serde(default)]
    pub condition_t0: usize,
}

fn default_epsilon() -> f64 {
    4.0
}

/// A config error with enough context to locate the problem.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&raw).map_err(|e| {
            ConfigError(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        config.validate()?;
        Ok((config, raw))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.experiment.is_empty()
            || !self
                .experiment
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return fail("field `experiment`: must be a nonempty [A-Za-z0-9_-]+ name".into());
        }
        self.domain
            .validate()
            .map_err(|e| ConfigError(format!("field `domain`: {e}")))?;
        let dim = self.domain.dim();
        self.losses
            .validate(dim)
            .map_err(|e| ConfigError(format!("field `losses`: {e}")))?;
        if self.constraints.is_empty() {
            return fail("field `constraints`: need at least one stream".into());
        }
        for (j, s) in self.constraints.iter().enumerate() {
            s.validate(dim)
                .map_err(|e| ConfigError(format!("field `constraints[{j}]`: {e}")))?;
        }
        if self.algorithms.is_empty() {
            return fail("field `algorithms`: need at least one algorithm".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if let Some(g) = a.gamma {
                if !g.is_finite() || g < 0.0 {
                    return fail(format!("field `algorithms[{i}].gamma`: {g} invalid"));
                }
            }
            if a.kind == AlgorithmKind::PenalizedFtrl
                && self.gamma_mode == GammaMode::Fixed
                && a.gamma.is_none()
            {
                return fail(format!(
                    "field `algorithms[{i}]`: penalized_ftrl needs `gamma` in fixed mode"
                ));
            }
            if let Some(s) = a.step_scale {
                if !s.is_finite() || s <= 0.0 {
                    return fail(format!("field `algorithms[{i}].step_scale`: {s} invalid"));
                }
            }
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| *t < 1) {
            return fail("field `horizons`: need positive horizons".into());
        }
        if self.seeds.is_empty() {
            return fail("field `seeds`: need at least one seed".into());
        }
        if self.grid_points < 101 {
            return fail("field `grid_points`: need at least 101 points per axis".into());
        }
        if let Some(cs) = &self.activation_c {
            if cs.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
                return fail("field `activation_c`: exponents must lie in (0, 1]".into());
            }
        }
        if !self.condition_epsilon.is_finite() || self.condition_epsilon <= 0.0 {
            return fail("field `condition_epsilon`: must be positive".into());
        }
        Ok(())
    }

    /// Constraint-stream variants of the sweep, as `(label, spec)` pairs.
    pub fn stream_variants(&self) -> Vec<(String, FamilySpec)> {
        let base = FamilySpec::new(self.constraints.clone());
        match &self.activation_c {
            None => vec![(self.base_c_label(), base)],
            Some(cs) => cs
                .iter()
                .map(|c| {
                    let streams = self
                        .constraints
                        .iter()
                        .map(|s| substitute_c(s, *c))
                        .collect();
                    (format!("{c:.2}"), FamilySpec::new(streams))
                })
                .collect(),
        }
    }

    fn base_c_label(&self) -> String {
        for s in &self.constraints {
            if let StreamSpec::Family {
                law: FamilyLaw::ActivationRate { c, .. },
                ..
            } = s
            {
                return format!("{c:.2}");
            }
        }
        "na".to_string()
    }

    pub fn instance(&self, streams: FamilySpec, gamma: f64) -> ProblemInstance {
        ProblemInstance {
            domain: self.domain.clone(),
            losses: self.losses.clone(),
            constraints: streams,
            regularizer: self.regularizer,
            gamma,
        }
    }

    /// Translate one algorithm entry into a run config.
    pub fn algorithm_config(
        &self,
        settings: &AlgorithmSettings,
        horizon: usize,
        seed: u64,
        gamma: f64,
    ) -> AlgorithmConfig {
        AlgorithmConfig {
            kind: settings.kind,
            gamma: Some(gamma),
            step_scale: settings.step_scale.unwrap_or(5.0),
            horizon,
            seed,
            solver_tol: settings.solver_tol.unwrap_or(1e-9),
            adaptive_gamma: match self.gamma_mode {
                GammaMode::Adaptive => Some(AdaptiveGamma {
                    cap: settings.adaptive_cap.unwrap_or(1e4),
                }),
                _ => None,
            },
        }
    }
}

fn substitute_c(stream: &StreamSpec, c_value: f64) -> StreamSpec {
    match stream {
        StreamSpec::Family {
            members,
            law: FamilyLaw::ActivationRate { scale, .. },
            limit_probs,
        } => StreamSpec::Family {
            members: members.clone(),
            law: FamilyLaw::ActivationRate {
                c: c_value,
                scale: *scale,
            },
            limit_probs: limit_probs.clone(),
        },
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "experiment": "toy",
            "domain": { "lower": [-10.0], "upper": [10.0] },
            "losses": { "time_invariant": { "affine": { "slope": [-2.0], "intercept": 0.0 } } },
            "constraints": [
                { "family": {
                    "members": [
                        { "constant": { "value": -0.01 } },
                        { "affine": { "slope": [1.0], "intercept": 0.0 } }
                    ],
                    "law": { "activation_rate": { "c": 1.0, "scale": 0.1 } },
                    "limit_probs": [0.9, 0.1]
                } }
            ],
            "algorithms": [ { "kind": "penalized_ftrl", "gamma": 25.0 } ],
            "horizons": [100],
            "seeds": [1, 2],
            "grid_points": 201,
            "output_dir": "out"
        })
    }

    #[test]
    fn parses_and_validates_minimal_config() {
        let config: ExperimentConfig = serde_json::from_value(minimal_json()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.stream_variants().len(), 1);
        assert_eq!(config.stream_variants()[0].0, "1.00");
    }

    #[test]
    fn rejects_unknown_fields() {
        let mut v = minimal_json();
        v["surprise"] = serde_json::json!(1);
        let parsed: Result<ExperimentConfig, _> = serde_json::from_value(v);
        assert!(parsed.is_err());
    }

    #[test]
    fn rejects_missing_gamma_in_fixed_mode() {
        let mut v = minimal_json();
        v["algorithms"] = serde_json::json!([{ "kind": "penalized_ftrl" }]);
        let config: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn activation_sweep_expands_variants() {
        let mut v = minimal_json();
        v["activation_c"] = serde_json::json!([0.5, 0.75, 1.0]);
        let config: ExperimentConfig = serde_json::from_value(v).unwrap();
        config.validate().unwrap();
        let variants = config.stream_variants();
        assert_eq!(variants.len(), 3);
        assert_eq!(variants[0].0, "0.50");
        match &variants[1].1.streams[0] {
            StreamSpec::Family {
                law: FamilyLaw::ActivationRate { c, .. },
                ..
            } => assert_eq!(*c, 0.75),
            other => panic!("unexpected stream {other:?}"),
        }
    }
}
