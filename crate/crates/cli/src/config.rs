use std::path::Path;

use fp_audit_core::mechanisms::{build_mechanism, MechanismParams};
use fp_audit_core::validation::Scale;
use fp_audit_core::fingerprint::ZPrimeMode;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    AttackSweep,
    PosteriorCheck,
    Tails,
    HeavyTailed,
    PhaseDiagram,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::AttackSweep => "attack-sweep",
            Command::PosteriorCheck => "posterior-check",
            Command::Tails => "tails",
            Command::HeavyTailed => "heavy-tailed",
            Command::PhaseDiagram => "phase-diagram",
        }
    }
}

/// One experiment. Fields a command does not use are ignored by it; list
/// fields (`ds`, `ns`, `epsilons`, ...) define sweeps and fall back to the
/// scalar field when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub ds: Vec<usize>,
    #[serde(default)]
    pub ns: Vec<usize>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_mechanism")]
    pub mechanism: String,
    #[serde(default)]
    pub params: MechanismParams,
    /// Adds an `empirical` row next to every attack-sweep point.
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default = "default_z_prime")]
    pub z_prime: ZPrimeMode,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    /// Criteria for `validate`; empty means all (0 is the supplementary set).
    #[serde(default)]
    pub criteria: Vec<u8>,
    /// Tail thresholds for `tails`; empty means `e^2, e^3, e^4`.
    #[serde(default)]
    pub xs: Vec<f64>,
    #[serde(default)]
    pub ks: Vec<u32>,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default = "default_m_inner")]
    pub m_inner: usize,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_seed() -> u64 {
    42
}
fn default_d() -> usize {
    8
}
fn default_n() -> usize {
    64
}
fn default_trials() -> usize {
    1000
}
fn default_mechanism() -> String {
    "dp-gauss-cov".into()
}
fn default_true() -> bool {
    true
}
fn default_z_prime() -> ZPrimeMode {
    ZPrimeMode::None
}
fn default_scale() -> Scale {
    Scale::Full
}
fn default_m_inner() -> usize {
    50
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn dims(&self) -> Vec<usize> {
        if self.ds.is_empty() { vec![self.d] } else { self.ds.clone() }
    }

    pub fn sizes(&self) -> Vec<usize> {
        if self.ns.is_empty() { vec![self.n] } else { self.ns.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.dims().contains(&0) || self.sizes().contains(&0) {
            return bad("dimensions and sample sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.params.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.params.delta));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0)) {
            return bad(format!("epsilon values must be positive, got {e}"));
        }
        if let Some(k) = self.criteria.iter().find(|k| **k > 9) {
            return bad(format!("no criterion {k}; valid criteria are 0 to 9"));
        }
        if self.command == Command::AttackSweep {
            if self.epsilons.is_empty() && self.ns.is_empty() {
                return bad("attack-sweep needs a nonempty `epsilons` or `ns` list".into());
            }
            build_mechanism(&self.mechanism, self.d, &self.params)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"command": "phase-diagram", "ds": [10], "ns": [100]}"#).unwrap();
        assert_eq!(cfg.master_seed, 42);
        assert_eq!(cfg.dims(), vec![10]);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"command": "validate", "trials": -5}"#,
            r#"{"command": "validate", "trials": 0}"#,
            r#"{"command": "nope"}"#,
            r#"{"command": "validate", "typo": 1}"#,
            r#"{"command": "attack-sweep"}"#,
            r#"{"command": "attack-sweep", "epsilons": [1.0], "mechanism": "bogus"}"#,
            r#"{"command": "tails", "params": {"delta": 1.0}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
