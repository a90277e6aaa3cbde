//! Experiment configuration (TOML).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Checks in their fixed execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Validate,
    Sweep,
    Dpp,
    Crosscheck,
    Comparison,
    Estimates,
    Isaacs,
}

impl CheckName {
    pub const ALL: [CheckName; 7] = [
        Self::Validate,
        Self::Sweep,
        Self::Dpp,
        Self::Crosscheck,
        Self::Comparison,
        Self::Estimates,
        Self::Isaacs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Sweep => "sweep",
            Self::Dpp => "dpp",
            Self::Crosscheck => "crosscheck",
            Self::Comparison => "comparison",
            Self::Estimates => "estimates",
            Self::Isaacs => "isaacs",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_rate() -> f64 {
    0.1
}

fn default_lower_gap() -> f64 {
    0.4
}

fn default_upper_gap() -> f64 {
    0.1
}

fn default_controls() -> Vec<f64> {
    vec![0.0]
}

/// Game definition: a built-in family or custom expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `f = 0, Phi = c, h = c - 1, h' = c + 1, b = 0, sigma = 1`.
    Constant {
        #[serde(default = "half")]
        value: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `b = speed`, `sigma` constant, `f = 0`, `Phi = exp(-x^2)`, inactive
    /// obstacles at `-1` and `2`.
    Transport {
        #[serde(default = "one")]
        speed: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `b = 0, sigma = sqrt 2, f = -rate y`, `Phi = max(0, 1 - |x|)`,
    /// `h = Phi - lower_gap`, `h' = Phi + upper_gap`.
    DynkinHeat {
        #[serde(default = "default_rate")]
        rate: f64,
        #[serde(default = "default_lower_gap")]
        lower_gap: f64,
        #[serde(default = "default_upper_gap")]
        upper_gap: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `f = u v` on `{-1, 1}^2`, `b = 0`, `sigma` constant, `Phi = 0`.
    BilinearGame {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `f = 0.5 u - 0.25 v^2` with control-independent dynamics.
    SeparableGame {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
    /// Coefficients as expressions over `t, x, y, z, u, v`.
    Custom {
        #[serde(default = "zero_expr")]
        drift: String,
        #[serde(default = "zero_expr")]
        diffusion: String,
        #[serde(default = "zero_expr")]
        driver: String,
        #[serde(default = "zero_expr")]
        terminal: String,
        lower: String,
        upper: String,
        #[serde(default = "default_controls")]
        controls_i: Vec<f64>,
        #[serde(default = "default_controls")]
        controls_ii: Vec<f64>,
        #[serde(default)]
        lipschitz: f64,
        #[serde(default)]
        driver_lipschitz: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default = "one")]
    pub cfl_margin: f64,
}

fn default_levels() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
        }
    }
}

fn default_validate_samples() -> usize {
    1000
}

fn default_pairs() -> usize {
    100
}

fn default_paths() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

/// Sizes of the randomized parts of the checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    #[serde(default = "default_validate_samples")]
    pub validate_samples: usize,
    #[serde(default = "default_validate_samples")]
    pub isaacs_samples: usize,
    #[serde(default = "default_pairs")]
    pub comparison_pairs: usize,
    #[serde(default = "default_paths")]
    pub estimate_paths: usize,
    /// Control indices `[u, v]` frozen by the cross-check.
    #[serde(default)]
    pub crosscheck_controls: [usize; 2],
    /// Repeat the cross-check on the refined grid and require a smaller gap.
    #[serde(default = "default_true")]
    pub crosscheck_refine: bool,
    /// Overrides the default `10 (dx + dt) range` tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_tol: Option<f64>,
}

impl Default for OptionsConfig {
    fn default() -> Self {
        Self {
            validate_samples: default_validate_samples(),
            isaacs_samples: default_validate_samples(),
            comparison_pairs: default_pairs(),
            estimate_paths: default_paths(),
            crosscheck_controls: [0, 0],
            crosscheck_refine: true,
            value_tol: None,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub checks: Vec<CheckName>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub options: OptionsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Requested checks, deduplicated, in execution order.
    pub fn ordered_checks(&self) -> Vec<CheckName> {
        let mut c = self.checks.clone();
        c.sort();
        c.dedup();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7
checks = ["sweep", "validate"]

[problem]
kind = "dynkin_heat"
rate = 0.2

[grid]
nx = 101
nt = 200
x_min = -8.0
x_max = 8.0
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(
            c.ordered_checks(),
            vec![CheckName::Validate, CheckName::Sweep]
        );
        assert_eq!(c.schedule.levels.len(), 7);
        assert_eq!(c.grid.cfl_margin, 1.0);
        match c.problem {
            ProblemConfig::DynkinHeat {
                rate, lower_gap, ..
            } => {
                assert_eq!(rate, 0.2);
                assert_eq!(lower_gap, 0.4);
            }
            ref p => panic!("unexpected {p:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = SAMPLE.replace("rate = 0.2", "rate = 0.2\nratee = 1");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("ratee"), "{err}");
        let bad = SAMPLE.replace("seed = 7", "seed = 7\nsed = 1");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
        let bad = SAMPLE.replace("\"sweep\"", "\"sweeep\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}
