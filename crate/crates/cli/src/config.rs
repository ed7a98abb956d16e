//! Experiment configuration: strict TOML parsing plus field-level validation.

use std::fmt;
use std::path::{Path, PathBuf};

use kahlerlab::distance::StencilConfig;
use kahlerlab::scenario::{Exponent, ScenarioSpec, Shape};
use kahlerlab::{FlowConfig, HermMatrix, TorusGeometry};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
    #[serde(default)]
    pub distance: DistanceConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Shape seed; defaults to the global seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_max_mode")]
    pub max_mode: usize,
    pub indices: Vec<u32>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Defaults to `2n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Exponent>,
    #[serde(default = "default_shape")]
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundConfig>,
}

/// `H₀` as its real diagonal and the `(1,2)` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub diagonal: Vec<f64>,
    #[serde(default)]
    pub off_diagonal: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    /// Number of random test functions in the battery (besides `f ≡ 1`).
    #[serde(default = "default_test_forms")]
    pub test_forms: usize,
    /// Exponents `q` of the reported `‖v − 1‖_{L^{q/n}}`.
    #[serde(default = "default_q")]
    pub q: Vec<f64>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            test_forms: default_test_forms(),
            q: default_q(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    #[serde(default = "default_queries")]
    pub queries: usize,
    #[serde(default = "default_radius")]
    pub radius: usize,
    #[serde(default = "default_distance_times")]
    pub times: Vec<f64>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            queries: default_queries(),
            radius: default_radius(),
            times: default_distance_times(),
        }
    }
}

fn default_max_mode() -> usize {
    3
}
fn default_lambda() -> f64 {
    10.0
}
fn default_shape() -> Shape {
    Shape::Random
}
fn default_test_forms() -> usize {
    5
}
fn default_q() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_queries() -> usize {
    10
}
fn default_radius() -> usize {
    3
}
fn default_distance_times() -> Vec<f64> {
    vec![0.05, 0.25, 1.0]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> Vec<&str> {
        match self {
            ConfigError::Invalid(errs) => errs.iter().map(|e| e.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

fn contains_time(times: &[f64], t: f64) -> bool {
    times.iter().any(|&s| (s - t).abs() <= 1e-9 * t.max(1.0))
}

impl ExperimentConfig {
    /// Every violated constraint, named by its dotted field path.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut err = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        let g = self.geometry;
        if g.n != 1 && g.n != 2 {
            err("geometry.n", format!("complex dimension must be 1 or 2, got {}", g.n));
        }
        if g.size % 2 == 1 {
            err("geometry.size", format!("grid size must be even (a power of two ≥ 4), got {}", g.size));
        } else if g.size < 4 || !g.size.is_power_of_two() {
            err("geometry.size", format!("grid size must be a power of two ≥ 4, got {}", g.size));
        }
        let size_ok = g.size >= 4 && g.size.is_power_of_two();

        let s = &self.scenario;
        if !matches!(s.shape, Shape::Flat) {
            if s.max_mode == 0 {
                err("scenario.max_mode", "must be at least 1".into());
            } else if size_ok && s.max_mode > g.size / 3 {
                err(
                    "scenario.max_mode",
                    format!(
                        "{} exceeds N/3 = {} (2/3-rule dealiasing constraint)",
                        s.max_mode,
                        g.size / 3
                    ),
                );
            }
        }
        if s.indices.is_empty() {
            err("scenario.indices", "must not be empty".into());
        } else if s.indices[0] == 0 || s.indices.windows(2).any(|w| w[0] >= w[1]) {
            err("scenario.indices", "must be strictly increasing positive integers".into());
        }
        if !(s.lambda > 0.0) || !s.lambda.is_finite() {
            err("scenario.lambda", format!("must be positive and finite, got {}", s.lambda));
        }
        if let Shape::Wells { count: 0 } = s.shape {
            err("scenario.shape.count", "must be at least 1".into());
        }
        if let Some(b) = &s.background {
            if b.diagonal.len() != g.n {
                err(
                    "scenario.background.diagonal",
                    format!("expected {} entries, got {}", g.n, b.diagonal.len()),
                );
            } else if g.n == 1 && b.off_diagonal != [0.0, 0.0] {
                err("scenario.background.off_diagonal", "must be zero when n = 1".into());
            } else if self.background().min_eigenvalue().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                err("scenario.background", "matrix is not positive definite".into());
            }
        }

        if let Err(e) = self.flow.validate() {
            err("flow", e.to_string());
        } else if !contains_time(&self.flow.snapshot_times, 1.0) {
            err(
                "flow.snapshot_times",
                "must include t = 1 (weak-convergence and volume checks read it)".into(),
            );
        }

        if self.harness.q.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            err("harness.q", "exponents must be positive and finite".into());
        }

        if self.distance_enabled() {
            if self.distance.radius == 0 {
                err("distance.radius", "must be at least 1".into());
            }
            if self.distance.queries == 0 {
                err("distance.queries", "must be at least 1".into());
            }
            for &t in &self.distance.times {
                if !contains_time(&self.flow.snapshot_times, t) {
                    err(
                        "distance.times",
                        format!("t = {t} is not one of flow.snapshot_times"),
                    );
                }
            }
        }
        errs
    }

    pub fn torus(&self) -> TorusGeometry {
        TorusGeometry::new(self.geometry.n, self.geometry.size).expect("validated geometry")
    }

    pub fn background(&self) -> HermMatrix {
        match &self.scenario.background {
            None => HermMatrix::identity(self.geometry.n),
            Some(b) if b.diagonal.len() == 1 => HermMatrix::diagonal(&b.diagonal),
            Some(b) => HermMatrix::two(
                b.diagonal[0],
                b.diagonal[1],
                Complex64::new(b.off_diagonal[0], b.off_diagonal[1]),
            ),
        }
    }

    pub fn exponent(&self) -> Exponent {
        self.scenario
            .p
            .unwrap_or(Exponent::Finite(2.0 * self.geometry.n as f64))
    }

    /// The distance battery runs in the uniform-equivalence regime `p = ∞`.
    pub fn distance_enabled(&self) -> bool {
        self.exponent().is_infinite()
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            seed: self.scenario.seed.unwrap_or(self.seed),
            max_mode: self.scenario.max_mode,
            shape: self.scenario.shape.clone(),
            background: self.background(),
            indices: self.scenario.indices.clone(),
            lambda: self.scenario.lambda,
            p: self.exponent(),
        }
    }

    pub fn stencil(&self) -> StencilConfig {
        StencilConfig {
            radius: self.distance.radius,
        }
    }

    pub fn test_form_seed(&self) -> u64 {
        self.seed.wrapping_add(1000)
    }

    pub fn query_seed(&self) -> u64 {
        self.seed.wrapping_add(2000)
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
[geometry]
n = 1
size = 64
[scenario]
indices = [1, 4, 16, 64]
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.exponent(), Exponent::Finite(2.0));
        assert_eq!(cfg.flow, FlowConfig::default());
        assert!(!cfg.distance_enabled());
        assert_eq!(cfg.background(), HermMatrix::identity(1));
    }

    #[test]
    fn odd_size_names_the_field() {
        let err = parse_config_str(&MINIMAL.replace("size = 64", "size = 63")).unwrap_err();
        assert_eq!(err.fields(), vec!["geometry.size"]);
        assert!(err.to_string().contains("even"));
    }

    #[test]
    fn max_mode_cites_dealiasing() {
        let text = MINIMAL.replace("indices", "max_mode = 22\nindices");
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.fields(), vec!["scenario.max_mode"]);
        assert!(err.to_string().contains("dealiasing"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[scenario]", "[scenario]\nlamda = 3.0");
        assert!(matches!(parse_config_str(&text), Err(ConfigError::Syntax(_))));
        let text = MINIMAL.replace("seed = 1", "seed = 1\ntolerance = 2");
        assert!(matches!(parse_config_str(&text), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn several_errors_are_collected() {
        let text = MINIMAL
            .replace("n = 1", "n = 3")
            .replace("indices = [1, 4, 16, 64]", "indices = [4, 1]");
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.fields(), vec!["geometry.n", "scenario.indices"]);
    }

    #[test]
    fn distance_times_must_be_snapshots() {
        let text = MINIMAL.replace("[scenario]", "[scenario]\np = \"inf\"")
            + "[distance]\ntimes = [0.3]\n";
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.fields(), vec!["distance.times"]);
    }

    #[test]
    fn hash_ignores_output_and_tracks_seed() {
        let a = parse_config_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
