//! Run configuration: TOML sections with defaults, `section.key=value`
//! overrides, canonical serialization and its SHA-256 digest.

use std::f64::consts::FRAC_PI_3;
use std::path::Path;

use floquet_core::betasearch::{ConstantsConfig, ConstructionConfig, Mode};
use floquet_core::model::{golden_beta, BetaValue, Dyadic};
use floquet_core::operator::Boundary;
use floquet_core::spectral::LocalizationPolicy;
use floquet_core::{make_params, ModelParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub operator: OperatorSection,
    pub evolve: EvolveSection,
    pub lyapunov: LyapunovSection,
    pub spectrum: SpectrumSection,
    pub clark: ClarkSection,
    pub average: AverageSection,
    pub beta: BetaSection,
    pub verify: VerifySection,
    pub run: RunSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    Float,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub t: f64,
    pub alpha: f64,
    pub theta: f64,
    pub lambda: f64,
    pub beta_mode: BetaMode,
    /// Float literal or `golden` in float mode; integer or `p/d` with `d` a power of two in exact mode.
    #[serde(deserialize_with = "string_or_number")]
    pub beta: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            t: 0.5f64.sqrt(),
            alpha: 0.0,
            theta: 0.0,
            lambda: 0.0,
            beta_mode: BetaMode::Float,
            beta: "golden".into(),
        }
    }
}

impl ModelSection {
    pub fn beta_value(&self) -> Result<BetaValue, LabError> {
        match self.beta_mode {
            BetaMode::Float if self.beta == "golden" => Ok(golden_beta()),
            BetaMode::Float => self
                .beta
                .parse::<f64>()
                .map(BetaValue::Float)
                .map_err(|_| LabError::Config(format!("model.beta: `{}` is not a float or `golden`", self.beta))),
            BetaMode::Exact => Ok(BetaValue::Exact(Dyadic::parse_rational(&self.beta)?)),
        }
    }

    pub fn params(&self) -> Result<ModelParams, LabError> {
        Ok(make_params(self.t, self.alpha, self.theta, self.lambda, self.beta_value()?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Half,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Open,
    Closed,
}

impl From<BoundaryKind> for Boundary {
    fn from(b: BoundaryKind) -> Self {
        match b {
            BoundaryKind::Open => Boundary::Open,
            BoundaryKind::Closed => Boundary::Closed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSection {
    pub geometry: GeometryKind,
    /// Half-line dimension, or half width on the full line.
    pub n_dim: usize,
    pub boundary: BoundaryKind,
    /// Random parameter draws for `operator check`.
    pub draws: usize,
    /// θ grid size of the covariance check.
    pub theta_points: usize,
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self {
            geometry: GeometryKind::Half,
            n_dim: 1024,
            boundary: BoundaryKind::Open,
            draws: 100,
            theta_points: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub n_max: usize,
    pub orders: Vec<u32>,
    /// Initial basis site.
    pub site: i64,
    /// Truncation dimension; 0 selects the light-cone minimum.
    pub n_dim: usize,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            n_max: 100,
            orders: vec![1, 2],
            site: 1,
            n_dim: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub n_energies: usize,
    pub n_factors: usize,
    pub rescale_every: usize,
    /// Random `(θ, E)` samples instead of the configured θ and an even E grid.
    pub random: bool,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        Self {
            n_energies: 64,
            n_factors: 100_000,
            rescale_every: 16,
            random: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub n_dim: usize,
    pub dense_limit: usize,
    pub boundary_mass: f64,
    pub boundary_sites: usize,
    pub noise_floor: f64,
    /// Decay rate below which an unflagged eigenvector counts as localized.
    pub localized_rate: f64,
    /// Cocycle factors for the Lyapunov estimate at each eigenphase.
    pub gamma_factors: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let p = LocalizationPolicy::default();
        Self {
            n_dim: 512,
            dense_limit: floquet_core::spectral::DENSE_LIMIT,
            boundary_mass: p.boundary_mass,
            boundary_sites: p.boundary_sites,
            noise_floor: p.noise_floor,
            localized_rate: -0.1,
            gamma_factors: 10_000,
        }
    }
}

impl SpectrumSection {
    pub fn policy(&self) -> LocalizationPolicy {
        LocalizationPolicy {
            boundary_mass: self.boundary_mass,
            boundary_sites: self.boundary_sites,
            noise_floor: self.noise_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClarkSection {
    pub n_dim: usize,
    pub lambdas: Vec<f64>,
    pub radius: f64,
    pub n_points: usize,
}

impl Default for ClarkSection {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};
        Self {
            n_dim: 256,
            lambdas: vec![FRAC_PI_6, FRAC_PI_3, FRAC_PI_2, PI],
            radius: 0.9,
            n_points: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AverageSection {
    pub n_dim: usize,
    pub n_lambda: usize,
    /// Named test functions: `one`, `cos`, `cos3_sin2`, `fejer`.
    pub functions: Vec<String>,
}

impl Default for AverageSection {
    fn default() -> Self {
        Self {
            n_dim: 64,
            n_lambda: 256,
            functions: vec!["one".into(), "cos".into(), "cos3_sin2".into(), "fejer".into()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Rigorous,
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSection {
    pub mode: ModeKind,
    /// Exact seed `β_1`.
    #[serde(deserialize_with = "string_or_number")]
    pub seed: String,
    pub stages: u32,
    pub samples: usize,
    pub max_t: u64,
    pub max_dim: usize,
    pub constants_n_dim: usize,
    pub epsilon: f64,
    pub min_mass: f64,
    pub peak_distance: f64,
    pub max_s: f64,
    pub n_lambda: usize,
    /// Forced `[c1, c2]` for rigorous mode; empty to estimate.
    pub forced_constants: Vec<f64>,
}

impl Default for BetaSection {
    fn default() -> Self {
        let c = ConstantsConfig::default();
        let k = ConstructionConfig::default();
        Self {
            mode: ModeKind::Empirical,
            seed: "1".into(),
            stages: k.n_stages,
            samples: k.n_samples,
            max_t: k.max_t,
            max_dim: k.max_dim,
            constants_n_dim: c.n_dim,
            epsilon: c.epsilon,
            min_mass: c.min_mass,
            peak_distance: c.peak_distance,
            max_s: c.max_s,
            n_lambda: c.n_lambda,
            forced_constants: Vec::new(),
        }
    }
}

impl BetaSection {
    pub fn construction(&self, model: &ModelSection) -> Result<ConstructionConfig, LabError> {
        let forced_constants = match self.forced_constants.as_slice() {
            [] => None,
            [c1, c2] => Some((*c1, *c2)),
            _ => return Err(LabError::Config("beta.forced_constants needs exactly two values".into())),
        };
        Ok(ConstructionConfig {
            mode: match self.mode {
                ModeKind::Rigorous => Mode::Rigorous,
                ModeKind::Empirical => Mode::Empirical,
            },
            t: model.t,
            alpha: model.alpha,
            seed: Dyadic::parse_rational(&self.seed)?,
            n_stages: self.stages,
            n_samples: self.samples,
            max_t: self.max_t,
            max_dim: self.max_dim,
            constants: ConstantsConfig {
                n_dim: self.constants_n_dim,
                epsilon: self.epsilon,
                min_mass: self.min_mass,
                peak_distance: self.peak_distance,
                max_s: self.max_s,
                n_lambda: self.n_lambda,
            },
            forced_constants,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub projection_draws: usize,
    pub projection_max_dim: usize,
    pub projection_max_t: usize,
    pub drift_draws: usize,
    pub drift_n_max: u32,
    /// Windowed-bound diagnostic: dimension, smoothing, `T` and slack.
    pub window_n_dim: usize,
    pub window_epsilon: f64,
    pub window_t: usize,
    pub window_slack: f64,
    /// Arc `[a, b]` of the windowed projection.
    pub window_arc: Vec<f64>,
    /// Dimension of the Krylov cyclicity check.
    pub cyclicity_n_dim: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            projection_draws: 1000,
            projection_max_dim: 32,
            projection_max_t: 16,
            drift_draws: 100,
            drift_n_max: 6,
            window_n_dim: 256,
            window_epsilon: 1e-2,
            window_t: 40,
            window_slack: 2.0,
            window_arc: vec![1.0, 1.5],
            cyclicity_n_dim: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    pub cache: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            cache: true,
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides and validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, LabError> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, LabError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        self.model.params()?;
        self.beta.construction(&self.model)?;
        if self.verify.window_arc.len() != 2 {
            return Err(LabError::Config("verify.window_arc needs exactly two values".into()));
        }
        if self.clark.lambdas.is_empty() {
            return Err(LabError::Config("clark.lambdas is empty".into()));
        }
        for f in &self.average.functions {
            if crate::commands::test_function(f).is_none() {
                return Err(LabError::Config(format!(
                    "average.functions: unknown `{f}`; valid: one, cos, cos3_sin2, fejer"
                )));
            }
        }
        Ok(())
    }

    /// Canonical TOML: every section and key, fixed order, shortest round-trip floats.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical`] with `run.cache` and
    /// `run.threads` reset, since neither changes any output byte.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.run.cache = RunSection::default().cache;
        c.run.threads = RunSection::default().threads;
        hex::encode(Sha256::digest(c.canonical().as_bytes()))
    }
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match toml::Value::deserialize(d)? {
        toml::Value::String(s) => Ok(s),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        other => Err(serde::de::Error::custom(format!("expected a string or number, got {other}"))),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), LabError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override `{spec}` is not key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| LabError::Config(format!("override key `{path}` is not section.key")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(LabError::Config(format!("`{section}` is not a section")));
    };
    sec.insert(key.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let cfg = RunConfig::from_toml_with("", &["model.t=0.3".into(), "clark.radius = 0.1".into()]).unwrap();
        let back = RunConfig::from_toml_with(&cfg.canonical(), &[]).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest(), back.digest());
        assert_eq!(cfg.model.t, 0.3);
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        let err = RunConfig::from_toml_with("[model]\nbogus = 1\n", &[]).unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("lambda"), "{err}");
        assert!(RunConfig::from_toml_with("", &["nosection=1".into()]).is_err());
    }

    #[test]
    fn string_overrides_fall_back_to_text() {
        let cfg = RunConfig::from_toml_with("", &["model.beta_mode=exact".into(), "model.beta=3/8".into()]).unwrap();
        assert_eq!(cfg.model.beta, "3/8");
        assert!(matches!(cfg.model.beta_value().unwrap(), BetaValue::Exact(_)));
        let cfg = RunConfig::from_toml_with("", &["model.beta=0.25".into(), "beta.seed=1".into()]).unwrap();
        assert_eq!(cfg.model.beta_value().unwrap(), BetaValue::Float(0.25));
    }

    #[test]
    fn invalid_model_is_rejected() {
        assert!(RunConfig::from_toml_with("", &["model.t=1.5".into()]).is_err());
    }
}
