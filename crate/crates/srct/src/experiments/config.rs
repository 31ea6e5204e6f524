//! Versioned TOML configuration.
//!
//! Every section is optional and falls back to the defaults of the reference
//! experiment suite. Unknown keys anywhere in the file are rejected with an
//! error naming the key, and `schema_version` must match
//! [`SCHEMA_VERSION`].

use std::path::Path;

use crate::dynamics::NoiseModel;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::metrics::EventConfig;

use super::universe::UniverseConfig;

/// Schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// The three scalar-objective methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Star,
    Grpo,
    Dpo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Star, Method::Grpo, Method::Dpo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Star => "star",
            Method::Grpo => "grpo",
            Method::Dpo => "dpo",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Method::Star),
            "grpo" => Ok(Method::Grpo),
            "dpo" => Ok(Method::Dpo),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected star, grpo or dpo)"
            ))),
        }
    }
}

/// Per-method scalar.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerMethod {
    pub star: f64,
    pub grpo: f64,
    pub dpo: f64,
}

impl PerMethod {
    pub fn get(&self, m: Method) -> f64 {
        match m {
            Method::Star => self.star,
            Method::Grpo => self.grpo,
            Method::Dpo => self.dpo,
        }
    }
}

/// Shared integrator settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub step_size: f64,
    pub steps: usize,
    pub record_every: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            step_size: 0.15,
            steps: 5000,
            record_every: 1,
        }
    }
}

/// Study A: collapse modes of the three methods.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyAConfig {
    pub methods: Vec<Method>,
    /// Entropy barrier per method.
    pub eps: PerMethod,
    /// Include the deterministic track (fields evaluated at `p`).
    pub deterministic: bool,
    /// Mini-batch tracks.
    pub batch_sizes: Vec<u64>,
    pub noise_model: NoiseModel,
    /// Standard deviation of the Gaussian initial logits.
    pub init_logit_sd: f64,
}

impl Default for StudyAConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            eps: PerMethod {
                star: 0.0,
                grpo: 3e-4,
                dpo: 3e-4,
            },
            deterministic: true,
            batch_sizes: vec![16, 64],
            noise_model: NoiseModel::Sampling,
            init_logit_sd: 1.5,
        }
    }
}

/// Study A+: theory versus algorithm-faithful procedural updates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub methods: Vec<Method>,
    pub batch_size: u64,
    /// STaR draws per step `L`; default 16 for `B ≤ 16`, else 64.
    pub star_max_draws: Option<usize>,
    /// GRPO group size `m`; default 8 / 16 / 32 for `B ≤ 16 / ≤ 64 / larger`.
    pub grpo_group: Option<usize>,
    /// DPO pairs per step; default `B/2`.
    pub dpo_pairs: Option<usize>,
    /// Davidson tie parameter `ν`.
    pub davidson_nu: f64,
    /// Procedural step sizes (fixed table replacing anchor calibration).
    pub step_sizes: PerMethod,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            batch_size: 64,
            star_max_draws: None,
            grpo_group: None,
            dpo_pairs: None,
            davidson_nu: 1.0,
            step_sizes: PerMethod {
                star: 0.15,
                grpo: 1.5,
                dpo: 1.0,
            },
        }
    }
}

impl AlignmentConfig {
    pub fn star_draws(&self) -> usize {
        self.star_max_draws
            .unwrap_or(if self.batch_size <= 16 { 16 } else { 64 })
    }

    pub fn group_size(&self) -> usize {
        self.grpo_group.unwrap_or(match self.batch_size {
            0..=16 => 8,
            17..=64 => 16,
            _ => 32,
        })
    }

    pub fn pairs(&self) -> usize {
        self.dpo_pairs.unwrap_or((self.batch_size / 2).max(1) as usize)
    }
}

/// Study B: the diversity-regularised objective over an `(α, β)` grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub lambda: f64,
    pub eps_barrier: f64,
    pub batch_size: u64,
    pub noise_model: NoiseModel,
    pub init_logit_sd: f64,
    /// Grid cell whose trajectories and ablations are written out.
    pub focal: [f64; 2],
    pub entropy_only: bool,
    pub ungated: bool,
    /// Optional dense semantic kernel (whitespace-separated rows) replacing
    /// the cluster kernel.
    pub kernel: Option<String>,
    /// Cluster mass counted as covered.
    pub coverage_threshold: f64,
    /// Fraction of the run (from the end) averaged for kernel energy.
    pub tail_fraction: f64,
}

impl Default for StudyBConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.02, 0.05, 0.10],
            betas: vec![0.10, 0.25, 0.50, 0.75],
            lambda: 1.0,
            eps_barrier: 1e-4,
            batch_size: 128,
            noise_model: NoiseModel::FitnessOnly,
            init_logit_sd: 1.0,
            focal: [0.05, 0.25],
            entropy_only: true,
            ungated: true,
            kernel: None,
            coverage_threshold: 0.05,
            tail_fraction: 0.5,
        }
    }
}

/// Parameters of the canonical (closed-form) score fields.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsConfig {
    pub grpo_group_size: usize,
    pub dpo_beta: f64,
    pub dpo_ell0: f64,
    /// Trim used by envelope and bound reports.
    pub delta: f64,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        Self {
            grpo_group_size: 4,
            dpo_beta: 1.0,
            dpo_ell0: 0.0,
            delta: 0.01,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![101, 202, 303, 404, 505]
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub universe: UniverseConfig,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub events: EventConfig,
    #[serde(default)]
    pub fields: FieldsConfig,
    #[serde(default)]
    pub study_a: StudyAConfig,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub study_b: StudyBConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds: default_seeds(),
            universe: UniverseConfig::default(),
            flow: FlowSection::default(),
            events: EventConfig::default(),
            fields: FieldsConfig::default(),
            study_a: StudyAConfig::default(),
            alignment: AlignmentConfig::default(),
            study_b: StudyBConfig::default(),
        }
    }
}

impl Config {
    /// Parses and validates TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks value ranges that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let f = &self.flow;
        if !(f.step_size > 0.0 && f.step_size < 1.0) {
            return bad(format!("flow.step_size = {} must lie in (0, 1)", f.step_size));
        }
        if f.record_every == 0 {
            return bad("flow.record_every must be at least 1".into());
        }
        if self.events.window == 0 {
            return bad("events.window must be at least 1".into());
        }
        let fl = &self.fields;
        if fl.grpo_group_size < 2 {
            return bad("fields.grpo_group_size must be at least 2".into());
        }
        if !(fl.dpo_beta > 0.0) {
            return bad("fields.dpo_beta must be positive".into());
        }
        let s = self.universe.cluster_sizes.iter().sum::<usize>() + self.universe.n_incorrect;
        if !(fl.delta > 0.0 && fl.delta < 1.0 / s as f64) {
            return bad(format!("fields.delta = {} must lie in (0, 1/S)", fl.delta));
        }
        let a = &self.study_a;
        for (name, e) in [("star", a.eps.star), ("grpo", a.eps.grpo), ("dpo", a.eps.dpo)] {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("study_a.eps.{name} must be nonnegative"));
            }
        }
        if a.batch_sizes.contains(&0) {
            return bad("study_a.batch_sizes entries must be at least 1".into());
        }
        if !(a.init_logit_sd >= 0.0) {
            return bad("study_a.init_logit_sd must be nonnegative".into());
        }
        let al = &self.alignment;
        if al.batch_size == 0 {
            return bad("alignment.batch_size must be at least 1".into());
        }
        if !(al.davidson_nu >= 0.0) {
            return bad("alignment.davidson_nu must be nonnegative".into());
        }
        let b = &self.study_b;
        if b.alphas.is_empty() || b.betas.is_empty() {
            return bad("study_b.alphas and study_b.betas must not be empty".into());
        }
        if b.alphas.iter().chain(&b.betas).any(|x| !(*x >= 0.0)) || !(b.lambda >= 0.0) || !(b.eps_barrier >= 0.0) {
            return bad("study_b coefficients must be nonnegative".into());
        }
        if b.batch_size == 0 {
            return bad("study_b.batch_size must be at least 1".into());
        }
        if !(b.tail_fraction > 0.0 && b.tail_fraction <= 1.0) {
            return bad("study_b.tail_fraction must lie in (0, 1]".into());
        }
        if let Some(text) = &b.kernel {
            let k = KernelMatrix::from_text(text).map_err(|e| Error::Config(format!("study_b.kernel: {e}")))?;
            if k.size() != s {
                return bad(format!("study_b.kernel is {0}x{0}, universe has {s} traces", k.size()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = Config::from_toml_str("schema_version = 1\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_toml_str("schema_version = 1\n[flow]\nstep_sise = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("step_sise"), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn wrong_schema_version() {
        assert!(Config::from_toml_str("schema_version = 2\n").unwrap_err().is_config());
    }

    #[test]
    fn round_trip() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}
