//! Experiment configuration. Every field is checked against the model
//! before anything runs, and errors carry the JSON path of the offending
//! field.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::Deserialize;
use serde_json::Value as Json;

use scmdyn_core::bandit::{BanditParams, OpeSettings, PolicyRule, Protocol};
use scmdyn_core::lending::{
    BureauSettings, Criterion, GroupModelSpec, LendingParams, RobustnessVariant, ScoreTransform, ThresholdSearch,
};
use scmdyn_core::{Input, Method, NoisePrior};

use crate::error::Failure;

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label recorded in the manifest.
    pub name: String,
    /// Root seed. Every random stream of the run derives from it.
    pub seed: u64,
    pub model: ModelConfig,
    /// Applied to the model before any task runs.
    #[serde(default)]
    pub interventions: Vec<InterventionConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Bandit {
        #[serde(default)]
        params: BanditParams,
    },
    Lending {
        #[serde(default)]
        groups: GroupsConfig,
        #[serde(default)]
        params: LendingParams,
    },
    /// A model description file, relative to the config file.
    Custom { file: PathBuf },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Bandit { .. } => "bandit",
            ModelConfig::Lending { .. } => "lending",
            ModelConfig::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupsConfig {
    Spec(GroupModelSpec),
    /// Tabulated curves with columns `score,cdf_0,rho_0,cdf_1,rho_1`.
    Csv { path: PathBuf, theta: f64 },
}

impl Default for GroupsConfig {
    fn default() -> Self {
        GroupsConfig::Spec(GroupModelSpec::default())
    }
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InterventionConfig {
    /// `do(node = value)`.
    Do { node: String, value: f64 },
    /// Replaces the node's equation with a registered mechanism.
    DoPolicy {
        node: String,
        equation: String,
        #[serde(default = "empty_object")]
        params: Json,
        /// Defaults to the node's current inputs.
        #[serde(default)]
        inputs: Option<Vec<Input>>,
    },
    /// Replaces an exogenous node's prior.
    Prior { node: String, prior: NoisePrior },
}

fn empty_object() -> Json {
    Json::Object(Default::default())
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_worlds: usize,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluateConfig {
    /// Model-based mean of one node's first instance.
    Query { node: String, n: usize },
    /// Value of each policy on `E[O]`.
    BanditPolicies {
        policies: Vec<PolicyRule>,
        #[serde(default = "model_based")]
        method: Method,
        /// Logging policy, required for IS and CF.
        #[serde(default)]
        behavior: Option<PolicyRule>,
        /// Worlds for MB, logged records for IS and CF.
        n: usize,
        #[serde(default = "one")]
        m_posterior: usize,
    },
    /// `E[Util]` and `E[Delta_j]` under threshold policies.
    LendingPolicies {
        policies: Vec<LendingPolicyConfig>,
        n_worlds: usize,
        #[serde(default)]
        search: ThresholdSearch,
        #[serde(default)]
        bureau: Option<ScoreTransform>,
        /// Additive shift of each group's repayment probability.
        #[serde(default)]
        government: Option<[f64; 2]>,
    },
}

fn model_based() -> Method {
    Method::Mb
}

fn one() -> usize {
    1
}

/// A searched criterion, or `Manual` with explicit thresholds.
#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LendingPolicyConfig {
    pub criterion: Criterion,
    #[serde(default)]
    pub tau: Option<[f64; 2]>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, JsonSchema)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    /// IS, MB and CF on every ordered policy pair.
    BanditOpe {
        protocol: Protocol,
        #[serde(default)]
        settings: OpeSettings,
    },
    /// Threshold surface and criterion sensitivity under a bureau transform.
    LendingBureau {
        #[serde(default)]
        settings: BureauSettings,
    },
    /// Sensitivity to the marginal-outcome variants per step count.
    LendingRobustness {
        steps: Vec<usize>,
        #[serde(default = "robustness_variants")]
        variants: Vec<RobustnessVariant>,
        n_worlds: usize,
        #[serde(default)]
        search: ThresholdSearch,
    },
}

fn robustness_variants() -> Vec<RobustnessVariant> {
    vec![RobustnessVariant::MarginalThresholds, RobustnessVariant::MarginalSampling]
}

impl SweepConfig {
    pub fn model_kind(&self) -> &'static str {
        match self {
            SweepConfig::BanditOpe { .. } => "bandit",
            SweepConfig::LendingBureau { .. } | SweepConfig::LendingRobustness { .. } => "lending",
        }
    }
}

/// A parsed config with its raw bytes and directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Vec<u8>,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.dir.join(path)
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig, Failure> {
    let raw = std::fs::read(path).map_err(|e| Failure::io(format!("reading {}", path.display()), e))?;
    let config = parse(&raw)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, raw, dir })
}

pub fn parse(raw: &[u8]) -> Result<ExperimentConfig, Failure> {
    let mut de = serde_json::Deserializer::from_slice(raw);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Failure::Schema {
            field: if path == "." { String::new() } else { path },
            message: inner.to_string(),
            line: Some(inner.line()),
            column: Some(inner.column()),
        }
    })?;
    de.end().map_err(|e| Failure::schema("", e.to_string()))?;
    Ok(config)
}

pub fn schema() -> Json {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}
