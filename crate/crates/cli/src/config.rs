//! Experiment configuration: a scale preset, optionally overridden by a JSON
//! file and by `OBFUSIM_SEED` / `OBFUSIM_SCALE`.

use std::fmt;
use std::path::{Path, PathBuf};

use obfusim_core::analysis::{DetectorConfig, EvalConfig, ALPHA_GRID};
use obfusim_core::baselines::{baseline_registry, BiasEstimation};
use obfusim_core::envgen::{OracleConfig, UniverseConfig};
use obfusim_core::metrics::{LossKind, Personalization, RewardSpec};
use obfusim_core::persona::{FitConfig, SyntheticTraceConfig};
use obfusim_core::rlagent::{A2cConfig, AgentArch};
use obfusim_core::surrogate::{CollectConfig, SurrogateConfig};
use obfusim_nn::OptimizerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "OBFUSIM_SEED";
pub const SCALE_ENV: &str = "OBFUSIM_SCALE";
pub const HARPO: &str = "harpo";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl std::str::FromStr for Scale {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(CliError::Config(format!("unknown scale `{other}` (expected desk or paper)"))),
        }
    }
}

/// How many surrogates of each kind survive selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub segments: usize,
    pub bidders: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSettings {
    /// The first `types` user types of the fitted model are compared.
    pub types: usize,
    pub personas_per_type: usize,
    /// Which trained agent and bias weights are compared.
    pub reward: LossKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StealthSettings {
    pub reward: LossKind,
    /// Personas per class for each detector.
    pub personas: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub alphas: Vec<f64>,
    /// Reward the swept agents are trained on.
    pub reward: LossKind,
    /// Train a fresh agent per budget; otherwise the main agent is reused.
    pub retrain: bool,
    pub approaches: Vec<String>,
    pub personas: usize,
    /// Also fit a detector per approach and budget.
    pub stealth: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: Scale,
    pub universe: UniverseConfig,
    pub oracles: OracleConfig,
    pub traces: SyntheticTraceConfig,
    /// Real traces (`user_id,seq_no,url_id,category`) replace the synthetic ones when set.
    pub trace_csv: Option<PathBuf>,
    pub fit: FitConfig,
    pub collect: CollectConfig,
    pub surrogate: SurrogateConfig,
    pub selection: SelectionConfig,
    pub agent: AgentArch,
    pub a2c: A2cConfig,
    /// One agent and one set of bias weights per reward; `a2c.reward` only
    /// contributes its repeat penalty.
    pub rewards: Vec<LossKind>,
    /// Segment split for the personalized agent; `None` skips it.
    pub personalization: Option<Personalization>,
    pub bias: BiasEstimation,
    /// Registry names evaluated; `bias-intent` and `harpo` run once per reward.
    pub approaches: Vec<String>,
    pub eval: EvalConfig,
    pub detector: DetectorConfig,
    pub stealth: StealthSettings,
    pub adapt: AdaptSettings,
    pub sweep: SweepSettings,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    /// Laptop-sized run of the whole pipeline.
    pub fn desk() -> Self {
        let universe = UniverseConfig::desk();
        let oracles = OracleConfig::desk();
        let a2c = A2cConfig {
            gamma: 0.5,
            entropy_coef: 0.025,
            value_coef: 0.1,
            rounds: 200,
            personas_per_round: 64,
            persona_len: 100,
            init_len: 20,
            alpha: 0.1,
            reward: RewardSpec::new(LossKind::L1, 0.01),
            optimizer: OptimizerConfig { clip_norm: None, ..OptimizerConfig::sgd_momentum(0.003) },
            divergence_limit: 1e3,
            normalize_advantages: true,
        };
        let persona = a2c.persona_spec();
        Self {
            seed: 1,
            scale: Scale::Desk,
            agent: AgentArch { window: oracles.window, dim: universe.dim, ..AgentArch::desk() },
            universe,
            oracles,
            traces: SyntheticTraceConfig::default(),
            trace_csv: None,
            fit: FitConfig::default(),
            collect: CollectConfig::desk(),
            surrogate: SurrogateConfig::desk(),
            selection: SelectionConfig { segments: 20, bidders: 10 },
            a2c,
            rewards: vec![LossKind::L1, LossKind::L2, LossKind::L3],
            personalization: Some(Personalization { allowed: (0..15).collect(), disallowed: (15..20).collect(), disallowed_weight: 0.1 }),
            bias: BiasEstimation::default(),
            eval: EvalConfig { personas: 1000, persona },
            detector: DetectorConfig::desk(),
            approaches: ["control", "adnauseam", "trackthis", "rand-intent", "bias-intent", "harpo"].map(String::from).to_vec(),
            stealth: StealthSettings { reward: LossKind::L1, personas: 500 },
            adapt: AdaptSettings { types: 10, personas_per_type: 300, reward: LossKind::L3 },
            sweep: SweepSettings {
                alphas: ALPHA_GRID.to_vec(),
                reward: LossKind::L3,
                retrain: true,
                approaches: ["rand-intent", "bias-intent", "harpo"].map(String::from).to_vec(),
                personas: 1000,
                stealth: true,
            },
        }
    }

    /// Sizes and schedules of the original study.
    pub fn paper() -> Self {
        let universe = UniverseConfig::paper();
        let oracles = OracleConfig::paper();
        let a2c = A2cConfig::paper();
        let persona = a2c.persona_spec();
        Self {
            scale: Scale::Paper,
            agent: AgentArch { window: oracles.window, dim: universe.dim, ..AgentArch::paper() },
            universe,
            oracles,
            collect: CollectConfig::paper(),
            surrogate: SurrogateConfig::paper(),
            a2c,
            eval: EvalConfig { personas: 1000, persona },
            detector: DetectorConfig::paper(),
            stealth: StealthSettings { reward: LossKind::L1, personas: 1000 },
            adapt: AdaptSettings { types: 20, personas_per_type: 50, reward: LossKind::L1 },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        self.oracles.validate()?;
        self.a2c.validate()?;
        self.eval.persona.validate()?;
        self.detector.validate()?;
        self.surrogate.validate()?;
        if self.agent.window != self.oracles.window || self.agent.dim != self.universe.dim {
            return Err(CliError::Config(format!(
                "agent observes {}x{} windows but the trackers use {}x{}",
                self.agent.window, self.agent.dim, self.oracles.window, self.universe.dim
            )));
        }
        if self.agent.actions != self.universe.intent_subcategories {
            return Err(CliError::Config(format!("agent has {} actions for {} subcategories", self.agent.actions, self.universe.intent_subcategories)));
        }
        if self.selection.segments == 0 || self.selection.bidders == 0 {
            return Err(CliError::Config("at least one segment and one bidder surrogate must be selected".into()));
        }
        if self.rewards.is_empty() {
            return Err(CliError::Config("`rewards` must name at least one loss".into()));
        }
        if let Some(p) = &self.personalization {
            p.validate(Some(self.selection.segments))?;
        }
        if self.eval.personas == 0 || self.stealth.personas < 5 || self.sweep.personas == 0 {
            return Err(CliError::Config("evaluation, stealth and sweep need personas".into()));
        }
        let known = known_approaches();
        for name in self.approaches.iter().chain(&self.sweep.approaches) {
            if !known.contains(name) {
                return Err(CliError::Config(format!("unknown approach `{name}` (known: {})", known.join(", "))));
            }
        }
        for (what, kind) in [("stealth", self.stealth.reward), ("adapt", self.adapt.reward), ("sweep", self.sweep.reward)] {
            if !self.rewards.contains(&kind) {
                return Err(CliError::Config(format!("{what} uses {kind:?}, which is not in `rewards`")));
            }
        }
        if self.adapt.types < 2 || self.adapt.personas_per_type == 0 {
            return Err(CliError::Config("adaptiveness needs at least two types and one persona per type".into()));
        }
        if self.sweep.alphas.is_empty() || self.sweep.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(CliError::Config(format!("sweep budgets {:?} must lie in (0, 1)", self.sweep.alphas)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Overrides from the command line; they win over the environment, which
/// wins over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<Scale>,
}

/// Names the registry can resolve: the baselines plus the trained agent.
pub fn known_approaches() -> Vec<String> {
    let mut names = baseline_registry(None).names();
    names.push(HARPO.to_string());
    names
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn env_value(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

/// Resolves the configuration from a JSON document that may hold any subset
/// of the fields; everything missing comes from the scale preset.
pub fn resolve(file_text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let file: Value = serde_json::from_str(file_text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    if !file.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    let file_scale = match file.get("scale") {
        Some(Value::String(s)) => Some(s.parse::<Scale>()?),
        Some(other) => return Err(CliError::Config(format!("`scale` must be a string, got {other}"))),
        None => None,
    };
    let env_scale = env_value(SCALE_ENV).map(|s| s.parse::<Scale>()).transpose()?;
    let scale = overrides.scale.or(env_scale).or(file_scale).unwrap_or(Scale::Desk);

    let mut value = serde_json::to_value(ExperimentConfig::preset(scale)).expect("preset serializes");
    merge(&mut value, file);
    value["scale"] = serde_json::to_value(scale).expect("scale serializes");
    let env_seed = env_value(SEED_ENV)
        .map(|s| s.trim().parse::<u64>().map_err(|_| CliError::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))))
        .transpose()?;
    if let Some(seed) = overrides.seed.or(env_seed) {
        value["seed"] = Value::from(seed);
    }
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    resolve(&text, overrides)
}
