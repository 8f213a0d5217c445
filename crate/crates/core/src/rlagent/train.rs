use std::io::Write;
use std::sync::Arc;

use obfusim_nn::{backward_and_step, Objective, Optimizer, OptimizerConfig};
use serde::{Deserialize, Serialize};

use super::env::RlEnv;
use super::network::{A2cBatch, ActMode, ActorCritic, EpisodeData, LossComponents};
use super::rollout::{discounted_returns, rollout, EpisodeTrace, RolloutConfig};
use crate::error::{CoreError, Result};
use crate::metrics::{LossKind, RewardSpec};
use crate::persona::PersonaSpec;
use crate::selector::{ObfuscationSession, Obfuscator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2cConfig {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub rounds: usize,
    pub personas_per_round: usize,
    pub persona_len: usize,
    pub init_len: usize,
    pub alpha: f64,
    pub reward: RewardSpec,
    pub optimizer: OptimizerConfig,
    /// Training aborts once the mean |V_t| of a round exceeds this.
    pub divergence_limit: f64,
    /// Standardize `G_t − V_t` over each batch before the policy step.
    #[serde(default)]
    pub normalize_advantages: bool,
}

impl A2cConfig {
    pub fn paper() -> Self {
        Self {
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            rounds: 300,
            personas_per_round: 50,
            persona_len: 100,
            init_len: 20,
            alpha: 0.1,
            reward: RewardSpec::new(LossKind::L1, 0.01),
            optimizer: OptimizerConfig::sgd_momentum(0.001),
            divergence_limit: 1e3,
            normalize_advantages: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(CoreError::Config("loss coefficients must be nonnegative".into()));
        }
        if self.rounds == 0 || self.personas_per_round == 0 {
            return Err(CoreError::Config("rounds and personas_per_round must be positive".into()));
        }
        self.persona_spec().validate()?;
        self.reward.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn persona_spec(&self) -> PersonaSpec {
        PersonaSpec { alpha: self.alpha, length: self.persona_len, init_len: self.init_len }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig { personas: self.personas_per_round, persona: self.persona_spec(), delta: self.reward.delta, mode: ActMode::Sample }
    }
}

/// Turns finished episodes into the training batch.
pub fn batch_from_traces(traces: &[EpisodeTrace], config: &A2cConfig) -> A2cBatch {
    let mut episodes: Vec<EpisodeData> = traces
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| EpisodeData {
            observations: t.observations.clone(),
            actions: t.actions.clone(),
            returns: discounted_returns(&t.rewards, config.gamma),
            advantages: None,
        })
        .collect();
    if config.normalize_advantages {
        // the recorded values come from the same parameters the update starts from
        let raw: Vec<Vec<f64>> = episodes
            .iter()
            .zip(traces.iter().filter(|t| !t.is_empty()))
            .map(|(e, t)| e.returns.iter().zip(&t.values).map(|(g, v)| g - v).collect())
            .collect();
        let all: Vec<f64> = raw.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
        for (e, r) in episodes.iter_mut().zip(raw) {
            e.advantages = Some(r.into_iter().map(|a| (a - mean) * scale).collect());
        }
    }
    A2cBatch { episodes, value_coef: config.value_coef, entropy_coef: config.entropy_coef }
}

/// One optimizer step on the combined actor-critic loss.
pub fn a2c_update(agent: &mut ActorCritic, traces: &[EpisodeTrace], config: &A2cConfig, optimizer: &mut Optimizer) -> Result<LossComponents> {
    let batch = batch_from_traces(traces, config);
    if batch.episodes.is_empty() {
        return Err(CoreError::InvalidInput("no obfuscation steps to learn from".into()));
    }
    agent.forward(&batch).map_err(|e| CoreError::Diverged(format!("A2C forward failed: {e}")))?;
    let stats = backward_and_step(agent, optimizer).map_err(|e| CoreError::Diverged(format!("A2C update failed: {e}")))?;
    Ok(LossComponents { grad_norm: stats.grad_norm, ..agent.last_components() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub mean_reward: f64,
    pub mean_final_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the full schedule. Identical seeds give identical curves and weights.
pub fn train(agent: &mut ActorCritic, env: &RlEnv<'_>, config: &A2cConfig, seed: u64) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let rollout_config = config.rollout();
    let mut curve = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let traces = rollout(agent, env, &rollout_config, seed, round)?;
        let n = traces.len() as f64;
        let steps: usize = traces.iter().map(EpisodeTrace::len).sum();
        let mean_abs_value = if steps > 0 { traces.iter().flat_map(|t| &t.values).map(|v| v.abs()).sum::<f64>() / steps as f64 } else { 0.0 };
        if !(mean_abs_value <= config.divergence_limit) {
            return Err(CoreError::Diverged(format!("round {round}: mean |V| = {mean_abs_value:.3e} exceeds {:.1e}", config.divergence_limit)));
        }
        let comps = if steps > 0 { a2c_update(agent, &traces, config, &mut optimizer)? } else { LossComponents::default() };
        let point = CurvePoint {
            round,
            mean_reward: traces.iter().map(EpisodeTrace::episode_return).sum::<f64>() / n,
            mean_final_loss: traces.iter().map(|t| t.final_loss).sum::<f64>() / n,
            policy_loss: comps.policy,
            value_loss: comps.value,
            entropy: comps.entropy,
            grad_norm: comps.grad_norm,
            steps,
        };
        log::debug!("round {round}: reward {:.4} final loss {:.4} entropy {:.3}", point.mean_reward, point.mean_final_loss, point.entropy);
        curve.push(point);
    }
    Ok(curve)
}

/// A trained agent exposed as a registry selector.
pub struct HarpoObfuscator {
    name: String,
    agent: Arc<ActorCritic>,
    mode: ActMode,
}

impl HarpoObfuscator {
    pub fn new(name: impl Into<String>, agent: Arc<ActorCritic>, mode: ActMode) -> Self {
        Self { name: name.into(), agent, mode }
    }

    pub fn agent(&self) -> &ActorCritic {
        &self.agent
    }
}

impl Obfuscator for HarpoObfuscator {
    fn name(&self) -> &str {
        &self.name
    }

    fn selects_intents(&self) -> bool {
        true
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_> {
        Box::new(super::rollout::AgentSession::new(&self.agent, self.mode))
    }
}
