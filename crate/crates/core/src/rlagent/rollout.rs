use obfusim_nn::{LstmState, Tensor};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::RlEnv;
use super::network::{ActMode, ActorCritic};
use crate::envgen::{UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::metrics::reward;
use crate::persona::{build_persona, sample_user_type, Persona, PersonaSpec, Source, Visit};
use crate::rng::{derive_seed, SimRng};
use crate::selector::ObfuscationSession;

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub observation: Tensor,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub url: UrlId,
}

/// Drives the agent as a persona's obfuscation selector, one recurrent step
/// per obfuscation visit.
pub struct AgentSession<'a> {
    agent: &'a ActorCritic,
    mode: ActMode,
    state: LstmState,
    pub records: Vec<StepRecord>,
}

impl<'a> AgentSession<'a> {
    pub fn new(agent: &'a ActorCritic, mode: ActMode) -> Self {
        Self { agent, mode, state: agent.initial_state(), records: Vec::new() }
    }
}

impl ObfuscationSession for AgentSession<'_> {
    fn select(&mut self, universe: &UrlUniverse, history: &[Visit], rng: &mut SimRng) -> Result<UrlId> {
        let ids: Vec<UrlId> = history.iter().map(|v| v.url).collect();
        let observation = universe.window(&ids, self.agent.arch().window);
        let out = self.agent.act(&observation, &self.state, self.mode, rng)?;
        let urls = universe.intent_urls(out.action);
        let url = urls[rng.random_range(0..urls.len())];
        self.state = out.state;
        self.records.push(StepRecord { observation, action: out.action, log_prob: out.log_prob, value: out.value, url });
        Ok(url)
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub persona: Persona,
    pub observations: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// `L_0..L_T`: the loss just before the first obfuscation visit, then right after each one.
    pub losses: Vec<f64>,
    pub repeat_counts: Vec<u32>,
    /// Loss of the finished persona.
    pub final_loss: f64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub personas: usize,
    pub persona: PersonaSpec,
    pub delta: f64,
    pub mode: ActMode,
}

/// Discounted returns `G_t = r_t + γ G_{t+1}` within one episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// Builds one persona with the agent as selector and scores every obfuscation step.
pub fn run_episode(agent: &ActorCritic, env: &RlEnv<'_>, config: &RolloutConfig, persona_seed: u64) -> Result<EpisodeTrace> {
    let user_type = sample_user_type(env.model, persona_seed);
    let mut session = AgentSession::new(agent, config.mode);
    let persona = build_persona(env.model, env.universe, &config.persona, user_type, &mut session, persona_seed)?;
    let positions: Vec<usize> = persona.visits.iter().enumerate().filter(|(_, v)| v.source == Source::Obfuscation).map(|(i, _)| i).collect();
    debug_assert_eq!(positions.len(), session.records.len());
    let mut losses = Vec::with_capacity(positions.len() + 1);
    let mut rewards = Vec::with_capacity(positions.len());
    let mut repeat_counts = Vec::with_capacity(positions.len());
    if let Some(first) = positions.first() {
        losses.push(env.loss.loss(env.universe, &persona.visits[..*first])?);
    }
    let mut seen: Vec<UrlId> = Vec::with_capacity(positions.len());
    for &pos in &positions {
        let url = persona.visits[pos].url;
        seen.push(url);
        let n = seen.iter().filter(|u| **u == url).count() as u32;
        let l = env.loss.loss(env.universe, &persona.visits[..=pos])?;
        rewards.push(reward(l, *losses.last().expect("initial loss recorded"), n, config.delta));
        losses.push(l);
        repeat_counts.push(n);
    }
    let final_loss = env.loss.loss(env.universe, &persona.visits)?;
    let records = session.records;
    Ok(EpisodeTrace {
        persona,
        observations: records.iter().map(|r| r.observation.clone()).collect(),
        actions: records.iter().map(|r| r.action).collect(),
        log_probs: records.iter().map(|r| r.log_prob).collect(),
        values: records.iter().map(|r| r.value).collect(),
        rewards,
        losses,
        repeat_counts,
        final_loss,
    })
}

/// One batch of episodes; persona `i` of round `round` always uses the same seed.
pub fn rollout(agent: &ActorCritic, env: &RlEnv<'_>, config: &RolloutConfig, seed: u64, round: usize) -> Result<Vec<EpisodeTrace>> {
    if config.personas == 0 {
        return Err(CoreError::Config("rollout needs at least one persona".into()));
    }
    (0..config.personas)
        .into_par_iter()
        .map(|i| run_episode(agent, env, config, derive_seed(seed, "rollout", ((round as u64) << 32) | i as u64)))
        .collect()
}
