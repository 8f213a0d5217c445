//! The obfuscation MDP and its advantage actor-critic agent.

mod env;
mod network;
mod rollout;
mod train;

pub use env::{LossModel, PlantedLoss, RlEnv, TrackerLoss};
pub use network::{A2cBatch, ActMode, ActOutput, ActorCritic, AgentArch, EpisodeData, LossComponents};
pub use rollout::{discounted_returns, rollout, run_episode, AgentSession, EpisodeTrace, RolloutConfig, StepRecord};
pub use train::{a2c_update, batch_from_traces, train, write_curve_csv, A2cConfig, CurvePoint, HarpoObfuscator};
