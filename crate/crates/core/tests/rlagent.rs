use std::sync::{Arc, OnceLock};

use obfusim_core::envgen::*;
use obfusim_core::metrics::{LossKind, RewardSpec};
use obfusim_core::persona::{McModel, PersonaSpec};
use obfusim_core::rlagent::*;
use obfusim_core::rng::stream;
use obfusim_nn::{grad_check, OptimizerConfig, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn world() -> &'static (UrlUniverse, OracleSet, McModel) {
    static W: OnceLock<(UrlUniverse, OracleSet, McModel)> = OnceLock::new();
    W.get_or_init(|| {
        let u = UrlUniverse::build(&UniverseConfig::desk(), 12).unwrap();
        let o = OracleSet::build(&u, &OracleConfig::desk(), 12).unwrap();
        let p = [[0.6, 0.15, 0.1, 0.15], [0.15, 0.6, 0.1, 0.15], [0.1, 0.15, 0.6, 0.15], [0.2, 0.2, 0.2, 0.4]];
        let m = McModel::from_transition(p, vec![[0, 1, 2], [3, 4, 5], [6, 7, 8]], 16).unwrap();
        (u, o, m)
    })
}

fn toy_arch(actions: usize) -> AgentArch {
    AgentArch { window: 3, dim: 4, kernel_heights: vec![2, 3], filters_per_kernel: 2, hidden: 3, actions }
}

fn random_obs<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn actor_critic_gradients_match_finite_differences() {
    let mut rng = stream(1, "toy", 0);
    let mut agent = ActorCritic::new(toy_arch(5), &mut rng).unwrap();
    let episodes = (0..2)
        .map(|e| EpisodeData {
            observations: (0..3).map(|_| random_obs(&mut rng, 3, 4)).collect(),
            actions: vec![e, 4, 2],
            returns: vec![0.3, -0.2, 0.5],
            advantages: Some(vec![0.7, -0.4, 0.1]),
        })
        .collect();
    let batch = A2cBatch { episodes, value_coef: 0.5, entropy_coef: 0.05 };
    let report = grad_check(&mut agent, &batch, 1e-6).unwrap();
    assert!(report.max_relative_error < 1e-3, "{report:?}");
    assert!(report.checked > 50);
}

#[test]
fn uniform_agent_picks_each_subcategory_equally() {
    let mut rng = stream(2, "uniform", 0);
    let mut agent = ActorCritic::new(toy_arch(193), &mut rng).unwrap();
    agent.plant_actor_logits(&[0.0; 193]).unwrap();
    let mut counts = [0usize; 193];
    let mut state = agent.initial_state();
    let n = 100_000;
    for _ in 0..n {
        let out = agent.act(&random_obs(&mut rng, 3, 4), &state, ActMode::Sample, &mut rng).unwrap();
        assert!(out.probs.iter().all(|p| (p - 1.0 / 193.0).abs() < 1e-12));
        counts[out.action] += 1;
        state = out.state;
    }
    for (j, c) in counts.iter().enumerate() {
        let f = *c as f64 / n as f64;
        assert!((f - 1.0 / 193.0).abs() <= 0.005, "subcategory {j}: {f}");
    }
}

#[test]
fn undiscounted_rewards_telescope_on_real_episodes() {
    let (u, o, m) = world();
    let tracker: Arc<dyn obfusim_core::tracker::Tracker> = Arc::new(o.clone());
    let agent = ActorCritic::new(AgentArch::desk(), &mut stream(3, "agent", 0)).unwrap();
    for kind in [LossKind::L1, LossKind::L2, LossKind::L3] {
        let loss = TrackerLoss { tracker: tracker.clone(), spec: RewardSpec::new(kind, 0.0) };
        let env = RlEnv { universe: u, model: m, loss: &loss };
        let cfg = RolloutConfig { personas: 24, persona: PersonaSpec { alpha: 0.3, length: 60, init_len: 10 }, delta: 0.0, mode: ActMode::Sample };
        let mut steps = 0;
        for t in rollout(&agent, &env, &cfg, 4, 0).unwrap() {
            if t.is_empty() {
                continue;
            }
            steps += t.len();
            assert_eq!(t.losses.len(), t.len() + 1);
            let direct = t.losses[t.len()] - t.losses[0];
            assert!((t.episode_return() - direct).abs() < 1e-12, "{kind:?}: {} vs {direct}", t.episode_return());
        }
        assert!(steps > 100);
    }
}

#[test]
fn repeat_penalty_counts_the_current_pick() {
    let (u, _, m) = world();
    let mut agent = ActorCritic::new(AgentArch::desk(), &mut stream(5, "agent", 0)).unwrap();
    let mut logits = vec![-50.0; 193];
    logits[3] = 50.0;
    agent.plant_actor_logits(&logits).unwrap();
    let env = RlEnv { universe: u, model: m, loss: &PlantedLoss { subcategory: 3 } };
    let cfg = RolloutConfig { personas: 1, persona: PersonaSpec { alpha: 0.5, length: 200, init_len: 0 }, delta: 0.1, mode: ActMode::Argmax };
    let t = run_episode(&agent, &env, &cfg, 77).unwrap();
    assert!(t.actions.iter().all(|a| *a == 3));
    for (r, n) in t.rewards.iter().zip(&t.repeat_counts) {
        assert!((r - (1.0 - 0.1 * f64::from(n - 1))).abs() < 1e-12);
    }
    // ten urls per subcategory, so repeats must occur
    assert!(t.repeat_counts.iter().any(|n| *n > 1));
}

fn planted_config(rounds: usize, personas: usize) -> A2cConfig {
    A2cConfig {
        rounds,
        personas_per_round: personas,
        gamma: 0.5,
        reward: RewardSpec::new(LossKind::L1, 0.0),
        optimizer: OptimizerConfig::sgd_momentum(0.001),
        ..A2cConfig::paper()
    }
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let (u, _, m) = world();
    let env = RlEnv { universe: u, model: m, loss: &PlantedLoss { subcategory: 9 } };
    let cfg = planted_config(3, 6);
    let run = || {
        let mut agent = ActorCritic::new(AgentArch::desk(), &mut stream(6, "agent", 0)).unwrap();
        let curve = train(&mut agent, &env, &cfg, 6).unwrap();
        (curve, serde_json::to_string(&agent).unwrap())
    };
    let (c1, a1) = run();
    let (c2, a2) = run();
    assert_eq!(c1, c2);
    assert_eq!(a1, a2);
}

#[test]
fn short_desk_training_raises_the_reward() {
    let (u, _, m) = world();
    let env = RlEnv { universe: u, model: m, loss: &PlantedLoss { subcategory: 9 } };
    let mut agent = ActorCritic::new(AgentArch::desk(), &mut stream(7, "agent", 0)).unwrap();
    let curve = train(&mut agent, &env, &planted_config(20, 16), 7).unwrap();
    let first: f64 = curve[..5].iter().map(|c| c.mean_reward).sum();
    let last: f64 = curve[15..].iter().map(|c| c.mean_reward).sum();
    assert!(last > first, "reward fell from {first} to {last}");
    assert!(curve[19].entropy < curve[0].entropy);
}

#[test]
fn invalid_training_configs_are_rejected() {
    let mut cfg = A2cConfig::paper();
    cfg.gamma = 0.0;
    assert!(cfg.validate().is_err());
    cfg.gamma = 1.0;
    assert!(cfg.validate().is_ok());
    cfg.personas_per_round = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn curve_csv_has_one_row_per_round() {
    let p = CurvePoint { round: 0, mean_reward: 0.1, mean_final_loss: 0.2, policy_loss: 0.0, value_loss: 0.0, entropy: 5.0, grad_norm: 1.0, steps: 8 };
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &[p, CurvePoint { round: 1, ..p }]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}

proptest! {
    #[test]
    fn discounted_returns_satisfy_the_recursion(rewards in proptest::collection::vec(-1.0f64..1.0, 1..30), gamma in 0.01f64..1.0) {
        let g = discounted_returns(&rewards, gamma);
        let n = rewards.len();
        prop_assert!((g[n - 1] - rewards[n - 1]).abs() < 1e-15);
        for t in 0..n - 1 {
            prop_assert!((g[t] - (rewards[t] + gamma * g[t + 1])).abs() < 1e-12);
        }
        let undiscounted = discounted_returns(&rewards, 1.0);
        prop_assert!((undiscounted[0] - rewards.iter().sum::<f64>()).abs() < 1e-12);
    }
}
