use obfusim_nn::{
    argmax, entropy, log_softmax, softmax, Activation, CnnCache, CnnConfig, DenseHead, FinalActivation, HeadCache, LstmCell, LstmState,
    LstmStepCache, NnError, Objective, Param, Parameters, Tensor, TextCnnEncoder,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentArch {
    pub window: usize,
    pub dim: usize,
    pub kernel_heights: Vec<usize>,
    pub filters_per_kernel: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl AgentArch {
    pub fn desk() -> Self {
        Self { window: 5, dim: 32, kernel_heights: vec![3, 4, 5], filters_per_kernel: 16, hidden: 32, actions: 193 }
    }

    pub fn paper() -> Self {
        Self { window: 20, dim: 300, kernel_heights: vec![3, 4, 5], filters_per_kernel: 100, hidden: 256, actions: 193 }
    }

    pub fn cnn(&self) -> CnnConfig {
        CnnConfig {
            rows: self.window,
            cols: self.dim,
            kernel_heights: self.kernel_heights.clone(),
            filters_per_kernel: self.filters_per_kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActMode {
    Sample,
    Argmax,
}

#[derive(Clone, Debug)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub probs: Vec<f64>,
    pub state: LstmState,
}

/// One persona's worth of training data for the combined loss.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub observations: Vec<Tensor>,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
    /// Fixed advantages; when absent they are `G_t − V_t` from the forward pass, held constant.
    pub advantages: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct A2cBatch {
    pub episodes: Vec<EpisodeData>,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// `policy`, `value` and `entropy` are per-step means for reporting; `total`
/// is the summed objective that is actually differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub mean_abs_value: f64,
    pub steps: usize,
    /// Pre-clip gradient norm of the update, filled in by the trainer.
    pub grad_norm: f64,
}

struct StepCache {
    cnn: CnnCache,
    lstm: LstmStepCache,
    actor: HeadCache,
    critic: HeadCache,
    dlogits: Vec<f64>,
    dvalue: f64,
}

/// CNN encoder → LSTM → softmax actor over intent subcategories, plus a scalar critic.
#[derive(Serialize, Deserialize)]
pub struct ActorCritic {
    arch: AgentArch,
    encoder: TextCnnEncoder,
    lstm: LstmCell,
    actor: DenseHead,
    critic: DenseHead,
    #[serde(skip)]
    pending: Option<Vec<Vec<StepCache>>>,
    #[serde(skip)]
    last: LossComponents,
}

impl Clone for ActorCritic {
    /// Clones the weights; a pending forward pass is not carried over.
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.clone(),
            lstm: self.lstm.clone(),
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            pending: None,
            last: self.last,
        }
    }
}

impl std::fmt::Debug for ActorCritic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActorCritic").field("arch", &self.arch).field("params", &self.num_params()).finish()
    }
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(arch: AgentArch, rng: &mut R) -> Result<Self> {
        if arch.actions == 0 || arch.hidden == 0 {
            return Err(CoreError::Config("agent needs at least one action and one hidden unit".into()));
        }
        let encoder = TextCnnEncoder::new(arch.cnn(), rng)?;
        let lstm = LstmCell::new(encoder.output_dim(), arch.hidden, rng);
        let actor = DenseHead::new(&[arch.hidden, arch.actions], Activation::Tanh, FinalActivation::Softmax, rng)?;
        let critic = DenseHead::new(&[arch.hidden, 1], Activation::Tanh, FinalActivation::Identity, rng)?;
        Ok(Self { arch, encoder, lstm, actor, critic, pending: None, last: LossComponents::default() })
    }

    pub fn arch(&self) -> &AgentArch {
        &self.arch
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.arch.hidden)
    }

    /// Actor logits, value and next recurrent state for one observation.
    pub fn evaluate(&self, observation: &Tensor, state: &LstmState) -> Result<(Vec<f64>, f64, LstmState)> {
        let cnn = self.encoder.forward(observation)?;
        let (next, _) = self.lstm.step(cnn.output(), state)?;
        let actor = self.actor.forward(&next.h)?;
        let critic = self.critic.forward(&next.h)?;
        Ok((actor.logits, critic.logits[0], next))
    }

    pub fn act<R: Rng + ?Sized>(&self, observation: &Tensor, state: &LstmState, mode: ActMode, rng: &mut R) -> Result<ActOutput> {
        let (logits, value, state) = self.evaluate(observation, state)?;
        let probs = softmax(&logits);
        let action = match mode {
            ActMode::Argmax => argmax(&probs),
            ActMode::Sample => {
                let mut x: f64 = rng.random();
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    if x < *p {
                        pick = i;
                        break;
                    }
                    x -= p;
                }
                pick
            }
        };
        let log_prob = log_softmax(&logits)[action];
        Ok(ActOutput { action, log_prob, value, probs, state })
    }

    /// Loss components of the most recent forward pass.
    pub fn last_components(&self) -> LossComponents {
        self.last
    }

    /// Zeroes the actor weights and sets its bias, so the logits equal `logits`
    /// for every observation.
    pub fn plant_actor_logits(&mut self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.arch.actions || self.actor.params().len() != 2 {
            return Err(CoreError::InvalidInput(format!("expected {} logits, got {}", self.arch.actions, logits.len())));
        }
        let mut params = self.actor.params_mut();
        params[0].value.data_mut().iter_mut().for_each(|w| *w = 0.0);
        params[1].value.data_mut().copy_from_slice(logits);
        Ok(())
    }
}

impl Parameters for ActorCritic {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.lstm.params());
        p.extend(self.actor.params());
        p.extend(self.critic.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.lstm.params_mut());
        p.extend(self.actor.params_mut());
        p.extend(self.critic.params_mut());
        p
    }
}

impl Objective for ActorCritic {
    type Sample = A2cBatch;

    /// Mean over all steps of `−log π(a|s)·A + c_v (G − V)² − β H(π)`.
    fn forward(&mut self, batch: &A2cBatch) -> obfusim_nn::Result<f64> {
        let steps: usize = batch.episodes.iter().map(|e| e.actions.len()).sum();
        if steps == 0 {
            return Err(NnError::Config("A2C batch has no steps".into()));
        }
        let mut comps = LossComponents { steps, ..Default::default() };
        let mut all = Vec::with_capacity(batch.episodes.len());
        for ep in &batch.episodes {
            let t_len = ep.actions.len();
            if ep.observations.len() != t_len || ep.returns.len() != t_len || ep.advantages.as_ref().is_some_and(|a| a.len() != t_len) {
                return Err(NnError::Config("episode arrays have inconsistent lengths".into()));
            }
            let mut state = LstmState::zeros(self.arch.hidden);
            let mut caches = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let cnn = self.encoder.forward(&ep.observations[t])?;
                let (next, lstm) = self.lstm.step(cnn.output(), &state)?;
                let actor = self.actor.forward(&next.h)?;
                let critic = self.critic.forward(&next.h)?;
                let v = critic.logits[0];
                let a = ep.actions[t];
                if a >= self.arch.actions {
                    return Err(NnError::Config(format!("action {a} out of range")));
                }
                let adv = ep.advantages.as_ref().map_or(ep.returns[t] - v, |adv| adv[t]);
                let logp = log_softmax(&actor.logits);
                let p = softmax(&actor.logits);
                let (h, dh) = entropy(&actor.logits);
                let diff = ep.returns[t] - v;
                comps.policy += -logp[a] * adv;
                comps.value += diff * diff;
                comps.entropy += h;
                comps.mean_abs_value += v.abs();
                let dlogits: Vec<f64> = p
                    .iter()
                    .zip(&dh)
                    .enumerate()
                    .map(|(i, (pi, dhi))| adv * (pi - f64::from(u8::from(i == a))) - batch.entropy_coef * dhi)
                    .collect();
                let dvalue = -2.0 * batch.value_coef * diff;
                caches.push(StepCache { cnn, lstm, actor, critic, dlogits, dvalue });
                state = next;
            }
            all.push(caches);
        }
        comps.total = comps.policy + batch.value_coef * comps.value - batch.entropy_coef * comps.entropy;
        let n = steps as f64;
        comps.policy /= n;
        comps.value /= n;
        comps.entropy /= n;
        comps.mean_abs_value /= n;
        if !comps.total.is_finite() {
            return Err(NnError::NonFinite(format!("A2C loss is {}", comps.total)));
        }
        self.last = comps;
        self.pending = Some(all);
        Ok(comps.total)
    }

    fn backward(&mut self) -> obfusim_nn::Result<()> {
        let all = self.pending.take().ok_or(NnError::NoForward)?;
        let n = self.arch.hidden;
        for caches in all {
            let mut dh_next = vec![0.0; n];
            let mut dc_next = vec![0.0; n];
            for c in caches.iter().rev() {
                let da = self.actor.backward(&c.actor, &c.dlogits);
                let dv = self.critic.backward(&c.critic, &[c.dvalue]);
                let dh: Vec<f64> = da.iter().zip(&dv).zip(&dh_next).map(|((a, b), d)| a + b + d).collect();
                let (dx, dh_prev, dc_prev) = self.lstm.backward_step(&c.lstm, &dh, &dc_next);
                self.encoder.backward(&c.cnn, &dx, false);
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
        }
        Ok(())
    }
}
