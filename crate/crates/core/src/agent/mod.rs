//! Double deep Q-learning over the probe environment.

mod eval;
mod network;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, State, ACTION_COUNT, STATE_DIM};
use crate::nncore::{Optimizer, OptimizerKind, Tensor};
use crate::{Error, Result};

pub use eval::{
    evaluate, evaluate_observed, evaluate_policy, evaluate_policy_observed, ClassStats, EvalReport,
};
pub use network::{argmax, encode_state, QCache, QNetwork, ALPHA_CLIP};
pub use replay::{ReplayBuffer, Transition};
pub use train::{train, train_to_writer, MetricRecord, TrainOutcome, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between target-network syncs.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Steps over which ε falls linearly from start to end.
    pub eps_decay_steps: usize,
    pub total_steps: usize,
    /// Gradient updates begin once the buffer holds this many transitions.
    pub learning_starts: usize,
    /// Environment steps between greedy evaluations (0 disables them).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub hidden: usize,
    /// Also store the (known) hold outcome of every visited state.
    pub hold_relabel: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            buffer_capacity: 50_000,
            batch_size: 64,
            target_sync: 500,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 20_000,
            total_steps: 150_000,
            learning_starts: 1_000,
            eval_every: 10_000,
            eval_episodes: 40,
            hidden: 64,
            hold_relabel: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::contract(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.buffer_capacity == 0
            || self.batch_size == 0
            || self.target_sync == 0
            || self.hidden == 0
        {
            return Err(Error::contract(
                "buffer capacity, batch size, target sync and hidden width must be positive",
            ));
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::contract(format!("epsilon {e} outside [0, 1]")));
            }
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::contract("evaluation needs at least one episode"));
        }
        Ok(())
    }

    /// Exploration rate after `step` environment steps.
    pub fn epsilon(&self, step: usize) -> f64 {
        if step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let f = step as f64 / self.eps_decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * f
    }
}

/// ε-greedy choice: uniform over all actions with probability `eps`,
/// otherwise the greedy action (lowest index on ties).
pub fn select_action<R: Rng + ?Sized>(q: &[f64; ACTION_COUNT], eps: f64, rng: &mut R) -> ActionId {
    let a = if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..ACTION_COUNT)
    } else {
        argmax(q)
    };
    ActionId::new(a).expect("index in range")
}

fn states_tensor<'a>(states: impl Iterator<Item = &'a State>) -> Result<Tensor> {
    let data: Vec<f64> = states.flat_map(encode_state).collect();
    Tensor::new(&[data.len() / STATE_DIM, STATE_DIM], data)
}

/// Double-DQN targets: the online network picks the next action, the target
/// network values it. Terminal transitions take the bare reward.
pub fn dd_q_target(
    batch: &[Transition],
    online: &QNetwork,
    target: &QNetwork,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let next = states_tensor(batch.iter().map(|t| &t.s_next))?;
    let q_on = online.forward(&next)?;
    let q_tg = target.forward(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.r
            } else {
                let row = i * ACTION_COUNT;
                let a = argmax(&q_on.data()[row..row + ACTION_COUNT]);
                t.r + gamma * q_tg.data()[row + a]
            }
        })
        .collect())
}

/// Batch-mean squared TD error of the taken actions against `targets`.
pub fn td_loss(online: &QNetwork, batch: &[Transition], targets: &[f64]) -> Result<f64> {
    let q = online.forward(&states_tensor(batch.iter().map(|t| &t.s))?)?;
    let n = batch.len() as f64;
    Ok(batch
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (t, y))| (q.data()[i * ACTION_COUNT + t.a.index()] - y).powi(2))
        .sum::<f64>()
        / n)
}

/// One gradient step on the squared TD error. Returns the loss before the step.
pub fn td_update(
    online: &mut QNetwork,
    batch: &[Transition],
    targets: &[f64],
    opt: &mut dyn Optimizer,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::contract(format!(
            "batch of {} with {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let (q, cache) = online.forward_cached(&states_tensor(batch.iter().map(|t| &t.s))?)?;
    let n = batch.len() as f64;
    let mut g = vec![0.0; q.len()];
    let mut loss = 0.0;
    for (i, (t, y)) in batch.iter().zip(targets).enumerate() {
        let k = i * ACTION_COUNT + t.a.index();
        let d = q.data()[k] - y;
        loss += d * d / n;
        g[k] = 2.0 * d / n;
    }
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite TD loss {loss}")));
    }
    let grads = online.backward(&cache, &Tensor::new(q.shape(), g)?)?;
    opt.step(&mut online.tensors_mut(), &grads)?;
    Ok(loss)
}
