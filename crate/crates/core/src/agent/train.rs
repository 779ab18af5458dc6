use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    dd_q_target, evaluate, select_action, td_update, EvalReport, QNetwork, ReplayBuffer,
    TrainConfig, Transition,
};
use crate::env::{ActionId, EnvSettings, ProbeEnv, State};
use crate::nncore::Optimizer;
use crate::phantom::LabeledVolume;
use crate::{Error, Result};

/// Added to the training seed to derive the evaluation seed, so periodic
/// evaluations replay the same episodes and never share draws with training.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub eps: f64,
    /// Mean TD loss over the updates since the previous record.
    pub loss: Option<f64>,
    pub eval_success: Option<f64>,
    pub eval_mean_steps: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the best periodic evaluation (highest success,
    /// then fewest steps; earliest on ties), or the final network when
    /// evaluation is disabled.
    pub weights: QNetwork,
    /// Step at which `weights` was captured.
    pub weights_step: usize,
    pub final_weights: QNetwork,
    pub metrics: Vec<MetricRecord>,
}

/// Step-at-a-time double-DQN learner.
pub struct Trainer {
    cfg: TrainConfig,
    env: ProbeEnv,
    volumes: Vec<Arc<LabeledVolume>>,
    online: QNetwork,
    target: QNetwork,
    opt: Box<dyn Optimizer + Send>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    /// Current state and the reward of its view.
    state: Option<(State, f64)>,
    steps: usize,
    loss_sum: f64,
    loss_count: usize,
}

impl Trainer {
    pub fn new(
        settings: EnvSettings,
        volumes: Vec<Arc<LabeledVolume>>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if volumes.is_empty() {
            return Err(Error::contract("training needs at least one phantom"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let online = QNetwork::init(cfg.hidden, &mut rng)?;
        Ok(Trainer {
            env: ProbeEnv::new(settings)?,
            volumes,
            target: online.clone(),
            online,
            opt: cfg.optimizer.build(cfg.lr),
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            rng,
            state: None,
            steps: 0,
            loss_sum: 0.0,
            loss_count: 0,
            cfg,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One environment step, one gradient update once warm, and a target
    /// sync on the interval.
    ///
    /// Holding ends the episode but is stored as a self-loop that keeps
    /// paying the current reward, so the learned value of holding is the
    /// value of staying at the current view. Step-limit cut-offs are not
    /// terminal either; every stored transition bootstraps.
    ///
    /// With `cfg.hold_relabel`, the hold transition of every visited state is
    /// stored too, whatever action was taken: its outcome is known without
    /// executing it, and exploration alone would rarely try holding at the
    /// good views where it matters.
    pub fn step(&mut self) -> Result<()> {
        let (s, r_s) = match self.state {
            Some(sr) => sr,
            None => {
                let v = self.volumes[self.rng.gen_range(0..self.volumes.len())].clone();
                let s = self.env.reset(v, &mut self.rng)?.0;
                (s, self.env.scores().expect("scored at reset").reward)
            }
        };
        let eps = self.cfg.epsilon(self.steps);
        let a = select_action(&self.online.q_values(&s)?, eps, &mut self.rng);
        let res = self.env.step(a)?;
        if a == ActionId::HOLD {
            self.buffer
                .push(Transition::new(s, a, res.reward, s, false)?);
        } else {
            if self.cfg.hold_relabel {
                self.buffer
                    .push(Transition::new(s, ActionId::HOLD, r_s, s, false)?);
            }
            self.buffer
                .push(Transition::new(s, a, res.reward, res.state, false)?);
        }
        self.state = if res.done {
            None
        } else {
            Some((res.state, res.reward))
        };
        self.steps += 1;

        if self.buffer.len() >= self.cfg.learning_starts.max(1) {
            let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng)?;
            let y = dd_q_target(&batch, &self.online, &self.target, self.cfg.gamma)?;
            let loss = td_update(&mut self.online, &batch, &y, self.opt.as_mut())?;
            self.loss_sum += loss;
            self.loss_count += 1;
        }
        if self.steps % self.cfg.target_sync == 0 {
            self.target = self.online.clone();
        }
        Ok(())
    }

    fn record(&mut self, eval: Option<&EvalReport>) -> MetricRecord {
        let loss = (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64);
        self.loss_sum = 0.0;
        self.loss_count = 0;
        MetricRecord {
            step: self.steps,
            eps: self.cfg.epsilon(self.steps),
            loss,
            eval_success: eval.map(|e| e.success_rate),
            eval_mean_steps: eval.map(|e| e.mean_steps),
        }
    }

    fn evaluate_now(&self) -> Result<EvalReport> {
        evaluate(
            &self.online,
            self.env.settings().clone(),
            &self.volumes,
            self.cfg.eval_episodes,
            self.cfg.seed.wrapping_add(EVAL_SEED_OFFSET),
        )
    }
}

/// Runs `cfg.total_steps` environment steps and returns the final online
/// network and the metrics stream.
pub fn train(
    settings: EnvSettings,
    volumes: Vec<Arc<LabeledVolume>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_to_writer(settings, volumes, cfg, &mut std::io::sink())
}

/// [`train`] that also writes each metric record as a JSON line to `out`
/// as soon as it is produced.
pub fn train_to_writer(
    settings: EnvSettings,
    volumes: Vec<Arc<LabeledVolume>>,
    cfg: &TrainConfig,
    out: &mut dyn Write,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(settings, volumes, cfg.clone())?;
    let mut metrics = Vec::new();
    let mut best: Option<(f64, f64, usize, QNetwork)> = None;
    let mut emit = |r: MetricRecord, metrics: &mut Vec<MetricRecord>| -> Result<()> {
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n")?;
        metrics.push(r);
        Ok(())
    };
    while t.steps < cfg.total_steps {
        t.step()?;
        let last = t.steps == cfg.total_steps;
        if cfg.eval_every > 0 && (t.steps % cfg.eval_every == 0 || last) {
            let e = t.evaluate_now()?;
            log::info!(
                "step {} eps {:.3} success {:.3} mean steps {:.1}",
                t.steps,
                cfg.epsilon(t.steps),
                e.success_rate,
                e.mean_steps
            );
            let better = match &best {
                None => true,
                Some((s, m, _, _)) => {
                    e.success_rate > *s || (e.success_rate == *s && e.mean_steps < *m)
                }
            };
            if better {
                best = Some((e.success_rate, e.mean_steps, t.steps, t.online.clone()));
            }
            let r = t.record(Some(&e));
            emit(r, &mut metrics)?;
        } else if last {
            let r = t.record(None);
            emit(r, &mut metrics)?;
        }
    }
    out.flush()?;
    let (weights, weights_step) = match best {
        Some((_, _, step, w)) => (w, step),
        None => (t.online.clone(), t.steps),
    };
    Ok(TrainOutcome {
        weights,
        weights_step,
        final_weights: t.online,
        metrics,
    })
}
