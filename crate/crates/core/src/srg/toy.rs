//! Synthetic regression tasks that probe whether the block can learn
//! relational structure through its attention matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SrgConfig, SrgModule, SrgParams};
use crate::nncore::ops::upsample_nearest_2d;
use crate::nncore::{Adam, Optimizer, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyTask {
    /// Each node's target is the input at its mirror node across the
    /// center column. Own-node features carry no information about it.
    OffsetCopy,
    /// Targets drawn independently of the inputs; only memorization helps.
    RandomLabel,
    /// A single constant target everywhere.
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub srg: SrgConfig,
    pub task: ToyTask,
    pub samples: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Loss is recorded every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            srg: SrgConfig {
                channels: 16,
                height: 8,
                width: 8,
                pooled_height: 4,
                pooled_width: 4,
                heads: 2,
                ..Default::default()
            },
            task: ToyTask::OffsetCopy,
            samples: 32,
            steps: 2000,
            lr: 1e-2,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyReport {
    pub task: ToyTask,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `1 − final/initial`.
    pub reduction: f64,
    pub steps: usize,
    /// `(step, loss)` samples of the training curve.
    pub curve: Vec<(usize, f64)>,
    pub diverged: bool,
}

fn dataset(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(Tensor, Tensor)>> {
    let s = &cfg.srg;
    let (c, hp, wp) = (s.channels, s.pooled_height, s.pooled_width);
    // One random scalar per node, replicated across channels.
    let node = |rng: &mut ChaCha8Rng| {
        let s: Vec<f64> = (0..hp * wp).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(
            &[c, hp, wp],
            (0..c).flat_map(|_| s.iter().cloned()).collect(),
        )
    };
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let xs = node(rng)?;
        let ts = match cfg.task {
            ToyTask::OffsetCopy => {
                let d = xs.data();
                let mirrored = (0..c * hp * wp)
                    .map(|i| {
                        let (ch, rest) = (i / (hp * wp), i % (hp * wp));
                        let (v, u) = (rest / wp, rest % wp);
                        d[(ch * hp + v) * wp + (wp - 1 - u)]
                    })
                    .collect();
                Tensor::new(&[c, hp, wp], mirrored)?
            }
            ToyTask::RandomLabel => node(rng)?,
            ToyTask::Constant => Tensor::full(&[c, hp, wp], 0.5),
        };
        out.push((
            upsample_nearest_2d(&xs, s.height, s.width)?,
            upsample_nearest_2d(&ts, s.height, s.width)?,
        ));
    }
    Ok(out)
}

/// Full-batch Adam on mean squared error.
///
/// Inputs are piecewise constant over the pooling bins so pooling is
/// lossless. A non-finite loss stops training and is reported as divergence.
pub fn toy_fit(cfg: &ToyConfig) -> Result<ToyReport> {
    Ok(toy_fit_module(cfg)?.0)
}

/// [`toy_fit`] that also returns the trained block.
pub fn toy_fit_module(cfg: &ToyConfig) -> Result<(ToyReport, SrgModule)> {
    cfg.srg.validate()?;
    if cfg.srg.height % cfg.srg.pooled_height != 0 || cfg.srg.width % cfg.srg.pooled_width != 0 {
        return Err(Error::contract(
            "toy task needs the lattice to divide the input evenly",
        ));
    }
    if cfg.samples == 0 || cfg.log_every == 0 {
        return Err(Error::contract(
            "toy task needs samples and a positive log interval",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = dataset(cfg, &mut rng)?;
    let mut module = SrgModule::new(
        cfg.srg.clone(),
        SrgParams::init(&cfg.srg, cfg.seed.wrapping_add(1))?,
    )?;
    let mut opt = Adam::new(cfg.lr);
    let per = (cfg.samples * data[0].1.len()) as f64;

    let mut curve = Vec::new();
    let mut initial = f64::NAN;
    let mut last = f64::NAN;
    for step in 0..=cfg.steps {
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for (x, t) in &data {
            let out = match module.forward(x) {
                Ok(o) => o,
                Err(Error::NumericFault(_)) => {
                    return Ok((diverged(cfg, initial, curve, step), module))
                }
                Err(e) => return Err(e),
            };
            let diff = out.sub(t)?;
            loss += diff.dot(&diff)? / per;
            if step == cfg.steps {
                continue;
            }
            let (g, _) = module.backward(&diff.scale(2.0 / per)?)?;
            let g = g.tensors();
            grads = Some(match grads {
                None => g,
                Some(acc) => acc
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a.add(b))
                    .collect::<Result<_>>()?,
            });
        }
        if !loss.is_finite() {
            return Ok((diverged(cfg, initial, curve, step), module));
        }
        if step == 0 {
            initial = loss;
        }
        last = loss;
        if step % cfg.log_every == 0 || step == cfg.steps {
            curve.push((step, loss));
        }
        if let Some(g) = grads {
            if let Err(e) = opt.step(&mut module.params.tensors_mut(), &g) {
                return match e {
                    Error::NumericFault(_) => Ok((diverged(cfg, initial, curve, step), module)),
                    e => Err(e),
                };
            }
        }
    }
    let report = ToyReport {
        task: cfg.task,
        initial_loss: initial,
        final_loss: last,
        reduction: 1.0 - last / initial,
        steps: cfg.steps,
        curve,
        diverged: false,
    };
    Ok((report, module))
}

fn diverged(cfg: &ToyConfig, initial: f64, curve: Vec<(usize, f64)>, step: usize) -> ToyReport {
    ToyReport {
        task: cfg.task,
        initial_loss: initial,
        final_loss: f64::NAN,
        reduction: f64::NAN,
        steps: step,
        curve,
        diverged: true,
    }
}
