use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QNetwork;
use crate::env::{ActionId, DeviationClass, EnvSettings, ProbeEnv, State, StepRecord};
use crate::phantom::LabeledVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Actions taken per episode, including the final hold.
    pub mean_steps: f64,
    /// Keyed by the deviation class of each episode's initial view.
    pub per_class: BTreeMap<DeviationClass, ClassStats>,
}

/// Runs `episodes` episodes of an arbitrary policy. Episode `i` uses phantom
/// `i mod n`; initial poses come from a generator seeded with `seed`. An
/// episode succeeds if its final view passes the success test.
pub fn evaluate_policy(
    policy: impl FnMut(&State) -> Result<ActionId>,
    settings: EnvSettings,
    volumes: &[Arc<LabeledVolume>],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_policy_observed(policy, settings, volumes, episodes, seed, |_, _| Ok(()))
}

/// [`evaluate_policy`] that hands every step, with its episode index, to
/// `observe`.
pub fn evaluate_policy_observed(
    mut policy: impl FnMut(&State) -> Result<ActionId>,
    settings: EnvSettings,
    volumes: &[Arc<LabeledVolume>],
    episodes: usize,
    seed: u64,
    mut observe: impl FnMut(usize, &StepRecord) -> Result<()>,
) -> Result<EvalReport> {
    if volumes.is_empty() || episodes == 0 {
        return Err(Error::contract(
            "evaluation needs phantoms and at least one episode",
        ));
    }
    let mut env = ProbeEnv::new(settings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: BTreeMap<DeviationClass, ClassStats> = BTreeMap::new();
    let (mut successes, mut total_steps) = (0, 0);
    for i in 0..episodes {
        let (mut s, class) = env.reset(volumes[i % volumes.len()].clone(), &mut rng)?;
        let (ok, steps) = loop {
            let a = policy(&s)?;
            let r = env.step(a)?;
            observe(i, &StepRecord::new(a, &r))?;
            s = r.state;
            if r.done {
                break (r.info.success, r.info.step_index);
            }
        };
        successes += ok as usize;
        total_steps += steps;
        let c = per_class.entry(class).or_default();
        c.episodes += 1;
        c.successes += ok as usize;
        c.mean_steps += steps as f64;
    }
    for c in per_class.values_mut() {
        c.success_rate = c.successes as f64 / c.episodes as f64;
        c.mean_steps /= c.episodes as f64;
    }
    Ok(EvalReport {
        episodes,
        successes,
        success_rate: successes as f64 / episodes as f64,
        mean_steps: total_steps as f64 / episodes as f64,
        per_class,
    })
}

/// Greedy (ε = 0) evaluation of a Q-network.
pub fn evaluate(
    q: &QNetwork,
    settings: EnvSettings,
    volumes: &[Arc<LabeledVolume>],
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_observed(q, settings, volumes, episodes, seed, |_, _| Ok(()))
}

pub fn evaluate_observed(
    q: &QNetwork,
    settings: EnvSettings,
    volumes: &[Arc<LabeledVolume>],
    episodes: usize,
    seed: u64,
    observe: impl FnMut(usize, &StepRecord) -> Result<()>,
) -> Result<EvalReport> {
    evaluate_policy_observed(
        |s| Ok(ActionId::new(super::argmax(&q.q_values(s)?)).expect("index in range")),
        settings,
        volumes,
        episodes,
        seed,
        observe,
    )
}
