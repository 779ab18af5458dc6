//! The probe fine-tuning MDP: state assembly, seven discrete actions,
//! episode lifecycle, success test and deviation classes.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{
    extract_features, score_view, AnatomyFeatures, PriorSet, RewardWeights, ViewDefinition,
    ViewScores,
};
use crate::error::{Error, Result};
use crate::imaging::{rotate_pose, Axis, ImageConfig, ProbePose, Slicer};
use crate::phantom::{EntityLabel, LabeledVolume};

/// Attempts at drawing an initial pose before giving up.
pub const MAX_RESET_TRIES: usize = 100;

pub const STATE_DIM: usize = 7;
pub const ACTION_COUNT: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Rotation per action, degrees.
    pub delta_deg: f64,
    pub max_steps: usize,
    /// Half-width of the uniform initial rotation about each probe axis.
    pub init_jitter_deg: f64,
    /// |φ_all| bound of a successful view.
    pub success_phi: f64,
    /// |φ_all| bound separating mild from moderate/severe initial views.
    pub deviation_phi: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            delta_deg: 1.0,
            max_steps: 100,
            init_jitter_deg: 15.0,
            success_phi: 0.2,
            deviation_phi: 0.5,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_deg > 0.0 && self.delta_deg.is_finite()) {
            return Err(Error::contract("delta_deg must be positive"));
        }
        if self.max_steps < 1 {
            return Err(Error::contract("max_steps must be at least 1"));
        }
        if !(self.init_jitter_deg >= 0.0 && self.init_jitter_deg.is_finite()) {
            return Err(Error::contract("init_jitter_deg must be non-negative"));
        }
        if !(self.success_phi >= 0.0 && self.deviation_phi >= 0.0) {
            return Err(Error::contract("phi thresholds must be non-negative"));
        }
        Ok(())
    }
}

/// `[α_LV, α_RV, α_LA, α_RA, α_aorta, φ_all, s_position]`; undefined ratios are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State(pub [f64; STATE_DIM]);

impl State {
    pub fn from_features(f: &AnatomyFeatures, scores: &ViewScores) -> Self {
        let alpha = |e: EntityLabel| {
            if f.is_visible(e) {
                f.alpha(e).unwrap_or(0.0)
            } else {
                0.0
            }
        };
        State([
            alpha(EntityLabel::LV),
            alpha(EntityLabel::RV),
            alpha(EntityLabel::LA),
            alpha(EntityLabel::RA),
            alpha(EntityLabel::Aorta),
            f.phi_all,
            scores.s_position,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Action index: 0/1 = ±δ about x, 2/3 = ±δ about y, 4/5 = ±δ about z, 6 = hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(u8);

impl ActionId {
    pub const HOLD: ActionId = ActionId(6);

    pub fn new(a: usize) -> Result<Self> {
        if a < ACTION_COUNT {
            Ok(ActionId(a as u8))
        } else {
            Err(Error::contract(format!(
                "action {a} out of range 0..{ACTION_COUNT}"
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..ACTION_COUNT as u8).map(ActionId)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Probe axis and sign of the rotation, or `None` for hold.
    pub fn rotation(self) -> Option<(Axis, f64)> {
        let sign = if self.0 % 2 == 0 { 1.0 } else { -1.0 };
        match self.0 {
            0 | 1 => Some((Axis::X, sign)),
            2 | 3 => Some((Axis::Y, sign)),
            4 | 5 => Some((Axis::Z, sign)),
            _ => None,
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviationClass {
    Mild,
    Moderate,
    Severe,
}

impl DeviationClass {
    pub const ALL: [DeviationClass; 3] = [
        DeviationClass::Mild,
        DeviationClass::Moderate,
        DeviationClass::Severe,
    ];
}

/// All included entities visible and |φ_all| within the bound.
pub fn is_success(f: &AnatomyFeatures, success_phi: f64) -> bool {
    f.visible_included() == f.view.included.len() && f.phi_all.abs() <= success_phi
}

/// Mild: everything visible and |φ_all| ≤ bound. Severe: at most two
/// visible and |φ_all| > bound. Moderate: the rest.
pub fn classify_counts(
    visible: usize,
    total: usize,
    phi_all: f64,
    deviation_phi: f64,
) -> DeviationClass {
    let off_center = phi_all.abs() > deviation_phi;
    if visible == total && !off_center {
        DeviationClass::Mild
    } else if visible <= 2 && off_center {
        DeviationClass::Severe
    } else {
        DeviationClass::Moderate
    }
}

pub fn classify_deviation(f: &AnatomyFeatures, deviation_phi: f64) -> DeviationClass {
    classify_counts(
        f.visible_included(),
        f.view.included.len(),
        f.phi_all,
        deviation_phi,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub step_index: usize,
    pub visible_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One JSONL line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: usize,
    pub state: [f64; STATE_DIM],
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl StepRecord {
    pub fn new(action: ActionId, r: &StepResult) -> Self {
        Self {
            t: r.info.step_index,
            action: action.index(),
            state: r.state.0,
            reward: r.reward,
            done: r.done,
            success: r.info.success,
        }
    }
}

/// Everything an environment needs besides the patient volume.
#[derive(Debug, Clone)]
pub struct EnvSettings {
    pub priors: Arc<PriorSet>,
    pub weights: RewardWeights,
    pub image: ImageConfig,
    pub episode: EpisodeConfig,
    pub view: ViewDefinition,
}

impl EnvSettings {
    pub fn new(
        priors: PriorSet,
        weights: RewardWeights,
        image: ImageConfig,
        episode: EpisodeConfig,
    ) -> Self {
        Self {
            priors: Arc::new(priors),
            weights,
            image,
            episode,
            view: ViewDefinition::a4c(),
        }
    }
}

#[derive(Debug, Clone)]
struct Observation {
    features: AnatomyFeatures,
    scores: ViewScores,
    state: State,
}

/// Single-threaded, stateful probe environment. Volumes are shared
/// read-only so many environments may scan the same phantom.
#[derive(Debug, Clone)]
pub struct ProbeEnv {
    settings: EnvSettings,
    slicer: Slicer,
    volume: Option<Arc<LabeledVolume>>,
    pose: ProbePose,
    steps: usize,
    done: bool,
    obs: Option<Observation>,
}

impl ProbeEnv {
    pub fn new(settings: EnvSettings) -> Result<Self> {
        settings.episode.validate()?;
        settings.weights.validate()?;
        settings.priors.validate()?;
        let slicer = Slicer::new(&settings.image)?;
        Ok(Self {
            settings,
            slicer,
            volume: None,
            pose: ProbePose::identity(),
            steps: 0,
            done: true,
            obs: None,
        })
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    pub fn pose(&self) -> &ProbePose {
        &self.pose
    }

    pub fn features(&self) -> Option<&AnatomyFeatures> {
        self.obs.as_ref().map(|o| &o.features)
    }

    pub fn scores(&self) -> Option<&ViewScores> {
        self.obs.as_ref().map(|o| &o.scores)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn observe(&self, volume: &LabeledVolume, pose: &ProbePose) -> Observation {
        let mask = self.slicer.slice(volume, pose);
        let features = extract_features(&mask, &self.settings.view);
        let scores = score_view(&features, &self.settings.priors, &self.settings.weights);
        let state = State::from_features(&features, &scores);
        Observation {
            features,
            scores,
            state,
        }
    }

    /// Features and scores of an arbitrary pose on a volume, without
    /// touching the episode.
    pub fn evaluate_pose(
        &self,
        volume: &LabeledVolume,
        pose: &ProbePose,
    ) -> (AnatomyFeatures, ViewScores) {
        let o = self.observe(volume, pose);
        (o.features, o.scores)
    }

    /// Starts an episode at `pose` without randomization.
    pub fn reset_to(
        &mut self,
        volume: Arc<LabeledVolume>,
        pose: ProbePose,
    ) -> (State, DeviationClass) {
        let obs = self.observe(&volume, &pose);
        let class = classify_deviation(&obs.features, self.settings.episode.deviation_phi);
        let state = obs.state;
        self.volume = Some(volume);
        self.pose = pose;
        self.obs = Some(obs);
        self.steps = 0;
        self.done = false;
        (state, class)
    }

    /// Starts an episode at the volume's standard pose turned by independent
    /// uniform rotations about the probe x, y and z axes. Redraws until at
    /// least one included entity is visible.
    pub fn reset<R: Rng + ?Sized>(
        &mut self,
        volume: Arc<LabeledVolume>,
        rng: &mut R,
    ) -> Result<(State, DeviationClass)> {
        let jitter = self.settings.episode.init_jitter_deg;
        for _ in 0..MAX_RESET_TRIES {
            let mut pose = volume.standard_pose().clone();
            for axis in Axis::ALL {
                let angle = if jitter > 0.0 {
                    rng.gen_range(-jitter..=jitter)
                } else {
                    0.0
                };
                pose = rotate_pose(&pose, axis, angle);
            }
            let obs = self.observe(&volume, &pose);
            if obs.features.visible_included() > 0 {
                let class = classify_deviation(&obs.features, self.settings.episode.deviation_phi);
                let state = obs.state;
                self.volume = Some(volume);
                self.pose = pose;
                self.obs = Some(obs);
                self.steps = 0;
                self.done = false;
                return Ok((state, class));
            }
        }
        Err(Error::Environment(format!(
            "no initial pose with a visible chamber after {MAX_RESET_TRIES} tries"
        )))
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let volume = self
            .volume
            .clone()
            .ok_or_else(|| Error::contract("step before reset"))?;
        let hold = match action.rotation() {
            Some((axis, sign)) => {
                self.pose = rotate_pose(&self.pose, axis, sign * self.settings.episode.delta_deg);
                self.obs = Some(self.observe(&volume, &self.pose));
                false
            }
            None => true,
        };
        self.steps += 1;
        self.done = hold || self.steps >= self.settings.episode.max_steps;
        let obs = self.obs.as_ref().expect("observed at reset");
        Ok(StepResult {
            state: obs.state,
            reward: obs.scores.reward,
            done: self.done,
            info: StepInfo {
                success: is_success(&obs.features, self.settings.episode.success_phi),
                step_index: self.steps,
                visible_count: obs.features.visible_included(),
            },
        })
    }

    /// Success test on the current view.
    pub fn current_success(&self) -> bool {
        self.obs
            .as_ref()
            .map(|o| is_success(&o.features, self.settings.episode.success_phi))
            .unwrap_or(false)
    }
}

/// Features of every volume's standard view.
pub fn standard_view_features(
    volumes: &[Arc<LabeledVolume>],
    image: &ImageConfig,
    view: &ViewDefinition,
) -> Result<Vec<AnatomyFeatures>> {
    let slicer = Slicer::new(image)?;
    Ok(volumes
        .iter()
        .map(|v| extract_features(&slicer.slice(v, v.standard_pose()), view))
        .collect())
}

/// Fits priors over the standard views of an ensemble of volumes.
pub fn fit_standard_priors(
    volumes: &[Arc<LabeledVolume>],
    image: &ImageConfig,
) -> Result<PriorSet> {
    crate::anatomy::fit_priors(&standard_view_features(
        volumes,
        image,
        &ViewDefinition::a4c(),
    )?)
}

/// Reward at the standard pose rotated by each offset (degrees) about one probe axis.
pub fn reward_sweep(
    env: &ProbeEnv,
    volume: &LabeledVolume,
    axis: Axis,
    offsets_deg: &[f64],
) -> Vec<f64> {
    offsets_deg
        .iter()
        .map(|&d| {
            env.evaluate_pose(volume, &rotate_pose(volume.standard_pose(), axis, d))
                .1
                .reward
        })
        .collect()
}

#[cfg(test)]
mod tests;
