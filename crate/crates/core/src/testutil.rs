//! Shared fixtures for unit tests.

use std::sync::{Arc, OnceLock};

use crate::anatomy::{PriorSet, RewardWeights};
use crate::env::{fit_standard_priors, EnvSettings, EpisodeConfig};
use crate::imaging::ImageConfig;
use crate::phantom::{generate_phantom, LabeledVolume, PhantomSpec};

pub fn small_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        seed,
        dims: [96, 96, 96],
        spacing: [1.6; 3],
        ..PhantomSpec::default()
    }
}

pub fn small_image() -> ImageConfig {
    ImageConfig {
        width: 128,
        height: 128,
        half_angle_deg: 45.0,
        depth_mm: 140.0,
    }
}

/// Four small phantoms and priors fitted on their standard views.
pub fn ensemble() -> &'static (Vec<Arc<LabeledVolume>>, PriorSet) {
    static CELL: OnceLock<(Vec<Arc<LabeledVolume>>, PriorSet)> = OnceLock::new();
    CELL.get_or_init(|| {
        let vols: Vec<_> = (0..4)
            .map(|s| Arc::new(generate_phantom(&small_spec(s)).unwrap()))
            .collect();
        let priors = fit_standard_priors(&vols, &small_image()).unwrap();
        (vols, priors)
    })
}

pub fn settings(episode: EpisodeConfig) -> EnvSettings {
    EnvSettings::new(
        ensemble().1.clone(),
        RewardWeights::default(),
        small_image(),
        episode,
    )
}
