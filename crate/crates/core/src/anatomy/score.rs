use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::AnatomyFeatures;
use super::prior::PriorSet;
use crate::error::{Error, Result};
use crate::phantom::EntityLabel;

/// Reward-term and per-pair / per-entity weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// One weight per entry of the view's pair set.
    pub pair_weights: Vec<f64>,
    pub entity_weights: BTreeMap<EntityLabel, f64>,
}

impl Default for RewardWeights {
    fn default() -> Self {
        let entity_weights = [
            (EntityLabel::RV, 0.2),
            (EntityLabel::LA, 0.5),
            (EntityLabel::RA, 0.5),
            (EntityLabel::Aorta, 1.0),
        ]
        .into_iter()
        .collect();
        Self {
            w1: 0.7,
            w2: 0.14,
            w3: 3.0,
            w4: 0.1,
            pair_weights: vec![1.0; 4],
            entity_weights,
        }
    }
}

impl RewardWeights {
    pub fn entity(&self, e: EntityLabel) -> f64 {
        self.entity_weights.get(&e).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w1, self.w2, self.w3, self.w4]
            .into_iter()
            .chain(self.pair_weights.iter().copied())
            .chain(self.entity_weights.values().copied());
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::contract(format!(
                    "weights must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian density rescaled to 1 at its mean.
#[inline]
pub fn peak_gaussian(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    (-(d * d) / (2.0 * var)).exp()
}

/// Weighted conformity of pair offsets with their priors, in `[0, 1]`.
/// Pairs with an invisible member contribute 0.
pub fn score_position(f: &AnatomyFeatures, p: &PriorSet, w: &RewardWeights) -> f64 {
    let mut total_w = 0.0;
    let mut acc = 0.0;
    for (k, prior) in p.pairs.iter().enumerate() {
        let wk = w.pair_weights.get(k).copied().unwrap_or(0.0);
        total_w += wk;
        if let (Some(dt), Some(dr)) = (f.dtheta[k], f.dr[k]) {
            acc += wk
                * (peak_gaussian(dt, prior.mu_theta, prior.var_theta)
                    + peak_gaussian(dr, prior.mu_r, prior.var_r));
        }
    }
    if total_w > 0.0 {
        acc / (2.0 * total_w)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaSet {
    Included,
    Excluded,
}

/// Area-ratio conformity. Included entities (those with an alpha prior)
/// score their peak-normalized prior density; excluded entities score
/// `-alpha`. Undefined ratios contribute 0.
pub fn score_alpha(f: &AnatomyFeatures, p: &PriorSet, w: &RewardWeights, which: AlphaSet) -> f64 {
    let mut total_w = 0.0;
    let mut acc = 0.0;
    match which {
        AlphaSet::Included => {
            for prior in &p.alphas {
                let wc = w.entity(prior.entity);
                total_w += wc;
                if f.is_visible(prior.entity) {
                    if let Some(a) = f.alpha(prior.entity) {
                        acc += wc * peak_gaussian(a, prior.mu, prior.var);
                    }
                }
            }
        }
        AlphaSet::Excluded => {
            for &e in &f.view.excluded {
                let wc = w.entity(e);
                total_w += wc;
                if let Some(a) = f.alpha(e) {
                    acc -= wc * a;
                }
            }
        }
    }
    if total_w > 0.0 {
        acc / total_w
    } else {
        0.0
    }
}

/// `w1·r_in + w2·r_ex − w3·|φ_all| + w4·s_position`.
pub fn reward(f: &AnatomyFeatures, p: &PriorSet, w: &RewardWeights) -> f64 {
    score_view(f, p, w).reward
}

/// All reward components of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub r_in: f64,
    pub r_ex: f64,
    pub phi_all: f64,
    pub s_position: f64,
    pub reward: f64,
}

impl ViewScores {
    pub fn combine(r_in: f64, r_ex: f64, phi_all: f64, s_position: f64, w: &RewardWeights) -> Self {
        let reward = w.w1 * r_in + w.w2 * r_ex - w.w3 * phi_all.abs() + w.w4 * s_position;
        Self {
            r_in,
            r_ex,
            phi_all,
            s_position,
            reward,
        }
    }
}

pub fn score_view(f: &AnatomyFeatures, p: &PriorSet, w: &RewardWeights) -> ViewScores {
    ViewScores::combine(
        score_alpha(f, p, w, AlphaSet::Included),
        score_alpha(f, p, w, AlphaSet::Excluded),
        f.phi_all,
        score_position(f, p, w),
        w,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::test_support::synthetic;
    use crate::anatomy::{extract_features, fit_priors, ViewDefinition};
    use crate::imaging::{ImageConfig, MaskImage};

    fn priors() -> PriorSet {
        let a = synthetic(
            [0.4, 0.3, 0.05, -0.02],
            [0.0, 0.02, -0.35, -0.3],
            [0.7, 0.5, 0.45],
        );
        let b = synthetic(
            [0.5, 0.36, 0.07, 0.02],
            [0.02, 0.0, -0.3, -0.33],
            [0.8, 0.6, 0.5],
        );
        fit_priors(&[a, b]).unwrap()
    }

    fn at_means(p: &PriorSet) -> AnatomyFeatures {
        let mut f = synthetic([0.0; 4], [0.0; 4], [0.0; 3]);
        for (k, pp) in p.pairs.iter().enumerate() {
            f.dtheta[k] = Some(pp.mu_theta);
            f.dr[k] = Some(pp.mu_r);
        }
        for (k, a) in p.alphas.iter().enumerate() {
            f.alpha_in[k + 1] = Some(a.mu);
        }
        f
    }

    #[test]
    fn table_defaults() {
        let w = RewardWeights::default();
        assert_eq!((w.w1, w.w2, w.w3, w.w4), (0.7, 0.14, 3.0, 0.1));
        assert_eq!(w.pair_weights, vec![1.0; 4]);
        assert_eq!(w.entity(EntityLabel::RV), 0.2);
        assert_eq!(w.entity(EntityLabel::LA), 0.5);
        assert_eq!(w.entity(EntityLabel::RA), 0.5);
    }

    #[test]
    fn peak_is_one_and_symmetric() {
        assert_eq!(peak_gaussian(0.3, 0.3, 0.01), 1.0);
        let a = peak_gaussian(0.3 + 0.05, 0.3, 0.01);
        let b = peak_gaussian(0.3 - 0.05, 0.3, 0.01);
        assert!((a - b).abs() < 1e-15);
        assert!(peak_gaussian(0.3 + 0.1, 0.3, 0.01) < a);
    }

    #[test]
    fn perfect_view_scores() {
        let p = priors();
        let w = RewardWeights::default();
        let f = at_means(&p);
        assert_eq!(score_position(&f, &p, &w), 1.0);
        assert_eq!(score_alpha(&f, &p, &w, AlphaSet::Included), 1.0);
        assert_eq!(score_alpha(&f, &p, &w, AlphaSet::Excluded), 0.0);
        let s = score_view(&f, &p, &w);
        assert!((s.reward - 0.8).abs() < 1e-12);
    }

    #[test]
    fn undefined_pairs_score_zero() {
        let p = priors();
        let mut f = at_means(&p);
        f.dtheta = vec![None; 4];
        f.dr = vec![None; 4];
        assert_eq!(score_position(&f, &p, &RewardWeights::default()), 0.0);
    }

    #[test]
    fn aorta_ratio_penalty() {
        let p = priors();
        let w = RewardWeights::default();
        let mut f = at_means(&p);
        f.alpha_ex = vec![Some(0.3)];
        assert!((score_alpha(&f, &p, &w, AlphaSet::Excluded) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn reward_components() {
        let w = RewardWeights::default();
        assert!((ViewScores::combine(1.0, 0.0, 0.0, 1.0, &w).reward - 0.8).abs() < 1e-15);
        assert_eq!(ViewScores::combine(0.0, 0.0, 0.5, 0.0, &w).reward, -1.5);
        assert_eq!(ViewScores::combine(0.0, 0.0, -0.5, 0.0, &w).reward, -1.5);
    }

    #[test]
    fn empty_mask_reward_is_zero() {
        let m = MaskImage::empty(&ImageConfig::default());
        let f = extract_features(&m, &ViewDefinition::a4c());
        let s = score_view(&f, &priors(), &RewardWeights::default());
        assert_eq!(
            (s.r_in, s.r_ex, s.phi_all, s.s_position, s.reward),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn more_aorta_means_less_reward() {
        let p = priors();
        let w = RewardWeights::default();
        let mut f = at_means(&p);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            f.alpha_ex = vec![Some(k as f64 * 0.05)];
            let r = reward(&f, &p, &w);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let mut w = RewardWeights::default();
        w.w3 = -1.0;
        assert!(w.validate().is_err());
        assert!(RewardWeights::default().validate().is_ok());
    }
}
