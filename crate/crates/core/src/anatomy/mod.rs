//! Anatomical features of a view, their Gaussian priors, and prior-conformity scoring.

mod features;
mod prior;
mod score;

pub use features::{extract_features, AnatomyFeatures, PairSet, ViewDefinition};
pub use prior::{fit_priors, population_mean_var, AlphaPrior, PairPrior, PriorSet, VARIANCE_FLOOR};
pub use score::{
    peak_gaussian, reward, score_alpha, score_position, score_view, AlphaSet, RewardWeights,
    ViewScores,
};

#[cfg(test)]
pub(crate) mod test_support {
    use super::{AnatomyFeatures, ViewDefinition};
    use crate::phantom::EntityLabel;

    /// Fully visible A4C feature vector with the given pair offsets and
    /// RV/LA/RA area ratios.
    pub fn synthetic(dtheta: [f64; 4], dr: [f64; 4], alpha: [f64; 3]) -> AnatomyFeatures {
        let mut visible = [false; EntityLabel::COUNT];
        for e in EntityLabel::A4C_INCLUDED {
            visible[e.index()] = true;
        }
        AnatomyFeatures {
            theta: [None; EntityLabel::COUNT],
            radius: [None; EntityLabel::COUNT],
            area: [0; EntityLabel::COUNT],
            visible,
            dtheta: dtheta.iter().map(|&x| Some(x)).collect(),
            dr: dr.iter().map(|&x| Some(x)).collect(),
            alpha_in: vec![Some(1.0), Some(alpha[0]), Some(alpha[1]), Some(alpha[2])],
            alpha_ex: vec![Some(0.0)],
            phi_all: 0.0,
            view: ViewDefinition::a4c(),
        }
    }
}
