use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::MaskImage;
use crate::phantom::EntityLabel;

/// Ordered list of entity pairs whose relative position is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pairs: Vec<(EntityLabel, EntityLabel)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(EntityLabel, EntityLabel)>, included: &[EntityLabel]) -> Result<Self> {
        for &(a, b) in &pairs {
            if a == b {
                return Err(Error::contract(format!("self pair ({})", a.name())));
            }
            if !included.contains(&a) || !included.contains(&b) {
                return Err(Error::contract(format!(
                    "pair ({}, {}) has a member outside the included set",
                    a.name(),
                    b.name()
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// (LV,RV), (LA,RA), (LV,LA), (RV,RA).
    pub fn a4c() -> Self {
        use EntityLabel::*;
        Self {
            pairs: vec![(LV, RV), (LA, RA), (LV, LA), (RV, RA)],
        }
    }

    pub fn pairs(&self) -> &[(EntityLabel, EntityLabel)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Entity sets defining a standard view. The first included entity is the
/// area reference (LV for A4C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDefinition {
    pub included: Vec<EntityLabel>,
    pub excluded: Vec<EntityLabel>,
    pub pairs: PairSet,
}

impl ViewDefinition {
    pub fn a4c() -> Self {
        Self {
            included: EntityLabel::A4C_INCLUDED.to_vec(),
            excluded: EntityLabel::A4C_EXCLUDED.to_vec(),
            pairs: PairSet::a4c(),
        }
    }

    pub fn reference(&self) -> EntityLabel {
        self.included[0]
    }
}

impl Default for ViewDefinition {
    fn default() -> Self {
        Self::a4c()
    }
}

/// Features measured on one mask. Per-entity arrays are indexed by
/// [`EntityLabel::index`]; pair and alpha vectors follow the view definition order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnatomyFeatures {
    /// Mean polar angle (rad) of each entity's pixels.
    pub theta: [Option<f64>; EntityLabel::COUNT],
    /// Mean normalized radius of each entity's pixels.
    pub radius: [Option<f64>; EntityLabel::COUNT],
    pub area: [usize; EntityLabel::COUNT],
    pub visible: [bool; EntityLabel::COUNT],
    /// Δθ per pair; `None` unless both members are visible.
    pub dtheta: Vec<Option<f64>>,
    pub dr: Vec<Option<f64>>,
    /// Area ratio to the reference entity per included entity; `None` if
    /// the reference is absent.
    pub alpha_in: Vec<Option<f64>>,
    pub alpha_ex: Vec<Option<f64>>,
    /// Mean polar angle of all included-entity pixels divided by the half
    /// angle; 0 when no included entity is visible.
    pub phi_all: f64,
    pub view: ViewDefinition,
}

impl AnatomyFeatures {
    pub fn is_visible(&self, e: EntityLabel) -> bool {
        self.visible[e.index()]
    }

    pub fn visible_included(&self) -> usize {
        self.view
            .included
            .iter()
            .filter(|e| self.is_visible(**e))
            .count()
    }

    pub fn alpha(&self, e: EntityLabel) -> Option<f64> {
        if let Some(i) = self.view.included.iter().position(|&x| x == e) {
            return self.alpha_in[i];
        }
        if let Some(i) = self.view.excluded.iter().position(|&x| x == e) {
            return self.alpha_ex[i];
        }
        None
    }
}

pub fn extract_features(mask: &MaskImage, view: &ViewDefinition) -> AnatomyFeatures {
    let mut count = [0usize; EntityLabel::COUNT];
    let mut sum_theta = [0.0f64; EntityLabel::COUNT];
    let mut sum_r = [0.0f64; EntityLabel::COUNT];
    let inv_depth = 1.0 / mask.depth_px();
    for v in 0..mask.height() {
        for u in 0..mask.width() {
            let l = mask.get(u, v);
            if l == EntityLabel::Background {
                continue;
            }
            let (theta, rho) = mask.polar(u, v);
            let i = l.index();
            count[i] += 1;
            sum_theta[i] += theta;
            sum_r[i] += rho * inv_depth;
        }
    }
    features_from_moments(&count, &sum_theta, &sum_r, mask.half_angle(), view)
}

fn features_from_moments(
    count: &[usize; EntityLabel::COUNT],
    sum_theta: &[f64; EntityLabel::COUNT],
    sum_r: &[f64; EntityLabel::COUNT],
    half_angle: f64,
    view: &ViewDefinition,
) -> AnatomyFeatures {
    let mut theta = [None; EntityLabel::COUNT];
    let mut radius = [None; EntityLabel::COUNT];
    let mut visible = [false; EntityLabel::COUNT];
    for i in 0..EntityLabel::COUNT {
        if count[i] > 0 {
            visible[i] = true;
            theta[i] = Some(sum_theta[i] / count[i] as f64);
            radius[i] = Some(sum_r[i] / count[i] as f64);
        }
    }
    let pair_value = |vals: &[Option<f64>; EntityLabel::COUNT], a: EntityLabel, b: EntityLabel| {
        Some(vals[a.index()]? - vals[b.index()]?)
    };
    let dtheta = view
        .pairs
        .pairs()
        .iter()
        .map(|&(a, b)| pair_value(&theta, a, b))
        .collect();
    let dr = view
        .pairs
        .pairs()
        .iter()
        .map(|&(a, b)| pair_value(&radius, a, b))
        .collect();

    let reference = count[view.reference().index()];
    let ratio =
        |e: EntityLabel| (reference > 0).then(|| count[e.index()] as f64 / reference as f64);
    let alpha_in = view.included.iter().map(|&e| ratio(e)).collect();
    let alpha_ex = view.excluded.iter().map(|&e| ratio(e)).collect();

    let (mut n_all, mut s_all) = (0usize, 0.0f64);
    for &e in &view.included {
        n_all += count[e.index()];
        s_all += sum_theta[e.index()];
    }
    let phi_all = if n_all > 0 {
        s_all / n_all as f64 / half_angle
    } else {
        0.0
    };

    AnatomyFeatures {
        theta,
        radius,
        area: *count,
        visible,
        dtheta,
        dr,
        alpha_in,
        alpha_ex,
        phi_all,
        view: view.clone(),
    }
}
