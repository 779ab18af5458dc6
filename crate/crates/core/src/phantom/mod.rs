//! Labeled cardiac volumes: the simulated patients the virtual probe scans.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ProbePose;

pub use generate::{generate_phantom, ChamberScales, PhantomJitter, PhantomSpec};
pub use io::{load_volume, raw_path_for, save_volume, VolumeHeader};

/// Cardiac entity label stored per voxel (and per mask pixel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EntityLabel {
    Background = 0,
    LV = 1,
    RV = 2,
    LA = 3,
    RA = 4,
    MV = 5,
    TV = 6,
    Aorta = 7,
}

impl EntityLabel {
    pub const COUNT: usize = 8;

    pub const ALL: [EntityLabel; Self::COUNT] = [
        EntityLabel::Background,
        EntityLabel::LV,
        EntityLabel::RV,
        EntityLabel::LA,
        EntityLabel::RA,
        EntityLabel::MV,
        EntityLabel::TV,
        EntityLabel::Aorta,
    ];

    /// Entities that must appear in an apical four-chamber view.
    pub const A4C_INCLUDED: [EntityLabel; 4] = [
        EntityLabel::LV,
        EntityLabel::RV,
        EntityLabel::LA,
        EntityLabel::RA,
    ];

    /// Entities that must not appear in an apical four-chamber view.
    pub const A4C_EXCLUDED: [EntityLabel; 1] = [EntityLabel::Aorta];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityLabel::Background => "Background",
            EntityLabel::LV => "LV",
            EntityLabel::RV => "RV",
            EntityLabel::LA => "LA",
            EntityLabel::RA => "RA",
            EntityLabel::MV => "MV",
            EntityLabel::TV => "TV",
            EntityLabel::Aorta => "Aorta",
        }
    }

    pub fn label_names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.name().to_string()).collect()
    }
}

/// A dense voxel grid of entity labels, row-major with x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    labels: Vec<EntityLabel>,
    standard_pose: ProbePose,
}

impl LabeledVolume {
    /// Builds a volume, checking the length, spacing and chamber-presence invariants.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        labels: Vec<EntityLabel>,
        standard_pose: ProbePose,
    ) -> Result<Self> {
        let v = Self::new_unchecked_chambers(dims, spacing, labels, standard_pose)?;
        for entity in EntityLabel::A4C_INCLUDED {
            if !v.labels.contains(&entity) {
                return Err(Error::contract(format!(
                    "volume has no {} voxels",
                    entity.name()
                )));
            }
        }
        Ok(v)
    }

    /// Like [`LabeledVolume::new`] but allows volumes without the four chambers
    /// (test fixtures, all-background files).
    pub fn new_unchecked_chambers(
        dims: [usize; 3],
        spacing: [f64; 3],
        labels: Vec<EntityLabel>,
        standard_pose: ProbePose,
    ) -> Result<Self> {
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::contract("volume dims overflow"))?;
        if labels.len() != expected {
            return Err(Error::contract(format!(
                "label count {} does not match dims {:?}",
                labels.len(),
                dims
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::contract(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        Ok(Self {
            dims,
            spacing,
            labels,
            standard_pose,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[EntityLabel] {
        &self.labels
    }

    pub fn standard_pose(&self) -> &ProbePose {
        &self.standard_pose
    }

    pub(crate) fn set_standard_pose(&mut self, pose: ProbePose) {
        self.standard_pose = pose;
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> EntityLabel {
        self.labels[self.index(i, j, k)]
    }

    /// Nearest-neighbor lookup at a physical point (mm). Voxel `(i, j, k)`
    /// covers `[i·s, (i+1)·s)` on each axis; points outside are Background.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> EntityLabel {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = p[a] / self.spacing[a];
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return EntityLabel::Background;
            }
            idx[a] = f as usize;
        }
        self.get(idx[0], idx[1], idx[2])
    }

    /// Physical extent of the grid in mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.spacing[0],
            (j as f64 + 0.5) * self.spacing[1],
            (k as f64 + 0.5) * self.spacing[2],
        ]
    }

    pub fn count(&self, label: EntityLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Mean voxel-center position of every voxel carrying `label`.
    pub fn centroid(&self, label: EntityLabel) -> Option<[f64; 3]> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    if self.get(i, j, k) == label {
                        let c = self.voxel_center(i, j, k);
                        for a in 0..3 {
                            acc[a] += c[a];
                        }
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| acc.map(|s| s / n as f64))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|&l| l as u8).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_set_is_closed() {
        assert_eq!(EntityLabel::ALL.len(), 8);
        assert_eq!(EntityLabel::Background as u8, 0);
        for (i, l) in EntityLabel::ALL.iter().enumerate() {
            assert_eq!(EntityLabel::from_u8(i as u8), Some(*l));
        }
        assert_eq!(EntityLabel::from_u8(8), None);
    }

    #[test]
    fn volume_rejects_bad_length_and_spacing() {
        let pose = ProbePose::identity();
        assert!(LabeledVolume::new_unchecked_chambers(
            [2, 2, 2],
            [1.0; 3],
            vec![EntityLabel::Background; 7],
            pose.clone()
        )
        .is_err());
        assert!(LabeledVolume::new_unchecked_chambers(
            [2, 2, 2],
            [1.0, 0.0, 1.0],
            vec![EntityLabel::Background; 8],
            pose.clone()
        )
        .is_err());
        // chamber-presence check
        assert!(
            LabeledVolume::new([2, 2, 2], [1.0; 3], vec![EntityLabel::Background; 8], pose)
                .is_err()
        );
    }

    #[test]
    fn sample_is_nearest_and_background_outside() {
        let mut labels = vec![EntityLabel::Background; 8];
        labels[7] = EntityLabel::LV; // (1,1,1)
        let v = LabeledVolume::new_unchecked_chambers(
            [2, 2, 2],
            [2.0; 3],
            labels,
            ProbePose::identity(),
        )
        .unwrap();
        assert_eq!(v.sample([3.0, 3.0, 3.0]), EntityLabel::LV);
        assert_eq!(v.sample([2.0, 2.0, 2.0]), EntityLabel::LV);
        assert_eq!(v.sample([1.99, 3.0, 3.0]), EntityLabel::Background);
        assert_eq!(v.sample([4.0, 3.0, 3.0]), EntityLabel::Background);
        assert_eq!(v.sample([-0.1, 3.0, 3.0]), EntityLabel::Background);
        assert_eq!(v.sample([f64::NAN, 3.0, 3.0]), EntityLabel::Background);
    }
}
