use serde::{Deserialize, Serialize};

use super::pose::ProbePose;
use crate::error::{Error, Result};
use crate::phantom::{EntityLabel, LabeledVolume};

/// Sector image geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub width: usize,
    pub height: usize,
    pub half_angle_deg: f64,
    pub depth_mm: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            half_angle_deg: 45.0,
            depth_mm: 140.0,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("image size must be positive"));
        }
        if !(self.half_angle_deg > 0.0 && self.half_angle_deg <= 90.0) {
            return Err(Error::contract(format!(
                "half angle must be in (0, 90] degrees, got {}",
                self.half_angle_deg
            )));
        }
        if !(self.depth_mm > 0.0 && self.depth_mm.is_finite()) {
            return Err(Error::contract(format!(
                "depth must be positive, got {}",
                self.depth_mm
            )));
        }
        if self.depth_px() < 1.0 {
            return Err(Error::contract("image too small for a sector"));
        }
        Ok(())
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle_deg.to_radians()
    }

    /// Largest sector radius (px) such that the whole wedge fits in the image.
    pub fn depth_px(&self) -> f64 {
        let half_width = self.width as f64 / 2.0;
        let s = self.half_angle().sin();
        let lateral_limit = if s > 0.0 {
            half_width / s
        } else {
            f64::INFINITY
        };
        (self.height as f64).min(lateral_limit).floor()
    }
}

/// A 2D multi-class label image in sector geometry with the apex at the top-center.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    labels: Vec<EntityLabel>,
    depth_px: f64,
    half_angle: f64,
}

impl MaskImage {
    /// Wraps explicit labels, rejecting foreground outside the sector wedge.
    pub fn new(
        width: usize,
        height: usize,
        depth_px: f64,
        half_angle: f64,
        labels: Vec<EntityLabel>,
    ) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::contract(format!(
                "mask has {} labels for {width}x{height}",
                labels.len()
            )));
        }
        if !(depth_px > 0.0 && depth_px <= height as f64) {
            return Err(Error::contract(format!(
                "depth_px {depth_px} outside (0, {height}]"
            )));
        }
        if !(half_angle > 0.0 && half_angle <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::contract(format!(
                "half angle {half_angle} rad out of range"
            )));
        }
        let m = Self {
            width,
            height,
            labels,
            depth_px,
            half_angle,
        };
        for v in 0..height {
            for u in 0..width {
                if m.get(u, v) != EntityLabel::Background && !m.in_sector(u, v) {
                    return Err(Error::contract(format!(
                        "pixel ({u},{v}) lies outside the sector but is labeled"
                    )));
                }
            }
        }
        Ok(m)
    }

    /// An all-background mask with the geometry of `cfg`.
    pub fn empty(cfg: &ImageConfig) -> Self {
        Self {
            width: cfg.width,
            height: cfg.height,
            labels: vec![EntityLabel::Background; cfg.width * cfg.height],
            depth_px: cfg.depth_px(),
            half_angle: cfg.half_angle(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[EntityLabel] {
        &self.labels
    }

    pub fn depth_px(&self) -> f64 {
        self.depth_px
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn apex(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, 0.0]
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> EntityLabel {
        self.labels[v * self.width + u]
    }

    /// Pixel-center offset from the apex: (lateral, down).
    #[inline]
    pub fn offset(&self, u: usize, v: usize) -> (f64, f64) {
        (u as f64 + 0.5 - self.width as f64 / 2.0, v as f64 + 0.5)
    }

    /// Polar coordinates of a pixel center: angle from the straight-down
    /// depth axis (positive toward increasing column) and radius in pixels.
    #[inline]
    pub fn polar(&self, u: usize, v: usize) -> (f64, f64) {
        let (dx, dy) = self.offset(u, v);
        (dx.atan2(dy), dx.hypot(dy))
    }

    #[inline]
    pub fn in_sector(&self, u: usize, v: usize) -> bool {
        let (theta, rho) = self.polar(u, v);
        rho <= self.depth_px && theta.abs() <= self.half_angle
    }

    pub fn count(&self, label: EntityLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Precomputed sector geometry for repeated slicing with one image config.
#[derive(Debug, Clone)]
pub struct Slicer {
    cfg: ImageConfig,
    depth_px: f64,
    /// (pixel index, lateral mm, depth mm) for every in-sector pixel.
    pixels: Vec<(u32, f64, f64)>,
}

impl Slicer {
    pub fn new(cfg: &ImageConfig) -> Result<Self> {
        cfg.validate()?;
        let template = MaskImage::empty(cfg);
        let scale = cfg.depth_mm / template.depth_px;
        let mut pixels = Vec::new();
        for v in 0..cfg.height {
            for u in 0..cfg.width {
                if template.in_sector(u, v) {
                    let (dx, dy) = template.offset(u, v);
                    pixels.push(((v * cfg.width + u) as u32, dx * scale, dy * scale));
                }
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            depth_px: template.depth_px,
            pixels,
        })
    }

    pub fn config(&self) -> &ImageConfig {
        &self.cfg
    }

    /// Cuts the volume with the probe's image plane (probe x/z) and samples
    /// a sector mask by nearest-neighbor lookup.
    pub fn slice(&self, volume: &LabeledVolume, pose: &ProbePose) -> MaskImage {
        let mut labels = vec![EntityLabel::Background; self.cfg.width * self.cfg.height];
        let rot = pose.orientation().to_matrix();
        let lateral_dir = [rot[0][0], rot[1][0], rot[2][0]];
        let depth_dir = [rot[0][2], rot[1][2], rot[2][2]];
        let origin = pose.position();
        for &(idx, lat, dep) in &self.pixels {
            let p = [
                origin[0] + lat * lateral_dir[0] + dep * depth_dir[0],
                origin[1] + lat * lateral_dir[1] + dep * depth_dir[1],
                origin[2] + lat * lateral_dir[2] + dep * depth_dir[2],
            ];
            labels[idx as usize] = volume.sample(p);
        }
        MaskImage {
            width: self.cfg.width,
            height: self.cfg.height,
            labels,
            depth_px: self.depth_px,
            half_angle: self.cfg.half_angle(),
        }
    }
}

/// One-shot form of [`Slicer::slice`].
pub fn slice_volume(
    volume: &LabeledVolume,
    pose: &ProbePose,
    cfg: &ImageConfig,
) -> Result<MaskImage> {
    Ok(Slicer::new(cfg)?.slice(volume, pose))
}
