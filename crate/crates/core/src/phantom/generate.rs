use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EntityLabel, LabeledVolume};
use crate::anatomy::{extract_features, ViewDefinition};
use crate::error::{Error, Result};
use crate::imaging::{rotate_pose, slice_volume, Axis, ImageConfig, ProbePose, Quaternion};

/// Ellipsoid semi-axes in mm as `[lateral, elevational, depth]`, expressed
/// in the probe frame of the standard view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChamberScales {
    pub lv: [f64; 3],
    pub rv: [f64; 3],
    pub la: [f64; 3],
    pub ra: [f64; 3],
    pub aorta: [f64; 3],
}

impl Default for ChamberScales {
    fn default() -> Self {
        Self {
            lv: [15.0, 12.0, 30.0],
            rv: [12.0, 8.0, 26.0],
            la: [14.0, 11.0, 17.0],
            ra: [13.0, 8.0, 16.0],
            aorta: [5.0, 16.0, 8.0],
        }
    }
}

/// Per-phantom random perturbation bounds (uniform, symmetric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomJitter {
    /// Placement rotation of the heart in the volume, per axis.
    pub rotation_deg: f64,
    /// Placement translation of the heart in the volume, per axis.
    pub translation_mm: f64,
    /// Relative perturbation of every semi-axis.
    pub scale_frac: f64,
    /// In-plane perturbation of every chamber center.
    pub offset_mm: f64,
}

impl Default for PhantomJitter {
    fn default() -> Self {
        Self {
            rotation_deg: 8.0,
            translation_mm: 5.0,
            scale_frac: 0.01,
            offset_mm: 1.0,
        }
    }
}

impl PhantomJitter {
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            translation_mm: 0.0,
            scale_frac: 0.0,
            offset_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub chamber_scales: ChamberScales,
    pub jitter: PhantomJitter,
    /// Depth of the ventricular apices below the probe contact point.
    pub apex_depth_mm: f64,
    /// Lateral gap between left and right chambers.
    pub septum_mm: f64,
    /// Elevational offset of the aorta center from the standard plane. The
    /// default aorta is a tract reaching anteriorly out of the plane, so
    /// it shows up when the probe tilts forward.
    pub aorta_offset_mm: f64,
    /// Elevational offsets of the LV, RV, LA and RA centers from the
    /// standard plane. Nonzero offsets make off-plane tilts distinguishable
    /// by sign.
    pub chamber_elevation_mm: [f64; 4],
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: [160; 3],
            spacing: [1.0; 3],
            chamber_scales: ChamberScales::default(),
            jitter: PhantomJitter::default(),
            apex_depth_mm: 32.0,
            septum_mm: 6.0,
            aorta_offset_mm: 20.0,
            chamber_elevation_mm: [1.5, -2.5, -2.5, 2.5],
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = &self.jitter;
        for (name, v) in [
            ("rotation_deg", j.rotation_deg),
            ("translation_mm", j.translation_mm),
            ("scale_frac", j.scale_frac),
            ("offset_mm", j.offset_mm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "jitter {name} must be non-negative, got {v}"
                )));
            }
        }
        if j.scale_frac >= 1.0 {
            return Err(Error::contract("scale jitter must be below 1"));
        }
        let c = &self.chamber_scales;
        for axes in [c.lv, c.rv, c.la, c.ra, c.aorta] {
            if axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(Error::contract(format!(
                    "semi-axes must be positive, got {axes:?}"
                )));
            }
        }
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::contract("dims and spacing must be positive"));
        }
        for (name, v) in [
            ("apex_depth_mm", self.apex_depth_mm),
            ("septum_mm", self.septum_mm),
            ("aorta_offset_mm", self.aorta_offset_mm),
        ]
        .into_iter()
        .chain(
            self.chamber_elevation_mm
                .map(|e| ("chamber_elevation_mm", e)),
        ) {
            if !v.is_finite() {
                return Err(Error::contract(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipsoid {
        center: [f64; 3],
        semi: [f64; 3],
    },
    /// Elliptic disc spanning `[z0, z1)` in depth.
    Disc {
        center: [f64; 2],
        radii: [f64; 2],
        z0: f64,
        z1: f64,
    },
}

impl Shape {
    #[inline]
    fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Ellipsoid { center, semi } => {
                let mut s = 0.0;
                for a in 0..3 {
                    let d = (p[a] - center[a]) / semi[a];
                    s += d * d;
                }
                s <= 1.0
            }
            Shape::Disc {
                center,
                radii,
                z0,
                z1,
            } => {
                if p[2] < z0 || p[2] >= z1 {
                    return false;
                }
                let dx = (p[0] - center[0]) / radii[0];
                let dy = (p[1] - center[1]) / radii[1];
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

struct Anatomy {
    /// Painted in order; later shapes overwrite earlier ones.
    shapes: Vec<(Shape, EntityLabel)>,
}

fn layout(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Anatomy {
    let j = &spec.jitter;
    let mut unit = |bound: f64| {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    };
    let mut scaled = |axes: [f64; 3]| axes.map(|a| a * (1.0 + unit(j.scale_frac)));
    let c = &spec.chamber_scales;
    let (lv, rv, la, ra, ao) = (
        scaled(c.lv),
        scaled(c.rv),
        scaled(c.la),
        scaled(c.ra),
        scaled(c.aorta),
    );
    let mut offs = [0.0; 8];
    for o in offs.iter_mut() {
        *o = unit(j.offset_mm);
    }

    let half_gap = spec.septum_mm / 2.0;
    let valve = 2.0 * spec.spacing.iter().cloned().fold(f64::INFINITY, f64::min);

    let [e_lv, e_rv, e_la, e_ra] = spec.chamber_elevation_mm;
    let lv_c = [
        half_gap + lv[0] + offs[0],
        e_lv,
        spec.apex_depth_mm + lv[2] + offs[1],
    ];
    let rv_c = [
        -(half_gap + rv[0]) + offs[2],
        e_rv,
        spec.apex_depth_mm + rv[2] + offs[3],
    ];
    let lv_base = lv_c[2] + lv[2];
    let rv_base = rv_c[2] + rv[2];
    let la_c = [
        half_gap + la[0] + offs[4],
        e_la,
        lv_base + valve + la[2] + offs[5].abs(),
    ];
    let ra_c = [
        -(half_gap + ra[0]) + offs[6],
        e_ra,
        rv_base + valve + ra[2] + offs[7].abs(),
    ];
    let mv = Shape::Disc {
        center: [(lv_c[0] + la_c[0]) / 2.0, (e_lv + e_la) / 2.0],
        radii: [0.6 * lv[0].min(la[0]), 0.6 * lv[1].min(la[1])],
        z0: lv_base,
        z1: lv_base + valve,
    };
    let tv = Shape::Disc {
        center: [(rv_c[0] + ra_c[0]) / 2.0, (e_rv + e_ra) / 2.0],
        radii: [0.6 * rv[0].min(ra[0]), 0.6 * rv[1].min(ra[1])],
        z0: rv_base,
        z1: rv_base + valve,
    };
    let ao_c = [0.0, spec.aorta_offset_mm, lv_base];

    Anatomy {
        shapes: vec![
            (
                Shape::Ellipsoid {
                    center: ao_c,
                    semi: ao,
                },
                EntityLabel::Aorta,
            ),
            (mv, EntityLabel::MV),
            (tv, EntityLabel::TV),
            (
                Shape::Ellipsoid {
                    center: lv_c,
                    semi: lv,
                },
                EntityLabel::LV,
            ),
            (
                Shape::Ellipsoid {
                    center: rv_c,
                    semi: rv,
                },
                EntityLabel::RV,
            ),
            (
                Shape::Ellipsoid {
                    center: la_c,
                    semi: la,
                },
                EntityLabel::LA,
            ),
            (
                Shape::Ellipsoid {
                    center: ra_c,
                    semi: ra,
                },
                EntityLabel::RA,
            ),
        ],
    }
}

fn placement(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> ProbePose {
    let j = &spec.jitter;
    let mut unit = |bound: f64| {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    };
    let ext = [
        spec.dims[0] as f64 * spec.spacing[0],
        spec.dims[1] as f64 * spec.spacing[1],
        spec.dims[2] as f64 * spec.spacing[2],
    ];
    let position = [
        ext[0] / 2.0 + unit(j.translation_mm),
        ext[1] / 2.0 + unit(j.translation_mm),
        (0.05 * ext[2]).max(2.0) + unit(j.translation_mm).abs(),
    ];
    let q = Quaternion::from_axis_angle([0.0, 0.0, 1.0], unit(j.rotation_deg).to_radians())
        * Quaternion::from_axis_angle([0.0, 1.0, 0.0], unit(j.rotation_deg).to_radians())
        * Quaternion::from_axis_angle([1.0, 0.0, 0.0], unit(j.rotation_deg).to_radians());
    ProbePose::new(position, q)
}

fn rasterize(spec: &PhantomSpec, anatomy: &Anatomy, pose: &ProbePose) -> Vec<EntityLabel> {
    let [nx, ny, nz] = spec.dims;
    let mut labels = vec![EntityLabel::Background; nx * ny * nz];
    for k in 0..nz {
        for jy in 0..ny {
            for i in 0..nx {
                let p = [
                    (i as f64 + 0.5) * spec.spacing[0],
                    (jy as f64 + 0.5) * spec.spacing[1],
                    (k as f64 + 0.5) * spec.spacing[2],
                ];
                let h = pose.to_probe(p);
                let mut label = EntityLabel::Background;
                for (shape, l) in &anatomy.shapes {
                    if shape.contains(h) {
                        label = *l;
                    }
                }
                labels[i + nx * (jy + ny * k)] = label;
            }
        }
    }
    labels
}

/// True if any LV voxel is face-adjacent to an RV voxel.
fn ventricles_touch(v: &LabeledVolume) -> bool {
    let [nx, ny, nz] = v.dims();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if v.get(i, j, k) != EntityLabel::LV {
                    continue;
                }
                let neighbors = [
                    (i + 1 < nx).then(|| (i + 1, j, k)),
                    (i > 0).then(|| (i - 1, j, k)),
                    (j + 1 < ny).then(|| (i, j + 1, k)),
                    (j > 0).then(|| (i, j - 1, k)),
                    (k + 1 < nz).then(|| (i, j, k + 1)),
                    (k > 0).then(|| (i, j, k - 1)),
                ];
                if neighbors
                    .iter()
                    .flatten()
                    .any(|&(a, b, c)| v.get(a, b, c) == EntityLabel::RV)
                {
                    return true;
                }
            }
        }
    }
    false
}

/// Turns the probe in-plane (about its elevational axis) until the mean
/// polar angle of the four chambers sits on the beam axis.
fn center_view(volume: &LabeledVolume, pose: ProbePose, cfg: &ImageConfig) -> Result<ProbePose> {
    let view = ViewDefinition::a4c();
    let mut pose = pose;
    for _ in 0..8 {
        let f = extract_features(&slice_volume(volume, &pose, cfg)?, &view);
        if f.phi_all.abs() < 1e-4 {
            break;
        }
        pose = rotate_pose(&pose, Axis::Y, f.phi_all * cfg.half_angle_deg);
    }
    Ok(pose)
}

/// Builds a procedural four-chamber heart and records the probe pose of
/// its apical four-chamber view.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<LabeledVolume> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anatomy = layout(spec, &mut rng);
    let pose = placement(spec, &mut rng);
    let labels = rasterize(spec, &anatomy, &pose);
    let mut volume =
        LabeledVolume::new_unchecked_chambers(spec.dims, spec.spacing, labels, pose.clone())?;
    for e in EntityLabel::A4C_INCLUDED {
        if volume.count(e) == 0 {
            return Err(Error::Generation(format!(
                "{} did not fit in the volume",
                e.name()
            )));
        }
    }
    if ventricles_touch(&volume) {
        return Err(Error::Generation(
            "LV and RV merge into one connected region".into(),
        ));
    }

    let cfg = ImageConfig::default();
    let pose = center_view(&volume, pose, &cfg)?;
    let f = extract_features(&slice_volume(&volume, &pose, &cfg)?, &ViewDefinition::a4c());
    if f.visible_included() != 4 || f.phi_all.abs() > 0.2 || f.is_visible(EntityLabel::Aorta) {
        return Err(Error::Generation(format!(
            "standard view unusable (visible {}, phi {:.3}, aorta px {})",
            f.visible_included(),
            f.phi_all,
            f.area[EntityLabel::Aorta.index()]
        )));
    }
    volume.set_standard_pose(pose);
    Ok(volume)
}
