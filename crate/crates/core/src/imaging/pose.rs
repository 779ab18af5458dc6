use std::ops::Mul;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Probe-local rotation axis.
///
/// `Z` is the beam (depth) axis, `X` the lateral axis lying in the image
/// plane, `Y` the elevational axis normal to the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn unit(self) -> [f64; 3] {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }
}

/// Quaternion `w + xi + yj + zk`. Only unit quaternions are used as rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle_rad * 0.5).sin_cos();
        let k = s / n;
        Self {
            w: c,
            x: axis[0] * k,
            y: axis[1] * k,
            z: axis[2] * k,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotation matrix (row-major) of a unit quaternion.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.to_matrix(), v)
    }

    /// Distance between rotations, insensitive to the `q` / `-q` double cover.
    pub fn rotation_distance(&self, other: &Quaternion) -> f64 {
        let d = |s: f64| {
            ((self.w - s * other.w).powi(2)
                + (self.x - s * other.x).powi(2)
                + (self.y - s * other.y).powi(2)
                + (self.z - s * other.z).powi(2))
            .sqrt()
        };
        d(1.0).min(d(-1.0))
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion {
            w: self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            x: self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            y: self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            z: self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        }
    }
}

pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Rigid probe pose: sector apex position (mm, volume frame) plus the
/// orientation taking probe-frame vectors to volume-frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePose {
    position: [f64; 3],
    orientation: Quaternion,
}

impl ProbePose {
    /// Builds a pose, renormalizing the orientation.
    pub fn new(position: [f64; 3], orientation: Quaternion) -> Self {
        Self {
            position,
            orientation: orientation.normalized(),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            orientation: Quaternion::IDENTITY,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        self.position
    }

    pub fn orientation(&self) -> Quaternion {
        self.orientation
    }

    /// Maps a probe-frame point (mm) into the volume frame.
    pub fn to_volume(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.orientation.rotate(p);
        [
            r[0] + self.position[0],
            r[1] + self.position[1],
            r[2] + self.position[2],
        ]
    }

    /// Maps a volume-frame point (mm) into the probe frame.
    pub fn to_probe(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        ];
        self.orientation.conjugate().rotate(d)
    }

    /// True when both poses agree within `tol` (position in mm, orientation
    /// as quaternion distance modulo sign).
    pub fn approx_eq(&self, other: &ProbePose, tol: f64) -> bool {
        let dp = (0..3)
            .map(|i| (self.position[i] - other.position[i]).abs())
            .fold(0.0, f64::max);
        dp <= tol && self.orientation.rotation_distance(&other.orientation) <= tol
    }
}

/// Rotates the probe about one of its own axes by `angle_deg`, keeping the
/// contact point fixed.
pub fn rotate_pose(pose: &ProbePose, axis: Axis, angle_deg: f64) -> ProbePose {
    let local = Quaternion::from_axis_angle(axis.unit(), angle_deg.to_radians());
    ProbePose::new(pose.position, pose.orientation * local)
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// `[w, x, y, z]`
    orientation: [f64; 4],
}

impl Serialize for ProbePose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation;
        PoseRepr {
            position: self.position,
            orientation: [q.w, q.x, q.y, q.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProbePose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, x, y, z] = r.orientation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) || r.position.iter().any(|p| !p.is_finite()) {
            return Err(serde::de::Error::custom(
                "pose must be finite with a nonzero quaternion",
            ));
        }
        // Already-unit quaternions are kept bit-for-bit so files round-trip exactly.
        let orientation = if (n - 1.0).abs() <= 1e-9 {
            q
        } else {
            q.normalized()
        };
        Ok(ProbePose {
            position: r.position,
            orientation,
        })
    }
}
