//! Points, rigid poses, object models, pinhole cameras and depth images.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bounding::minimum_enclosing_sphere;
use crate::error::{Error, Result};

/// A point or free vector in meters.
pub type Point3 = Vector3<f64>;

/// Minimum number of surface samples an [`ObjectModel`] must carry.
pub const MIN_MODEL_POINTS: usize = 32;

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Point3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Point3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Point3::zeros())
    }

    pub fn from_translation(translation: Point3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Point3::zeros())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidPose {
        let rotation = self.rotation.inverse();
        RigidPose {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Quaternion as `[w, x, y, z]` with a non-negative scalar part.
    pub fn canonical_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn from_wxyz(wxyz: [f64; 4], translation: [f64; 3]) -> Result<RigidPose> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid(format!("degenerate quaternion {wxyz:?}")));
        }
        let t = Point3::from(translation);
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite translation"));
        }
        // keep stored unit quaternions bit-exact
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(RigidPose::new(rotation, t))
    }
}

pub fn apply_pose(pose: &RigidPose, p: &Point3) -> Point3 {
    pose.apply(p)
}

pub fn compose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    a.compose(b)
}

pub fn invert(a: &RigidPose) -> RigidPose {
    a.invert()
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for RigidPose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.canonical_wxyz(),
            translation: self.translation.into(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidPose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        RigidPose::from_wxyz(repr.rotation, repr.translation).map_err(serde::de::Error::custom)
    }
}

/// Rotation group leaving an object's geometry invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetryKind {
    None,
    Cyclic { n: u32 },
    Revolution,
    RevolutionWithFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymmetryRepr", into = "SymmetryRepr")]
pub struct SymmetryClass {
    pub kind: SymmetryKind,
    pub axis: Unit<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SymmetryRepr {
    #[serde(flatten)]
    kind: SymmetryKind,
    axis: [f64; 3],
}

impl TryFrom<SymmetryRepr> for SymmetryClass {
    type Error = Error;

    fn try_from(repr: SymmetryRepr) -> Result<Self> {
        SymmetryClass::new(repr.kind, Vector3::from(repr.axis))
    }
}

impl From<SymmetryClass> for SymmetryRepr {
    fn from(sym: SymmetryClass) -> Self {
        SymmetryRepr {
            kind: sym.kind,
            axis: sym.axis.into_inner().into(),
        }
    }
}

impl SymmetryClass {
    pub fn new(kind: SymmetryKind, axis: Vector3<f64>) -> Result<Self> {
        if let SymmetryKind::Cyclic { n } = kind {
            if n < 2 {
                return Err(Error::invalid(format!("cyclic symmetry needs n >= 2, got {n}")));
            }
        }
        let norm = axis.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::invalid("symmetry axis must be a nonzero vector"));
        }
        Ok(Self {
            kind,
            axis: Unit::new_normalize(axis),
        })
    }

    pub fn none() -> Self {
        Self {
            kind: SymmetryKind::None,
            axis: Vector3::z_axis(),
        }
    }

    pub fn cyclic(n: u32, axis: Vector3<f64>) -> Result<Self> {
        Self::new(SymmetryKind::Cyclic { n }, axis)
    }

    pub fn revolution(axis: Vector3<f64>) -> Result<Self> {
        Self::new(SymmetryKind::Revolution, axis)
    }

    pub fn revolution_with_flip(axis: Vector3<f64>) -> Result<Self> {
        Self::new(SymmetryKind::RevolutionWithFlip, axis)
    }
}

/// A rigid object: surface samples in its model frame plus symmetry and scale.
///
/// The model frame origin is the center of the minimum enclosing sphere and
/// `scale` is that sphere's diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub id: usize,
    #[serde(default)]
    pub name: String,
    pub symmetry: SymmetryClass,
    pub scale: f64,
    pub points: Vec<Point3>,
}

impl ObjectModel {
    /// Builds a model, recentering `points` on their bounding-sphere center.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        points: Vec<Point3>,
        symmetry: SymmetryClass,
    ) -> Result<Self> {
        if points.len() < MIN_MODEL_POINTS {
            return Err(Error::invalid(format!(
                "object model needs at least {MIN_MODEL_POINTS} points, got {}",
                points.len()
            )));
        }
        if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("object model has non-finite points"));
        }
        let sphere = minimum_enclosing_sphere(&points)?;
        let points: Vec<Point3> = points.iter().map(|p| p - sphere.center).collect();
        Ok(Self {
            id,
            name: name.into(),
            symmetry,
            scale: 2.0 * sphere.radius,
            points,
        })
    }

    /// Same shape uniformly scaled by `factor` about the model origin.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            id: self.id,
            name: self.name.clone(),
            symmetry: self.symmetry,
            scale: self.scale * factor,
            points: self.points.iter().map(|p| p * factor).collect(),
        }
    }

    /// Rescaled copy with bounding-sphere diameter `scale`.
    pub fn with_scale(&self, scale: f64) -> Self {
        self.rescaled(scale / self.scale)
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.scale
    }

    /// Checks the stored scale and centering against a fresh bounding sphere.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_MODEL_POINTS {
            return Err(Error::invalid(format!(
                "model {}: fewer than {MIN_MODEL_POINTS} points",
                self.id
            )));
        }
        let sphere = minimum_enclosing_sphere(&self.points)?;
        let tol = 1e-6 * self.scale.max(1.0);
        if (2.0 * sphere.radius - self.scale).abs() > tol {
            return Err(Error::invalid(format!(
                "model {}: scale {} does not match bounding-sphere diameter {}",
                self.id,
                self.scale,
                2.0 * sphere.radius
            )));
        }
        if sphere.center.norm() > tol {
            return Err(Error::invalid(format!(
                "model {}: points not centered on bounding sphere",
                self.id
            )));
        }
        Ok(())
    }
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Continuous pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3 {
        Point3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }
}

/// Row-major depth map in meters; `0` marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub const MISSING: f32 = 0.0;

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Self::MISSING; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                left: width * height,
                right: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|&&d| d != Self::MISSING && !(d.is_finite() && d > 0.0)) {
            return Err(Error::invalid(format!("invalid depth value {bad}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, depth: f32) {
        self.data[v * self.width + u] = depth;
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) != Self::MISSING
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d != Self::MISSING).count()
    }
}
