//! World-space gaze ray to cropped-image pixel transform.
//!
//! The chain is: ray/plane intersection in world coordinates, then the hit
//! point expressed in the screen's local frame (center at the origin, `u`
//! rightward, `v` upward, meters), then a per-axis scale into pixels with the
//! origin moved to the top-left corner and `v` mirrored into image rows.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rays closer than this to parallel (|dir · normal|) are treated as misses.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Unit-length tolerance for directions and quaternions.
pub const UNIT_EPS: f64 = 1e-9;
/// Maximum distance off the screen plane accepted by [`world_to_screen_local`].
pub const ON_PLANE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("gaze direction is not unit length (|d| = {0})")]
    DirectionNotUnit(f64),
    #[error("screen orientation quaternion is not normalized (|q| = {0})")]
    OrientationNotUnit(f64),
    #[error("screen extent must be positive, got {width_m} x {height_m} m")]
    BadExtent { width_m: f64, height_m: f64 },
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    BadDims(u32, u32),
    #[error("point is {0:.3e} m off the screen plane")]
    OffPlane(f64),
}

/// A point in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Gaze ray as reported by the eye tracker. Treated as a single (cyclopean)
/// ray; no assumption is made about how the tracker fused the two eyes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeRay {
    pub origin: WorldPoint,
    pub direction: Vector3<f64>,
    /// Milliseconds since session start.
    pub t: f64,
}

impl GazeRay {
    pub fn new(origin: WorldPoint, direction: Vector3<f64>, t: f64) -> Result<Self, GeometryError> {
        let ray = Self { origin, direction, t };
        ray.validate()?;
        Ok(ray)
    }

    /// Builds a ray from an arbitrary non-zero direction, normalizing it.
    pub fn towards(origin: WorldPoint, direction: Vector3<f64>, t: f64) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(GeometryError::DirectionNotUnit(n));
        }
        Self::new(origin, direction / n, t)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.origin.is_finite() {
            return Err(GeometryError::NonFinite("ray origin"));
        }
        if !self.direction.iter().all(|c| c.is_finite()) || !self.t.is_finite() {
            return Err(GeometryError::NonFinite("ray direction"));
        }
        let n = self.direction.norm();
        if (n - 1.0).abs() > UNIT_EPS {
            return Err(GeometryError::DirectionNotUnit(n));
        }
        Ok(())
    }

    pub fn at(&self, s: f64) -> Vector3<f64> {
        self.origin.to_vector() + self.direction * s
    }
}

/// Placement of the virtual text screen in the world.
///
/// `orientation` maps screen-frame vectors into the world frame; the screen's
/// local `+x` is rightward, `+y` upward and `+z` is the plane normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPose {
    pub center: WorldPoint,
    pub orientation: UnitQuaternion<f64>,
    pub width_m: f64,
    pub height_m: f64,
}

/// Serialized form of [`ScreenPose`]; the quaternion is stored as `[w, x, y, z]`
/// and validated, never silently renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPoseSpec {
    pub center: WorldPoint,
    pub orientation: [f64; 4],
    pub width_m: f64,
    pub height_m: f64,
}

impl ScreenPose {
    pub fn new(center: WorldPoint, orientation: UnitQuaternion<f64>, width_m: f64, height_m: f64) -> Result<Self, GeometryError> {
        let pose = Self { center, orientation, width_m, height_m };
        pose.validate()?;
        Ok(pose)
    }

    /// Frontal screen centered at `center`, normal along world `+z`.
    pub fn frontal(center: WorldPoint, width_m: f64, height_m: f64) -> Result<Self, GeometryError> {
        Self::new(center, UnitQuaternion::identity(), width_m, height_m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.center.is_finite() {
            return Err(GeometryError::NonFinite("screen center"));
        }
        if !(self.width_m > 0.0 && self.height_m > 0.0) || !self.width_m.is_finite() || !self.height_m.is_finite() {
            return Err(GeometryError::BadExtent { width_m: self.width_m, height_m: self.height_m });
        }
        let n = self.orientation.quaternion().norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_EPS {
            return Err(GeometryError::OrientationNotUnit(n));
        }
        Ok(())
    }

    /// Plane normal in world coordinates.
    pub fn normal(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn to_spec(&self) -> ScreenPoseSpec {
        let q = self.orientation.quaternion();
        ScreenPoseSpec { center: self.center, orientation: [q.w, q.i, q.j, q.k], width_m: self.width_m, height_m: self.height_m }
    }
}

impl TryFrom<ScreenPoseSpec> for ScreenPose {
    type Error = GeometryError;

    fn try_from(spec: ScreenPoseSpec) -> Result<Self, Self::Error> {
        let [w, x, y, z] = spec.orientation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_EPS {
            return Err(GeometryError::OrientationNotUnit(n));
        }
        ScreenPose::new(spec.center, UnitQuaternion::new_unchecked(q), spec.width_m, spec.height_m)
    }
}

/// Size of the cropped text image, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width_px: u32,
    pub height_px: u32,
}

impl ImageDims {
    pub fn new(width_px: u32, height_px: u32) -> Result<Self, GeometryError> {
        let dims = Self { width_px, height_px };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(GeometryError::BadDims(self.width_px, self.height_px));
        }
        Ok(())
    }
}

/// Image-space point: origin top-left, `y` downward. May fall outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x_px: f64,
    pub y_px: f64,
}

impl PixelPoint {
    pub const fn new(x_px: f64, y_px: f64) -> Self {
        Self { x_px, y_px }
    }

    pub fn is_finite(&self) -> bool {
        self.x_px.is_finite() && self.y_px.is_finite()
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x_px - other.x_px).hypot(self.y_px - other.y_px)
    }
}

/// Point on the screen in its local frame, meters from the screen center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenLocal {
    pub u_m: f64,
    pub v_m: f64,
}

impl ScreenLocal {
    pub const fn new(u_m: f64, v_m: f64) -> Self {
        Self { u_m, v_m }
    }
}

/// Where the ray meets the (infinite) screen plane, if it does so in front of
/// the ray origin.
pub fn intersect_ray_screen(ray: &GazeRay, pose: &ScreenPose) -> Option<WorldPoint> {
    let normal = pose.normal();
    let denom = ray.direction.dot(&normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let s = (pose.center.to_vector() - ray.origin.to_vector()).dot(&normal) / denom;
    if s < 0.0 {
        return None;
    }
    Some(WorldPoint::from_vector(ray.at(s)))
}

/// Expresses an on-plane world point in the screen's local frame.
pub fn world_to_screen_local(p: &WorldPoint, pose: &ScreenPose) -> Result<ScreenLocal, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::NonFinite("world point"));
    }
    let local = pose.orientation.inverse_transform_vector(&(p.to_vector() - pose.center.to_vector()));
    if local.z.abs() > ON_PLANE_EPS {
        return Err(GeometryError::OffPlane(local.z));
    }
    Ok(ScreenLocal::new(local.x, local.y))
}

pub fn screen_local_to_pixel(uv: ScreenLocal, pose: &ScreenPose, dims: ImageDims) -> PixelPoint {
    let w = f64::from(dims.width_px);
    let h = f64::from(dims.height_px);
    PixelPoint::new(uv.u_m * (w / pose.width_m) + w / 2.0, h / 2.0 - uv.v_m * (h / pose.height_m))
}

/// Exact inverse of [`screen_local_to_pixel`].
pub fn pixel_to_screen_local(p: PixelPoint, pose: &ScreenPose, dims: ImageDims) -> ScreenLocal {
    let w = f64::from(dims.width_px);
    let h = f64::from(dims.height_px);
    ScreenLocal::new((p.x_px - w / 2.0) * (pose.width_m / w), (h / 2.0 - p.y_px) * (pose.height_m / h))
}

/// Full chain: ray → plane hit → screen-local → pixel. `None` on a plane miss.
pub fn gaze_to_pixel(ray: &GazeRay, pose: &ScreenPose, dims: ImageDims) -> Option<PixelPoint> {
    let hit = intersect_ray_screen(ray, pose)?;
    // The hit is on the plane up to rounding, far inside ON_PLANE_EPS at any
    // sane working distance; a failure here means a wildly distant hit.
    let uv = world_to_screen_local(&hit, pose).ok()?;
    Some(screen_local_to_pixel(uv, pose, dims))
}

/// Point on the screen plane for a local coordinate; used by tests and the
/// simulator to aim rays.
pub fn screen_local_to_world(uv: ScreenLocal, pose: &ScreenPose) -> WorldPoint {
    WorldPoint::from_vector(pose.center.to_vector() + pose.orientation * Vector3::new(uv.u_m, uv.v_m, 0.0))
}
