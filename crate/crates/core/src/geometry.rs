//! Pinhole camera model and observer pose.
//!
//! Camera frame convention: z forward, x right, y down. The camera, IMU and
//! robot frames coincide, so the IMU angular velocity is expressed directly in
//! the camera frame.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};

/// Pinhole intrinsics in pixels. No distortion is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub focal_length: f64,
    pub principal_point: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal_length: 400.0,
            principal_point: [320.0, 240.0],
            image_width: 640,
            image_height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(focal_length: f64, cu: f64, cv: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            focal_length,
            principal_point: [cu, cv],
            image_width: width,
            image_height: height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let [cu, cv] = self.principal_point;
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(MttError::InvalidConfig("focal_length must be > 0".into()));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(MttError::InvalidConfig("image size must be positive".into()));
        }
        if !(0.0..f64::from(self.image_width)).contains(&cu)
            || !(0.0..f64::from(self.image_height)).contains(&cv)
        {
            return Err(MttError::InvalidConfig(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn cu(&self) -> f64 {
        self.principal_point[0]
    }

    pub fn cv(&self) -> f64 {
        self.principal_point[1]
    }

    /// Image area in square pixels; the support of the uniform clutter density.
    pub fn area(&self) -> f64 {
        f64::from(self.image_width) * f64::from(self.image_height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Observer pose. `orientation` maps world-frame vectors into the camera frame,
/// so a world point `p` has camera coordinates `orientation * (p - position)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverPose {
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
    /// Body-frame angular velocity in rad/s, as reported by the IMU.
    pub angular_velocity: Vector3<f64>,
}

impl Default for ObserverPose {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: Rotation3::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }
}

impl ObserverPose {
    pub fn new(position: Vector3<f64>, orientation: Rotation3<f64>) -> Result<Self> {
        let pose = Self {
            position,
            orientation,
            angular_velocity: Vector3::zeros(),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let m: &Matrix3<f64> = self.orientation.matrix();
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(MttError::InvalidConfig(
                "orientation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    pub fn to_camera(&self, world: &Point3<f64>) -> Vector3<f64> {
        self.orientation * (world.coords - self.position)
    }

    pub fn to_world(&self, camera: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.orientation.inverse() * camera + self.position)
    }
}

/// The projected point lies on or behind the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehindCamera;

impl std::fmt::Display for BehindCamera {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("point is behind the camera")
    }
}

impl std::error::Error for BehindCamera {}

pub fn project_camera_point(
    p: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> std::result::Result<PixelPoint, BehindCamera> {
    if !(p.z > 0.0) {
        return Err(BehindCamera);
    }
    Ok(PixelPoint {
        u: k.focal_length * p.x / p.z + k.cu(),
        v: k.focal_length * p.y / p.z + k.cv(),
    })
}

pub fn project(
    world: &Point3<f64>,
    pose: &ObserverPose,
    k: &CameraIntrinsics,
) -> std::result::Result<PixelPoint, BehindCamera> {
    project_camera_point(&pose.to_camera(world), k)
}

/// Camera-frame point at depth `depth` along the ray through `p`.
pub fn back_project_camera(p: &PixelPoint, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new(
        (p.u - k.cu()) * depth / k.focal_length,
        (p.v - k.cv()) * depth / k.focal_length,
        depth,
    )
}

pub fn back_project(
    p: &PixelPoint,
    depth: f64,
    pose: &ObserverPose,
    k: &CameraIntrinsics,
) -> Point3<f64> {
    pose.to_world(&back_project_camera(p, depth, k))
}

pub fn in_view(p: &PixelPoint, k: &CameraIntrinsics) -> bool {
    (0.0..f64::from(k.image_width)).contains(&p.u) && (0.0..f64::from(k.image_height)).contains(&p.v)
}
