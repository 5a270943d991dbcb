use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Pinhole depth camera. Camera frame is right-handed: +X right, +Y down,
/// +Z along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_min: f64,
    pub depth_max: f64,
}

/// Depth range of the stereo sensor used for the default camera (meters).
pub const DEFAULT_DEPTH_MIN: f64 = 0.1;
pub const DEFAULT_DEPTH_MAX: f64 = 10.0;

impl CameraModel {
    pub fn new(
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        depth_min: f64,
        depth_max: f64,
    ) -> Result<Self, GeometryError> {
        let camera = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            depth_min,
            depth_max,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Intrinsics from resolution and full field of view, principal point at
    /// the image center.
    pub fn from_fov(
        width: u32,
        height: u32,
        fov_h_deg: f64,
        fov_v_deg: f64,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidArgument(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        for (name, fov) in [("horizontal", fov_h_deg), ("vertical", fov_v_deg)] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(GeometryError::InvalidArgument(format!(
                    "{name} field of view must lie in (0, 180) degrees, got {fov}"
                )));
            }
        }
        let fx = (f64::from(width) / 2.0) / (fov_h_deg.to_radians() / 2.0).tan();
        let fy = (f64::from(height) / 2.0) / (fov_v_deg.to_radians() / 2.0).tan();
        Self::new(
            width,
            height,
            fx,
            fy,
            (f64::from(width) - 1.0) / 2.0,
            (f64::from(height) - 1.0) / 2.0,
            DEFAULT_DEPTH_MIN,
            DEFAULT_DEPTH_MAX,
        )
    }

    /// Depth stream of the RGB-D sensor: 1280x720, 87°x58°.
    pub fn depth_sensor() -> Self {
        Self::from_fov(1280, 720, 87.0, 58.0).expect("static intrinsics are valid")
    }

    pub fn with_depth_range(
        mut self,
        depth_min: f64,
        depth_max: f64,
    ) -> Result<Self, GeometryError> {
        self.depth_min = depth_min;
        self.depth_max = depth_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height)
            && self.depth_min > 0.0
            && self.depth_min < self.depth_max;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidArgument(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Integer coordinates are pixel centers, so the image spans
    /// `[-0.5, width - 0.5] x [-0.5, height - 0.5]`.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= -0.5
            && v >= -0.5
            && u <= f64::from(self.width) - 0.5
            && v <= f64::from(self.height) - 0.5
    }

    pub fn depth_in_range(&self, depth: f64) -> bool {
        depth.is_finite() && depth >= self.depth_min && depth <= self.depth_max
    }

    /// Back-projects pixel `(u, v)` at `depth` meters into the camera frame.
    pub fn deproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !self.depth_in_range(depth) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        if !self.contains_pixel(u, v) {
            return Err(GeometryError::PixelOutOfBounds { u, v });
        }
        Ok(Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// Projects a camera-frame point to `(u, v, depth)`. Points at or behind
    /// the image plane yield `None`.
    pub fn project(&self, point: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if !(point.z > 0.0) {
            return None;
        }
        Some((
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
            point.z,
        ))
    }

    /// Unnormalized ray direction through pixel `(u, v)` with unit z component,
    /// so the ray parameter equals depth.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}
