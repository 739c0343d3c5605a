//! Pinhole camera model with radial-tangential distortion.
//!
//! Frame conventions: vehicle x forward / y left / z up; camera z forward /
//! x right / y down. `extrinsic` maps vehicle-frame points into the camera
//! frame.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scalar::Real;
use nalgebra::{Vector2, Vector3};

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Distortion<T: Real> {
    pub k1: T,
    pub k2: T,
    pub p1: T,
    pub p2: T,
    pub k3: T,
}

impl<T: Real> Distortion<T> {
    pub fn none() -> Self {
        Distortion {
            k1: T::zero(),
            k2: T::zero(),
            p1: T::zero(),
            p2: T::zero(),
            k3: T::zero(),
        }
    }

    /// Distort normalized image coordinates.
    pub fn apply(&self, n: &Vector2<T>) -> Vector2<T> {
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = T::one() + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let two = T::from_config(2.0);
        let xd = x * radial + two * self.p1 * x * y + self.p2 * (r2 + two * x * x);
        let yd = y * radial + self.p1 * (r2 + two * y * y) + two * self.p2 * x * y;
        Vector2::new(xd, yd)
    }

    /// Iteratively invert the distortion (fixed point, <= 10 iterations).
    pub fn undistort(&self, d: &Vector2<T>) -> Vector2<T> {
        let mut n = *d;
        for _ in 0..10 {
            let err = self.apply(&n) - d;
            n -= err;
        }
        n
    }
}

#[derive(Clone, Debug)]
pub struct CameraModel<T: Real> {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub distortion: Distortion<T>,
    /// Vehicle frame -> camera frame.
    pub extrinsic: Pose<T>,
    /// 0 = processed first during multi-camera fusion.
    pub priority: u32,
}

impl<T: Real> CameraModel<T> {
    pub fn validate(&self) -> Result<()> {
        let w = T::from_config(self.width as f64);
        let h = T::from_config(self.height as f64);
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(Error::invalid("camera model", "fx and fy must be positive"));
        }
        if self.cx <= T::zero() || self.cx >= w || self.cy <= T::zero() || self.cy >= h {
            return Err(Error::invalid(
                "camera model",
                "principal point must lie inside the image",
            ));
        }
        Ok(())
    }

    /// Project a camera-frame point. Returns the real-valued pixel, or None
    /// when the point is at depth <= depth_min or falls outside the image.
    pub fn project(&self, p_cam: &Vector3<T>, depth_min: T) -> Option<Vector2<T>> {
        if p_cam.z <= depth_min {
            return None;
        }
        let n = Vector2::new(p_cam.x / p_cam.z, p_cam.y / p_cam.z);
        let d = self.distortion.apply(&n);
        let u = self.fx * d.x + self.cx;
        let v = self.fy * d.y + self.cy;
        let w = T::from_config(self.width as f64);
        let h = T::from_config(self.height as f64);
        if u < T::zero() || u >= w || v < T::zero() || v >= h {
            return None;
        }
        Some(Vector2::new(u, v))
    }

    /// Camera-frame point for a pixel at the given depth.
    pub fn back_project(&self, pixel: &Vector2<T>, depth: T) -> Vector3<T> {
        let d = Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy);
        let n = self.distortion.undistort(&d);
        Vector3::new(n.x * depth, n.y * depth, depth)
    }

    /// Unit ray direction in the camera frame through a pixel center.
    pub fn pixel_ray(&self, pixel: &Vector2<T>) -> Vector3<T> {
        self.back_project(pixel, T::one()).normalize()
    }
}
