//! Calibration file: cameras (intrinsics, distortion, extrinsic, priority),
//! LiDAR extrinsics, and the GNSS antenna lever arm, as one JSON document.
//!
//! Extrinsic poses are stored as 7 numbers `[tx, ty, tz, qx, qy, qz, qw]`.

use crate::camera::{CameraModel, Distortion};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// k1, k2, p1, p2, k3
    #[serde(default)]
    pub distortion: [f64; 5],
    /// Vehicle -> camera, tx ty tz qx qy qz qw.
    pub extrinsic: [f64; 7],
    pub priority: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LidarEntry {
    /// Vehicle -> LiDAR, tx ty tz qx qy qz qw.
    pub extrinsic: [f64; 7],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub cameras: Vec<CameraEntry>,
    pub lidar: LidarEntry,
    /// GNSS antenna position in the vehicle frame, meters.
    #[serde(default)]
    pub gnss_lever_arm: [f64; 3],
}

pub fn pose_from_7(v: &[f64; 7]) -> Pose<f64> {
    Pose::from_wxyz_translation(v[6], v[3], v[4], v[5], Vector3::new(v[0], v[1], v[2]))
}

pub fn pose_to_7(p: &Pose<f64>) -> [f64; 7] {
    let q = p.rotation.into_inner();
    [
        p.translation.x,
        p.translation.y,
        p.translation.z,
        q.i,
        q.j,
        q.k,
        q.w,
    ]
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let calib: Calibration = serde_json::from_str(&text)
            .map_err(|e| Error::invalid("calibration file", e.to_string()))?;
        calib.validate()?;
        Ok(calib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid("calibration file", e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for cam in &self.cameras {
            if !seen.insert(cam.priority) {
                return Err(Error::invalid(
                    "calibration file",
                    format!("duplicate camera priority {}", cam.priority),
                ));
            }
            cam.to_model()?.validate()?;
        }
        Ok(())
    }

    pub fn lidar_extrinsic(&self) -> Pose<f64> {
        pose_from_7(&self.lidar.extrinsic)
    }

    /// Camera models sorted by ascending priority rank.
    pub fn camera_models(&self) -> Result<Vec<CameraModel<f64>>> {
        let mut models = self
            .cameras
            .iter()
            .map(|c| c.to_model())
            .collect::<Result<Vec<_>>>()?;
        models.sort_by_key(|m| m.priority);
        Ok(models)
    }
}

impl CameraEntry {
    pub fn to_model(&self) -> Result<CameraModel<f64>> {
        Ok(CameraModel {
            name: self.name.clone(),
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            distortion: Distortion {
                k1: self.distortion[0],
                k2: self.distortion[1],
                p1: self.distortion[2],
                p2: self.distortion[3],
                k3: self.distortion[4],
            },
            extrinsic: pose_from_7(&self.extrinsic),
            priority: self.priority,
        })
    }
}
