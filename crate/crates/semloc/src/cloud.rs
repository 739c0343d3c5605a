//! LiDAR point clouds: positions, per-point scan-relative time, optional labels.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::taxonomy::UnifiedClass;
use crate::time::Timestamp;
use nalgebra::Vector3;

#[derive(Clone, Debug)]
pub struct PointCloud {
    /// Positions in the sensor (or stated) frame, meters.
    pub points: Vec<Vector3<f64>>,
    /// Per-point offset from `stamp` in nanoseconds. Empty means all zero.
    pub rel_time: Vec<i64>,
    /// Per-point semantic class, if labeled.
    pub labels: Option<Vec<UnifiedClass>>,
    pub stamp: Timestamp,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, stamp: Timestamp) -> Self {
        PointCloud {
            points,
            rel_time: Vec::new(),
            labels: None,
            stamp,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rel_time.is_empty() && self.rel_time.len() != self.points.len() {
            return Err(Error::invalid(
                "point cloud",
                format!(
                    "rel_time length {} != point count {}",
                    self.rel_time.len(),
                    self.points.len()
                ),
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::LabelCountMismatch {
                    labels: labels.len(),
                    points: self.points.len(),
                });
            }
        }
        if let Some(p) = self.points.iter().find(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("point cloud", format!("non-finite point {p:?}")));
        }
        Ok(())
    }

    pub fn rel_time_of(&self, i: usize) -> i64 {
        if self.rel_time.is_empty() {
            0
        } else {
            self.rel_time[i]
        }
    }

    pub fn label_of(&self, i: usize) -> UnifiedClass {
        match &self.labels {
            Some(l) => l[i],
            None => UnifiedClass::Unlabeled,
        }
    }

    /// Rigidly transformed copy; labels and timing carried along.
    pub fn transformed(&self, pose: &Pose<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            rel_time: self.rel_time.clone(),
            labels: self.labels.clone(),
            stamp: self.stamp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_label_mismatch() {
        let mut c = PointCloud::new(
            vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
            Timestamp::from_nanos(0),
        );
        c.labels = Some(vec![UnifiedClass::Road]);
        assert!(matches!(
            c.validate(),
            Err(Error::LabelCountMismatch { labels: 1, points: 2 })
        ));
    }

    #[test]
    fn validate_catches_nan() {
        let c = PointCloud::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], Timestamp::from_nanos(0));
        assert!(c.validate().is_err());
    }
}
