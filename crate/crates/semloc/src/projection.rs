//! LiDAR-to-camera projection labeling and multi-camera label fusion.
//!
//! Points are projected into per-camera label images; a point takes the class
//! of its nearest integer pixel. Cameras are processed in ascending priority
//! rank and previously labeled points are never overwritten, so the
//! processing order decides disagreements.

use crate::camera::CameraModel;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::UnifiedClass;
use crate::time::Timestamp;
use nalgebra::Vector2;
use std::collections::HashMap;

/// Default minimum depth: rejects returns on the ego vehicle near the optics.
pub const DEPTH_MIN: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct ProjectionConfig {
    pub depth_min: f64,
    /// When on, only the nearest-in-depth point per pixel receives a label.
    pub zbuffer: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            depth_min: DEPTH_MIN,
            zbuffer: false,
        }
    }
}

/// Per-pixel class ids for one camera frame.
#[derive(Clone, Debug)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    /// Row-major unified class ids.
    pub classes: Vec<u16>,
    pub stamp: Timestamp,
    pub camera: String,
}

impl LabelImage {
    pub fn filled(width: u32, height: u32, class: UnifiedClass, stamp: Timestamp, camera: &str) -> Self {
        LabelImage {
            width,
            height,
            classes: vec![class.id(); (width * height) as usize],
            stamp,
            camera: camera.to_string(),
        }
    }

    pub fn class_at(&self, col: u32, row: u32) -> Result<UnifiedClass> {
        let id = self.classes[(row * self.width + col) as usize];
        UnifiedClass::from_id(id).ok_or(Error::UnknownClassId {
            id: id as u32,
            taxonomy: "unified".into(),
        })
    }

    pub fn set(&mut self, col: u32, row: u32, class: UnifiedClass) {
        self.classes[(row * self.width + col) as usize] = class.id();
    }

    pub fn validate_against(&self, model: &CameraModel<f64>) -> Result<()> {
        if self.width != model.width || self.height != model.height {
            return Err(Error::DimensionMismatch {
                image_width: self.width,
                image_height: self.height,
                model_width: model.width,
                model_height: model.height,
            });
        }
        Ok(())
    }
}

/// Where a point landed: class, camera rank, pixel, camera-frame depth.
#[derive(Clone, Debug)]
pub struct PointHit {
    pub class: UnifiedClass,
    pub camera: String,
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ProjectionOutcome {
    pub hits: Vec<Option<PointHit>>,
}

impl ProjectionOutcome {
    pub fn labeled_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }
}

/// Nearest integer pixel, halves rounding toward negative infinity.
fn nearest_pixel(coord: f64, upper: u32) -> u32 {
    let idx = (coord - 0.5).ceil();
    (idx.max(0.0) as u32).min(upper - 1)
}

/// Label every in-frustum point of a vehicle-frame cloud from one camera.
pub fn label_cloud(
    cloud: &PointCloud,
    model: &CameraModel<f64>,
    image: &LabelImage,
    cfg: &ProjectionConfig,
) -> Result<ProjectionOutcome> {
    image.validate_against(model)?;
    let mut hits: Vec<Option<PointHit>> = vec![None; cloud.len()];
    let mut pixel_best: HashMap<(u32, u32), (usize, f64)> = HashMap::new();

    for (i, p) in cloud.points.iter().enumerate() {
        let p_cam = model.extrinsic.transform_point(p);
        let Some(pixel) = model.project(&p_cam, cfg.depth_min) else {
            continue;
        };
        let col = nearest_pixel(pixel.x, model.width);
        let row = nearest_pixel(pixel.y, model.height);
        let depth = p_cam.z;
        if cfg.zbuffer {
            let entry = pixel_best.entry((col, row)).or_insert((i, depth));
            if depth < entry.1 {
                *entry = (i, depth);
            }
        }
        hits[i] = Some(PointHit {
            class: image.class_at(col, row)?,
            camera: model.name.clone(),
            pixel,
            depth,
        });
    }

    if cfg.zbuffer {
        let winners: std::collections::HashSet<usize> =
            pixel_best.values().map(|(i, _)| *i).collect();
        for (i, h) in hits.iter_mut().enumerate() {
            if h.is_some() && !winners.contains(&i) {
                *h = None;
            }
        }
    }

    Ok(ProjectionOutcome { hits })
}

#[derive(Clone, Debug, Default)]
pub struct FusionReport {
    /// Newly assigned labels per camera, in processing (priority) order.
    pub assigned_per_camera: Vec<(String, usize)>,
    /// Cameras skipped because their image was missing.
    pub skipped_cameras: usize,
    pub outcome: ProjectionOutcome,
}

/// First-label-wins fusion over a priority-ordered rig.
///
/// `images` supplies at most one image per camera (matched by camera name).
/// A missing image skips that camera and counts a warning.
pub fn fuse_cameras(
    cloud: &PointCloud,
    rig: &[CameraModel<f64>],
    images: &[LabelImage],
    cfg: &ProjectionConfig,
) -> Result<(PointCloud, FusionReport)> {
    let mut order: Vec<&CameraModel<f64>> = rig.iter().collect();
    order.sort_by_key(|m| m.priority);

    let mut labels = vec![UnifiedClass::Unlabeled; cloud.len()];
    let mut report = FusionReport {
        outcome: ProjectionOutcome {
            hits: vec![None; cloud.len()],
        },
        ..Default::default()
    };

    for model in order {
        let Some(image) = images.iter().find(|img| img.camera == model.name) else {
            report.skipped_cameras += 1;
            continue;
        };
        let outcome = label_cloud(cloud, model, image, cfg)?;
        let mut assigned = 0usize;
        for (i, hit) in outcome.hits.into_iter().enumerate() {
            if let Some(hit) = hit {
                if report.outcome.hits[i].is_none() {
                    labels[i] = hit.class;
                    report.outcome.hits[i] = Some(hit);
                    assigned += 1;
                }
            }
        }
        report.assigned_per_camera.push((model.name.clone(), assigned));
    }

    let mut labeled = cloud.clone();
    labeled.labels = Some(labels);
    Ok((labeled, report))
}
