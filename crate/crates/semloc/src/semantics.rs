//! Direct per-point label ingestion and class filtering.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::{RemapTable, UnifiedClass};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Where per-point labels come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSourceKind {
    /// Labels fused from segmented camera images by projection.
    CameraProjection,
    /// Labels read from per-point files next to the clouds.
    PerPointFile,
}

/// Which classes to drop before registration or mapping.
#[derive(Clone, Debug, Default)]
pub struct FilterSpec {
    pub drop_classes: HashSet<UnifiedClass>,
    pub keep_unlabeled: bool,
}

impl FilterSpec {
    /// Keeps everything, including unlabeled points.
    pub fn keep_all() -> Self {
        FilterSpec {
            drop_classes: HashSet::new(),
            keep_unlabeled: true,
        }
    }

    pub fn dropping(classes: impl IntoIterator<Item = UnifiedClass>) -> Self {
        FilterSpec {
            drop_classes: classes.into_iter().collect(),
            keep_unlabeled: true,
        }
    }

    pub fn keeps(&self, class: UnifiedClass) -> bool {
        if class == UnifiedClass::Unlabeled {
            self.keep_unlabeled && !self.drop_classes.contains(&class)
        } else {
            !self.drop_classes.contains(&class)
        }
    }

    pub fn is_noop(&self) -> bool {
        self.drop_classes.is_empty() && self.keep_unlabeled
    }
}

/// Read a raw little-endian u32 label file (one id per point, cloud order),
/// remap into the unified taxonomy, and attach to the cloud.
pub fn load_point_labels(
    path: &Path,
    cloud: &PointCloud,
    table: &RemapTable,
) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(
            "label file",
            format!("{} has size {} not divisible by 4", path.display(), bytes.len()),
        ));
    }
    let ids: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    attach_labels(&ids, cloud, table)
}

/// Remap raw source-taxonomy ids and attach them to the cloud.
pub fn attach_labels(ids: &[u32], cloud: &PointCloud, table: &RemapTable) -> Result<PointCloud> {
    if ids.len() != cloud.len() {
        return Err(Error::LabelCountMismatch {
            labels: ids.len(),
            points: cloud.len(),
        });
    }
    let labels = ids
        .iter()
        .map(|&id| table.remap(id))
        .collect::<Result<Vec<_>>>()?;
    let mut out = cloud.clone();
    out.labels = Some(labels);
    Ok(out)
}

/// Drop points by class, preserving order. Points of an unlabeled cloud are
/// treated as unlabeled.
pub fn apply_filter(cloud: &PointCloud, spec: &FilterSpec) -> PointCloud {
    if spec.is_noop() {
        return cloud.clone();
    }
    let keep: Vec<bool> = (0..cloud.len()).map(|i| spec.keeps(cloud.label_of(i))).collect();
    fn mask<T: Copy>(values: &[T], keep: &[bool]) -> Vec<T> {
        values
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(v, _)| *v)
            .collect()
    }
    PointCloud {
        points: mask(&cloud.points, &keep),
        rel_time: if cloud.rel_time.is_empty() {
            Vec::new()
        } else {
            mask(&cloud.rel_time, &keep)
        },
        labels: cloud.labels.as_ref().map(|l| mask(l, &keep)),
        stamp: cloud.stamp,
    }
}
