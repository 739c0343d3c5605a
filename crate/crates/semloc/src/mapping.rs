//! Global semantic map: voxelized labeled points assembled from optimized
//! poses, with class filtering applied before insertion.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::odometry::{voxel_index, VoxelIndex};
use crate::semantics::{apply_filter, FilterSpec};
use crate::taxonomy::{UnifiedClass, NUM_CLASSES};
use nalgebra::Vector3;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Product-map resolution; finer than the odometry registration map.
pub const DEFAULT_MAP_VOXEL: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct VoxelData {
    /// First point inserted into the voxel; a real measurement, not a centroid.
    pub representative: Vector3<f64>,
    pub histogram: [u32; NUM_CLASSES],
}

impl VoxelData {
    fn new(p: Vector3<f64>, class: UnifiedClass) -> Self {
        let mut histogram = [0u32; NUM_CLASSES];
        histogram[class.id() as usize] = 1;
        VoxelData {
            representative: p,
            histogram,
        }
    }

    /// Argmax of the histogram; ties break toward the lower class id.
    pub fn majority_class(&self) -> UnifiedClass {
        let mut best = 0usize;
        for (i, &c) in self.histogram.iter().enumerate() {
            if c > self.histogram[best] {
                best = i;
            }
        }
        UnifiedClass::from_id(best as u16).expect("histogram index is a valid class id")
    }

    pub fn point_count(&self) -> u32 {
        self.histogram.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct SemanticMap {
    pub voxel_size: f64,
    voxels: HashMap<VoxelIndex, VoxelData>,
}

impl SemanticMap {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0);
        SemanticMap {
            voxel_size,
            voxels: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn insert_point(&mut self, p: Vector3<f64>, class: UnifiedClass) {
        let key = voxel_index(&p, self.voxel_size);
        self.voxels
            .entry(key)
            .and_modify(|v| v.histogram[class.id() as usize] += 1)
            .or_insert_with(|| VoxelData::new(p, class));
    }

    /// Insert a cloud expressed in its sensor frame at `pose`.
    pub fn insert_cloud(&mut self, cloud: &PointCloud, pose: &Pose<f64>) {
        for i in 0..cloud.len() {
            self.insert_point(pose.transform_point(&cloud.points[i]), cloud.label_of(i));
        }
    }

    /// Merge a partial map built over the same voxel grid. Histograms add;
    /// the representative of the receiving map wins on collision.
    pub fn merge(&mut self, other: &SemanticMap) {
        assert_eq!(self.voxel_size, other.voxel_size, "voxel grids must match");
        for (key, data) in &other.voxels {
            match self.voxels.get_mut(key) {
                Some(mine) => {
                    for (a, b) in mine.histogram.iter_mut().zip(&data.histogram) {
                        *a += b;
                    }
                }
                None => {
                    self.voxels.insert(*key, data.clone());
                }
            }
        }
    }

    pub fn get(&self, key: &VoxelIndex) -> Option<&VoxelData> {
        self.voxels.get(key)
    }

    /// Voxels in sorted key order, for deterministic export.
    pub fn sorted_entries(&self) -> Vec<(VoxelIndex, &VoxelData)> {
        let mut entries: Vec<_> = self.voxels.iter().map(|(k, v)| (*k, v)).collect();
        entries.sort_by_key(|(k, _)| *k);
        entries
    }

    /// Voxel count per majority class, skipping classes with zero voxels.
    pub fn class_voxel_counts(&self) -> BTreeMap<UnifiedClass, usize> {
        let mut counts = BTreeMap::new();
        for data in self.voxels.values() {
            *counts.entry(data.majority_class()).or_insert(0) += 1;
        }
        counts
    }
}

/// Filter each cloud, transform by its pose, insert. One pose per cloud.
pub fn build_map(
    poses: &[Pose<f64>],
    clouds: &[PointCloud],
    filter: &FilterSpec,
    voxel: f64,
) -> Result<SemanticMap> {
    if poses.len() != clouds.len() {
        return Err(Error::PoseCloudMismatch {
            poses: poses.len(),
            clouds: clouds.len(),
        });
    }
    let mut map = SemanticMap::new(voxel);
    for (pose, cloud) in poses.iter().zip(clouds) {
        let kept = apply_filter(cloud, filter);
        map.insert_cloud(&kept, pose);
    }
    Ok(map)
}

/// Binary little-endian PLY: x,y,z float32 + class uint16 per vertex, one
/// vertex per voxel (representative point, majority class), sorted voxel
/// order.
pub fn export_ply(map: &SemanticMap, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let entries = map.sorted_entries();
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty ushort class\nend_header\n",
        entries.len()
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(header.as_bytes()).map_err(io_err)?;
    for (_, data) in entries {
        for k in 0..3 {
            w.write_all(&(data.representative[k] as f32).to_le_bytes())
                .map_err(io_err)?;
        }
        w.write_all(&(data.majority_class().id() as u16).to_le_bytes())
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reload vertices written by `export_ply`.
pub fn load_ply(path: &Path) -> Result<Vec<(Vector3<f64>, UnifiedClass)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let header_end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::invalid("ply", format!("{}: missing end_header", path.display())))?
        + 11;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::invalid("ply", "non-utf8 header"))?;
    if !header.contains("format binary_little_endian 1.0") {
        return Err(Error::invalid("ply", "expected binary little-endian format"));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| Error::invalid("ply", "missing vertex element"))?
        .trim()
        .parse()
        .map_err(|_| Error::invalid("ply", "bad vertex count"))?;
    const STRIDE: usize = 14; // 3 * f32 + u16
    let body = &bytes[header_end..];
    if body.len() != count * STRIDE {
        return Err(Error::invalid(
            "ply",
            format!("body is {} bytes, expected {}", body.len(), count * STRIDE),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for chunk in body.chunks_exact(STRIDE) {
        let f = |o: usize| f32::from_le_bytes([chunk[o], chunk[o + 1], chunk[o + 2], chunk[o + 3]]) as f64;
        let id = u16::from_le_bytes([chunk[12], chunk[13]]);
        let class = UnifiedClass::from_id(id).ok_or(Error::UnknownClassId {
            id: id as u32,
            taxonomy: "unified".into(),
        })?;
        out.push((Vector3::new(f(0), f(4), f(8)), class));
    }
    Ok(out)
}

/// CSV summary "class_name,voxel_count", one row per non-empty class.
pub fn export_class_summary(map: &SemanticMap, path: &Path) -> Result<()> {
    let mut text = String::from("class_name,voxel_count\n");
    for (class, count) in map.class_voxel_counts() {
        text.push_str(&format!("{},{}\n", class.name(), count));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}
