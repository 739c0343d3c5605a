//! Frame-to-local-map ICP odometry with semantic gating.
//!
//! Scan-to-map alignment against a voxel hash map, point-to-point residuals,
//! Gauss-Newton on the exponential map with a Cauchy kernel, constant-velocity
//! prediction, and an adaptive correspondence threshold driven by the
//! deviation between predicted and estimated motion. Correspondences whose
//! endpoint classes disagree can be discarded (hard gate) or down-weighted
//! (soft gate); unlabeled points are compatible with everything.

use crate::cloud::PointCloud;
use crate::geometry::{hat, Pose};
use crate::semantics::{apply_filter, FilterSpec};
use crate::taxonomy::UnifiedClass;
use nalgebra::{Matrix3x6, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub type VoxelIndex = (i32, i32, i32);

pub fn voxel_index(p: &Vector3<f64>, voxel: f64) -> VoxelIndex {
    (
        (p.x / voxel).floor() as i32,
        (p.y / voxel).floor() as i32,
        (p.z / voxel).floor() as i32,
    )
}

#[derive(Clone, Copy, Debug)]
pub struct MapPoint {
    pub position: Vector3<f64>,
    pub class: UnifiedClass,
}

/// Sparse local map: integer voxel index -> bounded point bucket.
#[derive(Clone, Debug)]
pub struct VoxelHashMap {
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
    voxels: HashMap<VoxelIndex, Vec<MapPoint>>,
}

impl VoxelHashMap {
    pub fn new(voxel_size: f64, max_points_per_voxel: usize) -> Self {
        assert!(voxel_size > 0.0 && max_points_per_voxel > 0);
        VoxelHashMap {
            voxel_size,
            max_points_per_voxel,
            voxels: HashMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }

    pub fn num_points(&self) -> usize {
        self.voxels.values().map(|v| v.len()).sum()
    }

    /// Insert a world-frame point. Full voxels keep their existing points.
    pub fn insert(&mut self, position: Vector3<f64>, class: UnifiedClass) {
        let bucket = self.voxels.entry(voxel_index(&position, self.voxel_size)).or_default();
        if bucket.len() < self.max_points_per_voxel {
            bucket.push(MapPoint { position, class });
        }
    }

    pub fn insert_cloud(&mut self, cloud: &PointCloud) {
        for (i, p) in cloud.points.iter().enumerate() {
            self.insert(*p, cloud.label_of(i));
        }
    }

    /// Nearest stored point searching the 27 voxels around the query.
    pub fn nearest_neighbor(&self, query: &Vector3<f64>) -> Option<(MapPoint, f64)> {
        let (cx, cy, cz) = voxel_index(query, self.voxel_size);
        let mut best: Option<(MapPoint, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.voxels.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for mp in bucket {
                        let d2 = (mp.position - query).norm_squared();
                        if best.map_or(true, |(_, bd)| d2 < bd) {
                            best = Some((*mp, d2));
                        }
                    }
                }
            }
        }
        best.map(|(mp, d2)| (mp, d2.sqrt()))
    }

    /// Drop voxels whose center is farther than `max_range` from `center`.
    pub fn evict_far(&mut self, center: &Vector3<f64>, max_range: f64) {
        let voxel = self.voxel_size;
        self.voxels.retain(|&(ix, iy, iz), _| {
            let c = Vector3::new(
                (ix as f64 + 0.5) * voxel,
                (iy as f64 + 0.5) * voxel,
                (iz as f64 + 0.5) * voxel,
            );
            (c - center).norm() <= max_range
        });
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &MapPoint> {
        self.voxels.values().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "weight")]
pub enum SemanticGate {
    Off,
    Hard,
    /// Down-weight incompatible pairs by a factor in (0, 1).
    Soft(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryConfig {
    pub voxel_downsample: f64,
    pub map_voxel: f64,
    pub max_points_per_voxel: usize,
    pub max_range: f64,
    pub min_range: f64,
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub semantic_gate: SemanticGate,
    /// Correspondence threshold floor, meters.
    pub tau_min: f64,
    /// Threshold = max(tau_min, alpha * model deviation).
    pub alpha: f64,
    /// Threshold used until a deviation estimate exists.
    pub initial_tau: f64,
    /// Tight threshold for the final refinement pass; 0 disables it.
    pub refine_tau: f64,
    /// Ground-vehicle mode: constrain the estimated trajectory to the
    /// bootstrap pose's horizontal plane (zero roll/pitch, fixed height).
    /// Point-to-point matching on smooth ground leaves pitch and height
    /// nearly unobservable, so free 6-DoF estimates slowly sink or climb.
    pub planar: bool,
    /// Geometric ground rejection: drop points whose sensor-frame height is
    /// below this value before registration and local-map insertion. On
    /// smooth ground the scan pattern re-aligns with itself at zero motion,
    /// which pins point-to-point registration; excluding low points removes
    /// that false minimum without using labels.
    pub crop_below_z: Option<f64>,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        OdometryConfig {
            voxel_downsample: 0.5,
            map_voxel: 1.0,
            max_points_per_voxel: 20,
            max_range: 100.0,
            min_range: 3.0,
            max_iterations: 50,
            convergence_eps: 1e-4,
            semantic_gate: SemanticGate::Off,
            tau_min: 0.3,
            alpha: 3.0,
            initial_tau: 2.0,
            refine_tau: 0.05,
            planar: false,
            crop_below_z: None,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let lengths = [
            self.voxel_downsample,
            self.map_voxel,
            self.max_range,
            self.min_range,
            self.tau_min,
            self.initial_tau,
        ];
        if lengths.iter().any(|&l| l <= 0.0) {
            return Err(crate::Error::invalid("odometry config", "lengths must be positive"));
        }
        if self.refine_tau < 0.0 {
            return Err(crate::Error::invalid(
                "odometry config",
                "refine_tau must be non-negative",
            ));
        }
        if let SemanticGate::Soft(w) = self.semantic_gate {
            if !(0.0 < w && w < 1.0) {
                return Err(crate::Error::invalid(
                    "odometry config",
                    "soft gate weight must be in (0, 1)",
                ));
            }
        }
        Ok(())
    }
}

/// Range crop plus voxel downsampling, one point per voxel in scan order.
pub fn preprocess(cloud: &PointCloud, cfg: &OdometryConfig) -> PointCloud {
    let mut seen: std::collections::HashSet<VoxelIndex> = std::collections::HashSet::new();
    let mut keep = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let range = p.norm();
        if range < cfg.min_range || range > cfg.max_range {
            continue;
        }
        if cfg.crop_below_z.is_some_and(|z| p.z < z) {
            continue;
        }
        if seen.insert(voxel_index(p, cfg.voxel_downsample)) {
            keep.push(i);
        }
    }
    PointCloud {
        points: keep.iter().map(|&i| cloud.points[i]).collect(),
        rel_time: if cloud.rel_time.is_empty() {
            Vec::new()
        } else {
            keep.iter().map(|&i| cloud.rel_time[i]).collect()
        },
        labels: cloud
            .labels
            .as_ref()
            .map(|l| keep.iter().map(|&i| l[i]).collect()),
        stamp: cloud.stamp,
    }
}

/// Constant-velocity initial guess: the most recent frame-to-frame delta.
pub fn predict(prev_deltas: &[Pose<f64>]) -> Pose<f64> {
    prev_deltas.last().copied().unwrap_or_else(Pose::identity)
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Refined estimate of the source pose (world <- source frame).
    pub pose: Pose<f64>,
    pub iterations: usize,
    pub mean_residual: f64,
    pub correspondences: usize,
    pub rejected_by_semantics: usize,
    pub degenerate: bool,
}

fn gate_weight(gate: SemanticGate, source: UnifiedClass, map: UnifiedClass) -> Option<f64> {
    if source == UnifiedClass::Unlabeled || map == UnifiedClass::Unlabeled || source == map {
        return Some(1.0);
    }
    match gate {
        SemanticGate::Off => Some(1.0),
        SemanticGate::Hard => None,
        SemanticGate::Soft(w) => Some(w),
    }
}

struct Correspondence {
    source: Vector3<f64>,
    target: Vector3<f64>,
    weight: f64,
}

fn build_correspondences(
    source: &PointCloud,
    map: &VoxelHashMap,
    pose: &Pose<f64>,
    tau: f64,
    gate: SemanticGate,
) -> (Vec<Correspondence>, usize) {
    let mut pairs = Vec::new();
    let mut rejected = 0usize;
    for (i, p) in source.points.iter().enumerate() {
        let q = pose.transform_point(p);
        let Some((mp, dist)) = map.nearest_neighbor(&q) else {
            continue;
        };
        if dist > tau {
            continue;
        }
        match gate_weight(gate, source.label_of(i), mp.class) {
            Some(sem_w) => {
                // Cauchy kernel against the correspondence threshold
                let w = sem_w / (1.0 + (dist / tau).powi(2));
                pairs.push(Correspondence {
                    source: *p,
                    target: mp.position,
                    weight: w,
                });
            }
            None => rejected += 1,
        }
    }
    (pairs, rejected)
}

fn weighted_cost(pairs: &[Correspondence], pose: &Pose<f64>) -> f64 {
    pairs
        .iter()
        .map(|c| c.weight * (pose.transform_point(&c.source) - c.target).norm_squared())
        .sum()
}

/// Scan-to-map registration. `tau` is the correspondence threshold in
/// meters. Converges at `tau`, then re-converges at `refine_tau` (when
/// enabled) so that only tight matches shape the final pose; this suppresses
/// the systematic pull from scan-pattern sampling mismatch on smooth
/// surfaces, which otherwise biases pitch and forward translation.
pub fn register(
    source: &PointCloud,
    map: &VoxelHashMap,
    init: &Pose<f64>,
    cfg: &OdometryConfig,
    tau: f64,
) -> RegistrationResult {
    let coarse = align(source, map, init, cfg, tau);
    if coarse.degenerate || cfg.refine_tau <= 0.0 || cfg.refine_tau >= tau {
        return coarse;
    }
    let refined = align(source, map, &coarse.pose, cfg, cfg.refine_tau);
    // the tight pass needs enough support to be trustworthy
    if refined.degenerate || refined.correspondences < 30 {
        return coarse;
    }
    RegistrationResult {
        iterations: coarse.iterations + refined.iterations,
        rejected_by_semantics: coarse.rejected_by_semantics + refined.rejected_by_semantics,
        ..refined
    }
}

fn align(
    source: &PointCloud,
    map: &VoxelHashMap,
    init: &Pose<f64>,
    cfg: &OdometryConfig,
    tau: f64,
) -> RegistrationResult {
    let mut pose = *init;
    let mut iterations = 0usize;
    let mut last_pairs = 0usize;
    let mut last_rejected = 0usize;
    let mut last_mean_residual = f64::INFINITY;

    for _ in 0..cfg.max_iterations {
        let (pairs, rejected) = build_correspondences(source, map, &pose, tau, cfg.semantic_gate);
        last_pairs = pairs.len();
        last_rejected = rejected;
        if pairs.is_empty() {
            return RegistrationResult {
                pose: *init,
                iterations,
                mean_residual: f64::INFINITY,
                correspondences: 0,
                rejected_by_semantics: rejected,
                degenerate: true,
            };
        }
        iterations += 1;

        // Gauss-Newton normal equations, left perturbation exp(d) * pose
        let mut h = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        let mut residual_sum = 0.0;
        for c in &pairs {
            let q = pose.transform_point(&c.source);
            let r = q - c.target;
            residual_sum += r.norm();
            let mut jac = Matrix3x6::<f64>::zeros();
            jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&nalgebra::Matrix3::identity());
            jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&q)));
            h += jac.transpose() * jac * c.weight;
            b += jac.transpose() * r * c.weight;
        }
        last_mean_residual = residual_sum / pairs.len() as f64;

        let Some(chol) = h.cholesky() else {
            return RegistrationResult {
                pose,
                iterations,
                mean_residual: last_mean_residual,
                correspondences: pairs.len(),
                rejected_by_semantics: rejected,
                degenerate: true,
            };
        };
        let full_step = chol.solve(&(-b));

        // damped retry: cost on the frozen correspondences must not increase
        let cost_before = weighted_cost(&pairs, &pose);
        let mut accepted = None;
        let mut step = full_step;
        for _ in 0..6 {
            let candidate = Pose::exp(&step).compose(&pose);
            if weighted_cost(&pairs, &candidate) <= cost_before {
                accepted = Some((candidate, step));
                break;
            }
            step *= 0.5;
        }
        let Some((new_pose, step)) = accepted else {
            break;
        };
        pose = new_pose;
        if step.norm() < cfg.convergence_eps {
            break;
        }
    }

    RegistrationResult {
        pose,
        iterations,
        mean_residual: last_mean_residual,
        correspondences: last_pairs,
        rejected_by_semantics: last_rejected,
        degenerate: false,
    }
}

/// Per-frame output of the odometry pipeline.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub pose: Pose<f64>,
    pub degenerate: bool,
    pub registration: Option<RegistrationResult>,
}

/// Sequential odometry state: local map, pose history, adaptive threshold.
pub struct Odometry {
    pub cfg: OdometryConfig,
    pub registration_filter: FilterSpec,
    pub map_filter: FilterSpec,
    map: VoxelHashMap,
    pose: Pose<f64>,
    deltas: Vec<Pose<f64>>,
    deviation: Option<f64>,
    frames: usize,
    /// Height of the bootstrap pose, the plane planar mode locks onto.
    base_height: f64,
}

impl Odometry {
    pub fn new(cfg: OdometryConfig, registration_filter: FilterSpec, map_filter: FilterSpec) -> Self {
        let map = VoxelHashMap::new(cfg.map_voxel, cfg.max_points_per_voxel);
        Odometry {
            cfg,
            registration_filter,
            map_filter,
            map,
            pose: Pose::identity(),
            deltas: Vec::new(),
            deviation: None,
            frames: 0,
            base_height: 0.0,
        }
    }

    pub fn with_initial_pose(mut self, pose: Pose<f64>) -> Self {
        self.pose = pose;
        self.base_height = pose.translation.z;
        self
    }

    /// Project onto the horizontal plane of the bootstrap pose: keep yaw,
    /// zero roll and pitch, pin the height.
    fn flatten(&self, pose: &Pose<f64>) -> Pose<f64> {
        let (_, _, yaw) = pose.rotation.euler_angles();
        Pose::new(
            nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            Vector3::new(pose.translation.x, pose.translation.y, self.base_height),
        )
    }

    pub fn pose(&self) -> Pose<f64> {
        self.pose
    }

    pub fn map(&self) -> &VoxelHashMap {
        &self.map
    }

    pub fn current_tau(&self) -> f64 {
        match self.deviation {
            Some(dev) => (self.cfg.alpha * dev).max(self.cfg.tau_min),
            None => self.cfg.initial_tau,
        }
    }

    /// Motion mismatch in meters: translation plus the rotation's worst-case
    /// displacement at max range.
    fn motion_deviation(&self, predicted: &Pose<f64>, actual: &Pose<f64>) -> f64 {
        let diff = predicted.inverse().compose(actual);
        diff.translation.norm() + 2.0 * (diff.angle() / 2.0).sin() * self.cfg.max_range
    }

    pub fn process_frame(&mut self, cloud: &PointCloud) -> FrameResult {
        let preprocessed = preprocess(cloud, &self.cfg);
        self.frames += 1;

        if self.map.is_empty() {
            // bootstrap: seed map from the first frame
            let map_cloud =
                apply_filter(&preprocessed, &self.map_filter).transformed(&self.pose);
            self.map.insert_cloud(&map_cloud);
            return FrameResult {
                pose: self.pose,
                degenerate: false,
                registration: None,
            };
        }

        let reg_cloud = apply_filter(&preprocessed, &self.registration_filter);
        let predicted_delta = predict(&self.deltas);
        let init = self.pose.compose(&predicted_delta);
        let tau = self.current_tau();
        let result = register(&reg_cloud, &self.map, &init, &self.cfg, tau);

        let mut new_pose = if result.degenerate { init } else { result.pose };
        if self.cfg.planar {
            new_pose = self.flatten(&new_pose);
        }
        let delta = self.pose.inverse().compose(&new_pose);
        self.deviation = Some(self.motion_deviation(&predicted_delta, &delta));
        self.deltas.push(delta);
        self.pose = new_pose;

        let map_cloud = apply_filter(&preprocessed, &self.map_filter).transformed(&self.pose);
        self.map.insert_cloud(&map_cloud);
        self.map.evict_far(&self.pose.translation, self.cfg.max_range);

        FrameResult {
            pose: self.pose,
            degenerate: result.degenerate,
            registration: Some(result),
        }
    }
}
