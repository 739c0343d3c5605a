//! Full run orchestration: sync, labeling, odometry, optional pose graph,
//! mapping, evaluation, and output files.

use crate::calib::Calibration;
use crate::camera::CameraModel;
use crate::cloud::PointCloud;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{ate, export_plot, AteResult, Trajectory};
use crate::geometry::Pose;
use crate::io;
use crate::mapping::{build_map, export_class_summary, export_ply, SemanticMap};
use crate::odometry::{preprocess, Odometry};
use crate::posegraph::{
    detect_loops, gnss_information, information_from_sigmas, optimize, GnssFactor, LoopParams,
    OptimizeOptions, PoseGraph,
};
use crate::projection::{fuse_cameras, ProjectionConfig};
use crate::semantics::{apply_filter, load_point_labels, LabelSourceKind};
use crate::sync::Matcher;
use crate::taxonomy::RemapTable;
use crate::time::Timestamp;
use std::path::{Path, PathBuf};

/// One synchronized frame: the LiDAR scan plus one label image per camera
/// (paths only; data is loaded per frame).
struct FrameFiles {
    lidar_stamp: Timestamp,
    lidar_path: PathBuf,
    /// In calibration camera order; None when the label source is per-point
    /// files.
    images: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Vehicle poses at LiDAR stamps.
    pub trajectory: Trajectory,
    pub map: SemanticMap,
    /// Present when the dataset ships a ground-truth trajectory.
    pub ate: Option<AteResult>,
    pub frames: usize,
    pub loop_edges: usize,
    pub gnss_factors: usize,
}

fn stamped_files(dir: &Path, extension: &str) -> Result<Vec<(i64, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir.display().to_string(), e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid("dataset", format!("bad file name {}", path.display())))?;
        let stamp: i64 = stem.parse().map_err(|_| {
            Error::invalid("dataset", format!("file name {} is not a stamp", path.display()))
        })?;
        out.push((stamp, path));
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

/// Approximate-time matching of LiDAR scans to camera images. With per-point
/// label files the LiDAR stream stands alone.
fn synchronize(config: &PipelineConfig, cameras: &[CameraModel<f64>]) -> Result<Vec<FrameFiles>> {
    let lidar = stamped_files(&config.dataset.join("lidar"), "bin")?;
    if config.label_source == LabelSourceKind::PerPointFile {
        return Ok(lidar
            .into_iter()
            .map(|(stamp, path)| FrameFiles {
                lidar_stamp: Timestamp::from_nanos(stamp),
                lidar_path: path,
                images: Vec::new(),
            })
            .collect());
    }

    let mut streams: Vec<Vec<(i64, PathBuf)>> = vec![lidar];
    let mut ids = vec!["lidar".to_string()];
    for cam in cameras {
        streams.push(stamped_files(&config.dataset.join(&cam.name), "png")?);
        ids.push(cam.name.clone());
    }

    // feed messages in global stamp order, emitting as tuples complete
    let mut events: Vec<(i64, usize, PathBuf)> = Vec::new();
    for (s, stream) in streams.into_iter().enumerate() {
        for (stamp, path) in stream {
            events.push((stamp, s, path));
        }
    }
    events.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut matcher: Matcher<PathBuf> = Matcher::new(ids, crate::sync::DEFAULT_CAPACITY);
    let mut frames = Vec::new();
    for (stamp, s, path) in events {
        matcher.push(s, Timestamp::from_nanos(stamp), path)?;
        while let Some(tuple) = matcher.try_emit(config.sync_slop_ns) {
            let mut members = tuple.members.into_iter();
            let (lidar_stamp, lidar_path) = members.next().expect("lidar stream present");
            frames.push(FrameFiles {
                lidar_stamp,
                lidar_path,
                images: members.map(|(_, p)| p).collect(),
            });
        }
    }
    Ok(frames)
}

fn load_labeled_cloud(
    config: &PipelineConfig,
    frame: &FrameFiles,
    cameras: &[CameraModel<f64>],
    lidar_from_vehicle: &Pose<f64>,
    table: &RemapTable,
) -> Result<PointCloud> {
    let cloud = io::read_cloud_bin(&frame.lidar_path, frame.lidar_stamp)?;
    match config.label_source {
        LabelSourceKind::PerPointFile => {
            let name = format!("{}.label", frame.lidar_stamp.as_nanos());
            let path = config.dataset.join("labels").join(name);
            load_point_labels(&path, &cloud, table)
        }
        LabelSourceKind::CameraProjection => {
            let mut images = Vec::with_capacity(frame.images.len());
            for (cam, path) in cameras.iter().zip(&frame.images) {
                images.push(io::read_label_image(path, frame.lidar_stamp, &cam.name)?);
            }
            // fusion expects vehicle-frame points
            let vehicle_cloud = cloud.transformed(&lidar_from_vehicle.inverse());
            let (labeled, _report) =
                fuse_cameras(&vehicle_cloud, cameras, &images, &ProjectionConfig::default())?;
            let mut out = cloud;
            out.labels = labeled.labels;
            Ok(out)
        }
    }
}

pub fn run(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let registration_filter = config.registration_filter.to_spec()?;
    let mapping_filter = config.mapping_filter.to_spec()?;
    let table = RemapTable::builtin(&config.remap_table).expect("validated");
    let calib = Calibration::load(&config.dataset.join("calib.json"))?;
    let cameras = calib.camera_models()?;
    let lidar_from_vehicle = calib.lidar_extrinsic();

    let frames = synchronize(config, &cameras).map_err(|e| e.at_stage("sync", 0))?;
    if frames.is_empty() {
        return Err(Error::invalid("dataset", "no synchronized frames"));
    }

    let mut odo_cfg = config.odometry.clone();
    odo_cfg.semantic_gate = config.semantic_gate;
    let mut odometry = Odometry::new(odo_cfg.clone(), registration_filter.clone(), crate::semantics::FilterSpec::keep_all());

    let mut clouds: Vec<PointCloud> = Vec::with_capacity(frames.len());
    let mut vehicle_poses: Vec<Pose<f64>> = Vec::with_capacity(frames.len());
    let mut stamps: Vec<Timestamp> = Vec::with_capacity(frames.len());
    // vehicle-frame keyframe clouds for loop detection
    let mut keyframes: Vec<Option<PointCloud>> = Vec::with_capacity(frames.len());
    let mut last_key: Option<Pose<f64>> = None;

    for (i, frame) in frames.iter().enumerate() {
        let labeled = load_labeled_cloud(config, frame, &cameras, &lidar_from_vehicle, &table)
            .map_err(|e| e.at_stage("labeling", i))?;
        let result = odometry.process_frame(&labeled);
        if result.degenerate {
            return Err(Error::Degenerate(format!("registration at frame {i}")).at_stage("odometry", i));
        }
        // odometry tracks the LiDAR; express the node in the vehicle frame
        let vehicle_pose = result.pose.compose(&lidar_from_vehicle);
        let need_key = config.use_loop_closures
            && match last_key {
                None => true,
                Some(prev) => {
                    let rel = prev.inverse().compose(&vehicle_pose);
                    rel.translation.norm() >= config.keyframe_distance_m
                        || rel.angle().to_degrees() >= config.keyframe_angle_deg
                }
            };
        if need_key {
            last_key = Some(vehicle_pose);
            let reduced = apply_filter(&preprocess(&labeled, &odo_cfg), &registration_filter);
            keyframes.push(Some(reduced.transformed(&lidar_from_vehicle.inverse())));
        } else {
            keyframes.push(None);
        }
        stamps.push(frame.lidar_stamp);
        vehicle_poses.push(vehicle_pose);
        clouds.push(labeled);
    }

    let mut loop_edges = 0usize;
    let mut gnss_factors = 0usize;
    if config.use_gnss || config.use_loop_closures {
        let mut graph = PoseGraph::default();
        for ((stamp, pose), key) in stamps.iter().zip(&vehicle_poses).zip(keyframes) {
            graph.add_node(*stamp, *pose, key);
        }
        let info = information_from_sigmas(
            config.odom_edge_trans_sigma_m,
            config.odom_edge_rot_sigma_deg.to_radians(),
        );
        for i in 1..vehicle_poses.len() {
            let measurement = vehicle_poses[i - 1].inverse().compose(&vehicle_poses[i]);
            graph.add_odometry_edge(i - 1, i, measurement, info);
        }
        if config.use_gnss {
            let records = io::read_gnss_csv(&config.dataset.join("gnss.csv"))
                .map_err(|e| e.at_stage("posegraph", 0))?;
            for r in &records {
                // nearest node in time, within the sync slop
                let node = stamps
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, s)| (**s - r.stamp).abs())
                    .map(|(i, _)| i)
                    .expect("frames non-empty");
                if (stamps[node] - r.stamp).abs() > config.sync_slop_ns {
                    continue;
                }
                let sigma = r.sigma_m.max(config.gnss_sigma_floor_m);
                graph.gnss.push(GnssFactor {
                    node,
                    position: r.position,
                    information: gnss_information(sigma),
                });
                gnss_factors += 1;
            }
        }
        if config.use_loop_closures {
            let params = LoopParams {
                search_radius: config.loop_search_radius_m,
                min_temporal_gap_s: config.loop_min_gap_s,
                fitness_threshold: config.loop_fitness_threshold_m,
            };
            let loops = detect_loops(&graph, &params, &odo_cfg);
            loop_edges = loops.len();
            graph.edges.extend(loops);
        }
        optimize(&mut graph, &OptimizeOptions::default()).map_err(|e| e.at_stage("posegraph", 0))?;
        for (pose, node) in vehicle_poses.iter_mut().zip(&graph.nodes) {
            *pose = node.pose;
        }
    }

    let lidar_poses: Vec<Pose<f64>> = vehicle_poses
        .iter()
        .map(|v| v.compose(&lidar_from_vehicle.inverse()))
        .collect();
    let map = build_map(&lidar_poses, &clouds, &mapping_filter, config.map_voxel)
        .map_err(|e| e.at_stage("mapping", 0))?;

    let trajectory = Trajectory {
        samples: stamps.iter().copied().zip(vehicle_poses.iter().copied()).collect(),
    };
    trajectory.validate()?;

    let gt_path = config.dataset.join("gt_tum.txt");
    let ate_result = if gt_path.is_file() {
        let gt = io::read_tum(&gt_path)?;
        // evaluate the trajectory exactly as serialized, so a standalone
        // evaluation of the written file reproduces this report bit for bit
        let written = io::tum_quantized(&trajectory);
        Some(ate(&written, &gt, config.eval_max_dt_ns).map_err(|e| e.at_stage("eval", 0))?)
    } else {
        None
    };

    write_outputs(config, &trajectory, &map, ate_result.as_ref())?;

    Ok(RunOutput {
        trajectory,
        map,
        ate: ate_result,
        frames: frames.len(),
        loop_edges,
        gnss_factors,
    })
}

/// Five-column text table matching the report schema.
pub fn format_report_table(rows: &[(String, crate::eval::AteReport)]) -> String {
    let mut text = format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "variant", "max", "mean", "min", "rmse", "std"
    );
    for (name, r) in rows {
        text.push_str(&format!(
            "{:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
            name, r.max, r.mean, r.min, r.rmse, r.std
        ));
    }
    text
}

fn write_outputs(
    config: &PipelineConfig,
    trajectory: &Trajectory,
    map: &SemanticMap,
    ate_result: Option<&AteResult>,
) -> Result<()> {
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    io::write_tum(&out.join("trajectory.tum"), trajectory)?;
    export_ply(map, &out.join("map.ply"))?;
    export_class_summary(map, &out.join("map_classes.csv"))?;
    if let Some(result) = ate_result {
        let r = &result.report;
        let json = serde_json::json!({
            "max": r.max,
            "mean": r.mean,
            "min": r.min,
            "rmse": r.rmse,
            "std": r.std,
            "count": r.count,
        });
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&json).unwrap())
            .map_err(|e| Error::io(out.display().to_string(), e))?;
        std::fs::write(
            out.join("report.txt"),
            format_report_table(&[("run".to_string(), r.clone())]),
        )
        .map_err(|e| Error::io(out.display().to_string(), e))?;
        export_plot(result, &out.join("trajectory.svg"), &out.join("trajectory.csv"))?;
    }
    Ok(())
}
