//! Pipeline configuration: one document controls every stage of a run.

use crate::error::{Error, Result};
use crate::odometry::{OdometryConfig, SemanticGate};
use crate::semantics::{FilterSpec, LabelSourceKind};
use crate::sync::DEFAULT_SLOP_NS;
use crate::taxonomy::{ClassGroups, UnifiedClass};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Class filter expressed as class names, for config files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub drop_classes: Vec<String>,
    pub keep_unlabeled: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            drop_classes: Vec::new(),
            keep_unlabeled: true,
        }
    }
}

impl FilterConfig {
    pub fn to_spec(&self) -> Result<FilterSpec> {
        let mut classes = Vec::new();
        for name in &self.drop_classes {
            let class = UnifiedClass::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown class name {name:?}")))?;
            classes.push(class);
        }
        let mut spec = FilterSpec::dropping(classes);
        spec.keep_unlabeled = self.keep_unlabeled;
        Ok(spec)
    }

    pub fn dropping_group(classes: impl IntoIterator<Item = UnifiedClass>) -> Self {
        let mut names: Vec<String> = classes.into_iter().map(|c| c.name().to_string()).collect();
        names.sort();
        FilterConfig {
            drop_classes: names,
            keep_unlabeled: true,
        }
    }

    /// Drops the ground class-group (the "Non-Ground" variants).
    pub fn non_ground() -> Self {
        Self::dropping_group(ClassGroups::default().ground)
    }

    /// Drops the dynamic class-group.
    pub fn no_dynamic() -> Self {
        Self::dropping_group(ClassGroups::default().dynamic)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub label_source: LabelSourceKind,
    /// Remap table for per-point label files ("semantickitti", "cityscapes",
    /// "unified").
    pub remap_table: String,
    pub registration_filter: FilterConfig,
    pub mapping_filter: FilterConfig,
    pub semantic_gate: SemanticGate,
    pub use_gnss: bool,
    pub use_loop_closures: bool,
    pub sync_slop_ns: i64,
    pub odometry: OdometryConfig,
    /// Product map resolution, meters.
    pub map_voxel: f64,
    pub eval_max_dt_ns: i64,
    /// GNSS sigmas below this are clamped before building factors.
    pub gnss_sigma_floor_m: f64,
    pub odom_edge_trans_sigma_m: f64,
    pub odom_edge_rot_sigma_deg: f64,
    pub keyframe_distance_m: f64,
    pub keyframe_angle_deg: f64,
    pub loop_search_radius_m: f64,
    pub loop_min_gap_s: f64,
    pub loop_fitness_threshold_m: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: PathBuf::from("."),
            output_dir: PathBuf::from("out"),
            label_source: LabelSourceKind::CameraProjection,
            remap_table: "semantickitti".into(),
            registration_filter: FilterConfig::default(),
            mapping_filter: FilterConfig::default(),
            semantic_gate: SemanticGate::Off,
            use_gnss: false,
            use_loop_closures: false,
            sync_slop_ns: DEFAULT_SLOP_NS,
            // ground-vehicle defaults: planar mode counters the vertical
            // drift that point-to-point matching on smooth ground cannot
            // observe, and the height crop (sensor mounted ~1.8 m up) keeps
            // the self-similar ground surface out of registration
            odometry: OdometryConfig {
                planar: true,
                crop_below_z: Some(-1.4),
                ..OdometryConfig::default()
            },
            map_voxel: crate::mapping::DEFAULT_MAP_VOXEL,
            eval_max_dt_ns: 50_000_000,
            gnss_sigma_floor_m: 0.02,
            odom_edge_trans_sigma_m: 0.05,
            odom_edge_rot_sigma_deg: 0.5,
            keyframe_distance_m: 2.0,
            keyframe_angle_deg: 10.0,
            loop_search_radius_m: 10.0,
            loop_min_gap_s: 10.0,
            loop_fitness_threshold_m: 0.2,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} does not exist",
                self.dataset.display()
            )));
        }
        if self.sync_slop_ns <= 0 {
            return Err(Error::Config("sync_slop_ns must be positive".into()));
        }
        if self.map_voxel <= 0.0 {
            return Err(Error::Config("map_voxel must be positive".into()));
        }
        crate::taxonomy::RemapTable::builtin(&self.remap_table)
            .ok_or_else(|| Error::Config(format!("unknown remap table {:?}", self.remap_table)))?;
        self.registration_filter.to_spec()?;
        self.mapping_filter.to_spec()?;
        self.odometry.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.sync_slop_ns, cfg.sync_slop_ns);
        assert_eq!(back.label_source, cfg.label_source);
        assert_eq!(back.semantic_gate, SemanticGate::Off);
    }

    #[test]
    fn gate_modes_parse_from_toml() {
        let cfg = PipelineConfig::from_toml_str("[semantic_gate]\nmode = \"hard\"\n").unwrap();
        assert_eq!(cfg.semantic_gate, SemanticGate::Hard);
        let cfg =
            PipelineConfig::from_toml_str("[semantic_gate]\nmode = \"soft\"\nweight = 0.25\n").unwrap();
        assert_eq!(cfg.semantic_gate, SemanticGate::Soft(0.25));
    }

    #[test]
    fn unknown_class_name_is_config_error() {
        let filter = FilterConfig {
            drop_classes: vec!["spaceship".into()],
            keep_unlabeled: true,
        };
        assert!(matches!(filter.to_spec(), Err(Error::Config(_))));
    }

    #[test]
    fn group_helpers_resolve_to_specs() {
        let ground = FilterConfig::non_ground().to_spec().unwrap();
        assert!(!ground.keeps(UnifiedClass::Road));
        assert!(ground.keeps(UnifiedClass::Building));
        let dynamic = FilterConfig::no_dynamic().to_spec().unwrap();
        assert!(!dynamic.keeps(UnifiedClass::Car));
        assert!(dynamic.keeps(UnifiedClass::Road));
    }

    #[test]
    fn missing_dataset_fails_validation() {
        let cfg = PipelineConfig {
            dataset: PathBuf::from("/nonexistent/dataset"),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
