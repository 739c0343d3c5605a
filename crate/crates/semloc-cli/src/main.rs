//! Command line driver: dataset simulation, pipeline runs (single or the
//! full variant matrix), and standalone trajectory evaluation/plotting.

use clap::{Parser, Subcommand, ValueEnum};
use semloc::config::{FilterConfig, PipelineConfig};
use semloc::error::Error;
use semloc::eval::{ate, export_plot};
use semloc::odometry::SemanticGate;
use semloc::pipeline::{format_report_table, run};
use semloc::semantics::LabelSourceKind;
use semloc::sim::{generate_dataset, DatasetSpec, RigSpec, Scenario};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "semloc",
    version,
    about = "Semantic LiDAR localization: simulate datasets, run the pipeline, evaluate trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    UrbanBlock,
    StraightRoad,
    DynamicTraffic,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::UrbanBlock => Scenario::UrbanBlock,
            ScenarioArg::StraightRoad => Scenario::StraightRoad,
            ScenarioArg::DynamicTraffic => Scenario::DynamicTraffic,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RigArg {
    /// Full-resolution sensors.
    Default,
    /// Reduced resolution for fast runs.
    Compact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelSourceArg {
    /// Fuse labels from segmented camera images by projection.
    Camera,
    /// Read labels from per-point files next to the clouds.
    PerPoint,
}

impl From<LabelSourceArg> for LabelSourceKind {
    fn from(s: LabelSourceArg) -> LabelSourceKind {
        match s {
            LabelSourceArg::Camera => LabelSourceKind::CameraProjection,
            LabelSourceArg::PerPoint => LabelSourceKind::PerPointFile,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (LiDAR scans, label files, camera label
    /// images, GNSS, calibration, ground truth).
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        /// RNG seed; equal (scenario, rig, seed, frames) give byte-identical
        /// datasets.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = RigArg::Compact)]
        rig: RigArg,
        /// Skip rendering camera label images (per-point label runs only).
        #[arg(long)]
        skip_cameras: bool,
        /// Probability that a per-point label flips to a random wrong class.
        #[arg(long, default_value_t = 0.0)]
        label_error_rate: f64,
    },
    /// Run the pipeline: sync, labeling, odometry, optional pose graph,
    /// mapping, evaluation. Writes trajectory.tum, map.ply, report.json/txt.
    Run {
        /// TOML pipeline configuration; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        label_source: Option<LabelSourceArg>,
        /// Correspondence gate: off, hard, or soft:<weight>.
        #[arg(long)]
        gate: Option<String>,
        #[arg(long)]
        use_gnss: bool,
        #[arg(long)]
        use_loops: bool,
        /// Class names dropped before registration (repeatable).
        #[arg(long)]
        drop_registration: Vec<String>,
        /// Class names dropped before mapping (repeatable).
        #[arg(long)]
        drop_mapping: Vec<String>,
        /// Run all nine table variants (baseline, camera/lidar x
        /// with/non-ground, each with and without GNSS) and print one table.
        #[arg(long)]
        matrix: bool,
    },
    /// Evaluate a trajectory against a reference (TUM files) and print the
    /// five-column error table.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Association tolerance in milliseconds.
        #[arg(long, default_value_t = 50)]
        max_dt_ms: i64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Plot per-sample trajectory error as an SVG (plus CSV of the errors).
    Plot {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_dt_ms: i64,
        #[arg(long)]
        svg: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::NoAssociations { .. } | Error::Degenerate(_) | Error::Underdetermined(_) => {
            EXIT_NUMERICAL
        }
        Error::Stage { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    let mut cause = std::error::Error::source(&err);
    while let Some(c) = cause {
        eprintln!("  caused by: {c}");
        cause = c.source();
    }
    ExitCode::from(exit_code(&err))
}

fn parse_gate(text: &str) -> Result<SemanticGate, Error> {
    if text == "off" {
        return Ok(SemanticGate::Off);
    }
    if text == "hard" {
        return Ok(SemanticGate::Hard);
    }
    if let Some(w) = text.strip_prefix("soft:") {
        let w: f64 = w
            .parse()
            .map_err(|_| Error::Config(format!("bad soft gate weight {w:?}")))?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Config(format!("soft gate weight {w} not in [0, 1]")));
        }
        return Ok(SemanticGate::Soft(w));
    }
    Err(Error::Config(format!(
        "unknown gate {text:?}; expected off, hard, or soft:<weight>"
    )))
}

/// Written next to every run's outputs; equal manifests imply identical
/// reports because both the pipeline and the simulator are deterministic.
fn write_manifest(config: &PipelineConfig, variant: Option<&str>) -> Result<(), Error> {
    let toml = config.to_toml_string()?;
    let digest = Sha256::digest(toml.as_bytes());
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = serde_json::json!({
        "config_sha256": hash,
        "variant": variant,
        "semloc_version": semloc_version(),
        "cli_version": env!("CARGO_PKG_VERSION"),
    });
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn semloc_version() -> &'static str {
    // the library and CLI are versioned together in this workspace
    env!("CARGO_PKG_VERSION")
}

fn simulate(
    scenario: ScenarioArg,
    seed: u64,
    frames: usize,
    out: PathBuf,
    rig: RigArg,
    skip_cameras: bool,
    label_error_rate: f64,
) -> Result<(), Error> {
    if !(0.0..=1.0).contains(&label_error_rate) {
        return Err(Error::Config(format!(
            "label error rate {label_error_rate} not in [0, 1]"
        )));
    }
    if frames == 0 {
        return Err(Error::Config("frames must be positive".into()));
    }
    let spec = DatasetSpec {
        frames,
        label_error_rate,
        render_cameras: !skip_cameras,
        ..DatasetSpec::new(scenario.into())
    };
    let rig = match rig {
        RigArg::Default => RigSpec::default_rig(),
        RigArg::Compact => RigSpec::compact_rig(),
    };
    generate_dataset(&spec, &rig, seed, &out)?;
    let manifest = serde_json::json!({
        "scenario": Scenario::from(scenario).name(),
        "seed": seed,
        "frames": frames,
        "render_cameras": !skip_cameras,
        "label_error_rate": label_error_rate,
        "semloc_version": semloc_version(),
        "cli_version": env!("CARGO_PKG_VERSION"),
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "wrote {} frames of {} to {}",
        frames,
        Scenario::from(scenario).name(),
        out.display()
    );
    Ok(())
}

/// The nine table variants: geometry-only baseline, then camera- and
/// LiDAR-labeled configurations with and without ground classes in
/// registration, each with and without GNSS fusion.
fn matrix_variants(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let mut variants = Vec::new();
    let baseline = PipelineConfig {
        label_source: LabelSourceKind::PerPointFile,
        registration_filter: FilterConfig::default(),
        semantic_gate: SemanticGate::Off,
        use_gnss: false,
        ..base.clone()
    };
    variants.push(("baseline".to_string(), baseline));
    for use_gnss in [false, true] {
        for (source, source_name) in [
            (LabelSourceKind::CameraProjection, "camera"),
            (LabelSourceKind::PerPointFile, "lidar"),
        ] {
            for (ground, ground_name) in [
                (FilterConfig::non_ground(), "non-ground"),
                (FilterConfig::default(), "with-ground"),
            ] {
                let suffix = if use_gnss { "-gnss" } else { "" };
                let name = format!("{source_name}-{ground_name}{suffix}");
                let config = PipelineConfig {
                    label_source: source.clone(),
                    registration_filter: ground,
                    semantic_gate: SemanticGate::Hard,
                    use_gnss,
                    ..base.clone()
                };
                variants.push((name, config));
            }
        }
    }
    variants
}

#[allow(clippy::too_many_arguments)]
fn run_command(
    config: Option<PathBuf>,
    dataset: Option<PathBuf>,
    output: Option<PathBuf>,
    label_source: Option<LabelSourceArg>,
    gate: Option<String>,
    use_gnss: bool,
    use_loops: bool,
    drop_registration: Vec<String>,
    drop_mapping: Vec<String>,
    matrix: bool,
) -> Result<(), Error> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::from_toml_file(&path)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = dataset {
        cfg.dataset = d;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    if let Some(s) = label_source {
        cfg.label_source = s.into();
    }
    if let Some(g) = &gate {
        cfg.semantic_gate = parse_gate(g)?;
    }
    if use_gnss {
        cfg.use_gnss = true;
    }
    if use_loops {
        cfg.use_loop_closures = true;
    }
    if !drop_registration.is_empty() {
        cfg.registration_filter = FilterConfig {
            drop_classes: drop_registration,
            keep_unlabeled: true,
        };
    }
    if !drop_mapping.is_empty() {
        cfg.mapping_filter = FilterConfig {
            drop_classes: drop_mapping,
            keep_unlabeled: true,
        };
    }

    if !matrix {
        write_manifest(&cfg, None)?;
        let out = run(&cfg)?;
        println!(
            "{} frames, {} map voxels, {} loop edges, {} GNSS factors",
            out.frames,
            out.map.len(),
            out.loop_edges,
            out.gnss_factors
        );
        match out.ate {
            Some(result) => print!("{}", format_report_table(&[("run".into(), result.report)])),
            None => println!("no ground truth in dataset; evaluation skipped"),
        }
        return Ok(());
    }

    let root = cfg.output_dir.clone();
    let mut rows = Vec::new();
    for (name, mut variant) in matrix_variants(&cfg) {
        variant.output_dir = root.join(&name);
        write_manifest(&variant, Some(&name))?;
        let out = run(&variant)?;
        let ate = out.ate.ok_or_else(|| {
            Error::invalid("dataset", "matrix mode needs ground truth (gt_tum.txt)")
        })?;
        rows.push((name, ate.report));
    }
    let table = format_report_table(&rows);
    print!("{table}");
    let path = root.join("matrix_report.txt");
    std::fs::write(&path, table).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn eval_command(
    est: PathBuf,
    reference: PathBuf,
    max_dt_ms: i64,
    json: Option<PathBuf>,
) -> Result<(), Error> {
    let est_traj = semloc::io::read_tum(&est)?;
    let ref_traj = semloc::io::read_tum(&reference)?;
    let result = ate(&est_traj, &ref_traj, max_dt_ms * 1_000_000)?;
    let r = &result.report;
    print!("{}", format_report_table(&[("eval".into(), r.clone())]));
    if let Some(path) = json {
        let doc = serde_json::json!({
            "max": r.max,
            "mean": r.mean,
            "min": r.min,
            "rmse": r.rmse,
            "std": r.std,
            "count": r.count,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn plot_command(
    est: PathBuf,
    reference: PathBuf,
    max_dt_ms: i64,
    svg: PathBuf,
    csv: PathBuf,
) -> Result<(), Error> {
    let est_traj = semloc::io::read_tum(&est)?;
    let ref_traj = semloc::io::read_tum(&reference)?;
    let result = ate(&est_traj, &ref_traj, max_dt_ms * 1_000_000)?;
    export_plot(&result, &svg, &csv)?;
    println!("wrote {} and {}", svg.display(), csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            seed,
            frames,
            out,
            rig,
            skip_cameras,
            label_error_rate,
        } => simulate(scenario, seed, frames, out, rig, skip_cameras, label_error_rate),
        Command::Run {
            config,
            dataset,
            output,
            label_source,
            gate,
            use_gnss,
            use_loops,
            drop_registration,
            drop_mapping,
            matrix,
        } => run_command(
            config,
            dataset,
            output,
            label_source,
            gate,
            use_gnss,
            use_loops,
            drop_registration,
            drop_mapping,
            matrix,
        ),
        Command::Eval {
            est,
            reference,
            max_dt_ms,
            json,
        } => eval_command(est, reference, max_dt_ms, json),
        Command::Plot {
            est,
            reference,
            max_dt_ms,
            svg,
            csv,
        } => plot_command(est, reference, max_dt_ms, svg, csv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(err),
    }
}
