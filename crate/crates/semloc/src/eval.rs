//! Trajectory evaluation: time association, rigid alignment, absolute
//! trajectory error statistics, and error-colored plot export.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::time::Timestamp;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use std::path::Path;

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub samples: Vec<(Timestamp, Pose<f64>)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(Timestamp, Pose<f64>)>) -> Result<Self> {
        let t = Trajectory { samples };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(
                    "trajectory",
                    format!("stamps must strictly increase: {} then {}", w[0].0.as_nanos(), w[1].0.as_nanos()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Apply a rigid transform on the left to every pose.
    pub fn pre_transformed(&self, g: &Pose<f64>) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|(t, p)| (*t, g.compose(p))).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PairedSample {
    pub stamp: Timestamp,
    pub dt_ns: i64,
    pub est: Vector3<f64>,
    pub reference: Vector3<f64>,
}

/// Pair each estimated sample with the nearest-in-time reference sample.
/// Pairs farther apart than `max_dt_ns` are dropped; each reference sample is
/// used at most once, greedily in estimate order.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt_ns: i64) -> Result<Vec<PairedSample>> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::NoAssociations { max_dt_ns });
    }
    let ref_stamps: Vec<i64> = reference.samples.iter().map(|(t, _)| t.as_nanos()).collect();
    let mut used = vec![false; ref_stamps.len()];
    let mut pairs = Vec::new();
    for (stamp, pose) in &est.samples {
        let t = stamp.as_nanos();
        let idx = match ref_stamps.binary_search(&t) {
            Ok(i) => i,
            Err(i) => {
                // nearest of the neighbors around the insertion point
                let before = i.checked_sub(1);
                let after = if i < ref_stamps.len() { Some(i) } else { None };
                match (before, after) {
                    (Some(b), Some(a)) => {
                        if t - ref_stamps[b] <= ref_stamps[a] - t {
                            b
                        } else {
                            a
                        }
                    }
                    (Some(b), None) => b,
                    (None, Some(a)) => a,
                    (None, None) => unreachable!("reference is non-empty"),
                }
            }
        };
        let dt = t - ref_stamps[idx];
        if dt.abs() > max_dt_ns || used[idx] {
            continue;
        }
        used[idx] = true;
        pairs.push(PairedSample {
            stamp: *stamp,
            dt_ns: dt,
            est: pose.translation,
            reference: reference.samples[idx].1.translation,
        });
    }
    if pairs.is_empty() {
        return Err(Error::NoAssociations { max_dt_ns });
    }
    Ok(pairs)
}

/// Rigid transform minimizing sum ||T * est_i - ref_i||^2, scale fixed at 1.
/// Closed form from the cross-covariance SVD with a reflection guard.
pub fn umeyama_align(pairs: &[PairedSample]) -> Result<Pose<f64>> {
    if pairs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "alignment needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_est: Vector3<f64> = pairs.iter().map(|p| p.est).sum::<Vector3<f64>>() / n;
    let mean_ref: Vector3<f64> = pairs.iter().map(|p| p.reference).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::<f64>::zeros();
    let mut est_spread = 0.0;
    for p in pairs {
        let de = p.est - mean_est;
        cov += (p.reference - mean_ref) * de.transpose() / n;
        est_spread += de.norm_squared();
    }
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    // rank < 2 means the points are collinear (or coincident): rotation
    // about the common axis is unobservable
    let scale = (est_spread / n).sqrt().max(f64::EPSILON);
    if sv[1] <= 1e-9 * scale * scale.max(1.0) {
        return Err(Error::Degenerate("collinear points cannot fix the alignment".into()));
    }
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mean_ref - r * mean_est;
    Ok(Pose::new(rotation, translation))
}

#[derive(Clone, Debug)]
pub struct AteReport {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
    pub rmse: f64,
    pub std: f64,
    pub count: usize,
    pub alignment: Pose<f64>,
}

impl AteReport {
    /// Statistics over per-sample errors; std is the population deviation,
    /// so rmse^2 = mean^2 + std^2.
    pub fn from_errors(errors: &[f64], alignment: Pose<f64>) -> Self {
        assert!(!errors.is_empty());
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).max(0.0);
        AteReport {
            max: errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean,
            min: errors.iter().cloned().fold(f64::INFINITY, f64::min),
            rmse: mse.sqrt(),
            std: var.sqrt(),
            count: errors.len(),
            alignment,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AteResult {
    pub report: AteReport,
    pub stamps: Vec<Timestamp>,
    /// Estimated positions after alignment into the reference frame.
    pub aligned: Vec<Vector3<f64>>,
    pub errors: Vec<f64>,
}

/// Align the estimate to the reference and report per-sample Euclidean
/// position errors.
pub fn ate(est: &Trajectory, reference: &Trajectory, max_dt_ns: i64) -> Result<AteResult> {
    let pairs = associate(est, reference, max_dt_ns)?;
    let alignment = umeyama_align(&pairs)?;
    let mut stamps = Vec::with_capacity(pairs.len());
    let mut aligned = Vec::with_capacity(pairs.len());
    let mut errors = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let a = alignment.transform_point(&p.est);
        errors.push((a - p.reference).norm());
        aligned.push(a);
        stamps.push(p.stamp);
    }
    Ok(AteResult {
        report: AteReport::from_errors(&errors, alignment),
        stamps,
        aligned,
        errors,
    })
}

fn error_color(e: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((e - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    // blue at the minimum error, red at the maximum
    let r = (t * 255.0).round() as u8;
    let b = ((1.0 - t) * 255.0).round() as u8;
    format!("rgb({r},0,{b})")
}

/// Top-down (x, y) SVG polyline with per-segment error coloring, plus a CSV
/// "stamp_ns,x,y,z,error_m".
pub fn export_plot(result: &AteResult, svg_path: &Path, csv_path: &Path) -> Result<()> {
    let mut csv = String::from("stamp_ns,x,y,z,error_m\n");
    for ((stamp, p), e) in result.stamps.iter().zip(&result.aligned).zip(&result.errors) {
        csv.push_str(&format!("{},{},{},{},{}\n", stamp.as_nanos(), p.x, p.y, p.z, e));
    }
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    let xs: Vec<f64> = result.aligned.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = result.aligned.iter().map(|p| p.y).collect();
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let size = 800.0;
    let margin = 40.0;
    let sc = (size - 2.0 * margin) / span;
    let px = |x: f64| margin + (x - x0) * sc;
    // svg y grows downward
    let py = |y: f64| size - margin - (y - y0) * sc;

    let lo = result.report.min;
    let hi = result.report.max;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"
    );
    for i in 1..result.aligned.len() {
        let a = result.aligned[i - 1];
        let b = result.aligned[i];
        let e = 0.5 * (result.errors[i - 1] + result.errors[i]);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            px(a.x),
            py(a.y),
            px(b.x),
            py(b.y),
            error_color(e, lo, hi)
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(svg_path, svg).map_err(|e| Error::io(svg_path.display().to_string(), e))
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ts(ms: i64) -> Timestamp {
        Timestamp::from_nanos(ms * 1_000_000)
    }

    fn traj_at(stamps_ms: &[i64], positions: &[Vector3<f64>]) -> Trajectory {
        Trajectory::new(
            stamps_ms
                .iter()
                .zip(positions)
                .map(|(&t, &p)| (ts(t), Pose::from_translation(p)))
                .collect(),
        )
        .unwrap()
    }

    fn random_pose(rng: &mut StdRng) -> Pose<f64> {
        Pose::new(
            UnitQuaternion::from_euler_angles(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
            Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ),
        )
    }

    fn random_positions(rng: &mut StdRng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect()
    }

    #[test]
    fn identical_stamps_pair_with_zero_dt() {
        let pts = vec![Vector3::x(), Vector3::y(), Vector3::z()];
        let a = traj_at(&[0, 100, 200], &pts);
        let pairs = associate(&a, &a, 50_000_000).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.dt_ns == 0));
    }

    #[test]
    fn offset_within_tolerance_pairs_everything() {
        let pts: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let reference = traj_at(&(0..10).map(|i| i * 100).collect::<Vec<_>>(), &pts);
        let est = traj_at(&(0..10).map(|i| i * 100 + 30).collect::<Vec<_>>(), &pts);
        let pairs = associate(&est, &reference, 50_000_000).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.dt_ns == 30_000_000));
    }

    #[test]
    fn distant_sample_is_dropped() {
        let reference = traj_at(&[0, 100, 200], &[Vector3::x(), Vector3::y(), Vector3::z()]);
        let est = traj_at(&[0, 100, 450], &[Vector3::x(), Vector3::y(), Vector3::z()]);
        let pairs = associate(&est, &reference, 50_000_000).unwrap();
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let reference = traj_at(&[0], &[Vector3::x()]);
        let est = traj_at(&[1000], &[Vector3::x()]);
        let err = associate(&est, &reference, 50_000_000).unwrap_err();
        assert!(matches!(err, Error::NoAssociations { .. }));
    }

    #[test]
    fn reference_samples_used_at_most_once() {
        // two est samples nearest to the same ref sample
        let reference = traj_at(&[0, 1000], &[Vector3::zeros(), Vector3::x()]);
        let est = traj_at(
            &[0, 40, 1000],
            &[Vector3::zeros(), Vector3::zeros(), Vector3::x()],
        );
        let pairs = associate(&est, &reference, 500_000_000).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].stamp, ts(0));
        assert_eq!(pairs[1].stamp, ts(1000));
    }

    #[test]
    fn align_identity_when_est_equals_ref() {
        let mut rng = StdRng::seed_from_u64(50);
        let pts = random_positions(&mut rng, 20);
        let pairs: Vec<PairedSample> = pts
            .iter()
            .enumerate()
            .map(|(i, &p)| PairedSample {
                stamp: ts(i as i64),
                dt_ns: 0,
                est: p,
                reference: p,
            })
            .collect();
        let t = umeyama_align(&pairs).unwrap();
        assert!(t.translation.norm() < 1e-9);
        assert!(t.angle() < 1e-9);
    }

    #[test]
    fn align_recovers_random_rigid_transform() {
        let mut rng = StdRng::seed_from_u64(51);
        for _ in 0..20 {
            let g = random_pose(&mut rng);
            let refs = random_positions(&mut rng, 15);
            let pairs: Vec<PairedSample> = refs
                .iter()
                .enumerate()
                .map(|(i, &r)| PairedSample {
                    stamp: ts(i as i64),
                    dt_ns: 0,
                    est: g.inverse().transform_point(&r),
                    reference: r,
                })
                .collect();
            let t = umeyama_align(&pairs).unwrap();
            assert!((t.translation - g.translation).norm() < 1e-9);
            assert!(t.rotation.angle_to(&g.rotation) < 1e-9);
        }
    }

    #[test]
    fn align_beats_sampled_perturbations() {
        let mut rng = StdRng::seed_from_u64(52);
        let g = random_pose(&mut rng);
        let refs = random_positions(&mut rng, 30);
        let pairs: Vec<PairedSample> = refs
            .iter()
            .enumerate()
            .map(|(i, &r)| PairedSample {
                stamp: ts(i as i64),
                dt_ns: 0,
                est: g.inverse().transform_point(&r)
                    + Vector3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    ),
                reference: r,
            })
            .collect();
        let t = umeyama_align(&pairs).unwrap();
        let rmse = |t: &Pose<f64>| {
            (pairs
                .iter()
                .map(|p| (t.transform_point(&p.est) - p.reference).norm_squared())
                .sum::<f64>()
                / pairs.len() as f64)
                .sqrt()
        };
        let base = rmse(&t);
        for _ in 0..1000 {
            let d = nalgebra::Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
            let perturbed = t.compose(&Pose::exp(&d));
            assert!(rmse(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pairs: Vec<PairedSample> = (0..10)
            .map(|i| {
                let p = Vector3::new(i as f64, 0.0, 0.0);
                PairedSample {
                    stamp: ts(i),
                    dt_ns: 0,
                    est: p,
                    reference: p,
                }
            })
            .collect();
        assert!(matches!(umeyama_align(&pairs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn report_statistics_match_hand_computed_values() {
        let report = AteReport::from_errors(&[1.0, 2.0, 3.0], Pose::identity());
        assert_eq!(report.max, 3.0);
        assert_eq!(report.mean, 2.0);
        assert_eq!(report.min, 1.0);
        assert_relative_eq!(report.rmse, (14.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(report.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(report.rmse, 2.160247, epsilon = 1e-6);
        assert_relative_eq!(report.std, 0.816497, epsilon = 1e-6);
    }

    #[test]
    fn report_satisfies_rmse_identity_on_random_errors() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..50 {
            let errors: Vec<f64> = (0..rng.random_range(1..40))
                .map(|_| rng.random_range(0.0..10.0))
                .collect();
            let r = AteReport::from_errors(&errors, Pose::identity());
            assert!(r.min <= r.mean + 1e-12 && r.mean <= r.max + 1e-12);
            assert!(r.rmse + 1e-12 >= r.mean);
            assert_relative_eq!(r.rmse * r.rmse, r.mean * r.mean + r.std * r.std, epsilon = 1e-9);
        }
    }

    #[test]
    fn self_ate_is_zero() {
        let mut rng = StdRng::seed_from_u64(54);
        let pts = random_positions(&mut rng, 25);
        let stamps: Vec<i64> = (0..25).map(|i| i * 100).collect();
        let t = traj_at(&stamps, &pts);
        let result = ate(&t, &t, 50_000_000).unwrap();
        assert!(result.report.max < 1e-9);
        assert!(result.report.rmse < 1e-9);
    }

    #[test]
    fn ate_invariant_to_rigid_pretransform() {
        let mut rng = StdRng::seed_from_u64(55);
        let pts = random_positions(&mut rng, 30);
        let noisy: Vec<Vector3<f64>> = pts
            .iter()
            .map(|p| {
                p + Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect();
        let stamps: Vec<i64> = (0..30).map(|i| i * 100).collect();
        let reference = traj_at(&stamps, &pts);
        let est = traj_at(&stamps, &noisy);
        let g = random_pose(&mut rng);
        let a = ate(&est, &reference, 50_000_000).unwrap();
        let b = ate(&est.pre_transformed(&g), &reference, 50_000_000).unwrap();
        assert_relative_eq!(a.report.rmse, b.report.rmse, epsilon = 1e-9);
        assert_relative_eq!(a.report.max, b.report.max, epsilon = 1e-9);
        assert_relative_eq!(a.report.mean, b.report.mean, epsilon = 1e-9);
        assert_relative_eq!(a.report.min, b.report.min, epsilon = 1e-9);
        assert_relative_eq!(a.report.std, b.report.std, epsilon = 1e-9);
    }

    #[test]
    fn plot_csv_round_trips_errors_exactly() {
        let mut rng = StdRng::seed_from_u64(56);
        let pts = random_positions(&mut rng, 20);
        let noisy: Vec<Vector3<f64>> = pts.iter().map(|p| p + Vector3::new(0.3, -0.1, 0.05)).collect();
        let stamps: Vec<i64> = (0..20).map(|i| i * 100).collect();
        let result = ate(&traj_at(&stamps, &noisy), &traj_at(&stamps, &pts), 50_000_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("traj.svg");
        let csv = dir.path().join("traj.csv");
        export_plot(&result, &svg, &csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "stamp_ns,x,y,z,error_m");
        let reloaded: Vec<f64> = lines
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(reloaded, result.errors, "shortest round-trip float formatting");
    }

    #[test]
    fn two_point_trajectory_yields_one_segment() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let result = ate(&traj_at(&[0, 100, 200], &pts), &traj_at(&[0, 100, 200], &pts), 50_000_000).unwrap();
        let two = AteResult {
            report: result.report.clone(),
            stamps: result.stamps[..2].to_vec(),
            aligned: result.aligned[..2].to_vec(),
            errors: result.errors[..2].to_vec(),
        };
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("two.svg");
        export_plot(&two, &svg, &dir.path().join("two.csv")).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        assert_eq!(text.matches("<line").count(), 1);
    }

    #[test]
    fn zero_error_plot_is_single_color() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 2.0, 0.0),
            Vector3::new(3.0, 1.0, 0.0),
            Vector3::new(4.0, 4.0, 0.0),
        ];
        let t = traj_at(&[0, 100, 200, 300], &pts);
        let result = ate(&t, &t, 50_000_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let svg = dir.path().join("flat.svg");
        export_plot(&result, &svg, &dir.path().join("flat.csv")).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        let colors: std::collections::HashSet<&str> = text
            .lines()
            .filter(|l| l.starts_with("<line"))
            .map(|l| l.split("stroke=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(colors.len(), 1);
    }
}
