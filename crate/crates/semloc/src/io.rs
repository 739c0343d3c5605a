//! File formats: TUM trajectories, binary point clouds, raw label files,
//! PNG label images, and GNSS CSV.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::Pose;
use crate::projection::LabelImage;
use crate::time::Timestamp;
use nalgebra::Vector3;
use std::io::BufWriter;
use std::path::Path;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// One TUM trajectory line: "stamp_sec tx ty tz qx qy qz qw", stamp with 9
/// fractional digits.
pub fn tum_line(stamp: Timestamp, pose: &Pose<f64>) -> String {
    let t = &pose.translation;
    let q = pose.rotation.quaternion();
    format!(
        "{} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        stamp.to_tum_string(),
        t.x,
        t.y,
        t.z,
        q.i,
        q.j,
        q.k,
        q.w
    )
}

pub fn write_tum(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut text = String::new();
    for (stamp, pose) in &trajectory.samples {
        text.push_str(&tum_line(*stamp, pose));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_err(path, lineno, format!("expected 8 fields, got {}", fields.len())));
        }
        let mut nums = [0.0f64; 8];
        for (k, f) in fields.iter().enumerate() {
            nums[k] = f
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number {f:?}")))?;
        }
        let stamp = Timestamp::from_secs_f64(nums[0]);
        let pose = Pose::from_wxyz_translation(
            nums[7],
            nums[4],
            nums[5],
            nums[6],
            Vector3::new(nums[1], nums[2], nums[3]),
        );
        samples.push((stamp, pose));
    }
    let t = Trajectory { samples };
    t.validate()?;
    Ok(t)
}

/// Round-trips a trajectory through its TUM text representation, so that
/// evaluating in memory gives exactly the result of evaluating the written
/// file.
pub fn tum_quantized(trajectory: &Trajectory) -> Trajectory {
    Trajectory {
        samples: trajectory
            .samples
            .iter()
            .map(|(stamp, pose)| {
                let line = tum_line(*stamp, pose);
                let nums: Vec<f64> =
                    line.split_whitespace().map(|f| f.parse().unwrap()).collect();
                (
                    Timestamp::from_secs_f64(nums[0]),
                    Pose::from_wxyz_translation(
                        nums[7],
                        nums[4],
                        nums[5],
                        nums[6],
                        Vector3::new(nums[1], nums[2], nums[3]),
                    ),
                )
            })
            .collect(),
    }
}

/// Binary cloud: little-endian float32 (x, y, z, rel_time_s) per point.
pub fn write_cloud_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for i in 0..cloud.len() {
        let p = &cloud.points[i];
        let rel_s = cloud.rel_time_of(i) as f32 * 1e-9;
        for v in [p.x as f32, p.y as f32, p.z as f32, rel_s] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_cloud_bin(path: &Path, stamp: Timestamp) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::invalid(
            "cloud file",
            format!("{} has size {} not divisible by 16", path.display(), bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut rel_time = Vec::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let f = |o: usize| f32::from_le_bytes([chunk[o], chunk[o + 1], chunk[o + 2], chunk[o + 3]]);
        points.push(Vector3::new(f(0) as f64, f(4) as f64, f(8) as f64));
        rel_time.push((f(12) as f64 * 1e9).round() as i64);
    }
    let mut cloud = PointCloud::new(points, stamp);
    if rel_time.iter().any(|&t| t != 0) {
        cloud.rel_time = rel_time;
    }
    cloud.validate()?;
    Ok(cloud)
}

/// Raw label file: little-endian u32 per point, cloud order.
pub fn write_labels(path: &Path, ids: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = ids.iter().flat_map(|id| id.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(
            "label file",
            format!("{} has size {} not divisible by 4", path.display(), bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// 8-bit single-channel PNG of class ids. All unified class ids fit in a
/// byte.
pub fn write_label_image(path: &Path, image: &LabelImage) -> Result<()> {
    let data: Vec<u8> = image
        .classes
        .iter()
        .map(|&c| {
            u8::try_from(c).map_err(|_| Error::invalid("label image", format!("class id {c} exceeds 8-bit range")))
        })
        .collect::<Result<_>>()?;
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width, image.height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::invalid("png", e.to_string()))?;
    writer
        .write_image_data(&data)
        .map_err(|e| Error::invalid("png", e.to_string()))
}

pub fn read_label_image(path: &Path, stamp: Timestamp, camera: &str) -> Result<LabelImage> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::invalid("png", format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().expect("bounded image size")];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::invalid("png", format!("{}: {e}", path.display())))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::invalid(
            "png",
            format!("{}: expected 8-bit grayscale", path.display()),
        ));
    }
    let classes = buf[..info.buffer_size()].iter().map(|&b| b as u16).collect();
    Ok(LabelImage {
        width: info.width,
        height: info.height,
        classes,
        stamp,
        camera: camera.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnssRecord {
    pub stamp: Timestamp,
    /// Position in the local metric frame, meters.
    pub position: Vector3<f64>,
    pub sigma_m: f64,
}

/// GNSS CSV: "stamp_ns,x,y,z,sigma_m" with a header line.
pub fn write_gnss_csv(path: &Path, records: &[GnssRecord]) -> Result<()> {
    let mut text = String::from("stamp_ns,x,y,z,sigma_m\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.stamp.as_nanos(),
            r.position.x,
            r.position.y,
            r.position.z,
            r.sigma_m
        ));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_gnss_csv(path: &Path) -> Result<Vec<GnssRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || (lineno == 1 && line.starts_with("stamp_ns")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let stamp: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad stamp {:?}", fields[0])))?;
        let mut nums = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            nums[k] = f
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number {f:?}")))?;
        }
        records.push(GnssRecord {
            stamp: Timestamp::from_nanos(stamp),
            position: Vector3::new(nums[0], nums[1], nums[2]),
            sigma_m: nums[3],
        });
    }
    Ok(records)
}

// WGS84 ellipsoid constants.
const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_141_316e-3;

fn geodetic_to_ecef(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Vector3<f64> {
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    let n = WGS84_A / (1.0 - WGS84_E2 * lat.sin().powi(2)).sqrt();
    Vector3::new(
        (n + alt_m) * lat.cos() * lon.cos(),
        (n + alt_m) * lat.cos() * lon.sin(),
        (n * (1.0 - WGS84_E2) + alt_m) * lat.sin(),
    )
}

/// Convert geodetic lat/lon/alt to east-north-up meters relative to a
/// geodetic origin.
pub fn geodetic_to_local(
    lat_deg: f64,
    lon_deg: f64,
    alt_m: f64,
    origin_lat_deg: f64,
    origin_lon_deg: f64,
    origin_alt_m: f64,
) -> Vector3<f64> {
    let d = geodetic_to_ecef(lat_deg, lon_deg, alt_m)
        - geodetic_to_ecef(origin_lat_deg, origin_lon_deg, origin_alt_m);
    let lat = origin_lat_deg.to_radians();
    let lon = origin_lon_deg.to_radians();
    let east = Vector3::new(-lon.sin(), lon.cos(), 0.0);
    let north = Vector3::new(-lat.sin() * lon.cos(), -lat.sin() * lon.sin(), lat.cos());
    let up = Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin());
    Vector3::new(east.dot(&d), north.dot(&d), up.dot(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn tum_line_format_is_fixed_width() {
        let pose = Pose::from_translation(Vector3::new(1.5, -2.0, 0.25));
        let line = tum_line(Timestamp::from_nanos(1_500_000_000), &pose);
        assert_eq!(
            line,
            "1.500000000 1.500000000 -2.000000000 0.250000000 0.000000000 0.000000000 0.000000000 1.000000000"
        );
    }

    #[test]
    fn tum_round_trip() {
        let mut rng = StdRng::seed_from_u64(60);
        let samples: Vec<(Timestamp, Pose<f64>)> = (0..20)
            .map(|i| {
                let pose = Pose::new(
                    UnitQuaternion::from_euler_angles(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    Vector3::new(
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-5.0..5.0),
                    ),
                );
                (Timestamp::from_nanos(i * 100_000_000), pose)
            })
            .collect();
        let t = Trajectory { samples };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.tum");
        write_tum(&path, &t).unwrap();
        let back = read_tum(&path).unwrap();
        assert_eq!(back.len(), t.len());
        for ((s0, p0), (s1, p1)) in t.samples.iter().zip(&back.samples) {
            assert_eq!(s0, s1);
            assert!((p0.translation - p1.translation).norm() < 1e-8);
            assert!(p0.rotation.angle_to(&p1.rotation) < 1e-8);
        }
    }

    #[test]
    fn tum_parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tum");
        std::fs::write(&path, "0.0 0 0 0 0 0 0 1\n1.0 nope 0 0 0 0 0 1\n").unwrap();
        let err = read_tum(&path).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn cloud_bin_round_trip() {
        let points = vec![
            Vector3::new(1.5, -2.25, 0.125),
            Vector3::new(10.0, 20.0, -3.5),
        ];
        let mut cloud = PointCloud::new(points.clone(), Timestamp::from_nanos(5));
        cloud.rel_time = vec![0, 50_000_000];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        write_cloud_bin(&path, &cloud).unwrap();
        let back = read_cloud_bin(&path, Timestamp::from_nanos(5)).unwrap();
        assert_eq!(back.points, points, "f32-exact coordinates survive");
        assert_eq!(back.rel_time[0], 0);
        assert!((back.rel_time[1] - 50_000_000).abs() < 10, "f32 seconds resolution");
    }

    #[test]
    fn label_file_round_trip() {
        let ids = vec![0u32, 10, 252, 99, 81];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.label");
        write_labels(&path, &ids).unwrap();
        assert_eq!(read_labels(&path).unwrap(), ids);
    }

    #[test]
    fn label_image_round_trip() {
        let image = LabelImage {
            width: 4,
            height: 3,
            classes: (0..12u16).collect(),
            stamp: Timestamp::from_nanos(7),
            camera: "cam0".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam0.png");
        write_label_image(&path, &image).unwrap();
        let back = read_label_image(&path, Timestamp::from_nanos(7), "cam0").unwrap();
        assert_eq!(back.width, 4);
        assert_eq!(back.height, 3);
        assert_eq!(back.classes, image.classes);
    }

    #[test]
    fn gnss_csv_round_trip_and_line_errors() {
        let records = vec![
            GnssRecord {
                stamp: Timestamp::from_nanos(1_000_000_000),
                position: Vector3::new(1.25, -3.5, 0.75),
                sigma_m: 0.1,
            },
            GnssRecord {
                stamp: Timestamp::from_nanos(2_000_000_000),
                position: Vector3::new(2.0, -3.0, 0.5),
                sigma_m: 0.2,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gnss.csv");
        write_gnss_csv(&path, &records).unwrap();
        assert_eq!(read_gnss_csv(&path).unwrap(), records);

        std::fs::write(&path, "stamp_ns,x,y,z,sigma_m\n12,1,2,3\n").unwrap();
        match read_gnss_csv(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn geodetic_origin_maps_to_zero() {
        let p = geodetic_to_local(48.1, 11.5, 520.0, 48.1, 11.5, 520.0);
        assert!(p.norm() < 1e-9);
    }

    #[test]
    fn geodetic_north_and_up_axes() {
        // ~111 m per 0.001 degree of latitude at this ellipsoid point
        let north = geodetic_to_local(48.101, 11.5, 520.0, 48.1, 11.5, 520.0);
        assert!(north.y > 100.0 && north.y < 120.0, "north {:?}", north);
        assert!(north.x.abs() < 0.1);
        let up = geodetic_to_local(48.1, 11.5, 530.0, 48.1, 11.5, 520.0);
        assert!((up.z - 10.0).abs() < 1e-6);
        assert!(up.x.abs() < 1e-6 && up.y.abs() < 1e-3);
    }
}
