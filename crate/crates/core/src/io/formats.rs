//! Point clouds, KITTI-style pose lists, extrinsic and correspondence files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{content_lines, parse_floats, read_text, write_bytes};
use crate::calib::{Correspondence, CorrespondenceSet};
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, se3_exp, Mat3, SE3Pose, Se3Params, Vec2, Vec3};

/// Rotation blocks further than this from orthonormal are rejected.
pub const POSE_ORTHONORMAL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    /// Little-endian `f32` quadruples `x y z reflectance`.
    KittiBin,
    /// One `x y z` triple per line.
    AsciiXyz,
}

impl FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti-bin" => Ok(PointFormat::KittiBin),
            "ascii-xyz" => Ok(PointFormat::AsciiXyz),
            other => Err(Error::Config(format!("unknown point format {other:?}"))),
        }
    }
}

/// Raw KITTI records, reflectance included.
pub fn read_kitti_records(path: &Path) -> Result<Vec<[f32; 4]>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a multiple of 16", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| std::array::from_fn(|i| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap())))
        .collect())
}

pub fn write_kitti_records(path: &Path, records: &[[f32; 4]]) -> Result<()> {
    let bytes: Vec<u8> = records.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

/// Reads sensor-frame points; reflectance is dropped.
pub fn read_points(path: &Path, format: PointFormat) -> Result<Vec<Vec3>> {
    match format {
        PointFormat::KittiBin => Ok(read_kitti_records(path)?
            .iter()
            .map(|r| Vec3::new(r[0] as f64, r[1] as f64, r[2] as f64))
            .collect()),
        PointFormat::AsciiXyz => {
            let text = read_text(path)?;
            content_lines(&text)
                .map(|(n, line)| {
                    let v = parse_floats(path, n, line)?;
                    if v.len() != 3 {
                        return Err(Error::parse(path, n, format!("expected 3 values, found {}", v.len())));
                    }
                    Ok(Vec3::new(v[0], v[1], v[2]))
                })
                .collect()
        }
    }
}

/// Writes points; the binary format stores them as `f32` with zero
/// reflectance.
pub fn write_points(path: &Path, points: &[Vec3], format: PointFormat) -> Result<()> {
    match format {
        PointFormat::KittiBin => {
            let records: Vec<[f32; 4]> = points.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32, 0.0]).collect();
            write_kitti_records(path, &records)
        }
        PointFormat::AsciiXyz => {
            let mut s = String::new();
            for p in points {
                writeln!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
            }
            write_bytes(path, s.as_bytes())
        }
    }
}

/// Row-major `3x4` `[R | t]` per line. Rotations within 1e-4 of
/// orthonormal are projected onto SO(3); reflections are rejected.
pub fn read_poses(path: &Path) -> Result<Vec<SE3Pose>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(n, line)| {
            let v = parse_floats(path, n, line)?;
            if v.len() != 12 {
                return Err(Error::parse(path, n, format!("expected 12 values, found {}", v.len())));
            }
            let r = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            let t = Vec3::new(v[3], v[7], v[11]);
            if r.determinant() < 0.0 {
                return Err(Error::format(path, format!("line {n}: rotation has negative determinant")));
            }
            let drift = (r.transpose() * r - Mat3::identity()).abs().max();
            if drift > POSE_ORTHONORMAL_TOL {
                return Err(Error::format(path, format!("line {n}: rotation is not orthonormal ({drift:.2e})")));
            }
            Ok(SE3Pose::new(nearest_rotation(&r), t))
        })
        .collect()
}

fn pose_line(p: &SE3Pose) -> String {
    let (r, t) = (&p.rotation, &p.translation);
    let vals = [
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
    ];
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_poses(path: &Path, poses: &[SE3Pose]) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        s.push_str(&pose_line(p));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

/// First line: the six se(3) coordinates, translation part first. An
/// optional second line holds the `3x4` matrix and is not read back.
pub fn read_extrinsic(path: &Path) -> Result<Se3Params> {
    let text = read_text(path)?;
    let (n, line) = content_lines(&text)
        .next()
        .ok_or_else(|| Error::format(path, "empty extrinsic file"))?;
    let v = parse_floats(path, n, line)?;
    if v.len() != 6 {
        return Err(Error::parse(path, n, format!("expected 6 values, found {}", v.len())));
    }
    let xi = Se3Params::from_array(std::array::from_fn(|i| v[i]));
    if !xi.is_finite() {
        return Err(Error::parse(path, n, "non-finite extrinsic"));
    }
    Ok(xi)
}

pub fn write_extrinsic(path: &Path, xi: &Se3Params) -> Result<()> {
    let coords = xi.to_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
    let s = format!("{coords}\n{}\n", pose_line(&se3_exp(xi)));
    write_bytes(path, s.as_bytes())
}

/// Lines `n n+1 x1 y1 x2 y2`: a pixel in frame `n` and its match in the
/// next frame.
pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    let text = read_text(path)?;
    let pairs = content_lines(&text)
        .map(|(n, line)| {
            let v = parse_floats(path, n, line)?;
            if v.len() != 6 {
                return Err(Error::parse(path, n, format!("expected 6 values, found {}", v.len())));
            }
            let frame = v[0];
            if frame < 0.0 || frame.fract() != 0.0 || v[1] != frame + 1.0 {
                return Err(Error::parse(path, n, "frame indices must be n and n+1"));
            }
            Ok(Correspondence {
                frame: frame as usize,
                q_n: Vec2::new(v[2], v[3]),
                q_next: Vec2::new(v[4], v[5]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrespondenceSet { pairs })
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    let mut s = String::new();
    for c in &set.pairs {
        writeln!(s, "{} {} {} {} {} {}", c.frame, c.frame + 1, c.q_n.x, c.q_n.y, c.q_next.x, c.q_next.y).unwrap();
    }
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_kitti_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5].iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_points(&p, PointFormat::KittiBin).unwrap(), vec![Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn empty_and_truncated_clouds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        std::fs::write(&p, []).unwrap();
        assert!(read_points(&p, PointFormat::KittiBin).unwrap().is_empty());
        std::fs::write(&p, [0u8; 20]).unwrap();
        assert!(matches!(read_points(&p, PointFormat::KittiBin), Err(Error::Format { .. })));
    }

    #[test]
    fn kitti_records_roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<[f32; 4]> = (0..100_000).map(|_| std::array::from_fn(|_| rng.gen_range(-80.0..80.0))).collect();
        write_kitti_records(&p, &recs).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let back = read_kitti_records(&p).unwrap();
        assert!(recs.iter().flatten().zip(back.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
        write_kitti_records(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn ascii_points_and_bad_token() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        let pts = vec![Vec3::new(0.1, -2.5, 3.0), Vec3::new(1e-7, 4.0, 5.5)];
        write_points(&p, &pts, PointFormat::AsciiXyz).unwrap();
        assert_eq!(read_points(&p, PointFormat::AsciiXyz).unwrap(), pts);
        std::fs::write(&p, "1 2 3\n4 x 6\n").unwrap();
        match read_points(&p, PointFormat::AsciiXyz) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_pose_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        std::fs::write(&p, "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 6 0 0 1 7\n").unwrap();
        let poses = read_poses(&p).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[0], SE3Pose::identity());
        assert_eq!(poses[1].translation, Vec3::new(5.0, 6.0, 7.0));
    }

    #[test]
    fn pose_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        std::fs::write(&p, "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert!(matches!(read_poses(&p), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "1 0 0 0 0 1 0 0 0 0 -1 0\n").unwrap();
        assert!(matches!(read_poses(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "1.01 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert!(matches!(read_poses(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn near_orthonormal_pose_is_projected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        std::fs::write(&p, "1.00002 0 0 0 0 1 0 0 0 0 0.99999 0\n").unwrap();
        let r = read_poses(&p).unwrap()[0].rotation;
        assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn poses_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses: Vec<SE3Pose> = (0..50)
            .map(|_| se3_exp(&Se3Params::from_array(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)))))
            .collect();
        write_poses(&p, &poses).unwrap();
        let back = read_poses(&p).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.rotation - b.rotation).abs().max() < 1e-12);
            assert!((a.translation - b.translation).abs().max() < 1e-12);
        }
    }

    #[test]
    fn extrinsic_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = Se3Params::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            write_extrinsic(&p, &xi).unwrap();
            let back = read_extrinsic(&p).unwrap();
            assert!(xi.to_array().iter().zip(back.to_array()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(read_text(&p).unwrap().lines().nth(1).unwrap().split_whitespace().count(), 12);
    }

    #[test]
    fn correspondence_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let set = CorrespondenceSet {
            pairs: vec![
                Correspondence { frame: 0, q_n: Vec2::new(1.5, 2.25), q_next: Vec2::new(3.0, 4.0) },
                Correspondence { frame: 4, q_n: Vec2::new(0.1, 0.2), q_next: Vec2::new(0.3, 0.4) },
            ],
        };
        write_correspondences(&p, &set).unwrap();
        assert_eq!(read_correspondences(&p).unwrap(), set);
        std::fs::write(&p, "0 2 1 1 1 1\n").unwrap();
        assert!(matches!(read_correspondences(&p), Err(Error::Parse { line: 1, .. })));
    }
}
