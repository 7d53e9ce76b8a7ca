use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Transform, Vec3};
use crate::pointcloud::{voxel_downsample, PointCloud};

/// Little-endian `f32` quadruples `(x, y, z, reflectance)`; reflectance is dropped.
pub fn read_kitti_scan(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(Error::format(
            format!("byte {}", bytes.len() - bytes.len() % 16),
            format!("scan length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    let points = bytes
        .chunks_exact(16)
        .map(|c| Vec3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
        .collect();
    Ok(PointCloud::new(points))
}

/// Writes points as `f32` with zero reflectance.
pub fn write_kitti_scan(cloud: &PointCloud, mut w: impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, 0.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_scan_file(path: &Path) -> Result<PointCloud> {
    read_kitti_scan(&fs::read(path)?).map_err(|e| match e {
        Error::Format { position, message } => Error::format(format!("{}: {position}", path.display()), message),
        other => other,
    })
}

pub fn write_scan_file(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_kitti_scan(cloud, &mut f)?;
    f.flush()?;
    Ok(())
}

/// One row-major 3×4 matrix per non-empty line.
pub fn read_kitti_poses(text: &str) -> Result<Vec<Transform>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let pos = || format!("line {}", lineno + 1);
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::format(pos(), format!("not a number: {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 12 {
            return Err(Error::format(pos(), format!("expected 12 values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(pos(), "non-finite value"));
        }
        let rot = Mat3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        let tf = Transform::new(rot, Vec3::new(vals[3], vals[7], vals[11]));
        if !tf.is_valid(1e-4) {
            return Err(Error::format(pos(), "rotation block is not orthonormal"));
        }
        out.push(tf);
    }
    Ok(out)
}

pub fn write_kitti_poses(poses: &[Transform]) -> String {
    let mut s = String::new();
    for tf in poses {
        let h = tf.to_homogeneous();
        let row: Vec<String> = h[..12].iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Union of all scans moved into the world frame, voxel-downsampled.
pub fn assemble_map(scans: &[PointCloud], poses: &[Transform], voxel: f64, seed: u64) -> Result<PointCloud> {
    if scans.len() != poses.len() {
        return Err(Error::invalid(format!("{} scans but {} poses", scans.len(), poses.len())));
    }
    let points = scans
        .iter()
        .zip(poses)
        .flat_map(|(s, tf)| s.points.iter().map(move |p| tf.apply(p)))
        .collect();
    voxel_downsample(&PointCloud::new(points), &Vec3::repeat(voxel), seed)
}

/// A directory with `velodyne/NNNNNN.bin` scans and an optional `poses.txt`.
#[derive(Debug, Clone)]
pub struct KittiSequence {
    pub scans: Vec<PathBuf>,
    pub poses: Option<Vec<Transform>>,
    pub dt: f64,
}

impl KittiSequence {
    pub fn open(dir: &Path, dt: f64) -> Result<Self> {
        let vel = dir.join("velodyne");
        let mut scans: Vec<PathBuf> = fs::read_dir(&vel)
            .map_err(|e| Error::invalid(format!("cannot list {}: {e}", vel.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        scans.sort();
        let pose_file = dir.join("poses.txt");
        let poses = if pose_file.exists() {
            let text = fs::read_to_string(&pose_file)?;
            Some(read_kitti_poses(&text).map_err(|e| match e {
                Error::Format { position, message } => {
                    Error::format(format!("{}: {position}", pose_file.display()), message)
                }
                other => other,
            })?)
        } else {
            None
        };
        if let Some(p) = &poses {
            if p.len() > scans.len() {
                return Err(Error::invalid(format!("{} poses for {} scans", p.len(), scans.len())));
            }
        }
        Ok(Self { scans, poses, dt })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn scan(&self, k: usize) -> Result<PointCloud> {
        read_scan_file(&self.scans[k])
    }

    /// Writes scans and poses in the layout [`KittiSequence::open`] reads.
    pub fn write(dir: &Path, scans: &[PointCloud], poses: &[Transform]) -> Result<()> {
        let vel = dir.join("velodyne");
        fs::create_dir_all(&vel)?;
        for (k, s) in scans.iter().enumerate() {
            write_scan_file(&vel.join(format!("{k:06}.bin")), s)?;
        }
        fs::write(dir.join("poses.txt"), write_kitti_poses(poses))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_to_transform, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scan_trivial_cases() {
        assert_eq!(read_kitti_scan(&[0u8; 16]).unwrap().points, vec![Vec3::zeros()]);
        assert!(read_kitti_scan(&[]).unwrap().is_empty());
        match read_kitti_scan(&[0u8; 20]) {
            Err(Error::Format { position, .. }) => assert_eq!(position, "byte 16"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scan_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-80.0f32..80.0) as f64))
            .collect();
        let cloud = PointCloud::new(pts);
        let mut bytes = Vec::new();
        write_kitti_scan(&cloud, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 16_000);
        let back = read_kitti_scan(&bytes).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn pose_lines() {
        let p = read_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(p, vec![Transform::identity()]);
        let p = read_kitti_poses("1 0 0 3.5 0 1 0 -2 0 0 1 0.25").unwrap();
        assert_eq!(p[0].t, Vec3::new(3.5, -2.0, 0.25));
        assert_eq!(p[0].rot, Mat3::identity());
    }

    #[test]
    fn pose_errors_carry_line_numbers() {
        let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
        match read_kitti_poses(text) {
            Err(Error::Format { position, .. }) => assert_eq!(position, "line 2"),
            other => panic!("{other:?}"),
        }
        assert!(read_kitti_poses("1 0 0 0 0 1 0 0 0 0 x 0").is_err());
        assert!(read_kitti_poses("2 0 0 0 0 1 0 0 0 0 1 0").is_err());
    }

    #[test]
    fn pose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses: Vec<Transform> = (0..50)
            .map(|_| {
                pose_to_transform(&Pose::from_xyz_ypr(
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ))
            })
            .collect();
        let back = read_kitti_poses(&write_kitti_poses(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.rot - b.rot).abs().max() < 1e-9 && (a.t - b.t).abs().max() < 1e-9);
        }
    }

    #[test]
    fn assemble_cases() {
        let scan = PointCloud::new((0..20).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        let one = assemble_map(std::slice::from_ref(&scan), &[Transform::identity()], 0.5, 0).unwrap();
        assert_eq!(one.points, scan.points);
        let moved = Transform::from_translation(Vec3::new(0.0, 100.0, 0.0));
        let two = assemble_map(&[scan.clone(), scan.clone()], &[Transform::identity(), moved], 0.5, 0).unwrap();
        assert_eq!(two.len(), 40);
        assert!(assemble_map(&[scan], &[], 0.5, 0).is_err());
    }

    #[test]
    fn sequence_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scans = vec![PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]); 3];
        let poses = vec![Transform::identity(); 2];
        KittiSequence::write(dir.path(), &scans, &poses).unwrap();
        let seq = KittiSequence::open(dir.path(), 0.1).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.poses.as_ref().unwrap().len(), 2);
        assert_eq!(seq.scan(2).unwrap(), scans[2]);

        fs::write(dir.path().join("poses.txt"), write_kitti_poses(&[Transform::identity(); 4])).unwrap();
        assert!(KittiSequence::open(dir.path(), 0.1).is_err());
    }
}
