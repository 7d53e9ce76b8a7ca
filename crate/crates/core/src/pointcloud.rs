//! Point cloud containers and preprocessing: voxel downsampling, PCA normals,
//! flat-surface removal and bird's-eye-view projection.

use nalgebra::{SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Transform, Vec3};
use crate::kdtree::KdTree;

pub type Vec2 = Vector2<f64>;

pub const DEFAULT_NORMAL_K: usize = 16;
/// Points whose normal has |n_z| above this are treated as road / flat surface.
pub const DEFAULT_FLAT_NZ: f64 = 0.75;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points, normals: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::invalid("normal count differs from point count"));
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::invalid(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds, `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    /// Rigidly moves points (and rotates normals).
    pub fn transformed(&self, tf: &Transform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| tf.apply(p)).collect(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|n| tf.rot * n).collect()),
        }
    }
}

/// 2D top-view cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BevCloud {
    pub points: Vec<Vec2>,
}

impl BevCloud {
    pub fn new(points: Vec<Vec2>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn voxel_key(p: &Vec3, res: &Vec3) -> (i64, i64, i64) {
    (
        (p[0] / res[0]).floor() as i64,
        (p[1] / res[1]).floor() as i64,
        (p[2] / res[2]).floor() as i64,
    )
}

/// Keeps one randomly chosen member point per occupied voxel. Output is
/// ordered by voxel index and fully determined by `seed`.
pub fn voxel_downsample(cloud: &PointCloud, res: &Vec3, seed: u64) -> Result<PointCloud> {
    if !res.iter().all(|r| r.is_finite() && *r > 0.0) {
        return Err(Error::invalid(format!("voxel resolution must be positive, got {res:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: FxHashMap<(i64, i64, i64), (u32, usize)> = FxHashMap::default();
    for (i, p) in cloud.points.iter().enumerate() {
        let slot = cells.entry(voxel_key(p, res)).or_insert((0, i));
        slot.0 += 1;
        // reservoir sampling of size one
        if slot.0 > 1 && rng.random_range(0..slot.0) == 0 {
            slot.1 = i;
        }
    }
    let mut chosen: Vec<_> = cells.into_iter().collect();
    chosen.sort_unstable_by_key(|(k, _)| *k);
    let points = chosen.iter().map(|(_, (_, i))| cloud.points[*i]).collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| chosen.iter().map(|(_, (_, i))| ns[*i]).collect());
    Ok(PointCloud { points, normals })
}

/// Eigen-decomposition of a neighbourhood covariance, eigenvalues ascending.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame {
    pub values: Vec3,
    /// Columns are eigenvectors matching `values`.
    pub vectors: Mat3,
}

impl LocalFrame {
    /// Fewer than two significant principal directions.
    pub fn is_degenerate(&self) -> bool {
        self.values[2] <= 1e-18 || self.values[1] <= 1e-10 * self.values[2]
    }
}

pub(crate) fn local_frame(points: &[Vec3], neighbours: impl Iterator<Item = usize> + Clone) -> LocalFrame {
    let n = neighbours.clone().count() as f64;
    let mean = neighbours.clone().fold(Vec3::zeros(), |acc, i| acc + points[i]) / n;
    let cov = neighbours.fold(Mat3::zeros(), |acc, i| {
        let d = points[i] - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vec3::new(
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    let vectors = Mat3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    LocalFrame { values, vectors }
}

/// PCA frames over each point's `k` nearest neighbours (the point itself included).
pub(crate) fn local_frames(points: &[Vec3], tree: &KdTree, k: usize) -> Vec<LocalFrame> {
    points
        .par_iter()
        .map(|p| {
            let nn = tree.knn(p, k);
            local_frame(tree.points(), nn.iter().map(|(i, _)| *i))
        })
        .collect()
}

/// Surface normals from k-NN PCA, oriented so n_z ≥ 0. Degenerate
/// neighbourhoods get +z.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::invalid(format!("need k >= 3 neighbours, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::invalid(format!(
            "cloud has {} points, need at least {}",
            cloud.len(),
            k + 1
        )));
    }
    let tree = KdTree::build(&cloud.points);
    let normals = local_frames(&cloud.points, &tree, k + 1)
        .into_iter()
        .map(|f| {
            if f.is_degenerate() {
                return Vec3::z();
            }
            let n = f.vectors.column(0).normalize();
            if n[2] < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    Ok(PointCloud { points: cloud.points.clone(), normals: Some(normals) })
}

/// Drops points whose normal has |n_z| > `nz_threshold`.
pub fn remove_flat(cloud: &PointCloud, nz_threshold: f64) -> Result<PointCloud> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::Precondition("remove_flat needs normals".into()))?;
    if !(nz_threshold > 0.0 && nz_threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold must be in (0, 1], got {nz_threshold}")));
    }
    let (points, kept): (Vec<_>, Vec<_>) = cloud
        .points
        .iter()
        .zip(normals)
        .filter(|(_, n)| n[2].abs() <= nz_threshold)
        .map(|(p, n)| (*p, *n))
        .unzip();
    Ok(PointCloud { points, normals: Some(kept) })
}

/// Keeps the first point of each occupied `res` cell, ordered by cell.
pub fn bev_downsample(bev: &BevCloud, res: f64) -> Result<BevCloud> {
    if !(res.is_finite() && res > 0.0) {
        return Err(Error::invalid(format!("BEV resolution must be positive, got {res}")));
    }
    let mut cells: FxHashMap<(i64, i64), usize> = FxHashMap::default();
    for (i, p) in bev.points.iter().enumerate() {
        cells.entry(((p[0] / res).floor() as i64, (p[1] / res).floor() as i64)).or_insert(i);
    }
    let mut chosen: Vec<_> = cells.into_iter().collect();
    chosen.sort_unstable();
    Ok(BevCloud::new(chosen.into_iter().map(|(_, i)| bev.points[i]).collect()))
}

pub fn to_bev(cloud: &PointCloud) -> BevCloud {
    BevCloud::new(cloud.points.iter().map(|p| Vec2::new(p[0], p[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeMap;

    fn grid_plane(n: usize, spacing: f64, f: impl Fn(f64, f64) -> Vec3) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(f(i as f64 * spacing, j as f64 * spacing));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn single_voxel_collapses_to_member() {
        let pts: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new(0.1 * (i & 1) as f64, 0.1 * ((i >> 1) & 1) as f64, 0.1 * (i >> 2) as f64) + Vec3::repeat(0.2))
            .collect();
        let cloud = PointCloud::new(pts.clone());
        let out = voxel_downsample(&cloud, &Vec3::repeat(1.0), 3).unwrap();
        assert_eq!(out.len(), 1);
        assert!(pts.contains(&out.points[0]));
    }

    #[test]
    fn distinct_voxels_are_kept() {
        let pts = vec![Vec3::new(0.5, 0.5, 0.5), Vec3::new(3.5, 0.5, 0.5), Vec3::new(-2.5, 1.5, 0.5)];
        let out = voxel_downsample(&PointCloud::new(pts.clone()), &Vec3::repeat(1.0), 0).unwrap();
        let mut a = out.points.clone();
        let mut b = pts;
        let key = |p: &Vec3| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
    }

    #[test]
    fn slab_downsample_matches_bucketing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..5000)
            .map(|_| Vec3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..1.0)))
            .collect();
        let out = voxel_downsample(&PointCloud::new(pts.clone()), &Vec3::repeat(1.0), 5).unwrap();
        let mut buckets: BTreeMap<(i64, i64, i64), Vec<Vec3>> = BTreeMap::new();
        for p in &pts {
            buckets
                .entry((p[0].floor() as i64, p[1].floor() as i64, p[2].floor() as i64))
                .or_default()
                .push(*p);
        }
        assert_eq!(out.len(), buckets.len());
        let mut seen = std::collections::BTreeSet::new();
        for p in &out.points {
            let k = (p[0].floor() as i64, p[1].floor() as i64, p[2].floor() as i64);
            assert!(buckets[&k].contains(p));
            assert!(seen.insert(k), "two points in voxel {k:?}");
        }
    }

    #[test]
    fn downsample_rejects_bad_resolution() {
        let c = PointCloud::new(vec![Vec3::zeros()]);
        assert!(voxel_downsample(&c, &Vec3::new(1.0, 0.0, 1.0), 0).is_err());
        assert!(voxel_downsample(&c, &Vec3::new(1.0, -1.0, 1.0), 0).is_err());
    }

    #[test]
    fn horizontal_plane_normals_point_up() {
        let cloud = grid_plane(20, 0.1, |x, y| Vec3::new(x, y, 0.0));
        let out = estimate_normals(&cloud, 16).unwrap();
        for n in out.normals.unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-3);
        }
    }

    #[test]
    fn vertical_plane_normals_are_horizontal() {
        let cloud = grid_plane(20, 0.1, |y, z| Vec3::new(0.0, y, z));
        let out = estimate_normals(&cloud, 16).unwrap();
        for n in out.normals.unwrap() {
            assert!((n[0].abs() - 1.0).abs() < 1e-3);
            assert!(n[2].abs() < 1e-3);
        }
    }

    #[test]
    fn noisy_sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let n = 3000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                let dir = Vec3::new(r * th.cos(), r * th.sin(), z);
                dir * (1.0 + noise.sample(&mut rng))
            })
            .collect();
        let out = estimate_normals(&PointCloud::new(pts.clone()), 16).unwrap();
        let good = out
            .normals
            .unwrap()
            .iter()
            .zip(&pts)
            .filter(|(nrm, p)| nrm.dot(&p.normalize()).abs() >= 5f64.to_radians().cos())
            .count();
        assert!(good as f64 >= 0.95 * n as f64, "{good}/{n}");
    }

    #[test]
    fn collinear_neighbourhood_defaults_to_up() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let out = estimate_normals(&PointCloud::new(pts), 4).unwrap();
        assert!(out.normals.unwrap().iter().all(|n| *n == Vec3::z()));
    }

    #[test]
    fn estimate_normals_preconditions() {
        let c = PointCloud::new(vec![Vec3::zeros(); 4]);
        assert!(estimate_normals(&c, 2).is_err());
        assert!(estimate_normals(&c, 4).is_err());
    }

    fn wall_and_floor() -> PointCloud {
        let mut pts = grid_plane(15, 0.2, |x, y| Vec3::new(x, y, 0.0)).points;
        pts.extend(grid_plane(15, 0.2, |y, z| Vec3::new(5.0, y, z + 0.5)).points);
        estimate_normals(&PointCloud::new(pts), 16).unwrap()
    }

    #[test]
    fn remove_flat_cases() {
        let floor = estimate_normals(&grid_plane(15, 0.2, |x, y| Vec3::new(x, y, 0.0)), 16).unwrap();
        assert!(remove_flat(&floor, DEFAULT_FLAT_NZ).unwrap().is_empty());
        let wall = estimate_normals(&grid_plane(15, 0.2, |y, z| Vec3::new(0.0, y, z)), 16).unwrap();
        assert_eq!(remove_flat(&wall, DEFAULT_FLAT_NZ).unwrap(), wall);

        let mixed = wall_and_floor();
        let out = remove_flat(&mixed, DEFAULT_FLAT_NZ).unwrap();
        let oracle: Vec<Vec3> = mixed
            .points
            .iter()
            .zip(mixed.normals.as_ref().unwrap())
            .filter(|(_, n)| n[2].abs() <= 0.75)
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(out.points, oracle);
        assert!(out.points.iter().all(|p| p[0] > 4.0));
        assert_eq!(remove_flat(&out, DEFAULT_FLAT_NZ).unwrap(), out);
    }

    #[test]
    fn remove_flat_needs_normals() {
        let c = PointCloud::new(vec![Vec3::zeros()]);
        assert!(matches!(remove_flat(&c, 0.75), Err(Error::Precondition(_))));
        let with = PointCloud { points: vec![Vec3::zeros()], normals: Some(vec![Vec3::z()]) };
        assert!(remove_flat(&with, 0.0).is_err());
    }

    #[test]
    fn bev_projection() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(to_bev(&c).points, vec![Vec2::new(1.0, 2.0)]);
        assert!(to_bev(&PointCloud::default()).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = PointCloud::new((0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect());
        let b = to_bev(&c);
        assert_eq!(b.len(), c.len());
        for (p, q) in c.points.iter().zip(&b.points) {
            assert_eq!((p[0], p[1]), (q[0], q[1]));
        }
    }

    #[test]
    fn bev_downsample_keeps_one_per_cell() {
        let bev = BevCloud::new(vec![Vec2::new(0.1, 0.1), Vec2::new(0.2, 0.3), Vec2::new(1.5, 0.1), Vec2::new(-0.1, 0.0)]);
        let out = bev_downsample(&bev, 1.0).unwrap();
        assert_eq!(out.points, vec![Vec2::new(-0.1, 0.0), Vec2::new(0.1, 0.1), Vec2::new(1.5, 0.1)]);
        assert!(bev_downsample(&bev, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn downsample_is_subset(seed in 0u64..1000, res in 0.05f64..3.0, n in 1usize..300) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0))).collect();
                let out = voxel_downsample(&PointCloud::new(pts.clone()), &Vec3::repeat(res), seed).unwrap();
                prop_assert!(!out.is_empty());
                prop_assert!(out.len() <= pts.len());
                for p in &out.points {
                    prop_assert!(pts.contains(p));
                }
            }
        }
    }
}
