//! Sparse truncated nearest-map distance field and the likelihood-field
//! sensor model built on it.
//!
//! Grid nodes sit at `lb + i * delta`. Only nodes whose exact distance to the
//! map is below `d_max` are stored; any query that misses the table (or falls
//! outside the box) reads `d_max`. A query point reads the value of the lower
//! corner of its cell, so the error against the exact distance is bounded by
//! the cell diagonal.

use std::io::{Read, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Transform, Vec3};
use crate::kdtree::KdTree;
use crate::pointcloud::PointCloud;

const MAGIC: &[u8; 4] = b"NNG1";
const AXIS_BITS: u32 = 21;
const AXIS_LIMIT: u64 = 1 << AXIS_BITS;
const AXIS_MASK: u64 = AXIS_LIMIT - 1;

pub const DEFAULT_DELTA: f64 = 0.2;
pub const DEFAULT_D_MAX: f64 = 5.0;
pub const DEFAULT_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lb: Vec3,
    pub ub: Vec3,
    pub delta: Vec3,
    pub d_max: f64,
    pub sigma: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = self.lb.iter().chain(self.ub.iter()).chain(self.delta.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("grid spec has non-finite values"));
        }
        if (0..3).any(|a| self.ub[a] <= self.lb[a]) {
            return Err(Error::invalid(format!("ub {:?} must exceed lb {:?}", self.ub, self.lb)));
        }
        if self.delta.iter().any(|d| *d <= 0.0) {
            return Err(Error::invalid("cell size must be positive"));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("d_max and sigma must be positive"));
        }
        Ok(())
    }

    /// Box that covers every map point, with `lb` at the map minimum and a
    /// whole number of cells per axis, so every point of the box has a cell.
    pub fn covering(map: &PointCloud, delta: Vec3, d_max: f64, sigma: f64) -> Result<Self> {
        let (lo, hi) = map.bounds().ok_or_else(|| Error::invalid("empty map"))?;
        let ub = Vec3::from_fn(|a, _| {
            let cells = ((hi[a] - lo[a]) / delta[a]).floor() + 1.0;
            let mut u = lo[a] + cells * delta[a];
            while ((u - lo[a]) / delta[a]).floor() < cells {
                u = u.next_up();
            }
            u
        });
        let spec = GridSpec { lb: lo, ub, delta, d_max, sigma };
        spec.validate()?;
        Ok(spec)
    }

    /// Nodes per axis, `floor((ub - lb) / delta)`.
    pub fn dims(&self) -> [u64; 3] {
        [0, 1, 2].map(|a| ((self.ub[a] - self.lb[a]) / self.delta[a]).floor().max(0.0) as u64)
    }

    pub fn node(&self, idx: [u64; 3]) -> Vec3 {
        Vec3::from_fn(|a, _| self.lb[a] + idx[a] as f64 * self.delta[a])
    }

    /// Cell index of a point, `None` outside the grid.
    #[inline]
    pub fn cell_of(&self, p: &Vec3) -> Option<[u64; 3]> {
        let dims = self.dims();
        let mut out = [0u64; 3];
        for a in 0..3 {
            let f = ((p[a] - self.lb[a]) / self.delta[a]).floor();
            if !(f >= 0.0 && f < dims[a] as f64) {
                return None;
            }
            out[a] = f as u64;
        }
        Some(out)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.delta.norm()
    }
}

#[inline]
pub fn pack_index(idx: [u64; 3]) -> u64 {
    idx[0] | (idx[1] << AXIS_BITS) | (idx[2] << (2 * AXIS_BITS))
}

#[inline]
pub fn unpack_index(key: u64) -> [u64; 3] {
    [key & AXIS_MASK, (key >> AXIS_BITS) & AXIS_MASK, (key >> (2 * AXIS_BITS)) & AXIS_MASK]
}

/// Sparse lookup table of truncated nearest-map distances.
///
/// Stored nodes are grouped into dense 4×4×4 blocks so that neighbouring
/// queries touch the same memory; only blocks holding at least one node
/// below `d_max` exist.
#[derive(Debug, Clone)]
pub struct DistanceGrid {
    spec: GridSpec,
    /// Packed block index to block slot.
    blocks: FxHashMap<u64, u32>,
    /// `BLOCK_LEN` values per slot; NaN marks a node that is not stored.
    values: Vec<f64>,
    stored: usize,
    inv_delta: Vec3,
    dims_f: Vec3,
}

const BLOCK_BITS: u32 = 2;
const BLOCK_SIDE: u64 = 1 << BLOCK_BITS;
const BLOCK_LEN: usize = 1 << (3 * BLOCK_BITS);

#[inline]
fn split_index(idx: [u64; 3]) -> (u64, usize) {
    let block = pack_index([idx[0] >> BLOCK_BITS, idx[1] >> BLOCK_BITS, idx[2] >> BLOCK_BITS]);
    let m = BLOCK_SIDE - 1;
    let local = (idx[0] & m) | ((idx[1] & m) << BLOCK_BITS) | ((idx[2] & m) << (2 * BLOCK_BITS));
    (block, local as usize)
}

impl DistanceGrid {
    fn from_entries(spec: GridSpec, entries: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut blocks = FxHashMap::default();
        let mut values: Vec<f64> = Vec::new();
        let mut stored = 0;
        for (key, d) in entries {
            let (block, local) = split_index(unpack_index(key));
            let slot = *blocks.entry(block).or_insert_with(|| {
                values.extend(std::iter::repeat_n(f64::NAN, BLOCK_LEN));
                (values.len() / BLOCK_LEN - 1) as u32
            });
            let v = &mut values[slot as usize * BLOCK_LEN + local];
            if v.is_nan() {
                stored += 1;
            }
            *v = d;
        }
        let dims = spec.dims();
        DistanceGrid {
            spec,
            blocks,
            values,
            stored,
            inv_delta: spec.delta.map(|d| 1.0 / d),
            dims_f: Vec3::from_fn(|a, _| dims[a] as f64),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Number of stored nodes.
    pub fn len(&self) -> usize {
        self.stored
    }

    pub fn is_empty(&self) -> bool {
        self.stored == 0
    }

    pub fn get(&self, idx: [u64; 3]) -> Option<f64> {
        let (block, local) = split_index(idx);
        let slot = *self.blocks.get(&block)?;
        let v = self.values[slot as usize * BLOCK_LEN + local];
        (!v.is_nan()).then_some(v)
    }

    /// Stored entries sorted by packed index.
    pub fn entries(&self) -> Vec<(u64, f64)> {
        let mut v = Vec::with_capacity(self.stored);
        for (&block, &slot) in &self.blocks {
            let b = unpack_index(block);
            let vals = &self.values[slot as usize * BLOCK_LEN..(slot as usize + 1) * BLOCK_LEN];
            for (local, d) in vals.iter().enumerate() {
                if d.is_nan() {
                    continue;
                }
                let l = local as u64;
                let m = BLOCK_SIDE - 1;
                let idx = [
                    (b[0] << BLOCK_BITS) | (l & m),
                    (b[1] << BLOCK_BITS) | ((l >> BLOCK_BITS) & m),
                    (b[2] << BLOCK_BITS) | ((l >> (2 * BLOCK_BITS)) & m),
                ];
                v.push((pack_index(idx), *d));
            }
        }
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    #[inline]
    fn cell(&self, p: &Vec3) -> Option<[u64; 3]> {
        let mut idx = [0u64; 3];
        for a in 0..3 {
            let f = (p[a] - self.spec.lb[a]) * self.inv_delta[a];
            // truncation equals floor once f is known to be non-negative
            if !(f >= 0.0 && f < self.dims_f[a]) {
                return None;
            }
            idx[a] = f as u64;
        }
        Some(idx)
    }

    /// Approximate distance to the map; `d_max` when the cell is absent.
    #[inline]
    pub fn lookup(&self, p: &Vec3) -> f64 {
        self.cell(p).and_then(|idx| self.get(idx)).unwrap_or(self.spec.d_max)
    }

    /// `-Σ min(d², d_max²) / σ²` over the points moved by `tf`.
    pub fn log_likelihood_with(&self, tf: &Transform, scan: &[Vec3]) -> f64 {
        let d_max = self.spec.d_max;
        let inv_s2 = 1.0 / (self.spec.sigma * self.spec.sigma);
        // consecutive scan points usually land in the same block
        let mut last: Option<(u64, Option<u32>)> = None;
        let mut sum = 0.0;
        for x in scan {
            let d = match self.cell(&tf.apply(x)) {
                None => d_max,
                Some(idx) => {
                    let (block, local) = split_index(idx);
                    let slot = match last {
                        Some((b, slot)) if b == block => slot,
                        _ => {
                            let slot = self.blocks.get(&block).copied();
                            last = Some((block, slot));
                            slot
                        }
                    };
                    match slot {
                        Some(s) => {
                            let v = self.values[s as usize * BLOCK_LEN + local];
                            if v.is_nan() {
                                d_max
                            } else {
                                v
                            }
                        }
                        None => d_max,
                    }
                }
            };
            sum += (d * d).min(d_max * d_max);
        }
        -sum * inv_s2
    }

    /// Lowest value the log-likelihood of an `n`-point scan can take.
    pub fn log_likelihood_floor(&self, n: usize) -> f64 {
        -(n as f64) * self.spec.d_max * self.spec.d_max / (self.spec.sigma * self.spec.sigma)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let s = &self.spec;
        w.write_all(MAGIC)?;
        for v in s.lb.iter().chain(s.ub.iter()).chain(s.delta.iter()).chain([s.d_max, s.sigma].iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        let entries = self.entries();
        w.write_all(&(entries.len() as u64).to_le_bytes())?;
        for (k, d) in entries {
            w.write_all(&k.to_le_bytes())?;
            w.write_all(&f32_below(d, s.d_max).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = ByteCursor { buf: &buf, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::format("byte 0", "bad magic, expected NNG1"));
        }
        let mut vals = [0f64; 11];
        for v in vals.iter_mut() {
            *v = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        }
        let spec = GridSpec {
            lb: Vec3::new(vals[0], vals[1], vals[2]),
            ub: Vec3::new(vals[3], vals[4], vals[5]),
            delta: Vec3::new(vals[6], vals[7], vals[8]),
            d_max: vals[9],
            sigma: vals[10],
        };
        spec.validate().map_err(|e| Error::format("byte 4", e.to_string()))?;
        let dims = spec.dims();
        let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let remaining = (buf.len() - cur.pos) as u64;
        if remaining != count.saturating_mul(12) {
            return Err(Error::format(
                format!("byte {}", cur.pos),
                format!("{count} entries need {} bytes, found {remaining}", count.saturating_mul(12)),
            ));
        }
        let mut cells = Vec::with_capacity(count as usize);
        let mut prev: Option<u64> = None;
        for _ in 0..count {
            let at = cur.pos;
            let key = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let d = f32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as f64;
            let idx = unpack_index(key);
            if pack_index(idx) != key || (0..3).any(|a| idx[a] >= dims[a]) {
                return Err(Error::format(format!("byte {at}"), format!("cell index {idx:?} outside grid")));
            }
            if prev.is_some_and(|p| p >= key) {
                return Err(Error::format(format!("byte {at}"), "entries not strictly sorted"));
            }
            if !(d >= 0.0 && d < spec.d_max) {
                return Err(Error::format(format!("byte {}", at + 8), format!("distance {d} outside [0, d_max)")));
            }
            prev = Some(key);
            cells.push((key, d));
        }
        Ok(DistanceGrid::from_entries(spec, cells))
    }
}

fn f32_below(d: f64, limit: f64) -> f32 {
    let mut v = d as f32;
    while v > 0.0 && v as f64 >= limit {
        v = f32::from_bits(v.to_bits() - 1);
    }
    v
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                format!("byte {}", self.pos),
                format!("truncated input, wanted {n} more bytes"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Computes the exact truncated distance at every grid node.
pub fn build_grid(map: &PointCloud, spec: &GridSpec) -> Result<DistanceGrid> {
    if map.is_empty() {
        return Err(Error::invalid("cannot build a distance grid from an empty map"));
    }
    spec.validate()?;
    let dims = spec.dims();
    if dims.iter().any(|d| *d >= AXIS_LIMIT) {
        return Err(Error::invalid(format!("grid {dims:?} exceeds 2^21 cells per axis")));
    }
    let tree = KdTree::build(&map.points);
    let d2max = spec.d_max * spec.d_max;
    let rows: Vec<(u64, u64)> = (0..dims[2]).flat_map(|z| (0..dims[1]).map(move |y| (z, y))).collect();
    let entries: Vec<(u64, f64)> = rows
        .par_iter()
        .flat_map_iter(|&(iz, iy)| {
            let tree = &tree;
            (0..dims[0]).filter_map(move |ix| {
                let idx = [ix, iy, iz];
                let (_, d2) = tree.nearest_within(&spec.node(idx), d2max)?;
                Some((pack_index(idx), d2.sqrt()))
            })
        })
        .filter(|(_, d)| *d < spec.d_max)
        .collect();
    Ok(DistanceGrid::from_entries(*spec, entries))
}

/// Log of the likelihood-field measurement model for `scan` seen from `pose`.
/// Always ≤ 0; never exponentiated here.
pub fn scan_log_likelihood(grid: &DistanceGrid, scan: &PointCloud, pose: &Pose) -> Result<f64> {
    if scan.is_empty() {
        return Err(Error::invalid("empty scan"));
    }
    Ok(grid.log_likelihood_with(&pose.to_transform(), &scan.points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: f64, delta: f64) -> GridSpec {
        GridSpec {
            lb: Vec3::zeros(),
            ub: Vec3::repeat(n),
            delta: Vec3::repeat(delta),
            d_max: 5.0,
            sigma: 0.5,
        }
    }

    fn brute(map: &[Vec3], q: &Vec3) -> f64 {
        map.iter().map(|m| (m - q).norm()).fold(f64::INFINITY, f64::min)
    }

    fn random_map(n: usize, extent: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(0.0..extent)))
            .collect()
    }

    #[test]
    fn single_point_field() {
        let s = spec(10.0, 1.0);
        let map = PointCloud::new(vec![Vec3::new(3.0, 4.0, 5.0)]);
        let g = build_grid(&map, &s).unwrap();
        assert_eq!(g.get([3, 4, 5]), Some(0.0));
        assert_eq!(g.get([4, 4, 5]), Some(1.0));
        assert_eq!(g.get([4, 5, 5]), Some(2f64.sqrt()));
        // (3,4,5) to (8,4,5) is exactly 5: not stored
        assert_eq!(g.get([8, 4, 5]), None);
        for (k, d) in g.entries() {
            let node = s.node(unpack_index(k));
            assert!((d - (node - map.points[0]).norm()).abs() < 1e-12);
            assert!(d < 5.0);
        }
    }

    #[test]
    fn distant_map_yields_empty_grid() {
        let map = PointCloud::new(vec![Vec3::new(100.0, 100.0, 100.0)]);
        assert!(build_grid(&map, &spec(10.0, 1.0)).unwrap().is_empty());
    }

    #[test]
    fn empty_map_and_bad_spec_rejected() {
        assert!(build_grid(&PointCloud::default(), &spec(10.0, 1.0)).is_err());
        let mut s = spec(10.0, 1.0);
        s.delta[1] = 0.0;
        assert!(build_grid(&PointCloud::new(vec![Vec3::zeros()]), &s).is_err());
        let mut s = spec(10.0, 1.0);
        s.ub[2] = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn stored_values_equal_brute_force() {
        let map = random_map(200, 10.0, 1);
        let s = spec(10.0, 0.5);
        let g = build_grid(&PointCloud::new(map.clone()), &s).unwrap();
        let dims = s.dims();
        assert_eq!(dims, [20, 20, 20]);
        let mut stored = 0;
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let exact = brute(&map, &s.node([ix, iy, iz]));
                    match g.get([ix, iy, iz]) {
                        Some(d) => {
                            stored += 1;
                            assert!((d - exact).abs() <= 1e-9);
                        }
                        None => assert!(exact >= s.d_max),
                    }
                }
            }
        }
        assert_eq!(stored, g.len());
    }

    #[test]
    fn lookup_outside_box_is_d_max() {
        let g = build_grid(&PointCloud::new(vec![Vec3::repeat(1.0)]), &spec(10.0, 1.0)).unwrap();
        assert_eq!(g.lookup(&Vec3::new(-0.1, 1.0, 1.0)), 5.0);
        assert_eq!(g.lookup(&Vec3::new(1.0, 10.5, 1.0)), 5.0);
        assert_eq!(g.lookup(&Vec3::repeat(1.0)), 0.0);
    }

    #[test]
    fn lookup_error_bounded_by_cell_diagonal() {
        let map = random_map(200, 10.0, 2);
        let s = spec(10.0, 0.5);
        let g = build_grid(&PointCloud::new(map.clone()), &s).unwrap();
        let diag = s.cell_diagonal();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let q = Vec3::from_fn(|_, _| rng.random_range(0.0..10.0));
            let l = g.lookup(&q);
            assert!((0.0..=s.d_max).contains(&l));
            let exact = brute(&map, &q);
            if exact < s.d_max - diag {
                assert!((l - exact).abs() <= diag);
            }
        }
    }

    #[test]
    fn covering_spec_contains_map() {
        let map = PointCloud::new(random_map(50, 7.3, 4));
        let s = GridSpec::covering(&map, Vec3::repeat(0.3), 5.0, 0.5).unwrap();
        for p in &map.points {
            assert!(s.cell_of(p).is_some());
        }
        // no slab of the box lies beyond the last cell
        let dims = s.dims();
        for a in 0..3 {
            let reach = s.lb[a] + dims[a] as f64 * s.delta[a];
            assert!((s.ub[a] - reach).abs() < 1e-9, "axis {a}: {} vs {reach}", s.ub[a]);
        }
        let corner = s.ub - Vec3::repeat(1e-7);
        assert!(s.cell_of(&corner).is_some());
    }

    #[test]
    fn saturated_likelihood() {
        let g = build_grid(&PointCloud::new(vec![Vec3::zeros()]), &spec(10.0, 1.0)).unwrap();
        let scan = PointCloud::new(vec![Vec3::new(9.0, 9.0, 9.0); 7]);
        let ll = scan_log_likelihood(&g, &scan, &Pose::default()).unwrap();
        assert_eq!(ll, -7.0 * 25.0 / 0.25);
        assert_eq!(ll, g.log_likelihood_floor(7));
    }

    #[test]
    fn exact_scan_has_zero_log_likelihood() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 4.0, 4.0)];
        let g = build_grid(&PointCloud::new(pts.clone()), &spec(10.0, 1.0)).unwrap();
        let scan = PointCloud::new(pts.iter().map(|p| p - Vec3::new(1.0, 1.0, 1.0)).collect());
        let pose = Pose::from_xyz_ypr(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(scan_log_likelihood(&g, &scan, &pose).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_likelihood() {
        // nodes on a 1 m lattice; queried points sit on nodes so lookup is exact
        let map = vec![
            Vec3::new(2.0, 2.0, 2.0),
            Vec3::new(6.0, 2.0, 2.0),
            Vec3::new(2.0, 7.0, 2.0),
            Vec3::new(8.0, 8.0, 8.0),
            Vec3::new(2.0, 2.0, 9.0),
        ];
        let g = build_grid(&PointCloud::new(map.clone()), &spec(10.0, 1.0)).unwrap();
        let scan = vec![Vec3::new(2.0, 3.0, 2.0), Vec3::new(4.0, 4.0, 2.0), Vec3::new(0.0, 9.0, 9.0)];
        // distances: 1, sqrt(8), min over map of (0,9,9)
        let d: Vec<f64> = scan.iter().map(|q| brute(&map, q)).collect();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 8f64.sqrt()).abs() < 1e-12);
        let oracle: f64 = -d.iter().map(|d| (d * d).min(25.0)).sum::<f64>() / 0.25;
        let ll = scan_log_likelihood(&g, &PointCloud::new(scan), &Pose::default()).unwrap();
        assert!((ll - oracle).abs() < 1e-9, "{ll} vs {oracle}");
    }

    #[test]
    fn empty_scan_rejected() {
        let g = build_grid(&PointCloud::new(vec![Vec3::zeros()]), &spec(10.0, 1.0)).unwrap();
        assert!(scan_log_likelihood(&g, &PointCloud::default(), &Pose::default()).is_err());
    }

    #[test]
    fn likelihood_monotone_in_single_distance() {
        let g = build_grid(&PointCloud::new(vec![Vec3::new(1.0, 5.0, 5.0)]), &spec(10.0, 0.25)).unwrap();
        let mut last = 0.0;
        for i in 0..40 {
            let x = 1.0 + 0.25 * i as f64;
            let scan = PointCloud::new(vec![Vec3::new(1.0, 5.0, 5.0), Vec3::new(x, 5.0, 5.0)]);
            let ll = scan_log_likelihood(&g, &scan, &Pose::default()).unwrap();
            assert!(ll <= last + 1e-12);
            last = ll;
        }
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let g = build_grid(&PointCloud::new(random_map(30, 10.0, 5)), &spec(10.0, 1.0)).unwrap();
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"NNG1");
        assert_eq!(bytes.len(), 4 + 88 + 8 + 12 * g.len());
        let back = DistanceGrid::read_from(&bytes[..]).unwrap();
        assert_eq!(back.spec(), g.spec());
        for ((k0, d0), (k1, d1)) in g.entries().iter().zip(back.entries()) {
            assert_eq!(*k0, k1);
            assert_eq!(*d0 as f32 as f64, d1);
        }
        for cut in [0, 3, 50, bytes.len() - 1] {
            assert!(matches!(DistanceGrid::read_from(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn f32_rounding_stays_below_d_max() {
        let v = f32_below(5.0 - 1e-12, 5.0);
        assert!((v as f64) < 5.0);
    }
}
