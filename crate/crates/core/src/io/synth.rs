//! Desk-scale synthetic city: flat ground, box buildings, a ray-cast
//! multi-channel LIDAR and a road-following trajectory.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_to_transform, Pose, Vec3};
use crate::pointcloud::PointCloud;

/// Axis-aligned building footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Building {
    fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub max_range: f64,
    pub channels: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    /// Standard deviation of additive range noise, metres.
    #[serde(default)]
    pub range_noise: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            max_range: 80.0,
            channels: 16,
            elevation_min_deg: -15.0,
            elevation_max_deg: 15.0,
            azimuth_step_deg: 1.0,
            range_noise: 0.0,
        }
    }
}

impl SensorModel {
    /// Unit ray directions in the sensor frame, channel-major.
    pub fn directions(&self) -> Vec<Vec3> {
        let n_az = (360.0 / self.azimuth_step_deg).round() as usize;
        let mut out = Vec::with_capacity(self.channels * n_az);
        for c in 0..self.channels {
            let e = if self.channels == 1 {
                self.elevation_min_deg
            } else {
                self.elevation_min_deg
                    + (self.elevation_max_deg - self.elevation_min_deg) * c as f64 / (self.channels - 1) as f64
            }
            .to_radians();
            for a in 0..n_az {
                let az = (a as f64 * self.azimuth_step_deg).to_radians();
                out.push(Vec3::new(e.cos() * az.cos(), e.cos() * az.sin(), e.sin()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    /// Ground covers `[0, extent[0]] × [0, extent[1]]` at z = 0.
    pub extent: [f64; 2],
    pub wall_height: f64,
    pub buildings: Vec<Building>,
    /// Surface sampling density of the reference cloud, points per m².
    pub density: f64,
    pub sensor: SensorModel,
    /// Sensor poses, one per scan.
    pub trajectory: Vec<Pose>,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedWorld {
    /// Densely sampled reference surfaces in the world frame.
    pub map: PointCloud,
    /// Scans in the sensor frame.
    pub scans: Vec<PointCloud>,
    pub truth: Vec<Pose>,
}

/// Parameters of [`SyntheticWorld::city`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CityLayout {
    pub extent: f64,
    pub block_pitch: f64,
    pub road_width: f64,
    pub wall_height: f64,
    pub sensor_height: f64,
    pub speed: f64,
    pub turn_radius: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for CityLayout {
    fn default() -> Self {
        Self {
            extent: 200.0,
            block_pitch: 40.0,
            road_width: 12.0,
            wall_height: 8.0,
            sensor_height: 1.8,
            speed: 10.0,
            turn_radius: 8.0,
            steps: 60,
            dt: 0.1,
        }
    }
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<()> {
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return Err(Error::invalid("world extent must be positive"));
        }
        if !(self.density > 0.0) || !(self.wall_height > 0.0) || !(self.dt > 0.0) {
            return Err(Error::invalid("density, wall height and dt must be positive"));
        }
        let s = &self.sensor;
        if s.channels == 0 || !(s.azimuth_step_deg > 0.0) || !(s.max_range > 0.0) || !(s.range_noise >= 0.0) {
            return Err(Error::invalid("invalid sensor model"));
        }
        for (k, b) in self.buildings.iter().enumerate() {
            if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
                return Err(Error::invalid(format!("building {k} has an empty footprint")));
            }
        }
        for (k, p) in self.trajectory.iter().enumerate() {
            let (x, y) = (p.p[0], p.p[1]);
            if !(x >= 0.0 && y >= 0.0 && x <= self.extent[0] && y <= self.extent[1]) {
                return Err(Error::invalid(format!("trajectory pose {k} at ({x}, {y}) is outside the ground")));
            }
            if self.buildings.iter().any(|b| b.contains_xy(x, y) && p.p[2] <= self.wall_height) {
                return Err(Error::invalid(format!("trajectory pose {k} is inside a building")));
            }
        }
        Ok(())
    }

    /// Grid of roads with randomly sized buildings in each block, and a
    /// trajectory that follows the roads with rounded corners.
    pub fn city(layout: &CityLayout, seed: u64) -> Result<Self> {
        let l = layout;
        if !(l.block_pitch > l.road_width && l.turn_radius > 0.0 && l.turn_radius < l.block_pitch / 2.0) {
            return Err(Error::invalid("blocks must be wider than roads and turns tighter than half a block"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let roads: Vec<f64> = (0..)
            .map(|k| l.block_pitch / 2.0 + k as f64 * l.block_pitch)
            .take_while(|c| *c < l.extent)
            .collect();
        if roads.len() < 2 {
            return Err(Error::invalid("extent too small for two roads"));
        }
        // gaps between road edges along one axis
        let mut gaps = Vec::new();
        let mut start = 0.0;
        for c in &roads {
            gaps.push((start, c - l.road_width / 2.0));
            start = c + l.road_width / 2.0;
        }
        gaps.push((start, l.extent));
        let gaps: Vec<(f64, f64)> = gaps.into_iter().filter(|(a, b)| b - a > 4.0).collect();
        let mut buildings = Vec::new();
        for &(x0, x1) in &gaps {
            for &(y0, y1) in &gaps {
                place_block(&mut rng, [x0 + 1.0, y0 + 1.0], [x1 - 1.0, y1 - 1.0], &mut buildings);
            }
        }
        let path = road_path(&mut rng, &roads, l)?;
        let trajectory = (0..l.steps)
            .map(|k| {
                let (x, y, yaw) = path.at(k as f64 * l.speed * l.dt);
                Pose::from_xyz_ypr(x, y, l.sensor_height, yaw, 0.0, 0.0)
            })
            .collect();
        let world = Self {
            extent: [l.extent, l.extent],
            wall_height: l.wall_height,
            buildings,
            density: 16.0,
            sensor: SensorModel::default(),
            trajectory,
            dt: l.dt,
        };
        world.validate()?;
        Ok(world)
    }

    /// Distance along the unit ray `dir` from `origin` to the first surface,
    /// if within sensor range.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut best = self.sensor.max_range;
        let mut hit = false;
        if dir[2] < 0.0 {
            let t = -origin[2] / dir[2];
            let (x, y) = (origin[0] + t * dir[0], origin[1] + t * dir[1]);
            if t > 0.0 && t <= best && x >= 0.0 && y >= 0.0 && x <= self.extent[0] && y <= self.extent[1] {
                best = t;
                hit = true;
            }
        }
        for b in &self.buildings {
            let lo = Vec3::new(b.min[0], b.min[1], 0.0);
            let hi = Vec3::new(b.max[0], b.max[1], self.wall_height);
            if let Some(t) = ray_box(origin, dir, &lo, &hi) {
                if t <= best {
                    best = t;
                    hit = true;
                }
            }
        }
        hit.then_some(best)
    }

    /// Ray-cast scan from `pose`, in the sensor frame.
    pub fn scan_from(&self, pose: &Pose, rng: &mut impl Rng) -> PointCloud {
        let tf = pose_to_transform(pose);
        let noise = Normal::new(0.0, self.sensor.range_noise.max(0.0)).unwrap();
        let mut points = Vec::new();
        for d in self.sensor.directions() {
            let wd = tf.rot * d;
            if let Some(t) = self.cast(&tf.t, &wd) {
                let r = if self.sensor.range_noise > 0.0 { t + noise.sample(rng) } else { t };
                points.push(d * r);
            }
        }
        PointCloud::new(points)
    }

    /// Stratified samples of the ground, walls and roofs: one jittered point
    /// per cell of a `1/√density` lattice on each face.
    pub fn reference_cloud(&self, rng: &mut impl Rng) -> PointCloud {
        let step = 1.0 / self.density.sqrt();
        let mut pts = Vec::new();
        let h = self.wall_height;
        let mut face = |origin: Vec3, u: Vec3, v: Vec3, lu: f64, lv: f64, pts: &mut Vec<Vec3>| {
            let (nu, nv) = ((lu / step).ceil() as usize, (lv / step).ceil() as usize);
            let (su, sv) = (lu / nu as f64, lv / nv as f64);
            for i in 0..nu {
                for j in 0..nv {
                    let a = (i as f64 + rng.random::<f64>()) * su;
                    let b = (j as f64 + rng.random::<f64>()) * sv;
                    pts.push(origin + u * a + v * b);
                }
            }
        };
        let (ex, ey) = (self.extent[0], self.extent[1]);
        face(Vec3::zeros(), Vec3::x(), Vec3::y(), ex, ey, &mut pts);
        for b in &self.buildings {
            let (w, d) = (b.max[0] - b.min[0], b.max[1] - b.min[1]);
            let (x0, y0, x1, y1) = (b.min[0], b.min[1], b.max[0], b.max[1]);
            face(Vec3::new(x0, y0, 0.0), Vec3::x(), Vec3::z(), w, h, &mut pts);
            face(Vec3::new(x0, y1, 0.0), Vec3::x(), Vec3::z(), w, h, &mut pts);
            face(Vec3::new(x0, y0, 0.0), Vec3::y(), Vec3::z(), d, h, &mut pts);
            face(Vec3::new(x1, y0, 0.0), Vec3::y(), Vec3::z(), d, h, &mut pts);
            face(Vec3::new(x0, y0, h), Vec3::x(), Vec3::y(), w, d, &mut pts);
        }
        // ground under buildings is not a visible surface
        pts.retain(|p| p[2] > 0.0 || !self.buildings.iter().any(|b| strictly_inside(b, p[0], p[1])));
        PointCloud::new(pts)
    }

    /// Distance from `p` to the nearest modelled surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let clamp2 = |v: f64, a: f64, b: f64| v.clamp(a, b);
        let ground = Vec3::new(clamp2(p[0], 0.0, self.extent[0]), clamp2(p[1], 0.0, self.extent[1]), 0.0);
        best = best.min((p - ground).norm());
        for b in &self.buildings {
            let lo = Vec3::new(b.min[0], b.min[1], 0.0);
            let hi = Vec3::new(b.max[0], b.max[1], self.wall_height);
            best = best.min(box_surface_distance(p, &lo, &hi));
        }
        best
    }
}

fn strictly_inside(b: &Building, x: f64, y: f64) -> bool {
    x > b.min[0] && x < b.max[0] && y > b.min[1] && y < b.max[1]
}

fn box_surface_distance(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let inside = (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a]);
    if inside {
        (0..3).map(|a| (p[a] - lo[a]).min(hi[a] - p[a])).fold(f64::INFINITY, f64::min)
    } else {
        let q = Vec3::from_fn(|a, _| p[a].clamp(lo[a], hi[a]));
        (p - q).norm()
    }
}

/// Entry distance of a ray into a box, if it starts outside and hits it.
fn ray_box(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 0.0).then_some(t0)
}

/// Splits a block into one to three buildings of random size.
fn place_block(rng: &mut impl Rng, lo: [f64; 2], hi: [f64; 2], out: &mut Vec<Building>) {
    let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
    if w < 3.0 || h < 3.0 {
        return;
    }
    match rng.random_range(0..3) {
        0 => {
            let fx = rng.random_range(0.5..1.0);
            let fy = rng.random_range(0.5..1.0);
            let x0 = lo[0] + rng.random_range(0.0..=(1.0 - fx)) * w;
            let y0 = lo[1] + rng.random_range(0.0..=(1.0 - fy)) * h;
            out.push(Building { min: [x0, y0], max: [x0 + fx * w, y0 + fy * h] });
        }
        k => {
            // split along x (k == 1) or y, with a gap between the halves
            let axis = (k - 1) as usize;
            let len = [w, h][axis];
            let cut = rng.random_range(0.3..0.7) * len;
            let gap = 2.0f64.min(len * 0.1);
            let mut a = (lo, hi);
            let mut b = (lo, hi);
            a.1[axis] = lo[axis] + cut - gap / 2.0;
            b.0[axis] = lo[axis] + cut + gap / 2.0;
            for (l, h) in [a, b] {
                let other = 1 - axis;
                let span = h[other] - l[other];
                let f = rng.random_range(0.4..1.0);
                let off = rng.random_range(0.0..=(1.0 - f)) * span;
                let mut bl = l;
                let mut bh = h;
                bl[other] = l[other] + off;
                bh[other] = bl[other] + f * span;
                if bh[0] - bl[0] > 1.0 && bh[1] - bl[1] > 1.0 {
                    out.push(Building { min: bl, max: bh });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line { a: [f64; 2], b: [f64; 2] },
    Arc { center: [f64; 2], radius: f64, start: f64, sweep: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { a, b } => (b[0] - a[0]).hypot(b[1] - a[1]),
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            Segment::Line { a, b } => {
                let len = self.length();
                let f = if len > 0.0 { s / len } else { 0.0 };
                (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), (b[1] - a[1]).atan2(b[0] - a[0]))
            }
            Segment::Arc { center, radius, start, sweep } => {
                let ang = start + sweep.signum() * s / radius;
                let yaw = ang + sweep.signum() * FRAC_PI_2;
                (center[0] + radius * ang.cos(), center[1] + radius * ang.sin(), crate::geometry::wrap_angle(yaw))
            }
        }
    }
}

struct Path {
    segments: Vec<Segment>,
}

impl Path {
    fn at(&self, mut s: f64) -> (f64, f64, f64) {
        for seg in &self.segments {
            let len = seg.length();
            if s <= len {
                return seg.at(s);
            }
            s -= len;
        }
        let last = self.segments.last().unwrap();
        last.at(last.length())
    }
}

fn road_path(rng: &mut impl Rng, roads: &[f64], l: &CityLayout) -> Result<Path> {
    let n = roads.len() as i64;
    let dirs = [(1i64, 0i64), (0, 1), (-1, 0), (0, -1)];
    let mut node = (rng.random_range(0..n), rng.random_range(0..n));
    let mut dir = rng.random_range(0..4usize);
    let valid = |node: (i64, i64), d: usize| {
        let (x, y) = (node.0 + dirs[d].0, node.1 + dirs[d].1);
        x >= 0 && y >= 0 && x < n && y < n
    };
    while !valid(node, dir) {
        dir = (dir + 1) % 4;
    }
    let total = l.steps as f64 * l.speed * l.dt + 1.0;
    let r = l.turn_radius;
    let pos = |node: (i64, i64)| [roads[node.0 as usize], roads[node.1 as usize]];
    let mut cur = pos(node);
    let mut segments = Vec::new();
    let mut length = 0.0;
    while length < total {
        let next = (node.0 + dirs[dir].0, node.1 + dirs[dir].1);
        let p = pos(next);
        // prefer going straight; turn when forced or with some probability
        let mut options: Vec<usize> = [dir, (dir + 1) % 4, (dir + 3) % 4].into_iter().filter(|&d| valid(next, d)).collect();
        if options.is_empty() {
            options.push((dir + 2) % 4);
        }
        let straight_ok = options[0] == dir;
        let new_dir = if straight_ok && rng.random::<f64>() < 0.6 { dir } else { options[rng.random_range(0..options.len())] };
        let (dx, dy) = (dirs[dir].0 as f64, dirs[dir].1 as f64);
        if new_dir == dir {
            segments.push(Segment::Line { a: cur, b: p });
            cur = p;
        } else if new_dir == (dir + 2) % 4 {
            return Err(Error::invalid("road network has a dead end"));
        } else {
            let end = [p[0] - dx * r, p[1] - dy * r];
            segments.push(Segment::Line { a: cur, b: end });
            let (nx, ny) = (dirs[new_dir].0 as f64, dirs[new_dir].1 as f64);
            let center = [end[0] + nx * r, end[1] + ny * r];
            let left = new_dir == (dir + 1) % 4;
            let start = (end[1] - center[1]).atan2(end[0] - center[0]);
            segments.push(Segment::Arc { center, radius: r, start, sweep: if left { FRAC_PI_2 } else { -FRAC_PI_2 } });
            cur = [p[0] + nx * r, p[1] + ny * r];
        }
        length = segments.iter().map(Segment::length).sum();
        node = next;
        dir = new_dir;
    }
    Ok(Path { segments })
}

/// Reference cloud, per-pose ray-cast scans and the truth poses.
pub fn generate_world(world: &SyntheticWorld, seed: u64) -> Result<GeneratedWorld> {
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = world.reference_cloud(&mut rng);
    let scans = world.trajectory.iter().map(|p| world.scan_from(p, &mut rng)).collect();
    Ok(GeneratedWorld { map, scans, truth: world.trajectory.clone() })
}
