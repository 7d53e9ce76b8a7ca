//! Multi-resolution bird's-eye-view scan-to-map matcher.
//!
//! Level 0 of the pyramid counts map points per `base_res` cell. Each coarser
//! level is a stride-2 2×2 max-pool of the one below, so level-`l` cell `q`
//! covers level-0 cells `q·2ˡ .. (q+1)·2ˡ`. Level indices are derived from
//! level-0 indices by arithmetic shift, which keeps the parent/child relation
//! exact regardless of floating-point rounding.
//!
//! The search runs best-first over (angle, translation-window) nodes held in a
//! max-heap keyed by an admissible score bound. A node's bound is the sum, over
//! scan points, of the largest pyramid value among the cells the point can
//! reach from any translation in the window, so the first level-0 node popped
//! is a global maximum of the level-0 score.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::pointcloud::{BevCloud, Vec2};

const MAGIC: &[u8; 4] = b"PYR1";

pub const DEFAULT_MATCH_RES: f64 = 1.0;
pub const DEFAULT_D_THETA_DEG: f64 = 2.5;

/// What a level-0 cell stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellValue {
    /// Number of map points in the cell.
    #[default]
    Count,
    /// 1 if the cell holds at least one map point.
    Binary,
}

/// Row-major 2D grid of counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid2 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl Grid2 {
    fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    /// Value at a cell, 0 outside the grid.
    #[inline]
    pub fn get(&self, x: i64, y: i64) -> u32 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    pub fn max_value(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    fn pooled(&self) -> Grid2 {
        let (w, h) = (self.width.div_ceil(2), self.height.div_ceil(2));
        let mut out = Grid2::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (2 * x as i64, 2 * y as i64);
                out.data[y * w + x] = self
                    .get(cx, cy)
                    .max(self.get(cx + 1, cy))
                    .max(self.get(cx, cy + 1))
                    .max(self.get(cx + 1, cy + 1));
            }
        }
        out
    }
}

/// `levels[k]` at `(x, y)` holds the maximum of level-0 cells in
/// `[x, x + 2ᵏ) × [y, y + 2ᵏ)`, clipped to the grid.
#[derive(Debug, Clone)]
struct WindowMax {
    levels: Vec<Grid2>,
}

impl WindowMax {
    fn new(base: &Grid2) -> Self {
        let mut levels = vec![base.clone()];
        let span = base.width.max(base.height);
        while (1usize << (levels.len() - 1)) < span {
            let prev = levels.last().unwrap();
            let step = 1i64 << (levels.len() - 1);
            let mut next = Grid2::zeros(base.width, base.height);
            for y in 0..base.height as i64 {
                for x in 0..base.width as i64 {
                    next.data[y as usize * base.width + x as usize] = prev
                        .get(x, y)
                        .max(prev.get(x + step, y))
                        .max(prev.get(x, y + step))
                        .max(prev.get(x + step, y + step));
                }
            }
            levels.push(next);
        }
        Self { levels }
    }

    /// Upper bound on the level-0 maximum over the inclusive rectangle.
    #[inline]
    fn max_in(&self, x0: i64, x1: i64, y0: i64, y1: i64) -> u32 {
        let base = &self.levels[0];
        let (x0, x1) = (x0.max(0), x1.min(base.width as i64 - 1));
        let (y0, y1) = (y0.max(0), y1.min(base.height as i64 - 1));
        if x0 > x1 || y0 > y1 {
            return 0;
        }
        let span = ((x1 - x0).max(y1 - y0) + 1) as u64;
        let k = (span.next_power_of_two().trailing_zeros() as usize).min(self.levels.len() - 1);
        let g = &self.levels[k];
        g.data[y0 as usize * g.width + x0 as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchPyramid {
    pub origin: Vec2,
    pub base_res: Vec2,
    pub levels: Vec<Grid2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub t_lb: Vec2,
    pub t_ub: Vec2,
    pub theta_min: f64,
    pub theta_max: f64,
    pub d_theta: f64,
}

impl SearchWindow {
    /// Translations within `±half_extent` of `center`, all headings.
    pub fn around(center: Vec2, half_extent: Vec2, d_theta: f64) -> Self {
        Self {
            t_lb: center - half_extent,
            t_ub: center + half_extent,
            theta_min: -std::f64::consts::PI,
            theta_max: std::f64::consts::PI,
            d_theta,
        }
    }

    /// Number of candidate headings. A range spanning a full turn is half-open
    /// so the two ends are not both visited.
    pub fn angle_count(&self) -> usize {
        let span = self.theta_max - self.theta_min;
        if !(span >= 0.0) || !(self.d_theta > 0.0) {
            return 0;
        }
        let n = (span / self.d_theta + 1e-9).floor() as usize + 1;
        if (n - 1) as f64 * self.d_theta >= std::f64::consts::TAU - 1e-9 {
            n - 1
        } else {
            n
        }
    }

    pub fn angle(&self, r: usize) -> f64 {
        self.theta_min + r as f64 * self.d_theta
    }

    /// Level-0 translation lattice size `(nx, ny)` for cell size `res`.
    pub fn lattice(&self, res: &Vec2) -> (usize, usize) {
        let n = |a: usize| {
            let span = self.t_ub[a] - self.t_lb[a];
            if span >= 0.0 {
                (span / res[a] + 1e-9).floor() as usize + 1
            } else {
                0
            }
        };
        (n(0), n(1))
    }

    pub fn translation(&self, res: &Vec2, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.t_lb[0] + i as f64 * res[0], self.t_lb[1] + j as f64 * res[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub theta: f64,
    pub t: Vec2,
    pub score: u64,
    pub accepted: bool,
    pub theta_index: usize,
    pub offset: (usize, usize),
}

/// Search bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchStats {
    /// Nodes taken off the heap.
    pub expansions: usize,
    pub pushed: usize,
    pub lattice_size: usize,
}

pub fn build_pyramid(map: &BevCloud, d_m: &Vec2, mode: CellValue) -> Result<MatchPyramid> {
    if map.is_empty() {
        return Err(Error::invalid("cannot build a pyramid from an empty map"));
    }
    if !(d_m[0] > 0.0 && d_m[1] > 0.0 && d_m.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid(format!("match resolution must be positive, got {d_m:?}")));
    }
    let (mut lo, mut hi) = (map.points[0], map.points[0]);
    for p in &map.points {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("map has non-finite points"));
        }
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let w = ((hi[0] - lo[0]) / d_m[0]).floor() as usize + 1;
    let h = ((hi[1] - lo[1]) / d_m[1]).floor() as usize + 1;
    let mut base = Grid2::zeros(w, h);
    for p in &map.points {
        let (x, y) = (cell_index(p[0], lo[0], d_m[0]), cell_index(p[1], lo[1], d_m[1]));
        let v = &mut base.data[y as usize * w + x as usize];
        *v = match mode {
            CellValue::Count => *v + 1,
            CellValue::Binary => 1,
        };
    }
    let mut levels = vec![base];
    while levels.last().map(|g| g.width > 1 || g.height > 1).unwrap() {
        let next = levels.last().unwrap().pooled();
        levels.push(next);
    }
    Ok(MatchPyramid { origin: lo, base_res: *d_m, levels })
}

#[inline]
fn cell_index(v: f64, origin: f64, res: f64) -> i64 {
    ((v - origin) / res).floor() as i64
}

#[inline]
fn rotate(c: f64, s: f64, b: &Vec2) -> Vec2 {
    Vec2::new(c * b[0] - s * b[1], s * b[0] + c * b[1])
}

impl MatchPyramid {
    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Level-0 cell containing `p`.
    #[inline]
    pub fn cell0(&self, p: &Vec2) -> (i64, i64) {
        (
            cell_index(p[0], self.origin[0], self.base_res[0]),
            cell_index(p[1], self.origin[1], self.base_res[1]),
        )
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.origin[0], self.origin[1], self.base_res[0], self.base_res[1]] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.levels.len() as u64).to_le_bytes())?;
        for g in &self.levels {
            w.write_all(&(g.width as u64).to_le_bytes())?;
            w.write_all(&(g.height as u64).to_le_bytes())?;
            for v in &g.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<(usize, &[u8])> {
            if pos + n > buf.len() {
                return Err(Error::format(format!("byte {pos}"), format!("truncated input, wanted {n} more bytes")));
            }
            let at = pos;
            pos += n;
            Ok((at, &buf[at..at + n]))
        };
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        if take(4)?.1 != MAGIC {
            return Err(Error::format("byte 0", "bad magic, expected PYR1"));
        }
        let mut head = [0f64; 4];
        for v in head.iter_mut() {
            *v = f64_at(take(8)?.1);
        }
        let origin = Vec2::new(head[0], head[1]);
        let base_res = Vec2::new(head[2], head[3]);
        if !(base_res[0] > 0.0 && base_res[1] > 0.0) || !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::format("byte 4", "invalid origin or resolution"));
        }
        let (at, b) = take(8)?;
        let count = u64_at(b);
        if count == 0 || count > 64 {
            return Err(Error::format(format!("byte {at}"), format!("implausible level count {count}")));
        }
        let mut levels: Vec<Grid2> = Vec::with_capacity(count as usize);
        for l in 0..count as usize {
            let (at, b) = take(8)?;
            let width = u64_at(b) as usize;
            let height = u64_at(take(8)?.1) as usize;
            let expected = levels.last().map(|g| (g.width.div_ceil(2), g.height.div_ceil(2)));
            if width == 0 || height == 0 || expected.is_some_and(|e| e != (width, height)) {
                return Err(Error::format(format!("byte {at}"), format!("level {l} has bad dims {width}x{height}")));
            }
            let (_, raw) = take(width.checked_mul(height).and_then(|n| n.checked_mul(4)).ok_or_else(|| {
                Error::format(format!("byte {at}"), "level size overflows")
            })?)?;
            let data = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
            levels.push(Grid2 { width, height, data });
        }
        let last = levels.last().unwrap();
        if last.width != 1 || last.height != 1 {
            return Err(Error::format(format!("byte {pos}"), "top level must be a single cell"));
        }
        if pos != buf.len() {
            return Err(Error::format(format!("byte {pos}"), "trailing bytes after last level"));
        }
        Ok(MatchPyramid { origin, base_res, levels })
    }
}

/// Σ over scan points of the level value under `R_z(θ)·b + t`; points off the
/// grid add nothing.
pub fn score_at(pyr: &MatchPyramid, level: usize, scan: &BevCloud, theta: f64, t: &Vec2) -> Result<u64> {
    let grid = pyr
        .levels
        .get(level)
        .ok_or_else(|| Error::invalid(format!("level {level} not in pyramid of {}", pyr.levels.len())))?;
    let (s, c) = theta.sin_cos();
    Ok(scan
        .points
        .iter()
        .map(|b| {
            let (x, y) = pyr.cell0(&(rotate(c, s, b) + t));
            grid.get(x >> level, y >> level) as u64
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    bound: u64,
    r: u32,
    i0: u32,
    j0: u32,
    w: u32,
    h: u32,
    level: u8,
}

impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        // max-heap: larger bound first, then smaller (θ, tx, ty) key, then finer level
        self.bound
            .cmp(&o.bound)
            .then_with(|| (o.r, o.i0, o.j0, o.level).cmp(&(self.r, self.i0, self.j0, self.level)))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn level_for(extent: u32) -> u8 {
    (extent.max(1).next_power_of_two().trailing_zeros()) as u8
}

/// Level-0 cell bracket of one rotated scan point at the window's first
/// lattice translation. The cell at lattice offset `i` lies in
/// `[lo + i, hi + i]`; `hi − lo` is nonzero only when the point sits within
/// rounding distance of a cell boundary.
#[derive(Debug, Clone, Copy)]
struct CellBracket {
    x_lo: i64,
    x_hi: i64,
    y_lo: i64,
    y_hi: i64,
}

/// Slack, in cells, covering the rounding difference between `(b + t_i − o)/d`
/// and `(b + t_0 − o)/d + i`.
const BOUNDARY_SLACK: f64 = 1e-7;

fn bracket(v: f64, origin: f64, t0: f64, res: f64) -> (i64, i64) {
    let u = (v + t0 - origin) / res;
    let f = u.floor();
    let frac = u - f;
    let lo = if frac < BOUNDARY_SLACK { f as i64 - 1 } else { f as i64 };
    let hi = if frac > 1.0 - BOUNDARY_SLACK { f as i64 + 1 } else { f as i64 };
    (lo, hi)
}

struct Search<'a> {
    pyr: &'a MatchPyramid,
    win: &'a SearchWindow,
    window_max: WindowMax,
    rotated: Vec<Vec<Vec2>>,
    brackets: Vec<Vec<CellBracket>>,
}

impl Search<'_> {
    fn bound(&self, r: u32, i0: u32, j0: u32, w: u32, h: u32) -> u64 {
        let (i0, j0) = (i0 as i64, j0 as i64);
        let (i1, j1) = (i0 + w as i64 - 1, j0 + h as i64 - 1);
        self.brackets[r as usize]
            .iter()
            .map(|c| self.window_max.max_in(c.x_lo + i0, c.x_hi + i1, c.y_lo + j0, c.y_hi + j1) as u64)
            .sum()
    }

    fn exact(&self, r: u32, i: u32, j: u32) -> u64 {
        let t = self.win.translation(&self.pyr.base_res, i as usize, j as usize);
        let grid = &self.pyr.levels[0];
        self.rotated[r as usize]
            .iter()
            .map(|b| {
                let (x, y) = self.pyr.cell0(&(b + t));
                grid.get(x, y) as u64
            })
            .sum()
    }

    fn node(&self, r: u32, i0: u32, j0: u32, w: u32, h: u32) -> Node {
        let level = level_for(w.max(h));
        let bound = if level == 0 { self.exact(r, i0, j0) } else { self.bound(r, i0, j0, w, h) };
        Node { bound, r, i0, j0, w, h, level }
    }
}

/// Exact maximizer of the level-0 score over the window's angle set and
/// translation lattice. Ties resolve to the lowest angle index, then the
/// lexicographically smallest translation.
pub fn branch_and_bound_match(pyr: &MatchPyramid, scan: &BevCloud, win: &SearchWindow) -> Result<MatchResult> {
    branch_and_bound_match_with_stats(pyr, scan, win).map(|(m, _)| m)
}

pub fn branch_and_bound_match_with_stats(
    pyr: &MatchPyramid,
    scan: &BevCloud,
    win: &SearchWindow,
) -> Result<(MatchResult, MatchStats)> {
    if scan.is_empty() {
        return Err(Error::invalid("empty scan"));
    }
    let n_theta = win.angle_count();
    let (nx, ny) = win.lattice(&pyr.base_res);
    if n_theta == 0 || nx == 0 || ny == 0 {
        return Err(Error::invalid(format!(
            "empty search lattice: {n_theta} angles, {nx}x{ny} translations"
        )));
    }
    if nx > u32::MAX as usize / 2 || ny > u32::MAX as usize / 2 {
        return Err(Error::invalid("translation lattice too large"));
    }
    let rotated: Vec<Vec<Vec2>> = (0..n_theta)
        .map(|r| {
            let (s, c) = win.angle(r).sin_cos();
            scan.points.iter().map(|b| rotate(c, s, b)).collect()
        })
        .collect();
    let (o, d) = (pyr.origin, pyr.base_res);
    let brackets = rotated
        .iter()
        .map(|pts| {
            pts.iter()
                .map(|b| {
                    let (x_lo, x_hi) = bracket(b[0], o[0], win.t_lb[0], d[0]);
                    let (y_lo, y_hi) = bracket(b[1], o[1], win.t_lb[1], d[1]);
                    CellBracket { x_lo, x_hi, y_lo, y_hi }
                })
                .collect()
        })
        .collect();
    let search = Search { pyr, win, window_max: WindowMax::new(&pyr.levels[0]), rotated, brackets };
    let mut stats = MatchStats { lattice_size: n_theta * nx * ny, ..Default::default() };
    let mut heap = BinaryHeap::with_capacity(n_theta * 4);
    for r in 0..n_theta as u32 {
        heap.push(search.node(r, 0, 0, nx as u32, ny as u32));
        stats.pushed += 1;
    }
    while let Some(node) = heap.pop() {
        stats.expansions += 1;
        if node.level == 0 {
            let t = win.translation(&pyr.base_res, node.i0 as usize, node.j0 as usize);
            let result = MatchResult {
                theta: win.angle(node.r as usize),
                t,
                score: node.bound,
                accepted: false,
                theta_index: node.r as usize,
                offset: (node.i0 as usize, node.j0 as usize),
            };
            return Ok((result, stats));
        }
        let half = 1u32 << (node.level - 1);
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (di, dj) = (a * half, b * half);
            if di >= node.w || dj >= node.h {
                continue;
            }
            let child = search.node(node.r, node.i0 + di, node.j0 + dj, (node.w - di).min(half), (node.h - dj).min(half));
            heap.push(child);
            stats.pushed += 1;
        }
    }
    unreachable!("heap cannot empty before a level-0 node is popped")
}
