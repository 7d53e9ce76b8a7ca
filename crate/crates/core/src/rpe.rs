//! Scan-to-scan relative pose estimation with plane-to-plane GICP, pose
//! chaining and finite-difference rate estimates.

use std::collections::VecDeque;

use nalgebra::{Matrix6, Rotation3, SymmetricEigen, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, transform_to_pose, wrap_angle, Mat3, Transform, Vec3};
use crate::kdtree::KdTree;
use crate::pointcloud::{local_frames, voxel_downsample, PointCloud};

pub const MIN_POINTS: usize = 20;
pub const DEFAULT_LOG_CAPACITY: usize = 256;

/// Weakest H eigenvalue relative to the strongest below which a direction
/// is considered unconstrained.
const CONDITION_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GicpConfig {
    /// Voxel size applied to both clouds before alignment; 0 disables it.
    pub voxel: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub trim_fraction: f64,
    pub epsilon: f64,
    /// Neighbourhood size for the per-point covariances.
    pub k: usize,
    pub max_corr_dist: f64,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self { voxel: 0.5, tol: 1e-4, max_iter: 50, trim_fraction: 0.2, epsilon: 1e-3, k: 10, max_corr_dist: 3.0 }
    }
}

impl GicpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.voxel >= 0.0
            && self.voxel.is_finite()
            && self.tol > 0.0
            && self.max_iter > 0
            && (0.0..1.0).contains(&self.trim_fraction)
            && self.epsilon > 0.0
            && self.epsilon < 1.0
            && self.k >= 3
            && self.max_corr_dist > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid GICP configuration {self:?}")))
        }
    }
}

/// Rigid motion taking frame-k coordinates into frame k−1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub t: Transform,
    pub converged: bool,
    /// Euclidean RMS of the retained correspondences at `t`, in metres.
    pub rmse: f64,
    pub iterations: usize,
}

impl RelativePose {
    pub fn exact(t: Transform) -> Self {
        Self { t, converged: true, rmse: 0.0, iterations: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateEstimate {
    pub v: f64,
    pub zeta_dot: Vec3,
}

/// A cloud with its search tree and regularized plane covariances, reusable
/// as either side of an alignment.
#[derive(Debug, Clone)]
pub struct GicpCloud {
    tree: KdTree,
    covs: Vec<Mat3>,
}

impl GicpCloud {
    pub fn new(cloud: &PointCloud, cfg: &GicpConfig) -> Result<Self> {
        cfg.validate()?;
        let pts = if cfg.voxel > 0.0 {
            voxel_downsample(cloud, &Vec3::repeat(cfg.voxel), 0)?.points
        } else {
            cloud.points.clone()
        };
        if pts.len() < MIN_POINTS {
            return Err(Error::invalid(format!(
                "GICP needs at least {MIN_POINTS} points after downsampling, got {}",
                pts.len()
            )));
        }
        let tree = KdTree::build(&pts);
        let k = cfg.k.min(pts.len());
        let reg = Mat3::from_diagonal(&Vec3::new(cfg.epsilon, 1.0, 1.0));
        let covs = local_frames(&pts, &tree, k)
            .into_iter()
            .map(|f| f.vectors * reg * f.vectors.transpose())
            .collect();
        Ok(Self { tree, covs })
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

struct Residual {
    d: Vec3,
    q: Vec3,
    m: Mat3,
    cost: f64,
}

fn residuals(src: &GicpCloud, dst: &GicpCloud, t: &Transform, cfg: &GicpConfig) -> Vec<Residual> {
    let max2 = cfg.max_corr_dist * cfg.max_corr_dist;
    let mut res: Vec<Residual> = src
        .points()
        .par_iter()
        .zip(src.covs.par_iter())
        .filter_map(|(a, ca)| {
            let q = t.apply(a);
            let (j, _) = dst.tree.nearest_within(&q, max2)?;
            let d = dst.points()[j] - q;
            let m = (dst.covs[j] + t.rot * ca * t.rot.transpose()).try_inverse()?;
            let cost = d.dot(&(m * d));
            Some(Residual { d, q, m, cost })
        })
        .collect();
    let keep = res.len() - (res.len() as f64 * cfg.trim_fraction).floor() as usize;
    if keep < res.len() {
        res.select_nth_unstable_by(keep, |a, b| a.cost.total_cmp(&b.cost));
        res.truncate(keep);
    }
    res
}

fn mean_cost(res: &[Residual]) -> f64 {
    if res.is_empty() {
        f64::INFINITY
    } else {
        res.iter().map(|r| r.cost).sum::<f64>() / res.len() as f64
    }
}

fn euclidean_rmse(res: &[Residual]) -> f64 {
    if res.is_empty() {
        return f64::INFINITY;
    }
    (res.iter().map(|r| r.d.norm_squared()).sum::<f64>() / res.len() as f64).sqrt()
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Left-multiplies `t` by the rigid motion with rotation vector `delta[0..3]`
/// and translation `delta[3..6]`.
fn perturb(t: &Transform, delta: &Vector6<f64>) -> Transform {
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    let step = Transform::new(Rotation3::new(w).into_inner(), Vec3::new(delta[3], delta[4], delta[5]));
    compose(&step, t)
}

/// Per-iteration record of an alignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GicpTrace {
    /// Mean trimmed Mahalanobis residual after each accepted iteration.
    pub cost: Vec<f64>,
    pub rmse: Vec<f64>,
}

/// Aligns `source` onto `target`: the returned transform maps source
/// coordinates into the target frame.
pub fn gicp_align(source: &PointCloud, target: &PointCloud, init: &Transform, cfg: &GicpConfig) -> Result<RelativePose> {
    let src = GicpCloud::new(source, cfg)?;
    let dst = GicpCloud::new(target, cfg)?;
    Ok(align_prepared(&src, &dst, init, cfg).0)
}

/// Aligns `src` onto `dst` starting from `init`. With trimming enabled the
/// untrimmed problem is solved first: from a distant start the residuals that
/// would be trimmed are often the only ones constraining some direction.
/// The trace covers the final, trimmed phase.
pub fn align_prepared(src: &GicpCloud, dst: &GicpCloud, init: &Transform, cfg: &GicpConfig) -> (RelativePose, GicpTrace) {
    if cfg.trim_fraction <= 0.0 {
        return descend(src, dst, init, cfg);
    }
    let (warm, _) = descend(src, dst, init, &GicpConfig { trim_fraction: 0.0, ..*cfg });
    let start = if warm.converged { warm.t } else { *init };
    let (mut rel, trace) = descend(src, dst, &start, cfg);
    rel.iterations += warm.iterations;
    (rel, trace)
}

fn descend(src: &GicpCloud, dst: &GicpCloud, init: &Transform, cfg: &GicpConfig) -> (RelativePose, GicpTrace) {
    let mut t = *init;
    let mut res = residuals(src, dst, &t, cfg);
    let mut cost = mean_cost(&res);
    let mut trace = GicpTrace::default();
    let mut converged = false;
    let mut well_posed = true;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        if res.len() < 6 {
            well_posed = false;
            break;
        }
        let (h, g) = res
            .iter()
            .map(|r| {
                let mut j = nalgebra::Matrix3x6::<f64>::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&r.q));
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Mat3::identity()));
                let jtm = j.transpose() * r.m;
                (jtm * j, jtm * r.d)
            })
            .fold((Matrix6::zeros(), Vector6::zeros()), |(h, g), (dh, dg)| (h + dh, g + dg));
        let eig = SymmetricEigen::new(h).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo < CONDITION_FLOOR * hi {
            well_posed = false;
            break;
        }
        let Some(step) = h.cholesky().map(|c| -c.solve(&g)) else {
            well_posed = false;
            break;
        };
        // halve the step until the objective stops getting worse
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let cand = perturb(&t, &(step * scale));
            let cand_res = residuals(src, dst, &cand, cfg);
            let cand_cost = mean_cost(&cand_res);
            if cand_cost <= cost {
                accepted = Some((cand, cand_res, cand_cost));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cand_res, cand_cost)) = accepted else {
            converged = (step * scale).norm() < cfg.tol * 16.0;
            break;
        };
        t = cand;
        res = cand_res;
        cost = cand_cost;
        trace.cost.push(cost);
        trace.rmse.push(euclidean_rmse(&res));
        if step.norm() * scale < cfg.tol {
            converged = true;
            break;
        }
    }
    let rel = RelativePose { t, converged: converged && well_posed, rmse: euclidean_rmse(&res), iterations };
    (rel, trace)
}

/// `prev ∘ rel`: the frame-k pose given the frame-(k−1) pose.
pub fn chain(prev: &Transform, rel: &RelativePose) -> Transform {
    compose(prev, &rel.t)
}

/// Backward-difference speed and wrapped Euler-angle rates.
pub fn rates_from_poses(h_k: &Transform, h_km1: &Transform, dt: f64) -> Result<RateEstimate> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let (a, b) = (transform_to_pose(h_k).pose, transform_to_pose(h_km1).pose);
    let dz = (a.zeta - b.zeta).map(wrap_angle);
    Ok(RateEstimate { v: (a.p - b.p).norm() / dt, zeta_dot: dz / dt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeRecord {
    pub step: u64,
    pub rel: RelativePose,
    pub rates: RateEstimate,
}

/// Bounded append-only log of per-step relatives. The record for step k holds
/// the motion from step k−1 to k.
#[derive(Debug, Clone)]
pub struct RelativePoseLog {
    capacity: usize,
    records: VecDeque<RpeRecord>,
}

impl Default for RelativePoseLog {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_LOG_CAPACITY)
    }
}

impl RelativePoseLog {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), records: VecDeque::with_capacity(capacity.max(1)) }
    }

    /// Appends the record for the step after the current last one.
    pub fn push(&mut self, record: RpeRecord) -> Result<()> {
        if let Some(last) = self.records.back() {
            if record.step != last.step + 1 {
                return Err(Error::invalid(format!(
                    "relative pose log expects step {}, got {}",
                    last.step + 1,
                    record.step
                )));
            }
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    pub fn get(&self, step: u64) -> Option<&RpeRecord> {
        let first = self.records.front()?.step;
        let i = step.checked_sub(first)?;
        self.records.get(i as usize)
    }

    pub fn latest(&self) -> Option<&RpeRecord> {
        self.records.back()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Motion from step `from` to step `to`, expressed in the step-`from` frame.
pub fn relative_between(log: &RelativePoseLog, from: u64, to: u64) -> Result<Transform> {
    if from > to {
        return Err(Error::invalid(format!("relative_between needs from <= to, got {from} > {to}")));
    }
    let mut acc = Transform::identity();
    for k in from + 1..=to {
        let rec = log
            .get(k)
            .ok_or_else(|| Error::Unavailable(format!("no relative pose logged for step {k}")))?;
        acc = compose(&acc, &rec.rel.t);
    }
    Ok(acc)
}

/// Sequential scan-to-scan estimator with a constant-velocity warm start.
#[derive(Debug, Clone)]
pub struct RelativePoseEstimator {
    cfg: GicpConfig,
    dt: f64,
    prev: Option<GicpCloud>,
    last_rel: Transform,
    odom: Transform,
}

impl RelativePoseEstimator {
    pub fn new(cfg: GicpConfig, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { cfg, dt, prev: None, last_rel: Transform::identity(), odom: Transform::identity() })
    }

    /// Consumes the next scan. Returns `None` for the first scan.
    pub fn push(&mut self, scan: &PointCloud) -> Result<Option<(RelativePose, RateEstimate)>> {
        let cur = GicpCloud::new(scan, &self.cfg)?;
        let out = match self.prev.take() {
            None => None,
            Some(prev) => {
                let (rel, _) = align_prepared(&cur, &prev, &self.last_rel, &self.cfg);
                Some(self.accept(rel)?)
            }
        };
        self.prev = Some(cur);
        Ok(out)
    }

    /// Forgets the previous scan, so the next one starts a new chain.
    pub fn clear(&mut self) {
        self.prev = None;
    }

    /// Records an externally supplied relative (for example ground truth).
    pub fn accept(&mut self, rel: RelativePose) -> Result<(RelativePose, RateEstimate)> {
        let next = chain(&self.odom, &rel);
        let rates = rates_from_poses(&next, &self.odom, self.dt)?;
        self.odom = next;
        self.last_rel = rel.t;
        Ok((rel, rates))
    }
}
