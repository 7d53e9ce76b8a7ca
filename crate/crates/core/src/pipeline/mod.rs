//! The localization loop: particle filter, delayed scan-to-map corrections,
//! scan-to-scan relative poses and the localization monitor.
//!
//! In deterministic mode every block runs inside [`Pipeline::step`] on a fixed
//! schedule, and a scan-to-map result becomes visible exactly
//! `sim_s2m_latency` steps after it was issued. In live mode the scan-to-map
//! task runs on a worker thread and its result is applied at the first step
//! after it arrives.

mod config;
mod monitor;
mod report;

use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

pub use config::PipelineConfig;
pub use monitor::{
    compute_metrics, first_run_within, LocalizationMonitor, LocalizationThresholds, MonitorStatus, RunMetrics,
};
pub use report::{metrics_from_trace, Event, RunReport, StepRecord};

use crate::error::{Error, Result};
use crate::filter::{FilterEstimate, ParticleSet, RngStreams};
use crate::geometry::{compose, pose_to_transform, rotation_unchecked, transform_to_pose, Pose, Vec3};
use crate::matcher::{branch_and_bound_match, build_pyramid, score_at, MatchPyramid, MatchResult, SearchWindow};
use crate::nn_grid::{build_grid, DistanceGrid, GridSpec};
use crate::pointcloud::{bev_downsample, estimate_normals, remove_flat, to_bev, voxel_downsample, BevCloud, PointCloud, Vec2};
use crate::rpe::{align_prepared, relative_between, GicpCloud, RelativePose, RelativePoseEstimator, RelativePoseLog, RpeRecord};

/// Stream index reserved for particle initialization; the epoch is the reset count.
const INIT_STREAM: u64 = u64::MAX;
/// Stream index reserved for resampling; the epoch is the step.
const RESAMPLE_STREAM: u64 = u64::MAX - 1;

/// Immutable map data shared by every block.
#[derive(Debug, Clone)]
pub struct MapArtifacts {
    /// The voxel-downsampled map.
    pub map: PointCloud,
    pub grid: DistanceGrid,
    pub pyramid: MatchPyramid,
    gicp_map: GicpCloud,
}

impl MapArtifacts {
    /// Downsamples `map` and derives the distance grid and match pyramid.
    pub fn build(map: &PointCloud, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let map = voxel_downsample(map, &Vec3::repeat(cfg.voxel_res), 0)?;
        let spec = GridSpec::covering(&map, Vec3::repeat(cfg.grid_delta), cfg.d_max, cfg.sigma)?;
        let grid = build_grid(&map, &spec)?;
        let pyramid = build_pyramid(&map_bev(&map, cfg)?, &Vec2::repeat(cfg.d_m), cfg.cell_value())?;
        Self::from_parts(map, grid, pyramid, cfg)
    }

    /// Assembles artifacts built elsewhere. `map` must already be downsampled.
    pub fn from_parts(map: PointCloud, grid: DistanceGrid, pyramid: MatchPyramid, cfg: &PipelineConfig) -> Result<Self> {
        let gicp_map = GicpCloud::new(&map, &cfg.prepared_gicp())?;
        Ok(Self { map, grid, pyramid, gicp_map })
    }
}

/// Bird's-eye view of the non-horizontal part of a cloud.
pub fn map_bev(map: &PointCloud, cfg: &PipelineConfig) -> Result<BevCloud> {
    let with_normals = estimate_normals(map, cfg.normal_k)?;
    Ok(to_bev(&remove_flat(&with_normals, cfg.nz_threshold)?))
}

/// Why a scan-to-map task produced no pose.
#[derive(Debug, Clone, PartialEq)]
pub enum S2mFailure {
    /// Too few non-horizontal points to match.
    NoFeatures(String),
    /// The best match in the window scored below the seed, or nothing matched.
    NotImproved { best: u64, seed: u64 },
    /// GICP refinement did not converge.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub enum S2mOutcome {
    Matched { stage1: MatchResult, refined: Pose },
    Failed(S2mFailure),
}

/// Two-stage scan-to-map localization around `seed`: planar branch-and-bound
/// on the levelled BEV scan, then GICP of the 3D scan against the map.
pub fn s2m_task(art: &MapArtifacts, cfg: &PipelineConfig, seed: &Pose, scan: &PointCloud) -> S2mOutcome {
    let mut win = SearchWindow::around(
        Vec2::new(seed.p[0], seed.p[1]),
        Vec2::new(cfg.window_lx, cfg.window_ly),
        cfg.d_theta_deg.to_radians(),
    );
    // the seed itself is a lattice pose, so the search never loses to it
    win.theta_min += seed.yaw() + std::f64::consts::PI;
    win.theta_max += seed.yaw() + std::f64::consts::PI;
    two_stage(art, cfg, seed, scan, &win, true)
}

/// Scan-to-map matching of a single scan against the whole map, with no prior
/// on the horizontal pose. The scan is assumed level.
pub fn match_global(art: &MapArtifacts, cfg: &PipelineConfig, scan: &PointCloud) -> S2mOutcome {
    let Some((lo, hi)) = art.map.bounds() else {
        return S2mOutcome::Failed(S2mFailure::NoFeatures("empty map".into()));
    };
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0;
    let seed = Pose::new(center, Vec3::zeros());
    let win = SearchWindow::around(center.xy(), half.xy(), cfg.d_theta_deg.to_radians());
    two_stage(art, cfg, &seed, scan, &win, false)
}

/// Root mean square distance between the scan placed at `est` and at `truth`.
pub fn alignment_rmse(scan: &PointCloud, est: &Pose, truth: &Pose) -> f64 {
    if scan.is_empty() {
        return 0.0;
    }
    let (a, b) = (pose_to_transform(est), pose_to_transform(truth));
    let sq: f64 = scan.points.iter().map(|p| (a.apply(p) - b.apply(p)).norm_squared()).sum();
    (sq / scan.len() as f64).sqrt()
}

fn two_stage(
    art: &MapArtifacts,
    cfg: &PipelineConfig,
    seed: &Pose,
    scan: &PointCloud,
    win: &SearchWindow,
    must_improve: bool,
) -> S2mOutcome {
    let level = rotation_unchecked(&Vec3::new(0.0, seed.zeta[1], seed.zeta[2]));
    let levelled = PointCloud::new(scan.points.iter().map(|p| level * p).collect());
    let bev = match scan_bev(&levelled, cfg) {
        Ok(b) if !b.is_empty() => b,
        Ok(_) => return S2mOutcome::Failed(S2mFailure::NoFeatures("no vertical structure in scan".into())),
        Err(e) => return S2mOutcome::Failed(S2mFailure::NoFeatures(e.to_string())),
    };
    let stage1 = match branch_and_bound_match(&art.pyramid, &bev, win) {
        Ok(m) => m,
        Err(e) => return S2mOutcome::Failed(S2mFailure::NoFeatures(e.to_string())),
    };
    let seed_score = if must_improve {
        score_at(&art.pyramid, 0, &bev, seed.yaw(), &seed.p.xy()).unwrap_or(0)
    } else {
        0
    };
    // Ties are kept so that an already correct seed is confirmed; an empty
    // window never is.
    if stage1.score < seed_score || stage1.score == 0 {
        return S2mOutcome::Failed(S2mFailure::NotImproved { best: stage1.score, seed: seed_score });
    }
    let stage1 = MatchResult { accepted: true, ..stage1 };
    let mut init = Pose::from_xyz_ypr(stage1.t[0], stage1.t[1], seed.p[2], stage1.theta, seed.zeta[1], seed.zeta[2]);
    if !must_improve {
        init.p[2] = best_height(&art.grid, &init, scan);
    }
    let src = match GicpCloud::new(scan, &cfg.prepared_gicp()) {
        Ok(s) => s,
        Err(e) => return S2mOutcome::Failed(S2mFailure::NoFeatures(e.to_string())),
    };
    let (rel, _) = align_prepared(&src, &art.gicp_map, &pose_to_transform(&init), &cfg.prepared_gicp());
    if !rel.converged {
        return S2mOutcome::Failed(S2mFailure::NotConverged);
    }
    S2mOutcome::Matched { stage1, refined: transform_to_pose(&rel.t).pose }
}

/// Height of the sensor over the map's vertical range that best explains the
/// scan at the horizontal pose of `pose`.
fn best_height(grid: &DistanceGrid, pose: &Pose, scan: &PointCloud) -> f64 {
    let spec = grid.spec();
    let step = spec.delta[2];
    let n = ((spec.ub[2] - spec.lb[2]) / step).ceil() as usize + 1;
    let mut best = (f64::NEG_INFINITY, pose.p[2]);
    for i in 0..n {
        let mut p = *pose;
        p.p[2] = spec.lb[2] + i as f64 * step;
        let ll = grid.log_likelihood_with(&pose_to_transform(&p), &scan.points);
        if ll > best.0 {
            best = (ll, p.p[2]);
        }
    }
    best.1
}

fn scan_bev(scan: &PointCloud, cfg: &PipelineConfig) -> Result<BevCloud> {
    bev_downsample(&map_bev(scan, cfg)?, cfg.bev_res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2mStatus {
    Running,
    Done,
    Failed,
}

/// The single scan-to-map task in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingMatch {
    pub issued_step: u64,
    /// Index of the seeding particle; stable while resampling is frozen.
    pub particle: usize,
    pub seed_pose: Pose,
    pub status: S2mStatus,
    /// Step at which the result becomes visible in deterministic mode.
    pub due_step: Option<u64>,
    pub outcome: Option<S2mOutcome>,
}

/// What happened to a finished match at the step it was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub particle: usize,
    pub issued_step: u64,
    /// Refined pose propagated to the current step.
    pub pose: Pose,
    pub ll_old: f64,
    pub ll_new: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub step: u64,
    pub estimate: FilterEstimate,
    pub ess: f64,
    pub events: Vec<Event>,
    pub correction: Option<Correction>,
}

struct Job {
    generation: u64,
    snapshot: Snapshot,
}

#[derive(Clone)]
struct Snapshot {
    seed_pose: Pose,
    scan: Arc<PointCloud>,
}

struct LiveWorker {
    jobs: Option<Sender<Job>>,
    results: Receiver<(u64, S2mOutcome)>,
    handle: Option<JoinHandle<()>>,
}

impl LiveWorker {
    fn spawn(art: Arc<MapArtifacts>, cfg: PipelineConfig) -> Self {
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (res_tx, res_rx) = mpsc::channel();
        let handle = std::thread::spawn(move || {
            for job in job_rx {
                let s = &job.snapshot;
                let outcome = s2m_task(&art, &cfg, &s.seed_pose, &s.scan);
                if res_tx.send((job.generation, outcome)).is_err() {
                    break;
                }
            }
        });
        Self { jobs: Some(job_tx), results: res_rx, handle: Some(handle) }
    }
}

impl Drop for LiveWorker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// The global localization loop over a fixed map.
pub struct Pipeline {
    cfg: PipelineConfig,
    art: Arc<MapArtifacts>,
    particles: ParticleSet,
    /// Current-scan log-likelihood of every particle, in particle order.
    ll: Vec<f64>,
    streams: RngStreams,
    bounds: (Vec3, Vec3),
    rpe: RelativePoseEstimator,
    log: RelativePoseLog,
    pending: Option<PendingMatch>,
    monitor: LocalizationMonitor,
    step: u64,
    /// Bumped on reset so that stale live results are ignored.
    generation: u64,
    live: Option<LiveWorker>,
}

impl Pipeline {
    /// Deterministic pipeline with particles spread uniformly over the map box.
    pub fn new(art: Arc<MapArtifacts>, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = art.map.bounds().ok_or_else(|| Error::invalid("empty map"))?;
        let bounds = (lo, Vec3::new(hi[0], hi[1], lo[2] + cfg.init_z_span));
        let streams = RngStreams::new(cfg.seed);
        let particles = ParticleSet::init_uniform(
            &bounds.0,
            &bounds.1,
            cfg.v_max,
            cfg.n_particles,
            &mut streams.stream(0, INIT_STREAM),
        )?;
        let thresholds = LocalizationThresholds {
            loc_std: cfg.loc_std,
            loc_steps: cfg.loc_steps,
            loc_dist: cfg.loc_dist,
            loc_turn: cfg.loc_turn_deg.to_radians(),
            reset_std: cfg.reset_std,
        };
        Ok(Self {
            ll: vec![0.0; particles.len()],
            particles,
            streams,
            bounds,
            rpe: RelativePoseEstimator::new(cfg.rpe_gicp(), cfg.dt)?,
            log: RelativePoseLog::with_capacity(cfg.rpe_log_capacity),
            pending: None,
            monitor: LocalizationMonitor::new(thresholds),
            step: 0,
            generation: 0,
            live: None,
            art,
            cfg,
        })
    }

    /// Pipeline whose scan-to-map task runs on a background thread.
    pub fn new_live(art: Arc<MapArtifacts>, cfg: PipelineConfig) -> Result<Self> {
        let mut p = Self::new(art.clone(), cfg.clone())?;
        p.live = Some(LiveWorker::spawn(art, cfg));
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn artifacts(&self) -> &Arc<MapArtifacts> {
        &self.art
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    /// Replaces the particle set, for example to start from a known pose.
    pub fn set_particles(&mut self, particles: ParticleSet) -> Result<()> {
        if particles.is_empty() {
            return Err(Error::invalid("particle set is empty"));
        }
        self.ll = vec![0.0; particles.len()];
        self.particles = particles;
        self.drop_pending();
        Ok(())
    }

    pub fn pending(&self) -> Option<&PendingMatch> {
        self.pending.as_ref()
    }

    pub fn monitor(&self) -> &LocalizationMonitor {
        &self.monitor
    }

    pub fn relative_log(&self) -> &RelativePoseLog {
        &self.log
    }

    /// Index of the next step to be processed.
    pub fn current_step(&self) -> u64 {
        self.step
    }

    /// One filter cycle with the relative pose estimated by scan-to-scan GICP.
    pub fn step(&mut self, scan: &PointCloud) -> Result<StepOutput> {
        self.cycle(scan, None)
    }

    /// One filter cycle with an externally supplied relative pose from the
    /// previous step to this one. The relative is ignored on the first step.
    pub fn step_with_relative(&mut self, scan: &PointCloud, rel: RelativePose) -> Result<StepOutput> {
        self.cycle(scan, Some(rel))
    }

    fn cycle(&mut self, scan: &PointCloud, rel: Option<RelativePose>) -> Result<StepOutput> {
        let k = self.step;
        self.step += 1;
        let mut events = Vec::new();
        if scan.is_empty() {
            self.rpe.clear();
            events.push(Event::ScanSkipped);
            return Ok(self.output(k, events, None));
        }
        self.record_relative(k, scan, rel)?;

        if k > 0 {
            self.particles.predict(self.cfg.dt, &self.cfg.noise(), &self.streams, k)?;
        }
        let ds = Arc::new(voxel_downsample(
            scan,
            &Vec3::repeat(self.cfg.voxel_res),
            self.cfg.seed.wrapping_add(k),
        )?);
        self.ll = self.particles.update_weights(&self.art.grid, &ds.points)?;

        let mut correction = self.poll_pending(k, &ds, &mut events);

        let best_before = self.particles.argmax();
        let mut rng = self.streams.stream(k, RESAMPLE_STREAM);
        let mut j_max = best_before;
        if let Some(ancestors) = self.particles.maybe_resample(&mut rng) {
            self.ll = ancestors.iter().map(|&a| self.ll[a]).collect();
            j_max = ancestors.iter().position(|&a| a == best_before).unwrap_or(0);
            events.push(Event::Resample);
        }

        if self.pending.is_none() {
            self.issue(k, j_max, ds.clone());
            events.push(Event::S2mIssued);
            if self.cfg.sim_s2m_latency == 0 && self.live.is_none() {
                correction = correction.or(self.poll_pending(k, &ds, &mut events));
            }
        }

        let estimate = self.particles.estimate();
        match self.monitor.check_localization(&estimate) {
            MonitorStatus::Localized => events.push(Event::Localized),
            MonitorStatus::Reset => {
                self.reset()?;
                events.push(Event::Reset);
            }
            MonitorStatus::Searching | MonitorStatus::Tracking => {}
        }
        Ok(self.output(k, events, correction))
    }

    fn output(&self, step: u64, events: Vec<Event>, correction: Option<Correction>) -> StepOutput {
        StepOutput {
            step,
            estimate: self.particles.estimate(),
            ess: self.particles.effective_sample_size(),
            events,
            correction,
        }
    }

    fn record_relative(&mut self, k: u64, scan: &PointCloud, rel: Option<RelativePose>) -> Result<()> {
        let estimated = match rel {
            Some(r) if k > 0 => Some(self.rpe.accept(r)?),
            Some(_) => None,
            None => match self.rpe.push(scan) {
                Ok(r) => r,
                Err(_) => {
                    self.rpe.clear();
                    None
                }
            },
        };
        if let Some((rel, rates)) = estimated {
            let record = RpeRecord { step: k, rel, rates };
            if self.log.push(record).is_err() {
                // A gap: older relatives can no longer be chained to this one.
                self.log = RelativePoseLog::with_capacity(self.cfg.rpe_log_capacity);
                self.log.push(record)?;
            }
        }
        Ok(())
    }

    fn issue(&mut self, k: u64, j: usize, scan: Arc<PointCloud>) {
        let seed_pose = self.particles.states[j].pose();
        let snapshot = Snapshot { seed_pose, scan };
        let mut pending = PendingMatch {
            issued_step: k,
            particle: j,
            seed_pose,
            status: S2mStatus::Running,
            due_step: None,
            outcome: None,
        };
        match &self.live {
            Some(worker) => {
                let job = Job { generation: self.generation, snapshot };
                if let Some(tx) = &worker.jobs {
                    // The worker only stops when the pipeline is dropped.
                    let _ = tx.send(job);
                }
            }
            None => {
                pending.due_step = Some(k + self.cfg.sim_s2m_latency);
                pending.outcome = Some(s2m_task(&self.art, &self.cfg, &snapshot.seed_pose, &snapshot.scan));
            }
        }
        self.pending = Some(pending);
        self.particles.resampling_frozen = true;
    }

    /// Applies the pending result if it is visible at step `now`.
    fn poll_pending(&mut self, now: u64, scan: &PointCloud, events: &mut Vec<Event>) -> Option<Correction> {
        let outcome = match (&self.live, &self.pending) {
            (_, None) => return None,
            (None, Some(p)) => {
                if p.due_step.is_some_and(|d| d > now) {
                    return None;
                }
                p.outcome.clone()?
            }
            (Some(worker), Some(_)) => loop {
                match worker.results.try_recv() {
                    Ok((generation, outcome)) if generation == self.generation => break outcome,
                    Ok(_) => continue,
                    Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => return None,
                }
            },
        };
        let mut pending = self.pending.take()?;
        pending.status = match outcome {
            S2mOutcome::Matched { .. } => S2mStatus::Done,
            S2mOutcome::Failed(_) => S2mStatus::Failed,
        };
        pending.outcome = Some(outcome);
        let result = apply_correction(&mut self.particles, &mut self.ll, &self.log, &self.art.grid, &pending, now, &scan.points);
        self.particles.resampling_frozen = false;
        match result {
            CorrectionOutcome::Failed => {
                events.push(Event::S2mRejected);
                None
            }
            CorrectionOutcome::Dropped => {
                events.push(Event::S2mDropped);
                None
            }
            CorrectionOutcome::Applied(c) => {
                events.push(if c.accepted { Event::S2mAccepted } else { Event::S2mRejected });
                Some(c)
            }
        }
    }

    fn drop_pending(&mut self) {
        self.pending = None;
        self.particles.resampling_frozen = false;
        self.generation += 1;
    }

    fn reset(&mut self) -> Result<()> {
        let epoch = self.monitor.reset_count as u64;
        self.particles = ParticleSet::init_uniform(
            &self.bounds.0,
            &self.bounds.1,
            self.cfg.v_max,
            self.cfg.n_particles,
            &mut self.streams.stream(epoch, INIT_STREAM),
        )?;
        self.ll = vec![0.0; self.particles.len()];
        self.drop_pending();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionOutcome {
    /// The match itself failed; nothing was touched.
    Failed,
    /// Relatives between the issue step and now are missing; nothing was touched.
    Dropped,
    /// The propagated pose was evaluated and, if accepted, spliced in.
    Applied(Correction),
}

/// Propagates a finished match from its issue step to `now` and splices it
/// into the seeding particle if it explains the current scan at least as well
/// as the particle did. `ll` holds every particle's log-likelihood of `scan`.
pub fn apply_correction(
    particles: &mut ParticleSet,
    ll: &mut [f64],
    log: &RelativePoseLog,
    grid: &DistanceGrid,
    pending: &PendingMatch,
    now: u64,
    scan: &[Vec3],
) -> CorrectionOutcome {
    let refined = match &pending.outcome {
        Some(S2mOutcome::Matched { refined, .. }) => *refined,
        _ => return CorrectionOutcome::Failed,
    };
    let Ok(rel) = relative_between(log, pending.issued_step, now) else {
        return CorrectionOutcome::Dropped;
    };
    let tf = compose(&pose_to_transform(&refined), &rel);
    let pose = transform_to_pose(&tf).pose;
    let j = pending.particle;
    let ll_old = ll[j];
    let ll_new = grid.log_likelihood_with(&tf, scan);
    let accepted = ll_new >= ll_old;
    if accepted {
        let state = particles.states[j];
        let (v, zeta_dot) = match log.get(now) {
            Some(rec) => (rec.rates.v, rec.rates.zeta_dot),
            None => (state.v, state.zeta_dot),
        };
        particles
            .correct_particle(j, &pose, v, &zeta_dot)
            .expect("pending particle index is in range");
        // The spliced pose has no history of its own, so it inherits the best
        // prior weight in the set before taking the current likelihood.
        let best_prior = particles
            .log_weights
            .iter()
            .zip(ll.iter())
            .map(|(w, l)| w - l)
            .fold(f64::NEG_INFINITY, f64::max);
        particles.log_weights[j] = best_prior + ll_new;
        particles.normalize();
        ll[j] = ll_new;
    }
    CorrectionOutcome::Applied(Correction { particle: j, issued_step: pending.issued_step, pose, ll_old, ll_new, accepted })
}

/// Runs the pipeline over a sequence and collects the report. `truth[k]` and
/// `relatives[k]` belong to scan `k`; `relatives[k]` is the motion from scan
/// `k − 1` to scan `k`, so its first entry is ignored.
pub fn run_sequence<I>(
    pipeline: &mut Pipeline,
    scans: I,
    truth: Option<&[Pose]>,
    relatives: Option<&[RelativePose]>,
) -> Result<RunReport>
where
    I: IntoIterator<Item = Result<PointCloud>>,
{
    let mut steps = Vec::new();
    for (k, scan) in scans.into_iter().enumerate() {
        let scan = scan?;
        let out = match relatives.and_then(|r| r.get(k)) {
            Some(rel) => pipeline.step_with_relative(&scan, *rel)?,
            None => pipeline.step(&scan)?,
        };
        let mean = out.estimate.mean_state;
        steps.push(StepRecord {
            step: out.step,
            timestamp: out.step as f64 * pipeline.config().dt,
            x: mean.p[0],
            y: mean.p[1],
            z: mean.p[2],
            yaw: mean.zeta[0],
            pitch: mean.zeta[1],
            roll: mean.zeta[2],
            pos_std: out.estimate.pos_std,
            ess: out.ess,
            events: out.events,
            error: truth.and_then(|t| t.get(k)).map(|t| (t.p - mean.p).norm()),
        });
    }
    if steps.is_empty() {
        return Err(Error::invalid("run_sequence needs at least one scan"));
    }
    Ok(RunReport::from_steps(steps))
}
