use serde::{Deserialize, Serialize};

use crate::filter::FilterEstimate;
use crate::geometry::{wrap_angle, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationThresholds {
    pub loc_std: f64,
    pub loc_steps: usize,
    pub loc_dist: f64,
    /// Radians.
    pub loc_turn: f64,
    pub reset_std: f64,
}

impl Default for LocalizationThresholds {
    fn default() -> Self {
        Self { loc_std: 10.0, loc_steps: 10, loc_dist: 10.0, loc_turn: 30f64.to_radians(), reset_std: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorStatus {
    /// Not localized and nothing changed.
    Searching,
    /// The criteria were met at this step.
    Localized,
    /// Already localized and still within the loss threshold.
    Tracking,
    /// The filter must be reinitialized over the full map.
    Reset,
}

/// Truth-free localization decision over the stream of filter estimates.
///
/// The filter counts as localized once the position spread has stayed below
/// `loc_std` for `loc_steps` consecutive steps and the mean has, since the
/// first of those steps, either travelled `loc_dist` or turned `loc_turn`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMonitor {
    pub thresholds: LocalizationThresholds,
    pub consec_below: usize,
    pub ref_pose_at_entry: Option<Pose>,
    pub localized: bool,
    pub reset_count: u32,
}

impl LocalizationMonitor {
    pub fn new(thresholds: LocalizationThresholds) -> Self {
        Self { thresholds, consec_below: 0, ref_pose_at_entry: None, localized: false, reset_count: 0 }
    }

    pub fn check_localization(&mut self, est: &FilterEstimate) -> MonitorStatus {
        let th = self.thresholds;
        let std = est.pos_std;
        if self.localized {
            if std > th.reset_std || !std.is_finite() {
                self.register_reset();
                return MonitorStatus::Reset;
            }
            return MonitorStatus::Tracking;
        }
        if !(std < th.loc_std) {
            if self.consec_below > 0 {
                self.register_reset();
                return MonitorStatus::Reset;
            }
            return MonitorStatus::Searching;
        }
        let pose = est.mean_state.pose();
        let entry = *self.ref_pose_at_entry.get_or_insert(pose);
        self.consec_below += 1;
        if self.consec_below >= th.loc_steps {
            let moved = (pose.p - entry.p).norm();
            let turned = wrap_angle(pose.yaw() - entry.yaw()).abs();
            if moved >= th.loc_dist || turned >= th.loc_turn {
                self.localized = true;
                return MonitorStatus::Localized;
            }
        }
        MonitorStatus::Searching
    }

    fn register_reset(&mut self) {
        self.consec_below = 0;
        self.ref_pose_at_entry = None;
        self.localized = false;
        self.reset_count += 1;
    }
}

/// Summary metrics of one run. `a` and `b` count scans processed; `c`, `d`
/// and `e` are 0-based step indices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunMetrics {
    /// Scans until the localization that was never followed by a reset.
    pub a: Option<u64>,
    /// Scans until the criteria were first met.
    pub b: Option<u64>,
    /// First step starting 10 consecutive steps within 5 m of truth.
    pub c: Option<u64>,
    /// First step starting 50 consecutive steps within 5 m of truth.
    pub d: Option<u64>,
    /// First step starting 50 consecutive steps within 2.5 m of truth.
    pub e: Option<u64>,
    pub resets: u32,
    /// Mean position error over the steps after localization `a`.
    pub post_loc_error: Option<f64>,
}

/// First index `k` with `errors[k..k + run]` all at most `tol`.
pub fn first_run_within(errors: &[f64], tol: f64, run: usize) -> Option<u64> {
    let mut count = 0;
    for (k, e) in errors.iter().enumerate() {
        if *e <= tol {
            count += 1;
            if count == run {
                return Some((k + 1 - run) as u64);
            }
        } else {
            count = 0;
        }
    }
    None
}

/// Metrics from the per-step localization flags and reset markers, plus the
/// position errors when truth is available.
pub fn compute_metrics(localized_at: &[bool], reset_at: &[bool], errors: Option<&[f64]>) -> RunMetrics {
    let b = localized_at.iter().position(|&l| l).map(|k| k as u64 + 1);
    let last_reset = reset_at.iter().rposition(|&r| r);
    let last_loc = localized_at.iter().rposition(|&l| l);
    let a = match (last_loc, last_reset) {
        (Some(l), Some(r)) if r >= l => None,
        (Some(l), _) => Some(l as u64 + 1),
        (None, _) => None,
    };
    let mut m = RunMetrics { a, b, resets: reset_at.iter().filter(|&&r| r).count() as u32, ..Default::default() };
    if let Some(err) = errors {
        m.c = first_run_within(err, 5.0, 10);
        m.d = first_run_within(err, 5.0, 50);
        m.e = first_run_within(err, 2.5, 50);
        if let Some(a) = a {
            let tail = &err[(a as usize).min(err.len())..];
            if !tail.is_empty() {
                m.post_loc_error = Some(tail.iter().sum::<f64>() / tail.len() as f64);
            }
        }
    }
    m
}
