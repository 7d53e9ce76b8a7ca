//! Bootstrap particle filter over [`VehicleState`] with log-space weights
//! and ESS-gated systematic resampling.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::motion::{propagate_noisy_unchecked, ProcessNoise, VehicleState};
use crate::nn_grid::DistanceGrid;

/// Counter-based random streams: one independent ChaCha stream per
/// (epoch, particle) pair, so parallel propagation does not depend on
/// scheduling or worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    pub seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, epoch: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng.set_word_pos((epoch as u128) << 40);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<VehicleState>,
    pub log_weights: Vec<f64>,
    pub resampling_frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    pub mean_state: VehicleState,
    pub pos_cov: Mat3,
    /// Square root of the largest eigenvalue of `pos_cov`.
    pub pos_std: f64,
}

/// `log Σ exp(x_i)`, stable for very negative inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Systematic resampling: `n` draws at `(u + k) / n` against the cumulative
/// weights. `u` must lie in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], n: usize, u: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let target = (u + k as f64) / n as f64;
        while target >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    out
}

impl ParticleSet {
    /// Uniform particles over the map box with the broad attitude and
    /// velocity prior used for global localization.
    pub fn init_uniform(lb: &Vec3, ub: &Vec3, v_max: f64, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        if !(v_max >= 0.0 && v_max.is_finite()) {
            return Err(Error::invalid(format!("v_max must be non-negative, got {v_max}")));
        }
        if (0..3).any(|a| !(ub[a] > lb[a]) || !lb[a].is_finite() || !ub[a].is_finite()) {
            return Err(Error::invalid(format!("degenerate bounds {lb:?} .. {ub:?}")));
        }
        let rate = Normal::new(0.0, 0.1).unwrap();
        let states = (0..n)
            .map(|_| VehicleState {
                p: Vec3::from_fn(|a, _| rng.random_range(lb[a]..ub[a])),
                zeta: Vec3::new(
                    rng.random_range(-180f64.to_radians()..180f64.to_radians()),
                    rng.random_range(-30f64.to_radians()..=30f64.to_radians()),
                    rng.random_range(-10f64.to_radians()..=10f64.to_radians()),
                ),
                v: if v_max > 0.0 { rng.random_range(0.0..=v_max) } else { 0.0 },
                zeta_dot: Vec3::from_fn(|_, _| rate.sample(rng)),
                a: 0.0,
            })
            .collect();
        Ok(Self::from_states(states))
    }

    /// Equal-weight set.
    pub fn from_states(states: Vec<VehicleState>) -> Self {
        let n = states.len();
        Self {
            states,
            log_weights: vec![-(n as f64).ln(); n],
            resampling_frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn normalize(&mut self) {
        let lse = log_sum_exp(&self.log_weights);
        if lse.is_finite() {
            self.log_weights.iter_mut().for_each(|l| *l -= lse);
        } else {
            let n = self.len() as f64;
            self.log_weights.iter_mut().for_each(|l| *l = -n.ln());
        }
    }

    /// Samples the transition density for every particle. Weights are untouched.
    pub fn predict(&mut self, dt: f64, noise: &ProcessNoise, streams: &RngStreams, epoch: u64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        self.states.par_iter_mut().enumerate().for_each(|(i, s)| {
            let mut rng = streams.stream(epoch, i as u64);
            *s = propagate_noisy_unchecked(s, dt, noise, &mut rng);
        });
        Ok(())
    }

    /// Per-particle scan log-likelihoods.
    pub fn log_likelihoods(&self, grid: &DistanceGrid, scan: &[Vec3]) -> Vec<f64> {
        self.states
            .par_iter()
            .map(|s| grid.log_likelihood_with(&s.pose().to_transform(), scan))
            .collect()
    }

    /// Multiplies weights by the scan likelihood, then renormalizes.
    pub fn update_weights(&mut self, grid: &DistanceGrid, scan: &[Vec3]) -> Result<Vec<f64>> {
        if scan.is_empty() {
            return Err(Error::invalid("empty scan"));
        }
        let ll = self.log_likelihoods(grid, scan);
        self.log_weights.iter_mut().zip(&ll).for_each(|(w, l)| *w += l);
        self.normalize();
        Ok(ll)
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.log_weights.iter().map(|l| (2.0 * l).exp()).sum::<f64>()
    }

    /// Systematic resampling when ESS < N/2 and resampling is not frozen.
    /// Returns the ancestor index of every new particle, or `None` when the
    /// set was left alone.
    pub fn maybe_resample(&mut self, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if self.resampling_frozen || self.effective_sample_size() >= 0.5 * self.len() as f64 {
            return None;
        }
        let u: f64 = rng.random_range(0.0..1.0);
        let idx = systematic_indices(&self.weights(), self.len(), u);
        self.states = idx.iter().map(|&i| self.states[i]).collect();
        let n = self.len() as f64;
        self.log_weights.iter_mut().for_each(|l| *l = -n.ln());
        Some(idx)
    }

    pub fn estimate(&self) -> FilterEstimate {
        let w = self.weights();
        let total: f64 = w.iter().sum();
        let mut mean = [0.0; 11];
        let (mut sin, mut cos) = (Vec3::zeros(), Vec3::zeros());
        for (s, wi) in self.states.iter().zip(&w) {
            let x = s.to_array();
            for k in 0..11 {
                mean[k] += wi * x[k];
            }
            for a in 0..3 {
                sin[a] += wi * s.zeta[a].sin();
                cos[a] += wi * s.zeta[a].cos();
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut mean_state = VehicleState::from_array(&mean);
        mean_state.zeta = Vec3::from_fn(|a, _| sin[a].atan2(cos[a]));
        let mut cov = Mat3::zeros();
        for (s, wi) in self.states.iter().zip(&w) {
            let d = s.p - mean_state.p;
            cov += (d * d.transpose()) * *wi;
        }
        cov /= total;
        cov = (cov + cov.transpose()) * 0.5;
        let max_eig = SymmetricEigen::new(cov).eigenvalues.max().max(0.0);
        FilterEstimate { mean_state, pos_cov: cov, pos_std: max_eig.sqrt() }
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.log_weights.iter().enumerate() {
            if *l > self.log_weights[best] {
                best = i;
            }
        }
        best
    }

    /// Overwrites one particle's pose, speed and rates. Weight bookkeeping is
    /// left to the caller.
    pub fn correct_particle(&mut self, index: usize, pose: &Pose, v: f64, zeta_dot: &Vec3) -> Result<()> {
        let n = self.len();
        let s = self
            .states
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("particle {index} out of range for {n}")))?;
        s.p = pose.p;
        s.zeta = pose.zeta;
        s.v = v;
        s.zeta_dot = *zeta_dot;
        Ok(())
    }
}
