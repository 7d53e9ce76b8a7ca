//! Constant-acceleration, constant-turn-rate vehicle model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_ypr, rotation_unchecked, Pose, Vec3};

/// 11-dimensional vehicle state `[p, ζ, v, ζ̇, a]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub p: Vec3,
    /// yaw, pitch, roll
    pub zeta: Vec3,
    /// speed along the body x axis
    pub v: f64,
    pub zeta_dot: Vec3,
    pub a: f64,
}

impl VehicleState {
    pub fn at_pose(pose: &Pose) -> Self {
        Self { p: pose.p, zeta: pose.zeta, ..Default::default() }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.p, self.zeta)
    }

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.p[0], self.p[1], self.p[2],
            self.zeta[0], self.zeta[1], self.zeta[2],
            self.v,
            self.zeta_dot[0], self.zeta_dot[1], self.zeta_dot[2],
            self.a,
        ]
    }

    pub fn from_array(x: &[f64; 11]) -> Self {
        Self {
            p: Vec3::new(x[0], x[1], x[2]),
            zeta: Vec3::new(x[3], x[4], x[5]),
            v: x[6],
            zeta_dot: Vec3::new(x[7], x[8], x[9]),
            a: x[10],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Diagonal process noise, in state units squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub q_diag: [f64; 11],
    /// Clamp speed at zero after noise.
    pub forward_only: bool,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self::reference()
    }
}

impl ProcessNoise {
    /// Reference diagonal from the KITTI experiments, angles in radians.
    pub fn reference() -> Self {
        let deg = |d: f64| d.to_radians().powi(2);
        Self {
            q_diag: [
                0.5f64.powi(2),
                0.5f64.powi(2),
                0.1f64.powi(2),
                deg(5.0),
                deg(2.0),
                deg(0.1),
                0.1f64.powi(2),
                deg(0.05),
                deg(0.05),
                deg(0.02),
                0.001f64.powi(2),
            ],
            forward_only: true,
        }
    }

    pub fn zero() -> Self {
        Self { q_diag: [0.0; 11], forward_only: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_diag.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::invalid("process noise variances must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Deterministic one-step propagation; rates and acceleration carry over.
pub fn propagate(s: &VehicleState, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    Ok(propagate_unchecked(s, dt))
}

#[inline]
pub(crate) fn propagate_unchecked(s: &VehicleState, dt: f64) -> VehicleState {
    let heading = rotation_unchecked(&s.zeta).column(0).into_owned();
    let step = s.v * dt + 0.5 * s.a * dt * dt;
    VehicleState {
        p: s.p + heading * step,
        zeta: normalize_ypr(s.zeta + s.zeta_dot * dt),
        v: s.v + s.a * dt,
        zeta_dot: s.zeta_dot,
        a: s.a,
    }
}

/// Samples the transition density: deterministic step plus additive Gaussian noise.
pub fn propagate_noisy(
    s: &VehicleState,
    dt: f64,
    noise: &ProcessNoise,
    rng: &mut impl Rng,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    Ok(propagate_noisy_unchecked(s, dt, noise, rng))
}

pub(crate) fn propagate_noisy_unchecked(
    s: &VehicleState,
    dt: f64,
    noise: &ProcessNoise,
    rng: &mut impl Rng,
) -> VehicleState {
    let base = propagate_unchecked(s, dt);
    if noise.q_diag.iter().all(|q| *q == 0.0) {
        return clamp_speed(base, noise);
    }
    let mut x = base.to_array();
    for (xi, q) in x.iter_mut().zip(noise.q_diag.iter()) {
        let z: f64 = StandardNormal.sample(rng);
        *xi += q.sqrt() * z;
    }
    let mut out = VehicleState::from_array(&x);
    out.zeta = normalize_ypr(out.zeta);
    clamp_speed(out, noise)
}

fn clamp_speed(mut s: VehicleState, noise: &ProcessNoise) -> VehicleState {
    if noise.forward_only && s.v < 0.0 {
        s.v = 0.0;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_state(rng: &mut impl Rng) -> VehicleState {
        VehicleState {
            p: Vec3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
            zeta: Vec3::new(rng.random_range(-PI..PI), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)),
            v: rng.random_range(-5.0..20.0),
            zeta_dot: Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            a: rng.random_range(-3.0..3.0),
        }
    }

    #[test]
    fn rest_state_unchanged() {
        let s = VehicleState::at_pose(&Pose::from_xyz_ypr(1.0, 2.0, 3.0, 0.3, 0.1, -0.2));
        assert_eq!(propagate(&s, 0.1).unwrap(), s);
    }

    #[test]
    fn straight_line_step() {
        let s = VehicleState { v: 10.0, ..Default::default() };
        let out = propagate(&s, 0.1).unwrap();
        assert!((out.p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(out.v, 10.0);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let s = VehicleState::default();
        assert!(propagate(&s, 0.0).is_err());
        assert!(propagate(&s, -1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(propagate_noisy(&s, 0.0, &ProcessNoise::reference(), &mut rng).is_err());
    }

    #[test]
    fn step_length_is_heading_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = random_state(&mut rng);
            let dt = rng.random_range(0.01..0.5);
            let out = propagate(&s, dt).unwrap();
            let expected = (s.v * dt + 0.5 * s.a * dt * dt).abs();
            assert!(((out.p - s.p).norm() - expected).abs() < 1e-9);
            assert_eq!(out.zeta_dot, s.zeta_dot);
            assert_eq!(out.a, s.a);
        }
    }

    #[test]
    fn zero_noise_equals_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = VehicleState { v: 3.0, ..random_state(&mut rng) };
        let out = propagate_noisy(&s, 0.1, &ProcessNoise::zero(), &mut rng).unwrap();
        assert_eq!(out, propagate(&s, 0.1).unwrap());
    }

    #[test]
    fn noisy_is_deterministic_per_seed() {
        let s = VehicleState { v: 5.0, ..Default::default() };
        let q = ProcessNoise::reference();
        let a = propagate_noisy(&s, 0.1, &q, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = propagate_noisy(&s, 0.1, &q, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_only_clamps_speed() {
        let s = VehicleState { v: 0.0, ..Default::default() };
        let mut q = ProcessNoise::zero();
        q.q_diag[6] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert!(propagate_noisy(&s, 0.1, &q, &mut rng).unwrap().v >= 0.0);
        }
    }

    #[test]
    fn noise_moments_match_diagonal() {
        let s = VehicleState {
            p: Vec3::new(1.0, 2.0, 3.0),
            zeta: Vec3::new(0.2, 0.1, 0.05),
            v: 10.0,
            zeta_dot: Vec3::new(0.01, 0.0, 0.0),
            a: 0.5,
        };
        let q = ProcessNoise::reference();
        let base = propagate(&s, 0.1).unwrap().to_array();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sum = [0.0; 11];
        let mut sum2 = [0.0; 11];
        for _ in 0..n {
            let x = propagate_noisy(&s, 0.1, &q, &mut rng).unwrap().to_array();
            for k in 0..11 {
                let d = x[k] - base[k];
                sum[k] += d;
                sum2[k] += d * d;
            }
        }
        for k in 0..11 {
            let mean = sum[k] / n as f64;
            let var = sum2[k] / n as f64 - mean * mean;
            assert!((var / q.q_diag[k] - 1.0).abs() < 0.05, "component {k}: {var} vs {}", q.q_diag[k]);
        }
    }

    #[test]
    fn reference_noise_values() {
        let q = ProcessNoise::reference().q_diag;
        assert_eq!(q[0], 0.25);
        assert!((q[2] - 0.01).abs() < 1e-15);
        assert!((q[3] - (5.0 * PI / 180.0).powi(2)).abs() < 1e-15);
        assert!((q[9] - (0.02 * PI / 180.0).powi(2)).abs() < 1e-18);
        assert!((q[10] - 1e-6).abs() < 1e-18);
    }
}
