#![allow(dead_code)]

use std::sync::Arc;

use lidarloc::geometry::{compose, pose_to_transform, Pose};
use lidarloc::io::{generate_world, CityLayout, GeneratedWorld, SyntheticWorld};
use lidarloc::motion::VehicleState;
use lidarloc::pipeline::{MapArtifacts, PipelineConfig};
use lidarloc::rpe::RelativePose;
use lidarloc::ParticleSet;

/// An 80 m city with two roads per axis.
pub fn small_city(steps: usize, seed: u64) -> (SyntheticWorld, GeneratedWorld) {
    let layout = CityLayout { extent: 80.0, steps, ..CityLayout::default() };
    let mut world = SyntheticWorld::city(&layout, seed).unwrap();
    world.density = 8.0;
    let gen = generate_world(&world, seed).unwrap();
    (world, gen)
}

/// The small city driven along a straight road at 10 m/s.
pub fn straight_drive(steps: usize, seed: u64) -> (SyntheticWorld, GeneratedWorld) {
    let layout = CityLayout { extent: 80.0, steps: 1, ..CityLayout::default() };
    let mut world = SyntheticWorld::city(&layout, seed).unwrap();
    world.density = 8.0;
    world.trajectory = (0..steps)
        .map(|k| Pose::from_xyz_ypr(20.0, 5.0 + k as f64, 1.8, std::f64::consts::FRAC_PI_2, 0.0, 0.0))
        .collect();
    let gen = generate_world(&world, seed).unwrap();
    (world, gen)
}

pub fn test_config() -> PipelineConfig {
    PipelineConfig { grid_delta: 0.5, window_lx: 80.0, window_ly: 80.0, ..PipelineConfig::default() }
}

pub fn artifacts(gen: &GeneratedWorld, cfg: &PipelineConfig) -> Arc<MapArtifacts> {
    Arc::new(MapArtifacts::build(&gen.map, cfg).unwrap())
}

/// Exact relatives: entry `k` moves frame `k` into frame `k − 1`.
pub fn truth_relatives(truth: &[Pose]) -> Vec<RelativePose> {
    let mut out = vec![RelativePose::exact(pose_to_transform(&Pose::default()))];
    for w in truth.windows(2) {
        let rel = compose(&pose_to_transform(&w[0]).inverse(), &pose_to_transform(&w[1]));
        out.push(RelativePose::exact(rel));
    }
    out
}

/// Every particle exactly at `pose`, moving at `speed`.
pub fn particles_at(pose: &Pose, speed: f64, n: usize) -> ParticleSet {
    let mut s = VehicleState::at_pose(pose);
    s.v = speed;
    ParticleSet::from_states(vec![s; n])
}

pub fn yaw_error(a: f64, b: f64) -> f64 {
    lidarloc::geometry::wrap_angle(a - b).abs()
}
