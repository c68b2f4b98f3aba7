#![allow(dead_code)]

use nalgebra::Vector3;
use rangeodo::range_image::{ProjectionParams, RangeImageMap, VertexNormalMaps};
use rangeodo::simulator::{GroundTruthTrajectory, PatternConfig, Scene, SimulatedScan, raycast_sequence};
use rangeodo::registration::RegistrationConfig;
use rangeodo::{OdometryConfig, Pose, State, Twist};
use std::f64::consts::PI;

pub fn params() -> ProjectionParams {
    ProjectionParams::from_degrees(50.0, 50.0, 10.0).unwrap()
}

/// Constant body-frame motion through the corridor: `rest` seconds still, then
/// `speed` m/s forward with `yaw_rate` rad/s.
pub fn constant_motion(duration: f64, rest: f64, speed: f64, yaw_rate: f64) -> GroundTruthTrajectory {
    let xi = Twist::new(Vector3::new(speed, 0.0, 0.0), Vector3::new(0.0, 0.0, yaw_rate));
    GroundTruthTrajectory::from_fn(move |t| (xi * (t - rest).max(0.0)).exp(), 0.0, duration + 0.2, 2000.0).unwrap()
}

pub fn corridor_scans(traj: &GroundTruthTrajectory, noise: f64, n_scans: usize, seed: u64) -> Vec<SimulatedScan> {
    let scene = Scene::corridor().with_noise(noise);
    raycast_sequence(&scene, traj, &PatternConfig::rosette(50.0, 100_000.0), 0.0, 0.1, n_scans, seed).unwrap()
}

/// Map of scans `0..upto` merged at their true states, anchored at the true
/// begin pose of scan `upto − 1`.
pub fn truth_map(sims: &[SimulatedScan], upto: usize, cfg: &OdometryConfig) -> RangeImageMap {
    let mut map = RangeImageMap::new(cfg.projection, Pose::identity()).with_collision_band(cfg.collision_band);
    for s in &sims[..upto] {
        map = map.shift_origin(&s.truth.begin);
        map.update(&s.scan.range_gated(cfg.r_min, cfg.r_max), &s.truth);
    }
    map
}

pub fn truth_maps(sims: &[SimulatedScan], upto: usize, cfg: &OdometryConfig) -> VertexNormalMaps {
    let reg = &cfg.registration;
    truth_map(sims, upto, cfg).estimate_normals(reg.curvature_threshold, reg.normal_patch)
}

/// Translation error in meters and rotation error in degrees.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let d = a.inverse() * *b;
    ((a.translation - b.translation).norm(), d.angle().to_degrees())
}

pub fn state_distance(a: &State, b: &State) -> f64 {
    let db = b.begin.ominus(&a.begin).to_vector();
    let de = b.end.ominus(&a.end).to_vector();
    (db.norm_squared() + de.norm_squared()).sqrt()
}

/// Normalized isotropic Gaussian, written out directly.
pub fn density(p: &Vector3<f64>, q: &Vector3<f64>, sigma: f64) -> f64 {
    let d2 = (p - q).norm_squared();
    (-d2 / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).powf(1.5) * sigma.powi(3))
}

/// Sum over every surfel in the image whose own projection falls inside the
/// window around `p`'s projection.
pub fn brute_force_moments(p: &Vector3<f64>, maps: &VertexNormalMaps, cfg: &RegistrationConfig) -> Option<(f64, Vector3<f64>, Vector3<f64>, usize)> {
    let params = maps.params();
    let center = params.project(p);
    if !center.in_bounds {
        return None;
    }
    let half = (cfg.window / 2) as i64;
    let (mut m0, mut m1, mut n, mut count) = (0.0, Vector3::zeros(), Vector3::zeros(), 0);
    for s in maps.surfels().iter().flatten() {
        let q = params.project(&s.vertex);
        if (q.u - center.u).abs() <= half && (q.v - center.v).abs() <= half {
            let g = density(p, &s.vertex, cfg.sigma);
            m0 += g;
            m1 += s.vertex * g;
            n += s.normal * g;
            count += 1;
        }
    }
    (count > 0 && m0 > 0.0 && n.norm() >= 1e-12).then(|| (m0, m1, n.normalize(), count))
}
