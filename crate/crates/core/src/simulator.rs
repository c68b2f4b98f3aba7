//! Ground-truthed scan simulation for small-FoV prism scanners.
//!
//! A scan pattern gives a unit direction per sample instant. Each sample is
//! cast from the sensor pose at its own instant, so the produced scans carry
//! exactly the distortion a moving scanner sees. The trajectory is stored as
//! dense keyframes interpolated with the same geodesic rule as the odometry's
//! motion model.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::StampedPose;
use crate::motion::{Scan, ScanPoint, State};
use crate::se3::{Pose, Twist};

// ---------------------------------------------------------------------------
// Patterns

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    /// Rose curve from two counter-rotating deflections with incommensurate rates.
    Rosette,
    /// Serpentine grid over the square inscribed in the cone.
    Raster,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub kind: PatternKind,
    /// Full cone angle around the boresight (+x), degrees.
    pub fov_deg: f64,
    /// Samples per second.
    pub rate: f64,
    /// Rotation rates of the two deflections, Hz. Their ratio should be irrational.
    pub f1: f64,
    pub f2: f64,
}

impl PatternConfig {
    pub fn rosette(fov_deg: f64, rate: f64) -> Self {
        Self {
            kind: PatternKind::Rosette,
            fov_deg,
            rate,
            f1: 97.0,
            f2: -97.0 * 0.618_033_988_749_894_8,
        }
    }

    pub fn raster(fov_deg: f64, rate: f64) -> Self {
        Self {
            kind: PatternKind::Raster,
            ..Self::rosette(fov_deg, rate)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample rate must be positive, got {}", self.rate)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidConfig(format!(
                "pattern cone must lie in (0, 180) degrees, got {}",
                self.fov_deg
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub direction: Vector3<f64>,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanPattern {
    pub config: PatternConfig,
    pub samples: Vec<Sample>,
}

fn cone_direction(theta: f64, psi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Vector3::new(ct, st * cp, st * sp)
}

/// Direction of the rosette at absolute time `t`.
pub fn rosette_direction(cfg: &PatternConfig, t: f64) -> Vector3<f64> {
    let amp = cfg.fov_deg.to_radians() / 4.0;
    let (a1, a2) = (TAU * cfg.f1 * t, TAU * cfg.f2 * t + 0.5);
    let a = amp * (a1.cos() + a2.cos());
    let b = amp * (a1.sin() + a2.sin());
    cone_direction(a.hypot(b), b.atan2(a))
}

fn raster_direction(cfg: &PatternConfig, j: usize, n: usize) -> Vector3<f64> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let (row, mut col) = (j / cols, j % cols);
    if row % 2 == 1 {
        col = cols - 1 - col;
    }
    // half-side of the square whose corners touch the cone
    let half = (cfg.fov_deg.to_radians() / 2.0).cos().sqrt().acos();
    let az = -half + 2.0 * half * (col as f64 + 0.5) / cols as f64;
    let el = half - 2.0 * half * (row as f64 + 0.5) / rows as f64;
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Samples of one window `[t_b, t_b + window)`. Sample `k` fires at the
/// absolute instant `k / rate`, so consecutive windows continue the pattern.
pub fn generate_pattern(cfg: &PatternConfig, t_b: f64, window: f64) -> Result<ScanPattern> {
    cfg.validate()?;
    if !(window >= 0.0) {
        return Err(Error::InvalidConfig(format!("window must be non-negative, got {window}")));
    }
    let k0 = (t_b * cfg.rate).round() as i64;
    let n = (window * cfg.rate).round() as usize;
    let samples = (0..n)
        .map(|j| {
            // k0 / rate can round to just below t_b
            let t = ((k0 + j as i64) as f64 / cfg.rate).max(t_b);
            let direction = match cfg.kind {
                PatternKind::Rosette => rosette_direction(cfg, t),
                PatternKind::Raster => raster_direction(cfg, j, n),
            };
            Sample { direction, t }
        })
        .collect();
    Ok(ScanPattern { config: *cfg, samples })
}

// ---------------------------------------------------------------------------
// Scene

/// A bounded rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
}

const BOUNDS_TOL: f64 = 1e-9;

impl Plane {
    /// `axis_u` is projected onto the plane; `axis_v` completes a right-handed frame.
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>, axis_u: Vector3<f64>, half_u: f64, half_v: f64) -> Self {
        let normal = normal.normalize();
        let axis_u = (axis_u - normal * normal.dot(&axis_u)).normalize();
        Self {
            center,
            normal,
            axis_u,
            axis_v: normal.cross(&axis_u),
            half_u,
            half_v,
        }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    pub fn contains_projection(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        d.dot(&self.axis_u).abs() <= self.half_u + BOUNDS_TOL
            && d.dot(&self.axis_v).abs() <= self.half_v + BOUNDS_TOL
    }

    /// Ray parameter of the hit, if the ray meets the rectangle in front of the origin.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.center - origin)) / denom;
        (t > 0.0 && self.contains_projection(&(origin + dir * t))).then_some(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub planes: Vec<Plane>,
    /// Standard deviation of the additive range noise, meters.
    pub range_noise: f64,
}

impl Scene {
    /// Axis-aligned box with the given corners, walls facing inward.
    pub fn room(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        let c = (min + max) / 2.0;
        let h = (max - min) / 2.0;
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        let planes = vec![
            Plane::new(Vector3::new(min.x, c.y, c.z), x, y, h.y, h.z),
            Plane::new(Vector3::new(max.x, c.y, c.z), -x, y, h.y, h.z),
            Plane::new(Vector3::new(c.x, min.y, c.z), y, x, h.x, h.z),
            Plane::new(Vector3::new(c.x, max.y, c.z), -y, x, h.x, h.z),
            Plane::new(Vector3::new(c.x, c.y, min.z), z, x, h.x, h.y),
            Plane::new(Vector3::new(c.x, c.y, max.z), -z, x, h.x, h.y),
        ];
        Self {
            planes,
            range_noise: 0.0,
        }
    }

    /// 20 m × 6 m × 4 m corridor. The world origin sits 2 m from the near end,
    /// on the center line, 1.5 m above the floor, looking down the corridor (+x).
    pub fn corridor() -> Self {
        Self::room(Vector3::new(-2.0, -3.0, -1.5), Vector3::new(18.0, 3.0, 2.5))
    }

    /// The corridor with a few free-standing boxes to break its symmetry.
    pub fn furnished_corridor() -> Self {
        let mut scene = Self::corridor();
        for (center, half) in [
            (Vector3::new(12.0, -1.8, -0.5), Vector3::new(0.6, 0.5, 1.0)),
            (Vector3::new(15.0, 1.5, 0.0), Vector3::new(0.4, 0.8, 1.5)),
            (Vector3::new(10.0, 2.2, 1.5), Vector3::new(1.0, 0.4, 0.5)),
            (Vector3::new(16.5, -0.5, -1.0), Vector3::new(0.5, 0.5, 0.5)),
        ] {
            scene.add_box(center, half);
        }
        scene
    }

    /// Adds the six outward-facing faces of an axis-aligned box.
    pub fn add_box(&mut self, center: Vector3<f64>, half: Vector3<f64>) {
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        for (axis, u, hu, hv, h) in [
            (x, y, half.y, half.z, half.x),
            (y, x, half.x, half.z, half.y),
            (z, x, half.x, half.y, half.z),
        ] {
            for s in [-1.0, 1.0] {
                self.planes
                    .push(Plane::new(center + axis * (s * h), axis * s, u, hu, hv));
            }
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.range_noise = sigma;
        self
    }

    /// Nearest hit along the ray.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.planes
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .min_by(|a, b| a.total_cmp(b))
    }

    /// Distance from `p` to the closest rectangle whose extent covers its projection.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.planes
            .iter()
            .filter(|pl| pl.contains_projection(p))
            .map(|pl| pl.signed_distance(p).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

// ---------------------------------------------------------------------------
// Trajectory

/// Dense keyframes at a fixed rate, geodesically interpolated.
#[derive(Clone, Debug)]
pub struct GroundTruthTrajectory {
    t0: f64,
    dt: f64,
    keyframes: Vec<Pose>,
    segments: Vec<Twist>,
}

pub const DEFAULT_KEYFRAME_RATE: f64 = 2000.0;

impl GroundTruthTrajectory {
    /// Samples `f` on `[t0, t1]` at `rate` keyframes per second.
    pub fn from_fn<F>(f: F, t0: f64, t1: f64, rate: f64) -> Result<Self>
    where
        F: Fn(f64) -> Pose + Sync,
    {
        if !(t1 > t0 && rate > 0.0) {
            return Err(Error::InvalidConfig("trajectory needs t1 > t0 and a positive rate".into()));
        }
        let n = ((t1 - t0) * rate).ceil() as usize + 1;
        let dt = 1.0 / rate;
        let keyframes: Vec<Pose> = (0..n).into_par_iter().map(|k| f(t0 + k as f64 * dt)).collect();
        let segments = keyframes
            .windows(2)
            .map(|w| w[1].ominus(&w[0]))
            .collect();
        Ok(Self {
            t0,
            dt,
            keyframes,
            segments,
        })
    }

    pub fn start(&self) -> f64 {
        self.t0
    }

    pub fn end(&self) -> f64 {
        self.t0 + (self.keyframes.len() - 1) as f64 * self.dt
    }

    pub fn keyframes(&self) -> &[Pose] {
        &self.keyframes
    }

    /// Pose at `t`, clamped to the sampled interval.
    pub fn pose(&self, t: f64) -> Pose {
        let x = ((t - self.t0) / self.dt).max(0.0);
        let k = (x.floor() as usize).min(self.segments.len().saturating_sub(1));
        if self.segments.is_empty() {
            return self.keyframes[0];
        }
        let alpha = (x - k as f64).clamp(0.0, 1.0);
        if alpha == 0.0 {
            return self.keyframes[k];
        }
        self.keyframes[k].oplus(&(self.segments[k] * alpha))
    }

    pub fn state(&self, t_b: f64, t_e: f64) -> State {
        State::new(self.pose(t_b), self.pose(t_e), t_b, t_e)
    }

    /// `Exp(t ξ)` for a body-frame twist per second.
    pub fn constant_twist(xi: Twist, duration: f64) -> Result<Self> {
        Self::from_fn(move |t| (xi * t).exp(), 0.0, duration, DEFAULT_KEYFRAME_RATE)
    }

    /// Closed loop through the corridor: rest for `rest` seconds, run an
    /// ellipse (8 m × 4 m, with height and attitude wobble) with a smooth
    /// speed profile, rest again.
    pub fn corridor_loop(duration: f64, rest: f64) -> Result<Self> {
        let moving = duration - 2.0 * rest;
        if !(moving > 0.0) {
            return Err(Error::InvalidConfig("loop needs time to move".into()));
        }
        let f = move |t: f64| {
            let x = ((t - rest) / moving).clamp(0.0, 1.0);
            // quintic smoothstep: zero velocity and acceleration at both ends
            let s = TAU * x * x * x * (x * (6.0 * x - 15.0) + 10.0);
            let position = Vector3::new(4.0 * (1.0 - s.cos()), 2.0 * s.sin(), 0.3 * (2.0 * s).sin());
            let attitude = Twist::new(
                Vector3::zeros(),
                Vector3::new(0.05 * (3.0 * s).sin(), 0.08 * (2.0 * s).sin(), 0.35 * s.sin()),
            )
            .exp();
            Pose::new(attitude.rotation, position)
        };
        Self::from_fn(f, 0.0, duration, DEFAULT_KEYFRAME_RATE)
    }

    /// Yaw oscillation `ψ(t) = a(1 − cos ω(t − rest))` with peak rate `a ω`,
    /// plus a slow forward drift.
    pub fn yaw_oscillation(duration: f64, rest: f64, peak_rate: f64, amplitude: f64, speed: f64) -> Result<Self> {
        let omega = peak_rate / amplitude;
        let f = move |t: f64| {
            let tau = (t - rest).max(0.0);
            let yaw = amplitude * (1.0 - (omega * tau).cos());
            Pose::new(
                Pose::from_axis_angle(&Vector3::z(), yaw).rotation,
                Vector3::new(speed * tau, 0.0, 0.0),
            )
        };
        Self::from_fn(f, 0.0, duration, DEFAULT_KEYFRAME_RATE)
    }
}

// ---------------------------------------------------------------------------
// Ray casting

#[derive(Clone, Debug)]
pub struct SimulatedScan {
    pub scan: Scan,
    /// `(traj(t_b), traj(t_e))`.
    pub truth: State,
}

/// Noise is Gaussian with the scene's standard deviation, truncated at 3σ.
const NOISE_CLIP: f64 = 3.0;

/// Casts `n_scans` consecutive windows of `window` seconds starting at `t0`.
///
/// Every sample draws its noise from its own stream keyed by the global sample
/// index, so results do not depend on thread scheduling.
pub fn raycast_sequence(
    scene: &Scene,
    traj: &GroundTruthTrajectory,
    pattern: &PatternConfig,
    t0: f64,
    window: f64,
    n_scans: usize,
    seed: u64,
) -> Result<Vec<SimulatedScan>> {
    pattern.validate()?;
    let mut out = Vec::with_capacity(n_scans);
    for s in 0..n_scans {
        let t_b = t0 + s as f64 * window;
        let t_e = t0 + (s + 1) as f64 * window;
        let pat = generate_pattern(pattern, t_b, window)?;
        let points: Vec<ScanPoint> = pat
            .samples
            .par_iter()
            .filter_map(|sample| cast_sample(scene, traj, pattern, sample, seed))
            .collect();
        out.push(SimulatedScan {
            scan: Scan::new(points, t_b, t_e),
            truth: traj.state(t_b, t_e),
        });
    }
    Ok(out)
}

fn cast_sample(
    scene: &Scene,
    traj: &GroundTruthTrajectory,
    pattern: &PatternConfig,
    sample: &Sample,
    seed: u64,
) -> Option<ScanPoint> {
    let pose = traj.pose(sample.t);
    let dir_world = pose.rotation * sample.direction;
    let range = scene.raycast(&pose.translation, &dir_world)?;
    let noise = if scene.range_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((sample.t * pattern.rate).round() as u64);
        let z: f64 = StandardNormal.sample(&mut rng);
        scene.range_noise * z.clamp(-NOISE_CLIP, NOISE_CLIP)
    } else {
        0.0
    };
    Some(ScanPoint::new(sample.direction * (range + noise), sample.t))
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    /// Poses matched by timestamp.
    pub matched: usize,
    /// `‖(p_last − p_first)_est − (p_last − p_first)_gt‖`; on a closed loop
    /// this is the distance between the estimated start and end positions.
    pub end_to_end: f64,
    /// RMSE of matched positions, no alignment.
    pub ate_rmse: f64,
    /// RMSE of the translational error of consecutive relative motions.
    pub rpe_trans_rmse: f64,
    /// RMSE of the rotational error of consecutive relative motions, radians.
    pub rpe_rot_rmse: f64,
    /// Largest translational error of a consecutive relative motion.
    pub max_drift: f64,
    /// Ground-truth path length over the matched poses.
    pub path_length: f64,
}

pub const MATCH_TOLERANCE: f64 = 1e-6;

/// Compares an estimate with ground truth after associating timestamps
/// within [`MATCH_TOLERANCE`]. Both are expected to share the world frame.
pub fn evaluate(est: &[StampedPose], gt: &[StampedPose]) -> Result<Metrics> {
    let mut sorted: Vec<&StampedPose> = gt.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let pairs: Vec<(Pose, Pose)> = est
        .iter()
        .filter_map(|e| {
            let i = sorted.partition_point(|g| g.t < e.t - MATCH_TOLERANCE);
            sorted
                .get(i)
                .filter(|g| (g.t - e.t).abs() <= MATCH_TOLERANCE)
                .map(|g| (e.pose, g.pose))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let n = pairs.len();
    let (e0, g0) = pairs[0];
    let (en, gn) = pairs[n - 1];
    let end_to_end = ((en.translation - e0.translation) - (gn.translation - g0.translation)).norm();
    let ate_rmse = (pairs
        .iter()
        .map(|(e, g)| (e.translation - g.translation).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let (mut st, mut sr, mut max_drift, mut path) = (0.0, 0.0, 0.0f64, 0.0);
    for w in pairs.windows(2) {
        let (ea, ga) = w[0];
        let (eb, gb) = w[1];
        let rel_e = ea.inverse() * eb;
        let rel_g = ga.inverse() * gb;
        let err = rel_g.inverse() * rel_e;
        let t = err.translation.norm();
        st += t * t;
        sr += err.angle().powi(2);
        max_drift = max_drift.max(t);
        path += (gb.translation - ga.translation).norm();
    }
    let m = (n - 1).max(1) as f64;
    Ok(Metrics {
        matched: n,
        end_to_end,
        ate_rmse,
        rpe_trans_rmse: (st / m).sqrt(),
        rpe_rot_rmse: (sr / m).sqrt(),
        max_drift,
        path_length: path,
    })
}

// ---------------------------------------------------------------------------
// Scenarios

/// A ready-made simulation: scene, trajectory, pattern and scan count.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub trajectory: GroundTruthTrajectory,
    pub pattern: PatternConfig,
    pub window: f64,
    pub n_scans: usize,
}

/// Every scenario holds still this long before moving, which covers the
/// default map seeding phase.
pub const SCENARIO_REST: f64 = 0.5;

pub const SCENARIOS: [&str; 4] = ["corridor", "loop", "fast-rotation", "sparse-noisy"];

impl Scenario {
    /// Known names: see [`SCENARIOS`]. `duration` is in seconds; scans are 0.1 s.
    pub fn named(name: &str, duration: f64) -> Result<Self> {
        let window = 0.1;
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::InvalidConfig(format!("duration must be non-negative, got {duration}")));
        }
        let n_scans = (duration / window + 1e-9).floor() as usize;
        // the trajectory needs a non-empty support even for zero scans
        let span = duration.max(window) + window;
        let (scene, trajectory, pattern) = match name {
            "corridor" => (
                Scene::corridor(),
                GroundTruthTrajectory::from_fn(
                    |t| {
                        let x = (t - SCENARIO_REST).max(0.0);
                        Pose::new(
                            Pose::from_axis_angle(&Vector3::z(), 0.2 * (0.8 * x).sin()).rotation,
                            Vector3::new(0.5 * x, 0.3 * (0.5 * x).sin(), 0.0),
                        )
                    },
                    0.0,
                    span,
                    DEFAULT_KEYFRAME_RATE,
                )?,
                PatternConfig::rosette(50.0, 100_000.0),
            ),
            "loop" => (
                Scene::corridor().with_noise(0.02),
                GroundTruthTrajectory::corridor_loop(span.max(2.0), SCENARIO_REST)?,
                PatternConfig::rosette(50.0, 100_000.0),
            ),
            "fast-rotation" => (
                Scene::furnished_corridor(),
                GroundTruthTrajectory::yaw_oscillation(span, SCENARIO_REST, PI / 2.0, 0.35, 0.3)?,
                PatternConfig::rosette(50.0, 100_000.0),
            ),
            "sparse-noisy" => (
                Scene::furnished_corridor().with_noise(0.05),
                GroundTruthTrajectory::from_fn(
                    |t| Pose::from_translation(Vector3::new(0.5 * (t - SCENARIO_REST).max(0.0), 0.0, 0.0)),
                    0.0,
                    span,
                    DEFAULT_KEYFRAME_RATE,
                )?,
                PatternConfig::rosette(50.0, 50_000.0),
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown scenario '{other}', expected one of {}",
                    SCENARIOS.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            scene,
            trajectory,
            pattern,
            window,
            n_scans,
        })
    }

    pub fn run(&self, seed: u64) -> Result<Vec<SimulatedScan>> {
        raycast_sequence(
            &self.scene,
            &self.trajectory,
            &self.pattern,
            0.0,
            self.window,
            self.n_scans,
            seed,
        )
    }
}

/// End poses of the ground-truth states, in the trajectory text convention.
pub fn ground_truth_poses(scans: &[SimulatedScan]) -> Vec<StampedPose> {
    scans
        .iter()
        .map(|s| StampedPose {
            t: s.truth.t_e,
            pose: s.truth.end,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_count_and_cone() {
        for cfg in [PatternConfig::rosette(38.4, 10_000.0), PatternConfig::raster(38.4, 10_000.0)] {
            let p = generate_pattern(&cfg, 0.0, 0.1).unwrap();
            assert_eq!(p.samples.len(), 1000);
            let half = (38.4f64 / 2.0).to_radians();
            for s in &p.samples {
                assert!((s.direction.norm() - 1.0).abs() < 1e-12);
                assert!(s.direction.x.clamp(-1.0, 1.0).acos() <= half + 1e-12);
            }
            assert!(p.samples.windows(2).all(|w| w[1].t > w[0].t));
        }
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert!(generate_pattern(&PatternConfig::rosette(50.0, 0.0), 0.0, 0.1).is_err());
    }

    #[test]
    fn wall_ahead_ranges_shrink_with_motion() {
        let scene = Scene {
            planes: vec![Plane::new(Vector3::new(10.0, 0.0, 0.0), -Vector3::x(), Vector3::y(), 50.0, 50.0)],
            range_noise: 0.0,
        };
        let traj = GroundTruthTrajectory::constant_twist(Twist::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1.0).unwrap();
        let cfg = PatternConfig::rosette(1e-3, 1000.0);
        let scans = raycast_sequence(&scene, &traj, &cfg, 0.0, 0.1, 1, 0).unwrap();
        let pts = &scans[0].scan.points;
        let first = pts.first().unwrap();
        let last = pts.last().unwrap();
        let expected = last.t - first.t;
        assert!(((first.range() - last.range()) - expected).abs() < 1e-6);
        assert!((first.range() - last.range() - 0.1).abs() < 0.002);
    }

    #[test]
    fn trajectory_interpolation_hits_keyframes() {
        let traj = GroundTruthTrajectory::corridor_loop(4.0, 0.5).unwrap();
        assert_eq!(traj.pose(0.0), Pose::identity());
        let end = traj.pose(4.0);
        assert!(end.translation.norm() < 1e-9);
        assert!(end.angle() < 1e-9);
    }
}
