//! Continuous-time motion model: SE(3) interpolation between the begin and end
//! poses of a scan, per-point de-skewing and constant-velocity prediction.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::se3::{Pose, Twist};

/// A single return, expressed in the sensor frame at its own sample instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    pub position: Vector3<f64>,
    pub t: f64,
}

impl ScanPoint {
    pub fn new(position: Vector3<f64>, t: f64) -> Self {
        Self { position, t }
    }

    pub fn range(&self) -> f64 {
        self.position.norm()
    }
}

/// Points accumulated over the half-open window `[t_b, t_e)`, sorted by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scan {
    pub points: Vec<ScanPoint>,
    pub t_b: f64,
    pub t_e: f64,
    /// Set when the source carried no per-point stamps and they were spread
    /// linearly across the window by index.
    pub synthetic_timestamps: bool,
}

impl Scan {
    pub fn new(points: Vec<ScanPoint>, t_b: f64, t_e: f64) -> Self {
        Self {
            points,
            t_b,
            t_e,
            synthetic_timestamps: false,
        }
    }

    /// Builds a scan from unstamped positions, assigning `t_i` linearly by index.
    pub fn with_index_timestamps(positions: Vec<Vector3<f64>>, t_b: f64, t_e: f64) -> Self {
        let n = positions.len().max(1) as f64;
        let dt = t_e - t_b;
        let points = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| ScanPoint::new(p, t_b + dt * i as f64 / n))
            .collect();
        Self {
            points,
            t_b,
            t_e,
            synthetic_timestamps: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.t_e - self.t_b
    }

    /// Keeps only points whose range lies strictly inside `(r_min, r_max)`.
    pub fn range_gated(&self, r_min: f64, r_max: f64) -> Scan {
        Scan {
            points: self
                .points
                .iter()
                .filter(|p| {
                    let r = p.range();
                    r > r_min && r < r_max && r.is_finite()
                })
                .copied()
                .collect(),
            t_b: self.t_b,
            t_e: self.t_e,
            synthetic_timestamps: self.synthetic_timestamps,
        }
    }
}

/// The 12-DoF optimization variable: poses at the scan's begin and end instants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub begin: Pose,
    pub end: Pose,
    pub t_b: f64,
    pub t_e: f64,
}

impl State {
    pub fn new(begin: Pose, end: Pose, t_b: f64, t_e: f64) -> Self {
        Self {
            begin,
            end,
            t_b,
            t_e,
        }
    }

    pub fn identity(t_b: f64, t_e: f64) -> Self {
        Self::new(Pose::identity(), Pose::identity(), t_b, t_e)
    }

    /// `τ = T_e ⊖ T_b`.
    pub fn tangent(&self) -> Twist {
        self.end.ominus(&self.begin)
    }

    /// Normalized position of `t` inside the window, unclamped.
    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        (t - self.t_b) / (self.t_e - self.t_b)
    }

    /// `T_b · Exp(α τ)` with `α = (t − t_b)/(t_e − t_b)`; no extrapolation.
    pub fn interpolate(&self, t: f64) -> Result<Pose> {
        if !(t >= self.t_b && t <= self.t_e) {
            return Err(Error::OutsideWindow {
                t,
                t_b: self.t_b,
                t_e: self.t_e,
            });
        }
        if t == self.t_b {
            return Ok(self.begin);
        }
        Ok(self.interpolate_alpha(&self.tangent(), self.alpha(t)))
    }

    #[inline]
    pub fn interpolate_alpha(&self, tangent: &Twist, alpha: f64) -> Pose {
        self.begin.oplus(&(*tangent * alpha))
    }

    /// Applies `(ξ_b, ξ_e)` with the right `⊕` to both poses.
    pub fn oplus(&self, delta_begin: &Twist, delta_end: &Twist) -> State {
        State {
            begin: self.begin.oplus(delta_begin).normalized(),
            end: self.end.oplus(delta_end).normalized(),
            ..*self
        }
    }
}

/// `T_WLi · p_i` for every point, recomputed from the raw positions.
///
/// Stamps outside the window are clamped to it with a warning.
pub fn compensate(scan: &Scan, state: &State) -> Vec<Vector3<f64>> {
    let tangent = state.tangent();
    let clamped = scan
        .points
        .iter()
        .filter(|p| !(p.t >= state.t_b && p.t <= state.t_e))
        .count();
    if clamped > 0 {
        log::warn!(
            "{clamped} point stamps fall outside [{}, {}] and were clamped",
            state.t_b,
            state.t_e
        );
    }
    scan.points
        .par_iter()
        .map(|p| {
            let alpha = state.alpha(p.t).clamp(0.0, 1.0);
            state.interpolate_alpha(&tangent, alpha).transform_point(&p.position)
        })
        .collect()
}

/// Constant-velocity prediction for the next window, starting where `prev` ended.
pub fn predict_state(prev: &State, t_b: f64, t_e: f64) -> State {
    let begin = prev.end;
    let end = (begin * (prev.begin.inverse() * prev.end)).normalized();
    State::new(begin, end, t_b, t_e)
}
