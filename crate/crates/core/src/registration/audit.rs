//! Finite-difference audit of the analytic Jacobians on random configurations.
//!
//! Residual values on the finite-difference side are recomputed from the
//! plain group operations rather than the cached interpolation basis.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::residuals::{residual_loc, residual_reg, residual_vel, Correspondence};
use crate::motion::{ScanPoint, State};
use crate::se3::Twist;

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Deliberate corruption of the analytic side, to prove the audit can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates the end-pose block of the registration Jacobian.
    FlipRegistrationSign,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub trials: usize,
    pub max_error_reg: f64,
    pub max_error_loc: f64,
    pub max_error_vel: f64,
    /// Trials in which any of the three Jacobians exceeded [`TOLERANCE`].
    pub failures: usize,
}

impl AuditReport {
    pub fn max_error(&self) -> f64 {
        self.max_error_reg.max(self.max_error_loc).max(self.max_error_vel)
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

/// `‖J − J_fd‖_F / ‖J_fd‖_F`, falling back to the absolute error when the
/// reference vanishes.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let diff = (analytic - numeric).norm();
    let scale = numeric.norm();
    if scale > 1e-12 {
        diff / scale
    } else {
        diff
    }
}

fn random_twist(rng: &mut ChaCha8Rng, trans: f64, rot: f64) -> Twist {
    let mut v = [0.0; 6];
    for (i, x) in v.iter_mut().enumerate() {
        let scale = if i < 3 { trans } else { rot };
        *x = rng.random_range(-scale..scale);
    }
    Twist::from_slice(&v)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn perturbed(state: &State, k: usize, eps: f64) -> State {
    let mut d = [0.0; 6];
    d[k % 6] = eps;
    let delta = Twist::from_slice(&d);
    if k < 6 {
        state.oplus(&delta, &Twist::zero())
    } else {
        state.oplus(&Twist::zero(), &delta)
    }
}

/// Central differences of a vector residual over the 12 state coordinates.
pub fn numeric_jacobian<F>(state: &State, rows: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&State) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(rows, 12);
    for k in 0..12 {
        let plus = f(&perturbed(state, k, FD_STEP));
        let minus = f(&perturbed(state, k, -FD_STEP));
        for r in 0..rows {
            jac[(r, k)] = (plus[r] - minus[r]) / (2.0 * FD_STEP);
        }
    }
    jac
}

/// Registration residual from `Exp` and the raw interpolation rule.
fn reference_reg(state: &State, point: &ScanPoint, corr: &Correspondence) -> f64 {
    let alpha = state.alpha(point.t);
    let pose = state.begin * (state.tangent() * alpha).exp();
    corr.normal.dot(&(pose.transform_point(&point.position) - corr.centroid))
}

fn reference_loc(state: &State, prev: &State) -> Vec<f64> {
    (prev.end.inverse() * state.begin).log().to_vector().iter().copied().collect()
}

fn reference_vel(state: &State, prev: &State) -> Vec<f64> {
    let cur = (state.begin.inverse() * state.end).log();
    let old = (prev.begin.inverse() * prev.end).log();
    (cur - old).to_vector().iter().copied().collect()
}

/// Compares all three analytic Jacobians with central differences on `trials`
/// random configurations drawn from `seed`.
pub fn jacobian_audit(seed: u64, trials: usize, fault: Option<Fault>) -> AuditReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AuditReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let begin = random_twist(&mut rng, 5.0, 1.5).exp();
        // per-scan motion stays well inside the injectivity radius of Log
        let end = begin * random_twist(&mut rng, 1.0, 0.6).exp();
        let state = State::new(begin, end, 0.0, 0.1);
        let prev_begin = begin * random_twist(&mut rng, 1.0, 0.6).exp();
        let prev = State::new(prev_begin, prev_begin * random_twist(&mut rng, 1.0, 0.6).exp(), -0.1, 0.0);

        let point = ScanPoint::new(
            Vector3::new(
                rng.random_range(1.0..20.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
            rng.random_range(0.0..0.1),
        );
        let corr = Correspondence {
            centroid: Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ),
            normal: random_unit(&mut rng),
            mass: 1.0,
            neighbors: 1,
        };

        let (_, j_reg) = residual_reg(&point, &corr, &state, true);
        let mut a_reg = DMatrix::from_row_slice(1, 12, j_reg.as_slice());
        if fault == Some(Fault::FlipRegistrationSign) {
            for k in 6..12 {
                a_reg[(0, k)] = -a_reg[(0, k)];
            }
        }
        let n_reg = numeric_jacobian(&state, 1, |s| vec![reference_reg(s, &point, &corr)]);
        let e_reg = relative_error(&a_reg, &n_reg);

        let (_, j_loc) = residual_loc(&state, &prev);
        let a_loc = DMatrix::from_column_slice(6, 12, j_loc.as_slice());
        let n_loc = numeric_jacobian(&state, 6, |s| reference_loc(s, &prev));
        let e_loc = relative_error(&a_loc, &n_loc);

        let (_, j_vel) = residual_vel(&state, &prev);
        let a_vel = DMatrix::from_column_slice(6, 12, j_vel.as_slice());
        let n_vel = numeric_jacobian(&state, 6, |s| reference_vel(s, &prev));
        let e_vel = relative_error(&a_vel, &n_vel);

        report.max_error_reg = report.max_error_reg.max(e_reg);
        report.max_error_loc = report.max_error_loc.max(e_loc);
        report.max_error_vel = report.max_error_vel.max(e_vel);
        if !(e_reg < TOLERANCE && e_loc < TOLERANCE && e_vel < TOLERANCE) {
            report.failures += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_passes_and_detects_fault() {
        let ok = jacobian_audit(7, 20, None);
        assert!(ok.passed(), "{ok:?}");
        let bad = jacobian_audit(7, 20, Some(Fault::FlipRegistrationSign));
        assert_eq!(bad.failures, 20);
    }

    #[test]
    fn identity_pose_reference() {
        let s = State::identity(0.0, 1.0);
        assert_eq!(reference_loc(&s, &s), vec![0.0; 6]);
    }
}
