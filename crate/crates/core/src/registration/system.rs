//! Normal equations of the objective and the damped Gauss-Newton update.

use nalgebra::{Cholesky, Const, SMatrix, SVector};
use rayon::prelude::*;

use super::residuals::{residual_loc, residual_vel_with, Correspondence, PointLinearizer, Row12};
use super::{Reduction, RegistrationConfig};
use crate::error::{Error, Result};
use crate::motion::{Scan, State};
use crate::se3::Twist;

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;

/// Points per partial sum in [`Reduction::Parallel`]. Fixed so that the
/// summation tree does not depend on the thread count.
const CHUNK: usize = 1024;

const DAMPING_START: f64 = 1e-6;
const DAMPING_MAX: f64 = 1e-2;

/// Accumulated `H`, `b` and objective `E` for the current linearization point.
#[derive(Clone, Debug, PartialEq)]
pub struct GnSystem {
    pub h: Matrix12,
    pub b: Vector12,
    pub objective: f64,
    /// Valid point residuals plus six per active motion constraint.
    pub constraints: usize,
    /// Only the begin pose is free (rigid, single-pose registration).
    pub rigid: bool,
}

impl GnSystem {
    fn zeros(rigid: bool) -> Self {
        Self {
            h: Matrix12::zeros(),
            b: Vector12::zeros(),
            objective: 0.0,
            constraints: 0,
            rigid,
        }
    }

    fn dof(&self) -> usize {
        if self.rigid {
            6
        } else {
            12
        }
    }

    #[inline]
    fn add_scalar(&mut self, w: f64, r: f64, j: &Row12) {
        for c in 0..12 {
            let wj = w * j[c];
            if wj == 0.0 {
                continue;
            }
            for row in 0..=c {
                self.h[(row, c)] += wj * j[row];
            }
            self.b[c] += wj * r;
        }
        self.objective += w * r * r;
        self.constraints += 1;
    }

    fn merge(&mut self, other: &GnSystem) {
        self.h += other.h;
        self.b += other.b;
        self.objective += other.objective;
        self.constraints += other.constraints;
    }

    fn symmetrize(&mut self) {
        for c in 0..12 {
            for r in (c + 1)..12 {
                self.h[(r, c)] = self.h[(c, r)];
            }
        }
    }
}

/// `c = w/(1−w) · J/M`, the uniform-outlier term of the mixture weight.
pub fn outlier_constant(outlier_weight: f64, neighbors: usize, scan_size: usize) -> f64 {
    outlier_weight / (1.0 - outlier_weight) * neighbors as f64 / scan_size as f64
}

/// Per-point weight `(1/M) · m0 / (m0 + c)`; plain `1/M` without the mixture model.
pub fn point_weight(corr: &Correspondence, scan_size: usize, cfg: &RegistrationConfig) -> f64 {
    let inv_m = 1.0 / scan_size as f64;
    if !cfg.gmm_enabled {
        return inv_m;
    }
    let c = outlier_constant(cfg.outlier_weight, corr.neighbors, scan_size);
    inv_m * corr.mass / (corr.mass + c)
}

/// Normalized time of each point used by the residual; zero for rigid registration.
#[inline]
pub(crate) fn point_alpha(state: &State, t: f64, ct_enabled: bool) -> f64 {
    if ct_enabled {
        state.alpha(t).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Accumulates the registration terms and the motion constraints without the
/// degeneracy check.
pub fn accumulate(
    scan: &Scan,
    corrs: &[Option<Correspondence>],
    state: &State,
    prev: Option<&State>,
    cfg: &RegistrationConfig,
) -> GnSystem {
    assert_eq!(scan.len(), corrs.len(), "one correspondence slot per point");
    let rigid = !cfg.ct_enabled;
    let lin = PointLinearizer::new(state);
    let m = scan.len();

    let chunk_sum = |range: std::ops::Range<usize>| {
        let mut sys = GnSystem::zeros(rigid);
        for i in range {
            if let Some(corr) = &corrs[i] {
                let p = &scan.points[i];
                let alpha = point_alpha(state, p.t, cfg.ct_enabled);
                let (r, j) = lin.residual(&p.position, alpha, corr);
                sys.add_scalar(point_weight(corr, m, cfg), r, &j);
            }
        }
        sys
    };

    let mut sys = match cfg.reduction {
        Reduction::Sequential => chunk_sum(0..m),
        Reduction::Parallel => {
            let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
            let parts: Vec<GnSystem> = starts
                .par_iter()
                .map(|&s| chunk_sum(s..(s + CHUNK).min(m)))
                .collect();
            let mut total = GnSystem::zeros(rigid);
            for part in &parts {
                total.merge(part);
            }
            total
        }
    };

    if let Some(prev) = prev {
        if cfg.lambda_loc > 0.0 {
            let (r, j) = residual_loc(state, prev);
            add_block(&mut sys, cfg.lambda_loc, &r, &j);
        }
        // The rigid variant has no velocity inside the scan to constrain.
        if cfg.lambda_vel > 0.0 && !rigid {
            let (r, j) = residual_vel_with(
                &lin.basis.tangent,
                &lin.basis.jl_inv,
                &lin.basis.jr_inv,
                prev,
            );
            add_block(&mut sys, cfg.lambda_vel, &r, &j);
        }
    }
    sys.symmetrize();
    sys
}

fn add_block(
    sys: &mut GnSystem,
    lambda: f64,
    r: &SVector<f64, 6>,
    j: &SMatrix<f64, 6, 12>,
) {
    let jt = j.transpose();
    let mut upper = jt * j * lambda;
    // keep only the upper triangle; `symmetrize` mirrors it
    for c in 0..12 {
        for row in (c + 1)..12 {
            upper[(row, c)] = 0.0;
        }
    }
    sys.h += upper;
    sys.b += jt * r * lambda;
    sys.objective += lambda * r.norm_squared();
    sys.constraints += 6;
}

/// Builds the normal equations, refusing systems with fewer constraints than
/// free parameters.
pub fn build_system(
    scan: &Scan,
    corrs: &[Option<Correspondence>],
    state: &State,
    prev: Option<&State>,
    cfg: &RegistrationConfig,
) -> Result<GnSystem> {
    let sys = accumulate(scan, corrs, state, prev, cfg);
    if sys.constraints < sys.dof() {
        return Err(Error::DegenerateSystem {
            constraints: sys.constraints,
        });
    }
    Ok(sys)
}

/// Solves `H x = −b`, first undamped, then with `μ·diag(H)` escalated by ×10.
fn damped_solve<const N: usize>(
    h: &SMatrix<f64, N, N>,
    b: &SVector<f64, N>,
) -> Result<SVector<f64, N>> {
    let finite = |x: &SVector<f64, N>| x.iter().all(|v| v.is_finite());
    if let Some(chol) = Cholesky::<f64, Const<N>>::new(*h) {
        let x = -chol.solve(b);
        if finite(&x) {
            return Ok(x);
        }
    }
    let mut mu = DAMPING_START;
    while mu <= DAMPING_MAX * (1.0 + 1e-9) {
        let mut damped = *h;
        for i in 0..N {
            damped[(i, i)] += mu * h[(i, i)];
        }
        if let Some(chol) = Cholesky::<f64, Const<N>>::new(damped) {
            let x = -chol.solve(b);
            if finite(&x) {
                log::debug!("normal equations solved with damping {mu:e}");
                return Ok(x);
            }
        }
        mu *= 10.0;
    }
    Err(Error::SingularSystem { damping: DAMPING_MAX })
}

/// Gauss-Newton increment `Δs = [Δξ_b; Δξ_e]`. The rigid variant solves for
/// the begin pose only and leaves `Δξ_e` zero.
pub fn solve_step(system: &GnSystem) -> Result<Vector12> {
    if system.rigid {
        let h = system.h.fixed_view::<6, 6>(0, 0).into_owned();
        let b = system.b.fixed_rows::<6>(0).into_owned();
        let dx = damped_solve(&h, &b)?;
        let mut full = Vector12::zeros();
        full.fixed_rows_mut::<6>(0).copy_from(&dx);
        return Ok(full);
    }
    damped_solve(&system.h, &system.b)
}

/// `T_b ← T_b ⊕ Δξ_b`, `T_e ← T_e ⊕ Δξ_e`.
pub fn apply_step(state: &State, dx: &Vector12) -> State {
    let db = Twist::from_vector(&dx.fixed_rows::<6>(0).into_owned());
    let de = Twist::from_vector(&dx.fixed_rows::<6>(6).into_owned());
    state.oplus(&db, &de)
}

/// One Gauss-Newton step. Returns the updated state and `‖Δs‖`.
pub fn solve_and_update(system: &GnSystem, state: &State) -> Result<(State, f64)> {
    let dx = solve_step(system)?;
    Ok((apply_step(state, &dx), dx.norm()))
}
