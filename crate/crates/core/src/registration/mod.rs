//! Continuous-time filter registration of a scan against the range-image map.
//!
//! Each EM iteration de-skews the scan with the current state, gathers
//! Gaussian moments from the map (E step) and takes one Gauss-Newton step on
//! the mixture objective plus the motion constraints (M step).

pub mod audit;
mod moments;
mod residuals;
mod system;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use moments::{gaussian_moments, nearest_pixel_moments, GaussianKernel, Moments};
pub use residuals::{
    residual_loc, residual_reg, residual_vel, Correspondence, InterpolationBasis, Jacobian6x12,
    PointLinearizer, Row12,
};
pub use system::{
    accumulate, apply_step, build_system, outlier_constant, point_weight, solve_and_update,
    solve_step, GnSystem, Matrix12, Vector12,
};

use crate::error::{Error, Result};
use crate::motion::{Scan, State};
use crate::range_image::{VertexNormalMaps, DEFAULT_NORMAL_PATCH};
use moments::gaussian_moments_with;

/// How `H` and `b` are summed over points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// One pass in point order.
    Sequential,
    /// Fixed-size chunks summed in parallel, then combined in chunk order.
    #[default]
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    /// Isotropic Gaussian standard deviation in meters.
    pub sigma: f64,
    /// Mixture weight of the uniform outlier component.
    pub outlier_weight: f64,
    /// Side length of the filter window in pixels (odd).
    pub window: usize,
    pub lambda_loc: f64,
    pub lambda_vel: f64,
    pub max_em_iters: usize,
    /// Stop once `‖Δs‖` falls below this.
    pub convergence_eps: f64,
    /// Maximum surface variation accepted for a normal.
    pub curvature_threshold: f64,
    /// Side length of the pixel patch used for normal estimation (odd).
    pub normal_patch: usize,
    /// Interpolate each point between the begin and end poses. When off, all
    /// points are registered rigidly at the begin pose.
    pub ct_enabled: bool,
    /// Use Gaussian moments. When off, each point is matched to the nearest
    /// normal-carrying pixel with a plain point-to-plane residual.
    pub gmm_enabled: bool,
    /// Gate on the 3D distance of the nearest-pixel association.
    pub icp_max_distance: f64,
    /// Registration is flagged divergent below this share of valid points.
    pub min_valid_ratio: f64,
    pub reduction: Reduction,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            outlier_weight: 0.2,
            window: 7,
            lambda_loc: 0.01,
            lambda_vel: 0.01,
            max_em_iters: 30,
            convergence_eps: 1e-6,
            curvature_threshold: 0.055,
            normal_patch: DEFAULT_NORMAL_PATCH,
            ct_enabled: true,
            gmm_enabled: true,
            icp_max_distance: 1.0,
            min_valid_ratio: 0.1,
            reduction: Reduction::Parallel,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.outlier_weight > 0.0 && self.outlier_weight < 1.0) {
            return bad(format!("outlier weight must lie in (0, 1), got {}", self.outlier_weight));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return bad(format!("window must be odd and at least 3, got {}", self.window));
        }
        if self.normal_patch < 3 || self.normal_patch % 2 == 0 {
            return bad(format!("normal patch must be odd and at least 3, got {}", self.normal_patch));
        }
        if !(self.lambda_loc >= 0.0 && self.lambda_vel >= 0.0) {
            return bad("constraint weights must be non-negative".into());
        }
        if self.max_em_iters == 0 {
            return bad("max_em_iters must be at least 1".into());
        }
        if !(self.convergence_eps > 0.0) {
            return bad("convergence_eps must be positive".into());
        }
        if !(self.curvature_threshold > 0.0) {
            return bad("curvature threshold must be positive".into());
        }
        if !(self.icp_max_distance > 0.0) {
            return bad("icp_max_distance must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_valid_ratio) {
            return bad("min_valid_ratio must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Gauss-Newton steps taken.
    pub iterations: usize,
    /// Objective at the initial state with its own associations.
    pub initial_objective: f64,
    /// Objective at the returned state with re-computed associations.
    pub final_objective: f64,
    /// Share of scan points with a valid correspondence at the returned state.
    pub valid_ratio: f64,
    pub last_step: f64,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub state: State,
    pub diagnostics: Diagnostics,
}

/// E step: world-frame correspondences of every scan point under `state`.
pub fn correspondences(
    scan: &Scan,
    state: &State,
    maps: &VertexNormalMaps,
    cfg: &RegistrationConfig,
) -> Vec<Option<Correspondence>> {
    let lin = PointLinearizer::new(state);
    let origin = *maps.origin();
    let to_map = origin.inverse();
    let kernel = GaussianKernel::new(cfg.sigma);
    scan.points
        .par_iter()
        .map(|p| {
            let alpha = system::point_alpha(state, p.t, cfg.ct_enabled);
            let world = lin.pose_at(alpha).transform_point(&p.position);
            let local = to_map.transform_point(&world);
            let m = if cfg.gmm_enabled {
                gaussian_moments_with(&local, maps, cfg.window, &kernel)
            } else {
                nearest_pixel_moments(&local, maps, cfg)
            };
            m.valid.then(|| Correspondence {
                centroid: origin.transform_point(&m.centroid()),
                normal: origin.transform_vector(&m.normal),
                mass: m.m0,
                neighbors: m.neighbors,
            })
        })
        .collect()
}

fn valid_ratio(corrs: &[Option<Correspondence>]) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    corrs.iter().filter(|c| c.is_some()).count() as f64 / corrs.len() as f64
}

/// The rigid variant carries a single pose; the end pose follows from
/// extrapolating the begin-to-begin motion of the previous scan.
fn rigid_end(state: &State, prev: Option<&State>) -> State {
    let end = match prev {
        Some(p) => state.begin * (p.begin.inverse() * state.begin),
        None => state.begin,
    };
    State { end, ..*state }
}

/// Step halvings tried before a step that raises the objective is given up.
pub const MAX_HALVINGS: usize = 1;

/// Runs the EM loop from `initial`. `prev` is the previous scan's state; it
/// drives the motion constraints and is `None` for the first registration.
///
/// A Gauss-Newton step is kept only if the objective, re-evaluated with fresh
/// associations at the new state, does not exceed the objective at the last
/// kept state. Otherwise the step is halved. Re-association makes the plain
/// iteration prone to cycling between neighboring pixel assignments; the
/// check bounds that, and the returned state never has a higher objective
/// than the initial one.
pub fn register_scan(
    scan: &Scan,
    maps: &VertexNormalMaps,
    initial: &State,
    prev: Option<&State>,
    cfg: &RegistrationConfig,
) -> Registration {
    let finish = |state: State, objective: f64, mut diag: Diagnostics| {
        diag.final_objective = objective;
        Registration { state, diagnostics: diag }
    };
    let diverged = |mut diag: Diagnostics| {
        diag.diverged = true;
        diag.converged = false;
        Registration {
            state: *initial,
            diagnostics: diag,
        }
    };
    let mut diag = Diagnostics::default();
    if scan.is_empty() {
        return diverged(diag);
    }

    let step_from = |state: &State, dx: &Vector12| {
        let next = apply_step(state, dx);
        if cfg.ct_enabled {
            next
        } else {
            rigid_end(&next, prev)
        }
    };

    // last kept state with its objective and valid ratio, the full step taken
    // from it and the fraction of that step being tried
    let mut kept: Option<(State, f64, f64, Vector12, f64)> = None;
    let mut trial = *initial;
    let mut halvings = 0;
    for _ in 0..cfg.max_em_iters {
        let corrs = correspondences(scan, &trial, maps, cfg);
        let ratio = valid_ratio(&corrs);
        let system = if ratio < cfg.min_valid_ratio {
            Err(Error::InsufficientCorrespondences { ratio })
        } else {
            build_system(scan, &corrs, &trial, prev, cfg)
        };
        let system = match system {
            Ok(s) => s,
            Err(e) if kept.is_some() => {
                // treat a step into a region without support like an ascent
                log::debug!("rejected step: {e}");
                let (base, objective, kept_ratio, dx, scale) = kept.as_mut().expect("checked above");
                if halvings == MAX_HALVINGS {
                    diag.converged = true;
                    diag.valid_ratio = *kept_ratio;
                    return finish(*base, *objective, diag);
                }
                *scale *= 0.5;
                halvings += 1;
                trial = step_from(base, &(*dx * *scale));
                continue;
            }
            Err(e) => {
                log::warn!("registration aborted: {e}");
                diag.valid_ratio = ratio;
                return diverged(diag);
            }
        };
        if kept.is_none() {
            diag.initial_objective = system.objective;
        }
        if let Some((base, objective, kept_ratio, dx, scale)) = kept.as_mut() {
            if system.objective > *objective {
                if halvings == MAX_HALVINGS || (*dx * (*scale * 0.5)).norm() < cfg.convergence_eps {
                    diag.converged = true;
                    diag.valid_ratio = *kept_ratio;
                    return finish(*base, *objective, diag);
                }
                *scale *= 0.5;
                halvings += 1;
                trial = step_from(base, &(*dx * *scale));
                continue;
            }
        }
        let dx = match solve_step(&system) {
            Ok(dx) => dx,
            Err(e) => {
                log::warn!("registration aborted: {e}");
                return diverged(diag);
            }
        };
        diag.iterations += 1;
        diag.last_step = dx.norm();
        diag.valid_ratio = ratio;
        halvings = 0;
        if diag.last_step < cfg.convergence_eps {
            diag.converged = true;
            return finish(trial, system.objective, diag);
        }
        kept = Some((trial, system.objective, ratio, dx, 1.0));
        trial = step_from(&trial, &dx);
    }

    // Out of iterations: the pending trial state has not been evaluated yet.
    let corrs = correspondences(scan, &trial, maps, cfg);
    let ratio = valid_ratio(&corrs);
    let objective = accumulate(scan, &corrs, &trial, prev, cfg).objective;
    match kept {
        Some((base, kept_objective, kept_ratio, _, _))
            if !(ratio >= cfg.min_valid_ratio && objective <= kept_objective) =>
        {
            diag.valid_ratio = kept_ratio;
            finish(base, kept_objective, diag)
        }
        _ => {
            diag.valid_ratio = ratio;
            finish(trial, objective, diag)
        }
    }
}
