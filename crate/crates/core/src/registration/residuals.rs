//! Residuals of the continuous-time objective and their analytic Jacobians.
//!
//! The per-point Jacobian needs `Jr(α τ)` and `Jr((α − 1) τ)` for every point.
//! Both are polynomials in the scale factor with angle-dependent scalar
//! coefficients, so [`InterpolationBasis`] precomputes the matrix products of
//! `τ` once per state and each point only evaluates a handful of scalars.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector6};

use crate::motion::{ScanPoint, State};
use crate::se3::{left_jacobian_inv, right_jacobian_inv, skew, Matrix6f, Pose, Twist};

pub type Row12 = SVector<f64, 12>;
pub type Jacobian6x12 = SMatrix<f64, 6, 12>;

/// A correspondence expressed in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    /// `m1 / m0`, the density-weighted centroid.
    pub centroid: Vector3<f64>,
    /// Averaged unit normal.
    pub normal: Vector3<f64>,
    /// Density mass `m0`.
    pub mass: f64,
    /// Number of map points that contributed.
    pub neighbors: usize,
}

/// Angle-dependent scalar coefficients, duplicated from `se3` for the scaled evaluation.
#[derive(Clone, Copy)]
struct Scalars {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e: f64,
}

impl Scalars {
    fn new(theta: f64) -> Self {
        let t2 = theta * theta;
        let (a, b) = if theta < crate::se3::SMALL_ANGLE {
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            let half = (theta * 0.5).sin() / (theta * 0.5);
            (theta.sin() / theta, 0.5 * half * half)
        };
        if theta < 0.2 {
            let t4 = t2 * t2;
            let t6 = t4 * t2;
            let t8 = t4 * t4;
            Self {
                a,
                b,
                c: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362_880.0 + t8 / 39_916_800.0,
                d: 1.0 / 24.0 - t2 / 720.0 + t4 / 40_320.0 - t6 / 3_628_800.0
                    + t8 / 479_001_600.0,
                e: 1.0 / 120.0 - t2 / 2520.0 + t4 / 120_960.0 - t6 / 9_979_200.0
                    + t8 / 1_245_404_160.0,
            }
        } else {
            let (s, c) = theta.sin_cos();
            let t4 = t2 * t2;
            Self {
                a,
                b,
                c: (theta - s) / (t2 * theta),
                d: (t2 + 2.0 * c - 2.0) / (2.0 * t4),
                e: (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
            }
        }
    }
}

/// Products of the skew matrices of a fixed tangent `τ`, reused for every
/// scaled evaluation `Exp(s τ)` and `Jl(s τ)`.
#[derive(Clone, Debug)]
pub struct InterpolationBasis {
    pub tangent: Twist,
    theta: f64,
    t1: Matrix3<f64>,
    t2: Matrix3<f64>,
    rho_t1: Vector3<f64>,
    rho_t2: Vector3<f64>,
    // Q(ρ, θ) = ½P + C(TP + PT + TPT) + D(TTP + PTT − 3TPT) + E(TPTT + TTPT)
    q1: Matrix3<f64>,
    q2: Matrix3<f64>,
    q3: Matrix3<f64>,
    q4: Matrix3<f64>,
    q5: Matrix3<f64>,
    pub jl_inv: Matrix6f,
    pub jr_inv: Matrix6f,
}

impl InterpolationBasis {
    pub fn new(tangent: Twist) -> Self {
        let t = skew(&tangent.phi);
        let p = skew(&tangent.rho);
        let tp = t * p;
        let pt = p * t;
        let tpt = tp * t;
        Self {
            tangent,
            theta: tangent.phi.norm(),
            t1: t,
            t2: t * t,
            rho_t1: t * tangent.rho,
            rho_t2: t * (t * tangent.rho),
            q1: p * 0.5,
            q2: tp + pt,
            q3: tpt,
            q4: t * tp + pt * t - tpt * 3.0,
            q5: tpt * t + t * tpt,
            jl_inv: left_jacobian_inv(&tangent),
            jr_inv: right_jacobian_inv(&tangent),
        }
    }

    pub fn for_state(state: &State) -> Self {
        Self::new(state.tangent())
    }

    /// `Exp(s τ)`.
    pub fn exp_scaled(&self, s: f64) -> Pose {
        let k = Scalars::new(s.abs() * self.theta);
        let s2 = s * s;
        let rotation = Matrix3::identity() + self.t1 * (k.a * s) + self.t2 * (k.b * s2);
        let rho = self.tangent.rho;
        let translation = (rho + self.rho_t1 * (k.b * s) + self.rho_t2 * (k.c * s2)) * s;
        Pose::new(rotation, translation)
    }

    /// `Jl(s τ)` as its two distinct 3×3 blocks (diagonal, upper-right).
    fn left_jacobian_scaled(&self, s: f64) -> (Matrix3<f64>, Matrix3<f64>) {
        let k = Scalars::new(s.abs() * self.theta);
        let s2 = s * s;
        let s3 = s2 * s;
        let diag = Matrix3::identity() + self.t1 * (k.b * s) + self.t2 * (k.c * s2);
        let q = self.q1 * s
            + self.q2 * (k.c * s2)
            + self.q3 * (k.c * s3)
            + self.q4 * (k.d * s3)
            + self.q5 * (k.e * s2 * s2);
        (diag, q)
    }

    /// `Jl(s τ)` as a full 6×6 matrix.
    pub fn left_jacobian(&self, s: f64) -> Matrix6f {
        let (d, q) = self.left_jacobian_scaled(s);
        let mut m = Matrix6f::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&d);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&d);
        m
    }

    /// Row vector `g · Jr(s τ)`, using `Jr(s τ) = Jl(−s τ)`.
    fn row_times_right_jacobian(&self, g: &Vector6<f64>, s: f64) -> Vector6<f64> {
        let (d, q) = self.left_jacobian_scaled(-s);
        let g1 = g.fixed_rows::<3>(0);
        let g2 = g.fixed_rows::<3>(3);
        let top = d.tr_mul(&g1);
        let bottom = q.tr_mul(&g1) + d.tr_mul(&g2);
        Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
    }
}

/// Reuses one [`InterpolationBasis`] for every point of a scan.
#[derive(Clone, Debug)]
pub struct PointLinearizer {
    pub state: State,
    pub basis: InterpolationBasis,
}

impl PointLinearizer {
    pub fn new(state: &State) -> Self {
        Self {
            state: *state,
            basis: InterpolationBasis::for_state(state),
        }
    }

    /// Pose at normalized time `alpha`.
    #[inline]
    pub fn pose_at(&self, alpha: f64) -> Pose {
        self.state.begin * self.basis.exp_scaled(alpha)
    }

    /// Point-to-plane residual and its 1×12 Jacobian with respect to
    /// `[ξ_b, ξ_e]`, for a raw point observed at normalized time `alpha`.
    pub fn residual(
        &self,
        raw: &Vector3<f64>,
        alpha: f64,
        corr: &Correspondence,
    ) -> (f64, Row12) {
        let pose = self.pose_at(alpha);
        let world = pose.transform_point(raw);
        let r = corr.normal.dot(&(world - corr.centroid));

        // nᵀ [R, −R[p]ₓ] = [a, p × a] with a = Rᵀn
        let a = pose.rotation.tr_mul(&corr.normal);
        let pa = raw.cross(&a);
        let g = Vector6::new(a.x, a.y, a.z, pa.x, pa.y, pa.z);

        let mut jac = Row12::zeros();
        if alpha != 1.0 {
            let gb = self.basis.row_times_right_jacobian(&g, alpha - 1.0);
            let jb = self.basis.jl_inv.tr_mul(&gb) * (1.0 - alpha);
            jac.fixed_rows_mut::<6>(0).copy_from(&jb);
        }
        if alpha != 0.0 {
            let ge = self.basis.row_times_right_jacobian(&g, alpha);
            let je = self.basis.jr_inv.tr_mul(&ge) * alpha;
            jac.fixed_rows_mut::<6>(6).copy_from(&je);
        }
        (r, jac)
    }
}

/// Registration residual `nᵀ(p(s) − m1/m0)` and its Jacobian.
///
/// With `ct_enabled == false` every point is treated as observed at the begin
/// pose (`α = 0`).
pub fn residual_reg(
    point: &ScanPoint,
    corr: &Correspondence,
    state: &State,
    ct_enabled: bool,
) -> (f64, Row12) {
    let alpha = if ct_enabled {
        state.alpha(point.t).clamp(0.0, 1.0)
    } else {
        0.0
    };
    PointLinearizer::new(state).residual(&point.position, alpha, corr)
}

/// Location consistency: `r = T_b ⊖ T_e_prev`, `J = [Jr⁻¹(r), 0]`.
pub fn residual_loc(state: &State, prev: &State) -> (Vector6<f64>, Jacobian6x12) {
    let r = state.begin.ominus(&prev.end);
    let mut jac = Jacobian6x12::zeros();
    jac.fixed_view_mut::<6, 6>(0, 0)
        .copy_from(&right_jacobian_inv(&r));
    (r.to_vector(), jac)
}

/// Constant velocity: `r = (T_e ⊖ T_b) − (T_e_prev ⊖ T_b_prev)`,
/// `J = [−Jl⁻¹(τ), Jr⁻¹(τ)]`.
pub fn residual_vel(state: &State, prev: &State) -> (Vector6<f64>, Jacobian6x12) {
    let tangent = state.tangent();
    residual_vel_with(&tangent, &left_jacobian_inv(&tangent), &right_jacobian_inv(&tangent), prev)
}

pub(crate) fn residual_vel_with(
    tangent: &Twist,
    jl_inv: &Matrix6f,
    jr_inv: &Matrix6f,
    prev: &State,
) -> (Vector6<f64>, Jacobian6x12) {
    let r = *tangent - prev.tangent();
    let mut jac = Jacobian6x12::zeros();
    jac.fixed_view_mut::<6, 6>(0, 0).copy_from(&(-jl_inv));
    jac.fixed_view_mut::<6, 6>(0, 6).copy_from(jr_inv);
    (r.to_vector(), jac)
}
