//! Minimal SE(3) toolkit with right-handed `⊕`/`⊖` operators.
//!
//! Tangent vectors are ordered `[rho, phi]`: translational part first, then
//! rotational part. All operators follow the right convention:
//!
//! ```text
//! X ⊕ ξ = X · Exp(ξ)
//! Y ⊖ X = Log(X⁻¹ · Y)
//! ```
//!
//! Jacobians follow the same convention, so that
//! `Exp(ξ + δ) ≈ Exp(ξ) · Exp(Jr(ξ) δ)` and `Exp(ξ + δ) ≈ Exp(Jl(ξ) δ) · Exp(ξ)`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6};

/// Below this rotation angle the first-order coefficients use their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Below this angle the higher-order coefficients (which suffer cancellation in
/// closed form well above `SMALL_ANGLE`) use their Taylor series.
const SERIES_ANGLE: f64 = 0.2;

/// Rotation angles within this distance of π take the symmetric-part branch of the logarithm.
const NEAR_PI_COS: f64 = -0.9;

pub type Matrix6f = Matrix6<f64>;

/// Skew-symmetric matrix `[v]ₓ` such that `[v]ₓ w = v × w`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Element of the SE(3) tangent space.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub const fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: v.fixed_rows::<3>(0).into_owned(),
            phi: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.phi.norm_squared()).sqrt()
    }

    pub fn angle(&self) -> f64 {
        self.phi.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }

    /// `Exp(ξ)`.
    pub fn exp(&self) -> Pose {
        let coeffs = Coefficients::new(self.phi.norm());
        let k = skew(&self.phi);
        let k2 = k * k;
        let rotation = Matrix3::identity() + k * coeffs.a + k2 * coeffs.b;
        let left = Matrix3::identity() + k * coeffs.b + k2 * coeffs.c;
        Pose {
            rotation,
            translation: left * self.rho,
        }
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.rho + rhs.rho, self.phi + rhs.phi)
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.rho - rhs.rho, self.phi - rhs.phi)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rho, -self.phi)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, s: f64) -> Twist {
        Twist::new(self.rho * s, self.phi * s)
    }
}

/// Rigid transform. Maps points from the local frame into the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pure rotation of `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Twist::new(Vector3::zeros(), axis.normalize() * angle).exp()
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `Log(T)`, the inverse of [`Twist::exp`] on the canonical branch `‖phi‖ ≤ π`.
    ///
    /// At a rotation angle of exactly π the axis sign is ambiguous; the branch
    /// whose largest-magnitude axis component is positive is returned.
    pub fn log(&self) -> Twist {
        let phi = so3_log(&self.rotation);
        let coeffs = Coefficients::new(phi.norm());
        let k = skew(&phi);
        let left_inv = Matrix3::identity() - k * 0.5 + k * k * coeffs.f;
        Twist::new(left_inv * self.translation, phi)
    }

    /// Right `⊕`: `self · Exp(xi)`.
    pub fn oplus(&self, xi: &Twist) -> Self {
        *self * xi.exp()
    }

    /// Right `⊖`: `Log(other⁻¹ · self)`.
    pub fn ominus(&self, other: &Pose) -> Twist {
        (other.inverse() * *self).log()
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// Projects the rotation back onto SO(3). Chained compositions that use
    /// the transpose as inverse otherwise amplify round-off geometrically.
    pub fn normalized(&self) -> Self {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation: self.translation,
        }
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        gram.amax().max((self.rotation.determinant() - 1.0).abs())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // sin(θ)·axis
    let w = vee(&(r - r.transpose())) * 0.5;
    let sin = w.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if cos > NEAR_PI_COS {
        return w * (theta / sin);
    }

    // aaᵀ = (sym(R) - cos·I) / (1 - cos)
    let sym = (r + r.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let (mut i, mut best) = (0, outer[(0, 0)]);
    for j in 1..3 {
        if outer[(j, j)] > best {
            i = j;
            best = outer[(j, j)];
        }
    }
    let mut axis = outer.column(i) / best.max(0.0).sqrt();
    axis.normalize_mut();

    let flip = if sin > 1e-12 {
        axis.dot(&w) < 0.0
    } else {
        let k = axis.iamax();
        axis[k] < 0.0
    };
    if flip {
        axis = -axis;
    }
    if sin <= 1e-12 {
        return axis * PI;
    }
    axis * theta
}

/// Series-or-closed-form coefficients shared by exp/log and the Jacobians.
#[derive(Clone, Copy, Debug)]
struct Coefficients {
    /// sinθ/θ
    a: f64,
    /// (1 − cosθ)/θ²
    b: f64,
    /// (θ − sinθ)/θ³
    c: f64,
    /// (θ² + 2cosθ − 2)/(2θ⁴)
    d: f64,
    /// (2θ − 3sinθ + θcosθ)/(2θ⁵)
    e: f64,
    /// 1/θ² − (1 + cosθ)/(2θ sinθ)
    f: f64,
}

impl Coefficients {
    fn new(theta: f64) -> Self {
        let t2 = theta * theta;
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            let half = (theta * 0.5).sin() / (theta * 0.5);
            (theta.sin() / theta, 0.5 * half * half)
        };
        if theta < SERIES_ANGLE {
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
                f: 1.0 / 12.0 + t2 / 720.0 + t4 / 30_240.0 + t6 / 1_209_600.0
                    + t8 / 47_900_160.0,
            }
        } else {
            let (s, c) = theta.sin_cos();
            let t3 = t2 * theta;
            let t4 = t2 * t2;
            Self {
                a,
                b,
                c: (theta - s) / t3,
                d: (t2 + 2.0 * c - 2.0) / (2.0 * t4),
                e: (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
                f: 1.0 / t2 - (1.0 + c) / (2.0 * theta * s),
            }
        }
    }
}

/// Off-diagonal block `Q(ρ, θ)` of the SE(3) left Jacobian.
fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>, k: &Coefficients) -> Matrix3<f64> {
    let p = skew(rho);
    let t = skew(phi);
    let tp = t * p;
    let pt = p * t;
    let tpt = tp * t;
    p * 0.5 + (tp + pt + tpt) * k.c + (t * tp + pt * t - tpt * 3.0) * k.d + (tpt * t + t * tpt) * k.e
}

fn assemble(diag: Matrix3<f64>, upper: Matrix3<f64>) -> Matrix6f {
    let mut m = Matrix6f::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&diag);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&upper);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&diag);
    m
}

/// SE(3) left Jacobian `Jl(ξ)`.
pub fn left_jacobian(xi: &Twist) -> Matrix6f {
    let k = Coefficients::new(xi.phi.norm());
    let t = skew(&xi.phi);
    let so3 = Matrix3::identity() + t * k.b + t * t * k.c;
    assemble(so3, q_block(&xi.rho, &xi.phi, &k))
}

/// Inverse of [`left_jacobian`], in closed form.
pub fn left_jacobian_inv(xi: &Twist) -> Matrix6f {
    let k = Coefficients::new(xi.phi.norm());
    let t = skew(&xi.phi);
    let so3_inv = Matrix3::identity() - t * 0.5 + t * t * k.f;
    let q = q_block(&xi.rho, &xi.phi, &k);
    assemble(so3_inv, -(so3_inv * q * so3_inv))
}

/// SE(3) right Jacobian, `Jr(ξ) = Jl(−ξ)`.
pub fn right_jacobian(xi: &Twist) -> Matrix6f {
    left_jacobian(&-*xi)
}

/// Inverse of [`right_jacobian`], `Jr⁻¹(ξ) = Jl⁻¹(−ξ)`.
pub fn right_jacobian_inv(xi: &Twist) -> Matrix6f {
    left_jacobian_inv(&-*xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
        let rho = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        Twist::new(rho, axis * rng.random_range(0.0..max_angle))
    }

    fn rot_z(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn exp_identity_and_translation() {
        assert_eq!(Twist::zero().exp(), Pose::identity());
        let p = Twist::new(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros()).exp();
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let p = Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0)).exp();
        assert_relative_eq!(p.rotation, rot_z(PI / 2.0), epsilon = 1e-15);
        assert_relative_eq!(p.translation, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn log_cases() {
        assert_eq!(Pose::identity().log(), Twist::zero());

        let xi = Twist::from_slice(&[0.1, -0.2, 0.3, 0.05, -0.05, 0.1]);
        let back = xi.exp().log();
        assert_relative_eq!(back.to_vector(), xi.to_vector(), epsilon = 1e-10);

        let quarter = Pose::new(rot_z(PI / 2.0), Vector3::zeros()).log();
        assert_relative_eq!(quarter.phi, Vector3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-14);
        assert_relative_eq!(quarter.rho, Vector3::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn log_at_pi_uses_positive_largest_component() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(0.3, -0.9, 0.2)] {
            let axis = axis.normalize();
            for sign in [1.0, -1.0] {
                let r = Pose::from_axis_angle(&(axis * sign), PI);
                let phi = r.log().phi;
                assert_relative_eq!(phi.norm(), PI, epsilon = 1e-9);
                let k = phi.iamax();
                assert!(phi[k] > 0.0, "{phi:?}");
                assert_relative_eq!(phi.exp_rot(), r.rotation, epsilon = 1e-9);
            }
        }
    }

    trait ExpRot {
        fn exp_rot(&self) -> Matrix3<f64>;
    }
    impl ExpRot for Vector3<f64> {
        fn exp_rot(&self) -> Matrix3<f64> {
            Twist::new(Vector3::zeros(), *self).exp().rotation
        }
    }

    #[test]
    fn oplus_ominus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_twist(&mut rng, 3.0).exp();
            let xi = random_twist(&mut rng, 3.0);
            assert_relative_eq!(
                Pose::identity().oplus(&xi).rotation,
                xi.exp().rotation,
                epsilon = 1e-15
            );
            assert_eq!(x.oplus(&Twist::zero()), x);
            let back = x.oplus(&xi).ominus(&x);
            assert_relative_eq!(back.to_vector(), xi.to_vector(), epsilon = 1e-9);
            assert_relative_eq!(x.ominus(&x).to_vector(), Vector6::zeros(), epsilon = 1e-12);
            assert_relative_eq!(
                xi.exp().ominus(&Pose::identity()).to_vector(),
                xi.to_vector(),
                epsilon = 1e-9
            );
            // I ⊖ Exp(ξ) = Log(Exp(ξ)⁻¹) = −ξ
            let inv = Pose::identity().ominus(&xi.exp());
            assert_relative_eq!(inv.to_vector(), -xi.to_vector(), epsilon = 1e-9);
        }
    }

    #[test]
    fn group_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_twist(&mut rng, 3.1).exp();
            let b = random_twist(&mut rng, 3.1).exp();
            let c = random_twist(&mut rng, 3.1).exp();
            let l = (a * b) * c;
            let r = a * (b * c);
            assert_relative_eq!(l.rotation, r.rotation, epsilon = 1e-10);
            assert_relative_eq!(l.translation, r.translation, epsilon = 1e-10);
            let id = a * a.inverse();
            assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-10);
            assert_relative_eq!(id.translation, Vector3::zeros(), epsilon = 1e-10);
            assert!(a.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn jacobian_identities() {
        assert_relative_eq!(right_jacobian(&Twist::zero()), Matrix6f::identity());
        assert_relative_eq!(left_jacobian(&Twist::zero()), Matrix6f::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 3.0);
            let jr = right_jacobian(&xi);
            let jl = left_jacobian(&xi);
            assert_relative_eq!(jr * right_jacobian_inv(&xi), Matrix6f::identity(), epsilon = 1e-9);
            assert_relative_eq!(jl * left_jacobian_inv(&xi), Matrix6f::identity(), epsilon = 1e-9);
            assert_relative_eq!(jl, left_jacobian(&xi), epsilon = 1e-12);
            let neg = right_jacobian(&-xi);
            assert_relative_eq!(jl, neg, epsilon = 1e-12);
        }
    }

    #[test]
    fn coefficients_continuous_across_series_threshold() {
        for &theta in &[SMALL_ANGLE, SERIES_ANGLE] {
            let below = Coefficients::new(theta * (1.0 - 1e-9));
            let above = Coefficients::new(theta * (1.0 + 1e-9));
            for (x, y) in [
                (below.a, above.a),
                (below.b, above.b),
                (below.c, above.c),
                (below.d, above.d),
                (below.e, above.e),
                (below.f, above.f),
            ] {
                assert!((x - y).abs() < 1e-10, "θ={theta}: {x} vs {y}");
            }
        }
    }
}
