use nalgebra::{Matrix3, Vector3, Vector6};
use proptest::prelude::*;
use rangeodo::se3::{left_jacobian, left_jacobian_inv, right_jacobian, right_jacobian_inv, Pose, Twist};
use std::f64::consts::PI;

fn vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-scale..scale).prop_map(|a| Vector3::new(a[0], a[1], a[2]))
}

/// Twists with rotation angle in `[0, max_angle]`.
fn twist(max_angle: f64) -> impl Strategy<Value = Twist> {
    (vec3(5.0), vec3(1.0), 0.0..max_angle).prop_map(|(rho, axis, angle)| {
        let n = axis.norm();
        let phi = if n > 1e-3 { axis / n * angle } else { Vector3::zeros() };
        Twist::new(rho, phi)
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    twist(3.0).prop_map(|xi| xi.exp())
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    (a.rotation - b.rotation).amax().max((a.translation - b.translation).amax())
}

/// Rodrigues' formula, written out independently of the crate.
fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = phi / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose()) {
        prop_assert!(pose_distance(&((a * b) * c), &(a * (b * c))) < 1e-10);
    }

    #[test]
    fn inverse_composes_to_identity(a in pose()) {
        prop_assert!(pose_distance(&(a * a.inverse()), &Pose::identity()) < 1e-10);
        prop_assert!(pose_distance(&(a.inverse() * a), &Pose::identity()) < 1e-10);
    }

    #[test]
    fn exp_stays_on_the_group(xi in twist(PI)) {
        let t = xi.exp();
        prop_assert!(t.orthonormality_error() < 1e-9);
    }

    #[test]
    fn exp_rotation_matches_rodrigues(xi in twist(PI)) {
        prop_assert!((xi.exp().rotation - rodrigues(&xi.phi)).amax() < 1e-12);
    }

    #[test]
    fn log_inverts_exp(xi in twist(PI - 0.01)) {
        let back = xi.exp().log();
        prop_assert!((back.to_vector() - xi.to_vector()).amax() < 1e-9);
    }

    #[test]
    fn exp_inverts_log(t in pose()) {
        prop_assert!(pose_distance(&t.log().exp(), &t) < 1e-10);
    }

    #[test]
    fn oplus_ominus_round_trip(x in pose(), xi in twist(PI - 0.01)) {
        let y = x.oplus(&xi);
        prop_assert!((y.ominus(&x).to_vector() - xi.to_vector()).amax() < 1e-9);
        prop_assert!(x.ominus(&x).to_vector().amax() < 1e-12);
    }

    #[test]
    fn ominus_from_identity_is_log_of_inverse(xi in twist(PI - 0.01)) {
        // compose-and-log oracle: Log(exp(xi)⁻¹ · I) equals Log of the inverse
        let t = xi.exp();
        let direct = Pose::identity().ominus(&t);
        let inv = Pose::new(t.rotation.transpose(), -(t.rotation.transpose() * t.translation));
        let oracle = inv.log();
        prop_assert!((direct.to_vector() - oracle.to_vector()).amax() < 1e-9);
        // rotation part of the inverse is just -phi
        prop_assert!((direct.phi + xi.phi).amax() < 1e-9);
    }

    #[test]
    fn jacobians_invert(xi in twist(3.0)) {
        let id = nalgebra::Matrix6::<f64>::identity();
        prop_assert!((right_jacobian(&xi) * right_jacobian_inv(&xi) - id).amax() < 1e-9);
        prop_assert!((left_jacobian(&xi) * left_jacobian_inv(&xi) - id).amax() < 1e-9);
        prop_assert!((left_jacobian(&xi) - right_jacobian(&(-xi))).amax() < 1e-12);
    }

    #[test]
    fn right_jacobian_directional_derivative(xi in twist(3.0), d in vec3(1.0), e in vec3(1.0)) {
        let delta = Twist::new(d, e);
        let eps = 1e-6;
        let fd = (xi.exp().inverse() * (xi + delta * eps).exp()).log().to_vector() / eps;
        let analytic = right_jacobian(&xi) * delta.to_vector();
        prop_assert!((fd - analytic).norm() < 1e-5, "{}", (fd - analytic).norm());
    }

    #[test]
    fn left_jacobian_directional_derivative(xi in twist(3.0), d in vec3(1.0), e in vec3(1.0)) {
        // exp(xi + Jl⁻¹ ε δ) ≈ exp(ε δ) · exp(xi)
        let delta = Twist::new(d, e);
        let eps = 1e-6;
        let step = Twist::from_vector(&(left_jacobian_inv(&xi) * delta.to_vector() * eps));
        let lhs = (xi + step).exp();
        let rhs = (delta * eps).exp() * xi.exp();
        let gap = (rhs.inverse() * lhs).log().to_vector() / eps;
        prop_assert!(gap.norm() < 1e-5, "{}", gap.norm());
    }
}

/// Central differences of `Log(exp(xi)⁻¹ exp(xi + ε e_k))` against `Jr(xi)`.
fn fd_right_jacobian(xi: &Twist) -> nalgebra::Matrix6<f64> {
    let eps = 1e-6;
    let base = xi.exp().inverse();
    let mut jac = nalgebra::Matrix6::zeros();
    for k in 0..6 {
        let mut e = Vector6::zeros();
        e[k] = eps;
        let plus = (base * (*xi + Twist::from_vector(&e)).exp()).log().to_vector();
        let minus = (base * (*xi - Twist::from_vector(&e)).exp()).log().to_vector();
        jac.set_column(k, &((plus - minus) / (2.0 * eps)));
    }
    jac
}

#[test]
fn jacobians_match_central_differences() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let v: [f64; 6] = std::array::from_fn(|i| {
            let s = if i < 3 { 5.0 } else { 1.5 };
            rng.random_range(-s..s)
        });
        let xi = Twist::from_slice(&v);
        let fd = fd_right_jacobian(&xi);
        let rel = (right_jacobian(&xi) - fd).norm() / fd.norm();
        assert!(rel < 1e-4, "Jr relative error {rel}");
        let fd_left = fd_right_jacobian(&(-xi));
        let rel = (left_jacobian(&xi) - fd_left).norm() / fd_left.norm();
        assert!(rel < 1e-4, "Jl relative error {rel}");
    }
}

#[test]
fn exp_log_round_trip_on_a_thousand_twists() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let axis = loop {
            let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if a.norm() > 0.1 {
                break a.normalize();
            }
        };
        let angle = rng.random_range(0.0..PI - 0.01);
        let rho = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let xi = Twist::new(rho, axis * angle);
        worst = worst.max((xi.exp().log().to_vector() - xi.to_vector()).amax());
    }
    assert!(worst < 1e-9, "worst round-trip error {worst}");
}

#[test]
fn small_angles_stay_accurate() {
    for angle in [0.0, 1e-12, 1e-9, 1e-7, 1e-6, 2e-6, 1e-4] {
        let xi = Twist::new(Vector3::new(1.0, -2.0, 0.5), Vector3::new(0.3, -0.4, 0.5).normalize() * angle);
        let t = xi.exp();
        assert!(t.orthonormality_error() < 1e-12);
        assert!((t.rotation - rodrigues(&xi.phi)).amax() < 1e-15 + angle * 1e-9);
        assert!((t.log().to_vector() - xi.to_vector()).amax() < 1e-12);
    }
}
