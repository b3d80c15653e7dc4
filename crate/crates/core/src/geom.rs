//! Rotation and quaternion helpers shared by all modules.
//!
//! Conventions, fixed once for the whole crate:
//! - Hamilton quaternions, scalar-first notation, stored as
//!   [`nalgebra::UnitQuaternion`].  `q_b_w` rotates body-frame vectors into
//!   the world frame.
//! - Returned quaternions are canonicalized to `w >= 0` and renormalized to
//!   unit length.
//! - The attitude error is a world-frame (left) small angle `phi`:
//!   `q_true = dq(phi) ⊗ q_est` with `dq(phi) ≈ [1; phi/2]`, so
//!   `R(dq ⊗ q) ≈ (I + [phi×]) R(q)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Cross-product matrix: `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Flip the sign so the scalar part is non-negative (both signs encode the
/// same rotation).
pub fn canonicalize(q: Quat) -> Quat {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Build a unit quaternion from scalar-first components, renormalizing if
/// needed.  The second return is true when the input deviated from unit norm
/// by more than 1e-6 (callers surface this in diagnostics).
pub fn quat_from_parts(w: f64, x: f64, y: f64, z: f64) -> (Quat, bool) {
    let raw = Quaternion::new(w, x, y, z);
    let flagged = (raw.norm() - 1.0).abs() > 1e-6;
    (canonicalize(UnitQuaternion::from_quaternion(raw)), flagged)
}

/// Rotation matrix of a unit quaternion (body-to-world for `q_b_w`).
pub fn quat_to_rot(q: &Quat) -> Mat3 {
    q.to_rotation_matrix().into_inner()
}

/// Exact axis-angle quaternion, `exp([phi×]) == quat_to_rot(quat_exp(phi))`.
pub fn quat_exp(phi: &Vec3) -> Quat {
    canonicalize(UnitQuaternion::from_scaled_axis(*phi))
}

/// Left small-angle perturbation `dq(phi) ⊗ q` with `dq ≈ [1; phi/2]`,
/// renormalized and canonicalized.
pub fn apply_small_angle(q: &Quat, phi: &Vec3) -> Quat {
    let dq = Quaternion::new(1.0, 0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z);
    canonicalize(UnitQuaternion::from_quaternion(dq * q.into_inner()))
}

/// Left error angle between a true and an estimated attitude:
/// `q_true = dq(phi) ⊗ q_est`, returned as the rotation vector of `dq`.
pub fn error_angle(q_true: &Quat, q_est: &Quat) -> Vec3 {
    canonicalize(q_true * q_est.inverse()).scaled_axis()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector4;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn approx(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).amax() < tol
    }

    #[test]
    fn skew_definition() {
        let m = skew(&Vec3::new(1.0, 2.0, 3.0));
        let expect = Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m, expect);
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn quat_to_rot_identity_and_canonical() {
        assert!(approx(&quat_to_rot(&Quat::identity()), &Mat3::identity(), 1e-15));
        let qz = quat_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let expect = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(approx(&quat_to_rot(&qz), &expect, 1e-12));
    }

    #[test]
    fn quat_from_parts_flags_non_unit() {
        let (_, flagged) = quat_from_parts(1.0, 0.0, 0.0, 0.0);
        assert!(!flagged);
        let (q, flagged) = quat_from_parts(1.01, 0.0, 0.0, 0.0);
        assert!(flagged);
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_small_angle_zero_and_first_order() {
        let q = quat_exp(&Vec3::new(0.3, -0.2, 0.9));
        let r = apply_small_angle(&q, &Vec3::zeros());
        assert!((r.into_inner() - q.into_inner()).norm() < 1e-15);

        let r = apply_small_angle(&Quat::identity(), &Vec3::new(1e-6, 0.0, 0.0));
        assert!((r.i - 5e-7).abs() < 1e-12);
        assert!((r.w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_small_angle_matches_matrix_exponential() {
        // exp([phi×])·R(q) oracle, phi = 1e-4·e1, error O(|phi|²).
        let q = quat_exp(&Vec3::new(0.7, 0.1, -0.4));
        let phi = Vec3::new(1e-4, 0.0, 0.0);
        let expect = quat_to_rot(&quat_exp(&phi)) * quat_to_rot(&q);
        let got = quat_to_rot(&apply_small_angle(&q, &phi));
        assert!(approx(&got, &expect, phi.norm_squared()));
    }

    #[test]
    fn error_angle_round_trip() {
        let q = quat_exp(&Vec3::new(-0.5, 0.2, 1.1));
        let phi = Vec3::new(1e-3, -2e-3, 5e-4);
        let perturbed = apply_small_angle(&q, &phi);
        let back = error_angle(&perturbed, &q);
        assert!((back - phi).norm() < 1e-8);
    }

    proptest! {
        #[test]
        fn skew_antisymmetric_and_cross(v in prop::array::uniform3(-10.0f64..10.0),
                                        u in prop::array::uniform3(-10.0f64..10.0)) {
            let v = Vec3::from(v);
            let u = Vec3::from(u);
            let m = skew(&v);
            prop_assert_eq!(m + m.transpose(), Mat3::zeros());
            prop_assert!((m * u - v.cross(&u)).norm() < 1e-12);
        }

        #[test]
        fn quat_to_rot_orthonormal_and_sandwich(a in prop::array::uniform4(-1.0f64..1.0),
                                                v in prop::array::uniform3(-5.0f64..5.0)) {
            let raw = Vector4::from(a);
            prop_assume!(raw.norm() > 1e-3);
            let (q, _) = quat_from_parts(raw[0], raw[1], raw[2], raw[3]);
            let r = quat_to_rot(&q);
            prop_assert!((r * r.transpose() - Mat3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            // quaternion sandwich product q ⊗ v ⊗ q⁻¹
            let v = Vec3::from(v);
            let sandwich = q.into_inner()
                * Quaternion::from_imag(v)
                * q.into_inner().conjugate();
            prop_assert!((r * v - sandwich.imag()).norm() < 1e-9);
        }

        #[test]
        fn small_angle_consistency(axis in prop::array::uniform3(-1.0f64..1.0),
                                   phi in prop::array::uniform3(-1e-3f64..1e-3)) {
            let q = quat_exp(&Vec3::from(axis));
            let phi = Vec3::from(phi);
            let approx_r = (Mat3::identity() + skew(&phi)) * quat_to_rot(&q);
            let got = quat_to_rot(&apply_small_angle(&q, &phi));
            prop_assert!((got - approx_r).amax() <= phi.norm_squared() + 1e-15);
        }
    }
}
