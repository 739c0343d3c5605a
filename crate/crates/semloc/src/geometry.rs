//! Rigid SE(3) transforms and their exponential-map machinery.
//!
//! Twist convention: 6-vectors are `[rho; phi]` with the translational part
//! first, so `exp([t; 0])` is a pure translation by `t`. Perturbations in the
//! optimizer are right-multiplicative: `X <- X * exp(delta)`.

use crate::scalar::Real;
use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

/// Rigid transform: rotation (unit quaternion, stored w,x,y,z) + translation.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

fn c<T: Real>(v: f64) -> T {
    T::from_config(v)
}

/// Skew-symmetric cross-product matrix.
pub fn hat<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: t,
        }
    }

    /// Quaternion given as (w, x, y, z); renormalized on entry.
    pub fn from_wxyz_translation(w: T, x: T, y: T, z: T, t: Vector3<T>) -> Self {
        Pose {
            rotation: UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)),
            translation: t,
        }
    }

    /// `self` applied after `other`: (self * other)(x) = self(other(x)).
    pub fn compose(&self, other: &Pose<T>) -> Pose<T> {
        // renormalize so drift stays bounded over long compose chains
        let q = UnitQuaternion::new_normalize(
            self.rotation.into_inner() * other.rotation.into_inner(),
        );
        Pose {
            rotation: q,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians, in [0, pi].
    pub fn angle(&self) -> T {
        self.rotation.angle()
    }

    /// SE(3) exponential of a twist [rho; phi].
    pub fn exp(xi: &Vector6<T>) -> Pose<T> {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let phi = Vector3::new(xi[3], xi[4], xi[5]);
        let rotation = UnitQuaternion::from_scaled_axis(phi);
        let translation = so3_left_jacobian(&phi) * rho;
        Pose {
            rotation,
            translation,
        }
    }

    /// SE(3) logarithm. See [`Pose::log_flagged`] for behavior at angle pi.
    pub fn log(&self) -> Vector6<T> {
        self.log_flagged().0
    }

    /// Logarithm plus a flag that is true when the rotation angle is within
    /// 1e-6 rad of pi, where the branch choice is not unique and the nearest
    /// branch is reported.
    pub fn log_flagged(&self) -> (Vector6<T>, bool) {
        let phi = self.rotation.scaled_axis();
        let near_pi = (self.angle() - T::pi()).abs() < c(1e-6);
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&rho);
        xi.fixed_rows_mut::<3>(3).copy_from(&phi);
        (xi, near_pi)
    }

    /// Adjoint in the [rho; phi] block convention.
    pub fn adjoint(&self) -> Matrix6<T> {
        let r = self.rotation_matrix();
        let th = hat(&self.translation) * r;
        let mut adj = Matrix6::zeros();
        adj.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        adj.fixed_view_mut::<3, 3>(0, 3).copy_from(&th);
        adj.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        adj
    }
}

/// SO(3) left Jacobian: V(phi) with exp translation t = V * rho.
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let p = hat(phi);
    if theta2 < c(1e-14) {
        return Matrix3::identity() + p * c::<T>(0.5) + p * p * c::<T>(1.0 / 6.0);
    }
    let theta = theta2.sqrt();
    let a = (T::one() - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + p * a + p * p * b
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let p = hat(phi);
    if theta2 < c(1e-14) {
        return Matrix3::identity() - p * c::<T>(0.5) + p * p * c::<T>(1.0 / 12.0);
    }
    let theta = theta2.sqrt();
    let half = theta * c::<T>(0.5);
    // 1/theta^2 - cos(theta/2)/(2 theta sin(theta/2)) written via cotangent
    let coef = T::one() / theta2 - half.cos() / (c::<T>(2.0) * theta * half.sin());
    Matrix3::identity() - p * c::<T>(0.5) + p * p * coef
}

/// Q block of the SE(3) left Jacobian (Barfoot's closed form).
fn se3_q_block<T: Real>(rho: &Vector3<T>, phi: &Vector3<T>) -> Matrix3<T> {
    let rx = hat(rho);
    let px = hat(phi);
    let theta2 = phi.norm_squared();
    // m = (1 - theta^2/2 - cos)/theta^4, n = (theta - sin - theta^3/6)/theta^5
    let (c1, c2, c3) = if theta2 < c(1e-10) {
        let m = -c::<T>(1.0 / 24.0);
        let n = -c::<T>(1.0 / 120.0);
        (c::<T>(1.0 / 6.0), -m, -c::<T>(0.5) * (m - c::<T>(3.0) * n))
    } else {
        let theta = theta2.sqrt();
        let theta3 = theta2 * theta;
        let theta4 = theta2 * theta2;
        let theta5 = theta4 * theta;
        let sin = theta.sin();
        let cos = theta.cos();
        let c1 = (theta - sin) / theta3;
        let m = (T::one() - theta2 * c::<T>(0.5) - cos) / theta4;
        let n = (theta - sin - theta3 * c::<T>(1.0 / 6.0)) / theta5;
        (c1, -m, -c::<T>(0.5) * (m - c::<T>(3.0) * n))
    };
    let pr = px * rx;
    let rp = rx * px;
    let prp = px * rx * px;
    rx * c::<T>(0.5)
        + (pr + rp + prp) * c1
        + (px * pr + rp * px - prp * c::<T>(3.0)) * c2
        + (prp * px + px * prp) * c3
}

/// Inverse of the SE(3) left Jacobian in the [rho; phi] convention.
pub fn se3_left_jacobian_inv<T: Real>(xi: &Vector6<T>) -> Matrix6<T> {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let jinv = so3_left_jacobian_inv(&phi);
    let q = se3_q_block(&rho, &phi);
    let upper_right = -jinv * q * jinv;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&upper_right);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}

/// Inverse of the SE(3) right Jacobian: Jr^{-1}(xi) = Jl^{-1}(-xi).
pub fn se3_right_jacobian_inv<T: Real>(xi: &Vector6<T>) -> Matrix6<T> {
    se3_left_jacobian_inv(&(-xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    type P = Pose<f64>;

    fn random_pose(rng: &mut StdRng, max_angle: f64, max_trans: f64) -> P {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(-max_angle..max_angle);
        let t = Vector3::new(
            rng.random_range(-max_trans..max_trans),
            rng.random_range(-max_trans..max_trans),
            rng.random_range(-max_trans..max_trans),
        );
        Pose::new(UnitQuaternion::from_scaled_axis(axis * angle), t)
    }

    #[test]
    fn identity_compose_is_noop() {
        let mut rng = StdRng::seed_from_u64(1);
        let t = random_pose(&mut rng, 2.0, 10.0);
        let r = Pose::identity().compose(&t);
        assert_relative_eq!(r.translation, t.translation, epsilon = 1e-15);
        assert!(r.rotation.angle_to(&t.rotation) < 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let t = random_pose(&mut rng, 3.0, 10.0);
            let e = t.compose(&t.inverse());
            assert!(e.translation.norm() < 1e-12);
            assert!(e.angle() < 1e-12);
        }
    }

    #[test]
    fn pure_translations_add() {
        // oracle: 4x4 homogeneous matrix multiplication
        let a = P::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = P::from_translation(Vector3::new(0.0, 2.0, 0.0));
        let ma = nalgebra::Matrix4::new(
            1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        );
        let mb = nalgebra::Matrix4::new(
            1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        );
        let m = ma * mb;
        let r = a.compose(&b);
        assert_relative_eq!(r.translation, Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]));
        assert_relative_eq!(r.translation, Vector3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn compose_matches_matrix_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 3.0, 5.0);
            let b = random_pose(&mut rng, 3.0, 5.0);
            let to_mat = |p: &P| {
                let mut m = nalgebra::Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation_matrix());
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
                m
            };
            let m = to_mat(&a) * to_mat(&b);
            let r = a.compose(&b);
            assert_relative_eq!(to_mat(&r), m, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 3.0, 5.0);
            let b = random_pose(&mut rng, 3.0, 5.0);
            let cc = random_pose(&mut rng, 3.0, 5.0);
            let l = a.compose(&b).compose(&cc);
            let r = a.compose(&b.compose(&cc));
            assert!((l.translation - r.translation).norm() < 1e-12);
            assert!(l.rotation.angle_to(&r.rotation) < 1e-12);
        }
    }

    #[test]
    fn transform_point_is_homomorphic() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 3.0, 5.0);
            let b = random_pose(&mut rng, 3.0, 5.0);
            let x = Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let l = a.compose(&b).transform_point(&x);
            let r = a.transform_point(&b.transform_point(&x));
            assert!((l - r).norm() < 1e-9);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = P::exp(&Vector6::zeros());
        assert_eq!(p.translation, Vector3::zeros());
        assert_eq!(p.angle(), 0.0);
    }

    #[test]
    fn exp_of_pure_translation_twist() {
        let p = P::exp(&Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.angle(), 0.0);
    }

    #[test]
    fn exp_rotation_matches_rodrigues_oracle() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..100 {
            let phi = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let mut xi = Vector6::zeros();
            xi.fixed_rows_mut::<3>(3).copy_from(&phi);
            let p = P::exp(&xi);
            // Rodrigues: R = I + sin(t)/t K + (1-cos(t))/t^2 K^2
            let t = phi.norm();
            let k = hat(&phi);
            let r_oracle = Matrix3::identity() + k * (t.sin() / t) + k * k * ((1.0 - t.cos()) / (t * t));
            assert_relative_eq!(p.rotation_matrix(), r_oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let xi = Vector6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
            );
            let back = P::exp(&xi).log();
            assert!((back - xi).norm() < 1e-10, "xi={xi:?} back={back:?}");
        }
    }

    #[test]
    fn log_near_pi_is_flagged() {
        let phi = Vector3::new(std::f64::consts::PI, 0.0, 0.0);
        let p = Pose::new(UnitQuaternion::from_scaled_axis(phi), Vector3::zeros());
        let (xi, flagged) = p.log_flagged();
        assert!(flagged);
        assert_relative_eq!(xi.fixed_rows::<3>(3).norm(), std::f64::consts::PI, epsilon = 1e-9);
    }

    #[test]
    fn quaternion_norm_stable_over_many_composes() {
        let mut rng = StdRng::seed_from_u64(8);
        let step = random_pose(&mut rng, 0.01, 0.1);
        let mut acc = P::identity();
        for _ in 0..1_000_000 {
            acc = acc.compose(&step);
        }
        assert!((acc.rotation.into_inner().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn se3_jacobian_inv_matches_finite_differences() {
        // d/d eps log(exp(xi) exp(eps)) = Jr^{-1}(xi)
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let xi = Vector6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            );
            let base = P::exp(&xi);
            let jr_inv = se3_right_jacobian_inv(&xi);
            let h = 1e-6;
            for k in 0..6 {
                let mut dp = Vector6::zeros();
                dp[k] = h;
                let plus = base.compose(&P::exp(&dp)).log();
                let minus = base.compose(&P::exp(&(-dp))).log();
                let fd = (plus - minus) / (2.0 * h);
                let col = jr_inv.column(k).into_owned();
                assert!(
                    (fd - col).norm() / col.norm().max(1.0) < 1e-5,
                    "k={k} fd={fd:?} col={col:?}"
                );
            }
        }
    }
}
