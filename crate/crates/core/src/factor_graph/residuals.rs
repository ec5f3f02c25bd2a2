//! Twist residuals for every factor kind, with analytic Jacobians.
//!
//! All pose residuals share the form `log(a^-1 * b * m^-1)`; they differ only
//! in which operands are variables. Jacobians are taken with respect to right
//! perturbations `v * exp(d)` of each variable.

use nalgebra::Matrix6;

use crate::geometry::{se3_right_jacobian_inv, GeometryError, Pose, Twist};

/// `log((a^-1 b) m^-1)` and its Jacobians with respect to `a`, `b` and `m`.
pub fn relative_residual(
    a: &Pose,
    b: &Pose,
    m: &Pose,
) -> Result<(Twist, [Matrix6<f64>; 3]), GeometryError> {
    let err = a.between(b).compose(&m.inverse());
    let r = err.log()?;
    let jr_inv = se3_right_jacobian_inv(&r);
    let ad_m = m.adjoint();
    let d_a = -(jr_inv * err.inverse().adjoint());
    let d_b = jr_inv * ad_m;
    let d_m = -(jr_inv * ad_m);
    Ok((r, [d_a, d_b, d_m]))
}

fn relative(a: &Pose, b: &Pose, m: &Pose) -> Result<Twist, GeometryError> {
    a.between(b).compose(&m.inverse()).log()
}

/// LiDAR odometry constraint between consecutive ego poses.
pub fn residual_odometry(x_prev: &Pose, x_cur: &Pose, t_meas: &Pose) -> Result<Twist, GeometryError> {
    relative(x_prev, x_cur, t_meas)
}

/// Ego pose against an object's world pose, given its measured local pose.
pub fn residual_observation(
    x: &Pose,
    b_world: &Pose,
    b_local_meas: &Pose,
) -> Result<Twist, GeometryError> {
    relative(x, b_world, b_local_meas)
}

/// Consecutive object poses against the object's inter-frame motion.
pub fn residual_motion(b_prev: &Pose, b_cur: &Pose, c: &Pose) -> Result<Twist, GeometryError> {
    relative(b_prev, b_cur, c)
}

/// Change between two consecutive inter-frame motions.
pub fn residual_const_velocity(c_prev: &Pose, c_cur: &Pose) -> Result<Twist, GeometryError> {
    c_prev.between(c_cur).log()
}

/// Loop closure between two distant ego poses.
pub fn residual_loop(x_old: &Pose, x_new: &Pose, t_loop: &Pose) -> Result<Twist, GeometryError> {
    relative(x_old, x_new, t_loop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
        let mut t = Twist::zeros();
        for i in 0..3 {
            t[i] = rng.random_range(-rot..rot);
            t[i + 3] = rng.random_range(-trans..trans);
        }
        Pose::exp(&t)
    }

    fn assert_twist_zero(t: &Twist) {
        assert!(t.norm() < 1e-12, "{t}");
    }

    #[test]
    fn consistent_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_pose(&mut rng, 1.0, 5.0);
        let t = random_pose(&mut rng, 1.0, 5.0);
        assert_twist_zero(&residual_odometry(&Pose::identity(), &t, &t).unwrap());
        assert_twist_zero(&residual_loop(&x, &x.compose(&t), &t).unwrap());
        assert_twist_zero(&residual_observation(&x, &x.compose(&t), &t).unwrap());
        assert_twist_zero(&residual_observation(&Pose::identity(), &t, &t).unwrap());
        let b_cur = x.compose(&t);
        assert_twist_zero(&residual_motion(&x, &b_cur, &x.between(&b_cur)).unwrap());
        assert_twist_zero(&residual_motion(&x, &x, &Pose::identity()).unwrap());
        assert_twist_zero(&residual_const_velocity(&t, &t).unwrap());
    }

    #[test]
    fn pure_translation_residuals() {
        let r = residual_odometry(&Pose::identity(), &Pose::from_translation(1.0, 0.0, 0.0), &Pose::identity())
            .unwrap();
        assert!((r - Twist::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0)).norm() < 1e-15);
        let r = residual_const_velocity(&Pose::identity(), &Pose::from_translation(0.1, 0.0, 0.0)).unwrap();
        assert!((r - Twist::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn motion_residual_matches_matrix_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let bp = random_pose(&mut rng, 1.0, 5.0);
            let bc = random_pose(&mut rng, 1.0, 5.0);
            let c = random_pose(&mut rng, 1.0, 5.0);
            let m = bp.to_matrix().try_inverse().unwrap() * bc.to_matrix() * c.to_matrix().try_inverse().unwrap();
            let err = Pose::new(
                m.fixed_view::<3, 3>(0, 0).into_owned(),
                m.fixed_view::<3, 1>(0, 3).into_owned(),
            );
            let expected = err.log().unwrap();
            assert!((residual_motion(&bp, &bc, &c).unwrap() - expected).norm() < 1e-10);
            let cv = residual_const_velocity(&bp, &bc).unwrap();
            assert!((cv - bp.between(&bc).log().unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn first_order_response_to_perturbation() {
        // A consistent chain perturbed by exp(d) on the current pose yields a
        // residual of d to first order.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x_prev = random_pose(&mut rng, 1.0, 5.0);
        let t = random_pose(&mut rng, 0.3, 2.0);
        let x_cur = x_prev.compose(&t);
        let mut d = Twist::zeros();
        for i in 0..6 {
            d[i] = rng.random_range(-1.0..1.0) * 1e-6;
        }
        let r = residual_odometry(&x_prev, &x_cur.compose(&Pose::exp(&d)), &t).unwrap();
        let expected = t.adjoint() * d;
        assert!((r - expected).norm() < 1e-11);
        // Observation: perturbing the world pose on the left-hand frame.
        let local = random_pose(&mut rng, 0.3, 2.0);
        let b = x_prev.compose(&local);
        let r = residual_observation(&x_prev, &b.compose(&Pose::exp(&d)), &local).unwrap();
        assert!((r - local.adjoint() * d).norm() < 1e-11);
    }
}
