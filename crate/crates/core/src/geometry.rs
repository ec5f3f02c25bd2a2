//! Rigid-body transforms in SE(3) and the exponential/logarithm maps used to
//! parameterize residuals.
//!
//! Twists are ordered `(rx, ry, rz, tx, ty, tz)`: rotation first, then
//! translation. Perturbations are applied on the right, `P * exp(delta)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use thiserror::Error;

/// Six-dimensional tangent vector, rotation part first.
pub type Twist = Vector6<f64>;

/// Rotations whose angle is within this margin of pi have no unique logarithm.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

/// Orthonormality defect above which composed rotations are projected back
/// onto SO(3).
const RENORMALIZE_DEFECT: f64 = 1e-10;

const SMALL_ANGLE: f64 = 1e-2;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    DegenerateRotation { angle: f64 },
    #[error("matrix block is not a rotation (orthonormality defect {defect:e})")]
    NotARotation { defect: f64 },
}

/// Largest orthonormality defect accepted when parsing a pose; smaller
/// defects are projected away.
pub const PARSE_ROTATION_TOL: f64 = 1e-4;

/// A rigid-body transform: `p_out = rotation * p_in + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
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

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Planar object pose as emitted by a detector: position plus heading,
    /// zero roll and pitch.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self::new(rotation, Vector3::new(x, y, z))
    }

    /// Heading of the rotated x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        };
        if out.orthonormality_defect() > RENORMALIZE_DEFECT {
            out.renormalize();
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Relative transform `self^-1 * other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn exp(xi: &Twist) -> Pose {
        let phi = xi.fixed_rows::<3>(0).into_owned();
        let rho = xi.fixed_rows::<3>(3).into_owned();
        Pose {
            rotation: so3_exp(&phi),
            translation: so3_left_jacobian(&phi) * rho,
        }
    }

    pub fn log(&self) -> Result<Twist, GeometryError> {
        let phi = so3_log(&self.rotation)?;
        let rho = so3_left_jacobian_inv(&phi) * self.translation;
        let mut xi = Twist::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&phi);
        xi.fixed_rows_mut::<3>(3).copy_from(&rho);
        Ok(xi)
    }

    /// Adjoint in the `(rotation, translation)` twist ordering, so that
    /// `self * exp(xi) * self^-1 == exp(adjoint * xi)`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.translation) * self.rotation));
        ad
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }

    /// Project the rotation onto the closest element of SO(3).
    pub fn renormalize(&mut self) {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return,
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        self.rotation = r;
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major `[R | t]`, the KITTI odometry line layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Parses a row-major `[R | t]` block, projecting slightly
    /// non-orthonormal rotations back onto SO(3).
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Pose, GeometryError> {
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            v[0], v[1], v[2],
            v[4], v[5], v[6],
            v[8], v[9], v[10],
        );
        let mut pose = Pose::new(rotation, Vector3::new(v[3], v[7], v[11]));
        let defect = pose.orthonormality_defect();
        if !defect.is_finite() || defect > PARSE_ROTATION_TOL || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation { defect });
        }
        if defect > 1e-10 {
            pose.renormalize();
        }
        Ok(pose)
    }

    /// Rotation angle of this pose in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, -v[2], v[1],
        v[2], 0.0, -v[0],
        -v[1], v[0], 0.0,
    );
    m
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    if theta < SMALL_ANGLE {
        let k = skew(phi);
        let t2 = theta * theta;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        return Matrix3::identity() + a * k + b * k * k;
    }
    *Rotation3::from_scaled_axis(*phi).matrix()
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let w = vee(&(r - r.transpose())) * 0.5;
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta >= PI - LOG_ANGLE_MARGIN {
        return Err(GeometryError::DegenerateRotation { angle: theta });
    }
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        // theta / sin(theta)
        let k = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0;
        return Ok(w * k);
    }
    Ok(w * (theta / s))
}

pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let t2 = theta * theta;
    let (a, b) = if theta < SMALL_ANGLE {
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() + a * k + b * k * k
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let t2 = theta * theta;
    let b = if theta < SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + b * k * k
}

/// Coupling block of the SE(3) left Jacobian for `xi = (phi, rho)`.
fn se3_left_jacobian_coupling(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let t2 = theta * theta;
    let p = skew(phi);
    let r = skew(rho);
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t4 = t2 * t2;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) + c3 * (prp * p + p * prp)
}

/// Inverse of the SE(3) right Jacobian: `log(exp(xi) * exp(d)) ~ xi + J_r^-1(xi) d`.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let phi: Vector3<f64> = -xi.fixed_rows::<3>(0).into_owned();
    let rho: Vector3<f64> = -xi.fixed_rows::<3>(3).into_owned();
    // J_r(xi) = J_l(-xi) = [[A, 0], [Q, A]]
    let a_inv = so3_left_jacobian_inv(&phi);
    let q = se3_left_jacobian_coupling(&phi, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&a_inv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&a_inv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-(a_inv * q * a_inv)));
    out
}
