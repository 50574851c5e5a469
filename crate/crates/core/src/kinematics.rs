//! Closed-form kinematics of a 3-DoF leg (hip ab/adduction, hip pitch, knee).
//!
//! All vectors are expressed in the body frame (`x` forward, `y` left, `z` up)
//! and measured from the hip joint unless stated otherwise. Joint order is
//! `[q1, q2, q3]` = ab/adduction, thigh pitch, knee.
//!
//! The wheel radius enters the `y` and `z` rows of the position map and the
//! matching Jacobian rows, but not the `x` row. This mirrors the reference
//! formulation term for term; for point feet (`wheel_radius == 0`) the map is
//! an ordinary rigid chain.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Default smallest admissible singular value of the leg Jacobian (metres).
pub const DEFAULT_SIGMA_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("leg Jacobian is singular (smallest singular value {sigma:e} m)")]
    SingularConfiguration { sigma: f64 },
    #[error("target {target:?} lies outside the leg workspace")]
    Unreachable { target: [f64; 3] },
    #[error("invalid leg geometry: {0}")]
    InvalidGeometry(String),
}

/// Which side of the trunk a leg is mounted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn from_sign(sign: f64) -> Option<Self> {
        if sign == 1.0 {
            Some(Side::Left)
        } else if sign == -1.0 {
            Some(Side::Right)
        } else {
            None
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Link parameters of one leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LegGeometry {
    /// Lateral hip offset.
    pub hip_offset_len: f64,
    pub thigh_len: f64,
    /// Effective calf length. For point feet the foot radius is folded in here.
    pub calf_len: f64,
    /// Zero for point feet.
    pub wheel_radius: f64,
    pub side: Side,
    /// Hip joint position in the body frame.
    pub hip_mount: Vector3<f64>,
}

impl LegGeometry {
    pub fn new(
        hip_offset_len: f64,
        thigh_len: f64,
        calf_len: f64,
        wheel_radius: f64,
        side: Side,
        hip_mount: Vector3<f64>,
    ) -> Result<Self, KinematicsError> {
        let geom = Self {
            hip_offset_len,
            thigh_len,
            calf_len,
            wheel_radius,
            side,
            hip_mount,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let finite = [self.hip_offset_len, self.thigh_len, self.calf_len, self.wheel_radius]
            .iter()
            .chain(self.hip_mount.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(KinematicsError::InvalidGeometry("non-finite parameter".into()));
        }
        if self.thigh_len <= 0.0 {
            return Err(KinematicsError::InvalidGeometry("thigh length must be positive".into()));
        }
        if self.calf_len <= 0.0 {
            return Err(KinematicsError::InvalidGeometry("calf length must be positive".into()));
        }
        if self.wheel_radius < 0.0 {
            return Err(KinematicsError::InvalidGeometry("wheel radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn has_wheel(&self) -> bool {
        self.wheel_radius > 0.0
    }

    /// Body-frame end-effector position: hip mount plus [`fk_position`].
    pub fn foot_in_body(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.hip_mount + fk_position(q, self)
    }
}

/// One leg's motor sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointReading {
    pub q: Vector3<f64>,
    pub dq: Vector3<f64>,
    pub tau: Vector3<f64>,
}

impl JointReading {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.dq.iter()).chain(self.tau.iter()).all(|v| v.is_finite())
    }
}

struct Trig {
    c1: f64,
    s1: f64,
    c2: f64,
    s2: f64,
    c23: f64,
    s23: f64,
}

impl Trig {
    fn new(q: &Vector3<f64>) -> Self {
        let (s1, c1) = q[0].sin_cos();
        let (s2, c2) = q[1].sin_cos();
        let (s3, c3) = q[2].sin_cos();
        Self {
            c1,
            s1,
            c2,
            s2,
            c23: c2 * c3 - s2 * s3,
            s23: s2 * c3 + c2 * s3,
        }
    }
}

/// Hip-to-end-effector position in the body frame.
pub fn fk_position(q: &Vector3<f64>, geom: &LegGeometry) -> Vector3<f64> {
    let t = Trig::new(q);
    let s = geom.side.sign();
    let (lh, lt, lc, rw) = (geom.hip_offset_len, geom.thigh_len, geom.calf_len, geom.wheel_radius);
    Vector3::new(
        -(lc * t.s23 + lt * t.s2),
        s * lh * t.c1 + (lc + rw) * t.s1 * t.c23 + lt * t.c2 * t.s1,
        s * lh * t.s1 - lc * t.c1 * t.c23 - lt * t.c1 * t.c2 + rw,
    )
}

/// Hip-to-end-effector velocity in the body frame, written out row by row.
pub fn fk_velocity(q: &Vector3<f64>, dq: &Vector3<f64>, geom: &LegGeometry) -> Vector3<f64> {
    let t = Trig::new(q);
    let s = geom.side.sign();
    let (lh, lt, lc, rw) = (geom.hip_offset_len, geom.thigh_len, geom.calf_len, geom.wheel_radius);
    let (dq1, dq2, dq3) = (dq[0], dq[1], dq[2]);
    let vx = -((lc * t.c23 + lt * t.c2) * dq2 + (lc * t.c23) * dq3);
    let vy = ((lc + rw) * t.c1 * t.c23 + lt * t.c1 * t.c2 - s * lh * t.s1) * dq1
        + (-(lc + rw) * t.s1 * t.s23 - lt * t.s1 * t.s2) * dq2
        + (-(lc + rw) * t.s1 * t.s23) * dq3;
    let vz = (lc * t.s1 * t.c23 + lt * t.c2 * t.s1 + s * lh * t.c1) * dq1
        + (lc * t.c1 * t.s23 + lt * t.c1 * t.s2) * dq2
        + (lc * t.c1 * t.s23) * dq3;
    Vector3::new(vx, vy, vz)
}

/// Geometric Jacobian with `v = J(q) * dq`.
pub fn jacobian(q: &Vector3<f64>, geom: &LegGeometry) -> Matrix3<f64> {
    let t = Trig::new(q);
    let s = geom.side.sign();
    let (lh, lt, lc, rw) = (geom.hip_offset_len, geom.thigh_len, geom.calf_len, geom.wheel_radius);
    Matrix3::new(
        0.0,
        -(lc * t.c23 + lt * t.c2),
        -(lc * t.c23),
        (lc + rw) * t.c1 * t.c23 + lt * t.c1 * t.c2 - s * lh * t.s1,
        -(lc + rw) * t.s1 * t.s23 - lt * t.s1 * t.s2,
        -(lc + rw) * t.s1 * t.s23,
        lc * t.s1 * t.c23 + lt * t.c2 * t.s1 + s * lh * t.c1,
        lc * t.c1 * t.s23 + lt * t.c1 * t.s2,
        lc * t.c1 * t.s23,
    )
}

pub fn min_singular_value(m: &Matrix3<f64>) -> f64 {
    m.singular_values().min()
}

/// Quasi-static end-effector force in the body frame from joint torques,
/// `f = (J J^T)^-1 J tau`.
pub fn foot_force_body(
    q: &Vector3<f64>,
    tau: &Vector3<f64>,
    geom: &LegGeometry,
    sigma_min: f64,
) -> Result<Vector3<f64>, KinematicsError> {
    let j = jacobian(q, geom);
    let sigma = min_singular_value(&j);
    if !(sigma >= sigma_min) {
        return Err(KinematicsError::SingularConfiguration { sigma });
    }
    let jjt = j * j.transpose();
    let rhs = j * tau;
    jjt.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(KinematicsError::SingularConfiguration { sigma })
}

/// Displacement bias `(dx, dz)` between a rigid shank-extension contact model
/// and a no-slip rolling hemisphere of radius `radius`, for a stance in which
/// the shank pitch (measured from `+x`) moves from `touchdown_pitch` to
/// `liftoff_pitch`.
pub fn rolling_bias(radius: f64, touchdown_pitch: f64, liftoff_pitch: f64) -> (f64, f64) {
    let (a1, a2) = (touchdown_pitch, liftoff_pitch);
    let dx = radius * (a1.cos() - a2.cos() - (a2 - a1));
    let dz = radius * (-a1.sin() + a2.sin());
    (dx, dz)
}

/// Joint angles placing the end effector at the hip-relative point `target`.
///
/// Solves the planar sub-problem in closed form for the knee-backward branch
/// (`q3 <= 0`) with the lateral coordinate on the leg's own side, then polishes
/// the result with Newton steps on [`fk_position`] so that wheel offsets are
/// honoured exactly.
pub fn inverse_position(target: &Vector3<f64>, geom: &LegGeometry) -> Result<Vector3<f64>, KinematicsError> {
    let unreachable = || KinematicsError::Unreachable {
        target: [target.x, target.y, target.z],
    };
    let s = geom.side.sign();
    let lh = geom.hip_offset_len;
    let (x, y, z) = (target.x, target.y, target.z - geom.wheel_radius);
    let rho2 = y * y + z * z;
    let d2 = rho2 - lh * lh;
    if d2 <= 0.0 {
        return Err(unreachable());
    }
    let d = d2.sqrt();
    let s1 = ((y * d + s * lh * z) / rho2).clamp(-1.0, 1.0);
    let c1 = (y * s * lh - z * d) / rho2;
    let q1 = s1.atan2(c1);
    let l1 = geom.thigh_len;
    let l2 = geom.calf_len + geom.wheel_radius;
    let r2 = d2 + x * x;
    let knee_cos = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if knee_cos.abs() > 1.0 + 1e-9 {
        return Err(unreachable());
    }
    let q3 = -knee_cos.clamp(-1.0, 1.0).acos();
    let r = r2.sqrt();
    let hip_cos = ((r2 + l1 * l1 - l2 * l2) / (2.0 * r * l1)).clamp(-1.0, 1.0);
    let q2 = (-x).atan2(d) + hip_cos.acos();
    let mut q = Vector3::new(q1, q2, q3);

    for _ in 0..20 {
        let residual = target - fk_position(&q, geom);
        if residual.norm() < 1e-15 {
            break;
        }
        let step = jacobian(&q, geom)
            .lu()
            .solve(&residual)
            .ok_or_else(|| KinematicsError::SingularConfiguration {
                sigma: min_singular_value(&jacobian(&q, geom)),
            })?;
        q += step;
    }
    if (target - fk_position(&q, geom)).norm() > 1e-10 {
        return Err(unreachable());
    }
    Ok(q)
}
