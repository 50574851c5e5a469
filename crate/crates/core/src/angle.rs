//! Angle wrapping and attitude conversions shared by every module.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, UnitQuaternion};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut wrapped = (angle + PI).rem_euclid(TAU) - PI;
    if wrapped <= -PI {
        wrapped += TAU;
    }
    wrapped
}

/// Body-to-world rotation from roll, pitch and yaw (`Rz(yaw) * Ry(pitch) * Rx(roll)`).
pub fn rotation_from_rpy(roll: f64, pitch: f64, yaw: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(roll, pitch, yaw)
}

/// Roll, pitch and yaw of a body-to-world rotation.
pub fn rpy_from_rotation(rotation: &Rotation3<f64>) -> (f64, f64, f64) {
    rotation.euler_angles()
}

pub fn rpy_from_quaternion(attitude: &UnitQuaternion<f64>) -> (f64, f64, f64) {
    attitude.euler_angles()
}

/// Tilt-only rotation `Ry(pitch) * Rx(roll)`.
pub fn tilt_rotation(roll: f64, pitch: f64) -> Rotation3<f64> {
    Rotation3::from_euler_angles(roll, pitch, 0.0)
}
