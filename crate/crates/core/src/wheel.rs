//! Rolling-contact propagation for wheel-legged stance.
//!
//! A wheel in stance moves its ground contact as it rolls. The encoder also
//! turns whenever the shank pitches, so the pitch contribution is removed
//! before the increment is integrated along the ground-projected heading.

use nalgebra::{Rotation3, Vector3};

use crate::angle::wrap_angle;

/// Planar heading norm below which the heading is undefined.
pub const HEADING_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelReading {
    /// Encoder angle, interpreted modulo `2 pi`.
    pub psi: f64,
    pub dpsi: f64,
}

/// Shank pitch in the world frame: body pitch plus thigh and calf angles.
pub fn shank_pitch(body_pitch: f64, q2: f64, q3: f64) -> f64 {
    body_pitch + q2 + q3
}

/// Encoder increment with the shank-pitch contribution removed.
pub fn effective_roll_increment(psi: f64, psi_prev: f64, shank: f64, shank_prev: f64) -> f64 {
    wrap_angle(psi - psi_prev) - (shank - shank_prev)
}

/// Unit ground-plane projection of the body forward axis.
pub fn heading_direction(body_rot: &Rotation3<f64>) -> Option<Vector3<f64>> {
    let forward = body_rot * Vector3::x();
    let planar = forward.x.hypot(forward.y);
    (planar > HEADING_EPSILON).then(|| Vector3::new(forward.x / planar, forward.y / planar, 0.0))
}

/// Moves an anchor by the rolled arc length. Without a heading the anchor is
/// left untouched for this cycle.
pub fn propagate_contact(
    anchor: &Vector3<f64>,
    roll_increment: f64,
    wheel_radius: f64,
    heading: Option<&Vector3<f64>>,
) -> Vector3<f64> {
    match heading {
        Some(h) => {
            let step = wheel_radius * roll_increment;
            Vector3::new(anchor.x + step * h.x, anchor.y + step * h.y, anchor.z)
        }
        None => *anchor,
    }
}

/// World-frame rolling velocity. Only the joint-induced shank rate is removed;
/// the body pitch rate is deliberately left out.
pub fn rolling_velocity(
    dpsi: f64,
    dq2: f64,
    dq3: f64,
    wheel_radius: f64,
    heading: Option<&Vector3<f64>>,
) -> Vector3<f64> {
    match heading {
        Some(h) => h * (wheel_radius * (dpsi - (dq2 + dq3))),
        None => Vector3::zeros(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, TAU};

    #[test]
    fn pinned_wheel_has_no_rolling() {
        assert!(effective_roll_increment(0.6, 0.5, 0.3, 0.2).abs() < 1e-15);
        assert!((effective_roll_increment(0.7, 0.5, 0.2, 0.2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn encoder_wrap_is_removed() {
        let inc = effective_roll_increment(-3.1, 3.1, 0.0, 0.0);
        // modular-arithmetic oracle: -6.2 + 2 pi
        let oracle = -6.2 + TAU;
        assert!((inc - oracle).abs() < 1e-12);
        assert!((inc - 0.0832).abs() < 1e-4);
    }

    #[test]
    fn headings() {
        let h = heading_direction(&Rotation3::identity()).unwrap();
        assert_eq!(h, Vector3::x());
        let h = heading_direction(&Rotation3::from_euler_angles(0.0, 0.0, FRAC_PI_2)).unwrap();
        assert!((h - Vector3::y()).norm() < 1e-15);
        assert!(heading_direction(&Rotation3::from_euler_angles(0.0, FRAC_PI_2, 0.0)).is_none());
    }

    #[test]
    fn propagation_cases() {
        let a = Vector3::new(0.3, -0.2, 0.1);
        assert_eq!(propagate_contact(&a, 0.7, 0.0, Some(&Vector3::x())), a);
        let moved = propagate_contact(&Vector3::zeros(), 0.2, 0.05, Some(&Vector3::x()));
        assert!((moved - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(propagate_contact(&a, 0.7, 0.05, None), a);
    }

    #[test]
    fn propagation_keeps_height() {
        let a = Vector3::new(1.0, 2.0, 0.123456789);
        let h = Vector3::new(0.6, 0.8, 0.0);
        assert_eq!(propagate_contact(&a, 1.3, 0.07, Some(&h)).z, a.z);
    }

    #[test]
    fn rolling_velocity_cases() {
        let h = Vector3::x();
        assert_eq!(rolling_velocity(0.5, 0.2, 0.3, 0.05, Some(&h)), Vector3::zeros());
        assert!((rolling_velocity(4.0, 0.0, 0.0, 0.05, Some(&h)) - Vector3::new(0.2, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(rolling_velocity(4.0, 0.0, 0.0, 0.0, Some(&h)), Vector3::zeros());
    }

    #[test]
    fn rolling_velocity_ignores_body_pitch_rate() {
        // only dq2 + dq3 is subtracted: a pure body pitch rate shows up as rolling
        let v = rolling_velocity(1.0, 0.25, 0.25, 0.1, Some(&Vector3::x()));
        assert!((v.x - 0.1 * 0.5).abs() < 1e-15);
    }
}
