//! Heading from multi-contact geometry.
//!
//! While several feet are planted, the world-frame baselines between their
//! anchors are fixed. Comparing those bearings with the tilt-compensated
//! body-frame baselines from kinematics yields an absolute yaw reference that
//! is blended into the yaw state with a contact-scheduled gain.

use nalgebra::Vector3;
use thiserror::Error;

use crate::angle::{tilt_rotation, wrap_angle};

/// Baselines shorter than this in the horizontal plane are skipped (m).
pub const MIN_BASELINE: f64 = 0.02;
const DEGENERATE_SUM: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum YawError {
    #[error("at least two stance legs are required, got {0}")]
    InsufficientContacts(usize),
    #[error("angles cancel out; circular mean is undefined")]
    DegenerateMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawParams {
    pub enabled: bool,
    /// Use the IMU yaw channel for propagation; otherwise yaw is held between
    /// kinematic corrections.
    pub imu_yaw_enabled: bool,
    /// Gain outside full support, in `(0, 1]`.
    pub alpha0: f64,
    /// Time to ramp the gain from `alpha0` to one under full support (s).
    pub ramp_time: f64,
}

impl Default for YawParams {
    fn default() -> Self {
        Self {
            enabled: true,
            imu_yaw_enabled: true,
            alpha0: 0.02,
            ramp_time: 3.0,
        }
    }
}

/// Yaw implied by every unordered pair of stance legs. `anchors[k]` and
/// `feet_body[k]` belong to the same leg.
pub fn pairwise_yaw(
    anchors: &[Vector3<f64>],
    feet_body: &[Vector3<f64>],
    roll: f64,
    pitch: f64,
) -> Result<Vec<f64>, YawError> {
    let n = anchors.len().min(feet_body.len());
    if n < 2 {
        return Err(YawError::InsufficientContacts(n));
    }
    let tilt = tilt_rotation(roll, pitch);
    let mut yaws = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let world = anchors[j] - anchors[i];
            let body = tilt * (feet_body[j] - feet_body[i]);
            if world.x.hypot(world.y) < MIN_BASELINE || body.x.hypot(body.y) < MIN_BASELINE {
                continue;
            }
            yaws.push(wrap_angle(world.y.atan2(world.x) - body.y.atan2(body.x)));
        }
    }
    Ok(yaws)
}

pub fn circular_mean(angles: &[f64]) -> Result<f64, YawError> {
    let (sin_sum, cos_sum) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    if sin_sum.abs() <= DEGENERATE_SUM && cos_sum.abs() <= DEGENERATE_SUM {
        return Err(YawError::DegenerateMean);
    }
    Ok(wrap_angle(sin_sum.atan2(cos_sum)))
}

/// Result of a gain-scheduled correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawCorrection {
    pub yaw: f64,
    pub gain: f64,
    pub error: f64,
    /// Start of the current full-support interval, if any.
    pub full_support_since: Option<f64>,
}

/// Pulls `yaw` toward `yaw_kin`. The gain stays at `alpha0` until every leg
/// is in stance, then ramps linearly to one over `ramp_time`.
pub fn apply_yaw_correction(
    yaw: f64,
    yaw_kin: f64,
    n_contacts: usize,
    full_support: usize,
    now: f64,
    full_support_since: Option<f64>,
    params: &YawParams,
) -> YawCorrection {
    let error = wrap_angle(yaw_kin - yaw);
    let (gain, since) = if n_contacts < full_support {
        (params.alpha0, None)
    } else {
        let t0 = full_support_since.unwrap_or(now);
        let ramp = params.alpha0 + (now - t0) / params.ramp_time * (1.0 - params.alpha0);
        (ramp.clamp(0.0, 1.0), Some(t0))
    };
    let corrected = if gain == 1.0 { wrap_angle(yaw_kin) } else { wrap_angle(yaw + gain * error) };
    YawCorrection {
        yaw: corrected,
        gain,
        error,
        full_support_since: since,
    }
}
