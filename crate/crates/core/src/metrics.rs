//! Closure and ground-truth error metrics for trajectories.

use serde::Serialize;
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::estimator::BodyState;

/// Stamps closer than this are considered equal when pairing with ground truth.
pub const STAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("ground truth has {truth} rows, trajectory has {trajectory}")]
    LengthMismatch { trajectory: usize, truth: usize },
    #[error("row {row}: stamp {trajectory} has no ground-truth match ({truth})")]
    StampMismatch { row: usize, trajectory: f64, truth: f64 },
}

/// Mean absolute error per axis against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AxisErrors {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Planar distance between the first and last positions (m).
    pub e_xy: f64,
    /// Height difference between the first and last positions (m).
    pub e_z: f64,
    pub mae: Option<AxisErrors>,
}

pub fn compute_metrics(trajectory: &[BodyState], truth: Option<&[BodyState]>) -> Result<Metrics, MetricsError> {
    let (first, last) = match (trajectory.first(), trajectory.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(MetricsError::EmptyTrajectory),
    };
    let d = last.position - first.position;
    let mae = truth.map(|gt| mean_absolute_errors(trajectory, gt)).transpose()?;
    Ok(Metrics {
        e_xy: d.x.hypot(d.y),
        e_z: d.z.abs(),
        mae,
    })
}

fn mean_absolute_errors(trajectory: &[BodyState], truth: &[BodyState]) -> Result<AxisErrors, MetricsError> {
    if trajectory.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            trajectory: trajectory.len(),
            truth: truth.len(),
        });
    }
    let mut sum = AxisErrors::default();
    for (row, (s, g)) in trajectory.iter().zip(truth).enumerate() {
        if (s.stamp - g.stamp).abs() > STAMP_TOLERANCE {
            return Err(MetricsError::StampMismatch {
                row,
                trajectory: s.stamp,
                truth: g.stamp,
            });
        }
        let dp = s.position - g.position;
        let dv = s.velocity - g.velocity;
        sum.x += dp.x.abs();
        sum.y += dp.y.abs();
        sum.z += dp.z.abs();
        sum.roll += wrap_angle(s.roll - g.roll).abs();
        sum.pitch += wrap_angle(s.pitch - g.pitch).abs();
        sum.yaw += wrap_angle(s.yaw - g.yaw).abs();
        sum.vx += dv.x.abs();
        sum.vy += dv.y.abs();
        sum.vz += dv.z.abs();
    }
    let n = trajectory.len() as f64;
    Ok(AxisErrors {
        x: sum.x / n,
        y: sum.y / n,
        z: sum.z / n,
        roll: sum.roll / n,
        pitch: sum.pitch / n,
        yaw: sum.yaw / n,
        vx: sum.vx / n,
        vy: sum.vy / n,
        vz: sum.vz / n,
    })
}
