//! Stance gating, touchdown detection and contact-anchored trunk observations.

use std::collections::BTreeSet;

use nalgebra::{Rotation3, Vector3};
use serde::Serialize;
use thiserror::Error;

/// Default vertical-force threshold for a roughly 15 kg platform. Supporting
/// forces are negative under the sign convention used here.
pub const DEFAULT_FORCE_THRESHOLD: f64 = -20.0;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ContactError {
    #[error("no leg is in contact")]
    EmptyContactSet,
    #[error("position and velocity observation counts differ ({positions} vs {velocities})")]
    MismatchedObservations { positions: usize, velocities: usize },
}

/// World-frame contact anchor of one leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FootfallRecord {
    pub leg_id: usize,
    pub anchor: Vector3<f64>,
    pub in_contact: bool,
    pub touchdown_time: f64,
}

impl FootfallRecord {
    pub fn new(leg_id: usize, anchor: Vector3<f64>, touchdown_time: f64) -> Self {
        Self {
            leg_id,
            anchor,
            in_contact: true,
            touchdown_time,
        }
    }
}

/// Indices of legs currently in contact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContactSet {
    members: BTreeSet<usize>,
}

impl ContactSet {
    pub fn from_flags(flags: &[bool]) -> Self {
        Self {
            members: flags.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i).collect(),
        }
    }

    pub fn contains(&self, leg: usize) -> bool {
        self.members.contains(&leg)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }
}

/// `true` when the world-frame vertical force is at or below the threshold.
pub fn gate_contact(force_world_z: f64, threshold: f64) -> bool {
    force_world_z <= threshold
}

pub fn detect_touchdown(prev_contact: bool, curr_contact: bool) -> bool {
    curr_contact && !prev_contact
}

/// World-frame end-effector position used as the new anchor at touchdown.
pub fn record_footfall(
    body_pos: &Vector3<f64>,
    body_rot: &Rotation3<f64>,
    foot_body: &Vector3<f64>,
) -> Vector3<f64> {
    body_pos + body_rot * foot_body
}

/// Trunk position implied by a stationary anchor.
pub fn anchored_position_obs(
    anchor: &Vector3<f64>,
    body_rot: &Rotation3<f64>,
    foot_body: &Vector3<f64>,
) -> Vector3<f64> {
    anchor - body_rot * foot_body
}

/// Trunk velocity implied by a stationary contact: `-R (w x p + p_dot)`.
pub fn anchored_velocity_obs(
    body_rot: &Rotation3<f64>,
    omega_body: &Vector3<f64>,
    foot_body: &Vector3<f64>,
    foot_vel_body: &Vector3<f64>,
) -> Vector3<f64> {
    -(body_rot * (omega_body.cross(foot_body) + foot_vel_body))
}

/// Unweighted mean of the per-leg position and velocity observations.
pub fn fuse_observations(
    positions: &[Vector3<f64>],
    velocities: &[Vector3<f64>],
) -> Result<(Vector3<f64>, Vector3<f64>), ContactError> {
    if positions.len() != velocities.len() {
        return Err(ContactError::MismatchedObservations {
            positions: positions.len(),
            velocities: velocities.len(),
        });
    }
    Ok((mean(positions)?, mean(velocities)?))
}

pub(crate) fn mean(values: &[Vector3<f64>]) -> Result<Vector3<f64>, ContactError> {
    if values.is_empty() {
        return Err(ContactError::EmptyContactSet);
    }
    let sum: Vector3<f64> = values.iter().sum();
    Ok(sum / values.len() as f64)
}
