//! Per-sample fusion loop.
//!
//! Each [`Estimator::step`] takes one synchronized sensor frame and runs:
//!
//! 1. attitude intake (roll/pitch from the IMU, yaw propagated by the IMU
//!    increment or held),
//! 2. per-leg kinematics, force estimation and stance gating,
//! 3. wheel anchor propagation for legs that stay in stance,
//! 4. the position blend from stationary anchors, or prediction only,
//! 5. touchdown anchoring with support-plane height correction,
//! 6. the velocity blend, optionally fed by the IKVel filter,
//! 7. the contact-geometry yaw correction.
//!
//! Anchors laid down in this cycle only start contributing in the next one,
//! so a touchdown never observes the position it was derived from.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::angle::{rotation_from_rpy, rpy_from_quaternion, rpy_from_rotation, wrap_angle};
use crate::config::{ConfigError, EstimatorConfig};
use crate::contact::{
    anchored_position_obs, anchored_velocity_obs, gate_contact, mean, record_footfall, FootfallRecord,
};
use crate::height::SupportPlanes;
use crate::ikvel::IkVelFilter;
use crate::kinematics::{fk_velocity, foot_force_body, JointReading};
use crate::wheel::{
    effective_roll_increment, heading_direction, propagate_contact, rolling_velocity, shank_pitch, WheelReading,
};
use crate::yaw::{apply_yaw_correction, circular_mean, pairwise_yaw};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BodyState {
    pub stamp: f64,
    pub position: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
}

impl Default for BodyState {
    fn default() -> Self {
        Self {
            stamp: 0.0,
            position: Vector3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            velocity: Vector3::zeros(),
        }
    }
}

impl BodyState {
    /// Body-to-world rotation.
    pub fn rotation(&self) -> Rotation3<f64> {
        rotation_from_rpy(self.roll, self.pitch, self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
            && [self.stamp, self.roll, self.pitch, self.yaw].iter().all(|v| v.is_finite())
    }
}

/// One synchronized sample of every proprioceptive channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub stamp: f64,
    pub imu_attitude: UnitQuaternion<f64>,
    /// Body-frame angular rate (rad/s).
    pub imu_gyro: Vector3<f64>,
    pub legs: Vec<JointReading>,
    /// Either empty or one entry per leg.
    pub wheels: Vec<Option<WheelReading>>,
}

impl SensorFrame {
    pub fn wheel(&self, leg: usize) -> Option<&WheelReading> {
        self.wheels.get(leg).and_then(Option::as_ref)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("stamp {got} does not follow previous stamp {previous}")]
    NonIncreasingStamp { previous: f64, got: f64 },
    #[error("frame has {got} legs, configuration has {expected}")]
    LegCountMismatch { expected: usize, got: usize },
    #[error("frame has {got} wheel entries, expected 0 or {expected}")]
    WheelCountMismatch { expected: usize, got: usize },
    #[error("frame contains a non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Yaw terms of the last cycle.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct YawDiagnostics {
    pub imu: f64,
    pub kinematic: Option<f64>,
    pub gain: Option<f64>,
    pub error: Option<f64>,
    pub pairs: usize,
    pub full_support_since: Option<f64>,
}

/// Snapshot of the internal caches after the last step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub stamp: f64,
    pub contacts: Vec<bool>,
    pub touchdowns: Vec<usize>,
    pub anchors: Vec<Option<FootfallRecord>>,
    pub planes: SupportPlanes,
    pub yaw: YawDiagnostics,
    /// Number of anchors that contributed to the position blend.
    pub position_observations: usize,
    pub prediction_only: bool,
    /// Degraded paths taken during the cycle.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    config: EstimatorConfig,
    state: BodyState,
    initialized: bool,
    prev_imu_yaw: f64,
    contacts: Vec<bool>,
    footfalls: Vec<Option<FootfallRecord>>,
    /// Last encoder angle and shank pitch per wheel.
    wheel_prev: Vec<Option<(f64, f64)>>,
    planes: SupportPlanes,
    full_support_since: Option<f64>,
    ikvel: Option<IkVelFilter>,
    diagnostics: Diagnostics,
}

impl Estimator {
    pub fn new(config: EstimatorConfig) -> Result<Self, ConfigError> {
        Self::with_initial_state(config, BodyState::default())
    }

    /// Starts from a known pose. The stamp of `initial` is ignored; the first
    /// frame defines it.
    pub fn with_initial_state(config: EstimatorConfig, initial: BodyState) -> Result<Self, ConfigError> {
        config.validate()?;
        let n = config.legs.len();
        let ikvel = config.ikvel.enabled.then(|| IkVelFilter::new(n, config.ikvel));
        Ok(Self {
            state: initial,
            initialized: false,
            prev_imu_yaw: 0.0,
            contacts: vec![false; n],
            footfalls: vec![None; n],
            wheel_prev: vec![None; n],
            planes: SupportPlanes::new(),
            full_support_since: None,
            ikvel,
            diagnostics: Diagnostics::default(),
            config,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state(&self) -> &BodyState {
        &self.state
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn planes(&self) -> &SupportPlanes {
        &self.planes
    }

    pub fn ikvel(&self) -> Option<&IkVelFilter> {
        self.ikvel.as_ref()
    }

    fn check_frame(&self, frame: &SensorFrame) -> Result<(), EstimatorError> {
        let expected = self.config.legs.len();
        if frame.legs.len() != expected {
            return Err(EstimatorError::LegCountMismatch {
                expected,
                got: frame.legs.len(),
            });
        }
        if !frame.wheels.is_empty() && frame.wheels.len() != expected {
            return Err(EstimatorError::WheelCountMismatch {
                expected,
                got: frame.wheels.len(),
            });
        }
        if !frame.stamp.is_finite() {
            return Err(EstimatorError::NonFinite("stamp"));
        }
        if self.initialized && !(frame.stamp > self.state.stamp) {
            return Err(EstimatorError::NonIncreasingStamp {
                previous: self.state.stamp,
                got: frame.stamp,
            });
        }
        let q = frame.imu_attitude.quaternion();
        if !q.coords.iter().chain(frame.imu_gyro.iter()).all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite("imu"));
        }
        if !frame.legs.iter().all(JointReading::is_finite) {
            return Err(EstimatorError::NonFinite("joints"));
        }
        if !frame.wheels.iter().flatten().all(|w| w.psi.is_finite() && w.dpsi.is_finite()) {
            return Err(EstimatorError::NonFinite("wheels"));
        }
        Ok(())
    }

    pub fn step(&mut self, frame: &SensorFrame) -> Result<BodyState, EstimatorError> {
        self.check_frame(frame)?;
        let cfg = &self.config;
        let n = cfg.legs.len();
        let mut notes = Vec::new();

        // (1) attitude
        let (roll, pitch, imu_yaw) = rpy_from_quaternion(&frame.imu_attitude);
        let first = !self.initialized;
        let mut yaw = self.state.yaw;
        if cfg.yaw.imu_yaw_enabled {
            yaw = if first { imu_yaw } else { wrap_angle(yaw + wrap_angle(imu_yaw - self.prev_imu_yaw)) };
        }
        let dt = if first { 0.0 } else { frame.stamp - self.state.stamp };
        let rot = rotation_from_rpy(roll, pitch, yaw);
        let heading = heading_direction(&rot);

        // (2) kinematics and gating
        let mut feet = Vec::with_capacity(n);
        let mut contacts = vec![false; n];
        for (leg, (reading, geom)) in frame.legs.iter().zip(&cfg.legs).enumerate() {
            feet.push(geom.foot_in_body(&reading.q));
            match foot_force_body(&reading.q, &reading.tau, geom, cfg.sigma_min) {
                Ok(force) => contacts[leg] = gate_contact((rot * force).z, cfg.force_threshold),
                Err(e) => notes.push(format!("leg {leg}: {e}; treated as swing")),
            }
        }
        let continuing: Vec<usize> = (0..n)
            .filter(|&i| contacts[i] && self.contacts[i] && self.footfalls[i].is_some_and(|f| f.in_contact))
            .collect();

        // (3) wheel anchors
        for (leg, geom) in cfg.legs.iter().enumerate() {
            let Some(wheel) = frame.wheel(leg) else {
                self.wheel_prev[leg] = None;
                continue;
            };
            let q = &frame.legs[leg].q;
            let shank = shank_pitch(pitch, q.y, q.z);
            if let (Some((psi_prev, shank_prev)), true) = (self.wheel_prev[leg], continuing.contains(&leg)) {
                if geom.has_wheel() {
                    let inc = effective_roll_increment(wheel.psi, psi_prev, shank, shank_prev);
                    if heading.is_none() {
                        notes.push(format!("leg {leg}: heading undefined; wheel anchor held"));
                    }
                    if let Some(record) = self.footfalls[leg].as_mut() {
                        record.anchor = propagate_contact(&record.anchor, inc, geom.wheel_radius, heading.as_ref());
                    }
                }
            }
            self.wheel_prev[leg] = Some((wheel.psi, shank));
        }

        // (4) position
        let predicted = self.state.position + self.state.velocity * dt;
        let observations: Vec<Vector3<f64>> = continuing
            .iter()
            .filter_map(|&i| self.footfalls[i].map(|f| anchored_position_obs(&f.anchor, &rot, &feet[i])))
            .collect();
        let position = match mean(&observations) {
            Ok(obs) => predicted * (1.0 - cfg.fusion.position) + obs * cfg.fusion.position,
            Err(_) => predicted,
        };

        // (5) touchdowns and lift-offs
        let mut touchdowns = Vec::new();
        for leg in 0..n {
            if contacts[leg] && !continuing.contains(&leg) {
                let mut anchor = record_footfall(&position, &rot, &feet[leg]);
                if cfg.height_enabled {
                    anchor.z = self.planes.correct(anchor.z, frame.stamp, &cfg.height).corrected;
                }
                self.footfalls[leg] = Some(FootfallRecord::new(leg, anchor, frame.stamp));
                touchdowns.push(leg);
            } else if !contacts[leg] {
                if let Some(record) = self.footfalls[leg].as_mut() {
                    record.in_contact = false;
                }
            }
        }

        // (6) velocity
        let foot_rates: Vec<Vector3<f64>> = match self.ikvel.as_mut() {
            Some(filter) => filter.filter_leg_velocity(frame.stamp, &frame.legs, &cfg.legs),
            None => frame.legs.iter().zip(&cfg.legs).map(|(r, g)| fk_velocity(&r.q, &r.dq, g)).collect(),
        };
        let stance_velocities: Vec<Vector3<f64>> = (0..n)
            .filter(|&i| contacts[i])
            .map(|i| {
                let mut v = anchored_velocity_obs(&rot, &frame.imu_gyro, &feet[i], &foot_rates[i]);
                let geom = &cfg.legs[i];
                if let (true, Some(wheel)) = (geom.has_wheel(), frame.wheel(i)) {
                    let dq = &frame.legs[i].dq;
                    v += rolling_velocity(wheel.dpsi, dq.y, dq.z, geom.wheel_radius, heading.as_ref());
                }
                v
            })
            .collect();
        let velocity = match mean(&stance_velocities) {
            Ok(obs) => self.state.velocity * (1.0 - cfg.fusion.velocity) + obs * cfg.fusion.velocity,
            Err(_) => self.state.velocity,
        };

        // (7) yaw from contact geometry
        let stance_count = contacts.iter().filter(|&&c| c).count();
        let mut yaw_diag = YawDiagnostics {
            imu: imu_yaw,
            ..Default::default()
        };
        if stance_count < n {
            self.full_support_since = None;
        }
        if cfg.yaw.enabled && continuing.len() >= 2 {
            let anchors: Vec<_> = continuing.iter().filter_map(|&i| self.footfalls[i].map(|f| f.anchor)).collect();
            let feet_c: Vec<_> = continuing.iter().map(|&i| feet[i]).collect();
            let kinematic = pairwise_yaw(&anchors, &feet_c, roll, pitch).and_then(|ys| {
                yaw_diag.pairs = ys.len();
                circular_mean(&ys)
            });
            match kinematic {
                Ok(yaw_kin) => {
                    let out = apply_yaw_correction(
                        yaw,
                        yaw_kin,
                        stance_count,
                        n,
                        frame.stamp,
                        self.full_support_since,
                        &cfg.yaw,
                    );
                    yaw = out.yaw;
                    self.full_support_since = out.full_support_since;
                    yaw_diag.kinematic = Some(yaw_kin);
                    yaw_diag.gain = Some(out.gain);
                    yaw_diag.error = Some(out.error);
                }
                Err(e) => notes.push(format!("yaw correction skipped: {e}")),
            }
        }
        yaw_diag.full_support_since = self.full_support_since;

        self.state = BodyState {
            stamp: frame.stamp,
            position,
            roll,
            pitch,
            yaw,
            velocity,
        };
        self.prev_imu_yaw = imu_yaw;
        self.contacts = contacts;
        self.initialized = true;
        self.diagnostics = Diagnostics {
            stamp: frame.stamp,
            contacts: self.contacts.clone(),
            touchdowns,
            anchors: self.footfalls.clone(),
            planes: self.planes.clone(),
            yaw: yaw_diag,
            position_observations: observations.len(),
            prediction_only: observations.is_empty(),
            notes,
        };
        Ok(self.state)
    }
}

/// Dead-reckoning step used while no leg is in contact: constant velocity and
/// gyro-integrated attitude.
pub fn predict_only(state: &BodyState, dt: f64, imu_gyro: &Vector3<f64>) -> BodyState {
    let mut next = *state;
    next.stamp = state.stamp + dt;
    next.position = state.position + state.velocity * dt;
    if *imu_gyro != Vector3::zeros() {
        let rot = state.rotation() * Rotation3::new(imu_gyro * dt);
        let (roll, pitch, yaw) = rpy_from_rotation(&rot);
        next.roll = roll;
        next.pitch = pitch;
        next.yaw = yaw;
    }
    next
}
