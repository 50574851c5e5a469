//! Per-leg foot velocity filter with an inverse-kinematics measurement model.
//!
//! Each leg keeps a 6-D constant-velocity state `[r, r_dot]` (hip-to-foot
//! position and velocity in the body frame). The measurement is the raw joint
//! sample `[q, dq]`, predicted from the state through closed-form inverse
//! kinematics and the inverse Jacobian. Because joint angles are far less
//! noisy than encoder-differenced rates, the filtered `r_dot` is free of the
//! impulsive spikes that quantization puts into `J(q) dq`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::ckf::{CkfError, CubatureKalmanFilter, MeasurementModel, ProcessModel};
use crate::kinematics::{fk_position, min_singular_value, JointReading, LegGeometry, DEFAULT_SIGMA_MIN};

/// Regularizer inside the ab/adduction radical.
pub const IK_EPSILON: f64 = 1e-12;
/// Slack allowed on `asin`/`acos` arguments before a target counts as unreachable.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;
/// Rate-block inflation of the measurement covariance when some cubature
/// point lands on a singular Jacobian.
pub const SINGULAR_RATE_INFLATION: f64 = 1e6;

const PRIOR_POSITION_VAR: f64 = 1e-4;
const PRIOR_VELOCITY_VAR: f64 = 1e-1;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum IkError {
    #[error("foot position is outside the leg workspace")]
    Unreachable,
    #[error("inverse-kinematics Jacobian is singular")]
    SingularJacobian,
}

/// Process and measurement covariances. `q` is a rate and is scaled by the
/// step length at prediction time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkfNoise {
    pub q: Matrix6<f64>,
    pub r: Matrix6<f64>,
}

impl CkfNoise {
    pub fn from_variances(q_pos: f64, q_vel: f64, r_angle: f64, r_rate: f64) -> Self {
        Self {
            q: Matrix6::from_diagonal(&Vector6::new(q_pos, q_pos, q_pos, q_vel, q_vel, q_vel)),
            r: Matrix6::from_diagonal(&Vector6::new(r_angle, r_angle, r_angle, r_rate, r_rate, r_rate)),
        }
    }
}

/// Tuned for 1e-3 rad encoders differentiated at 500 Hz.
impl Default for CkfNoise {
    fn default() -> Self {
        Self::from_variances(1e-6, 0.3, 2.5e-7, 0.3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkVelSettings {
    pub enabled: bool,
    pub noise: CkfNoise,
    /// Steps longer than this (in magnitude) are treated as zero-length.
    pub dt_max: f64,
}

impl Default for IkVelSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            noise: CkfNoise::default(),
            dt_max: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkfLegState {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
    pub t: f64,
}

impl CkfLegState {
    /// Position from forward kinematics, zero velocity, diagonal prior.
    pub fn initial(q: &Vector3<f64>, t: f64, geom: &LegGeometry) -> Self {
        let r = fk_position(q, geom);
        Self {
            x: Vector6::new(r.x, r.y, r.z, 0.0, 0.0, 0.0),
            p: prior_covariance(),
            t,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(3).into()
    }
}

pub fn prior_covariance() -> Matrix6<f64> {
    Matrix6::from_diagonal(&Vector6::new(
        PRIOR_POSITION_VAR,
        PRIOR_POSITION_VAR,
        PRIOR_POSITION_VAR,
        PRIOR_VELOCITY_VAR,
        PRIOR_VELOCITY_VAR,
        PRIOR_VELOCITY_VAR,
    ))
}

/// Jacobian of the inverse-kinematics model, with the calf extended by the
/// end-effector radius.
pub fn ik_jacobian(theta: &Vector3<f64>, geom: &LegGeometry) -> Matrix3<f64> {
    let s = geom.side.sign();
    let lh = geom.hip_offset_len;
    let lt = geom.thigh_len;
    let l2 = geom.calf_len + geom.wheel_radius;
    let (s1, c1) = theta[0].sin_cos();
    let (s2, c2) = theta[1].sin_cos();
    let (s23, c23) = (theta[1] + theta[2]).sin_cos();
    Matrix3::new(
        0.0,
        -(l2 * c23 + lt * c2),
        -(l2 * c23),
        -s * lh * s1 + l2 * c1 * c23 + lt * c2 * c1,
        -l2 * s1 * s23 - lt * s1 * s2,
        -l2 * s1 * s23,
        s * lh * c1 + l2 * s1 * c23 + lt * c2 * s1,
        l2 * c1 * s23 + lt * c1 * s2,
        l2 * c1 * s23,
    )
}

fn checked_domain(value: f64, strict: bool) -> Result<f64, IkError> {
    if strict && value.abs() > 1.0 + DOMAIN_TOLERANCE {
        return Err(IkError::Unreachable);
    }
    Ok(value.clamp(-1.0, 1.0))
}

/// Closed-form joint angles for a hip-relative foot position. With `strict`
/// off, out-of-domain arguments are clamped instead of rejected.
fn ik_angles(pos: &Vector3<f64>, geom: &LegGeometry, strict: bool) -> Result<Vector3<f64>, IkError> {
    let s = geom.side.sign();
    let lh = geom.hip_offset_len;
    let lt = geom.thigh_len;
    let l2 = geom.calf_len + geom.wheel_radius;
    let (x, y, z) = (pos.x, pos.y, pos.z);

    let rho2 = (y * y + z * z).max(f64::MIN_POSITIVE);
    let radicand = IK_EPSILON + 4.0 * lh * lh * z * z - 4.0 * rho2 * (lh * lh - y * y);
    if strict && radicand < 0.0 {
        return Err(IkError::Unreachable);
    }
    let abad_arg = checked_domain((2.0 * lh * z + radicand.max(0.0).sqrt()) / (2.0 * rho2), strict)?;
    let theta1 = s * abad_arg.asin();

    let (s1, c1) = theta1.sin_cos();
    let z_bar = z - s * lh * s1;
    let y_bar = y - s * lh * c1;
    let r_bar = y_bar.hypot(z_bar);
    let r2 = r_bar * r_bar + x * x;
    let r = r2.sqrt().max(f64::MIN_POSITIVE);

    let knee_arg = checked_domain((lt * lt + l2 * l2 - r2) / (2.0 * lt * l2), strict)?;
    let theta3 = -std::f64::consts::PI + knee_arg.acos();
    let hip_arg = checked_domain((r2 + lt * lt - l2 * l2) / (2.0 * r * lt), strict)?;
    let theta2 = (-x).atan2(r_bar) + hip_arg.acos();
    Ok(Vector3::new(theta1, theta2, theta3))
}

fn joint_rates(theta: &Vector3<f64>, v: &Vector3<f64>, geom: &LegGeometry) -> Option<Vector3<f64>> {
    let j = ik_jacobian(theta, geom);
    if !(min_singular_value(&j) >= DEFAULT_SIGMA_MIN) {
        return None;
    }
    j.lu().solve(v)
}

/// Predicted joint measurement `[theta, theta_dot]` for a Cartesian foot state.
pub fn ik_measurement(x: &Vector6<f64>, geom: &LegGeometry) -> Result<Vector6<f64>, IkError> {
    let pos = Vector3::new(x[0], x[1], x[2]);
    let vel = Vector3::new(x[3], x[4], x[5]);
    let theta = ik_angles(&pos, geom, true)?;
    let rates = joint_rates(&theta, &vel, geom).ok_or(IkError::SingularJacobian)?;
    Ok(stack(&theta, &rates))
}

/// Total variant used inside the filter: clamps domains and substitutes zero
/// rates at singular points. The flag reports a singular fallback.
fn ik_measurement_lenient(x: &Vector6<f64>, geom: &LegGeometry) -> (Vector6<f64>, bool) {
    let pos = Vector3::new(x[0], x[1], x[2]);
    let vel = Vector3::new(x[3], x[4], x[5]);
    let theta = ik_angles(&pos, geom, false).unwrap_or_else(|_| Vector3::zeros());
    match joint_rates(&theta, &vel, geom) {
        Some(rates) => (stack(&theta, &rates), false),
        None => (stack(&theta, &Vector3::zeros()), true),
    }
}

fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

struct ConstantVelocity {
    dt: f64,
    q_rate: Matrix6<f64>,
}

impl ProcessModel<6> for ConstantVelocity {
    fn propagate(&self, x: &Vector6<f64>) -> Vector6<f64> {
        Vector6::new(
            x[0] + self.dt * x[3],
            x[1] + self.dt * x[4],
            x[2] + self.dt * x[5],
            x[3],
            x[4],
            x[5],
        )
    }

    fn noise(&self) -> Matrix6<f64> {
        self.q_rate * self.dt
    }
}

struct InverseKinematicsModel<'a> {
    geom: &'a LegGeometry,
    r: Matrix6<f64>,
    singular_seen: bool,
}

impl MeasurementModel<6, 6> for InverseKinematicsModel<'_> {
    fn observe(&mut self, x: &Vector6<f64>) -> Vector6<f64> {
        let (z, singular) = ik_measurement_lenient(x, self.geom);
        self.singular_seen |= singular;
        z
    }

    fn noise(&self) -> Matrix6<f64> {
        if self.singular_seen {
            let mut r = self.r;
            r.fixed_view_mut::<3, 3>(3, 3).scale_mut(SINGULAR_RATE_INFLATION);
            r
        } else {
            self.r
        }
    }
}

/// Result of one filter cycle for a leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkfStep {
    pub state: CkfLegState,
    /// The covariance had to be reset after a factorization failure.
    pub recovered: bool,
}

fn run_step(
    engine: &mut CubatureKalmanFilter<6>,
    state: &CkfLegState,
    z: &Vector6<f64>,
    t_now: f64,
    settings: &IkVelSettings,
    geom: &LegGeometry,
) -> CkfStep {
    let mut dt = t_now - state.t;
    if dt.abs() > settings.dt_max {
        dt = 0.0;
    }
    engine.x = state.x;
    engine.p = state.p;

    let process = ConstantVelocity {
        dt,
        q_rate: settings.noise.q,
    };
    let mut measurement = InverseKinematicsModel {
        geom,
        r: settings.noise.r,
        singular_seen: false,
    };
    let outcome: Result<(), CkfError> = engine
        .predict(&process)
        .and_then(|_| engine.update(z, &mut measurement).map(|_| ()));
    let recovered = outcome.is_err();
    if recovered {
        engine.p = prior_covariance();
    }

    let mut x = engine.x;
    x[1] = geom.side.sign() * x[1].abs();
    CkfStep {
        state: CkfLegState { x, p: engine.p, t: t_now },
        recovered,
    }
}

/// One predict/update cycle for a single leg.
pub fn ckf_step(
    state: &CkfLegState,
    z: &Vector6<f64>,
    t_now: f64,
    settings: &IkVelSettings,
    geom: &LegGeometry,
) -> CkfStep {
    let mut engine = CubatureKalmanFilter::new(state.x, state.p);
    run_step(&mut engine, state, z, t_now, settings, geom)
}

/// Filter bank for all legs. A single filter engine is shared; each leg's
/// `(x, P, t)` is swapped in and out around its update.
#[derive(Debug, Clone)]
pub struct IkVelFilter {
    settings: IkVelSettings,
    engine: CubatureKalmanFilter<6>,
    legs: Vec<Option<CkfLegState>>,
    recoveries: usize,
}

impl IkVelFilter {
    pub fn new(leg_count: usize, settings: IkVelSettings) -> Self {
        Self {
            settings,
            engine: CubatureKalmanFilter::new(Vector6::zeros(), prior_covariance()),
            legs: vec![None; leg_count],
            recoveries: 0,
        }
    }

    pub fn settings(&self) -> &IkVelSettings {
        &self.settings
    }

    pub fn leg_state(&self, leg: usize) -> Option<&CkfLegState> {
        self.legs.get(leg).and_then(Option::as_ref)
    }

    /// Number of covariance resets so far.
    pub fn recoveries(&self) -> usize {
        self.recoveries
    }

    /// Filtered hip-to-foot velocity per leg. Legs seen for the first time are
    /// initialized from forward kinematics and updated in the same call.
    pub fn filter_leg_velocity(
        &mut self,
        stamp: f64,
        joints: &[JointReading],
        geoms: &[LegGeometry],
    ) -> Vec<Vector3<f64>> {
        joints
            .iter()
            .zip(geoms)
            .enumerate()
            .map(|(leg, (reading, geom))| {
                let cached = self.legs[leg].unwrap_or_else(|| CkfLegState::initial(&reading.q, stamp, geom));
                let z = stack(&reading.q, &reading.dq);
                let step = run_step(&mut self.engine, &cached, &z, stamp, &self.settings, geom);
                if step.recovered {
                    self.recoveries += 1;
                }
                self.legs[leg] = Some(step.state);
                step.state.velocity()
            })
            .collect()
    }
}
