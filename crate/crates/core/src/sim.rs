//! Kinematic gait simulator producing sensor streams with exact ground truth.
//!
//! The body follows a keyframed trajectory (level attitude, yaw only). Each
//! leg alternates between planted stance, swing arcs between footholds, and
//! body-attached rolling stance for wheeled legs. Joint angles come from
//! inverse kinematics of the prescribed foot positions, torques from an equal
//! share of body weight over the stance legs, and the IMU channels from the
//! trajectory itself. No dynamics or contact physics are modelled.
//!
//! Plans are read from flat text:
//!
//! ```text
//! rate = 500
//! body_height = 0.28
//! platform = 0.9, 2.1, 0.1          # x_min, x_max, height
//! waypoint = stand smooth 0.5 0 0 0 0
//! waypoint = walk smooth 12 6 0 0 0  # mode profile duration x y z yaw
//! ```
//!
//! Waypoints are absolute world poses reached at the end of each segment; the
//! trajectory starts at the origin with zero yaw. Yaw is in radians and is not
//! wrapped, so a full turn can be expressed.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt::Write as _;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::angle::wrap_angle;
use crate::config::{parse_entries, parse_f64, quadruped_legs, ConfigError};
use crate::estimator::{BodyState, SensorFrame};
use crate::kinematics::{inverse_position, jacobian, JointReading, LegGeometry};
use crate::wheel::WheelReading;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible plan at t = {stamp} s, leg {leg}: {reason}")]
    InfeasiblePlan { stamp: f64, leg: usize, reason: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Parse(#[from] ConfigError),
    #[error("unknown preset `{0}` (expected one of: {list})", list = PRESETS.join(", "))]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Trotting; legs swing whenever a whole swing fits in the walk interval.
    Walk,
    /// All feet planted; the body may still translate or rotate.
    Stand,
    /// All feet attached to the body and rolling (wheeled legs).
    Roll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Minimum-jerk blend with zero velocity at both ends.
    Smooth,
    /// Constant velocity.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub mode: Mode,
    pub profile: Profile,
    pub duration: f64,
    pub pose: Pose,
}

/// Raised strip of terrain spanning `x_min..=x_max` in world x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Platform {
    pub x_min: f64,
    pub x_max: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitPlan {
    pub rate_hz: f64,
    /// Nominal hip height above the ground; the ground at the start sits at
    /// `-body_height`.
    pub body_height: f64,
    pub period: f64,
    pub duty: f64,
    pub swing_height: f64,
    pub mass: f64,
    /// Gait phase offset per leg, in cycles.
    pub phase_offsets: Vec<f64>,
    pub legs: Vec<LegGeometry>,
    pub platforms: Vec<Platform>,
    pub waypoints: Vec<Waypoint>,
    /// Half-width of the uniform height error added to the foot at each
    /// touchdown sample after the first stance (m).
    pub touchdown_noise: f64,
    pub seed: u64,
}

impl Default for GaitPlan {
    fn default() -> Self {
        Self {
            rate_hz: 500.0,
            body_height: 0.28,
            period: 0.5,
            duty: 0.6,
            swing_height: 0.06,
            mass: 15.0,
            phase_offsets: vec![0.0, 0.5, 0.5, 0.0],
            legs: quadruped_legs(0.0),
            platforms: Vec::new(),
            waypoints: Vec::new(),
            touchdown_noise: 0.0,
            seed: 0,
        }
    }
}

/// Simulated stream plus ground truth, one entry per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub frames: Vec<SensorFrame>,
    pub truth: Vec<BodyState>,
    pub contacts: Vec<Vec<bool>>,
    /// True world-frame end-effector positions.
    pub feet: Vec<Vec<Vector3<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Imperfections {
    /// Joint encoder resolution (rad); zero disables quantization.
    pub encoder_quantum: f64,
    pub spike_probability: f64,
    pub spike_gain: f64,
    /// IMU yaw drift rate (rad/s).
    pub yaw_drift: f64,
    /// Fractional wheel slip applied to the encoder rate.
    pub wheel_slip: f64,
}

impl Imperfections {
    pub fn is_identity(&self) -> bool {
        self.encoder_quantum == 0.0
            && (self.spike_probability == 0.0 || self.spike_gain == 1.0)
            && self.yaw_drift == 0.0
            && self.wheel_slip == 0.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let values = [
            self.encoder_quantum,
            self.spike_probability,
            self.spike_gain,
            self.yaw_drift,
            self.wheel_slip,
        ];
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.spike_probability > 1.0 {
            return Err(SimError::InvalidPlan(
                "imperfection parameters must be finite and non-negative, spike probability at most 1".into(),
            ));
        }
        Ok(())
    }
}

pub const PRESETS: [&str; 5] = ["flat_loop", "stair_loop", "standing_drift", "wheel_roll", "wheel_bob"];

fn waypoint(mode: Mode, profile: Profile, duration: f64, x: f64, y: f64, z: f64, yaw: f64) -> Waypoint {
    Waypoint {
        mode,
        profile,
        duration,
        pose: Pose { x, y, z, yaw },
    }
}

/// Built-in plans with the imperfections they are meant to exercise.
pub fn preset(name: &str) -> Result<(GaitPlan, Imperfections), SimError> {
    use Mode::*;
    use Profile::*;
    let mut plan = GaitPlan::default();
    let mut imperfections = Imperfections::default();
    match name {
        // 6 m x 4 m rectangle, turning in place at the corners
        "flat_loop" => {
            let corners = [(6.0, 0.0, 12.0), (6.0, 4.0, 8.0), (0.0, 4.0, 12.0), (0.0, 0.0, 8.0)];
            plan.waypoints.push(waypoint(Stand, Smooth, 0.5, 0.0, 0.0, 0.0, 0.0));
            for (i, (x, y, duration)) in corners.into_iter().enumerate() {
                let yaw = i as f64 * FRAC_PI_2;
                plan.waypoints.push(waypoint(Walk, Smooth, duration, x, y, 0.0, yaw));
                plan.waypoints.push(waypoint(Walk, Smooth, 2.0, x, y, 0.0, yaw + FRAC_PI_2));
            }
            plan.waypoints.push(waypoint(Stand, Smooth, 0.5, 0.0, 0.0, 0.0, TAU));
        }
        // 0.1 m platform crossed forward and backward five times
        "stair_loop" => {
            plan.platforms.push(Platform {
                x_min: 0.9,
                x_max: 2.1,
                height: 0.1,
            });
            plan.touchdown_noise = 0.02;
            plan.waypoints.push(waypoint(Stand, Smooth, 0.5, 0.0, 0.0, 0.0, 0.0));
            let out = [(0.6, 0.0), (1.2, 0.1), (1.8, 0.1), (2.4, 0.0), (3.0, 0.0)];
            let back = [(2.4, 0.0), (1.8, 0.1), (1.2, 0.1), (0.6, 0.0), (0.0, 0.0)];
            for _ in 0..5 {
                for (x, z) in out.into_iter().chain(back) {
                    plan.waypoints.push(waypoint(Walk, Smooth, 1.5, x, 0.0, z, 0.0));
                }
            }
            plan.waypoints.push(waypoint(Stand, Smooth, 0.5, 0.0, 0.0, 0.0, 0.0));
        }
        "standing_drift" => {
            plan.waypoints.push(waypoint(Stand, Smooth, 15.0, 0.0, 0.0, 0.0, 0.0));
            imperfections.yaw_drift = 0.5f64.to_radians();
        }
        "wheel_roll" => {
            plan.legs = quadruped_legs(0.05);
            plan.waypoints.push(waypoint(Stand, Smooth, 0.2, 0.0, 0.0, 0.0, 0.0));
            plan.waypoints.push(waypoint(Roll, Linear, 10.0, 5.0, 0.0, 0.0, 0.0));
        }
        // wheels pinned while the body bobs up and down
        "wheel_bob" => {
            plan.legs = quadruped_legs(0.05);
            for _ in 0..3 {
                plan.waypoints.push(waypoint(Stand, Smooth, 1.0, 0.0, 0.0, -0.05, 0.0));
                plan.waypoints.push(waypoint(Stand, Smooth, 1.0, 0.0, 0.0, 0.0, 0.0));
            }
        }
        other => return Err(SimError::UnknownPreset(other.to_string())),
    }
    Ok((plan, imperfections))
}

impl GaitPlan {
    pub fn duration(&self) -> f64 {
        self.waypoints.iter().map(|w| w.duration).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidPlan(m));
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return invalid("rate must be positive".into());
        }
        if !(self.period > 0.0) || !(self.duty > 0.0 && self.duty < 1.0) {
            return invalid("period must be positive and duty in (0, 1)".into());
        }
        if !(self.mass > 0.0) || !(self.body_height > 0.0) || !(self.swing_height >= 0.0) {
            return invalid("mass and body height must be positive, swing height non-negative".into());
        }
        if !(self.touchdown_noise >= 0.0) {
            return invalid("touchdown noise must be non-negative".into());
        }
        if self.legs.is_empty() || self.phase_offsets.len() != self.legs.len() {
            return invalid(format!(
                "{} phase offsets for {} legs",
                self.phase_offsets.len(),
                self.legs.len()
            ));
        }
        for (i, leg) in self.legs.iter().enumerate() {
            leg.validate().map_err(|e| SimError::InvalidPlan(format!("leg {i}: {e}")))?;
        }
        if self.waypoints.is_empty() {
            return invalid("at least one waypoint is required".into());
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            let p = &w.pose;
            if !(w.duration > 0.0) || ![p.x, p.y, p.z, p.yaw].iter().all(|v| v.is_finite()) {
                return invalid(format!("waypoint {i}: duration must be positive and the pose finite"));
            }
            if w.mode == Mode::Roll && self.legs.iter().any(|l| !l.has_wheel()) {
                return invalid(format!("waypoint {i}: rolling needs wheels on every leg"));
            }
        }
        Ok(())
    }

    /// Parses the plan text format described in the module docs.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut plan = Self::default();
        let mut wheel_radius = 0.0;
        for (line, key, value) in parse_entries(text)? {
            let syntax = |message: String| SimError::Parse(ConfigError::Syntax { line, message });
            match key.as_str() {
                "rate" => plan.rate_hz = parse_f64(line, &value)?,
                "body_height" => plan.body_height = parse_f64(line, &value)?,
                "period" => plan.period = parse_f64(line, &value)?,
                "duty" => plan.duty = parse_f64(line, &value)?,
                "swing_height" => plan.swing_height = parse_f64(line, &value)?,
                "mass" => plan.mass = parse_f64(line, &value)?,
                "wheel_radius" => wheel_radius = parse_f64(line, &value)?,
                "touchdown_noise" => plan.touchdown_noise = parse_f64(line, &value)?,
                "seed" => {
                    plan.seed = value.parse().map_err(|_| syntax(format!("expected an integer seed, got `{value}`")))?
                }
                "phase_offsets" => {
                    plan.phase_offsets = split_list(&value)
                        .iter()
                        .map(|v| parse_f64(line, v))
                        .collect::<Result<_, _>>()?;
                }
                "platform" => {
                    let parts = split_list(&value);
                    if parts.len() != 3 {
                        return Err(syntax(format!("platform needs x_min, x_max, height; got `{value}`")));
                    }
                    plan.platforms.push(Platform {
                        x_min: parse_f64(line, parts[0])?,
                        x_max: parse_f64(line, parts[1])?,
                        height: parse_f64(line, parts[2])?,
                    });
                }
                "waypoint" => {
                    let parts = split_list(&value);
                    if parts.len() != 7 {
                        return Err(syntax(format!(
                            "waypoint needs mode profile duration x y z yaw; got `{value}`"
                        )));
                    }
                    let mode = match parts[0] {
                        "walk" => Mode::Walk,
                        "stand" => Mode::Stand,
                        "roll" => Mode::Roll,
                        other => return Err(syntax(format!("unknown mode `{other}`"))),
                    };
                    let profile = match parts[1] {
                        "smooth" => Profile::Smooth,
                        "linear" => Profile::Linear,
                        other => return Err(syntax(format!("unknown profile `{other}`"))),
                    };
                    let n: Vec<f64> = parts[2..].iter().map(|v| parse_f64(line, v)).collect::<Result<_, _>>()?;
                    plan.waypoints.push(waypoint(mode, profile, n[0], n[1], n[2], n[3], n[4]));
                }
                _ => return Err(SimError::Parse(ConfigError::UnknownKey { line, key })),
            }
        }
        plan.legs = quadruped_legs(wheel_radius);
        plan.validate()?;
        Ok(plan)
    }

    /// Inverse of [`GaitPlan::parse`] for plans on the default quadruped.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "rate = {}", self.rate_hz);
        let _ = writeln!(out, "body_height = {}", self.body_height);
        let _ = writeln!(out, "period = {}", self.period);
        let _ = writeln!(out, "duty = {}", self.duty);
        let _ = writeln!(out, "swing_height = {}", self.swing_height);
        let _ = writeln!(out, "mass = {}", self.mass);
        let _ = writeln!(out, "wheel_radius = {}", self.legs.first().map_or(0.0, |l| l.wheel_radius));
        let _ = writeln!(out, "touchdown_noise = {}", self.touchdown_noise);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "phase_offsets = {}", list(&self.phase_offsets));
        for p in &self.platforms {
            let _ = writeln!(out, "platform = {}", list(&[p.x_min, p.x_max, p.height]));
        }
        for w in &self.waypoints {
            let mode = match w.mode {
                Mode::Walk => "walk",
                Mode::Stand => "stand",
                Mode::Roll => "roll",
            };
            let profile = match w.profile {
                Profile::Smooth => "smooth",
                Profile::Linear => "linear",
            };
            let p = &w.pose;
            let _ = writeln!(
                out,
                "waypoint = {mode} {profile} {} {} {} {} {}",
                w.duration, p.x, p.y, p.z, p.yaw
            );
        }
        out
    }

    fn ground_height(&self, x: f64) -> f64 {
        let raised = self
            .platforms
            .iter()
            .filter(|p| x >= p.x_min && x <= p.x_max)
            .map(|p| p.height)
            .fold(0.0, f64::max);
        raised - self.body_height
    }
}

fn split_list(value: &str) -> Vec<&str> {
    value.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect()
}

/// Minimum-jerk blend and its derivative with respect to `tau`.
fn min_jerk(tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (t3 * (10.0 - 15.0 * tau + 6.0 * t2), 30.0 * t2 * (1.0 - tau) * (1.0 - tau))
}

/// Swing lift profile peaking at one for `tau = 0.5`, and its derivative.
fn swing_bump(tau: f64) -> (f64, f64) {
    let u = 1.0 - tau;
    (64.0 * (tau * u).powi(3), 192.0 * (tau * u).powi(2) * (u - tau))
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    from: Pose,
    to: Pose,
    mode: Mode,
    profile: Profile,
}

#[derive(Debug, Clone, Copy)]
struct BodySample {
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    yaw: f64,
    yaw_rate: f64,
}

impl BodySample {
    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
    }

    fn omega(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.yaw_rate)
    }
}

struct Trajectory {
    segments: Vec<Segment>,
}

impl Trajectory {
    fn new(waypoints: &[Waypoint]) -> Self {
        let mut segments = Vec::with_capacity(waypoints.len());
        let (mut t, mut from) = (0.0, Pose::default());
        for w in waypoints {
            segments.push(Segment {
                t0: t,
                t1: t + w.duration,
                from,
                to: w.pose,
                mode: w.mode,
                profile: w.profile,
            });
            t += w.duration;
            from = w.pose;
        }
        Self { segments }
    }

    fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    fn segment_at(&self, t: f64) -> &Segment {
        let i = self.segments.partition_point(|s| s.t1 <= t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    fn sample(&self, t: f64) -> BodySample {
        let s = self.segment_at(t);
        let duration = s.t1 - s.t0;
        let tau = ((t - s.t0) / duration).clamp(0.0, 1.0);
        let (blend, rate) = match s.profile {
            Profile::Smooth => {
                let (b, db) = min_jerk(tau);
                (b, db / duration)
            }
            Profile::Linear => (tau, 1.0 / duration),
        };
        let d = Vector3::new(s.to.x - s.from.x, s.to.y - s.from.y, s.to.z - s.from.z);
        let dyaw = s.to.yaw - s.from.yaw;
        BodySample {
            position: Vector3::new(s.from.x, s.from.y, s.from.z) + d * blend,
            velocity: d * rate,
            yaw: s.from.yaw + dyaw * blend,
            yaw_rate: dyaw * rate,
        }
    }

    /// Maximal time spans of consecutive segments sharing the walk mode, plus
    /// the remaining segments on their own.
    fn blocks(&self) -> Vec<(f64, f64, Mode)> {
        let mut out: Vec<(f64, f64, Mode)> = Vec::new();
        for s in &self.segments {
            match out.last_mut() {
                Some(last) if last.2 == Mode::Walk && s.mode == Mode::Walk => last.1 = s.t1,
                _ => out.push((s.t0, s.t1, s.mode)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Planted(Vector3<f64>),
    /// Body-frame foot position while rolling.
    Attached(Vector3<f64>),
    Swing { from: Vector3<f64>, to: Vector3<f64> },
}

#[derive(Debug, Clone, Copy)]
struct Span {
    t0: f64,
    t1: f64,
    piece: Piece,
}

/// Foot world position and velocity, and whether the foot bears load.
fn foot_state(span: &Span, t: f64, body: &BodySample, swing_height: f64) -> (Vector3<f64>, Vector3<f64>, bool) {
    match span.piece {
        Piece::Planted(f) => (f, Vector3::zeros(), true),
        Piece::Attached(p_b) => {
            let rot = body.rotation();
            (
                body.position + rot * p_b,
                body.velocity + rot * body.omega().cross(&p_b),
                true,
            )
        }
        Piece::Swing { from, to } => {
            let duration = span.t1 - span.t0;
            let tau = ((t - span.t0) / duration).clamp(0.0, 1.0);
            let (b, db) = min_jerk(tau);
            let (h, dh) = swing_bump(tau);
            let pos = from + (to - from) * b + Vector3::z() * (swing_height * h);
            let vel = ((to - from) * db + Vector3::z() * (swing_height * dh)) / duration;
            (pos, vel, t <= span.t0)
        }
    }
}

fn nominal_foothold(plan: &GaitPlan, leg: &LegGeometry, body: &BodySample) -> Vector3<f64> {
    let under_hip = leg.hip_mount + Vector3::new(0.0, leg.side.sign() * leg.hip_offset_len, 0.0);
    let p = body.position + body.rotation() * under_hip;
    Vector3::new(p.x, p.y, plan.ground_height(p.x))
}

fn leg_timeline(plan: &GaitPlan, traj: &Trajectory, leg_index: usize) -> Vec<Span> {
    let leg = &plan.legs[leg_index];
    let offset = plan.phase_offsets[leg_index];
    let (period, duty) = (plan.period, plan.duty);
    let mut foot = nominal_foothold(plan, leg, &traj.sample(0.0));
    let mut spans = Vec::new();
    for (a, b, mode) in traj.blocks() {
        match mode {
            Mode::Stand => spans.push(Span { t0: a, t1: b, piece: Piece::Planted(foot) }),
            Mode::Roll => {
                let start = traj.sample(a);
                let p_b = start.rotation().inverse() * (foot - start.position);
                spans.push(Span { t0: a, t1: b, piece: Piece::Attached(p_b) });
                let end = traj.sample(b);
                foot = end.position + end.rotation() * p_b;
            }
            Mode::Walk => {
                let mut cursor = a;
                let mut m = (a / period - duty + offset).ceil();
                loop {
                    let lift = (m + duty - offset) * period;
                    let land = lift + (1.0 - duty) * period;
                    m += 1.0;
                    if lift < a - 1e-12 {
                        continue;
                    }
                    if land > b + 1e-12 {
                        break;
                    }
                    if lift > cursor {
                        spans.push(Span { t0: cursor, t1: lift, piece: Piece::Planted(foot) });
                    }
                    let mid_stance = (land + duty * period / 2.0).min(b);
                    let target = nominal_foothold(plan, leg, &traj.sample(mid_stance));
                    spans.push(Span {
                        t0: lift,
                        t1: land,
                        piece: Piece::Swing { from: foot, to: target },
                    });
                    foot = target;
                    cursor = land;
                }
                if b > cursor {
                    spans.push(Span { t0: cursor, t1: b, piece: Piece::Planted(foot) });
                }
            }
        }
    }
    spans
}

/// Runs the plan and synthesizes every sensor channel.
pub fn generate_gait(plan: &GaitPlan) -> Result<SimOutput, SimError> {
    plan.validate()?;
    let traj = Trajectory::new(&plan.waypoints);
    let timelines: Vec<Vec<Span>> = (0..plan.legs.len()).map(|i| leg_timeline(plan, &traj, i)).collect();
    let n_legs = plan.legs.len();
    let samples = (traj.end() * plan.rate_hz).round() as usize + 1;
    let wheeled = plan.legs.iter().any(LegGeometry::has_wheel);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let mut out = SimOutput {
        frames: Vec::with_capacity(samples),
        truth: Vec::with_capacity(samples),
        contacts: Vec::with_capacity(samples),
        feet: Vec::with_capacity(samples),
    };
    let mut cursors = vec![0usize; n_legs];
    let mut prev_contact = vec![true; n_legs];
    let mut prev_wheel: Vec<Option<(f64, f64, Vector3<f64>)>> = vec![None; n_legs];

    for k in 0..samples {
        let t = k as f64 / plan.rate_hz;
        let body = traj.sample(t);
        let rot = body.rotation();
        let omega = body.omega();

        let mut feet = Vec::with_capacity(n_legs);
        let mut feet_vel = Vec::with_capacity(n_legs);
        let mut contact = Vec::with_capacity(n_legs);
        for (leg, spans) in timelines.iter().enumerate() {
            while cursors[leg] + 1 < spans.len() && t >= spans[cursors[leg]].t1 {
                cursors[leg] += 1;
            }
            let (f, v, c) = foot_state(&spans[cursors[leg]], t, &body, plan.swing_height);
            feet.push(f);
            feet_vel.push(v);
            contact.push(c);
        }
        let n_stance = contact.iter().filter(|&&c| c).count();
        let load = if n_stance > 0 { plan.mass * GRAVITY / n_stance as f64 } else { 0.0 };

        let mut legs = Vec::with_capacity(n_legs);
        let mut wheels = Vec::new();
        for (leg, geom) in plan.legs.iter().enumerate() {
            let infeasible = |reason: String| SimError::InfeasiblePlan { stamp: t, leg, reason };
            let mut target_world = feet[leg];
            if k > 0 && contact[leg] && !prev_contact[leg] && plan.touchdown_noise > 0.0 {
                target_world.z += rng.random_range(-plan.touchdown_noise..=plan.touchdown_noise);
            }
            let p_b = rot.inverse() * (target_world - body.position);
            let q = inverse_position(&(p_b - geom.hip_mount), geom).map_err(|e| infeasible(e.to_string()))?;
            let rate_b = rot.inverse() * (feet_vel[leg] - body.velocity) - omega.cross(&p_b);
            let jac = jacobian(&q, geom);
            let dq = jac
                .lu()
                .solve(&rate_b)
                .ok_or_else(|| infeasible("singular leg Jacobian".into()))?;
            let force_b = if contact[leg] {
                rot.inverse() * Vector3::new(0.0, 0.0, -load)
            } else {
                Vector3::zeros()
            };
            legs.push(JointReading {
                q,
                dq,
                tau: jac.transpose() * force_b,
            });

            if wheeled {
                let reading = geom.has_wheel().then(|| {
                    let heading = Vector3::new(body.yaw.cos(), body.yaw.sin(), 0.0);
                    let beta = q.y + q.z;
                    let rolling_rate = if contact[leg] { feet_vel[leg].dot(&heading) / geom.wheel_radius } else { 0.0 };
                    let psi = match prev_wheel[leg] {
                        Some((psi_prev, beta_prev, c_prev)) => {
                            let rolled = if contact[leg] && prev_contact[leg] {
                                (feet[leg] - c_prev).dot(&heading) / geom.wheel_radius
                            } else {
                                0.0
                            };
                            wrap_angle(psi_prev + rolled + (beta - beta_prev))
                        }
                        None => 0.0,
                    };
                    prev_wheel[leg] = Some((psi, beta, feet[leg]));
                    WheelReading {
                        psi,
                        dpsi: rolling_rate + dq.y + dq.z,
                    }
                });
                wheels.push(reading);
            }
        }

        out.frames.push(SensorFrame {
            stamp: t,
            imu_attitude: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), body.yaw),
            imu_gyro: omega,
            legs,
            wheels,
        });
        out.truth.push(BodyState {
            stamp: t,
            position: body.position,
            roll: 0.0,
            pitch: 0.0,
            yaw: wrap_angle(body.yaw),
            velocity: body.velocity,
        });
        prev_contact.clone_from(&contact);
        out.contacts.push(contact);
        out.feet.push(feet);
    }
    Ok(out)
}

/// Applies sensor imperfections to a stream. All-zero parameters return the
/// stream unchanged.
pub fn degrade(frames: &[SensorFrame], imperfections: &Imperfections, seed: u64) -> Vec<SensorFrame> {
    let mut out = frames.to_vec();
    let imp = imperfections;
    if imp.encoder_quantum > 0.0 {
        let quantum = imp.encoder_quantum;
        let mut prev: Option<(f64, Vec<Vector3<f64>>)> = None;
        for frame in &mut out {
            let quantized: Vec<Vector3<f64>> =
                frame.legs.iter().map(|l| l.q.map(|a| (a / quantum).floor() * quantum)).collect();
            for (i, (leg, q)) in frame.legs.iter_mut().zip(&quantized).enumerate() {
                leg.dq = match &prev {
                    Some((t_prev, q_prev)) => (q - q_prev[i]) / (frame.stamp - t_prev),
                    None => Vector3::zeros(),
                };
                leg.q = *q;
            }
            prev = Some((frame.stamp, quantized));
        }
    }
    if imp.spike_probability > 0.0 && imp.spike_gain != 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for leg in out.iter_mut().flat_map(|f| f.legs.iter_mut()) {
            for rate in leg.dq.iter_mut() {
                if rng.random::<f64>() < imp.spike_probability {
                    *rate *= imp.spike_gain;
                }
            }
        }
    }
    if imp.yaw_drift != 0.0 {
        let t0 = out.first().map_or(0.0, |f| f.stamp);
        for frame in &mut out {
            let drift = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), imp.yaw_drift * (frame.stamp - t0));
            frame.imu_attitude = drift * frame.imu_attitude;
            frame.imu_gyro += frame.imu_attitude.inverse() * Vector3::new(0.0, 0.0, imp.yaw_drift);
        }
    }
    if imp.wheel_slip != 0.0 {
        for wheel in out.iter_mut().flat_map(|f| f.wheels.iter_mut()).flatten() {
            wheel.dpsi *= 1.0 + imp.wheel_slip;
        }
    }
    out
}
