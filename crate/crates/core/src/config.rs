//! Estimator configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! contact.f_th = -20
//! height.delta_h = 0.04
//! yaw.imu_yaw_enabled = false
//! leg.2.hip_mount = -0.19, 0.05, 0.0
//! ```
//!
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::contact::DEFAULT_FORCE_THRESHOLD;
use crate::height::HeightParams;
use crate::ikvel::{CkfNoise, IkVelSettings};
use crate::kinematics::{LegGeometry, Side, DEFAULT_SIGMA_MIN};
use crate::yaw::YawParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Fixed gains of the translational blend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionGains {
    /// Weight of the anchored position observation.
    pub position: f64,
    /// Weight of the anchored velocity observation.
    pub velocity: f64,
}

impl Default for FusionGains {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub legs: Vec<LegGeometry>,
    /// Vertical world-frame force at or below which a leg is in stance (N).
    pub force_threshold: f64,
    /// Jacobians with a smaller singular value are not used for gating (m).
    pub sigma_min: f64,
    pub height_enabled: bool,
    pub height: HeightParams,
    pub yaw: YawParams,
    pub ikvel: IkVelSettings,
    pub fusion: FusionGains,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::for_legs(quadruped_legs(0.0))
    }
}

impl EstimatorConfig {
    pub fn for_legs(legs: Vec<LegGeometry>) -> Self {
        Self {
            legs,
            force_threshold: DEFAULT_FORCE_THRESHOLD,
            sigma_min: DEFAULT_SIGMA_MIN,
            height_enabled: true,
            height: HeightParams::default(),
            yaw: YawParams::default(),
            ikvel: IkVelSettings::default(),
            fusion: FusionGains::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.legs.is_empty() {
            return invalid("at least one leg is required");
        }
        for (i, leg) in self.legs.iter().enumerate() {
            leg.validate().map_err(|e| ConfigError::Invalid(format!("leg {i}: {e}")))?;
        }
        if !self.force_threshold.is_finite() {
            return invalid("contact.f_th must be finite");
        }
        if !(self.sigma_min > 0.0) {
            return invalid("kinematics.sigma_min must be positive");
        }
        if !(self.height.match_radius > 0.0) {
            return invalid("height.delta_h must be positive");
        }
        if !(self.height.fade_time > 0.0) {
            return invalid("height.t_fade must be positive");
        }
        if !(self.height.decay_scale > 0.0) {
            return invalid("height.kappa must be positive");
        }
        if !(self.yaw.alpha0 > 0.0 && self.yaw.alpha0 <= 1.0) {
            return invalid("yaw.alpha0 must lie in (0, 1]");
        }
        if !(self.yaw.ramp_time > 0.0) {
            return invalid("yaw.ramp_time must be positive");
        }
        let noise = &self.ikvel.noise;
        let diagonals = noise.q.diagonal().iter().chain(noise.r.diagonal().iter()).copied().collect::<Vec<_>>();
        if diagonals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("ikvel variances must be finite and non-negative");
        }
        if noise.r.diagonal().iter().any(|v| *v == 0.0) {
            return invalid("ikvel.r_angle and ikvel.r_rate must be positive");
        }
        if !(self.ikvel.dt_max > 0.0) {
            return invalid("ikvel.dt_max must be positive");
        }
        for (name, gain) in [("fusion.k_p", self.fusion.position), ("fusion.k_v", self.fusion.velocity)] {
            if !(0.0..=1.0).contains(&gain) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses the flat text form on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let mut config = Self::default();
        let mut noise = NoiseVariances::default();
        let mut leg_count = None;
        let mut wheel_radius = None;
        let mut leg_fields: BTreeMap<usize, Vec<(usize, String, String)>> = BTreeMap::new();

        for (line, key, value) in entries {
            let number = || parse_f64(line, &value);
            let flag = || parse_bool(line, &value);
            match key.as_str() {
                "contact.f_th" => config.force_threshold = number()?,
                "kinematics.sigma_min" => config.sigma_min = number()?,
                "height.enabled" => config.height_enabled = flag()?,
                "height.delta_h" => config.height.match_radius = number()?,
                "height.t_fade" => config.height.fade_time = number()?,
                "height.kappa" => config.height.decay_scale = number()?,
                "yaw.enabled" => config.yaw.enabled = flag()?,
                "yaw.imu_yaw_enabled" => config.yaw.imu_yaw_enabled = flag()?,
                "yaw.alpha0" => config.yaw.alpha0 = number()?,
                "yaw.ramp_time" => config.yaw.ramp_time = number()?,
                "ikvel.enabled" => config.ikvel.enabled = flag()?,
                "ikvel.q_pos" => noise.q_pos = number()?,
                "ikvel.q_vel" => noise.q_vel = number()?,
                "ikvel.r_angle" => noise.r_angle = number()?,
                "ikvel.r_rate" => noise.r_rate = number()?,
                "ikvel.dt_max" => config.ikvel.dt_max = number()?,
                "fusion.k_p" => config.fusion.position = number()?,
                "fusion.k_v" => config.fusion.velocity = number()?,
                "robot.legs" => leg_count = Some(parse_usize(line, &value)?),
                "robot.wheel_radius" => wheel_radius = Some(number()?),
                other => {
                    let Some((index, field)) = split_leg_key(other) else {
                        return Err(ConfigError::UnknownKey { line, key });
                    };
                    leg_fields.entry(index).or_default().push((line, field.to_string(), value));
                }
            }
        }
        config.ikvel.noise = noise.into_noise();

        let base = quadruped_legs(wheel_radius.unwrap_or(0.0));
        let count = leg_count.unwrap_or(base.len());
        if let Some((&index, fields)) = leg_fields.iter().find(|(&i, _)| i >= count) {
            return Err(ConfigError::Syntax {
                line: fields[0].0,
                message: format!("leg index {index} exceeds robot.legs = {count}"),
            });
        }
        let mut legs = Vec::with_capacity(count);
        for index in 0..count {
            let fields = leg_fields.remove(&index).unwrap_or_default();
            legs.push(build_leg(index, base.get(index), wheel_radius, &fields)?);
        }
        config.legs = legs;
        config.validate()?;
        Ok(config)
    }
}

struct NoiseVariances {
    q_pos: f64,
    q_vel: f64,
    r_angle: f64,
    r_rate: f64,
}

impl Default for NoiseVariances {
    fn default() -> Self {
        let noise = CkfNoise::default();
        Self {
            q_pos: noise.q[(0, 0)],
            q_vel: noise.q[(3, 3)],
            r_angle: noise.r[(0, 0)],
            r_rate: noise.r[(3, 3)],
        }
    }
}

impl NoiseVariances {
    fn into_noise(self) -> CkfNoise {
        CkfNoise::from_variances(self.q_pos, self.q_vel, self.r_angle, self.r_rate)
    }
}

/// Four-legged point-foot layout (front-left, front-right, rear-left,
/// rear-right) with 0.213 m links. A positive `wheel_radius` turns every foot
/// into a wheel.
pub fn quadruped_legs(wheel_radius: f64) -> Vec<LegGeometry> {
    [(0.19, Side::Left), (0.19, Side::Right), (-0.19, Side::Left), (-0.19, Side::Right)]
        .into_iter()
        .map(|(x, side)| LegGeometry {
            hip_offset_len: 0.08,
            thigh_len: 0.213,
            calf_len: 0.213,
            wheel_radius,
            side,
            hip_mount: Vector3::new(x, 0.05 * side.sign(), 0.0),
        })
        .collect()
}

fn build_leg(
    index: usize,
    base: Option<&LegGeometry>,
    wheel_radius: Option<f64>,
    fields: &[(usize, String, String)],
) -> Result<LegGeometry, ConfigError> {
    let mut hip_offset = base.map(|b| b.hip_offset_len);
    let mut thigh = base.map(|b| b.thigh_len);
    let mut calf = base.map(|b| b.calf_len);
    let mut radius = base.map(|b| b.wheel_radius).or(wheel_radius).or(Some(0.0));
    let mut side = base.map(|b| b.side);
    let mut mount = base.map(|b| b.hip_mount);
    for (line, field, value) in fields {
        let line = *line;
        match field.as_str() {
            "hip_offset" => hip_offset = Some(parse_f64(line, value)?),
            "thigh" => thigh = Some(parse_f64(line, value)?),
            "calf" => calf = Some(parse_f64(line, value)?),
            "wheel_radius" => radius = Some(parse_f64(line, value)?),
            "side" => {
                let sign = parse_f64(line, value)?;
                side = Some(Side::from_sign(sign).ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: format!("side must be 1 or -1, got {value}"),
                })?);
            }
            "hip_mount" => mount = Some(parse_vec3(line, value)?),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: format!("leg.{index}.{field}"),
                })
            }
        }
    }
    let missing = |name: &str| ConfigError::Invalid(format!("leg {index}: missing `leg.{index}.{name}`"));
    Ok(LegGeometry {
        hip_offset_len: hip_offset.ok_or_else(|| missing("hip_offset"))?,
        thigh_len: thigh.ok_or_else(|| missing("thigh"))?,
        calf_len: calf.ok_or_else(|| missing("calf"))?,
        wheel_radius: radius.unwrap_or(0.0),
        side: side.ok_or_else(|| missing("side"))?,
        hip_mount: mount.ok_or_else(|| missing("hip_mount"))?,
    })
}

fn split_leg_key(key: &str) -> Option<(usize, &str)> {
    let rest = key.strip_prefix("leg.")?;
    let (index, field) = rest.split_once('.')?;
    Some((index.parse().ok()?, field))
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_entries(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key".into(),
            });
        }
        out.push((line, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_f64(line: usize, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::Syntax {
        line,
        message: format!("expected a number, got `{value}`"),
    })
}

pub(crate) fn parse_usize(line: usize, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::Syntax {
        line,
        message: format!("expected a non-negative integer, got `{value}`"),
    })
}

pub(crate) fn parse_bool(line: usize, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Syntax {
            line,
            message: format!("expected a boolean, got `{value}`"),
        }),
    }
}

pub(crate) fn parse_vec3(line: usize, value: &str) -> Result<Vector3<f64>, ConfigError> {
    let parts: Vec<_> = value.split([',', ' ']).filter(|s| !s.is_empty()).collect();
    if parts.len() != 3 {
        return Err(ConfigError::Syntax {
            line,
            message: format!("expected three components, got `{value}`"),
        });
    }
    Ok(Vector3::new(
        parse_f64(line, parts[0])?,
        parse_f64(line, parts[1])?,
        parse_f64(line, parts[2])?,
    ))
}
