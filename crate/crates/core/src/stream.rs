//! File formats: JSON-lines sensor logs and CSV trajectories.
//!
//! One log frame per line:
//!
//! ```text
//! {"t":0.002,"att":[1,0,0,0],"gyro":[0,0,0],"legs":[{"q":[..],"dq":[..],"tau":[..],"wheel":{"psi":0.1,"dpsi":0}}, ..]}
//! ```
//!
//! `att` is a `w, x, y, z` quaternion and `wheel` is optional per leg. A frame
//! without any wheel entry reads back with an empty wheel list. Numbers are
//! written in shortest round-trip form, so writing and reading a frame is
//! lossless.

use std::io::{BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{BodyState, SensorFrame};
use crate::kinematics::JointReading;
use crate::wheel::WheelReading;

pub const TRAJECTORY_HEADER: &str = "stamp,x,y,z,roll,pitch,yaw,vx,vy,vz";

/// Quaternions further than this from unit norm are renormalized on read.
const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireWheel {
    psi: f64,
    dpsi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLeg {
    q: [f64; 3],
    dq: [f64; 3],
    tau: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wheel: Option<WireWheel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    t: f64,
    att: [f64; 4],
    gyro: [f64; 3],
    legs: Vec<WireLeg>,
}

fn array3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&SensorFrame> for WireFrame {
    fn from(frame: &SensorFrame) -> Self {
        let q = frame.imu_attitude.quaternion();
        Self {
            t: frame.stamp,
            att: [q.w, q.i, q.j, q.k],
            gyro: array3(&frame.imu_gyro),
            legs: frame
                .legs
                .iter()
                .enumerate()
                .map(|(i, leg)| WireLeg {
                    q: array3(&leg.q),
                    dq: array3(&leg.dq),
                    tau: array3(&leg.tau),
                    wheel: frame.wheel(i).map(|w| WireWheel { psi: w.psi, dpsi: w.dpsi }),
                })
                .collect(),
        }
    }
}

impl WireFrame {
    fn into_frame(self) -> Result<SensorFrame, String> {
        let [w, x, y, z] = self.att;
        let quat = Quaternion::new(w, x, y, z);
        let norm = quat.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err("attitude quaternion has zero or non-finite norm".into());
        }
        let imu_attitude = if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::new_normalize(quat)
        };
        let any_wheel = self.legs.iter().any(|l| l.wheel.is_some());
        let wheels = if any_wheel {
            self.legs
                .iter()
                .map(|l| l.wheel.as_ref().map(|w| WheelReading { psi: w.psi, dpsi: w.dpsi }))
                .collect()
        } else {
            Vec::new()
        };
        let legs = self
            .legs
            .iter()
            .map(|l| JointReading {
                q: l.q.into(),
                dq: l.dq.into(),
                tau: l.tau.into(),
            })
            .collect();
        Ok(SensorFrame {
            stamp: self.t,
            imu_attitude,
            imu_gyro: self.gyro.into(),
            legs,
            wheels,
        })
    }
}

/// Serializes one frame as a single JSON line without the trailing newline.
pub fn frame_to_json(frame: &SensorFrame) -> String {
    serde_json::to_string(&WireFrame::from(frame)).expect("log frames always serialize")
}

pub fn write_log<W: Write>(mut out: W, frames: &[SensorFrame]) -> std::io::Result<()> {
    for frame in frames {
        writeln!(out, "{}", frame_to_json(frame))?;
    }
    out.flush()
}

/// Streams frames from a JSON-lines log, yielding each with its line number.
/// Blank lines are skipped. Stamps must increase strictly and the leg count
/// must stay constant.
pub struct LogReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    last_stamp: Option<f64>,
    leg_count: Option<usize>,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            last_stamp: None,
            leg_count: None,
        }
    }

    fn parse_line(&mut self, text: &str) -> Result<SensorFrame, StreamError> {
        let line = self.line;
        let fail = |message: String| StreamError::Parse { line, message };
        let wire: WireFrame = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
        let frame = wire.into_frame().map_err(fail)?;
        if !frame.stamp.is_finite() {
            return Err(fail("stamp is not finite".into()));
        }
        if let Some(prev) = self.last_stamp {
            if !(frame.stamp > prev) {
                return Err(fail(format!("stamp {} does not increase past {prev}", frame.stamp)));
            }
        }
        match self.leg_count {
            Some(n) if n != frame.legs.len() => {
                return Err(fail(format!("{} legs, earlier frames have {n}", frame.legs.len())));
            }
            _ => self.leg_count = Some(frame.legs.len()),
        }
        self.last_stamp = Some(frame.stamp);
        Ok(frame)
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<(usize, SensorFrame), StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&text).map(|f| (self.line, f)));
        }
    }
}

pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<SensorFrame>, StreamError> {
    LogReader::new(reader).map(|r| r.map(|(_, f)| f)).collect()
}

pub fn write_trajectory_header<W: Write>(out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")
}

pub fn write_trajectory_row<W: Write>(out: &mut W, s: &BodyState) -> std::io::Result<()> {
    let (p, v) = (&s.position, &s.velocity);
    let values = [s.stamp, p.x, p.y, p.z, s.roll, s.pitch, s.yaw, v.x, v.y, v.z];
    for (i, value) in values.iter().enumerate() {
        let sep = if i == 0 { "" } else { "," };
        // adding zero folds -0 into 0; Debug output is shortest round-trip
        write!(out, "{sep}{:?}", value + 0.0)?;
    }
    writeln!(out)
}

pub fn write_trajectory<W: Write>(mut out: W, states: &[BodyState]) -> std::io::Result<()> {
    write_trajectory_header(&mut out)?;
    for s in states {
        write_trajectory_row(&mut out, s)?;
    }
    out.flush()
}

/// Reads a trajectory CSV. The header row is required.
pub fn read_trajectory<R: BufRead>(reader: R) -> Result<Vec<BodyState>, StreamError> {
    let mut states = Vec::new();
    let mut saw_header = false;
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        let line = i + 1;
        let fail = |message: String| StreamError::Parse { line, message };
        if text.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if text.trim() != TRAJECTORY_HEADER {
                return Err(fail(format!("expected header `{TRAJECTORY_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        let values: Vec<f64> = text
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fail(e.to_string()))?;
        if values.len() != 10 {
            return Err(fail(format!("expected 10 columns, got {}", values.len())));
        }
        states.push(BodyState {
            stamp: values[0],
            position: Vector3::new(values[1], values[2], values[3]),
            roll: values[4],
            pitch: values[5],
            yaw: values[6],
            velocity: Vector3::new(values[7], values[8], values[9]),
        });
    }
    if !saw_header {
        return Err(StreamError::Parse {
            line: 1,
            message: "missing trajectory header".into(),
        });
    }
    Ok(states)
}
