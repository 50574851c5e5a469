//! Contact-anchored proprioceptive odometry for legged and wheel-legged robots.
//!
//! The estimator fuses IMU attitude with leg kinematics: feet in stance are
//! treated as stationary world anchors, touchdown heights snap to remembered
//! support planes, wheels propagate their anchors by the rolled arc length,
//! and multi-contact geometry bounds heading drift. A per-leg cubature Kalman
//! filter can replace differentiated encoder rates in the velocity path.
//!
//! ```
//! use stance_core::{generate_gait, preset, Estimator, EstimatorConfig};
//!
//! let (plan, _) = preset("wheel_bob").unwrap();
//! let sim = generate_gait(&plan).unwrap();
//! let mut estimator = Estimator::new(EstimatorConfig::for_legs(plan.legs.clone())).unwrap();
//! for frame in &sim.frames {
//!     estimator.step(frame).unwrap();
//! }
//! let error = estimator.state().position - sim.truth.last().unwrap().position;
//! assert!(error.norm() < 1e-9);
//! ```

// Validation writes `!(x > 0.0)` so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod ckf;
pub mod config;
pub mod contact;
pub mod estimator;
pub mod height;
pub mod ikvel;
pub mod kinematics;
pub mod metrics;
pub mod replay;
pub mod sim;
pub mod stream;
pub mod wheel;
pub mod yaw;

pub use config::{ConfigError, EstimatorConfig, FusionGains};
pub use contact::{ContactSet, FootfallRecord};
pub use estimator::{predict_only, BodyState, Diagnostics, Estimator, EstimatorError, SensorFrame};
pub use height::{HeightParams, SupportPlane, SupportPlanes};
pub use ikvel::{CkfLegState, CkfNoise, IkVelFilter, IkVelSettings};
pub use kinematics::{JointReading, KinematicsError, LegGeometry, Side};
pub use metrics::{compute_metrics, Metrics};
pub use replay::{run_replay, ReplayError, ReplaySummary};
pub use sim::{degrade, generate_gait, preset, GaitPlan, Imperfections, SimError, SimOutput};
pub use wheel::WheelReading;
pub use yaw::YawParams;
