//! Core library for IMU-based gait analysis: rotation algebra, a per-sensor
//! error-state EKF for orientation, sensor-pair joint kinematics, gait-cycle
//! metrics, the on-disk session format, a synthetic gait simulator used as
//! the test oracle, and report/plot generation.

pub mod ekf;
pub mod imu;
pub mod kinematics;
pub mod kv;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod session;
pub mod synth;

pub use imu::ImuSample;
pub use math::{EulerAngles, Quaternion, RotationMatrix, Vec3};
