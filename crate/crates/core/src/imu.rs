//! Raw IMU sample type produced by the on-body sensor modules.

use crate::math::Vec3;

/// Highest sensor id the device layout supports (two leg modules of six
/// sensors each).
pub const MAX_SENSOR_ID: u8 = 11;

/// One timestamped 6-axis reading from one sensor.
///
/// Timestamps within a single sensor stream are strictly increasing; the
/// session parser and synchronizer enforce this before samples reach the
/// filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp_s: f64,
    pub sensor_id: u8,
    /// Specific force in m/s² (a level sensor at rest reads `(0, 0, +9.81)`).
    pub accel: Vec3,
    /// Angular rate in rad/s.
    pub gyro: Vec3,
}
