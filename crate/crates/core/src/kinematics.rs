//! Sensor-pair kinematics: maps per-sensor orientation streams onto joint
//! angle time series via the proximal/distal pairing of the leg modules.
//!
//! Each leg carries six sensors; the hip pairs pelvis with upper thigh, the
//! knee pairs lower thigh with upper shank, and the ankle pairs lower shank
//! with the foot. Joint angles are reported relative to a quiet-standing
//! calibration pose, so every joint reads 0° on the calibration window.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ekf::attitude_from_accel;
use crate::imu::ImuSample;
use crate::math::{relative_rotation, EulerAngles, MathError, Quaternion, Vec3};

/// Accel variance (sum over axes, (m/s²)²) above which a calibration window
/// is rejected as not quasi-static.
pub const QUASI_STATIC_ACCEL_VAR: f64 = 0.5;

/// Minimum calibration window length in seconds.
pub const MIN_CALIBRATION_WINDOW_S: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("layout invalid: {0}")]
    InvalidLayout(String),
    #[error("sensor {sensor_id} missing from {context}")]
    MissingSensor {
        sensor_id: u8,
        context: &'static str,
    },
    #[error("sensor {sensor_id}: calibration window too short ({duration_s:.2} s < {MIN_CALIBRATION_WINDOW_S} s)")]
    CalibrationWindowTooShort { sensor_id: u8, duration_s: f64 },
    #[error(
        "sensor {sensor_id} not quasi-static during calibration: accel variance \
         {variance:.3} (m/s²)² exceeds {QUASI_STATIC_ACCEL_VAR}"
    )]
    NotQuasiStatic { sensor_id: u8, variance: f64 },
    #[error("streams for sensors {proximal} and {distal} are not on the same tick grid")]
    MisalignedStreams { proximal: u8, distal: u8 },
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Left, Side::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Joint {
    Hip,
    Knee,
    Ankle,
}

impl Joint {
    pub const ALL: [Joint; 3] = [Joint::Hip, Joint::Knee, Joint::Ankle];

    pub fn as_str(self) -> &'static str {
        match self {
            Joint::Hip => "hip",
            Joint::Knee => "knee",
            Joint::Ankle => "ankle",
        }
    }
}

/// Where a sensor sits on the leg, ordered proximal to distal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SegmentRole {
    Pelvis,
    ThighUpper,
    ThighLower,
    ShankUpper,
    ShankLower,
    Foot,
}

impl SegmentRole {
    pub const ALL: [SegmentRole; 6] = [
        SegmentRole::Pelvis,
        SegmentRole::ThighUpper,
        SegmentRole::ThighLower,
        SegmentRole::ShankUpper,
        SegmentRole::ShankLower,
        SegmentRole::Foot,
    ];

    pub fn index(self) -> usize {
        match self {
            SegmentRole::Pelvis => 0,
            SegmentRole::ThighUpper => 1,
            SegmentRole::ThighLower => 2,
            SegmentRole::ShankUpper => 3,
            SegmentRole::ShankLower => 4,
            SegmentRole::Foot => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentRole::Pelvis => "pelvis",
            SegmentRole::ThighUpper => "thigh_upper",
            SegmentRole::ThighLower => "thigh_lower",
            SegmentRole::ShankUpper => "shank_upper",
            SegmentRole::ShankLower => "shank_lower",
            SegmentRole::Foot => "foot",
        }
    }

    pub fn from_str(s: &str) -> Option<SegmentRole> {
        SegmentRole::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// Sensor ids for one leg, by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegLayout {
    pub sensor_ids: [u8; 6],
}

impl LegLayout {
    pub fn sensor_for(&self, role: SegmentRole) -> u8 {
        self.sensor_ids[role.index()]
    }
}

/// Full 12-sensor assignment plus the joint pair map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorLayout {
    pub left: LegLayout,
    pub right: LegLayout,
}

impl Default for SensorLayout {
    /// Left leg module owns sensors 0–5, right leg module sensors 6–11, both
    /// ordered proximal to distal.
    fn default() -> Self {
        SensorLayout {
            left: LegLayout {
                sensor_ids: [0, 1, 2, 3, 4, 5],
            },
            right: LegLayout {
                sensor_ids: [6, 7, 8, 9, 10, 11],
            },
        }
    }
}

impl SensorLayout {
    pub fn leg(&self, side: Side) -> &LegLayout {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn sensor_for(&self, side: Side, role: SegmentRole) -> u8 {
        self.leg(side).sensor_for(role)
    }

    /// Proximal and distal sensors bridging `joint` on `side`.
    pub fn joint_pair(&self, side: Side, joint: Joint) -> (u8, u8) {
        let leg = self.leg(side);
        match joint {
            Joint::Hip => (
                leg.sensor_for(SegmentRole::Pelvis),
                leg.sensor_for(SegmentRole::ThighUpper),
            ),
            Joint::Knee => (
                leg.sensor_for(SegmentRole::ThighLower),
                leg.sensor_for(SegmentRole::ShankUpper),
            ),
            Joint::Ankle => (
                leg.sensor_for(SegmentRole::ShankLower),
                leg.sensor_for(SegmentRole::Foot),
            ),
        }
    }

    pub fn all_sensor_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self
            .left
            .sensor_ids
            .iter()
            .chain(self.right.sensor_ids.iter())
            .copied()
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let ids = self.all_sensor_ids();
        for window in ids.windows(2) {
            if window[0] == window[1] {
                return Err(KinematicsError::InvalidLayout(format!(
                    "sensor id {} assigned twice",
                    window[0]
                )));
            }
        }
        if let Some(&id) = ids.iter().find(|&&id| id > crate::imu::MAX_SENSOR_ID) {
            return Err(KinematicsError::InvalidLayout(format!(
                "sensor id {id} exceeds {}",
                crate::imu::MAX_SENSOR_ID
            )));
        }
        Ok(())
    }
}

/// Fixed sensor-to-segment alignment quaternions, one per sensor.
///
/// Produced by [`static_calibrate`]; aligning a sensor's orientation stream
/// (`q ⊗ alignment`) zeroes every joint angle on the calibration window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MountingCalibration {
    alignments: BTreeMap<u8, Quaternion>,
}

impl MountingCalibration {
    /// Identity alignment for every sensor in `layout`.
    pub fn identity(layout: &SensorLayout) -> Self {
        let mut alignments = BTreeMap::new();
        for id in layout.all_sensor_ids() {
            alignments.insert(id, Quaternion::IDENTITY);
        }
        MountingCalibration { alignments }
    }

    pub fn set(&mut self, sensor_id: u8, alignment: Quaternion) {
        self.alignments.insert(sensor_id, alignment);
    }

    pub fn alignment_for(&self, sensor_id: u8) -> Result<Quaternion, KinematicsError> {
        self.alignments
            .get(&sensor_id)
            .copied()
            .ok_or(KinematicsError::MissingSensor {
                sensor_id,
                context: "calibration",
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, Quaternion)> + '_ {
        self.alignments.iter().map(|(&id, &q)| (id, q))
    }
}

/// One sensor's orientation stream on the session tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionStream {
    pub sensor_id: u8,
    pub timestamps: Vec<f64>,
    pub quats: Vec<Quaternion>,
}

/// Euler joint angles over time for one joint of one leg. `primary_deg` is
/// the flexion/extension component (the Euler pitch, about the mediolateral
/// axis) in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleSeries {
    pub joint: Joint,
    pub side: Side,
    pub timestamps: Vec<f64>,
    pub angles: Vec<EulerAngles>,
    pub primary_deg: Vec<f64>,
}

/// Derives per-sensor alignment quaternions from quiet standing so that all
/// joint angles evaluate to zero on the window itself.
///
/// Each sensor needs at least [`MIN_CALIBRATION_WINDOW_S`] of samples whose
/// accel variance stays under [`QUASI_STATIC_ACCEL_VAR`].
pub fn static_calibrate(
    standing: &BTreeMap<u8, Vec<ImuSample>>,
    layout: &SensorLayout,
) -> Result<MountingCalibration, KinematicsError> {
    layout.validate()?;
    let mut calib = MountingCalibration::default();
    for sensor_id in layout.all_sensor_ids() {
        let samples = standing.get(&sensor_id).filter(|s| !s.is_empty()).ok_or(
            KinematicsError::MissingSensor {
                sensor_id,
                context: "standing data",
            },
        )?;
        let duration = samples.last().unwrap().timestamp_s - samples[0].timestamp_s;
        if duration + 1e-9 < MIN_CALIBRATION_WINDOW_S {
            return Err(KinematicsError::CalibrationWindowTooShort {
                sensor_id,
                duration_s: duration,
            });
        }
        let n = samples.len() as f64;
        let mut mean = Vec3::ZERO;
        for s in samples {
            mean = mean + s.accel;
        }
        mean = mean * (1.0 / n);
        let variance: f64 = samples
            .iter()
            .map(|s| (s.accel - mean).norm_squared())
            .sum::<f64>()
            / n;
        if variance > QUASI_STATIC_ACCEL_VAR {
            return Err(KinematicsError::NotQuasiStatic {
                sensor_id,
                variance,
            });
        }
        calib.set(sensor_id, attitude_from_accel(mean).conjugate());
    }
    Ok(calib)
}

/// Computes the six joint-angle series (3 joints × 2 legs) from per-sensor
/// orientation streams.
///
/// All paired streams must sit on the same tick grid; per tick the joint
/// rotation is `relative_rotation(q_prox ⊗ align_prox, q_dist ⊗ align_dist)`
/// decomposed into Euler angles.
pub fn joint_angles(
    streams: &BTreeMap<u8, QuaternionStream>,
    layout: &SensorLayout,
    calib: &MountingCalibration,
) -> Result<Vec<JointAngleSeries>, KinematicsError> {
    layout.validate()?;
    let mut out = Vec::with_capacity(6);
    for side in Side::ALL {
        for joint in Joint::ALL {
            let (prox_id, dist_id) = layout.joint_pair(side, joint);
            let prox = streams
                .get(&prox_id)
                .ok_or(KinematicsError::MissingSensor {
                    sensor_id: prox_id,
                    context: "orientation streams",
                })?;
            let dist = streams
                .get(&dist_id)
                .ok_or(KinematicsError::MissingSensor {
                    sensor_id: dist_id,
                    context: "orientation streams",
                })?;
            if prox.timestamps.len() != dist.timestamps.len()
                || prox
                    .timestamps
                    .iter()
                    .zip(&dist.timestamps)
                    .any(|(a, b)| (a - b).abs() > 1e-9)
            {
                return Err(KinematicsError::MisalignedStreams {
                    proximal: prox_id,
                    distal: dist_id,
                });
            }
            let a_prox = calib.alignment_for(prox_id)?;
            let a_dist = calib.alignment_for(dist_id)?;
            let mut angles = Vec::with_capacity(prox.quats.len());
            let mut primary = Vec::with_capacity(prox.quats.len());
            for (qp, qd) in prox.quats.iter().zip(&dist.quats) {
                let rel = relative_rotation(*qp * a_prox, *qd * a_dist)?;
                let e = rel.to_euler();
                primary.push(e.pitch_deg());
                angles.push(e);
            }
            out.push(JointAngleSeries {
                joint,
                side,
                timestamps: prox.timestamps.clone(),
                angles,
                primary_deg: primary,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::math::STANDARD_GRAVITY;

    fn standing_samples(
        layout: &SensorLayout,
        accel: Vec3,
        n: usize,
    ) -> BTreeMap<u8, Vec<ImuSample>> {
        let mut map = BTreeMap::new();
        for id in layout.all_sensor_ids() {
            let samples: Vec<ImuSample> = (0..n)
                .map(|k| ImuSample {
                    timestamp_s: k as f64 / 32.0,
                    sensor_id: id,
                    accel,
                    gyro: Vec3::ZERO,
                })
                .collect();
            map.insert(id, samples);
        }
        map
    }

    fn constant_streams(
        layout: &SensorLayout,
        q: Quaternion,
        n: usize,
    ) -> BTreeMap<u8, QuaternionStream> {
        let timestamps: Vec<f64> = (0..n).map(|k| k as f64 / 32.0).collect();
        layout
            .all_sensor_ids()
            .into_iter()
            .map(|id| {
                (
                    id,
                    QuaternionStream {
                        sensor_id: id,
                        timestamps: timestamps.clone(),
                        quats: vec![q; n],
                    },
                )
            })
            .collect()
    }

    #[test]
    fn layout_validation_catches_duplicates() {
        let mut layout = SensorLayout::default();
        layout.right.sensor_ids[0] = 0;
        assert!(matches!(
            layout.validate(),
            Err(KinematicsError::InvalidLayout(_))
        ));
        assert!(SensorLayout::default().validate().is_ok());
    }

    #[test]
    fn calibrate_level_sensors_yields_identity() {
        let layout = SensorLayout::default();
        let standing = standing_samples(&layout, Vec3::new(0.0, 0.0, STANDARD_GRAVITY), 64);
        let calib = static_calibrate(&standing, &layout).unwrap();
        for (_, q) in calib.iter() {
            assert_abs_diff_eq!(q.w, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn calibrate_rejects_moving_sensor() {
        let layout = SensorLayout::default();
        let mut standing = standing_samples(&layout, Vec3::new(0.0, 0.0, STANDARD_GRAVITY), 64);
        for (k, s) in standing.get_mut(&3).unwrap().iter_mut().enumerate() {
            s.accel.x += if k % 2 == 0 { 1.5 } else { -1.5 };
        }
        match static_calibrate(&standing, &layout) {
            Err(KinematicsError::NotQuasiStatic { sensor_id: 3, .. }) => {}
            other => panic!("expected quasi-static rejection, got {other:?}"),
        }
    }

    #[test]
    fn calibrate_rejects_short_window() {
        let layout = SensorLayout::default();
        let standing = standing_samples(&layout, Vec3::new(0.0, 0.0, STANDARD_GRAVITY), 16);
        assert!(matches!(
            static_calibrate(&standing, &layout),
            Err(KinematicsError::CalibrationWindowTooShort { .. })
        ));
    }

    #[test]
    fn equal_streams_give_zero_angles() {
        let layout = SensorLayout::default();
        let q = Quaternion::from_axis_angle(Vec3::new(0.3, 1.0, -0.2), 0.7);
        let streams = constant_streams(&layout, q, 32);
        let calib = MountingCalibration::identity(&layout);
        let series = joint_angles(&streams, &layout, &calib).unwrap();
        assert_eq!(series.len(), 6);
        for s in &series {
            for a in &s.primary_deg {
                assert_abs_diff_eq!(*a, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn shared_global_rotation_plus_local_flexion_reads_flexion() {
        let layout = SensorLayout::default();
        let mut rng = StdRng::seed_from_u64(3);
        let g = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalized()
        .unwrap();
        let base = Quaternion::IDENTITY;
        let flex = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 30f64.to_radians());

        let mut streams = constant_streams(&layout, g * base, 8);
        // Flex only the distal sensor of the left knee.
        let (_, dist_id) = layout.joint_pair(Side::Left, Joint::Knee);
        let dist = streams.get_mut(&dist_id).unwrap();
        dist.quats = vec![g * base * flex; 8];

        let calib = MountingCalibration::identity(&layout);
        let series = joint_angles(&streams, &layout, &calib).unwrap();
        let knee = series
            .iter()
            .find(|s| s.side == Side::Left && s.joint == Joint::Knee)
            .unwrap();
        for a in &knee.primary_deg {
            assert_abs_diff_eq!(*a, 30.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn common_premultiplication_leaves_angles_unchanged() {
        let layout = SensorLayout::default();
        let mut rng = StdRng::seed_from_u64(4);
        let mut streams = BTreeMap::new();
        let timestamps: Vec<f64> = (0..16).map(|k| k as f64 / 32.0).collect();
        for id in layout.all_sensor_ids() {
            let quats: Vec<Quaternion> = (0..16)
                .map(|_| {
                    Quaternion::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                    .normalized()
                    .unwrap()
                })
                .collect();
            streams.insert(
                id,
                QuaternionStream {
                    sensor_id: id,
                    timestamps: timestamps.clone(),
                    quats,
                },
            );
        }
        let calib = MountingCalibration::identity(&layout);
        let baseline = joint_angles(&streams, &layout, &calib).unwrap();

        let g = Quaternion::from_axis_angle(Vec3::new(0.1, -0.4, 1.0), 1.1);
        let mut rotated = streams.clone();
        for stream in rotated.values_mut() {
            for q in &mut stream.quats {
                *q = g * *q;
            }
        }
        let moved = joint_angles(&rotated, &layout, &calib).unwrap();
        for (a, b) in baseline.iter().zip(&moved) {
            for (x, y) in a.primary_deg.iter().zip(&b.primary_deg) {
                assert!((x - y).abs() < 1e-6, "angle moved by {}", (x - y).abs());
            }
        }
    }

    #[test]
    fn swapping_pair_negates_flexion() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let g = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalized()
            .unwrap();
            let theta = rng.random_range(-1.2..1.2);
            let flex = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), theta);
            let prox = g;
            let dist = g * flex;
            let forward = relative_rotation(prox, dist).unwrap().to_euler();
            let swapped = relative_rotation(dist, prox).unwrap().to_euler();
            assert_abs_diff_eq!(forward.pitch, theta, epsilon = 1e-9);
            assert_abs_diff_eq!(swapped.pitch, -theta, epsilon = 1e-9);
        }
    }

    #[test]
    fn misaligned_streams_are_rejected() {
        let layout = SensorLayout::default();
        let mut streams = constant_streams(&layout, Quaternion::IDENTITY, 16);
        streams.get_mut(&1).unwrap().timestamps[3] += 0.01;
        let calib = MountingCalibration::identity(&layout);
        assert!(matches!(
            joint_angles(&streams, &layout, &calib),
            Err(KinematicsError::MisalignedStreams { .. })
        ));
    }

    #[test]
    fn mounted_offsets_are_compensated_by_calibration() {
        // Every sensor gets its own tilt mount (plus a 90° long-axis twist on
        // one thigh sensor); the calibration must still zero the standing pose.
        let layout = SensorLayout::default();
        let mut rng = StdRng::seed_from_u64(6);
        let mut mounts: BTreeMap<u8, Quaternion> = BTreeMap::new();
        for id in layout.all_sensor_ids() {
            let roll = rng.random_range(-0.3..0.3);
            let pitch = rng.random_range(-0.3..0.3);
            let m = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), pitch)
                * Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), roll);
            mounts.insert(id, m);
        }
        let twist_id = layout.sensor_for(Side::Left, SegmentRole::ThighLower);
        mounts.insert(
            twist_id,
            Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 90f64.to_radians()),
        );

        let mut standing = BTreeMap::new();
        let mut streams = BTreeMap::new();
        let timestamps: Vec<f64> = (0..48).map(|k| k as f64 / 32.0).collect();
        for (&id, &m) in &mounts {
            let accel = m.conjugate().rotate(Vec3::new(0.0, 0.0, STANDARD_GRAVITY));
            let samples: Vec<ImuSample> = timestamps
                .iter()
                .map(|&t| ImuSample {
                    timestamp_s: t,
                    sensor_id: id,
                    accel,
                    gyro: Vec3::ZERO,
                })
                .collect();
            standing.insert(id, samples);
            streams.insert(
                id,
                QuaternionStream {
                    sensor_id: id,
                    timestamps: timestamps.clone(),
                    quats: vec![m; 48],
                },
            );
        }

        let calib = static_calibrate(&standing, &layout).unwrap();
        let series = joint_angles(&streams, &layout, &calib).unwrap();
        for s in &series {
            let mean: f64 = s.primary_deg.iter().sum::<f64>() / s.primary_deg.len() as f64;
            assert!(
                mean.abs() < 0.1,
                "zero-pose violated for {:?} {:?}: {mean}",
                s.side,
                s.joint
            );
        }
    }
}
