//! Synthetic gait generator: a sagittal-plane kinematic leg model that
//! produces ground-truth joint trajectories and the IMU streams a device
//! would record from them. Used as the closed-loop oracle for the filter,
//! kinematics, and metrics stages.
//!
//! Joint angles follow raised-cosine flexion waves (`(A/2)(1 − cos ωτ)` plus
//! an optional second harmonic), so angles, rates, and stride events all have
//! analytic references. Segment orientations chain from a pelvis fixed at
//! identity; sensor linear acceleration comes from the second finite
//! difference of the sensor positions along the chain.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::imu::ImuSample;
use crate::kinematics::{LegLayout, SegmentRole, SensorLayout};
use crate::kv::KvFile;
use crate::math::{Quaternion, Vec3, STANDARD_GRAVITY};
use crate::session::{
    module_file_text, ModuleFile, ModuleRecord, SessionError, SessionMeta, ShoeConfig, TRUTH_FILE,
    TRUTH_SERIES_FILE,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// One joint's flexion wave: `(A/2)(1 − cos(ωτ + φ))` plus an optional
/// second harmonic. With zero phases the wave starts and ends each stride at
/// 0° with zero rate, so standing-to-walking transitions are smooth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicJoint {
    pub amplitude_deg: f64,
    pub phase_rad: f64,
    pub second_amplitude_deg: f64,
    pub second_phase_rad: f64,
}

impl HarmonicJoint {
    pub fn flexion(amplitude_deg: f64) -> Self {
        HarmonicJoint {
            amplitude_deg,
            phase_rad: 0.0,
            second_amplitude_deg: 0.0,
            second_phase_rad: 0.0,
        }
    }

    /// Angle (rad) and rate (rad/s) at `tau` seconds into the walking span.
    fn evaluate(&self, omega: f64, tau: f64) -> (f64, f64) {
        let a = self.amplitude_deg.to_radians() * 0.5;
        let a2 = self.second_amplitude_deg.to_radians() * 0.5;
        let angle = a * (1.0 - (omega * tau + self.phase_rad).cos())
            + a2 * (1.0 - (2.0 * omega * tau + self.second_phase_rad).cos());
        let rate = a * omega * (omega * tau + self.phase_rad).sin()
            + a2 * 2.0 * omega * (2.0 * omega * tau + self.second_phase_rad).sin();
        (angle, rate)
    }
}

/// Motion profile for the kinematic leg model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitProfile {
    pub stride_period_s: f64,
    pub n_strides: u32,
    /// Quiet standing before the first stride (also serves as the in-session
    /// calibration window).
    pub lead_in_s: f64,
    /// Quiet standing appended after the last stride.
    pub lead_out_s: f64,
    pub hip: HarmonicJoint,
    pub knee: HarmonicJoint,
    pub ankle: HarmonicJoint,
    pub thigh_m: f64,
    pub shank_m: f64,
    pub foot_m: f64,
    /// Disables sensor linear acceleration (gravity-only accelerometer), to
    /// isolate attitude accuracy from dynamic gating.
    pub quasi_static: bool,
}

impl Default for GaitProfile {
    /// Hip counter-phased to the knee and the knee leading by a quarter
    /// cycle; this phasing gives the shank acceleration magnitude a single
    /// dominant peak per stride, which step detection relies on.
    fn default() -> Self {
        GaitProfile {
            stride_period_s: 1.25,
            n_strides: 20,
            lead_in_s: 2.0,
            lead_out_s: 0.5,
            hip: HarmonicJoint {
                amplitude_deg: 20.0,
                phase_rad: std::f64::consts::PI,
                second_amplitude_deg: 0.0,
                second_phase_rad: 0.0,
            },
            knee: HarmonicJoint {
                amplitude_deg: 60.0,
                phase_rad: std::f64::consts::FRAC_PI_2,
                second_amplitude_deg: 0.0,
                second_phase_rad: 0.0,
            },
            ankle: HarmonicJoint::flexion(25.0),
            thigh_m: 0.45,
            shank_m: 0.43,
            foot_m: 0.25,
            quasi_static: false,
        }
    }
}

impl GaitProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.stride_period_s.is_finite() && self.stride_period_s > 0.0) {
            return Err(SynthError::InvalidProfile(format!(
                "stride_period_s must be > 0, got {}",
                self.stride_period_s
            )));
        }
        if self.n_strides == 0 {
            return Err(SynthError::InvalidProfile("n_strides must be >= 1".into()));
        }
        for (name, joint) in [
            ("hip", &self.hip),
            ("knee", &self.knee),
            ("ankle", &self.ankle),
        ] {
            if !(joint.amplitude_deg.is_finite() && joint.amplitude_deg >= 0.0)
                || !(joint.second_amplitude_deg.is_finite() && joint.second_amplitude_deg >= 0.0)
            {
                return Err(SynthError::InvalidProfile(format!(
                    "{name} amplitude must be >= 0"
                )));
            }
        }
        for (name, v) in [
            ("thigh_m", self.thigh_m),
            ("shank_m", self.shank_m),
            ("foot_m", self.foot_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::InvalidProfile(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.lead_in_s < 0.0 || self.lead_out_s < 0.0 {
            return Err(SynthError::InvalidProfile("lead times must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sensor corruption model. The same bias applies to every sensor; mounting
/// offsets are per sensor id. A fixed seed makes the output bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub gyro_bias: Vec3,
    pub mounting_offsets: BTreeMap<u8, Quaternion>,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            accel_noise_std: 0.05,
            gyro_noise_std: 0.01,
            gyro_bias: Vec3::new(0.005, 0.005, 0.005),
            mounting_offsets: BTreeMap::new(),
            seed: 7,
        }
    }
}

impl NoiseProfile {
    pub fn noiseless() -> Self {
        NoiseProfile {
            accel_noise_std: 0.0,
            gyro_noise_std: 0.0,
            gyro_bias: Vec3::ZERO,
            mounting_offsets: BTreeMap::new(),
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.accel_noise_std.is_finite() && self.accel_noise_std >= 0.0)
            || !(self.gyro_noise_std.is_finite() && self.gyro_noise_std >= 0.0)
        {
            return Err(SynthError::InvalidProfile("noise stds must be >= 0".into()));
        }
        if !self.gyro_bias.is_finite() {
            return Err(SynthError::InvalidProfile(
                "gyro bias must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Draws a uniformly random axis-angle mounting offset (up to
    /// `max_angle_deg`) for every sensor in `layout`, deterministically from
    /// the profile seed.
    pub fn with_random_mounting(mut self, layout: &SensorLayout, max_angle_deg: f64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed ^ 0x6d6f756e74); // "mount"
        let unit = Uniform::new_inclusive(-1.0f64, 1.0).expect("static bounds");
        let angle_dist = Uniform::new_inclusive(0.0, max_angle_deg.to_radians()).expect("bounds");
        for id in layout.all_sensor_ids() {
            let axis = loop {
                let v = Vec3::new(
                    unit.sample(&mut rng),
                    unit.sample(&mut rng),
                    unit.sample(&mut rng),
                );
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v;
                }
            };
            let angle = angle_dist.sample(&mut rng);
            self.mounting_offsets
                .insert(id, Quaternion::from_axis_angle(axis, angle));
        }
        self
    }

    fn mount_for(&self, sensor_id: u8) -> Quaternion {
        self.mounting_offsets
            .get(&sensor_id)
            .copied()
            .unwrap_or(Quaternion::IDENTITY)
    }
}

/// Ground-truth motion of one leg on the sample grid: joint angles, per-
/// segment cumulative pitch, and analytic pitch rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LegTrajectory {
    pub sample_rate_hz: f64,
    /// Seconds into the trajectory at which the walking span starts.
    pub walk_start_s: f64,
    pub stride_period_s: f64,
    pub n_strides: u32,
    pub timestamps: Vec<f64>,
    pub hip_deg: Vec<f64>,
    pub knee_deg: Vec<f64>,
    pub ankle_deg: Vec<f64>,
    segment_pitch_rad: [Vec<f64>; 6],
    segment_rate_rad_s: [Vec<f64>; 6],
}

impl LegTrajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn segment_pitch(&self, role: SegmentRole) -> &[f64] {
        &self.segment_pitch_rad[role.index()]
    }

    pub fn segment_rate(&self, role: SegmentRole) -> &[f64] {
        &self.segment_rate_rad_s[role.index()]
    }

    pub fn orientation_at(&self, role: SegmentRole, k: usize) -> Quaternion {
        Quaternion::from_axis_angle(
            Vec3::new(0.0, 1.0, 0.0),
            self.segment_pitch_rad[role.index()][k],
        )
    }

    /// Per-tick orientation quaternions of one segment.
    pub fn orientations(&self, role: SegmentRole) -> Vec<Quaternion> {
        (0..self.len())
            .map(|k| self.orientation_at(role, k))
            .collect()
    }
}

/// Smoothstep envelope over the walking span: ramps 0→1 across the first
/// half-stride and back down across the last, so nonzero joint phases still
/// start and end at the standing pose with zero rate. Returns `(e, ė)`.
fn walk_envelope(tau: f64, stride_period_s: f64, walk_len_s: f64) -> (f64, f64) {
    let ramp = 0.5 * stride_period_s;
    let local = if tau < ramp {
        Some(tau / ramp)
    } else if tau > walk_len_s - ramp {
        Some((walk_len_s - tau) / ramp)
    } else {
        None
    };
    match local {
        None => (1.0, 0.0),
        Some(u) => {
            let u = u.clamp(0.0, 1.0);
            let e = u * u * (3.0 - 2.0 * u);
            let de_du = 6.0 * u * (1.0 - u);
            let du_dtau = if tau < ramp { 1.0 / ramp } else { -1.0 / ramp };
            (e, de_du * du_dtau)
        }
    }
}

fn build_trajectory(
    profile: &GaitProfile,
    fs: f64,
    walk_start_s: f64,
    n_samples: usize,
) -> LegTrajectory {
    let omega = 2.0 * std::f64::consts::PI / profile.stride_period_s;
    let walk_len = profile.n_strides as f64 * profile.stride_period_s;
    let walk_end = walk_start_s + walk_len;
    let mut timestamps = Vec::with_capacity(n_samples);
    let mut hip_deg = Vec::with_capacity(n_samples);
    let mut knee_deg = Vec::with_capacity(n_samples);
    let mut ankle_deg = Vec::with_capacity(n_samples);
    let mut pitch: [Vec<f64>; 6] = Default::default();
    let mut rate: [Vec<f64>; 6] = Default::default();
    for series in pitch.iter_mut().chain(rate.iter_mut()) {
        series.reserve(n_samples);
    }

    for k in 0..n_samples {
        let t = k as f64 / fs;
        timestamps.push(t);
        let walking = t >= walk_start_s && t < walk_end - 1e-12;
        let eval = |j: &HarmonicJoint| {
            if !walking {
                return (0.0, 0.0);
            }
            let tau = t - walk_start_s;
            let (h, dh) = j.evaluate(omega, tau);
            let (e, de) = walk_envelope(tau, profile.stride_period_s, walk_len);
            (e * h, e * dh + de * h)
        };
        let (hip, hip_rate) = eval(&profile.hip);
        let (knee, knee_rate) = eval(&profile.knee);
        let (ankle, ankle_rate) = eval(&profile.ankle);
        hip_deg.push(hip.to_degrees());
        knee_deg.push(knee.to_degrees());
        ankle_deg.push(ankle.to_degrees());

        let thigh = hip;
        let shank = hip + knee;
        let foot = hip + knee + ankle;
        let thigh_rate = hip_rate;
        let shank_rate = hip_rate + knee_rate;
        let foot_rate = hip_rate + knee_rate + ankle_rate;
        let per_role = [0.0, thigh, thigh, shank, shank, foot];
        let per_role_rate = [
            0.0, thigh_rate, thigh_rate, shank_rate, shank_rate, foot_rate,
        ];
        for i in 0..6 {
            pitch[i].push(per_role[i]);
            rate[i].push(per_role_rate[i]);
        }
    }

    LegTrajectory {
        sample_rate_hz: fs,
        walk_start_s,
        stride_period_s: profile.stride_period_s,
        n_strides: profile.n_strides,
        timestamps,
        hip_deg,
        knee_deg,
        ankle_deg,
        segment_pitch_rad: pitch,
        segment_rate_rad_s: rate,
    }
}

/// Generates the walking span only: exactly
/// `n_strides · stride_period_s · fs` samples starting at the first stride.
pub fn gen_trajectory(profile: &GaitProfile, fs: f64) -> Result<LegTrajectory, SynthError> {
    profile.validate()?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SynthError::InvalidProfile(format!(
            "sample rate must be > 0, got {fs}"
        )));
    }
    let n = (profile.n_strides as f64 * profile.stride_period_s * fs).round() as usize;
    Ok(build_trajectory(profile, fs, 0.0, n))
}

/// Fraction of a sensor's segment length between the proximal joint and the
/// sensor mount point.
fn sensor_chain_position(
    profile: &GaitProfile,
    traj: &LegTrajectory,
    role: SegmentRole,
    k: usize,
) -> Vec3 {
    let down = |pitch: f64, len: f64| {
        // R_y(pitch) · (0, 0, -len)
        Vec3::new(-len * pitch.sin(), 0.0, -len * pitch.cos())
    };
    let thigh = traj.segment_pitch_rad[SegmentRole::ThighUpper.index()][k];
    let shank = traj.segment_pitch_rad[SegmentRole::ShankUpper.index()][k];
    let foot = traj.segment_pitch_rad[SegmentRole::Foot.index()][k];
    let knee_joint = down(thigh, profile.thigh_m);
    match role {
        SegmentRole::Pelvis => Vec3::ZERO,
        SegmentRole::ThighUpper => down(thigh, 0.25 * profile.thigh_m),
        SegmentRole::ThighLower => down(thigh, 0.75 * profile.thigh_m),
        SegmentRole::ShankUpper => knee_joint + down(shank, 0.25 * profile.shank_m),
        SegmentRole::ShankLower => knee_joint + down(shank, 0.75 * profile.shank_m),
        SegmentRole::Foot => {
            let ankle_joint = knee_joint + down(shank, profile.shank_m);
            // Foot points forward (toward -x at stand), sensor mid-foot.
            let half = 0.5 * profile.foot_m;
            ankle_joint + Vec3::new(-half * foot.cos(), 0.0, half * foot.sin())
        }
    }
}

/// IMU streams synthesized from one leg's trajectory, plus the analytic
/// stride event marks of the noise-free step-detection signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub streams: BTreeMap<u8, Vec<ImuSample>>,
    /// One mark per stride: the time of the per-stride maximum of the
    /// noise-free acceleration magnitude at the shank-lower sensor.
    pub event_times_s: Vec<f64>,
}

/// Synthesizes per-sensor IMU streams for one leg.
///
/// Per sensor: gyro is the segment's body-frame angular velocity (analytic)
/// plus bias and noise; accel is segment-frame gravity plus the sensor's
/// linear acceleration (second finite difference of its chain position),
/// with the mounting offset applied to both.
pub fn synth_imu(
    traj: &LegTrajectory,
    leg: &LegLayout,
    profile: &GaitProfile,
    noise: &NoiseProfile,
    rng: &mut ChaCha12Rng,
) -> Result<SynthOutput, SynthError> {
    profile.validate()?;
    noise.validate()?;
    let n = traj.len();
    let fs = traj.sample_rate_hz;
    let gravity_up = Vec3::new(0.0, 0.0, STANDARD_GRAVITY);

    // Noise-free specific force per role, used both for the emitted samples
    // and for the analytic event marks.
    let mut clean_force: [Vec<Vec3>; 6] = Default::default();
    for role in SegmentRole::ALL {
        let idx = role.index();
        let lin_accel: Vec<Vec3> = if profile.quasi_static {
            vec![Vec3::ZERO; n]
        } else {
            let positions: Vec<Vec3> = (0..n)
                .map(|k| sensor_chain_position(profile, traj, role, k))
                .collect();
            let fs2 = fs * fs;
            (0..n)
                .map(|k| {
                    let kc = k.clamp(1, n.saturating_sub(2).max(1));
                    if n < 3 {
                        return Vec3::ZERO;
                    }
                    (positions[kc - 1] + positions[kc + 1] - positions[kc] * 2.0) * fs2
                })
                .collect()
        };
        clean_force[idx] = (0..n)
            .map(|k| {
                let q_seg = traj.orientation_at(role, k);
                q_seg.conjugate().rotate(lin_accel[k] + gravity_up)
            })
            .collect();
    }

    let event_times_s = stride_events(traj, &clean_force[SegmentRole::ShankLower.index()]);

    let accel_noise =
        Normal::new(0.0, noise.accel_noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let gyro_noise =
        Normal::new(0.0, noise.gyro_noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut streams = BTreeMap::new();
    for role in SegmentRole::ALL {
        let sensor_id = leg.sensor_for(role);
        let mount = noise.mount_for(sensor_id);
        let mount_conj = mount.conjugate();
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let q_seg = traj.orientation_at(role, k);
            let omega_global = Vec3::new(0.0, traj.segment_rate_rad_s[role.index()][k], 0.0);
            let omega_body = (q_seg * mount).conjugate().rotate(omega_global);
            let force_sensor = mount_conj.rotate(clean_force[role.index()][k]);
            let accel = if noise.accel_noise_std > 0.0 {
                force_sensor
                    + Vec3::new(
                        accel_noise.sample(rng),
                        accel_noise.sample(rng),
                        accel_noise.sample(rng),
                    )
            } else {
                force_sensor
            };
            let gyro = if noise.gyro_noise_std > 0.0 {
                omega_body
                    + noise.gyro_bias
                    + Vec3::new(
                        gyro_noise.sample(rng),
                        gyro_noise.sample(rng),
                        gyro_noise.sample(rng),
                    )
            } else {
                omega_body + noise.gyro_bias
            };
            samples.push(ImuSample {
                timestamp_s: traj.timestamps[k],
                sensor_id,
                accel,
                gyro,
            });
        }
        streams.insert(sensor_id, samples);
    }
    Ok(SynthOutput {
        streams,
        event_times_s,
    })
}

/// Per-stride argmax of the noise-free step-detection signal.
fn stride_events(traj: &LegTrajectory, shank_lower_force: &[Vec3]) -> Vec<f64> {
    let fs = traj.sample_rate_hz;
    let mut events = Vec::with_capacity(traj.n_strides as usize);
    for stride in 0..traj.n_strides {
        let t0 = traj.walk_start_s + stride as f64 * traj.stride_period_s;
        let t1 = t0 + traj.stride_period_s;
        let k0 = (t0 * fs).round() as usize;
        let k1 = ((t1 * fs).round() as usize).min(shank_lower_force.len());
        if k0 >= k1 {
            continue;
        }
        let mut best = k0;
        let mut best_mag = f64::NEG_INFINITY;
        for (k, f) in shank_lower_force.iter().enumerate().take(k1).skip(k0) {
            let mag = f.norm();
            if mag > best_mag {
                best_mag = mag;
                best = k;
            }
        }
        events.push(traj.timestamps[best]);
    }
    events
}

/// Ground truth carried in the session sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub n_strides: u32,
    pub stride_period_s: f64,
    pub lead_in_s: f64,
    pub seed: u64,
    pub event_times_s: Vec<f64>,
    pub timestamps: Vec<f64>,
    /// Per-leg joint angle series in degrees: `[hip, knee, ankle]`.
    pub left_deg: [Vec<f64>; 3],
    pub right_deg: [Vec<f64>; 3],
}

/// A fully synthesized session, ready to analyze in memory or write to disk.
#[derive(Debug, Clone)]
pub struct SimulatedSession {
    pub meta: SessionMeta,
    pub modules: Vec<ModuleFile>,
    pub truth: GroundTruth,
    pub streams: BTreeMap<u8, Vec<ImuSample>>,
    pub left_trajectory: LegTrajectory,
    pub right_trajectory: LegTrajectory,
}

/// Simulates a two-leg walking session at `fs` Hz.
///
/// The left leg walks `n_strides` strides after `lead_in_s` of quiet
/// standing; the right leg follows half a stride later. Both legs share the
/// profile and the noise model (with independent noise draws).
pub fn simulate_session(
    profile: &GaitProfile,
    noise: &NoiseProfile,
    candidate_id: &str,
    shoe: ShoeConfig,
    fs: f64,
) -> Result<SimulatedSession, SynthError> {
    profile.validate()?;
    noise.validate()?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(SynthError::InvalidProfile(format!(
            "sample rate must be > 0, got {fs}"
        )));
    }
    let layout = SensorLayout::default();
    let half_stride = 0.5 * profile.stride_period_s;
    let total_s = profile.lead_in_s
        + profile.n_strides as f64 * profile.stride_period_s
        + half_stride
        + profile.lead_out_s;
    let n_samples = (total_s * fs).round() as usize;

    let left_traj = build_trajectory(profile, fs, profile.lead_in_s, n_samples);
    let right_traj = build_trajectory(profile, fs, profile.lead_in_s + half_stride, n_samples);

    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
    let left_out = synth_imu(&left_traj, &layout.left, profile, noise, &mut rng)?;
    let right_out = synth_imu(&right_traj, &layout.right, profile, noise, &mut rng)?;

    let mut streams = left_out.streams;
    streams.extend(right_out.streams);

    let modules = [(0u32, &layout.left), (1u32, &layout.right)]
        .into_iter()
        .map(|(module_id, leg)| {
            let mut records = Vec::with_capacity(6 * n_samples);
            for k in 0..n_samples {
                for role in SegmentRole::ALL {
                    let id = leg.sensor_for(role);
                    let s = streams[&id][k];
                    records.push(ModuleRecord {
                        tick: k as u64,
                        sensor_id: id,
                        accel: s.accel,
                        gyro: s.gyro,
                        event: None,
                    });
                }
            }
            ModuleFile {
                module_id,
                records,
                has_event_column: false,
            }
        })
        .collect();

    let meta = SessionMeta {
        candidate_id: candidate_id.to_string(),
        shoe,
        sample_rate_hz: fs,
        layout,
        calibration_file: None,
        notes: None,
    };
    let truth = GroundTruth {
        n_strides: profile.n_strides,
        stride_period_s: profile.stride_period_s,
        lead_in_s: profile.lead_in_s,
        seed: noise.seed,
        event_times_s: left_out.event_times_s,
        timestamps: left_traj.timestamps.clone(),
        left_deg: [
            left_traj.hip_deg.clone(),
            left_traj.knee_deg.clone(),
            left_traj.ankle_deg.clone(),
        ],
        right_deg: [
            right_traj.hip_deg.clone(),
            right_traj.knee_deg.clone(),
            right_traj.ankle_deg.clone(),
        ],
    };
    Ok(SimulatedSession {
        meta,
        modules,
        truth,
        streams,
        left_trajectory: left_traj,
        right_trajectory: right_traj,
    })
}

fn truth_kv(truth: &GroundTruth) -> KvFile {
    let mut kv = KvFile::new();
    kv.set("n_strides", truth.n_strides);
    kv.set("stride_period_s", truth.stride_period_s);
    kv.set("lead_in_s", truth.lead_in_s);
    kv.set("seed", truth.seed);
    let events: Vec<String> = truth.event_times_s.iter().map(f64::to_string).collect();
    kv.set("event_times_s", events.join(","));
    kv
}

fn truth_series_text(truth: &GroundTruth) -> String {
    let mut out = String::from(
        "tick,time_s,left_hip_deg,left_knee_deg,left_ankle_deg,right_hip_deg,right_knee_deg,right_ankle_deg\n",
    );
    for (k, t) in truth.timestamps.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            k,
            t,
            truth.left_deg[0][k],
            truth.left_deg[1][k],
            truth.left_deg[2][k],
            truth.right_deg[0][k],
            truth.right_deg[1][k],
            truth.right_deg[2][k],
        );
    }
    out
}

/// Writes a simulated session as a session directory conforming to the
/// on-disk format, plus the ground-truth sidecar files.
pub fn write_session(sim: &SimulatedSession, out_dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(out_dir).map_err(|e| SessionError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let write = |name: &str, text: String| -> Result<(), SynthError> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| SessionError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    };
    write(crate::session::META_FILE, sim.meta.to_kv().to_text())?;
    for module in &sim.modules {
        write(
            &format!("module_{}.csv", module.module_id),
            module_file_text(module),
        )?;
    }
    write(TRUTH_FILE, truth_kv(&sim.truth).to_text())?;
    write(TRUTH_SERIES_FILE, truth_series_text(&sim.truth))?;
    Ok(())
}

/// Reads the ground-truth sidecar back from a session directory.
pub fn load_truth(dir: &Path) -> Result<GroundTruth, SynthError> {
    let io_err = |path: &Path, e: std::io::Error| SessionError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let kv_path = dir.join(TRUTH_FILE);
    let text = fs::read_to_string(&kv_path).map_err(|e| io_err(&kv_path, e))?;
    let kv = KvFile::parse(&text).map_err(|e| SessionError::InvalidMeta {
        path: kv_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let invalid = |reason: String| SessionError::InvalidMeta {
        path: kv_path.display().to_string(),
        reason,
    };

    let series_path = dir.join(TRUTH_SERIES_FILE);
    let series_text = fs::read_to_string(&series_path).map_err(|e| io_err(&series_path, e))?;
    let mut timestamps = Vec::new();
    let mut left: [Vec<f64>; 3] = Default::default();
    let mut right: [Vec<f64>; 3] = Default::default();
    for (idx, line) in series_text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(SynthError::Session(SessionError::InvalidMeta {
                path: series_path.display().to_string(),
                reason: format!("line {}: expected 8 fields", idx + 1),
            }));
        }
        let parse = |s: &str| -> Result<f64, SynthError> {
            s.parse::<f64>().map_err(|_| {
                SynthError::Session(SessionError::InvalidMeta {
                    path: series_path.display().to_string(),
                    reason: format!("line {}: `{s}` is not a number", idx + 1),
                })
            })
        };
        timestamps.push(parse(fields[1])?);
        for j in 0..3 {
            left[j].push(parse(fields[2 + j])?);
            right[j].push(parse(fields[5 + j])?);
        }
    }

    Ok(GroundTruth {
        n_strides: kv
            .require_u64("n_strides")
            .map_err(|e| invalid(e.to_string()))? as u32,
        stride_period_s: kv
            .require_f64("stride_period_s")
            .map_err(|e| invalid(e.to_string()))?,
        lead_in_s: kv
            .require_f64("lead_in_s")
            .map_err(|e| invalid(e.to_string()))?,
        seed: kv.require_u64("seed").map_err(|e| invalid(e.to_string()))?,
        event_times_s: kv
            .get_f64_list("event_times_s")
            .map_err(|e| invalid(e.to_string()))?,
        timestamps,
        left_deg: left,
        right_deg: right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_amplitudes_give_identity_orientations() {
        let mut profile = GaitProfile::default();
        profile.hip = HarmonicJoint::flexion(0.0);
        profile.knee = HarmonicJoint::flexion(0.0);
        profile.ankle = HarmonicJoint::flexion(0.0);
        let traj = gen_trajectory(&profile, 32.0).unwrap();
        assert_eq!(traj.len(), (20.0 * 1.25 * 32.0) as usize);
        for role in SegmentRole::ALL {
            for k in [0, traj.len() / 2, traj.len() - 1] {
                let q = traj.orientation_at(role, k);
                assert_abs_diff_eq!(q.w, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn knee_only_motion_moves_shank_not_thigh() {
        let mut profile = GaitProfile::default();
        profile.hip = HarmonicJoint::flexion(0.0);
        profile.knee = HarmonicJoint::flexion(60.0);
        profile.ankle = HarmonicJoint::flexion(0.0);
        let traj = gen_trajectory(&profile, 32.0).unwrap();
        let shank = traj.segment_pitch(SegmentRole::ShankUpper);
        let max = shank.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = shank.iter().copied().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(max.to_degrees(), 60.0, epsilon = 0.2);
        assert_abs_diff_eq!(min.to_degrees(), 0.0, epsilon = 0.2);
        for &p in traj.segment_pitch(SegmentRole::ThighUpper) {
            assert_eq!(p, 0.0);
        }
    }

    #[test]
    fn angle_rates_match_finite_differences() {
        // Five-point stencil; the plain central difference's O(h²) truncation
        // alone is ~0.011 rad/s at these amplitudes.
        let profile = GaitProfile::default();
        let fs = 32.0;
        let traj = gen_trajectory(&profile, fs).unwrap();
        let pitch = traj.segment_pitch(SegmentRole::ShankLower);
        let rate = traj.segment_rate(SegmentRole::ShankLower);
        let h = 1.0 / fs;
        // The start/end envelope is only C¹ where its pieces join; skip the
        // stencil-width neighborhood of those two points.
        let ramp = (0.5 * profile.stride_period_s * fs) as usize;
        let n = traj.len();
        for k in 2..n - 2 {
            if k.abs_diff(ramp) <= 2 || k.abs_diff(n - ramp) <= 2 {
                continue;
            }
            let fd = (-pitch[k + 2] + 8.0 * pitch[k + 1] - 8.0 * pitch[k - 1] + pitch[k - 2])
                / (12.0 * h);
            assert_abs_diff_eq!(rate[k], fd, epsilon = 0.01);
        }
    }

    #[test]
    fn static_chain_reads_pure_gravity_and_bias() {
        let mut profile = GaitProfile::default();
        profile.hip = HarmonicJoint::flexion(0.0);
        profile.knee = HarmonicJoint::flexion(0.0);
        profile.ankle = HarmonicJoint::flexion(0.0);
        let mut noise = NoiseProfile::noiseless();
        noise.gyro_bias = Vec3::new(0.01, -0.02, 0.003);
        let traj = gen_trajectory(&profile, 32.0).unwrap();
        let layout = SensorLayout::default();
        let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
        let out = synth_imu(&traj, &layout.left, &profile, &noise, &mut rng).unwrap();
        for samples in out.streams.values() {
            for s in samples {
                assert_abs_diff_eq!(s.accel.x, 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(s.accel.y, 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(s.accel.z, STANDARD_GRAVITY, epsilon = 1e-9);
                assert_abs_diff_eq!(s.gyro.x, 0.01, epsilon = 1e-12);
                assert_abs_diff_eq!(s.gyro.y, -0.02, epsilon = 1e-12);
                assert_abs_diff_eq!(s.gyro.z, 0.003, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn knee_only_shank_gyro_matches_analytic_rate() {
        let mut profile = GaitProfile::default();
        profile.hip = HarmonicJoint::flexion(0.0);
        profile.knee = HarmonicJoint::flexion(60.0);
        profile.ankle = HarmonicJoint::flexion(0.0);
        let noise = NoiseProfile::noiseless();
        let traj = gen_trajectory(&profile, 32.0).unwrap();
        let layout = SensorLayout::default();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out = synth_imu(&traj, &layout.left, &profile, &noise, &mut rng).unwrap();
        let shank_id = layout.left.sensor_for(SegmentRole::ShankLower);
        let rate = traj.segment_rate(SegmentRole::ShankLower);
        for (k, s) in out.streams[&shank_id].iter().enumerate() {
            assert_abs_diff_eq!(s.gyro.y, rate[k], epsilon = 1e-6);
            assert_abs_diff_eq!(s.gyro.x, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let profile = GaitProfile::default();
        let noise = NoiseProfile::default();
        let shoe = ShoeConfig::new("H1", 0.5, 0.75).unwrap();
        let a = simulate_session(&profile, &noise, "c", shoe.clone(), 32.0).unwrap();
        let b = simulate_session(&profile, &noise, "c", shoe, 32.0).unwrap();
        assert_eq!(a.modules, b.modules);
        assert_eq!(a.truth.event_times_s, b.truth.event_times_s);
    }

    #[test]
    fn integrating_emitted_gyro_reproduces_orientation() {
        // Ground-truth angular velocity and orientation stay mutually
        // consistent: integrate the noise-free gyro of the shank over 10
        // strides and compare against the emitted orientation.
        let mut profile = GaitProfile::default();
        profile.n_strides = 10;
        let noise = NoiseProfile::noiseless();
        let fs = 32.0;
        let traj = gen_trajectory(&profile, fs).unwrap();
        let layout = SensorLayout::default();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let out = synth_imu(&traj, &layout.left, &profile, &noise, &mut rng).unwrap();
        let shank_id = layout.left.sensor_for(SegmentRole::ShankLower);
        let samples = &out.streams[&shank_id];

        let mut q = traj.orientation_at(SegmentRole::ShankLower, 0);
        let mut worst: f64 = 0.0;
        let dt = 1.0 / fs;
        let mut k = 2;
        while k < traj.len() {
            // Simpson-averaged rate over a sample pair, exact exponential step.
            let w =
                (samples[k - 2].gyro + samples[k - 1].gyro * 4.0 + samples[k].gyro) * (1.0 / 6.0);
            let dq = Quaternion::from_axis_angle(w, w.norm() * 2.0 * dt);
            q = (q * dq).normalized().unwrap();
            let truth = traj.orientation_at(SegmentRole::ShankLower, k);
            let rel = truth.conjugate() * q;
            let angle = 2.0
                * rel
                    .w
                    .clamp(-1.0, 1.0)
                    .acos()
                    .min((-rel.w).clamp(-1.0, 1.0).acos());
            worst = worst.max(angle.to_degrees());
            k += 2;
        }
        assert!(worst < 0.1, "integrated orientation drifts {worst}°");
    }

    #[test]
    fn sidecar_round_trips_through_disk() {
        let dir = std::env::temp_dir().join(format!("gait_synth_test_{}", std::process::id()));
        let mut profile = GaitProfile::default();
        profile.n_strides = 3;
        let sim = simulate_session(
            &profile,
            &NoiseProfile::default(),
            "cand01",
            ShoeConfig::new("H2", 0.25, 2.0).unwrap(),
            32.0,
        )
        .unwrap();
        write_session(&sim, &dir).unwrap();
        let truth = load_truth(&dir).unwrap();
        assert_eq!(truth.n_strides, 3);
        assert_eq!(truth.event_times_s.len(), 3);
        assert_eq!(truth.timestamps.len(), sim.truth.timestamps.len());
        let loaded = crate::session::load_session(&dir).unwrap();
        assert_eq!(loaded.modules.len(), 2);
        assert_eq!(loaded.meta, sim.meta);
        assert_eq!(loaded.modules[0], sim.modules[0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn event_marks_are_one_per_stride_with_stride_spacing() {
        let profile = GaitProfile::default();
        let sim = simulate_session(
            &profile,
            &NoiseProfile::default(),
            "c",
            ShoeConfig::new("H1", 0.5, 0.75).unwrap(),
            32.0,
        )
        .unwrap();
        assert_eq!(sim.truth.event_times_s.len(), 20);
        let spacings: Vec<f64> = sim
            .truth
            .event_times_s
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        let mean = spacings.iter().sum::<f64>() / spacings.len() as f64;
        assert_abs_diff_eq!(mean, 1.25, epsilon = 1.0 / 32.0);
    }
}
