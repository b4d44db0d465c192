//! Per-sensor orientation filter: an error-state (multiplicative) extended
//! Kalman filter over a 6-dim error state `[attitude error (3), gyro bias
//! error (3)]`, with the unit quaternion and bias kept as the nominal state.
//!
//! Gyro rates drive the prediction; accelerometer samples whose magnitude is
//! close to gravity act as tilt measurements. There is no magnetometer on the
//! device, so yaw is unobservable and left to drift — downstream joint angles
//! are protected by the common-rotation invariance of `relative_rotation`.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use thiserror::Error;

use crate::imu::ImuSample;
use crate::math::{MathError, Quaternion, Vec3, STANDARD_GRAVITY};

/// Samples consumed to seed roll/pitch from the mean gravity direction
/// (0.25 s at the device's 32 Hz rate).
pub const INIT_WINDOW: usize = 8;

/// Upper bound on a single integration step.
pub const MAX_DT_S: f64 = 0.1;

/// A stream gap larger than this many nominal sample periods is an error.
pub const MAX_GAP_PERIODS: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum EkfError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("init window too short: got {got} samples, need {need}")]
    ShortInitWindow { got: usize, need: usize },
    #[error(
        "sensor not quasi-static at start: mean accel magnitude {magnitude:.3} m/s² \
         deviates from gravity by more than 30%"
    )]
    NotQuasiStatic { magnitude: f64 },
    #[error("non-finite {0} input")]
    NonFiniteInput(&'static str),
    #[error("time step {dt} outside (0, {MAX_DT_S}] s")]
    InvalidTimeStep { dt: f64 },
    #[error("timestamps not strictly increasing at sample {index}")]
    NonMonotoneTimestamps { index: usize },
    #[error("stream gap at sample {index}: dt = {dt:.4} s exceeds {limit:.4} s")]
    StreamGap { index: usize, dt: f64, limit: f64 },
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Noise and initialization parameters. The gyro figures are sized for the
/// MPU-6050 class of consumer IMUs; everything is overridable from a config
/// file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    /// Gyro white-noise density, rad/s/√Hz.
    pub gyro_noise_density: f64,
    /// Accelerometer measurement-model noise, m/s². Deliberately much larger
    /// than the sensor's own noise floor: it also has to cover linear
    /// acceleration that slips through the magnitude gate during swing, and
    /// a tight value lets single leaked samples yank the attitude.
    pub accel_noise: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub bias_random_walk: f64,
    /// Local gravity, m/s².
    pub gravity_magnitude: f64,
    /// Accelerometer gate half-width as a fraction of gravity; samples with
    /// `| |a| - g | > gate·g` skip the measurement update. The default is
    /// tight so that during gait only near-stance samples act as gravity
    /// references.
    pub accel_gate: f64,
    /// Chi-square bound on the squared Mahalanobis distance of the
    /// innovation (3 dof). Catches samples that sit on the gravity sphere
    /// but point nowhere near gravity, which the magnitude gate cannot see.
    /// 0 disables the check.
    pub innovation_gate: f64,
    /// Number of consecutive in-band samples required before measurement
    /// updates apply (rest detection). During gait the magnitude crosses the
    /// gravity band only for a few ticks at a time, so updates stay confined
    /// to genuinely quasi-static phases. 0 applies updates immediately.
    pub rest_window: u32,
    /// Initial attitude uncertainty, rad (per axis).
    pub initial_attitude_std: f64,
    /// Initial bias uncertainty, rad/s (per axis).
    pub initial_bias_std: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            gyro_noise_density: 0.005,
            accel_noise: 0.04,
            bias_random_walk: 1e-4,
            gravity_magnitude: STANDARD_GRAVITY,
            accel_gate: 0.03,
            innovation_gate: 11.34, // chi-square 99th percentile, 3 dof
            rest_window: 24,        // 0.75 s at 32 Hz
            initial_attitude_std: 0.1,
            initial_bias_std: 0.01,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<(), EkfError> {
        let positive = [
            ("gyro_noise_density", self.gyro_noise_density),
            ("accel_noise", self.accel_noise),
            ("bias_random_walk", self.bias_random_walk),
            ("gravity_magnitude", self.gravity_magnitude),
            ("initial_attitude_std", self.initial_attitude_std),
            ("initial_bias_std", self.initial_bias_std),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EkfError::InvalidConfig(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.accel_gate.is_finite() && self.accel_gate >= 0.0) {
            return Err(EkfError::InvalidConfig(format!(
                "accel_gate must be >= 0, got {}",
                self.accel_gate
            )));
        }
        if !(self.innovation_gate.is_finite() && self.innovation_gate >= 0.0) {
            return Err(EkfError::InvalidConfig(format!(
                "innovation_gate must be >= 0, got {}",
                self.innovation_gate
            )));
        }
        Ok(())
    }
}

/// Whether an accelerometer sample was folded into the state or rejected by
/// the gravity-magnitude gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementOutcome {
    Applied,
    Gated,
}

/// Filter state: sensor-to-global attitude, gyro bias, and the covariance of
/// the 6-dim error state.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub q: Quaternion,
    pub bias: Vec3,
    p: Matrix6<f64>,
    /// Consecutive accel samples inside the gravity-magnitude band; drives
    /// rest detection.
    in_band_run: u32,
}

/// Roll/pitch attitude whose predicted gravity matches `mean_accel`; yaw is
/// set to zero (unobservable without a magnetometer).
pub fn attitude_from_accel(mean_accel: Vec3) -> Quaternion {
    let roll = mean_accel.y.atan2(mean_accel.z);
    let pitch =
        (-mean_accel.x).atan2((mean_accel.y * mean_accel.y + mean_accel.z * mean_accel.z).sqrt());
    let q_pitch = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), pitch);
    let q_roll = Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), roll);
    q_pitch * q_roll
}

/// Gravity direction the sensor should measure at attitude `q`:
/// `R(q)ᵀ · (0, 0, gravity)`.
pub fn predicted_gravity(q: Quaternion, gravity: f64) -> Vec3 {
    q.conjugate().rotate(Vec3::new(0.0, 0.0, gravity))
}

/// Jacobian of [`predicted_gravity`] with respect to the body-frame attitude
/// error (the skew matrix of the predicted measurement).
pub fn measurement_jacobian_attitude(q: Quaternion, gravity: f64) -> Matrix3<f64> {
    skew(predicted_gravity(q, gravity))
}

fn skew(v: Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl EkfState {
    /// Seeds the filter from a quasi-static window of accelerometer samples.
    ///
    /// Roll/pitch come from the mean gravity direction, yaw and bias start at
    /// zero, and the covariance is diagonal from the configured stds. Fails
    /// when fewer than [`INIT_WINDOW`] samples are supplied or the mean accel
    /// magnitude deviates from gravity by more than 30%.
    pub fn initialize(config: &EkfConfig, first_accels: &[Vec3]) -> Result<EkfState, EkfError> {
        config.validate()?;
        if first_accels.len() < INIT_WINDOW {
            return Err(EkfError::ShortInitWindow {
                got: first_accels.len(),
                need: INIT_WINDOW,
            });
        }
        let mut mean = Vec3::ZERO;
        for a in first_accels {
            if !a.is_finite() {
                return Err(EkfError::NonFiniteInput("accel"));
            }
            mean = mean + *a;
        }
        mean = mean * (1.0 / first_accels.len() as f64);
        let magnitude = mean.norm();
        let g = config.gravity_magnitude;
        if (magnitude - g).abs() > 0.30 * g {
            return Err(EkfError::NotQuasiStatic { magnitude });
        }
        let mut p = Matrix6::zeros();
        let att_var = config.initial_attitude_std * config.initial_attitude_std;
        let bias_var = config.initial_bias_std * config.initial_bias_std;
        for i in 0..3 {
            p[(i, i)] = att_var;
            p[(i + 3, i + 3)] = bias_var;
        }
        // The init window is validated quasi-static, so the filter starts in
        // a rest phase.
        Ok(EkfState {
            q: attitude_from_accel(mean),
            bias: Vec3::ZERO,
            p,
            in_band_run: config.rest_window,
        })
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.p
    }

    /// Largest absolute asymmetry `|P - Pᵀ|` entry.
    pub fn covariance_symmetry_error(&self) -> f64 {
        let d = self.p - self.p.transpose();
        d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// Smallest eigenvalue of the (symmetrized) covariance.
    pub fn covariance_min_eigenvalue(&self) -> f64 {
        let sym = (self.p + self.p.transpose()) * 0.5;
        sym.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(*v))
    }

    fn symmetrize(&mut self) {
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    /// Advances the attitude by first-order integration of the bias-corrected
    /// gyro rate over `dt` and propagates the error covariance.
    pub fn predict(&mut self, gyro: Vec3, dt: f64, config: &EkfConfig) -> Result<(), EkfError> {
        if !gyro.is_finite() {
            return Err(EkfError::NonFiniteInput("gyro"));
        }
        if !(dt > 0.0 && dt <= MAX_DT_S) {
            return Err(EkfError::InvalidTimeStep { dt });
        }
        let omega = gyro - self.bias;
        let dq = Quaternion::new(
            1.0,
            0.5 * omega.x * dt,
            0.5 * omega.y * dt,
            0.5 * omega.z * dt,
        );
        self.q = (self.q * dq).normalized()?;

        // F = [[I - [ω]×·dt, -I·dt], [0, I]] on [δθ, δb].
        let mut f = Matrix6::identity();
        let top_left = Matrix3::identity() - skew(omega) * dt;
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&top_left);
        let top_right = Matrix3::identity() * -dt;
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);

        let mut q_proc = Matrix6::zeros();
        let att_var = config.gyro_noise_density * config.gyro_noise_density * dt;
        let bias_var = config.bias_random_walk * config.bias_random_walk * dt;
        for i in 0..3 {
            q_proc[(i, i)] = att_var;
            q_proc[(i + 3, i + 3)] = bias_var;
        }
        self.p = f * self.p * f.transpose() + q_proc;
        self.symmetrize();
        Ok(())
    }

    /// Folds an accelerometer sample in as a gravity-direction measurement.
    ///
    /// Samples whose magnitude falls outside the gravity gate are reported as
    /// [`MeasurementOutcome::Gated`] and leave the state untouched.
    pub fn update(
        &mut self,
        accel: Vec3,
        config: &EkfConfig,
    ) -> Result<MeasurementOutcome, EkfError> {
        if !accel.is_finite() {
            return Err(EkfError::NonFiniteInput("accel"));
        }
        let g = config.gravity_magnitude;
        if (accel.norm() - g).abs() > config.accel_gate * g {
            self.in_band_run = 0;
            return Ok(MeasurementOutcome::Gated);
        }
        self.in_band_run = self.in_band_run.saturating_add(1);
        if self.in_band_run < config.rest_window {
            return Ok(MeasurementOutcome::Gated);
        }

        let predicted = predicted_gravity(self.q, g);
        let mut h = SMatrix::<f64, 3, 6>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(predicted));
        let r = Matrix3::identity() * (config.accel_noise * config.accel_noise);

        let s = h * self.p * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or(EkfError::SingularInnovation)?;

        let innovation = Vector3::new(
            accel.x - predicted.x,
            accel.y - predicted.y,
            accel.z - predicted.z,
        );
        // A sample can sit on the gravity sphere while pointing far from the
        // predicted gravity (swing-phase linear acceleration); the Mahalanobis
        // check rejects those. An inconsistent sample also breaks the rest
        // run: genuine rest keeps innovations noise-sized indefinitely, while
        // slow limb motion sweeps the innovation through the bound within a
        // rest window even when the magnitude stays in band.
        if config.innovation_gate > 0.0 {
            let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
            if d2 > config.innovation_gate {
                self.in_band_run = 0;
                return Ok(MeasurementOutcome::Gated);
            }
        }

        let k = self.p * h.transpose() * s_inv;
        let dx: Vector6<f64> = k * innovation;
        let dq = Quaternion::new(1.0, 0.5 * dx[0], 0.5 * dx[1], 0.5 * dx[2]);
        self.q = (self.q * dq).normalized()?;
        self.bias = self.bias + Vec3::new(dx[3], dx[4], dx[5]);

        // Joseph form keeps the covariance PSD under roundoff.
        let ikh = Matrix6::identity() - k * h;
        self.p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
        self.symmetrize();
        Ok(MeasurementOutcome::Applied)
    }
}

/// Runs the filter over one sensor's sample stream.
///
/// The first [`INIT_WINDOW`] samples seed the state; every following sample
/// produces one `(timestamp, quaternion)` pair, so the output is exactly
/// `input length - INIT_WINDOW` long. Consecutive timestamps must be strictly
/// increasing and no further apart than [`MAX_GAP_PERIODS`] nominal periods.
pub fn run_stream(
    samples: &[ImuSample],
    config: &EkfConfig,
    sample_rate_hz: f64,
) -> Result<Vec<(f64, Quaternion)>, EkfError> {
    if samples.len() <= INIT_WINDOW {
        return Err(EkfError::ShortInitWindow {
            got: samples.len(),
            need: INIT_WINDOW + 1,
        });
    }
    let gap_limit = MAX_GAP_PERIODS / sample_rate_hz + 1e-9;
    for i in 1..samples.len() {
        let dt = samples[i].timestamp_s - samples[i - 1].timestamp_s;
        if dt <= 0.0 {
            return Err(EkfError::NonMonotoneTimestamps { index: i });
        }
        if dt > gap_limit {
            return Err(EkfError::StreamGap {
                index: i,
                dt,
                limit: gap_limit,
            });
        }
    }

    let init_accels: Vec<Vec3> = samples[..INIT_WINDOW].iter().map(|s| s.accel).collect();
    let mut state = EkfState::initialize(config, &init_accels)?;

    let mut out = Vec::with_capacity(samples.len() - INIT_WINDOW);
    let mut prev = &samples[INIT_WINDOW - 1];
    for sample in &samples[INIT_WINDOW..] {
        let dt = sample.timestamp_s - prev.timestamp_s;
        // The average of the bracketing rate samples represents the interval
        // far better than either endpoint at gait angular accelerations.
        let rate = (prev.gyro + sample.gyro) * 0.5;
        state.predict(rate, dt, config)?;
        state.update(sample.accel, config)?;
        out.push((sample.timestamp_s, state.q));
        prev = sample;
    }
    Ok(out)
}
