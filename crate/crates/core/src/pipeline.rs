//! End-to-end session analysis: synchronized raw streams through the
//! orientation filter, joint-angle computation, step segmentation, and
//! session metrics.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::ekf::{run_stream, EkfConfig, EkfError, INIT_WINDOW};
use crate::kinematics::{
    joint_angles, static_calibrate, Joint, JointAngleSeries, KinematicsError, MountingCalibration,
    QuaternionStream, SegmentRole, Side,
};
use crate::math::Vec3;
use crate::metrics::{
    accel_magnitude, detect_steps, normalize_cycle, segment_cycles, session_metrics, AccelTrace,
    GaitCycle, MetricsError, PeakParams, SessionMetrics,
};
use crate::session::{
    load_referenced_calibration, load_session, synchronize, SessionError, SessionMeta,
    SyncedSession,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("sensor {sensor_id}: {source}")]
    Ekf { sensor_id: u8, source: EkfError },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sensor {sensor_id} has no data in the session")]
    MissingSensorData { sensor_id: u8 },
    #[error(
        "no usable mounting calibration: {source}; record a quiet-standing lead-in, or \
         produce a calibration file with the `calibrate` command and reference it from the \
         session metadata"
    )]
    CalibrationUnavailable { source: KinematicsError },
}

/// Knobs for the analysis pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub ekf: EkfConfig,
    pub peaks: PeakParams,
    /// Window at the session start used for in-session static calibration
    /// when the metadata references no calibration file, seconds.
    pub auto_calibration_window_s: f64,
    /// Hip series are computed either way; this switches them into the
    /// reported statistics.
    pub include_hip: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            ekf: EkfConfig::default(),
            peaks: PeakParams::default(),
            auto_calibration_window_s: 1.5,
            include_hip: false,
        }
    }
}

/// Everything the analysis stage produces for one session.
#[derive(Debug, Clone)]
pub struct AnalyzedSession {
    pub meta: SessionMeta,
    pub metrics: SessionMetrics,
    pub series: Vec<JointAngleSeries>,
    pub cycles: Vec<GaitCycle>,
    /// Peak indices on the filter output grid.
    pub peaks: Vec<usize>,
    pub trace: AccelTrace,
    /// Per-cycle primary-angle traces resampled to 0–100% of the gait cycle.
    pub cycle_traces: BTreeMap<(Side, Joint), Vec<Vec<f64>>>,
    /// Per-joint per-cycle ranges, for pooling across sessions.
    pub cycle_ranges: BTreeMap<(Side, Joint), Vec<f64>>,
}

/// Runs the orientation filter over every sensor stream of a synced session.
pub fn orientation_streams(
    synced: &SyncedSession,
    config: &EkfConfig,
) -> Result<BTreeMap<u8, QuaternionStream>, PipelineError> {
    let mut streams = BTreeMap::new();
    for (&sensor_id, stream) in &synced.streams {
        let out = run_stream(&stream.samples, config, synced.sample_rate_hz)
            .map_err(|source| PipelineError::Ekf { sensor_id, source })?;
        let (timestamps, quats): (Vec<f64>, Vec<_>) = out.into_iter().unzip();
        streams.insert(
            sensor_id,
            QuaternionStream {
                sensor_id,
                timestamps,
                quats,
            },
        );
    }
    Ok(streams)
}

fn auto_calibration(
    meta: &SessionMeta,
    synced: &SyncedSession,
    window_s: f64,
) -> Result<MountingCalibration, PipelineError> {
    let mut standing = BTreeMap::new();
    for (&sensor_id, stream) in &synced.streams {
        let samples: Vec<_> = stream
            .samples
            .iter()
            .copied()
            .take_while(|s| s.timestamp_s < window_s)
            .collect();
        standing.insert(sensor_id, samples);
    }
    static_calibrate(&standing, &meta.layout)
        .map_err(|source| PipelineError::CalibrationUnavailable { source })
}

/// Analyzes an already-synchronized session.
///
/// When `calibration` is `None`, a static calibration is derived from the
/// first [`PipelineConfig::auto_calibration_window_s`] seconds, which must be
/// quiet standing.
pub fn analyze_synced(
    meta: &SessionMeta,
    synced: &SyncedSession,
    calibration: Option<MountingCalibration>,
    cfg: &PipelineConfig,
) -> Result<AnalyzedSession, PipelineError> {
    meta.layout.validate()?;
    for side in Side::ALL {
        for role in SegmentRole::ALL {
            let id = meta.layout.sensor_for(side, role);
            if !synced.streams.contains_key(&id) {
                return Err(PipelineError::MissingSensorData { sensor_id: id });
            }
        }
    }

    let calibration = match calibration {
        Some(c) => c,
        None => auto_calibration(meta, synced, cfg.auto_calibration_window_s)?,
    };

    let quat_streams = orientation_streams(synced, &cfg.ekf)?;
    let series = joint_angles(&quat_streams, &meta.layout, &calibration)?;

    // Step-detection signal: acceleration magnitude of the left shank-lower
    // sensor (the ankle-proximal sensor with the largest range of motion),
    // on the filter output grid.
    let detect_id = meta.layout.sensor_for(Side::Left, SegmentRole::ShankLower);
    let raw = &synced.streams[&detect_id].samples[INIT_WINDOW..];
    let quats = &quat_streams[&detect_id].quats;
    let gravity = Vec3::new(0.0, 0.0, cfg.ekf.gravity_magnitude);
    let magnitude: Vec<f64> = raw.iter().map(accel_magnitude).collect();
    let dynamic_magnitude: Vec<f64> = raw
        .iter()
        .zip(quats)
        .map(|(s, q)| (q.rotate(s.accel) - gravity).norm())
        .collect();
    let trace = AccelTrace {
        magnitude,
        dynamic_magnitude,
    };

    let peaks = detect_steps(&trace.magnitude, synced.sample_rate_hz, &cfg.peaks)?;
    let cycles = segment_cycles(&peaks, &series)?;
    let mut metrics = session_metrics(&cycles, &trace)?;
    if !cfg.include_hip {
        metrics
            .joint_range_stats
            .retain(|(_, joint), _| *joint != Joint::Hip);
    }

    let mut cycle_traces: BTreeMap<(Side, Joint), Vec<Vec<f64>>> = BTreeMap::new();
    let mut cycle_ranges: BTreeMap<(Side, Joint), Vec<f64>> = BTreeMap::new();
    for s in &series {
        if s.joint == Joint::Hip && !cfg.include_hip {
            continue;
        }
        let traces: Vec<Vec<f64>> = cycles
            .iter()
            .map(|c| normalize_cycle(&s.primary_deg, c.start_index, c.end_index))
            .collect();
        cycle_traces.insert((s.side, s.joint), traces);
        let ranges: Vec<f64> = cycles
            .iter()
            .map(|c| c.joint_ranges_deg[&(s.side, s.joint)])
            .collect();
        cycle_ranges.insert((s.side, s.joint), ranges);
    }

    Ok(AnalyzedSession {
        meta: meta.clone(),
        metrics,
        series,
        cycles,
        peaks,
        trace,
        cycle_traces,
        cycle_ranges,
    })
}

/// Loads a session directory and analyzes it. A calibration file referenced
/// by the metadata wins over in-session auto-calibration.
pub fn analyze_session_dir(
    dir: &Path,
    cfg: &PipelineConfig,
) -> Result<AnalyzedSession, PipelineError> {
    let session = load_session(dir)?;
    let calibration = load_referenced_calibration(&session)?;
    let synced = synchronize(&session.modules, &session.meta)?;
    analyze_synced(&session.meta, &synced, calibration, cfg)
}
