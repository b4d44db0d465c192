//! On-disk session format: per-module sample files, trigger-based
//! synchronization, and session metadata (candidate, shoe configuration,
//! sensor layout).
//!
//! A session directory contains:
//! - `meta.kv` — flat key-value metadata (see [`SessionMeta`]);
//! - `module_<n>.csv` — one text file per sensor module, header
//!   `module_id,tick,sensor_id,ax,ay,az,gx,gy,gz` with an optional trailing
//!   `event` column, comma-separated decimal fields, UTF-8, units m/s² and
//!   rad/s;
//! - `calibration.kv` — optional sensor-to-segment alignment quaternions;
//! - `truth.kv` / `truth_series.csv` — optional simulator ground-truth
//!   sidecar.
//!
//! Modules record ticks from a shared trigger, so tick 0 must be present for
//! every sensor; `timestamp = tick / sample_rate_hz`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imu::{ImuSample, MAX_SENSOR_ID};
use crate::kinematics::{SegmentRole, SensorLayout, Side};
use crate::kv::{KvError, KvFile};
use crate::math::{Quaternion, Vec3};

/// MPU-6050 full-scale ceiling for acceleration (±16 g), m/s².
pub const MAX_ABS_ACCEL: f64 = 160.0;
/// MPU-6050 full-scale ceiling for angular rate (±2000 °/s), rad/s.
pub const MAX_ABS_GYRO: f64 = 35.0;

/// Gaps of at most this many consecutive missing ticks are filled by linear
/// interpolation during synchronization; larger gaps are left for the filter
/// stage to reject or window around.
pub const MAX_INTERP_GAP_TICKS: u64 = 2;

pub const META_FILE: &str = "meta.kv";
pub const CALIBRATION_FILE: &str = "calibration.kv";
pub const TRUTH_FILE: &str = "truth.kv";
pub const TRUTH_SERIES_FILE: &str = "truth_series.csv";

const MODULE_HEADER: &str = "module_id,tick,sensor_id,ax,ay,az,gx,gy,gz";
const MODULE_HEADER_EVENT: &str = "module_id,tick,sensor_id,ax,ay,az,gx,gy,gz,event";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{path}:{line}:{column}: malformed line: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate record for tick {tick}, sensor {sensor_id}")]
    DuplicateRecord {
        path: String,
        line: usize,
        tick: u64,
        sensor_id: u8,
    },
    #[error("{path}:{line}: tick {tick} decreases after {prev}")]
    NonMonotoneTick {
        path: String,
        line: usize,
        tick: u64,
        prev: u64,
    },
    #[error("{path}:{line}:{column}: {field} = {value} exceeds full-scale limit {limit}")]
    UnitRange {
        path: String,
        line: usize,
        column: usize,
        field: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("{path}: sensor {sensor_id} has no record at trigger tick 0")]
    MissingAtTrigger { path: String, sensor_id: u8 },
    #[error("sensor {sensor_id} appears in more than one module")]
    SensorInMultipleModules { sensor_id: u8 },
    #[error("modules share no common tick range")]
    NoCommonRange,
    #[error("{path}: invalid metadata: {reason}")]
    InvalidMeta { path: String, reason: String },
    #[error("invalid shoe config `{label}`: {reason}")]
    InvalidShoe { label: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl SessionError {
    fn io(path: &Path, source: io::Error) -> Self {
        SessionError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One shoe configuration: platform height `x` and heel height `y` in inches
/// (Fig.-2-style parameters); the walking height `y - x` is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoeConfig {
    pub label: String,
    pub platform_height_in: f64,
    pub heel_height_in: f64,
}

impl ShoeConfig {
    pub fn new(
        label: &str,
        platform_height_in: f64,
        heel_height_in: f64,
    ) -> Result<Self, SessionError> {
        let reject = |reason: &str| {
            Err(SessionError::InvalidShoe {
                label: label.to_string(),
                reason: reason.to_string(),
            })
        };
        if label.is_empty() {
            return reject("empty label");
        }
        if !(platform_height_in.is_finite() && heel_height_in.is_finite()) {
            return reject("non-finite height");
        }
        if platform_height_in < 0.0 {
            return reject("platform height must be >= 0");
        }
        if heel_height_in < platform_height_in {
            return reject("heel height must be >= platform height");
        }
        Ok(ShoeConfig {
            label: label.to_string(),
            platform_height_in,
            heel_height_in,
        })
    }

    /// Effective heel-to-toe drop the wearer experiences: `heel - platform`.
    pub fn walking_height_in(&self) -> f64 {
        self.heel_height_in - self.platform_height_in
    }
}

/// The three shoe clusters used for grouped analysis: varying walking height
/// at low platform, varying platform at high heel, and a near-equal walking
/// height pair differing in overall elevation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShoeClusters {
    pub walking_height: Vec<String>,
    pub platform: Vec<String>,
    pub overall_pair: Vec<String>,
}

/// Classification thresholds, in inches.
pub const LOW_PLATFORM_MAX_IN: f64 = 0.5;
pub const HIGH_HEEL_MIN_IN: f64 = 5.5;
pub const OVERALL_PAIR_WALKING_TOL_IN: f64 = 0.25;
pub const OVERALL_PAIR_PLATFORM_MIN_DIFF_IN: f64 = 2.0;

/// Groups shoes into the three analysis clusters from their parameters.
pub fn classify_clusters(shoes: &[ShoeConfig]) -> ShoeClusters {
    let mut walking: BTreeSet<String> = BTreeSet::new();
    let mut platform: BTreeSet<String> = BTreeSet::new();
    let mut overall: BTreeSet<String> = BTreeSet::new();
    for shoe in shoes {
        if shoe.platform_height_in <= LOW_PLATFORM_MAX_IN {
            walking.insert(shoe.label.clone());
        }
        if shoe.heel_height_in >= HIGH_HEEL_MIN_IN {
            platform.insert(shoe.label.clone());
        }
    }
    for (i, a) in shoes.iter().enumerate() {
        for b in shoes.iter().skip(i + 1) {
            let near_walking = (a.walking_height_in() - b.walking_height_in()).abs()
                <= OVERALL_PAIR_WALKING_TOL_IN;
            let platform_spread = (a.platform_height_in - b.platform_height_in).abs()
                >= OVERALL_PAIR_PLATFORM_MIN_DIFF_IN;
            if near_walking && platform_spread {
                overall.insert(a.label.clone());
                overall.insert(b.label.clone());
            }
        }
    }
    ShoeClusters {
        walking_height: walking.into_iter().collect(),
        platform: platform.into_iter().collect(),
        overall_pair: overall.into_iter().collect(),
    }
}

/// Session metadata stored in `meta.kv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub candidate_id: String,
    pub shoe: ShoeConfig,
    pub sample_rate_hz: f64,
    pub layout: SensorLayout,
    /// Path of a calibration file, relative to the session directory.
    pub calibration_file: Option<String>,
    pub notes: Option<String>,
}

impl SessionMeta {
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("candidate_id", &self.candidate_id);
        kv.set("sample_rate_hz", self.sample_rate_hz);
        kv.set("shoe.label", &self.shoe.label);
        kv.set("shoe.platform_height_in", self.shoe.platform_height_in);
        kv.set("shoe.heel_height_in", self.shoe.heel_height_in);
        kv.set("shoe.walking_height_in", self.shoe.walking_height_in());
        for side in Side::ALL {
            for role in SegmentRole::ALL {
                kv.set(
                    &format!("layout.{}.{}", side.as_str(), role.as_str()),
                    self.layout.sensor_for(side, role),
                );
            }
        }
        if let Some(f) = &self.calibration_file {
            kv.set("calibration_file", f);
        }
        if let Some(n) = &self.notes {
            kv.set("notes", n);
        }
        kv
    }

    pub fn from_kv(kv: &KvFile, path: &str) -> Result<Self, SessionError> {
        let invalid = |reason: String| SessionError::InvalidMeta {
            path: path.to_string(),
            reason,
        };
        let from_kv_err = |e: KvError| invalid(e.to_string());

        let candidate_id = kv.require("candidate_id").map_err(from_kv_err)?.to_string();
        let sample_rate_hz = kv.require_f64("sample_rate_hz").map_err(from_kv_err)?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(invalid(format!(
                "sample_rate_hz must be > 0, got {sample_rate_hz}"
            )));
        }
        let shoe = ShoeConfig::new(
            kv.require("shoe.label").map_err(from_kv_err)?,
            kv.require_f64("shoe.platform_height_in")
                .map_err(from_kv_err)?,
            kv.require_f64("shoe.heel_height_in").map_err(from_kv_err)?,
        )?;
        if let Some(wh) = kv.get_f64("shoe.walking_height_in").map_err(from_kv_err)? {
            if (wh - shoe.walking_height_in()).abs() > 1e-9 {
                return Err(invalid(format!(
                    "shoe.walking_height_in = {wh} contradicts heel - platform = {}",
                    shoe.walking_height_in()
                )));
            }
        }

        let any_layout_key = kv.keys().any(|k| k.starts_with("layout."));
        let layout = if any_layout_key {
            let mut ids = [[0u8; 6]; 2];
            for (s, side) in Side::ALL.into_iter().enumerate() {
                for role in SegmentRole::ALL {
                    let key = format!("layout.{}.{}", side.as_str(), role.as_str());
                    let id = kv.require_u64(&key).map_err(from_kv_err)?;
                    if id > MAX_SENSOR_ID as u64 {
                        return Err(invalid(format!("{key} = {id} exceeds {MAX_SENSOR_ID}")));
                    }
                    ids[s][role.index()] = id as u8;
                }
            }
            SensorLayout {
                left: crate::kinematics::LegLayout { sensor_ids: ids[0] },
                right: crate::kinematics::LegLayout { sensor_ids: ids[1] },
            }
        } else {
            SensorLayout::default()
        };
        layout.validate().map_err(|e| invalid(e.to_string()))?;

        Ok(SessionMeta {
            candidate_id,
            shoe,
            sample_rate_hz,
            layout,
            calibration_file: kv.get("calibration_file").map(str::to_string),
            notes: kv.get("notes").map(str::to_string),
        })
    }
}

/// One row of a module file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleRecord {
    pub tick: u64,
    pub sensor_id: u8,
    pub accel: Vec3,
    pub gyro: Vec3,
    /// Reserved event marker column; carried through but currently unused.
    pub event: Option<i64>,
}

/// A fully validated in-memory module file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleFile {
    pub module_id: u32,
    pub records: Vec<ModuleRecord>,
    pub has_event_column: bool,
}

impl ModuleFile {
    pub fn sensor_ids(&self) -> BTreeSet<u8> {
        self.records.iter().map(|r| r.sensor_id).collect()
    }
}

/// Parses and validates a module file; every violation is reported with its
/// line (and column where meaningful).
pub fn parse_module_file(path: &Path) -> Result<ModuleFile, SessionError> {
    let text = fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
    parse_module_text(&text, &path.display().to_string())
}

/// Same as [`parse_module_file`] but over in-memory text; `source` names the
/// input in error messages.
pub fn parse_module_text(text: &str, source: &str) -> Result<ModuleFile, SessionError> {
    let malformed = |line: usize, column: usize, reason: String| SessionError::MalformedLine {
        path: source.to_string(),
        line,
        column,
        reason,
    };

    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(malformed(1, 1, "empty file, expected header".into()));
    };
    let has_event_column = match header.trim_end() {
        MODULE_HEADER => false,
        MODULE_HEADER_EVENT => true,
        other => {
            return Err(malformed(
                1,
                1,
                format!("bad header `{other}`, expected `{MODULE_HEADER}`"),
            ))
        }
    };
    let expected_fields = if has_event_column { 10 } else { 9 };

    let mut records: Vec<ModuleRecord> = Vec::new();
    let mut module_id: Option<u32> = None;
    let mut prev_tick: Option<u64> = None;
    let mut sensors_at_tick: BTreeSet<u8> = BTreeSet::new();
    let mut all_sensors: BTreeSet<u8> = BTreeSet::new();
    let mut tick0_sensors: BTreeSet<u8> = BTreeSet::new();

    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != expected_fields {
            return Err(malformed(
                line,
                1,
                format!("expected {expected_fields} fields, got {}", fields.len()),
            ));
        }

        let parse_u64 = |col: usize, name: &str| -> Result<u64, SessionError> {
            fields[col].trim().parse::<u64>().map_err(|_| {
                malformed(
                    line,
                    col + 1,
                    format!("{name} `{}` is not an unsigned integer", fields[col]),
                )
            })
        };
        let parse_f64 = |col: usize, name: &str| -> Result<f64, SessionError> {
            let v: f64 = fields[col].trim().parse().map_err(|_| {
                malformed(
                    line,
                    col + 1,
                    format!("{name} `{}` is not a number", fields[col]),
                )
            })?;
            if !v.is_finite() {
                return Err(malformed(line, col + 1, format!("{name} must be finite")));
            }
            Ok(v)
        };

        let row_module = parse_u64(0, "module_id")? as u32;
        match module_id {
            None => module_id = Some(row_module),
            Some(expected) if expected != row_module => {
                return Err(malformed(
                    line,
                    1,
                    format!("module_id {row_module} differs from {expected} declared earlier"),
                ));
            }
            _ => {}
        }

        let tick = parse_u64(1, "tick")?;
        let sensor_raw = parse_u64(2, "sensor_id")?;
        if sensor_raw > MAX_SENSOR_ID as u64 {
            return Err(malformed(
                line,
                3,
                format!("sensor_id {sensor_raw} exceeds {MAX_SENSOR_ID}"),
            ));
        }
        let sensor_id = sensor_raw as u8;

        let accel = Vec3::new(
            parse_f64(3, "ax")?,
            parse_f64(4, "ay")?,
            parse_f64(5, "az")?,
        );
        let gyro = Vec3::new(
            parse_f64(6, "gx")?,
            parse_f64(7, "gy")?,
            parse_f64(8, "gz")?,
        );
        let accel_fields = [("ax", accel.x, 4), ("ay", accel.y, 5), ("az", accel.z, 6)];
        for (name, v, col) in accel_fields {
            if v.abs() > MAX_ABS_ACCEL {
                return Err(SessionError::UnitRange {
                    path: source.to_string(),
                    line,
                    column: col,
                    field: name,
                    value: v,
                    limit: MAX_ABS_ACCEL,
                });
            }
        }
        let gyro_fields = [("gx", gyro.x, 7), ("gy", gyro.y, 8), ("gz", gyro.z, 9)];
        for (name, v, col) in gyro_fields {
            if v.abs() > MAX_ABS_GYRO {
                return Err(SessionError::UnitRange {
                    path: source.to_string(),
                    line,
                    column: col,
                    field: name,
                    value: v,
                    limit: MAX_ABS_GYRO,
                });
            }
        }

        let event = if has_event_column {
            let raw_event = fields[9].trim();
            if raw_event.is_empty() {
                None
            } else {
                Some(raw_event.parse::<i64>().map_err(|_| {
                    malformed(line, 10, format!("event `{raw_event}` is not an integer"))
                })?)
            }
        } else {
            None
        };

        match prev_tick {
            Some(prev) if tick < prev => {
                return Err(SessionError::NonMonotoneTick {
                    path: source.to_string(),
                    line,
                    tick,
                    prev,
                });
            }
            Some(prev) if tick > prev => sensors_at_tick.clear(),
            _ => {}
        }
        if !sensors_at_tick.insert(sensor_id) {
            return Err(SessionError::DuplicateRecord {
                path: source.to_string(),
                line,
                tick,
                sensor_id,
            });
        }
        prev_tick = Some(tick);
        all_sensors.insert(sensor_id);
        if tick == 0 {
            tick0_sensors.insert(sensor_id);
        }

        records.push(ModuleRecord {
            tick,
            sensor_id,
            accel,
            gyro,
            event,
        });
    }

    if let Some(&missing) = all_sensors.difference(&tick0_sensors).next() {
        return Err(SessionError::MissingAtTrigger {
            path: source.to_string(),
            sensor_id: missing,
        });
    }

    Ok(ModuleFile {
        module_id: module_id.unwrap_or(0),
        records,
        has_event_column,
    })
}

/// Serializes a module file in the canonical grammar. Floats use the shortest
/// representation that round-trips, so write → parse is the identity.
pub fn module_file_text(module: &ModuleFile) -> String {
    let mut out = String::new();
    out.push_str(if module.has_event_column {
        MODULE_HEADER_EVENT
    } else {
        MODULE_HEADER
    });
    out.push('\n');
    for r in &module.records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            module.module_id,
            r.tick,
            r.sensor_id,
            r.accel.x,
            r.accel.y,
            r.accel.z,
            r.gyro.x,
            r.gyro.y,
            r.gyro.z
        );
        if module.has_event_column {
            match r.event {
                Some(e) => {
                    let _ = write!(out, ",{e}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_module_file(path: &Path, module: &ModuleFile) -> Result<(), SessionError> {
    fs::write(path, module_file_text(module)).map_err(|e| SessionError::io(path, e))
}

/// One synchronized per-sensor stream. `interpolated_ticks` lists ticks whose
/// samples were filled by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub sensor_id: u8,
    pub samples: Vec<ImuSample>,
    pub interpolated_ticks: Vec<u64>,
}

/// All sensor streams of a session on the common trigger-aligned tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedSession {
    pub streams: BTreeMap<u8, SensorStream>,
    pub sample_rate_hz: f64,
    /// Inclusive last tick covered by every sensor.
    pub common_end_tick: u64,
}

/// Aligns module files onto the shared tick grid.
///
/// Streams are truncated to the range covered by every sensor; interior gaps
/// of at most [`MAX_INTERP_GAP_TICKS`] ticks are linearly interpolated and
/// flagged, larger gaps are left in place for `ekf::run_stream` to reject.
pub fn synchronize(
    modules: &[ModuleFile],
    meta: &SessionMeta,
) -> Result<SyncedSession, SessionError> {
    let mut per_sensor: BTreeMap<u8, BTreeMap<u64, ModuleRecord>> = BTreeMap::new();
    let mut owner: BTreeMap<u8, usize> = BTreeMap::new();
    for (module_idx, module) in modules.iter().enumerate() {
        for record in &module.records {
            if let Some(&first) = owner.get(&record.sensor_id) {
                if first != module_idx {
                    return Err(SessionError::SensorInMultipleModules {
                        sensor_id: record.sensor_id,
                    });
                }
            } else {
                owner.insert(record.sensor_id, module_idx);
            }
            per_sensor
                .entry(record.sensor_id)
                .or_default()
                .insert(record.tick, *record);
        }
    }
    if per_sensor.is_empty() {
        return Err(SessionError::NoCommonRange);
    }
    let common_end_tick = per_sensor
        .values()
        .map(|ticks| *ticks.last_key_value().expect("non-empty").0)
        .min()
        .expect("non-empty");

    let dt = 1.0 / meta.sample_rate_hz;
    let mut streams = BTreeMap::new();
    for (sensor_id, ticks) in per_sensor {
        let mut samples = Vec::with_capacity((common_end_tick + 1) as usize);
        let mut interpolated = Vec::new();
        let mut tick = 0u64;
        while tick <= common_end_tick {
            if let Some(r) = ticks.get(&tick) {
                samples.push(ImuSample {
                    timestamp_s: tick as f64 * dt,
                    sensor_id,
                    accel: r.accel,
                    gyro: r.gyro,
                });
                tick += 1;
                continue;
            }
            // Missing run: find the next present tick (guaranteed to exist
            // because tick 0 is present and common_end_tick is covered).
            let prev_tick = tick - 1;
            let mut next_tick = tick + 1;
            while !ticks.contains_key(&next_tick) {
                next_tick += 1;
            }
            let run = next_tick - tick;
            if run <= MAX_INTERP_GAP_TICKS {
                let a = ticks[&prev_tick];
                let b = ticks[&next_tick];
                let span = (next_tick - prev_tick) as f64;
                for missing in tick..next_tick {
                    let frac = (missing - prev_tick) as f64 / span;
                    let lerp = |p: f64, q: f64| p + (q - p) * frac;
                    samples.push(ImuSample {
                        timestamp_s: missing as f64 * dt,
                        sensor_id,
                        accel: Vec3::new(
                            lerp(a.accel.x, b.accel.x),
                            lerp(a.accel.y, b.accel.y),
                            lerp(a.accel.z, b.accel.z),
                        ),
                        gyro: Vec3::new(
                            lerp(a.gyro.x, b.gyro.x),
                            lerp(a.gyro.y, b.gyro.y),
                            lerp(a.gyro.z, b.gyro.z),
                        ),
                    });
                    interpolated.push(missing);
                }
            }
            tick = next_tick;
        }
        streams.insert(
            sensor_id,
            SensorStream {
                sensor_id,
                samples,
                interpolated_ticks: interpolated,
            },
        );
    }
    Ok(SyncedSession {
        streams,
        sample_rate_hz: meta.sample_rate_hz,
        common_end_tick,
    })
}

/// Serializes a mounting calibration as `sensor.<id>.alignment = w,x,y,z`.
pub fn calibration_to_kv(calib: &crate::kinematics::MountingCalibration) -> KvFile {
    let mut kv = KvFile::new();
    for (id, q) in calib.iter() {
        kv.set(
            &format!("sensor.{id}.alignment"),
            format!("{},{},{},{}", q.w, q.x, q.y, q.z),
        );
    }
    kv
}

pub fn calibration_from_kv(
    kv: &KvFile,
    path: &str,
) -> Result<crate::kinematics::MountingCalibration, SessionError> {
    let invalid = |reason: String| SessionError::InvalidMeta {
        path: path.to_string(),
        reason,
    };
    let mut calib = crate::kinematics::MountingCalibration::default();
    let keys: Vec<String> = kv.keys().map(str::to_string).collect();
    for key in keys {
        let Some(rest) = key.strip_prefix("sensor.") else {
            continue;
        };
        let Some(id_str) = rest.strip_suffix(".alignment") else {
            continue;
        };
        let id: u8 = id_str
            .parse()
            .map_err(|_| invalid(format!("bad sensor id in key `{key}`")))?;
        let parts = kv.get_f64_list(&key).map_err(|e| invalid(e.to_string()))?;
        if parts.len() != 4 {
            return Err(invalid(format!("`{key}` must be w,x,y,z")));
        }
        let q = Quaternion::new(parts[0], parts[1], parts[2], parts[3]);
        let q = q
            .normalized()
            .map_err(|e| invalid(format!("`{key}`: {e}")))?;
        calib.set(id, q);
    }
    Ok(calib)
}

/// A session directory loaded from disk.
#[derive(Debug)]
pub struct SessionDir {
    pub path: PathBuf,
    pub meta: SessionMeta,
    pub modules: Vec<ModuleFile>,
}

/// Reads `meta.kv` and every `module_*.csv` (sorted by name).
pub fn load_session(dir: &Path) -> Result<SessionDir, SessionError> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| SessionError::io(&meta_path, e))?;
    let kv = KvFile::parse(&meta_text).map_err(|e| SessionError::InvalidMeta {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let meta = SessionMeta::from_kv(&kv, &meta_path.display().to_string())?;

    let mut module_paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SessionError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("module_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    module_paths.sort();
    if module_paths.is_empty() {
        return Err(SessionError::NoCommonRange);
    }
    let modules = module_paths
        .iter()
        .map(|p| parse_module_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SessionDir {
        path: dir.to_path_buf(),
        meta,
        modules,
    })
}

/// Loads the calibration referenced by the session metadata, if any.
pub fn load_referenced_calibration(
    session: &SessionDir,
) -> Result<Option<crate::kinematics::MountingCalibration>, SessionError> {
    let Some(rel) = &session.meta.calibration_file else {
        return Ok(None);
    };
    let path = session.path.join(rel);
    let text = fs::read_to_string(&path).map_err(|e| SessionError::io(&path, e))?;
    let kv = KvFile::parse(&text).map_err(|e| SessionError::InvalidMeta {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    calibration_from_kv(&kv, &path.display().to_string()).map(Some)
}

/// The seven shoe configurations studied in the reference dataset, used as a
/// fixture by the report tests.
pub fn reference_shoes() -> Vec<ShoeConfig> {
    [
        ("H1", 0.5, 0.75),
        ("H2", 0.25, 2.0),
        ("H3", 0.5, 3.0),
        ("H4", 1.5, 5.5),
        ("H5", 2.0, 6.0),
        ("H6", 2.0, 6.5),
        ("H7", 3.0, 5.25),
    ]
    .into_iter()
    .map(|(label, platform, heel)| ShoeConfig::new(label, platform, heel).expect("valid"))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta_fixture() -> SessionMeta {
        SessionMeta {
            candidate_id: "cand01".into(),
            shoe: ShoeConfig::new("H3", 0.5, 3.0).unwrap(),
            sample_rate_hz: 32.0,
            layout: SensorLayout::default(),
            calibration_file: None,
            notes: None,
        }
    }

    #[test]
    fn shoe_walking_heights() {
        let shoes = reference_shoes();
        let wh: Vec<f64> = shoes.iter().map(|s| s.walking_height_in()).collect();
        assert_eq!(wh, vec![0.25, 1.75, 2.5, 4.0, 4.0, 4.5, 2.25]);
        assert_eq!(
            ShoeConfig::new("X", 2.0, 2.0).unwrap().walking_height_in(),
            0.0
        );
    }

    #[test]
    fn shoe_rejects_inverted_heights() {
        assert!(matches!(
            ShoeConfig::new("bad", 3.0, 1.0),
            Err(SessionError::InvalidShoe { .. })
        ));
        assert!(matches!(
            ShoeConfig::new("bad", -0.5, 1.0),
            Err(SessionError::InvalidShoe { .. })
        ));
    }

    #[test]
    fn clusters_match_reference_grouping() {
        let clusters = classify_clusters(&reference_shoes());
        assert_eq!(clusters.walking_height, vec!["H1", "H2", "H3"]);
        assert_eq!(clusters.platform, vec!["H4", "H5", "H6"]);
        assert_eq!(clusters.overall_pair, vec!["H3", "H7"]);
    }

    #[test]
    fn meta_round_trips() {
        let mut meta = meta_fixture();
        meta.calibration_file = Some("calibration.kv".into());
        meta.notes = Some("trial 3".into());
        let kv = meta.to_kv();
        let parsed =
            SessionMeta::from_kv(&KvFile::parse(&kv.to_text()).unwrap(), "meta.kv").unwrap();
        assert_eq!(parsed, meta);
    }

    #[test]
    fn meta_rejects_contradictory_walking_height() {
        let mut kv = meta_fixture().to_kv();
        kv.set("shoe.walking_height_in", 99.0);
        assert!(matches!(
            SessionMeta::from_kv(&kv, "meta.kv"),
            Err(SessionError::InvalidMeta { .. })
        ));
    }

    fn well_formed_text() -> String {
        let mut t = String::from("module_id,tick,sensor_id,ax,ay,az,gx,gy,gz\n");
        for tick in 0..3 {
            for sensor in [0u8, 1] {
                t.push_str(&format!("0,{tick},{sensor},0.1,0.2,9.8,0.01,0.02,0.03\n"));
            }
        }
        t
    }

    #[test]
    fn parses_well_formed_module() {
        let module = parse_module_text(&well_formed_text(), "module_0.csv").unwrap();
        assert_eq!(module.records.len(), 6);
        assert_eq!(module.module_id, 0);
        assert_eq!(module.sensor_ids().len(), 2);
    }

    #[test]
    fn duplicate_record_names_the_line() {
        let mut text = well_formed_text();
        text.push_str("0,2,1,0.1,0.2,9.8,0.01,0.02,0.03\n");
        match parse_module_text(&text, "module_0.csv") {
            Err(SessionError::DuplicateRecord {
                line: 8,
                tick: 2,
                sensor_id: 1,
                ..
            }) => {}
            other => panic!("expected duplicate at line 8, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_tick_is_rejected() {
        let mut text = well_formed_text();
        text.push_str("0,1,0,0.1,0.2,9.8,0.01,0.02,0.03\n");
        match parse_module_text(&text, "m") {
            Err(SessionError::NonMonotoneTick {
                line: 8,
                tick: 1,
                prev: 2,
                ..
            }) => {}
            other => panic!("expected non-monotone tick, got {other:?}"),
        }
    }

    #[test]
    fn unit_range_is_enforced() {
        let mut text = String::from("module_id,tick,sensor_id,ax,ay,az,gx,gy,gz\n");
        text.push_str("0,0,0,200.0,0,9.8,0,0,0\n");
        match parse_module_text(&text, "m") {
            Err(SessionError::UnitRange {
                line: 2,
                column: 4,
                field: "ax",
                ..
            }) => {}
            other => panic!("expected accel range error, got {other:?}"),
        }
        let mut text = String::from("module_id,tick,sensor_id,ax,ay,az,gx,gy,gz\n");
        text.push_str("0,0,0,0,0,9.8,0,-40.0,0\n");
        match parse_module_text(&text, "m") {
            Err(SessionError::UnitRange {
                line: 2,
                column: 8,
                field: "gy",
                ..
            }) => {}
            other => panic!("expected gyro range error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let mut text = well_formed_text();
        text.push_str("0,3,0,not_a_number,0,9.8,0,0,0\n");
        match parse_module_text(&text, "m") {
            Err(SessionError::MalformedLine {
                line: 8, column: 4, ..
            }) => {}
            other => panic!("expected malformed line, got {other:?}"),
        }
        let short = "module_id,tick,sensor_id,ax,ay,az,gx,gy,gz\n0,0,0,1,2\n";
        assert!(matches!(
            parse_module_text(short, "m"),
            Err(SessionError::MalformedLine { line: 2, .. })
        ));
        let bad_header = "tick,stuff\n";
        assert!(matches!(
            parse_module_text(bad_header, "m"),
            Err(SessionError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn missing_trigger_sensor_is_rejected() {
        let mut text = String::from("module_id,tick,sensor_id,ax,ay,az,gx,gy,gz\n");
        text.push_str("0,0,0,0,0,9.8,0,0,0\n");
        text.push_str("0,1,0,0,0,9.8,0,0,0\n");
        text.push_str("0,1,1,0,0,9.8,0,0,0\n");
        match parse_module_text(&text, "m") {
            Err(SessionError::MissingAtTrigger { sensor_id: 1, .. }) => {}
            other => panic!("expected trigger error, got {other:?}"),
        }
    }

    #[test]
    fn event_column_round_trips() {
        let text = "module_id,tick,sensor_id,ax,ay,az,gx,gy,gz,event\n0,0,0,0,0,9.8,0,0,0,1\n0,1,0,0,0,9.8,0,0,0,\n";
        let module = parse_module_text(text, "m").unwrap();
        assert_eq!(module.records[0].event, Some(1));
        assert_eq!(module.records[1].event, None);
        assert_eq!(module_file_text(&module), text);
    }

    #[test]
    fn module_text_round_trips() {
        let module = parse_module_text(&well_formed_text(), "m").unwrap();
        let text = module_file_text(&module);
        let reparsed = parse_module_text(&text, "m").unwrap();
        assert_eq!(module, reparsed);
    }

    #[test]
    fn synchronize_truncates_to_common_range() {
        let meta = meta_fixture();
        let mk = |module_id: u32, sensors: &[u8], n_ticks: u64| {
            let mut records = Vec::new();
            for tick in 0..n_ticks {
                for &s in sensors {
                    records.push(ModuleRecord {
                        tick,
                        sensor_id: s,
                        accel: Vec3::new(0.0, 0.0, 9.8),
                        gyro: Vec3::ZERO,
                        event: None,
                    });
                }
            }
            ModuleFile {
                module_id,
                records,
                has_event_column: false,
            }
        };
        let a = mk(0, &[0, 1, 2, 3, 4, 5], 1000);
        let b = mk(1, &[6, 7, 8, 9, 10, 11], 900);
        let synced = synchronize(&[a, b], &meta).unwrap();
        assert_eq!(synced.streams.len(), 12);
        assert_eq!(synced.common_end_tick, 899);
        for stream in synced.streams.values() {
            assert_eq!(stream.samples.len(), 900);
            assert!(stream.interpolated_ticks.is_empty());
        }
        assert!((synced.streams[&0].samples[32].timestamp_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synchronize_interpolates_short_gaps_and_keeps_long_ones() {
        let meta = meta_fixture();
        let mut records = Vec::new();
        for tick in 0..50u64 {
            if tick == 10 {
                continue; // 1-tick gap: interpolated
            }
            if (20..=23).contains(&tick) {
                continue; // 4-tick gap: left in place
            }
            records.push(ModuleRecord {
                tick,
                sensor_id: 0,
                accel: Vec3::new(tick as f64, 0.0, 9.8),
                gyro: Vec3::ZERO,
                event: None,
            });
        }
        let module = ModuleFile {
            module_id: 0,
            records,
            has_event_column: false,
        };
        let synced = synchronize(&[module], &meta).unwrap();
        let stream = &synced.streams[&0];
        assert_eq!(stream.interpolated_ticks, vec![10]);
        // Interpolated value is the average of the neighbors.
        let sample10 = stream
            .samples
            .iter()
            .find(|s| (s.timestamp_s - 10.0 / 32.0).abs() < 1e-12)
            .unwrap();
        assert!((sample10.accel.x - 10.0).abs() < 1e-12);
        // The 4-tick gap is not filled: ticks 20..=23 missing.
        assert_eq!(stream.samples.len(), 50 - 4);
    }

    #[test]
    fn synchronize_is_idempotent_on_aligned_inputs() {
        let meta = meta_fixture();
        let mut records = Vec::new();
        for tick in 0..64u64 {
            for s in 0..2u8 {
                records.push(ModuleRecord {
                    tick,
                    sensor_id: s,
                    accel: Vec3::new(0.1 * tick as f64, 0.0, 9.8),
                    gyro: Vec3::new(0.0, 0.01, 0.0),
                    event: None,
                });
            }
        }
        let module = ModuleFile {
            module_id: 0,
            records,
            has_event_column: false,
        };
        let first = synchronize(std::slice::from_ref(&module), &meta).unwrap();
        // Rebuild a module from the synced output and synchronize again.
        let rebuilt_records: Vec<ModuleRecord> = (0..=first.common_end_tick)
            .flat_map(|tick| {
                first.streams.values().map(move |stream| {
                    let s = &stream.samples[tick as usize];
                    ModuleRecord {
                        tick,
                        sensor_id: s.sensor_id,
                        accel: s.accel,
                        gyro: s.gyro,
                        event: None,
                    }
                })
            })
            .collect();
        let rebuilt = ModuleFile {
            module_id: 0,
            records: rebuilt_records,
            has_event_column: false,
        };
        let second = synchronize(&[rebuilt], &meta).unwrap();
        assert_eq!(first.streams, second.streams);
    }

    #[test]
    fn synchronize_rejects_shared_sensor_and_empty_input() {
        let meta = meta_fixture();
        let record = ModuleRecord {
            tick: 0,
            sensor_id: 0,
            accel: Vec3::new(0.0, 0.0, 9.8),
            gyro: Vec3::ZERO,
            event: None,
        };
        let a = ModuleFile {
            module_id: 0,
            records: vec![record],
            has_event_column: false,
        };
        let b = ModuleFile {
            module_id: 1,
            records: vec![record],
            has_event_column: false,
        };
        assert!(matches!(
            synchronize(&[a, b], &meta),
            Err(SessionError::SensorInMultipleModules { sensor_id: 0 })
        ));
        assert!(matches!(
            synchronize(&[], &meta),
            Err(SessionError::NoCommonRange)
        ));
    }

    #[test]
    fn calibration_kv_round_trips() {
        let layout = SensorLayout::default();
        let mut calib = crate::kinematics::MountingCalibration::identity(&layout);
        calib.set(
            3,
            Quaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 0.5),
        );
        let kv = calibration_to_kv(&calib);
        let parsed =
            calibration_from_kv(&KvFile::parse(&kv.to_text()).unwrap(), "calibration.kv").unwrap();
        for (id, q) in calib.iter() {
            let p = parsed.alignment_for(id).unwrap();
            assert!((p.w - q.w).abs() < 1e-12 && (p.x - q.x).abs() < 1e-12);
        }
    }
}
