//! Report assembly and the structured output formats: a per-session metrics
//! table (CSV and aligned text, 4-decimal fixed precision) and grouped
//! box-plot statistics (JSON).
//!
//! Outputs are deterministic: rows sort by candidate then shoe label, box
//! panels by candidate, joint, then group, boxes by shoe label, and all reals
//! format with 4 decimals (ties resolve to even in the decimal conversion of
//! the exact binary value).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::Joint;
use crate::metrics::{box_stats, BoxStats, SessionMetrics};
use crate::pipeline::AnalyzedSession;
use crate::session::ShoeConfig;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("box stats JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// Analysis groups over the shoe set: walking-height spread at low platform,
/// platform spread at near-constant heel, and the near-equal walking-height
/// pair differing in overall elevation.
pub const SHOE_GROUPS: [(&str, &[&str]); 3] = [
    ("walking_height", &["H1", "H2", "H3"]),
    ("platform", &["H4", "H5", "H6", "H7"]),
    ("overall_height", &["H3", "H7"]),
];

/// One row of the session metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub candidate: String,
    pub shoe_label: String,
    pub platform_in: f64,
    pub heel_in: f64,
    pub step_cycle_time_s: f64,
    pub mean_accel_mps2: f64,
    pub accel_variance_mps2sq: f64,
    /// Gravity-removed companions; absent for fixture rows that only carry
    /// the classic three metrics.
    pub mean_dynamic_accel_mps2: Option<f64>,
    pub dynamic_accel_variance_mps2sq: Option<f64>,
    pub n_cycles: Option<u64>,
}

impl MetricsRow {
    pub fn walking_height_in(&self) -> f64 {
        self.heel_in - self.platform_in
    }

    pub fn from_session(candidate: &str, shoe: &ShoeConfig, metrics: &SessionMetrics) -> Self {
        MetricsRow {
            candidate: candidate.to_string(),
            shoe_label: shoe.label.clone(),
            platform_in: shoe.platform_height_in,
            heel_in: shoe.heel_height_in,
            step_cycle_time_s: metrics.mean_step_cycle_time_s,
            mean_accel_mps2: metrics.mean_accel_magnitude_mps2,
            accel_variance_mps2sq: metrics.accel_variance_mps2sq,
            mean_dynamic_accel_mps2: Some(metrics.mean_dynamic_accel_mps2),
            dynamic_accel_variance_mps2sq: Some(metrics.dynamic_accel_variance_mps2sq),
            n_cycles: Some(metrics.n_cycles as u64),
        }
    }
}

pub const METRICS_COLUMNS: [&str; 11] = [
    "candidate",
    "shoe",
    "platform_in",
    "heel_in",
    "walking_height_in",
    "step_cycle_time_s",
    "mean_accel_mps2",
    "accel_variance_mps2sq",
    "mean_dynamic_accel_mps2",
    "dynamic_accel_variance_mps2sq",
    "n_cycles",
];

/// Fixed 4-decimal formatting used by every real-valued report column.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn row_fields(row: &MetricsRow) -> [String; 11] {
    [
        row.candidate.clone(),
        row.shoe_label.clone(),
        fmt4(row.platform_in),
        fmt4(row.heel_in),
        fmt4(row.walking_height_in()),
        fmt4(row.step_cycle_time_s),
        fmt4(row.mean_accel_mps2),
        fmt4(row.accel_variance_mps2sq),
        row.mean_dynamic_accel_mps2.map(fmt4).unwrap_or_default(),
        row.dynamic_accel_variance_mps2sq
            .map(fmt4)
            .unwrap_or_default(),
        row.n_cycles.map(|n| n.to_string()).unwrap_or_default(),
    ]
}

/// Sorts rows into the canonical output order: candidate, then shoe label.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        (a.candidate.as_str(), a.shoe_label.as_str())
            .cmp(&(b.candidate.as_str(), b.shoe_label.as_str()))
    });
}

/// Comma-separated metrics table with header.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row_fields(row).join(","));
        out.push('\n');
    }
    out
}

/// Space-aligned human-readable rendering of the same table.
pub fn metrics_text(rows: &[MetricsRow]) -> String {
    let mut widths: Vec<usize> = METRICS_COLUMNS.iter().map(|c| c.len()).collect();
    let all_fields: Vec<[String; 11]> = rows.iter().map(row_fields).collect();
    for fields in &all_fields {
        for (w, f) in widths.iter_mut().zip(fields.iter()) {
            *w = (*w).max(f.len());
        }
    }
    let mut out = String::new();
    for (i, col) in METRICS_COLUMNS.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        let _ = write!(out, "{col:<width$}", width = widths[i]);
    }
    out.push('\n');
    for fields in &all_fields {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{f:<width$}", width = widths[i]);
        }
        out.push('\n');
    }
    out
}

/// Parses a metrics CSV produced by [`metrics_csv`] (also accepts hand-written
/// fixtures in the same grammar).
pub fn parse_metrics_csv(text: &str, source_name: &str) -> Result<Vec<MetricsRow>, ReportError> {
    let err = |line: usize, reason: String| ReportError::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(err(1, "empty file, expected header".into()));
    };
    if header.trim_end() != METRICS_COLUMNS.join(",") {
        return Err(err(1, format!("bad header `{header}`")));
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != METRICS_COLUMNS.len() {
            return Err(err(
                line,
                format!(
                    "expected {} fields, got {}",
                    METRICS_COLUMNS.len(),
                    fields.len()
                ),
            ));
        }
        let parse_f64 = |col: usize| -> Result<f64, ReportError> {
            fields[col].trim().parse::<f64>().map_err(|_| {
                err(
                    line,
                    format!(
                        "column {}: `{}` is not a number",
                        METRICS_COLUMNS[col], fields[col]
                    ),
                )
            })
        };
        let parse_opt_f64 = |col: usize| -> Result<Option<f64>, ReportError> {
            if fields[col].trim().is_empty() {
                Ok(None)
            } else {
                parse_f64(col).map(Some)
            }
        };
        let row = MetricsRow {
            candidate: fields[0].trim().to_string(),
            shoe_label: fields[1].trim().to_string(),
            platform_in: parse_f64(2)?,
            heel_in: parse_f64(3)?,
            step_cycle_time_s: parse_f64(5)?,
            mean_accel_mps2: parse_f64(6)?,
            accel_variance_mps2sq: parse_f64(7)?,
            mean_dynamic_accel_mps2: parse_opt_f64(8)?,
            dynamic_accel_variance_mps2sq: parse_opt_f64(9)?,
            n_cycles: if fields[10].trim().is_empty() {
                None
            } else {
                Some(fields[10].trim().parse::<u64>().map_err(|_| {
                    err(
                        line,
                        format!("column n_cycles: `{}` is not an integer", fields[10]),
                    )
                })?)
            },
        };
        let wh = parse_f64(4)?;
        if (wh - row.walking_height_in()).abs() > 1e-9 {
            return Err(err(
                line,
                format!(
                    "walking_height_in = {wh} contradicts heel - platform = {}",
                    row.walking_height_in()
                ),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One labeled box within a panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub shoe: String,
    pub stats: BoxStats,
}

/// One box-plot panel: the per-cycle range distribution of one joint for one
/// candidate across the shoes of one analysis group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPanel {
    pub candidate: String,
    pub joint: String,
    pub group: String,
    pub boxes: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStatsReport {
    pub panels: Vec<BoxPanel>,
}

/// Renders the grouped box statistics as pretty-printed JSON.
pub fn box_report_json(report: &BoxStatsReport) -> Result<String, ReportError> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

pub fn parse_box_report(text: &str) -> Result<BoxStatsReport, ReportError> {
    Ok(serde_json::from_str(text)?)
}

/// Builds the metrics table and grouped box statistics from analyzed
/// sessions.
///
/// Per-joint per-cycle ranges are pooled over both legs and over every
/// session of the same `(candidate, shoe)`; a group panel appears once at
/// least one of its shoes is present for the candidate.
pub fn assemble_report(
    sessions: &[AnalyzedSession],
) -> Result<(Vec<MetricsRow>, BoxStatsReport), ReportError> {
    let mut rows: Vec<MetricsRow> = sessions
        .iter()
        .map(|s| MetricsRow::from_session(&s.meta.candidate_id, &s.meta.shoe, &s.metrics))
        .collect();
    sort_rows(&mut rows);

    // (candidate, joint, shoe) -> pooled per-cycle ranges over sides/sessions.
    let mut pooled: BTreeMap<(String, Joint, String), Vec<f64>> = BTreeMap::new();
    for s in sessions {
        for ((_side, joint), ranges) in &s.cycle_ranges {
            pooled
                .entry((
                    s.meta.candidate_id.clone(),
                    *joint,
                    s.meta.shoe.label.clone(),
                ))
                .or_default()
                .extend_from_slice(ranges);
        }
    }

    let mut candidates: Vec<String> = sessions
        .iter()
        .map(|s| s.meta.candidate_id.clone())
        .collect();
    candidates.sort();
    candidates.dedup();
    let mut joints: Vec<Joint> = sessions
        .iter()
        .flat_map(|s| s.cycle_ranges.keys().map(|(_, j)| *j))
        .collect();
    joints.sort();
    joints.dedup();

    let mut panels = Vec::new();
    for candidate in &candidates {
        for &joint in &joints {
            for (group, members) in SHOE_GROUPS {
                let mut boxes = Vec::new();
                for &shoe in members {
                    if let Some(ranges) = pooled.get(&(candidate.clone(), joint, shoe.to_string()))
                    {
                        boxes.push(LabeledBox {
                            shoe: shoe.to_string(),
                            stats: box_stats(ranges)?,
                        });
                    }
                }
                if !boxes.is_empty() {
                    boxes.sort_by(|a, b| a.shoe.cmp(&b.shoe));
                    panels.push(BoxPanel {
                        candidate: candidate.clone(),
                        joint: joint.as_str().to_string(),
                        group: group.to_string(),
                        boxes,
                    });
                }
            }
        }
    }
    Ok((rows, BoxStatsReport { panels }))
}

/// Per-cycle normalized traces for one joint of one session, serialized as a
/// 101-row CSV (`percent` plus one `cycle_<k>` column per cycle).
pub fn cycle_traces_csv(traces: &[Vec<f64>]) -> String {
    let mut out = String::from("percent");
    for k in 0..traces.len() {
        let _ = write!(out, ",cycle_{k}");
    }
    out.push('\n');
    for i in 0..=100 {
        let _ = write!(out, "{i}");
        for trace in traces {
            let _ = write!(out, ",{}", fmt4(trace[i]));
        }
        out.push('\n');
    }
    out
}

/// The classic three-metric values of the reference dataset (7 shoes × 3
/// candidates), used as a formatting fixture: step cycle time (s), mean
/// acceleration magnitude (m/s²), and variance of acceleration ((m/s²)²).
pub fn reference_table_rows() -> Vec<MetricsRow> {
    // (shoe, platform, heel, [per-candidate (step, accel, var)])
    const DATA: [(&str, f64, f64, [(f64, f64, f64); 3]); 7] = [
        (
            "H1",
            0.5,
            0.75,
            [
                (1.5555, 1.6051, 0.1236),
                (1.1474, 1.9650, 0.3921),
                (1.7432, 1.6672, 0.0712),
            ],
        ),
        (
            "H2",
            0.25,
            2.0,
            [
                (1.6146, 1.7169, 0.1230),
                (1.1183, 2.0345, 0.4477),
                (1.8323, 1.6322, 0.1351),
            ],
        ),
        (
            "H3",
            0.5,
            3.0,
            [
                (1.5512, 1.8477, 0.1266),
                (1.1152, 2.1798, 0.5166),
                (1.8673, 1.7959, 0.1047),
            ],
        ),
        (
            "H4",
            1.5,
            5.5,
            [
                (1.5736, 1.6476, 0.1362),
                (1.1875, 2.1169, 0.5074),
                (1.5784, 1.3863, 0.1280),
            ],
        ),
        (
            "H5",
            2.0,
            6.0,
            [
                (1.5552, 1.5411, 0.1283),
                (1.1439, 1.8944, 0.5170),
                (1.2492, 1.6281, 0.1439),
            ],
        ),
        (
            "H6",
            2.0,
            6.5,
            [
                (1.5688, 1.6262, 0.1700),
                (1.1710, 2.1910, 0.6039),
                (1.2788, 1.6254, 0.1357),
            ],
        ),
        (
            "H7",
            3.0,
            5.25,
            [
                (1.6152, 1.3847, 0.1288),
                (1.1508, 1.8944, 0.5170),
                (1.2492, 1.5125, 0.0992),
            ],
        ),
    ];
    let mut rows = Vec::with_capacity(21);
    for (shoe, platform, heel, per_candidate) in DATA {
        for (i, (step, accel, var)) in per_candidate.into_iter().enumerate() {
            rows.push(MetricsRow {
                candidate: format!("cand{:02}", i + 1),
                shoe_label: shoe.to_string(),
                platform_in: platform,
                heel_in: heel,
                step_cycle_time_s: step,
                mean_accel_mps2: accel,
                accel_variance_mps2sq: var,
                mean_dynamic_accel_mps2: None,
                dynamic_accel_variance_mps2sq: None,
                n_cycles: None,
            });
        }
    }
    sort_rows(&mut rows);
    rows
}
