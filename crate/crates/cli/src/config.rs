//! Effective tool configuration: built-in defaults, overridden by an
//! optional flat key-value config file, overridden again by CLI flags.
//! `--print-config` dumps the effective state in the same format the file
//! uses, so any run is reproducible from one file.

use gait_core::kv::KvFile;
use gait_core::math::Vec3;
use gait_core::pipeline::PipelineConfig;
use gait_core::synth::{GaitProfile, NoiseProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Text,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<OutputFormat, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "text" => Ok(OutputFormat::Text),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!(
                "unknown output format `{other}` (expected csv, text, json)"
            )),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Text => "text",
            OutputFormat::Json => "json",
        }
    }
}

/// Everything the subcommands can configure.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub pipeline: PipelineConfig,
    pub profile: GaitProfile,
    pub noise: NoiseProfile,
    /// When > 0, the simulator draws a random mounting offset of at most this
    /// many degrees for every sensor.
    pub mount_offset_max_deg: f64,
    pub sample_rate_hz: f64,
    pub candidate: String,
    pub shoe_label: String,
    pub shoe_platform_in: f64,
    pub shoe_heel_in: f64,
    pub formats: Vec<OutputFormat>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            pipeline: PipelineConfig::default(),
            profile: GaitProfile::default(),
            noise: NoiseProfile::default(),
            mount_offset_max_deg: 0.0,
            sample_rate_hz: 32.0,
            candidate: "cand01".to_string(),
            shoe_label: "H1".to_string(),
            shoe_platform_in: 0.5,
            shoe_heel_in: 0.75,
            formats: vec![OutputFormat::Csv, OutputFormat::Text, OutputFormat::Json],
        }
    }
}

impl ToolConfig {
    /// Applies a parsed config file on top of the current values. Unknown
    /// keys are rejected so typos do not silently fall back to defaults.
    pub fn apply_kv(&mut self, kv: &KvFile) -> Result<(), String> {
        for key in kv.keys() {
            if !KNOWN_KEYS.contains(&key) {
                return Err(format!("unknown config key `{key}`"));
            }
        }
        let f = |key: &str, slot: &mut f64| -> Result<(), String> {
            if let Some(v) = kv.get_f64(key).map_err(|e| e.to_string())? {
                *slot = v;
            }
            Ok(())
        };
        let e = &mut self.pipeline.ekf;
        f("ekf.gyro_noise_density", &mut e.gyro_noise_density)?;
        f("ekf.accel_noise", &mut e.accel_noise)?;
        f("ekf.bias_random_walk", &mut e.bias_random_walk)?;
        f("ekf.gravity_magnitude", &mut e.gravity_magnitude)?;
        f("ekf.accel_gate", &mut e.accel_gate)?;
        f("ekf.innovation_gate", &mut e.innovation_gate)?;
        if let Some(v) = kv.get_u64("ekf.rest_window").map_err(|e| e.to_string())? {
            e.rest_window = v as u32;
        }
        f("ekf.initial_attitude_std", &mut e.initial_attitude_std)?;
        f("ekf.initial_bias_std", &mut e.initial_bias_std)?;

        let p = &mut self.pipeline.peaks;
        f("peaks.min_separation_s", &mut p.min_separation_s)?;
        f("peaks.min_prominence", &mut p.min_prominence)?;
        if let Some(v) = kv
            .get_u64("peaks.smoothing_window")
            .map_err(|e| e.to_string())?
        {
            p.smoothing_window = v as usize;
        }

        f(
            "pipeline.auto_calibration_window_s",
            &mut self.pipeline.auto_calibration_window_s,
        )?;
        if let Some(v) = kv
            .get_bool("pipeline.include_hip")
            .map_err(|e| e.to_string())?
        {
            self.pipeline.include_hip = v;
        }

        let pr = &mut self.profile;
        f("sim.stride_period_s", &mut pr.stride_period_s)?;
        if let Some(v) = kv.get_u64("sim.n_strides").map_err(|e| e.to_string())? {
            pr.n_strides = v as u32;
        }
        f("sim.lead_in_s", &mut pr.lead_in_s)?;
        f("sim.lead_out_s", &mut pr.lead_out_s)?;
        for (name, joint) in [
            ("hip", &mut pr.hip),
            ("knee", &mut pr.knee),
            ("ankle", &mut pr.ankle),
        ] {
            f(
                &format!("sim.{name}.amplitude_deg"),
                &mut joint.amplitude_deg,
            )?;
            f(&format!("sim.{name}.phase_rad"), &mut joint.phase_rad)?;
            f(
                &format!("sim.{name}.second_amplitude_deg"),
                &mut joint.second_amplitude_deg,
            )?;
            f(
                &format!("sim.{name}.second_phase_rad"),
                &mut joint.second_phase_rad,
            )?;
        }
        f("sim.thigh_m", &mut pr.thigh_m)?;
        f("sim.shank_m", &mut pr.shank_m)?;
        f("sim.foot_m", &mut pr.foot_m)?;
        if let Some(v) = kv.get_bool("sim.quasi_static").map_err(|e| e.to_string())? {
            pr.quasi_static = v;
        }

        let n = &mut self.noise;
        f("sim.accel_noise_std", &mut n.accel_noise_std)?;
        f("sim.gyro_noise_std", &mut n.gyro_noise_std)?;
        let bias = kv
            .get_f64_list("sim.gyro_bias")
            .map_err(|e| e.to_string())?;
        match bias.len() {
            0 => {}
            3 => n.gyro_bias = Vec3::new(bias[0], bias[1], bias[2]),
            other => {
                return Err(format!(
                    "sim.gyro_bias needs 3 comma-separated values, got {other}"
                ))
            }
        }
        if let Some(v) = kv.get_u64("sim.seed").map_err(|e| e.to_string())? {
            n.seed = v;
        }
        f("sim.mount_offset_max_deg", &mut self.mount_offset_max_deg)?;
        f("sim.sample_rate_hz", &mut self.sample_rate_hz)?;
        if let Some(v) = kv.get("sim.candidate") {
            self.candidate = v.to_string();
        }
        if let Some(v) = kv.get("sim.shoe.label") {
            self.shoe_label = v.to_string();
        }
        f("sim.shoe.platform_height_in", &mut self.shoe_platform_in)?;
        f("sim.shoe.heel_height_in", &mut self.shoe_heel_in)?;

        if let Some(raw) = kv.get("output.formats") {
            self.formats = parse_formats(raw)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        let e = &self.pipeline.ekf;
        kv.set("ekf.gyro_noise_density", e.gyro_noise_density);
        kv.set("ekf.accel_noise", e.accel_noise);
        kv.set("ekf.bias_random_walk", e.bias_random_walk);
        kv.set("ekf.gravity_magnitude", e.gravity_magnitude);
        kv.set("ekf.accel_gate", e.accel_gate);
        kv.set("ekf.innovation_gate", e.innovation_gate);
        kv.set("ekf.rest_window", e.rest_window);
        kv.set("ekf.initial_attitude_std", e.initial_attitude_std);
        kv.set("ekf.initial_bias_std", e.initial_bias_std);
        let p = &self.pipeline.peaks;
        kv.set("peaks.min_separation_s", p.min_separation_s);
        kv.set("peaks.min_prominence", p.min_prominence);
        kv.set("peaks.smoothing_window", p.smoothing_window);
        kv.set(
            "pipeline.auto_calibration_window_s",
            self.pipeline.auto_calibration_window_s,
        );
        kv.set("pipeline.include_hip", self.pipeline.include_hip);
        let pr = &self.profile;
        kv.set("sim.stride_period_s", pr.stride_period_s);
        kv.set("sim.n_strides", pr.n_strides);
        kv.set("sim.lead_in_s", pr.lead_in_s);
        kv.set("sim.lead_out_s", pr.lead_out_s);
        for (name, joint) in [("hip", &pr.hip), ("knee", &pr.knee), ("ankle", &pr.ankle)] {
            kv.set(&format!("sim.{name}.amplitude_deg"), joint.amplitude_deg);
            kv.set(&format!("sim.{name}.phase_rad"), joint.phase_rad);
            kv.set(
                &format!("sim.{name}.second_amplitude_deg"),
                joint.second_amplitude_deg,
            );
            kv.set(
                &format!("sim.{name}.second_phase_rad"),
                joint.second_phase_rad,
            );
        }
        kv.set("sim.thigh_m", pr.thigh_m);
        kv.set("sim.shank_m", pr.shank_m);
        kv.set("sim.foot_m", pr.foot_m);
        kv.set("sim.quasi_static", pr.quasi_static);
        let n = &self.noise;
        kv.set("sim.accel_noise_std", n.accel_noise_std);
        kv.set("sim.gyro_noise_std", n.gyro_noise_std);
        kv.set(
            "sim.gyro_bias",
            format!("{},{},{}", n.gyro_bias.x, n.gyro_bias.y, n.gyro_bias.z),
        );
        kv.set("sim.seed", n.seed);
        kv.set("sim.mount_offset_max_deg", self.mount_offset_max_deg);
        kv.set("sim.sample_rate_hz", self.sample_rate_hz);
        kv.set("sim.candidate", &self.candidate);
        kv.set("sim.shoe.label", &self.shoe_label);
        kv.set("sim.shoe.platform_height_in", self.shoe_platform_in);
        kv.set("sim.shoe.heel_height_in", self.shoe_heel_in);
        let formats: Vec<&str> = self.formats.iter().map(|f| f.as_str()).collect();
        kv.set("output.formats", formats.join(","));
        kv
    }
}

pub fn parse_formats(raw: &str) -> Result<Vec<OutputFormat>, String> {
    let mut formats = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let f = OutputFormat::parse(part)?;
        if !formats.contains(&f) {
            formats.push(f);
        }
    }
    if formats.is_empty() {
        return Err("at least one output format is required".to_string());
    }
    Ok(formats)
}

const KNOWN_KEYS: [&str; 45] = [
    "output.formats",
    "ekf.gyro_noise_density",
    "ekf.innovation_gate",
    "ekf.rest_window",
    "ekf.accel_noise",
    "ekf.bias_random_walk",
    "ekf.gravity_magnitude",
    "ekf.accel_gate",
    "ekf.initial_attitude_std",
    "ekf.initial_bias_std",
    "peaks.min_separation_s",
    "peaks.min_prominence",
    "peaks.smoothing_window",
    "pipeline.auto_calibration_window_s",
    "pipeline.include_hip",
    "sim.stride_period_s",
    "sim.n_strides",
    "sim.lead_in_s",
    "sim.lead_out_s",
    "sim.hip.amplitude_deg",
    "sim.hip.phase_rad",
    "sim.hip.second_amplitude_deg",
    "sim.hip.second_phase_rad",
    "sim.knee.amplitude_deg",
    "sim.knee.phase_rad",
    "sim.knee.second_amplitude_deg",
    "sim.knee.second_phase_rad",
    "sim.ankle.amplitude_deg",
    "sim.ankle.phase_rad",
    "sim.ankle.second_amplitude_deg",
    "sim.ankle.second_phase_rad",
    "sim.thigh_m",
    "sim.shank_m",
    "sim.foot_m",
    "sim.quasi_static",
    "sim.accel_noise_std",
    "sim.gyro_noise_std",
    "sim.gyro_bias",
    "sim.seed",
    "sim.mount_offset_max_deg",
    "sim.sample_rate_hz",
    "sim.candidate",
    "sim.shoe.label",
    "sim.shoe.platform_height_in",
    "sim.shoe.heel_height_in",
];
