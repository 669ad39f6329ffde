//! Run configuration. Every physical quantity carries its unit in the field name.

use std::f64::consts::PI;
use std::path::PathBuf;

use qfp_core::biphoton::ANTICORRELATED_PATTERN;
use qfp_core::rings::PumpFilter;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Beamsplitter,
    Gate,
    Spectrum,
    Qwalk,
    Tomography,
    Calibrate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Beamsplitter => "beamsplitter",
            ExperimentKind::Gate => "gate",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Qwalk => "qwalk",
            ExperimentKind::Tomography => "tomography",
            ExperimentKind::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Replace sampled counts by their means.
    #[serde(default)]
    pub expected_value: bool,
    #[serde(default)]
    pub device: DeviceConstants,
    #[serde(default)]
    pub beamsplitter: BeamsplitterSweep,
    #[serde(default)]
    pub gate: GateRequest,
    #[serde(default)]
    pub spectrum: SpectrumRequest,
    #[serde(default)]
    pub qwalk: QwalkRequest,
    #[serde(default)]
    pub tomography: TomographyRequest,
    #[serde(default)]
    pub calibrate: CalibrateRequest,
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConstants {
    pub center_frequency_hz: f64,
    pub bin_spacing_hz: f64,
    pub source_spacing_hz: f64,
    pub modulation_depth_rad: f64,
    /// Bins on each side of bin 0; `null` sizes the window from the modulation depth.
    pub window_half_width: Option<usize>,
    pub ring: RingConstants,
    pub pump_filter: PumpFilter,
    pub dither: DitherConstants,
    /// Coincidence-to-accidental ratio; `null` disables accidentals.
    pub car: Option<f64>,
}

impl Default for DeviceConstants {
    fn default() -> Self {
        DeviceConstants {
            center_frequency_hz: 193.7e12,
            bin_spacing_hz: 13.25e9,
            source_spacing_hz: 15.34e9,
            modulation_depth_rad: 0.8169,
            window_half_width: None,
            ring: RingConstants::default(),
            pump_filter: PumpFilter::reference(),
            dither: DitherConstants::default(),
            car: Some(55.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingConstants {
    pub power_coupling: f64,
    pub loss_db_per_cm: f64,
    pub radius_m: f64,
    pub effective_index: f64,
}

impl Default for RingConstants {
    fn default() -> Self {
        RingConstants {
            power_coupling: 0.023,
            loss_db_per_cm: 1.2,
            radius_m: 50e-6,
            effective_index: 2.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DitherConstants {
    pub f_demux_hz: f64,
    pub f_mux_hz: f64,
    pub amplitude_linewidths: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for DitherConstants {
    fn default() -> Self {
        DitherConstants {
            f_demux_hz: 150.0,
            f_mux_hz: 250.0,
            amplitude_linewidths: 0.15,
            duration_s: 0.2,
            sample_rate_hz: 51_200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamsplitterSweep {
    pub alpha_start_rad: f64,
    pub alpha_stop_rad: f64,
    pub points: usize,
}

impl Default for BeamsplitterSweep {
    fn default() -> Self {
        BeamsplitterSweep {
            alpha_start_rad: PI,
            alpha_stop_rad: 2.0 * PI,
            points: 33,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub name: String,
    pub theta_rad: f64,
    pub lambda_rad: f64,
    pub mu_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateRequest {
    pub gates: Vec<GateSpec>,
}

impl Default for GateRequest {
    fn default() -> Self {
        let g = |name: &str, theta_rad, lambda_rad| GateSpec {
            name: name.into(),
            theta_rad,
            lambda_rad,
            mu_rad: 0.0,
        };
        GateRequest {
            gates: vec![
                g("hadamard_like", 0.5 * PI, 0.0),
                g("ry_rz", 0.5 * PI, 0.5 * PI),
                g("identity", 0.0, 0.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumRequest {
    pub alpha_rad: f64,
    pub gammas_rad: Vec<f64>,
}

impl Default for SpectrumRequest {
    fn default() -> Self {
        SpectrumRequest {
            alpha_rad: PI,
            gammas_rad: vec![0.0, 0.5 * PI, PI, 1.5 * PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QwalkRequest {
    pub delta_rad: f64,
    pub n_bins: usize,
    pub first_bin_offset_hz: f64,
    pub anticorrelated_pattern_rad: [f64; 4],
    /// Source phases are drawn uniformly in `+-planted_jitter_rad` (bin 0 fixed at 0).
    pub planted_jitter_rad: f64,
    pub total_pairs: u64,
    pub retrieval_restarts: usize,
}

impl Default for QwalkRequest {
    fn default() -> Self {
        QwalkRequest {
            delta_rad: 0.8,
            n_bins: 6,
            first_bin_offset_hz: 750e9,
            anticorrelated_pattern_rad: ANTICORRELATED_PATTERN,
            planted_jitter_rad: 0.1,
            total_pairs: 20_000,
            retrieval_restarts: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceEnvelope {
    /// Magnitudes from the pump filter.
    PumpFilter,
    /// Equal magnitudes.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyRequest {
    pub source: SourceEnvelope,
    /// Guard-band suppression; `null` for perfect guards.
    pub suppression_db: Option<f64>,
    pub shots_per_setting: f64,
    pub delta_meas_rad: f64,
    pub fringe_points: usize,
    pub fringe_pairs_per_point: f64,
    pub mle_restarts: usize,
}

impl Default for TomographyRequest {
    fn default() -> Self {
        TomographyRequest {
            source: SourceEnvelope::PumpFilter,
            suppression_db: Some(13.5),
            shots_per_setting: 5000.0,
            delta_meas_rad: 0.8169,
            fringe_points: 24,
            fringe_pairs_per_point: 4000.0,
            mle_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateRequest {
    pub channel_phase_rad: f64,
    pub planted_demux_linewidths: f64,
    pub planted_mux_linewidths: f64,
    pub half_span_linewidths: f64,
    pub steps_per_side: usize,
    pub power_2pi_w: f64,
    pub heater_offset_rad: f64,
    pub max_power_w: f64,
    pub power_points: usize,
    /// Photodiode noise standard deviation; `null` for noiseless traces.
    pub trace_noise: Option<f64>,
}

impl Default for CalibrateRequest {
    fn default() -> Self {
        CalibrateRequest {
            channel_phase_rad: 0.7,
            planted_demux_linewidths: 0.4,
            planted_mux_linewidths: -0.3,
            half_span_linewidths: 2.0,
            steps_per_side: 20,
            power_2pi_w: 0.032,
            heater_offset_rad: 0.8,
            max_power_w: 0.04,
            power_points: 20,
            trace_noise: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    /// Used when `--out` is not given.
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            seed: 0,
            expected_value: false,
            device: DeviceConstants::default(),
            beamsplitter: BeamsplitterSweep::default(),
            gate: GateRequest::default(),
            spectrum: SpectrumRequest::default(),
            qwalk: QwalkRequest::default(),
            tomography: TomographyRequest::default(),
            calibrate: CalibrateRequest::default(),
            output: OutputPaths::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let d = &self.device;
        for (name, v) in [
            ("device.center_frequency_hz", d.center_frequency_hz),
            ("device.bin_spacing_hz", d.bin_spacing_hz),
            ("device.source_spacing_hz", d.source_spacing_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(d.modulation_depth_rad >= 0.0) {
            return bad(format!(
                "device.modulation_depth_rad must be >= 0, got {}",
                d.modulation_depth_rad
            ));
        }
        if let Some(car) = d.car {
            if !(car > 0.0) {
                return bad(format!("device.car must be positive, got {car}"));
            }
        }
        if self.beamsplitter.points == 0 {
            return bad("beamsplitter.points must be at least 1".into());
        }
        if self.qwalk.n_bins < 6 {
            return bad(format!(
                "qwalk.n_bins must be at least 6, got {}",
                self.qwalk.n_bins
            ));
        }
        if self.qwalk.total_pairs == 0 {
            return bad("qwalk.total_pairs must be positive".into());
        }
        if let Some(s) = self.tomography.suppression_db {
            if !(s > 0.0) {
                return bad(format!(
                    "tomography.suppression_db must be positive, got {s}"
                ));
            }
        }
        if !(self.tomography.shots_per_setting > 0.0
            && self.tomography.fringe_pairs_per_point > 0.0)
        {
            return bad("tomography shot counts must be positive".into());
        }
        if self.calibrate.power_points < 8 {
            return bad("calibrate.power_points must be at least 8".into());
        }
        Ok(())
    }
}
