//! Add-drop microring resonators and the dual-ring waveshaper unit.
//!
//! Rings use the symmetric two-coupler scattering-matrix model with
//! self-coupling `t_c = sqrt(1 - kappa^2)` and round-trip amplitude `a`.
//! Only the resonance nearest the channel is modelled; the round-trip
//! phase is referenced to zero at the (possibly detuned) resonance.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FrequencyLattice, SPEED_OF_LIGHT};
use crate::operator::ModeOperator;

/// Default detuning for PASS units, in ring linewidths.
pub const PASS_DETUNING_LINEWIDTHS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingParams {
    #[serde(rename = "resonance_wavelength_m")]
    pub resonance_wavelength: f64,
    /// Power coupling per coupler.
    pub power_coupling: f64,
    /// Round-trip field amplitude factor.
    pub round_trip_loss: f64,
    #[serde(rename = "radius_m")]
    pub radius: f64,
    pub effective_index: f64,
}

impl RingParams {
    /// Derives the round-trip amplitude from a propagation loss in dB/cm over the circumference.
    pub fn from_propagation_loss(
        resonance_wavelength: f64,
        power_coupling: f64,
        loss_db_per_cm: f64,
        radius: f64,
        effective_index: f64,
    ) -> Result<Self> {
        let circumference_cm = 2.0 * PI * radius * 100.0;
        let a = 10f64.powf(-loss_db_per_cm * circumference_cm / 20.0);
        let ring = RingParams {
            resonance_wavelength,
            power_coupling,
            round_trip_loss: a,
            radius,
            effective_index,
        };
        ring.validate()?;
        Ok(ring)
    }

    /// Waveshaper rings of the reference device: kappa^2 = 0.023, 1.2 dB/cm, R = 50 um, n_eff = 2.8.
    pub fn reference_waveshaper(resonance_wavelength: f64) -> Self {
        Self::from_propagation_loss(resonance_wavelength, 0.023, 1.2, 50e-6, 2.8)
            .expect("reference ring parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_coupling > 0.0 && self.power_coupling < 1.0) {
            return Err(Error::invalid(format!(
                "power coupling must lie in (0, 1), got {}",
                self.power_coupling
            )));
        }
        if !(self.round_trip_loss > 0.0 && self.round_trip_loss <= 1.0) {
            return Err(Error::invalid(format!(
                "round-trip amplitude must lie in (0, 1], got {}",
                self.round_trip_loss
            )));
        }
        if !(self.radius > 0.0 && self.effective_index > 0.0 && self.resonance_wavelength > 0.0) {
            return Err(Error::invalid(
                "radius, effective index and wavelength must be positive",
            ));
        }
        Ok(())
    }

    pub fn circumference(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn self_coupling(&self) -> f64 {
        (1.0 - self.power_coupling).sqrt()
    }

    fn optical_length(&self) -> f64 {
        self.effective_index * self.circumference()
    }

    /// Round-trip phase at `probe`, zero when `probe` equals `resonance`.
    pub fn round_trip_phase(&self, probe: f64, resonance: f64) -> f64 {
        2.0 * PI * self.optical_length() * (1.0 / probe - 1.0 / resonance)
    }

    fn denominator(&self, phi: f64) -> Complex64 {
        let tc = self.self_coupling();
        Complex64::new(1.0, 0.0) - tc * tc * self.round_trip_loss * Complex64::cis(phi)
    }

    /// Through-port amplitude with the resonance shifted by `detuning`.
    pub fn through_detuned(&self, probe: f64, detuning: f64) -> Complex64 {
        let phi = self.round_trip_phase(probe, self.resonance_wavelength + detuning);
        let tc = self.self_coupling();
        (tc - tc * self.round_trip_loss * Complex64::cis(phi)) / self.denominator(phi)
    }

    /// Drop-port amplitude with the resonance shifted by `detuning`.
    pub fn drop_detuned(&self, probe: f64, detuning: f64) -> Complex64 {
        let phi = self.round_trip_phase(probe, self.resonance_wavelength + detuning);
        -self.power_coupling * self.round_trip_loss.sqrt() * Complex64::cis(phi / 2.0)
            / self.denominator(phi)
    }

    /// Through and drop amplitudes together, sharing one resonance denominator.
    pub fn ports_detuned(&self, probe: f64, detuning: f64) -> (Complex64, Complex64) {
        let phi = self.round_trip_phase(probe, self.resonance_wavelength + detuning);
        let tc = self.self_coupling();
        let half = Complex64::cis(phi / 2.0);
        let e = half * half;
        let inv = 1.0 / (Complex64::new(1.0, 0.0) - tc * tc * self.round_trip_loss * e);
        let t = (tc - tc * self.round_trip_loss * e) * inv;
        let d = -self.power_coupling * self.round_trip_loss.sqrt() * half * inv;
        (t, d)
    }

    /// Full width at half maximum of the drop resonance, in metres.
    pub fn linewidth(&self) -> f64 {
        let tc = self.self_coupling();
        let x = tc * tc * self.round_trip_loss;
        // |1 - x e^{i phi}|^2 = 2 (1 - x)^2 at the half-power points.
        let cos_half = (1.0 + x * x - 2.0 * (1.0 - x).powi(2)) / (2.0 * x);
        let fwhm_phase = 2.0 * cos_half.clamp(-1.0, 1.0).acos();
        let lambda = self.resonance_wavelength;
        fwhm_phase * lambda * lambda / (2.0 * PI * self.optical_length())
    }

    /// Loaded quality factor `lambda / FWHM`.
    pub fn loaded_q(&self) -> f64 {
        self.resonance_wavelength / self.linewidth()
    }
}

pub fn ring_through(probe_wavelength: f64, ring: &RingParams) -> Complex64 {
    ring.through_detuned(probe_wavelength, 0.0)
}

pub fn ring_drop(probe_wavelength: f64, ring: &RingParams) -> Complex64 {
    ring.drop_detuned(probe_wavelength, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WsMode {
    Phase,
    Pass,
    Stop,
}

/// One DEMUX-ring / phase / MUX-ring unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsUnitConfig {
    #[serde(rename = "channel_wavelength_m")]
    pub channel_wavelength: f64,
    pub demux: RingParams,
    pub mux: RingParams,
    #[serde(rename = "channel_phase_rad")]
    pub channel_phase: f64,
    pub mode: WsMode,
    #[serde(rename = "detuning_demux_m")]
    pub detuning_demux: f64,
    #[serde(rename = "detuning_mux_m")]
    pub detuning_mux: f64,
}

impl WsUnitConfig {
    fn aligned(ring: RingParams, channel_wavelength: f64, mode: WsMode, phase: f64) -> Self {
        let ring = RingParams {
            resonance_wavelength: channel_wavelength,
            ..ring
        };
        WsUnitConfig {
            channel_wavelength,
            demux: ring,
            mux: ring,
            channel_phase: phase,
            mode,
            detuning_demux: 0.0,
            detuning_mux: 0.0,
        }
    }

    /// Both rings on the channel, dropped light phase-shifted by `phase`.
    pub fn phase(ring: RingParams, channel_wavelength: f64, phase: f64) -> Self {
        Self::aligned(ring, channel_wavelength, WsMode::Phase, phase)
    }

    /// Both rings parked `PASS_DETUNING_LINEWIDTHS` away from the channel.
    pub fn pass(ring: RingParams, channel_wavelength: f64) -> Self {
        let mut u = Self::aligned(ring, channel_wavelength, WsMode::Pass, 0.0);
        let off = PASS_DETUNING_LINEWIDTHS * u.demux.linewidth();
        u.detuning_demux = off;
        u.detuning_mux = off;
        u
    }

    /// DEMUX ring on the channel, dropped light absorbed; MUX ring parked.
    pub fn stop(ring: RingParams, channel_wavelength: f64) -> Self {
        let mut u = Self::aligned(ring, channel_wavelength, WsMode::Stop, 0.0);
        u.detuning_mux = PASS_DETUNING_LINEWIDTHS * u.mux.linewidth();
        u
    }

    pub fn with_detunings(mut self, demux: f64, mux: f64) -> Self {
        self.detuning_demux = demux;
        self.detuning_mux = mux;
        self
    }

    pub fn linewidth(&self) -> f64 {
        self.demux.linewidth()
    }
}

/// Bus-to-bus amplitude of one unit: bus path plus drop-phase-add path.
pub fn ws_unit_response(probe_wavelength: f64, unit: &WsUnitConfig) -> Complex64 {
    ws_unit_response_detuned(
        probe_wavelength,
        unit,
        unit.detuning_demux,
        unit.detuning_mux,
    )
}

/// As [`ws_unit_response`] with explicit instantaneous ring detunings.
pub fn ws_unit_response_detuned(
    probe: f64,
    unit: &WsUnitConfig,
    detuning_demux: f64,
    detuning_mux: f64,
) -> Complex64 {
    let (t_d, d_d) = unit.demux.ports_detuned(probe, detuning_demux);
    let (t_m, d_m) = unit.mux.ports_detuned(probe, detuning_mux);
    let bus = t_m * t_d;
    if unit.mode == WsMode::Stop {
        return bus;
    }
    bus + d_m * Complex64::cis(unit.channel_phase) * d_d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WsModel {
    /// Lossless phase-only abstraction.
    Ideal,
    /// Ring responses sampled at each bin centre.
    Physical,
}

/// What the IDEAL model applies to bins without a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutsidePolicy {
    /// Unit transmission.
    #[default]
    Unshaped,
    /// Bins below (above) the channel block continue the phase slope of the two
    /// lowest (highest) channels; a flat edge pair therefore holds its phase.
    Extend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsChannel {
    pub bin: i64,
    pub unit: WsUnitConfig,
}

/// Maps each unit to the lattice bin nearest its channel wavelength.
pub fn assign_channels(
    units: &[WsUnitConfig],
    lattice: &FrequencyLattice,
) -> Result<Vec<WsChannel>> {
    units
        .iter()
        .map(|u| {
            let f = SPEED_OF_LIGHT / u.channel_wavelength;
            lattice
                .nearest_bin(f, 0.05)
                .map(|bin| WsChannel { bin, unit: *u })
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "channel at {} m does not sit on a lattice bin",
                        u.channel_wavelength
                    ))
                })
        })
        .collect()
}

fn ideal_factor(unit: &WsUnitConfig) -> Complex64 {
    match unit.mode {
        WsMode::Phase => Complex64::cis(unit.channel_phase),
        WsMode::Pass => Complex64::new(1.0, 0.0),
        WsMode::Stop => Complex64::new(0.0, 0.0),
    }
}

fn phase_only(unit: &WsUnitConfig) -> f64 {
    match unit.mode {
        WsMode::Phase => unit.channel_phase,
        _ => 0.0,
    }
}

/// Phase at `bin` on the line through the edge channel and its inner neighbour.
fn extrapolated_phase(edge: &WsChannel, inner: Option<&WsChannel>, bin: i64) -> f64 {
    let slope = inner.map_or(0.0, |i| {
        (phase_only(&i.unit) - phase_only(&edge.unit)) / (i.bin - edge.bin) as f64
    });
    phase_only(&edge.unit) + slope * (bin - edge.bin) as f64
}

/// Diagonal waveshaper operator.
pub fn ws_operator(
    channels: &[WsChannel],
    lattice: &FrequencyLattice,
    model: WsModel,
    outside: OutsidePolicy,
) -> Result<ModeOperator> {
    let mut sorted: Vec<&WsChannel> = channels.iter().collect();
    sorted.sort_by_key(|c| c.bin);
    for w in sorted.windows(2) {
        if w[0].bin == w[1].bin {
            return Err(Error::invalid(format!(
                "two channels map to bin {}",
                w[0].bin
            )));
        }
    }
    if let Some(c) = sorted.iter().find(|c| !lattice.contains(c.bin)) {
        return Err(Error::invalid(format!(
            "channel bin {} outside the lattice window",
            c.bin
        )));
    }

    let diag: Vec<Complex64> = match model {
        WsModel::Ideal => lattice
            .bins()
            .map(|b| {
                if let Some(c) = sorted.iter().find(|c| c.bin == b) {
                    return ideal_factor(&c.unit);
                }
                let n = sorted.len();
                match outside {
                    OutsidePolicy::Extend if n > 0 && b < sorted[0].bin => {
                        Complex64::cis(extrapolated_phase(sorted[0], sorted.get(1).copied(), b))
                    }
                    OutsidePolicy::Extend if n > 0 && b > sorted[n - 1].bin => {
                        let inner = if n > 1 { Some(sorted[n - 2]) } else { None };
                        Complex64::cis(extrapolated_phase(sorted[n - 1], inner, b))
                    }
                    _ => Complex64::new(1.0, 0.0),
                }
            })
            .collect(),
        WsModel::Physical => lattice
            .bins()
            .map(|b| {
                let probe = lattice.bin_wavelength(b);
                sorted
                    .iter()
                    .map(|c| ws_unit_response(probe, &c.unit))
                    .product()
            })
            .collect(),
    };
    let label = match model {
        WsModel::Ideal => "ws-ideal",
        WsModel::Physical => "ws-physical",
    };
    ModeOperator::diagonal(*lattice, &diag, label)
}

/// Asymmetric-MZI pump filter used to shape the comb envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpFilter {
    #[serde(rename = "fsr_hz")]
    pub fsr: f64,
    #[serde(rename = "extinction_db")]
    pub extinction: f64,
    #[serde(rename = "phase_offset_rad")]
    pub phase_offset: f64,
}

impl PumpFilter {
    /// 500 GHz FSR, 30 dB extinction, null on the pump.
    pub fn reference() -> Self {
        PumpFilter {
            fsr: 500e9,
            extinction: 30.0,
            phase_offset: 0.0,
        }
    }

    pub fn transmission(&self, probe_frequency: f64) -> Result<f64> {
        mzi_pump_filter(
            probe_frequency,
            self.fsr,
            self.extinction,
            self.phase_offset,
        )
    }
}

/// `floor + (1 - floor) sin^2(pi nu / fsr + offset)` with `floor = 10^(-extinction/10)`;
/// `probe_frequency` is measured from the pump.
pub fn mzi_pump_filter(
    probe_frequency: f64,
    fsr: f64,
    extinction: f64,
    phase_offset: f64,
) -> Result<f64> {
    if !(fsr > 0.0) {
        return Err(Error::invalid(format!(
            "filter FSR must be positive, got {fsr}"
        )));
    }
    if !(extinction > 0.0) {
        return Err(Error::invalid(format!(
            "filter extinction must be positive, got {extinction}"
        )));
    }
    let floor = 10f64.powf(-extinction / 10.0);
    let s = (PI * probe_frequency / fsr + phase_offset).sin();
    Ok(floor + (1.0 - floor) * s * s)
}
