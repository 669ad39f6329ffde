//! Dither-tone calibration of a waveshaper unit.
//!
//! Each ring's resonance is modulated as `lambda(t) = lambda_bar + Lambda sin(Omega t)`.
//! The bus intensity at the channel wavelength then carries a harmonic at
//! `2(Omega_D + Omega_M)` that peaks when both rings sit on the channel, and a
//! difference tone at `Omega_M - Omega_D` whose real part follows the channel phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::levenberg_marquardt;
use crate::rings::{ws_unit_response_detuned, WsUnitConfig};

/// Additive white noise on simulated photodiode traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceNoise {
    pub std_dev: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitherConfig {
    #[serde(rename = "amplitude_m")]
    pub amplitude: f64,
    #[serde(rename = "f_demux_hz")]
    pub f_demux: f64,
    #[serde(rename = "f_mux_hz")]
    pub f_mux: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    #[serde(rename = "sample_rate_hz")]
    pub sample_rate: f64,
    #[serde(default)]
    pub noise: Option<TraceNoise>,
}

/// Default dither amplitude in ring linewidths.
pub const DEFAULT_DITHER_LINEWIDTHS: f64 = 0.15;

impl DitherConfig {
    /// 150/250 Hz tones, 0.2 s at 51.2 kHz, amplitude `DEFAULT_DITHER_LINEWIDTHS` of `linewidth`.
    pub fn reference(linewidth: f64) -> Self {
        DitherConfig {
            amplitude: DEFAULT_DITHER_LINEWIDTHS * linewidth,
            f_demux: 150.0,
            f_mux: 250.0,
            duration: 0.2,
            sample_rate: 51_200.0,
            noise: None,
        }
    }

    /// Harmonic that peaks at alignment.
    pub fn alignment_frequency(&self) -> f64 {
        2.0 * (self.f_demux + self.f_mux)
    }

    /// Difference tone used for phase calibration.
    pub fn phase_frequency(&self) -> f64 {
        (self.f_mux - self.f_demux).abs()
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) {
            return Err(Error::invalid("dither amplitude must be >= 0"));
        }
        if !(self.f_demux > 0.0 && self.f_mux > 0.0) || self.f_demux == self.f_mux {
            return Err(Error::invalid("dither tones must be positive and distinct"));
        }
        if !(self.duration > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::invalid("duration and sample rate must be positive"));
        }
        if self.sample_rate < 16.0 * self.alignment_frequency() {
            return Err(Error::invalid(format!(
                "sample rate {} Hz is below 16 x {} Hz",
                self.sample_rate,
                self.alignment_frequency()
            )));
        }
        if !is_integer(self.duration * self.sample_rate) {
            return Err(Error::invalid(
                "duration must hold a whole number of samples",
            ));
        }
        for f in [
            self.f_demux,
            self.f_mux,
            self.alignment_frequency(),
            self.phase_frequency(),
        ] {
            if !is_integer(f * self.duration) {
                return Err(Error::invalid(format!(
                    "tone {f} Hz does not complete a whole number of periods in {} s",
                    self.duration
                )));
            }
        }
        if let Some(n) = self.noise {
            if !(n.std_dev >= 0.0) {
                return Err(Error::invalid("noise standard deviation must be >= 0"));
            }
        }
        Ok(())
    }
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0)
}

/// Bus intensity at `probe_wavelength` while both rings are dithered.
pub fn simulate_dither_trace(
    unit: &WsUnitConfig,
    dither: &DitherConfig,
    probe_wavelength: f64,
) -> Result<Vec<f64>> {
    dither.validate()?;
    trace_from_offsets(unit, dither, &DitherOffsets::new(dither), probe_wavelength)
}

/// Per-sample dither excursions, shared across the points of a scan.
struct DitherOffsets {
    demux: Vec<f64>,
    mux: Vec<f64>,
}

impl DitherOffsets {
    fn new(dither: &DitherConfig) -> Self {
        let n = dither.samples();
        let tone = |f: f64| -> Vec<f64> {
            (0..n)
                .map(|k| dither.amplitude * (2.0 * PI * f * k as f64 / dither.sample_rate).sin())
                .collect()
        };
        DitherOffsets {
            demux: tone(dither.f_demux),
            mux: tone(dither.f_mux),
        }
    }
}

fn trace_from_offsets(
    unit: &WsUnitConfig,
    dither: &DitherConfig,
    offsets: &DitherOffsets,
    probe_wavelength: f64,
) -> Result<Vec<f64>> {
    let mut trace: Vec<f64> = offsets
        .demux
        .iter()
        .zip(&offsets.mux)
        .map(|(od, om)| {
            ws_unit_response_detuned(
                probe_wavelength,
                unit,
                unit.detuning_demux + od,
                unit.detuning_mux + om,
            )
            .norm_sqr()
        })
        .collect();
    if let Some(noise) = dither.noise.filter(|n| n.std_dev > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let normal = Normal::new(0.0, noise.std_dev).map_err(|e| Error::invalid(e.to_string()))?;
        for v in &mut trace {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(trace)
}

/// `(2/N) sum_k I_k exp(-2 pi i f k / fs)`; `f` must fall on a DFT bin.
pub fn harmonic_component(trace: &[f64], frequency: f64, sample_rate: f64) -> Result<Complex64> {
    let table = Twiddles::new(trace.len(), frequency, sample_rate)?;
    Ok(table.project(trace))
}

/// `exp(-2 pi i bin k / N)` for one DFT bin.
struct Twiddles(Vec<Complex64>);

impl Twiddles {
    fn new(n: usize, frequency: f64, sample_rate: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty trace"));
        }
        let cycles = frequency * n as f64 / sample_rate;
        if !is_integer(cycles) {
            return Err(Error::invalid(format!(
                "{frequency} Hz is not a DFT bin of a {n}-sample window at {sample_rate} Hz"
            )));
        }
        let bin = cycles.round() as i64;
        let n_i = n as i64;
        // Exact phase index avoids accumulated rounding in the exponent.
        Ok(Twiddles(
            (0..n)
                .map(|k| {
                    let idx = (bin * k as i64).rem_euclid(n_i) as f64;
                    Complex64::cis(-2.0 * PI * idx / n as f64)
                })
                .collect(),
        ))
    }

    fn project(&self, trace: &[f64]) -> Complex64 {
        let sum: Complex64 = trace.iter().zip(&self.0).map(|(v, w)| v * w).sum();
        sum * (2.0 / trace.len() as f64)
    }
}

/// Rectangular grid of applied ring detunings (metres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    #[serde(rename = "demux_m")]
    pub demux: Vec<f64>,
    #[serde(rename = "mux_m")]
    pub mux: Vec<f64>,
}

impl ScanGrid {
    /// `center +- half_span` in both axes with `2 * steps_per_side + 1` points each.
    pub fn square(center: (f64, f64), half_span: f64, steps_per_side: usize) -> Self {
        let axis = |c: f64| -> Vec<f64> {
            let s = steps_per_side as i64;
            (-s..=s)
                .map(|i| c + half_span * i as f64 / steps_per_side.max(1) as f64)
                .collect()
        };
        ScanGrid {
            demux: axis(center.0),
            mux: axis(center.1),
        }
    }

    pub fn len(&self) -> usize {
        self.demux.len() * self.mux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub demux: f64,
    pub mux: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub best_demux: f64,
    pub best_mux: f64,
    pub best_amplitude: f64,
    /// Row-major over (demux, mux).
    pub map: Vec<ScanPoint>,
}

/// Scan maps whose largest harmonic is below this are reported as degenerate.
pub const DEGENERATE_AMPLITUDE: f64 = 1e-12;

/// Grid search for the applied detunings maximizing `|I(2(Omega_D + Omega_M))|`.
pub fn align_scan(
    template: &WsUnitConfig,
    grid: &ScanGrid,
    dither: &DitherConfig,
) -> Result<AlignmentResult> {
    if grid.is_empty() {
        return Err(Error::invalid("alignment grid is empty"));
    }
    dither.validate()?;
    let lw = template.linewidth();
    for (axis, name) in [(&grid.demux, "demux"), (&grid.mux, "mux")] {
        let lo = axis.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = axis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 4.0 * lw * (1.0 - 1e-9) {
            return Err(Error::invalid(format!(
                "{name} axis spans {:.3} linewidths; at least +-2 linewidths are needed",
                (hi - lo) / lw
            )));
        }
    }
    let f = dither.alignment_frequency();
    let points: Vec<(f64, f64)> = grid
        .demux
        .iter()
        .flat_map(|&d| grid.mux.iter().map(move |&m| (d, m)))
        .collect();
    let offsets = DitherOffsets::new(dither);
    let twiddles = Twiddles::new(dither.samples(), f, dither.sample_rate)?;
    let map: Vec<ScanPoint> = points
        .par_iter()
        .map(|&(d, m)| {
            let unit = template.with_detunings(d, m);
            let trace = trace_from_offsets(&unit, dither, &offsets, template.channel_wavelength)?;
            let amplitude = twiddles.project(&trace).norm();
            Ok(ScanPoint {
                demux: d,
                mux: m,
                amplitude,
            })
        })
        .collect::<Result<_>>()?;
    // First maximum in grid order, so ties resolve deterministically.
    let best = map.iter().fold(
        map[0],
        |b, p| if p.amplitude > b.amplitude { *p } else { b },
    );
    if best.amplitude < DEGENERATE_AMPLITUDE {
        return Err(Error::DegenerateScan {
            max_amplitude: best.amplitude,
        });
    }
    Ok(AlignmentResult {
        best_demux: best.demux,
        best_mux: best.mux,
        best_amplitude: best.amplitude,
        map,
    })
}

/// Fitted heater-power to phase law `Re I(Omega_M - Omega_D) = I0 cos(2 pi P / P_2pi + Phi0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCalibration {
    #[serde(rename = "power_2pi_w")]
    pub power_2pi: f64,
    #[serde(rename = "phase_offset_rad")]
    pub phase_offset: f64,
    pub amplitude: f64,
    /// Order: power_2pi, phase_offset, amplitude.
    pub covariance: [[f64; 3]; 3],
    pub residual_rms: f64,
    pub r_squared: f64,
}

/// Wraps to `[-pi, pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// `Phi0 + 2 pi P / P_2pi`, wrapped to `[-pi, pi)`.
pub fn phase_from_power(cal: &PhaseCalibration, power: f64) -> f64 {
    wrap_phase(cal.phase_offset + 2.0 * PI * power / cal.power_2pi)
}

/// Phase `c` of the unit's own response in `Re I(Omega_M - Omega_D) ~ cos(Phi + c)`.
///
/// The fitted `Phi0` of [`fit_phase_curve`] is the heater offset plus this term,
/// so subtracting it gives the channel phase at zero heater power.
pub fn intrinsic_offset(template: &WsUnitConfig, dither: &DitherConfig) -> Result<f64> {
    let value = |phase: f64| -> Result<f64> {
        let unit = WsUnitConfig {
            channel_phase: phase,
            ..*template
        };
        let noiseless = DitherConfig {
            noise: None,
            ..*dither
        };
        let trace = simulate_dither_trace(&unit, &noiseless, template.channel_wavelength)?;
        Ok(harmonic_component(&trace, dither.phase_frequency(), dither.sample_rate)?.re)
    };
    let (c0, c1) = (value(0.0)?, value(0.5 * PI)?);
    if c0 == 0.0 && c1 == 0.0 {
        return Err(Error::DegenerateScan { max_amplitude: 0.0 });
    }
    Ok((-c1).atan2(c0))
}

/// Fits the cosine law to the difference-tone real parts of `traces`.
pub fn fit_phase_curve(
    powers: &[f64],
    traces: &[Vec<f64>],
    dither: &DitherConfig,
) -> Result<PhaseCalibration> {
    if powers.len() != traces.len() {
        return Err(Error::invalid(format!(
            "{} powers but {} traces",
            powers.len(),
            traces.len()
        )));
    }
    let values = traces
        .iter()
        .map(|t| harmonic_component(t, dither.phase_frequency(), dither.sample_rate).map(|c| c.re))
        .collect::<Result<Vec<_>>>()?;
    fit_cosine_law(powers, &values)
}

/// Least-squares fit of `y = I0 cos(2 pi P / P_2pi + Phi0)` with `I0 > 0`.
pub fn fit_cosine_law(powers: &[f64], values: &[f64]) -> Result<PhaseCalibration> {
    let n = powers.len();
    if n != values.len() {
        return Err(Error::invalid("powers and values differ in length"));
    }
    if n < 8 {
        return Err(Error::invalid(format!("need at least 8 points, got {n}")));
    }
    if powers.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite data"));
    }
    let lo = powers.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::invalid("powers do not span any range"));
    }

    // Coarse period search: linear least squares in (a cos + b sin) for each trial period.
    let mut sorted = powers.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let (p_lo, p_hi) = (2.0 * min_gap, 2.0 * span);
    let mut best = (f64::INFINITY, p_hi, 0.0, 0.0);
    for i in 0..=2000 {
        let period = p_lo * (p_hi / p_lo).powf(i as f64 / 2000.0);
        if let Some((a, b, rss)) = linear_cos_sin(powers, values, period) {
            if rss < best.0 {
                best = (rss, period, a, b);
            }
        }
    }
    let (_, period0, a0, b0) = best;
    // a cos w + b sin w = I0 cos(w + phi) with I0 cos phi = a, -I0 sin phi = b.
    let i0 = (a0 * a0 + b0 * b0).sqrt();
    let phi0 = (-b0).atan2(a0);

    let model = |p: &[f64], x: f64| p[2] * (2.0 * PI * x / p[0] + p[1]).cos();
    let fit = levenberg_marquardt(
        |p| {
            powers
                .iter()
                .zip(values)
                .map(|(x, y)| model(p, *x) - y)
                .collect()
        },
        &[period0, phi0, i0],
        500,
    );
    let residual_rms = (fit.sum_of_squares() / n as f64).sqrt();
    if !fit.converged || fit.x.iter().any(|v| !v.is_finite()) || !(fit.x[0] > 0.0) {
        return Err(Error::FitFailure {
            reason: "cosine fit did not converge".into(),
            residual_rms,
        });
    }
    let (mut power_2pi, mut phase, mut amplitude) = (fit.x[0], fit.x[1], fit.x[2]);
    let mut sign = [1.0, 1.0, 1.0];
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += PI;
        sign[2] = -1.0;
    }
    if amplitude == 0.0 {
        return Err(Error::FitFailure {
            reason: "zero fringe amplitude".into(),
            residual_rms,
        });
    }
    power_2pi = power_2pi.abs();
    if span < power_2pi * (1.0 - 1e-3) {
        return Err(Error::invalid(format!(
            "power sweep spans {span} W, less than one fitted period {power_2pi} W"
        )));
    }
    let mut covariance = [[0.0; 3]; 3];
    if let Some(c) = fit.covariance() {
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = c[(i, j)] * sign[i] * sign[j];
            }
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let tss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        1.0 - fit.sum_of_squares() / tss
    } else {
        1.0
    };
    Ok(PhaseCalibration {
        power_2pi,
        phase_offset: wrap_phase(phase),
        amplitude,
        covariance,
        residual_rms,
        r_squared,
    })
}

fn linear_cos_sin(xs: &[f64], ys: &[f64], period: f64) -> Option<(f64, f64, f64)> {
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let w = 2.0 * PI * x / period;
        let (s, c) = w.sin_cos();
        scc += c * c;
        sss += s * s;
        scs += c * s;
        syc += y * c;
        sys += y * s;
    }
    let det = scc * sss - scs * scs;
    if det.abs() < 1e-12 * (scc * sss).max(1e-300) {
        return None;
    }
    let a = (syc * sss - sys * scs) / det;
    let b = (sys * scc - syc * scs) / det;
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let w = 2.0 * PI * x / period;
            (a * w.cos() + b * w.sin() - y).powi(2)
        })
        .sum();
    Some((a, b, rss))
}
