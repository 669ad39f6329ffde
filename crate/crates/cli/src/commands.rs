//! One function per experiment. Each writes its tables into the output directory.

use std::f64::consts::PI;

use num_complex::Complex64;
use qfp_core::biphoton::{
    self, BiphotonState, CombGeometry, JsiNormalization, RetrievalDataset, RetrievalOptions,
    MEASUREMENT_WINDOW,
};
use qfp_core::calib::{self, DitherConfig, ScanGrid, TraceNoise};
use qfp_core::lattice::default_half_width;
use qfp_core::qfp::{self, ProbeInput, TwoByTwo};
use qfp_core::tomo::{self, CountMode, DensityMatrix, MleOptions};
use qfp_core::{make_lattice, FrequencyLattice, ModeOperator, RingParams, WsUnitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, SourceEnvelope};
use crate::output::{header, row, OutputDir};
use crate::CliError;

const BINS: [i64; 2] = [0, 1];
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

fn processor_lattice(cfg: &RunConfig) -> Result<FrequencyLattice, CliError> {
    let d = &cfg.device;
    let hw = d
        .window_half_width
        .unwrap_or_else(|| default_half_width(d.modulation_depth_rad));
    Ok(make_lattice(d.center_frequency_hz, d.bin_spacing_hz, hw)?)
}

fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points)
        .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
        .collect()
}

fn car(cfg: &RunConfig) -> f64 {
    cfg.device.car.unwrap_or(f64::INFINITY)
}

/// Serialized 2x2 block: squared magnitudes and phases, row = output bin.
#[derive(Debug, Serialize)]
pub struct MatrixReport {
    pub magnitude_squared: [[f64; 2]; 2],
    pub phase_rad: [[f64; 2]; 2],
}

impl MatrixReport {
    pub fn new(v: &TwoByTwo) -> Self {
        let f = |g: fn(&Complex64) -> f64| {
            [
                [g(&v[(0, 0)]), g(&v[(0, 1)])],
                [g(&v[(1, 0)]), g(&v[(1, 1)])],
            ]
        };
        MatrixReport {
            magnitude_squared: f(|z| z.norm_sqr()),
            phase_rad: f(|z| z.arg()),
        }
    }
}

fn max_entry_error(a: &TwoByTwo, b: &TwoByTwo) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Serialize)]
struct BeamsplitterSummary {
    modulation_depth_rad: f64,
    jbar: f64,
    points: usize,
    r_at_first_alpha: f64,
    t_at_first_alpha: f64,
    min_success_probability: f64,
    min_fidelity: f64,
    max_closed_form_deviation: f64,
}

pub fn beamsplitter(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let delta = cfg.device.modulation_depth_rad;
    let sweep = &cfg.beamsplitter;
    let alphas = linspace(sweep.alpha_start_rad, sweep.alpha_stop_rad, sweep.points);
    let rows = qfp::alpha_sweep(&alphas, delta, processor_lattice(cfg)?, BINS)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            row(&[
                r.alpha,
                r.r_closed,
                r.t_closed,
                r.r_matrix,
                r.t_matrix,
                r.success_probability,
                r.fidelity,
            ])
        })
        .collect();
    out.csv(
        "beamsplitter.csv",
        &header(&[
            "alpha_rad",
            "r_closed",
            "t_closed",
            "r_matrix",
            "t_matrix",
            "success_probability",
            "fidelity",
        ]),
        &table,
    )?;
    let summary = BeamsplitterSummary {
        modulation_depth_rad: delta,
        jbar: qfp::jbar(delta)?,
        points: rows.len(),
        r_at_first_alpha: rows[0].r_closed,
        t_at_first_alpha: rows[0].t_closed,
        min_success_probability: rows
            .iter()
            .map(|r| r.success_probability)
            .fold(f64::INFINITY, f64::min),
        min_fidelity: rows
            .iter()
            .map(|r| r.fidelity)
            .fold(f64::INFINITY, f64::min),
        max_closed_form_deviation: rows
            .iter()
            .map(|r| {
                (r.r_matrix - r.r_closed)
                    .abs()
                    .max((r.t_matrix - r.t_closed).abs())
            })
            .fold(0.0, f64::max),
    };
    out.json("beamsplitter.json", &summary)
}

#[derive(Debug, Serialize)]
struct GateReport {
    name: String,
    theta_rad: f64,
    lambda_rad: f64,
    mu_rad: f64,
    in_drive_phase_rad: f64,
    out_drive_phase_rad: f64,
    ws_channel_phases_rad: Vec<f64>,
    v: MatrixReport,
    target: MatrixReport,
    success_probability: f64,
    fidelity: f64,
    reconstructed: MatrixReport,
    reconstruction_error: f64,
}

pub fn gate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    if cfg.gate.gates.is_empty() {
        return Err(CliError::Config("gate.gates is empty".into()));
    }
    let delta = cfg.device.modulation_depth_rad;
    let lattice = processor_lattice(cfg)?;
    let reports = cfg
        .gate
        .gates
        .iter()
        .map(|g| {
            let pc =
                qfp::synthesize_gate(g.theta_rad, g.lambda_rad, g.mu_rad, delta, lattice, BINS)?;
            let v = qfp::submatrix(&qfp::compose_qfp(&pc)?, BINS)?;
            let target = qfp::target_unitary(g.theta_rad, g.lambda_rad, g.mu_rad);
            let rec = qfp::reconstruct_submatrix(&qfp::reconstruction_spectra(
                &pc,
                &[0.0, 0.5 * PI, PI, 1.5 * PI],
            )?)?;
            Ok(GateReport {
                name: g.name.clone(),
                theta_rad: g.theta_rad,
                lambda_rad: g.lambda_rad,
                mu_rad: g.mu_rad,
                in_drive_phase_rad: pc.in_drive.phase,
                out_drive_phase_rad: pc.out_drive.phase,
                ws_channel_phases_rad: pc
                    .ws
                    .channels
                    .iter()
                    .map(|c| c.unit.channel_phase)
                    .collect(),
                v: MatrixReport::new(&v),
                target: MatrixReport::new(&target),
                success_probability: qfp::success_probability(&v),
                fidelity: qfp::fidelity(&v, &target)?,
                reconstruction_error: max_entry_error(&rec.v, &qfp::gauge_fix(&v)),
                reconstructed: MatrixReport::new(&rec.v),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.json("gate.json", &reports)
}

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    alpha_rad: f64,
    modulation_depth_rad: f64,
    simulated: MatrixReport,
    reconstructed: MatrixReport,
    residual: f64,
    sign_ambiguous: bool,
    reconstruction_error: f64,
}

pub fn spectrum(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let req = &cfg.spectrum;
    let delta = cfg.device.modulation_depth_rad;
    let lattice = processor_lattice(cfg)?;
    let pc = qfp::beamsplitter_config(req.alpha_rad, delta, lattice, BINS)?;

    let mut probes = vec![ProbeInput::Bin0, ProbeInput::Bin1];
    probes.extend(
        req.gammas_rad
            .iter()
            .map(|&g| ProbeInput::Superposition { gamma_rad: g }),
    );
    let spectra = probes
        .iter()
        .map(|p| qfp::simulate_output_spectrum(&pc, &p.amplitudes(&lattice, BINS)?))
        .collect::<Result<Vec<_>, _>>()?;
    let mut names = vec!["bin".to_string(), "offset_hz".to_string()];
    names.extend(probes.iter().map(|p| match p {
        ProbeInput::Bin0 => "input_bin0".to_string(),
        ProbeInput::Bin1 => "input_bin1".to_string(),
        ProbeInput::Superposition { gamma_rad } => format!("input_sup_{gamma_rad}"),
    }));
    let table: Vec<Vec<String>> = lattice
        .bins()
        .enumerate()
        .map(|(i, b)| {
            let mut r = vec![b.to_string(), (b as f64 * lattice.spacing()).to_string()];
            r.extend(spectra.iter().map(|s| s[i].to_string()));
            r
        })
        .collect();
    out.csv("spectrum.csv", &names, &table)?;

    let v = qfp::submatrix(&qfp::compose_qfp(&pc)?, BINS)?;
    let rec = qfp::reconstruct_submatrix(&qfp::reconstruction_spectra(&pc, &req.gammas_rad)?)?;
    let summary = SpectrumSummary {
        alpha_rad: req.alpha_rad,
        modulation_depth_rad: delta,
        simulated: MatrixReport::new(&qfp::gauge_fix(&v)),
        reconstructed: MatrixReport::new(&rec.v),
        residual: rec.residual,
        sign_ambiguous: rec.sign_ambiguous,
        reconstruction_error: max_entry_error(&rec.v, &qfp::gauge_fix(&v)),
    };
    out.json("spectrum.json", &summary)
}

#[derive(Debug, Serialize)]
struct QwalkSummary {
    delta_rad: f64,
    expected_value: bool,
    magnitudes: Vec<f64>,
    planted_phases_rad: Vec<f64>,
    retrieved_phases_rad: Vec<f64>,
    max_phase_error_rad: f64,
    retrieval_fidelity: f64,
    diagonal_weight_initial: f64,
    diagonal_weight_correlated: f64,
    diagonal_weight_anticorrelated: f64,
    /// Measured grids against the noiseless simulation of the planted state.
    fidelity_correlated: f64,
    fidelity_anticorrelated: f64,
}

pub fn qwalk(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let req = &cfg.qwalk;
    let geometry = CombGeometry {
        first_offset: req.first_bin_offset_hz,
        spacing: cfg.device.source_spacing_hz,
    };
    let magnitudes =
        biphoton::comb_state(req.n_bins, &cfg.device.pump_filter, &geometry)?.magnitudes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let planted: Vec<f64> = (0..req.n_bins)
        .map(|l| {
            let x = if req.planted_jitter_rad > 0.0 {
                rng.random_range(-req.planted_jitter_rad..req.planted_jitter_rad)
            } else {
                0.0
            };
            if l == 0 {
                0.0
            } else {
                x
            }
        })
        .collect();
    let truth = BiphotonState::from_polar(&magnitudes, &planted)?;

    let lattice = biphoton::walk_lattice(req.n_bins, req.delta_rad)?;
    let id = ModeOperator::identity(lattice);
    let initial = biphoton::jsi(
        &biphoton::apply_joint(&id, &id, &truth)?,
        MEASUREMENT_WINDOW,
        JsiNormalization::Integral,
    )?;
    let patterns = [[0.0; 4], req.anticorrelated_pattern_rad];
    let mut ideal = Vec::new();
    let mut measured = Vec::new();
    for (k, p) in patterns.iter().enumerate() {
        let j = biphoton::simulate_jsi(
            &truth.with_idler_phases(p),
            req.delta_rad,
            MEASUREMENT_WINDOW,
        )?;
        let m = if cfg.expected_value {
            j.clone()
        } else {
            let counts = biphoton::poisson_counts(
                &j,
                req.total_pairs,
                car(cfg),
                cfg.seed.wrapping_add(1 + k as u64),
            )?;
            biphoton::counts_to_jsi(&counts)?
        };
        ideal.push(j);
        measured.push(m);
    }

    let labels: Vec<i64> = (MEASUREMENT_WINDOW[0]..=MEASUREMENT_WINDOW[1]).collect();
    out.grid("jsi_initial.csv", "signal\\idler", &labels, |r, c| {
        initial[(r, c)]
    })?;
    out.grid("jsi_correlated.csv", "signal\\idler", &labels, |r, c| {
        measured[0][(r, c)]
    })?;
    out.grid(
        "jsi_anticorrelated.csv",
        "signal\\idler",
        &labels,
        |r, c| measured[1][(r, c)],
    )?;

    let datasets: Vec<RetrievalDataset> = patterns
        .iter()
        .zip(&measured)
        .map(|(p, m)| RetrievalDataset {
            measured: m.clone(),
            idler_phases: *p,
        })
        .collect();
    let opts = RetrievalOptions {
        delta: req.delta_rad,
        window: MEASUREMENT_WINDOW,
        restarts: req.retrieval_restarts,
        seed: cfg.seed,
    };
    let retrieval = biphoton::retrieve_phases(&datasets, &magnitudes, &opts)?;
    let summary = QwalkSummary {
        delta_rad: req.delta_rad,
        expected_value: cfg.expected_value,
        max_phase_error_rad: retrieval
            .phases
            .iter()
            .zip(&planted)
            .map(|(a, b)| calib::wrap_phase(a - b).abs())
            .fold(0.0, f64::max),
        magnitudes,
        planted_phases_rad: planted,
        retrieved_phases_rad: retrieval.phases.clone(),
        retrieval_fidelity: retrieval.fidelity,
        diagonal_weight_initial: biphoton::diagonal_weight(&initial),
        diagonal_weight_correlated: biphoton::diagonal_weight(&measured[0]),
        diagonal_weight_anticorrelated: biphoton::diagonal_weight(&measured[1]),
        fidelity_correlated: biphoton::jsi_fidelity(&measured[0], &ideal[0])?,
        fidelity_anticorrelated: biphoton::jsi_fidelity(&measured[1], &ideal[1])?,
    };
    out.json("qwalk.json", &summary)
}

#[derive(Debug, Serialize)]
struct TomographySummary {
    expected_value: bool,
    suppression_db: Option<f64>,
    car: Option<f64>,
    planted_fidelity: f64,
    planted_purity: f64,
    fidelity: f64,
    purity: f64,
    linear_inversion_fidelity: f64,
    log_likelihood: f64,
    mle_iterations: usize,
    mle_converged: bool,
    ill_conditioned: bool,
    visibility: f64,
    visibility_std: f64,
    visibility_phase_offset_rad: f64,
    significance: f64,
    violates_bell: bool,
}

pub fn tomography(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let req = &cfg.tomography;
    let comb = match req.source {
        SourceEnvelope::PumpFilter => {
            let geometry = CombGeometry {
                first_offset: cfg.qwalk.first_bin_offset_hz,
                spacing: cfg.device.source_spacing_hz,
            };
            biphoton::comb_state(cfg.qwalk.n_bins, &cfg.device.pump_filter, &geometry)?
        }
        SourceEnvelope::Flat => BiphotonState::from_polar(&[1.0; 6], &[0.0; 6])?,
    };
    let planted = tomo::carve_bell_state(&comb, req.suppression_db.unwrap_or(f64::INFINITY))?;
    let mode = |offset: u64| {
        if cfg.expected_value {
            CountMode::Expected
        } else {
            CountMode::Sampled {
                seed: cfg.seed.wrapping_add(offset),
            }
        }
    };
    let records = tomo::simulate_counts(
        &planted,
        &tomo::canonical_settings(),
        req.shots_per_setting,
        car(cfg),
        req.delta_meas_rad,
        mode(0),
    )?;
    let opts = MleOptions {
        random_restarts: req.mle_restarts,
        seed: cfg.seed,
        ..MleOptions::default()
    };
    let mle = tomo::mle_reconstruct(&records, &opts)?;
    let linear = tomo::linear_inversion(&records)?;

    let grid = linspace(
        0.0,
        2.0 * PI * (1.0 - 1.0 / req.fringe_points.max(1) as f64),
        req.fringe_points,
    );
    let fringe = tomo::bell_fringe(&planted, &grid, req.delta_meas_rad)?;
    let floor = tomo::accidental_floor(&planted, car(cfg))?;
    let counts = tomo::fringe_counts(&fringe, req.fringe_pairs_per_point, floor, mode(1))?;
    let points: Vec<(f64, f64)> = grid
        .iter()
        .copied()
        .zip(counts.coincidences.iter().copied())
        .collect();
    let fit = tomo::fit_visibility(&points)?;

    write_density(out, &mle.rho)?;
    out.json("records.json", &records)?;
    let fringe_rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            row(&[
                counts.dphi[i],
                counts.coincidences[i],
                counts.signal_singles[i],
                counts.idler_singles[i],
                fit.baseline * (1.0 + fit.visibility * (counts.dphi[i] - fit.phase_offset).cos()),
            ])
        })
        .collect();
    out.csv(
        "fringe.csv",
        &header(&[
            "dphi_rad",
            "coincidences",
            "signal_singles",
            "idler_singles",
            "fit",
        ]),
        &fringe_rows,
    )?;
    let bell = tomo::phi_plus();
    let summary = TomographySummary {
        expected_value: cfg.expected_value,
        suppression_db: req.suppression_db,
        car: cfg.device.car,
        planted_fidelity: tomo::state_fidelity(&planted, &bell),
        planted_purity: tomo::purity(&planted),
        fidelity: tomo::state_fidelity(&mle.rho, &bell),
        purity: tomo::purity(&mle.rho),
        linear_inversion_fidelity: tomo::state_fidelity(&linear, &bell),
        log_likelihood: mle.log_likelihood,
        mle_iterations: mle.iterations,
        mle_converged: mle.converged,
        ill_conditioned: mle.ill_conditioned,
        visibility: fit.visibility,
        visibility_std: fit.visibility_std,
        visibility_phase_offset_rad: fit.phase_offset,
        significance: fit.significance,
        violates_bell: fit.violates_bell,
    };
    out.json("tomography.json", &summary)
}

fn write_density(out: &mut OutputDir, rho: &DensityMatrix) -> Result<(), CliError> {
    out.json("rho.json", rho)?;
    let labels = ["00", "01", "10", "11"];
    let m = rho.matrix();
    let mut names = vec!["row".to_string()];
    names.extend(labels.iter().map(|s| s.to_string()));
    for (file, f) in [
        ("rho_magnitude.csv", Complex64::norm as fn(Complex64) -> f64),
        ("rho_phase.csv", Complex64::arg),
    ] {
        let rows: Vec<Vec<String>> = (0..4)
            .map(|r| {
                let mut v = vec![labels[r].to_string()];
                v.extend((0..4).map(|c| f(m[(r, c)]).to_string()));
                v
            })
            .collect();
        out.csv(file, &names, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CalibrationSummary {
    linewidth_m: f64,
    loaded_q: f64,
    grid_step_linewidths: f64,
    planted_demux_linewidths: f64,
    planted_mux_linewidths: f64,
    recovered_demux_linewidths: f64,
    recovered_mux_linewidths: f64,
    best_amplitude: f64,
    phase_calibration: calib::PhaseCalibration,
    intrinsic_offset_rad: f64,
    /// Fitted offset minus the unit's intrinsic response phase.
    heater_offset_rad: f64,
    planted_heater_offset_rad: f64,
    planted_power_2pi_w: f64,
}

pub fn calibrate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let req = &cfg.calibrate;
    let (r, dc) = (&cfg.device.ring, &cfg.device.dither);
    let wl = SPEED_OF_LIGHT / cfg.device.center_frequency_hz;
    let ring = RingParams::from_propagation_loss(
        wl,
        r.power_coupling,
        r.loss_db_per_cm,
        r.radius_m,
        r.effective_index,
    )?;
    let template = WsUnitConfig::phase(ring, wl, req.channel_phase_rad);
    let lw = template.linewidth();
    let dither = DitherConfig {
        amplitude: dc.amplitude_linewidths * lw,
        f_demux: dc.f_demux_hz,
        f_mux: dc.f_mux_hz,
        duration: dc.duration_s,
        sample_rate: dc.sample_rate_hz,
        noise: req.trace_noise.map(|std_dev| TraceNoise {
            std_dev,
            seed: cfg.seed,
        }),
    };

    let mut misaligned = template;
    misaligned.demux.resonance_wavelength -= req.planted_demux_linewidths * lw;
    misaligned.mux.resonance_wavelength -= req.planted_mux_linewidths * lw;
    let grid = ScanGrid::square(
        (0.0, 0.0),
        req.half_span_linewidths * lw,
        req.steps_per_side,
    );
    let scan = calib::align_scan(&misaligned, &grid, &dither)?;
    let map_rows: Vec<Vec<String>> = scan
        .map
        .iter()
        .map(|p| row(&[p.demux / lw, p.mux / lw, p.amplitude]))
        .collect();
    out.csv(
        "scan_map.csv",
        &header(&[
            "demux_detuning_linewidths",
            "mux_detuning_linewidths",
            "amplitude",
        ]),
        &map_rows,
    )?;

    let base = WsUnitConfig {
        channel_phase: 0.0,
        ..template
    };
    let powers = linspace(0.0, req.max_power_w, req.power_points);
    let traces = powers
        .iter()
        .map(|p| {
            let unit = WsUnitConfig {
                channel_phase: req.heater_offset_rad + 2.0 * PI * p / req.power_2pi_w,
                ..base
            };
            calib::simulate_dither_trace(&unit, &dither, wl)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cal = calib::fit_phase_curve(&powers, &traces, &dither)?;
    let intrinsic = calib::intrinsic_offset(&base, &dither)?;
    let curve_rows = powers
        .iter()
        .zip(&traces)
        .map(|(p, t)| {
            let measured =
                calib::harmonic_component(t, dither.phase_frequency(), dither.sample_rate)?.re;
            let fitted = cal.amplitude * (2.0 * PI * p / cal.power_2pi + cal.phase_offset).cos();
            Ok(row(&[*p, measured, fitted]))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.csv(
        "phase_curve.csv",
        &header(&["power_w", "difference_tone_re", "fit"]),
        &curve_rows,
    )?;

    let summary = CalibrationSummary {
        linewidth_m: lw,
        loaded_q: ring.loaded_q(),
        grid_step_linewidths: req.half_span_linewidths / req.steps_per_side.max(1) as f64,
        planted_demux_linewidths: req.planted_demux_linewidths,
        planted_mux_linewidths: req.planted_mux_linewidths,
        recovered_demux_linewidths: scan.best_demux / lw,
        recovered_mux_linewidths: scan.best_mux / lw,
        best_amplitude: scan.best_amplitude,
        heater_offset_rad: calib::wrap_phase(cal.phase_offset - intrinsic),
        intrinsic_offset_rad: intrinsic,
        phase_calibration: cal,
        planted_heater_offset_rad: req.heater_offset_rad,
        planted_power_2pi_w: req.power_2pi_w,
    };
    out.json("calibration.json", &summary)
}
