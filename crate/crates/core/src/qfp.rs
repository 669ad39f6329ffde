//! Three-element processor: IN modulator, waveshaper, OUT modulator.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel::BesselTable;
use crate::eom::{eom_operator, guard_bins, RfDrive};
use crate::error::{Error, Result};
use crate::lattice::FrequencyLattice;
use crate::operator::ModeOperator;
use crate::rings::{
    ws_operator, OutsidePolicy, RingParams, WsChannel, WsMode, WsModel, WsUnitConfig,
};

/// A 2x2 complex block on the computational bins, rows = outputs.
pub type TwoByTwo = Matrix2<Complex64>;

/// Working point giving the balanced splitter.
pub const FIFTY_FIFTY_DEPTH: f64 = 0.8169;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsSetting {
    pub model: WsModel,
    #[serde(default)]
    pub outside: OutsidePolicy,
    pub channels: Vec<WsChannel>,
}

impl WsSetting {
    pub fn flat() -> Self {
        WsSetting {
            model: WsModel::Ideal,
            outside: OutsidePolicy::Unshaped,
            channels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorConfig {
    pub lattice: FrequencyLattice,
    pub in_drive: RfDrive,
    pub out_drive: RfDrive,
    pub ws: WsSetting,
    /// Bins carrying qubit labels 0 and 1.
    pub computational_bins: [i64; 2],
}

impl ProcessorConfig {
    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.computational_bins;
        if b1 != b0 + 1 {
            return Err(Error::invalid(format!(
                "computational bins must be adjacent, got {b0} and {b1}"
            )));
        }
        if !self.lattice.contains(b0) || !self.lattice.contains(b1) {
            return Err(Error::invalid(
                "computational bins outside the lattice window",
            ));
        }
        Ok(())
    }

    pub fn ws_operator(&self) -> Result<ModeOperator> {
        ws_operator(
            &self.ws.channels,
            &self.lattice,
            self.ws.model,
            self.ws.outside,
        )
    }
}

/// `M_out * D_ws * M_in`.
pub fn compose_qfp(config: &ProcessorConfig) -> Result<ModeOperator> {
    config.validate()?;
    let m_in = eom_operator(&config.in_drive, &config.lattice)?;
    let ws = config.ws_operator()?;
    let m_out = eom_operator(&config.out_drive, &config.lattice)?;
    Ok(m_out.after(&ws.after(&m_in)?)?.with_label("qfp"))
}

/// Bins of WS channels 1..=4 around the computational pair.
pub fn channel_bins(bins: [i64; 2]) -> [i64; 4] {
    [bins[0] - 1, bins[0], bins[1], bins[1] + 1]
}

fn phase_channels(
    lattice: &FrequencyLattice,
    bins: [i64; 2],
    phases: [f64; 4],
) -> Result<Vec<WsChannel>> {
    channel_bins(bins)
        .iter()
        .zip(phases)
        .map(|(&bin, phase)| {
            if !lattice.contains(bin) {
                return Err(Error::invalid(format!(
                    "WS channel bin {bin} outside the lattice window"
                )));
            }
            let wl = lattice.bin_wavelength(bin);
            Ok(WsChannel {
                bin,
                unit: WsUnitConfig::phase(RingParams::reference_waveshaper(wl), wl, phase),
            })
        })
        .collect()
}

/// Balanced-depth, pi-shifted modulators with WS phases `[0, 0, alpha, alpha]`.
///
/// Bins beyond the four channels continue the edge phases, so every bin at or
/// below label 0 sees 0 and every bin at or above label 1 sees `alpha`.
pub fn beamsplitter_config(
    alpha: f64,
    delta: f64,
    lattice: FrequencyLattice,
    bins: [i64; 2],
) -> Result<ProcessorConfig> {
    let spacing = lattice.spacing();
    let config = ProcessorConfig {
        lattice,
        in_drive: RfDrive::new(delta, PI, spacing),
        out_drive: RfDrive::new(delta, 0.0, spacing),
        ws: WsSetting {
            model: WsModel::Ideal,
            outside: OutsidePolicy::Extend,
            channels: phase_channels(&lattice, bins, [0.0, 0.0, alpha, alpha])?,
        },
        computational_bins: bins,
    };
    config.validate()?;
    Ok(config)
}

/// `2 (sum_{k>=1} J_k J_{k-1})^2`.
pub fn jbar(delta: f64) -> Result<f64> {
    let k_max = guard_bins(delta)? + 4;
    let t = BesselTable::new(delta, k_max)?;
    let s: f64 = (1..=k_max as i64).map(|k| t.get(k) * t.get(k - 1)).sum();
    Ok(2.0 * s * s)
}

/// Reflectivity and transmittivity of the balanced construction.
pub fn rt_closed_form(alpha: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!(
            "modulation depth must be >= 0, got {delta}"
        )));
    }
    let t = BesselTable::new(delta, 0)?;
    let j04 = t.get(0).powi(4);
    let r = j04 + 0.5 * (1.0 - j04) * (1.0 + alpha.cos());
    let tr = jbar(delta)? * (1.0 - alpha.cos());
    Ok((r, tr))
}

/// 2x2 block at `bins` (rows outputs, columns inputs).
pub fn submatrix(op: &ModeOperator, bins: [i64; 2]) -> Result<TwoByTwo> {
    let get = |m: i64, n: i64| {
        op.element(m, n)
            .ok_or_else(|| Error::invalid(format!("bins ({m}, {n}) outside the operator window")))
    };
    Ok(Matrix2::new(
        get(bins[0], bins[0])?,
        get(bins[0], bins[1])?,
        get(bins[1], bins[0])?,
        get(bins[1], bins[1])?,
    ))
}

/// `Tr(V^dagger V) / 2`.
pub fn success_probability(v: &TwoByTwo) -> f64 {
    0.5 * v.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// `|Tr(V^dagger U)|^2 / (4 P)`.
pub fn fidelity(v: &TwoByTwo, target: &TwoByTwo) -> Result<f64> {
    let p = success_probability(v);
    if !(p > 0.0) {
        return Err(Error::UndefinedFidelity);
    }
    let overlap = (v.adjoint() * target).trace();
    Ok(overlap.norm_sqr() / (4.0 * p))
}

/// General single-qubit rotation `U(theta, lambda, mu)`.
pub fn target_unitary(theta: f64, lambda: f64, mu: f64) -> TwoByTwo {
    let (s, c) = (0.5 * theta).sin_cos();
    Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::from_polar(s, lambda),
        Complex64::from_polar(s, mu),
        -Complex64::from_polar(c, lambda + mu),
    )
}

/// Splitting angle realized by (R, T): `sin^2(theta / 2) = T / (R + T)`.
pub fn splitting_angle(r: f64, t: f64) -> f64 {
    2.0 * (t / (r + t)).sqrt().asin()
}

/// Largest splitting angle reachable on the `alpha in [pi, 2 pi]` branch.
pub fn max_splitting_angle(delta: f64) -> Result<f64> {
    let (r, t) = rt_closed_form(PI, delta)?;
    Ok(splitting_angle(r, t))
}

/// Requests up to this far beyond the reachable angle are served by the nearest
/// setting, whose fidelity to the request is then still >= 0.999.
pub fn splitting_angle_slack() -> f64 {
    2.0 * 0.999f64.sqrt().acos()
}

/// `alpha` in `[pi, 2 pi]` whose splitting angle equals `theta`.
pub fn alpha_for_theta(theta: f64, delta: f64) -> Result<f64> {
    let theta_max = max_splitting_angle(delta)?;
    if !(theta >= 0.0) || theta > theta_max + splitting_angle_slack() {
        return Err(Error::OutOfRange {
            what: "theta",
            value: theta,
            min: 0.0,
            max: theta_max,
        });
    }
    if theta >= theta_max {
        return Ok(PI);
    }
    let target = (0.5 * theta).sin().powi(2);
    let ratio = |a: f64| -> Result<f64> {
        let (r, t) = rt_closed_form(a, delta)?;
        Ok(t / (r + t))
    };
    // ratio falls monotonically from its maximum at pi to 0 at 2 pi.
    let (mut lo, mut hi) = (PI, 2.0 * PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Z phases `(lambda0, mu0)` making `U(theta, lambda0, mu0)` the closest rotation to `v`.
///
/// Coordinate ascent on `|Tr(V^dagger U)|`: with one angle fixed the optimum of
/// the other is closed form. A real `v` of the balanced form gives exactly (0, 0).
pub fn intrinsic_z_phases(v: &TwoByTwo, theta: f64) -> (f64, f64) {
    let (s, c) = (0.5 * theta).sin_cos();
    let (a, b, g, d) = (
        v[(0, 0)].conj(),
        v[(0, 1)].conj(),
        v[(1, 0)].conj(),
        v[(1, 1)].conj(),
    );
    let best = |x: Complex64, y: Complex64, current: f64| {
        if x.norm() < 1e-300 || y.norm() < 1e-300 {
            current
        } else {
            x.arg() - y.arg()
        }
    };
    let (mut lambda, mut mu) = (0.0, 0.0);
    for _ in 0..500 {
        let e_mu = Complex64::cis(mu);
        let new_lambda = best(a * c + g * s * e_mu, b * s - d * c * e_mu, lambda);
        let e_l = Complex64::cis(new_lambda);
        let new_mu = best(a * c + b * s * e_l, g * s - d * c * e_l, mu);
        let change = (new_lambda - lambda).abs() + (new_mu - mu).abs();
        lambda = new_lambda;
        mu = new_mu;
        if change < 1e-15 {
            break;
        }
    }
    (
        crate::calib::wrap_phase(lambda),
        crate::calib::wrap_phase(mu),
    )
}

/// Fidelity to `U(theta, 0, 0)` after removing the best Z rotations on each side.
pub fn fidelity_up_to_z(v: &TwoByTwo, theta: f64) -> Result<f64> {
    let (l0, m0) = intrinsic_z_phases(v, theta);
    fidelity(v, &target_unitary(theta, l0, m0))
}

/// Processor setting for `U(theta, lambda, mu)`.
///
/// RF phases become `theta_in - lambda'` and `theta_out + mu'`, and channel `k`
/// (1..=4) gains `k (lambda' + mu')`. This gives
/// `V = diag(1, e^{i mu'}) V(alpha) diag(1, e^{i lambda'})`, where
/// `lambda' = lambda - lambda0` and `mu' = mu - mu0` remove the Z phases that
/// `V(alpha)` itself carries away from the balanced point (both zero at `alpha = pi`).
pub fn synthesize_gate(
    theta: f64,
    lambda: f64,
    mu: f64,
    delta: f64,
    lattice: FrequencyLattice,
    bins: [i64; 2],
) -> Result<ProcessorConfig> {
    let alpha = alpha_for_theta(theta, delta)?;
    let mut config = beamsplitter_config(alpha, delta, lattice, bins)?;
    let v0 = submatrix(&compose_qfp(&config)?, bins)?;
    let (l0, m0) = intrinsic_z_phases(&v0, theta);
    // Round-off in V(alpha) is not a phase to correct.
    let snap = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
    let (lambda, mu) = (snap(lambda - l0), snap(mu - m0));
    if lambda == 0.0 && mu == 0.0 {
        return Ok(config);
    }
    config.in_drive.phase -= lambda;
    config.out_drive.phase += mu;
    for (k, ch) in config.ws.channels.iter_mut().enumerate() {
        ch.unit.channel_phase += (k + 1) as f64 * (lambda + mu);
    }
    Ok(config)
}

/// Output power per bin for the given input amplitudes (ordered from `l_min`).
pub fn simulate_output_spectrum(config: &ProcessorConfig, input: &[Complex64]) -> Result<Vec<f64>> {
    let norm: f64 = input.iter().map(|a| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "input must be normalized, total power is {norm}"
        )));
    }
    let op = compose_qfp(config)?;
    Ok(op.apply(input)?.iter().map(|a| a.norm_sqr()).collect())
}

/// Probe states used for scattering-matrix reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeInput {
    Bin0,
    Bin1,
    /// `(|0> + e^{i gamma} |1>) / sqrt(2)`.
    Superposition {
        gamma_rad: f64,
    },
}

impl ProbeInput {
    /// Amplitudes on the lattice window.
    pub fn amplitudes(&self, lattice: &FrequencyLattice, bins: [i64; 2]) -> Result<Vec<Complex64>> {
        let (i0, i1) = match (lattice.index_of(bins[0]), lattice.index_of(bins[1])) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::invalid(
                    "computational bins outside the lattice window",
                ))
            }
        };
        let mut v = vec![Complex64::new(0.0, 0.0); lattice.len()];
        match *self {
            ProbeInput::Bin0 => v[i0] = Complex64::new(1.0, 0.0),
            ProbeInput::Bin1 => v[i1] = Complex64::new(1.0, 0.0),
            ProbeInput::Superposition { gamma_rad } => {
                v[i0] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                v[i1] = Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, gamma_rad);
            }
        }
        Ok(v)
    }
}

/// Output powers at the two computational bins for one probe input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpectrum {
    pub input: ProbeInput,
    pub powers: [f64; 2],
}

/// Simulated reconstruction dataset: the two single-bin inputs plus superpositions at `gammas`.
pub fn reconstruction_spectra(
    config: &ProcessorConfig,
    gammas: &[f64],
) -> Result<Vec<LabeledSpectrum>> {
    let bins = config.computational_bins;
    let (i0, i1) = (
        config.lattice.index_of(bins[0]).unwrap_or(0),
        config.lattice.index_of(bins[1]).unwrap_or(0),
    );
    let op = compose_qfp(config)?;
    let mut inputs = vec![ProbeInput::Bin0, ProbeInput::Bin1];
    inputs.extend(
        gammas
            .iter()
            .map(|&g| ProbeInput::Superposition { gamma_rad: g }),
    );
    inputs
        .into_iter()
        .map(|input| {
            let out = op.apply(&input.amplitudes(&config.lattice, bins)?)?;
            Ok(LabeledSpectrum {
                input,
                powers: [out[i0].norm_sqr(), out[i1].norm_sqr()],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub v: TwoByTwo,
    /// Largest inconsistency between redundant spectra.
    pub residual: f64,
    /// True when only two superposition phases were available and the sign of
    /// the imaginary parts was chosen by convention.
    pub sign_ambiguous: bool,
}

/// Removes the per-row phase that intensity measurements cannot see: each row's
/// first entry (or second, if the first vanishes) is made real and non-negative.
pub fn gauge_fix(v: &TwoByTwo) -> TwoByTwo {
    let mut out = *v;
    for m in 0..2 {
        let pivot = if v[(m, 0)].norm() > 1e-12 {
            v[(m, 0)]
        } else {
            v[(m, 1)]
        };
        if pivot.norm() > 0.0 {
            let rot = pivot.conj() / pivot.norm();
            out[(m, 0)] *= rot;
            out[(m, 1)] *= rot;
        }
    }
    out
}

/// Tolerance on negative inferred `|Im|^2` before the data are declared inconsistent.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-6;

/// Rebuilds V (up to row phases) from single-bin and superposition spectra.
///
/// With superpositions at 0, pi/2, pi and 3 pi/2 the cross terms are fully determined.
/// With only 0 and pi, `|Im(V_m0^* V_m1)|` is known but not its sign; the signs
/// are chosen to make the two columns as close to orthogonal as possible, with
/// row 0 taking the non-negative sign.
pub fn reconstruct_submatrix(spectra: &[LabeledSpectrum]) -> Result<Reconstruction> {
    let find = |pred: &dyn Fn(&ProbeInput) -> bool| {
        spectra.iter().find(|s| pred(&s.input)).map(|s| s.powers)
    };
    let sup = |g: f64| {
        find(&|i: &ProbeInput| match i {
            ProbeInput::Superposition { gamma_rad } => {
                ((gamma_rad - g + PI).rem_euclid(2.0 * PI) - PI).abs() < 1e-9
            }
            _ => false,
        })
    };
    let p0 = find(&|i| matches!(i, ProbeInput::Bin0))
        .ok_or_else(|| Error::invalid("missing bin-0 spectrum"))?;
    let p1 = find(&|i| matches!(i, ProbeInput::Bin1))
        .ok_or_else(|| Error::invalid("missing bin-1 spectrum"))?;
    let (s0, spi) = match (sup(0.0), sup(PI)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::invalid(
                "need superposition spectra at gamma = 0 and pi",
            ))
        }
    };
    let quadrature = match (sup(0.5 * PI), sup(1.5 * PI)) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };

    let scale = p0
        .iter()
        .chain(&p1)
        .copied()
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut residual: f64 = 0.0;
    let mut rows = [(0.0, 0.0, Complex64::new(0.0, 0.0)); 2];
    for m in 0..2 {
        let (a2, b2) = (p0[m].max(0.0), p1[m].max(0.0));
        // I(g) = (a2 + b2)/2 + Re(c e^{i g}) with c = V_m0^* V_m1.
        residual = residual.max((s0[m] + spi[m] - (a2 + b2)).abs());
        let re = 0.5 * (s0[m] - spi[m]);
        let im = match quadrature {
            Some((q1, q3)) => {
                residual = residual.max((q1[m] + q3[m] - (a2 + b2)).abs());
                0.5 * (q3[m] - q1[m])
            }
            None => {
                let im2 = a2 * b2 - re * re;
                if im2 < -RECONSTRUCTION_TOLERANCE * scale * scale {
                    return Err(Error::ReconstructionFailure {
                        reason: format!("row {m}: interference term exceeds |V_m0||V_m1|"),
                        residual: -im2,
                    });
                }
                residual = residual.max((-im2).max(0.0));
                im2.max(0.0).sqrt()
            }
        };
        rows[m] = (a2.sqrt(), b2.sqrt(), Complex64::new(re, im));
    }
    if quadrature.is_none() {
        // Choose the relative sign of row 1's imaginary part to minimize |c_0 + c_1|.
        let flipped = rows[1].2.conj();
        if (rows[0].2 + flipped).norm() < (rows[0].2 + rows[1].2).norm() - 1e-15 {
            rows[1].2 = flipped;
        }
    }
    if residual > RECONSTRUCTION_TOLERANCE * scale.max(1.0) * 10.0 {
        return Err(Error::ReconstructionFailure {
            reason: "superposition spectra inconsistent with single-bin spectra".into(),
            residual,
        });
    }
    let mut v = TwoByTwo::zeros();
    for (m, &(a, b, c)) in rows.iter().enumerate() {
        if a > 1e-12 {
            v[(m, 0)] = Complex64::new(a, 0.0);
            v[(m, 1)] = c / a;
        } else {
            v[(m, 1)] = Complex64::new(b, 0.0);
        }
    }
    Ok(Reconstruction {
        v,
        residual,
        sign_ambiguous: quadrature.is_none(),
    })
}

/// How PHYSICAL-model success probabilities are corrected for waveshaper loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// Mean power transmission of the WS at the two computational bins.
    PerBin,
    /// Mean power transmission over all WS channel bins.
    Aggregate,
}

/// Success probability divided by the WS insertion loss.
pub fn normalized_success_probability(
    config: &ProcessorConfig,
    norm: LossNormalization,
) -> Result<f64> {
    let v = submatrix(&compose_qfp(config)?, config.computational_bins)?;
    let ws = config.ws_operator()?;
    let bins: Vec<i64> = match norm {
        LossNormalization::PerBin => config.computational_bins.to_vec(),
        LossNormalization::Aggregate => {
            let b: Vec<i64> = config.ws.channels.iter().map(|c| c.bin).collect();
            if b.is_empty() {
                config.computational_bins.to_vec()
            } else {
                b
            }
        }
    };
    let loss = bins
        .iter()
        .map(|&b| ws.element(b, b).map(|z| z.norm_sqr()).unwrap_or(1.0))
        .sum::<f64>()
        / bins.len() as f64;
    if !(loss > 0.0) {
        return Err(Error::UndefinedFidelity);
    }
    Ok(success_probability(&v) / loss)
}

/// One row of an alpha sweep: closed form and full-matrix values side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub r_closed: f64,
    pub t_closed: f64,
    pub r_matrix: f64,
    pub t_matrix: f64,
    pub success_probability: f64,
    /// Against `U(theta, lambda0, mu0)`: theta from the closed-form splitting
    /// ratio, Z phases from [`intrinsic_z_phases`].
    pub fidelity: f64,
}

/// Beamsplitter sweep over `alphas` (parallel, results in input order).
pub fn alpha_sweep(
    alphas: &[f64],
    delta: f64,
    lattice: FrequencyLattice,
    bins: [i64; 2],
) -> Result<Vec<SweepRow>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let (r, t) = rt_closed_form(alpha, delta)?;
            let v = submatrix(
                &compose_qfp(&beamsplitter_config(alpha, delta, lattice, bins)?)?,
                bins,
            )?;
            let theta = splitting_angle(r, t);
            Ok(SweepRow {
                alpha,
                r_closed: r,
                t_closed: t,
                r_matrix: v[(0, 0)].norm_sqr(),
                t_matrix: v[(0, 1)].norm_sqr(),
                success_probability: success_probability(&v),
                fidelity: fidelity_up_to_z(&v, theta)?,
            })
        })
        .collect()
}

/// Single-modulator splitter: only the IN drive is on and the WS is flat.
pub fn single_pm_config(delta: f64, lattice: FrequencyLattice, bins: [i64; 2]) -> ProcessorConfig {
    let spacing = lattice.spacing();
    ProcessorConfig {
        lattice,
        in_drive: RfDrive::new(delta, 0.0, spacing),
        out_drive: RfDrive::off(spacing),
        ws: WsSetting::flat(),
        computational_bins: bins,
    }
}

/// Channel modes at a glance, for reporting.
pub fn channel_modes(config: &ProcessorConfig) -> Vec<(i64, WsMode, f64)> {
    config
        .ws
        .channels
        .iter()
        .map(|c| (c.bin, c.unit.mode, c.unit.channel_phase))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::bessel_j_series;
    use crate::lattice::{default_half_width, make_lattice};

    const DNU: f64 = 13.25e9;
    const BINS: [i64; 2] = [0, 1];

    fn lattice(delta: f64) -> FrequencyLattice {
        make_lattice(193.7e12, DNU, default_half_width(delta)).unwrap()
    }

    fn v_of(config: &ProcessorConfig) -> TwoByTwo {
        submatrix(&compose_qfp(config).unwrap(), config.computational_bins).unwrap()
    }

    #[test]
    fn drives_off_flat_ws_is_identity() {
        let l = lattice(1.0);
        let c = ProcessorConfig {
            lattice: l,
            in_drive: RfDrive::off(DNU),
            out_drive: RfDrive::off(DNU),
            ws: WsSetting::flat(),
            computational_bins: BINS,
        };
        let op = compose_qfp(&c).unwrap();
        assert_eq!(op.entries(), ModeOperator::identity(l).entries());
    }

    #[test]
    fn antiphase_drives_cancel() {
        let d = FIFTY_FIFTY_DEPTH;
        let l = lattice(d);
        let mut c = single_pm_config(d, l, BINS);
        c.out_drive = RfDrive::new(d, PI, DNU);
        let op = compose_qfp(&c).unwrap();
        let k = guard_bins(d).unwrap();
        assert!(op.interior_distance(&ModeOperator::identity(l), k).unwrap() < 1e-10);
    }

    #[test]
    fn closed_form_anchor_values() {
        let (r, t) = rt_closed_form(PI, FIFTY_FIFTY_DEPTH).unwrap();
        assert!((r - 0.4978).abs() < 5e-4, "{r}");
        assert!((t - 0.4781).abs() < 5e-4, "{t}");
        assert!((jbar(FIFTY_FIFTY_DEPTH).unwrap() - 0.239).abs() < 1e-3);
        assert_eq!(jbar(0.0).unwrap(), 0.0);
        let (r, t) = rt_closed_form(2.0 * PI, 0.6).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && t.abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_unsimplified_expression() {
        // |(1 - e^{ia}) S|^2 and |J0^2 + (1 + e^{ia})(1 - J0^2)/2|^2 from series Bessel values.
        for &d in &[0.3, 0.8169, 1.3] {
            let j0 = bessel_j_series(0, d);
            let s: f64 = (1..30)
                .map(|k| bessel_j_series(k, d) * bessel_j_series(k - 1, d))
                .sum();
            for i in 0..16 {
                let a = i as f64 * 2.0 * PI / 16.0;
                let e = Complex64::cis(a);
                let t = ((1.0 - e) * s).norm_sqr();
                let r = (j0 * j0 + (1.0 + e) * (1.0 - j0 * j0) / 2.0).norm_sqr();
                let (rc, tc) = rt_closed_form(a, d).unwrap();
                assert!((r - rc).abs() < 1e-14 && (t - tc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fifty_fifty_matrix_has_eq2_structure() {
        let v = v_of(&beamsplitter_config(PI, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap());
        let (r, t) = rt_closed_form(PI, FIFTY_FIFTY_DEPTH).unwrap();
        let expected = Matrix2::new(r.sqrt(), t.sqrt(), t.sqrt(), -r.sqrt());
        for i in 0..2 {
            for j in 0..2 {
                assert!((v[(i, j)] - expected[(i, j)]).norm() < 1e-9, "{v}");
            }
        }
        assert!(fidelity(&v, &target_unitary(PI / 2.0, 0.0, 0.0)).unwrap() >= 0.999);
        assert!((success_probability(&v) - (r + t)).abs() < 1e-8);
    }

    #[test]
    fn full_reflection_at_two_pi() {
        let v =
            v_of(&beamsplitter_config(2.0 * PI, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap());
        // A 2 pi step is no step at all: the two modulators cancel exactly.
        assert!((v - TwoByTwo::identity()).camax() < 1e-10);
    }

    #[test]
    fn alpha_zero_is_identity_up_to_phase() {
        let c = beamsplitter_config(0.0, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap();
        let op = compose_qfp(&c).unwrap();
        let k = guard_bins(FIFTY_FIFTY_DEPTH).unwrap();
        assert!(
            op.interior_distance(&ModeOperator::identity(c.lattice), k)
                .unwrap()
                < 1e-10
        );
    }

    #[test]
    fn target_unitary_examples() {
        let u = target_unitary(0.0, 0.0, 0.0);
        assert_eq!(
            u,
            Matrix2::new(1.0, 0.0, 0.0, -1.0).map(|x| Complex64::new(x, 0.0))
        );
        let h = target_unitary(PI / 2.0, 0.0, 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h - Matrix2::new(s, s, s, -s).map(|x| Complex64::new(x, 0.0))).norm() < 1e-15);
        let u = target_unitary(0.7, 1.1, -0.4);
        assert!((u.adjoint() * u - TwoByTwo::identity()).norm() < 1e-15);
    }

    #[test]
    fn fidelity_properties() {
        let u = target_unitary(1.0, 0.3, 0.2);
        assert!((fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        let v = u * Complex64::from_polar(0.5, 1.234);
        assert!((fidelity(&v, &u).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(
            fidelity(&TwoByTwo::zeros(), &u),
            Err(Error::UndefinedFidelity)
        );
        assert_eq!(success_probability(&TwoByTwo::identity()), 1.0);
    }

    #[test]
    fn alpha_inversion_round_trip() {
        let d = FIFTY_FIFTY_DEPTH;
        for i in 0..=10 {
            let theta = i as f64 * 0.15;
            let a = alpha_for_theta(theta, d).unwrap();
            let (r, t) = rt_closed_form(a, d).unwrap();
            assert!((splitting_angle(r, t) - theta).abs() < 1e-9, "{theta}");
        }
        assert_eq!(alpha_for_theta(PI / 2.0, d).unwrap(), PI);
        assert!(matches!(
            alpha_for_theta(2.0, d),
            Err(Error::OutOfRange { .. })
        ));
        assert!(alpha_for_theta(-0.1, d).is_err());
    }

    #[test]
    fn synthesized_gates_reach_targets() {
        let l = lattice(1.0);
        let d = FIFTY_FIFTY_DEPTH;
        let base = synthesize_gate(PI / 2.0, 0.0, 0.0, d, l, BINS).unwrap();
        assert_eq!(base, beamsplitter_config(PI, d, l, BINS).unwrap());
        for (lam, mu) in [(PI / 2.0, 0.0), (0.0, PI / 2.0), (0.7, -1.2)] {
            let v = v_of(&synthesize_gate(PI / 2.0, lam, mu, d, l, BINS).unwrap());
            let f = fidelity(&v, &target_unitary(PI / 2.0, lam, mu)).unwrap();
            assert!(f >= 0.999, "({lam}, {mu}): {f}");
        }
    }

    #[test]
    fn gates_across_the_reachable_range() {
        let l = lattice(1.0);
        for i in 0..=6 {
            let theta = i as f64 * 0.25;
            let v = v_of(&synthesize_gate(theta, 0.4, -0.9, FIFTY_FIFTY_DEPTH, l, BINS).unwrap());
            let f = fidelity(&v, &target_unitary(theta, 0.4, -0.9)).unwrap();
            assert!(f > 0.98, "theta={theta}: {f}");
        }
        let v = v_of(&synthesize_gate(0.0, 0.0, 0.0, FIFTY_FIFTY_DEPTH, l, BINS).unwrap());
        assert!((fidelity(&v, &target_unitary(0.0, 0.0, 0.0)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_matrix_has_no_intrinsic_z_phase() {
        let v = Matrix2::new(0.7, 0.69, 0.69, -0.7).map(|x| Complex64::new(x, 0.0));
        assert_eq!(intrinsic_z_phases(&v, PI / 2.0), (0.0, 0.0));
        let u = target_unitary(1.2, 0.5, -0.8);
        let (l, m) = intrinsic_z_phases(&u, 1.2);
        assert!((l - 0.5).abs() < 1e-9 && (m + 0.8).abs() < 1e-9);
    }

    #[test]
    fn synthesis_is_diagonal_conjugation() {
        let l = lattice(1.0);
        let d = FIFTY_FIFTY_DEPTH;
        let (theta, lam, mu) = (1.0, 0.9, -0.5);
        let v0 = v_of(&synthesize_gate(theta, 0.0, 0.0, d, l, BINS).unwrap());
        let v = v_of(&synthesize_gate(theta, lam, mu, d, l, BINS).unwrap());
        let left = Matrix2::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::cis(mu),
        );
        let right = Matrix2::new(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::cis(lam),
        );
        let expected = left * v0 * right;
        // Equal up to one global phase.
        let ph = v[(0, 0)] / expected[(0, 0)];
        assert!((ph.norm() - 1.0).abs() < 1e-9);
        assert!((v - expected * ph).norm() < 1e-9);
    }

    #[test]
    fn output_spectrum_routing() {
        let l = lattice(1.0);
        let c = beamsplitter_config(PI, FIFTY_FIFTY_DEPTH, l, [2, 3]).unwrap();
        let p = simulate_output_spectrum(&c, &ProbeInput::Bin0.amplitudes(&l, [2, 3]).unwrap())
            .unwrap();
        let (i2, i3) = (l.index_of(2).unwrap(), l.index_of(3).unwrap());
        assert!((0.47..=0.50).contains(&p[i2]) && (0.47..=0.50).contains(&p[i3]));
        let other = p
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != i2 && *i != i3)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(other * 10.0 < p[i2].min(p[i3]));

        let g0 = simulate_output_spectrum(
            &c,
            &ProbeInput::Superposition { gamma_rad: 0.0 }
                .amplitudes(&l, [2, 3])
                .unwrap(),
        )
        .unwrap();
        let gpi = simulate_output_spectrum(
            &c,
            &ProbeInput::Superposition { gamma_rad: PI }
                .amplitudes(&l, [2, 3])
                .unwrap(),
        )
        .unwrap();
        assert!(g0[i2] > 10.0 * g0[i3]);
        assert!(gpi[i3] > 10.0 * gpi[i2]);

        let off = single_pm_config(0.0, l, [2, 3]);
        let input = ProbeInput::Superposition { gamma_rad: 0.4 }
            .amplitudes(&l, [2, 3])
            .unwrap();
        let p = simulate_output_spectrum(&off, &input).unwrap();
        for (a, b) in p.iter().zip(&input) {
            assert!((a - b.norm_sqr()).abs() < 1e-15);
        }
        assert!(simulate_output_spectrum(&off, &vec![Complex64::new(1.0, 0.0); l.len()]).is_err());
    }

    #[test]
    fn reconstruction_four_gamma_recovers_any_v() {
        let v = Matrix2::new(
            Complex64::new(0.6, 0.2),
            Complex64::new(-0.3, 0.5),
            Complex64::new(0.1, -0.7),
            Complex64::new(0.4, 0.35),
        );
        let spectra = spectra_from(&v, &[0.0, 0.5 * PI, PI, 1.5 * PI]);
        let rec = reconstruct_submatrix(&spectra).unwrap();
        assert!(!rec.sign_ambiguous);
        assert!((rec.v - gauge_fix(&v)).camax() < 1e-12);
    }

    #[test]
    fn reconstruction_two_gamma_real_and_conjugate() {
        let v = v_of(&beamsplitter_config(PI, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap());
        let rec = reconstruct_submatrix(&spectra_from(&v, &[0.0, PI])).unwrap();
        assert!(rec.sign_ambiguous);
        assert!((rec.v - gauge_fix(&v)).camax() < 1e-6);
        assert!(fidelity(&rec.v, &target_unitary(PI / 2.0, 0.0, 0.0)).unwrap() >= 0.999);

        let u = target_unitary(1.1, 0.6, -0.3);
        let rec = reconstruct_submatrix(&spectra_from(&u, &[0.0, PI])).unwrap();
        let g = gauge_fix(&u);
        let err = (rec.v - g)
            .camax()
            .min((rec.v - g.map(|z| z.conj())).camax());
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn reconstruction_identity_and_inconsistency() {
        let id = TwoByTwo::identity();
        let rec = reconstruct_submatrix(&spectra_from(&id, &[0.0, PI])).unwrap();
        assert!((rec.v - id).camax() < 1e-12);
        let mut bad = spectra_from(&id, &[0.0, PI]);
        bad[2].powers[0] = 0.9;
        assert!(matches!(
            reconstruct_submatrix(&bad),
            Err(Error::ReconstructionFailure { .. })
        ));
    }

    fn spectra_from(v: &TwoByTwo, gammas: &[f64]) -> Vec<LabeledSpectrum> {
        let mut out = vec![
            LabeledSpectrum {
                input: ProbeInput::Bin0,
                powers: [v[(0, 0)].norm_sqr(), v[(1, 0)].norm_sqr()],
            },
            LabeledSpectrum {
                input: ProbeInput::Bin1,
                powers: [v[(0, 1)].norm_sqr(), v[(1, 1)].norm_sqr()],
            },
        ];
        for &g in gammas {
            let e = Complex64::cis(g);
            let p = |m: usize| 0.5 * (v[(m, 0)] + e * v[(m, 1)]).norm_sqr();
            out.push(LabeledSpectrum {
                input: ProbeInput::Superposition { gamma_rad: g },
                powers: [p(0), p(1)],
            });
        }
        out
    }

    #[test]
    fn reconstruction_from_simulated_spectra() {
        let c = synthesize_gate(
            PI / 2.0,
            PI / 2.0,
            0.0,
            FIFTY_FIFTY_DEPTH,
            lattice(1.0),
            BINS,
        )
        .unwrap();
        let spectra = reconstruction_spectra(&c, &[0.0, 0.5 * PI, PI, 1.5 * PI]).unwrap();
        let rec = reconstruct_submatrix(&spectra).unwrap();
        assert!((rec.v - gauge_fix(&v_of(&c))).camax() < 1e-12);
    }

    #[test]
    fn success_probability_over_sweep() {
        let alphas: Vec<f64> = (0..=32).map(|i| PI + i as f64 * PI / 32.0).collect();
        let rows = alpha_sweep(&alphas, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].r_closed >= w[0].r_closed - 1e-15);
            assert!(w[1].t_closed <= w[0].t_closed + 1e-15);
        }
        assert!(rows.iter().all(|r| r.success_probability > 0.94));
        assert!(rows.iter().all(|r| (r.r_matrix - r.r_closed).abs() < 1e-6));
        assert!(
            rows.iter().all(|r| r.fidelity > 0.98),
            "{:?}",
            rows.iter().map(|r| r.fidelity).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_modulator_balanced_split_is_lossy() {
        let l = lattice(2.0);
        // 1-D sweep for |V_00|^2 = |V_10|^2.
        let ratio = |d: f64| {
            let v = v_of(&single_pm_config(d, l, BINS));
            v[(1, 0)].norm_sqr() - v[(0, 0)].norm_sqr()
        };
        let (mut lo, mut hi) = (0.5, 2.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = v_of(&single_pm_config(lo, l, BINS));
        let p = success_probability(&v);
        assert!((lo - 1.4347).abs() < 1e-3, "{lo}");
        assert!(p < 0.70, "{p}");
    }

    #[test]
    fn physical_model_loss_normalization() {
        let mut c = beamsplitter_config(PI, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap();
        c.ws.model = WsModel::Physical;
        let raw = success_probability(&v_of(&c));
        let per_bin = normalized_success_probability(&c, LossNormalization::PerBin).unwrap();
        let agg = normalized_success_probability(&c, LossNormalization::Aggregate).unwrap();
        assert!(raw < per_bin && raw < agg);
        assert!(per_bin > 0.5 && agg > 0.5);
    }

    #[test]
    fn config_rejects_non_adjacent_bins() {
        let l = lattice(1.0);
        assert!(beamsplitter_config(PI, 0.8, l, [0, 2]).is_err());
        assert!(beamsplitter_config(PI, 0.8, l, [13, 14]).is_err());
        let bad = single_pm_config(0.8, l, [0, 2]);
        assert!(matches!(compose_qfp(&bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_serde_round_trip() {
        let c = synthesize_gate(1.0, 0.2, 0.3, FIFTY_FIFTY_DEPTH, lattice(1.0), BINS).unwrap();
        let s = serde_json_like(&c);
        assert_eq!(c, s);
    }

    fn serde_json_like(c: &ProcessorConfig) -> ProcessorConfig {
        let json = serde_json::to_string(c).unwrap();
        serde_json::from_str(&json).unwrap()
    }
}
