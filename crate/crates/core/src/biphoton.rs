//! Biphoton frequency combs and their walks through the processor.
//!
//! Signal and idler bin `l` sit symmetrically about the pump, so the idler
//! sees the modulator with its frequency axis reversed: the idler operator is
//! the index-mirrored signal operator.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eom::{eom_operator, guard_bins, RfDrive};
use crate::error::{Error, Result};
use crate::lattice::{make_lattice, FrequencyLattice};
use crate::operator::ModeOperator;
use crate::optim::{levenberg_marquardt, nelder_mead, NelderMeadOptions};
use crate::rings::PumpFilter;

/// Source comb spacing of the reference device, Hz.
pub const SOURCE_SPACING: f64 = 15.34e9;

/// Anticorrelated-walk idler pattern on bins 1..=4.
pub const ANTICORRELATED_PATTERN: [f64; 4] = [-0.5 * PI, 0.5 * PI, -0.5 * PI, 0.5 * PI];

/// Bins whose JSI is measured.
pub const MEASUREMENT_WINDOW: [i64; 2] = [1, 4];

/// Amplitudes `beta_l` of `sum_l beta_l |l, l>`, for source bins `l = 0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiphotonState {
    amplitudes: Vec<Complex64>,
}

impl BiphotonState {
    /// Normalizes `amplitudes`.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if amplitudes.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid(
                "biphoton amplitudes must be finite and not all zero",
            ));
        }
        Ok(BiphotonState {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Magnitudes with phases `Arg(beta_l)`.
    pub fn from_polar(magnitudes: &[f64], phases: &[f64]) -> Result<Self> {
        if magnitudes.len() != phases.len() {
            return Err(Error::invalid("magnitudes and phases differ in length"));
        }
        Self::new(
            magnitudes
                .iter()
                .zip(phases)
                .map(|(&m, &p)| Complex64::from_polar(m, p))
                .collect(),
        )
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.arg()).collect()
    }

    /// Multiplies idler bins 1..=4 by `exp(i phases)`.
    pub fn with_idler_phases(&self, phases: &[f64; 4]) -> Self {
        let mut amplitudes = self.amplitudes.clone();
        for (k, p) in phases.iter().enumerate() {
            if let Some(a) = amplitudes.get_mut(k + 1) {
                *a *= Complex64::cis(*p);
            }
        }
        BiphotonState { amplitudes }
    }
}

/// Where the source bins sit relative to the pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombGeometry {
    /// Signal detuning of source bin 0 from the pump.
    #[serde(rename = "first_offset_hz")]
    pub first_offset: f64,
    #[serde(rename = "spacing_hz")]
    pub spacing: f64,
}

impl CombGeometry {
    /// Bin 0 on a pump-filter transmission peak (750 GHz = 1.5 FSR), 15.34 GHz spacing.
    pub fn reference() -> Self {
        CombGeometry {
            first_offset: 750e9,
            spacing: SOURCE_SPACING,
        }
    }

    /// Signal detuning of bin `l`; the idler sits at minus this.
    pub fn signal_offset(&self, l: usize) -> f64 {
        self.first_offset + l as f64 * self.spacing
    }
}

/// Comb whose magnitudes follow the pump-filter envelope and whose phases are zero.
pub fn comb_state(
    n_bins: usize,
    pf: &PumpFilter,
    geometry: &CombGeometry,
) -> Result<BiphotonState> {
    if n_bins < 2 {
        return Err(Error::invalid(format!(
            "a comb needs at least 2 bins, got {n_bins}"
        )));
    }
    let mags = (0..n_bins)
        .map(|l| {
            let nu = geometry.signal_offset(l);
            Ok((pf.transmission(nu)? * pf.transmission(-nu)?).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    BiphotonState::from_polar(&mags, &vec![0.0; n_bins])
}

/// Filter phase offset and scale fitted to measured `|beta_l|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub phase_offset: f64,
    pub scale: f64,
    pub residual_rms: f64,
}

fn envelope_model(
    pf: &PumpFilter,
    geometry: &CombGeometry,
    offset: f64,
    scale: f64,
    l: usize,
) -> f64 {
    let f = PumpFilter {
        phase_offset: offset,
        ..*pf
    };
    let nu = geometry.signal_offset(l);
    // The filter was validated on construction, so transmission cannot fail here.
    scale * f.transmission(nu).unwrap_or(0.0) * f.transmission(-nu).unwrap_or(0.0)
}

/// Fits the filter's phase offset (FSR and extinction fixed) to `(l, |beta_l|^2)` data.
pub fn fit_envelope(
    points: &[(usize, f64)],
    pf: &PumpFilter,
    geometry: &CombGeometry,
) -> Result<EnvelopeFit> {
    if points.len() < 2 {
        return Err(Error::invalid("envelope fit needs at least 2 points"));
    }
    pf.transmission(0.0)?;
    let residuals = |p: &[f64]| -> Vec<f64> {
        points
            .iter()
            .map(|&(l, y)| envelope_model(pf, geometry, p[0], p[1], l) - y)
            .collect()
    };
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..16 {
        let start = [
            pf.phase_offset + (i as f64 - 8.0) * PI / 16.0,
            mean.max(1e-12),
        ];
        let fit = levenberg_marquardt(residuals, &start, 300);
        let ss = fit.sum_of_squares();
        if best.as_ref().is_none_or(|b| ss < b.0) {
            best = Some((ss, fit.x));
        }
    }
    let (ss, x) = best.expect("at least one start");
    Ok(EnvelopeFit {
        phase_offset: x[0],
        scale: x[1],
        residual_rms: (ss / points.len() as f64).sqrt(),
    })
}

/// `|beta_l|^2` predicted by an envelope fit.
pub fn extrapolate_envelope(
    fit: &EnvelopeFit,
    pf: &PumpFilter,
    geometry: &CombGeometry,
    l: usize,
) -> f64 {
    envelope_model(pf, geometry, fit.phase_offset, fit.scale, l)
}

/// Complex signal x idler amplitude over a lattice window (rows signal, columns idler).
#[derive(Debug, Clone, PartialEq)]
pub struct JointAmplitude {
    pub lattice: FrequencyLattice,
    pub a: DMatrix<Complex64>,
}

impl JointAmplitude {
    pub fn total_probability(&self) -> f64 {
        self.a.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn element(&self, signal: i64, idler: i64) -> Option<Complex64> {
        Some(
            self.a[(
                self.lattice.index_of(signal)?,
                self.lattice.index_of(idler)?,
            )],
        )
    }

    /// Multiplies idler columns 1..=4 by `exp(i phases)`.
    pub fn with_idler_phases(&self, phases: &[f64; 4]) -> Self {
        let mut a = self.a.clone();
        for (k, p) in phases.iter().enumerate() {
            if let Some(c) = self.lattice.index_of(k as i64 + 1) {
                let f = Complex64::cis(*p);
                a.column_mut(c).iter_mut().for_each(|z| *z *= f);
            }
        }
        JointAmplitude {
            lattice: self.lattice,
            a,
        }
    }
}

fn embed(state: &BiphotonState, lattice: &FrequencyLattice) -> Result<Vec<Complex64>> {
    let mut v = vec![Complex64::new(0.0, 0.0); lattice.len()];
    for (l, b) in state.amplitudes.iter().enumerate() {
        let i = lattice
            .index_of(l as i64)
            .ok_or_else(|| Error::invalid(format!("source bin {l} outside the lattice window")))?;
        v[i] = *b;
    }
    Ok(v)
}

/// `A[m, n] = sum_l S[m, l] I[n, l] beta_l`.
pub fn apply_joint(
    op_signal: &ModeOperator,
    op_idler: &ModeOperator,
    state: &BiphotonState,
) -> Result<JointAmplitude> {
    let lattice = *op_signal.lattice();
    if !lattice.same_grid(op_idler.lattice()) {
        return Err(Error::invalid(
            "signal and idler operators live on different windows",
        ));
    }
    let support: Vec<(usize, Complex64)> = embed(state, &lattice)?
        .into_iter()
        .enumerate()
        .filter(|(_, b)| *b != Complex64::new(0.0, 0.0))
        .collect();
    let n = lattice.len();
    let (s, idl) = (op_signal.entries(), op_idler.entries());
    // Pairing the operator entries before scaling keeps A exactly symmetric when S = I.
    let a = DMatrix::from_fn(n, n, |m, k| {
        support
            .iter()
            .map(|&(l, b)| (s[(m, l)] * idl[(k, l)]) * b)
            .sum()
    });
    Ok(JointAmplitude { lattice, a })
}

/// Window wide enough for `n_bins` source bins walking at depth `delta`.
pub fn walk_lattice(n_bins: usize, delta: f64) -> Result<FrequencyLattice> {
    let hw = n_bins + guard_bins(delta)? + 2;
    make_lattice(0.0, SOURCE_SPACING, hw)
}

/// One modulator acting on both photons: signal sees `eom(delta)`, idler its mirror image.
pub fn walk(
    state: &BiphotonState,
    delta: f64,
    lattice: &FrequencyLattice,
) -> Result<JointAmplitude> {
    let s = eom_operator(&RfDrive::new(delta, 0.0, lattice.spacing()), lattice)?;
    let i = s.mirrored()?;
    apply_joint(&s, &i, state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsiNormalization {
    /// Largest entry equals 1.
    Max,
    /// Entries sum to 1.
    Integral,
}

/// `|A|^2` on the square sub-window `window[0]..=window[1]` (both axes).
pub fn jsi(a: &JointAmplitude, window: [i64; 2], norm: JsiNormalization) -> Result<DMatrix<f64>> {
    let [lo, hi] = window;
    if hi < lo {
        return Err(Error::invalid("empty JSI window"));
    }
    let idx = |b: i64| {
        a.lattice.index_of(b).ok_or_else(|| {
            Error::invalid(format!("JSI window bin {b} outside the amplitude window"))
        })
    };
    let k = (hi - lo + 1) as usize;
    let mut m = DMatrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            m[(r, c)] = a.a[(idx(lo + r as i64)?, idx(lo + c as i64)?)].norm_sqr();
        }
    }
    normalize(m, norm)
}

fn normalize(mut m: DMatrix<f64>, norm: JsiNormalization) -> Result<DMatrix<f64>> {
    let scale = match norm {
        JsiNormalization::Max => m.iter().copied().fold(0.0, f64::max),
        JsiNormalization::Integral => m.sum(),
    };
    if !(scale > 0.0) {
        return Err(Error::invalid("JSI is identically zero on the window"));
    }
    m /= scale;
    Ok(m)
}

/// Fraction of the JSI on the main diagonal.
pub fn diagonal_weight(jsi: &DMatrix<f64>) -> f64 {
    jsi.trace() / jsi.sum()
}

/// Cosine similarity of the flattened matrices.
pub fn jsi_fidelity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::invalid("JSI matrices differ in shape"));
    }
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::invalid("JSI fidelity of a zero matrix"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(0.0, 1.0))
}

/// Joint amplitude restricted to a window, from precomputed operator rows.
struct WindowedWalk {
    /// `signal[(m, l)]` for window rows and source bins.
    signal: DMatrix<Complex64>,
    idler: DMatrix<Complex64>,
}

impl WindowedWalk {
    fn new(delta: f64, n_bins: usize, window: [i64; 2]) -> Result<Self> {
        let lattice = walk_lattice(n_bins, delta)?;
        let s = eom_operator(&RfDrive::new(delta, 0.0, lattice.spacing()), &lattice)?;
        let i = s.mirrored()?;
        let k = (window[1] - window[0] + 1) as usize;
        let pick = |op: &ModeOperator| -> Result<DMatrix<Complex64>> {
            let mut m = DMatrix::zeros(k, n_bins);
            for r in 0..k {
                for l in 0..n_bins {
                    m[(r, l)] = op
                        .element(window[0] + r as i64, l as i64)
                        .ok_or_else(|| Error::invalid("JSI window outside the walk lattice"))?;
                }
            }
            Ok(m)
        };
        Ok(WindowedWalk {
            signal: pick(&s)?,
            idler: pick(&i)?,
        })
    }

    fn jsi(&self, beta: &[Complex64]) -> DMatrix<f64> {
        let k = self.signal.nrows();
        DMatrix::from_fn(k, k, |m, n| {
            beta.iter()
                .enumerate()
                .map(|(l, b)| self.signal[(m, l)] * self.idler[(n, l)] * b)
                .sum::<Complex64>()
                .norm_sqr()
        })
    }
}

/// One measured JSI together with the idler phase pattern it was taken with.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalDataset {
    pub measured: DMatrix<f64>,
    pub idler_phases: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalOptions {
    pub delta: f64,
    pub window: [i64; 2],
    pub restarts: usize,
    pub seed: u64,
}

impl RetrievalOptions {
    pub fn reference(delta: f64) -> Self {
        RetrievalOptions {
            delta,
            window: MEASUREMENT_WINDOW,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrieval {
    /// `Arg(beta_l)` with `Arg(beta_0) = 0`.
    pub phases: Vec<f64>,
    /// Mean JSI fidelity over the datasets at the optimum.
    pub fidelity: f64,
    pub per_dataset: Vec<f64>,
    pub starts_converged: usize,
}

/// Finds the source phases that best reproduce the measured JSIs.
///
/// A single JSI cannot tell `beta` from its complex conjugate (the walk
/// operators are real), so datasets taken with different idler patterns
/// should be fitted together.
pub fn retrieve_phases(
    datasets: &[RetrievalDataset],
    magnitudes: &[f64],
    opts: &RetrievalOptions,
) -> Result<PhaseRetrieval> {
    if datasets.is_empty() {
        return Err(Error::invalid("no JSI datasets"));
    }
    let n = magnitudes.len();
    if n < 2 {
        return Err(Error::invalid("need at least two source bins"));
    }
    let walk = WindowedWalk::new(opts.delta, n, opts.window)?;
    let k = walk.signal.nrows();
    for d in datasets {
        if d.measured.shape() != (k, k) {
            return Err(Error::invalid(format!("measured JSI must be {k}x{k}")));
        }
    }
    let base = BiphotonState::from_polar(magnitudes, &vec![0.0; n])?;
    let fidelities = |free: &[f64]| -> Vec<f64> {
        let mut phases = vec![0.0];
        phases.extend_from_slice(free);
        datasets
            .iter()
            .map(|d| {
                let beta: Vec<Complex64> = base
                    .amplitudes
                    .iter()
                    .zip(&phases)
                    .map(|(b, p)| b * Complex64::cis(*p))
                    .collect();
                let state = BiphotonState { amplitudes: beta }.with_idler_phases(&d.idler_phases);
                jsi_fidelity(&walk.jsi(&state.amplitudes), &d.measured).unwrap_or(0.0)
            })
            .collect()
    };
    let objective = |free: &[f64]| -> f64 {
        let f = fidelities(free);
        1.0 - f.iter().sum::<f64>() / f.len() as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; n - 1]];
    for _ in 0..opts.restarts {
        starts.push((0..n - 1).map(|_| rng.random_range(-PI..PI)).collect());
    }
    let nm = NelderMeadOptions {
        max_iterations: 20_000,
        f_tol: 1e-13,
        x_tol: 1e-8,
        initial_step: 0.3,
    };
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| nelder_mead(objective, x0, &nm))
        .collect();
    let converged = results.iter().filter(|m| m.converged).count();
    let best = results
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    let mut phases = vec![0.0];
    phases.extend(best.x.iter().map(|p| crate::calib::wrap_phase(*p)));
    let per_dataset = fidelities(&best.x);
    let fidelity = per_dataset.iter().sum::<f64>() / per_dataset.len() as f64;
    if converged == 0 {
        return Err(Error::RetrievalFailure {
            best_fidelity: fidelity,
            best_phases: phases,
        });
    }
    Ok(PhaseRetrieval {
        phases,
        fidelity,
        per_dataset,
        starts_converged: converged,
    })
}

/// Simulated integral-normalized JSI on `window` for a walk at `delta`.
pub fn simulate_jsi(state: &BiphotonState, delta: f64, window: [i64; 2]) -> Result<DMatrix<f64>> {
    let lattice = walk_lattice(state.len(), delta)?;
    jsi(
        &walk(state, delta, &lattice)?,
        window,
        JsiNormalization::Integral,
    )
}

/// Poisson coincidence counts with a uniform accidental floor.
///
/// `jsi` is normalized to unit sum; the floor is `mean(diag) / car` per bin.
pub fn poisson_counts(
    jsi: &DMatrix<f64>,
    total_pairs: u64,
    car: f64,
    seed: u64,
) -> Result<DMatrix<u64>> {
    if total_pairs == 0 {
        return Err(Error::invalid("total_pairs must be positive"));
    }
    if !(car > 0.0) {
        return Err(Error::invalid(format!("CAR must be positive, got {car}")));
    }
    let p = normalize(jsi.clone(), JsiNormalization::Integral)?;
    let k = p.nrows().min(p.ncols());
    let diag_mean = (0..k).map(|i| p[(i, i)]).sum::<f64>() / k as f64;
    let floor = if car.is_infinite() {
        0.0
    } else {
        diag_mean / car
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(p.nrows(), p.ncols());
    // Column-major order fixes the draw sequence.
    for (o, v) in out.iter_mut().zip(p.iter()) {
        let mean = total_pairs as f64 * (v + floor);
        *o = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as u64
        } else {
            0
        };
    }
    Ok(out)
}

/// Diagonal CAR estimate: diagonal excess over the mean off-diagonal (accidental) level.
pub fn estimate_car(counts: &DMatrix<u64>) -> Option<f64> {
    let k = counts.nrows();
    let (mut diag, mut off, mut n_off) = (0.0, 0.0, 0usize);
    for r in 0..k {
        for c in 0..counts.ncols() {
            if r == c {
                diag += counts[(r, c)] as f64;
            } else {
                off += counts[(r, c)] as f64;
                n_off += 1;
            }
        }
    }
    let acc = off / n_off as f64;
    (acc > 0.0).then(|| (diag / k as f64 - acc) / acc)
}

/// Counts as a JSI (unit sum).
pub fn counts_to_jsi(counts: &DMatrix<u64>) -> Result<DMatrix<f64>> {
    normalize(counts.map(|c| c as f64), JsiNormalization::Integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DELTA: f64 = 0.8;

    fn device_state() -> BiphotonState {
        comb_state(6, &PumpFilter::reference(), &CombGeometry::reference()).unwrap()
    }

    #[test]
    fn flat_filter_gives_uniform_comb() {
        let flat = PumpFilter {
            fsr: 1e18,
            extinction: 30.0,
            phase_offset: 0.5 * PI,
        };
        let s = comb_state(4, &flat, &CombGeometry::reference()).unwrap();
        for m in s.magnitudes() {
            assert!((m - 0.5).abs() < 1e-9);
        }
        assert!(comb_state(1, &flat, &CombGeometry::reference()).is_err());
    }

    #[test]
    fn envelope_decreases_monotonically() {
        let m = device_state().magnitudes();
        assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
        let norm: f64 = m.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_extrapolation_consistent_with_model() {
        let pf = PumpFilter::reference();
        let g = CombGeometry::reference();
        let s = device_state();
        let mags = s.magnitudes();
        let pts: Vec<(usize, f64)> = (1..=4).map(|l| (l, mags[l] * mags[l])).collect();
        let fit = fit_envelope(&pts, &pf, &g).unwrap();
        for l in [0, 5] {
            let pred = extrapolate_envelope(&fit, &pf, &g, l);
            assert!(
                (pred - mags[l] * mags[l]).abs() < 1e-6 * mags[0] * mags[0],
                "bin {l}"
            );
        }
    }

    #[test]
    fn identity_operators_keep_diagonal() {
        let s = device_state();
        let l = walk_lattice(6, DELTA).unwrap();
        let id = ModeOperator::identity(l);
        let a = apply_joint(&id, &id, &s).unwrap();
        let j = jsi(&a, [0, 5], JsiNormalization::Integral).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let expected = if r == c {
                    s.amplitudes()[r].norm_sqr()
                } else {
                    0.0
                };
                assert!((j[(r, c)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn walk_conserves_probability_and_is_symmetric() {
        let s = device_state();
        let l = walk_lattice(6, DELTA).unwrap();
        let a = walk(&s, DELTA, &l).unwrap();
        assert!((a.total_probability() - 1.0).abs() < 1e-10);
        // Identical operators on both axes give a symmetric amplitude.
        let eom = eom_operator(&RfDrive::new(DELTA, 0.0, SOURCE_SPACING), &l).unwrap();
        let b = apply_joint(&eom, &eom, &s).unwrap();
        let n = l.len();
        for r in 0..n {
            for c in 0..n {
                assert!((b.a[(r, c)] - b.a[(c, r)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn walk_dichotomy() {
        let s = device_state();
        let initial = diagonal_weight(
            &jsi(
                &apply_joint(
                    &ModeOperator::identity(walk_lattice(6, DELTA).unwrap()),
                    &ModeOperator::identity(walk_lattice(6, DELTA).unwrap()),
                    &s,
                )
                .unwrap(),
                MEASUREMENT_WINDOW,
                JsiNormalization::Integral,
            )
            .unwrap(),
        );
        let corr = diagonal_weight(&simulate_jsi(&s, DELTA, MEASUREMENT_WINDOW).unwrap());
        let anti = diagonal_weight(
            &simulate_jsi(
                &s.with_idler_phases(&ANTICORRELATED_PATTERN),
                DELTA,
                MEASUREMENT_WINDOW,
            )
            .unwrap(),
        );
        assert_eq!(initial, 1.0);
        assert!(corr < initial);
        assert!(anti > corr + 0.2, "anti {anti} corr {corr}");
    }

    #[test]
    fn idler_pattern_makes_adjacent_pi_steps() {
        let s = device_state().with_idler_phases(&ANTICORRELATED_PATTERN);
        let p = s.phases();
        for l in 1..4 {
            let d = crate::calib::wrap_phase(p[l + 1] - p[l]);
            assert!((d.abs() - PI).abs() < 1e-12);
        }
        assert_eq!(device_state().with_idler_phases(&[0.0; 4]), device_state());
    }

    #[test]
    fn uniform_idler_offset_leaves_jsi_unchanged() {
        let s = device_state();
        let l = walk_lattice(6, DELTA).unwrap();
        let a = walk(&s, DELTA, &l).unwrap();
        let j0 = jsi(&a, [-3, 8], JsiNormalization::Max).unwrap();
        let j1 = jsi(
            &a.with_idler_phases(&[0.0; 4]),
            [-3, 8],
            JsiNormalization::Max,
        )
        .unwrap();
        assert_eq!(j0, j1);
        // A global phase on the state is invisible.
        let g = BiphotonState::new(
            s.amplitudes()
                .iter()
                .map(|b| b * Complex64::cis(0.7))
                .collect(),
        )
        .unwrap();
        let j2 = simulate_jsi(&g, DELTA, MEASUREMENT_WINDOW).unwrap();
        let j3 = simulate_jsi(&s, DELTA, MEASUREMENT_WINDOW).unwrap();
        assert!((j2 - j3).amax() < 1e-15);
    }

    #[test]
    fn jsi_fidelity_properties() {
        let j = simulate_jsi(&device_state(), DELTA, MEASUREMENT_WINDOW).unwrap();
        assert!((jsi_fidelity(&j, &j).unwrap() - 1.0).abs() < 1e-15);
        assert!((jsi_fidelity(&j, &(&j * 3.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(jsi_fidelity(&j, &DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn phase_jitter_keeps_high_fidelity() {
        let s = device_state();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phases: Vec<f64> = (0..6).map(|_| rng.random_range(-0.1..0.1)).collect();
        let jittered = BiphotonState::from_polar(&s.magnitudes(), &phases).unwrap();
        let f = jsi_fidelity(
            &simulate_jsi(&s, DELTA, MEASUREMENT_WINDOW).unwrap(),
            &simulate_jsi(&jittered, DELTA, MEASUREMENT_WINDOW).unwrap(),
        )
        .unwrap();
        assert!(f >= 0.99, "{f}");
    }

    fn datasets(state: &BiphotonState) -> Vec<RetrievalDataset> {
        [[0.0; 4], ANTICORRELATED_PATTERN]
            .iter()
            .map(|p| RetrievalDataset {
                measured: simulate_jsi(&state.with_idler_phases(p), DELTA, MEASUREMENT_WINDOW)
                    .unwrap(),
                idler_phases: *p,
            })
            .collect()
    }

    #[test]
    fn retrieval_of_zero_phases() {
        let s = device_state();
        let r = retrieve_phases(
            &datasets(&s),
            &s.magnitudes(),
            &RetrievalOptions::reference(DELTA),
        )
        .unwrap();
        assert!(r.fidelity > 1.0 - 1e-9);
        assert!(r.phases.iter().all(|p| p.abs() < 0.05), "{:?}", r.phases);
    }

    #[test]
    fn retrieval_of_planted_phases() {
        let s = device_state();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut planted: Vec<f64> = (0..6).map(|_| rng.random_range(-0.1..0.1)).collect();
        planted[0] = 0.0;
        let truth = BiphotonState::from_polar(&s.magnitudes(), &planted).unwrap();
        let r = retrieve_phases(
            &datasets(&truth),
            &s.magnitudes(),
            &RetrievalOptions::reference(DELTA),
        )
        .unwrap();
        assert!(r.fidelity >= 0.999);
        for (got, want) in r.phases.iter().zip(&planted) {
            assert!((got - want).abs() < 0.05, "{:?} vs {planted:?}", r.phases);
        }
    }

    #[test]
    fn poisson_counts_are_seeded_and_scaled() {
        let j = simulate_jsi(&device_state(), DELTA, MEASUREMENT_WINDOW).unwrap();
        let a = poisson_counts(&j, 100_000, 55.0, 5).unwrap();
        assert_eq!(a, poisson_counts(&j, 100_000, 55.0, 5).unwrap());
        assert_ne!(a, poisson_counts(&j, 100_000, 55.0, 6).unwrap());
        let total: u64 = a.iter().sum();
        assert!((total as f64 / 1e5 - 1.0).abs() < 0.05);
        assert!(poisson_counts(&j, 0, 55.0, 1).is_err());
        assert!(poisson_counts(&j, 10, 0.0, 1).is_err());
    }

    #[test]
    fn infinite_car_has_no_floor() {
        let j = DMatrix::from_diagonal_element(4, 4, 0.25);
        let c = poisson_counts(&j, 10_000, f64::INFINITY, 1).unwrap();
        for r in 0..4 {
            for k in 0..4 {
                if r != k {
                    assert_eq!(c[(r, k)], 0);
                }
            }
        }
    }

    #[test]
    fn uniform_jsi_relative_fluctuation() {
        let j = DMatrix::from_element(4, 4, 1.0 / 16.0);
        let c = poisson_counts(&j, 1_000_000, f64::INFINITY, 2).unwrap();
        let mean = 1e6 / 16.0;
        let rel: f64 =
            (c.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 16.0).sqrt() / mean;
        let expected = mean.powf(-0.5);
        assert!(
            rel > 0.4 * expected && rel < 1.8 * expected,
            "{rel} vs {expected}"
        );
    }

    #[test]
    fn car_estimate_on_initial_jsi() {
        let s = device_state();
        let mags = s.magnitudes();
        let j = DMatrix::from_fn(4, 4, |r, c| if r == c { mags[r + 1].powi(2) } else { 0.0 });
        let c = poisson_counts(&j, 1_000_000, 55.0, 7).unwrap();
        let car = estimate_car(&c).unwrap();
        assert!((car - 55.0).abs() < 0.2 * 55.0, "{car}");
    }

    #[test]
    fn noisy_anticorrelated_jsi_stays_close() {
        let s = device_state().with_idler_phases(&ANTICORRELATED_PATTERN);
        let j = simulate_jsi(&s, DELTA, MEASUREMENT_WINDOW).unwrap();
        let c = poisson_counts(&j, 20_000, 55.0, 4).unwrap();
        let f = jsi_fidelity(&counts_to_jsi(&c).unwrap(), &j).unwrap();
        assert!(f >= 0.987, "{f}");
    }
}
