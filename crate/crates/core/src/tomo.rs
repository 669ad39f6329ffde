//! Two-qubit frequency-bin tomography.
//!
//! Basis order is `|signal, idler>`: index `2 s + i`. Superposition analyzers
//! are the balanced projectors `(|0> + e^{i phi}|1>)/sqrt(2)`; the modulator's
//! finite mixing strength enters as a per-photon efficiency `2 |J0 J1|`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bessel::bessel_j;
use crate::biphoton::BiphotonState;
use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};

pub type Ket = Vector4<Complex64>;
pub type Operator4 = Matrix4<Complex64>;

/// Tolerance on the density-matrix invariants.
pub const STATE_TOLERANCE: f64 = 1e-10;

/// Default modulation depth of the analyzing modulator.
pub const DEFAULT_MEASUREMENT_DEPTH: f64 = 0.8169;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Single-photon analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analyzer {
    /// Modulator off, detect bin 0.
    Bin0,
    /// Modulator off, detect bin 1.
    Bin1,
    /// Waveshaper phase `phi` on bin 1, modulator on.
    Phase(f64),
}

impl Analyzer {
    fn ket(&self) -> [Complex64; 2] {
        match *self {
            Analyzer::Bin0 => [ONE, ZERO],
            Analyzer::Bin1 => [ZERO, ONE],
            Analyzer::Phase(phi) => [
                ONE * FRAC_1_SQRT_2,
                Complex64::from_polar(FRAC_1_SQRT_2, phi),
            ],
        }
    }

    fn efficiency(&self, delta_meas: f64) -> Result<f64> {
        match self {
            Analyzer::Phase(_) => superposition_efficiency(delta_meas),
            _ => Ok(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub signal: Analyzer,
    pub idler: Analyzer,
}

/// `{|0>, |1>, |+>, |+i>}` on each photon.
pub fn canonical_settings() -> Vec<MeasurementSetting> {
    let a = [
        Analyzer::Bin0,
        Analyzer::Bin1,
        Analyzer::Phase(0.0),
        Analyzer::Phase(0.5 * PI),
    ];
    a.iter()
        .flat_map(|&s| {
            a.iter().map(move |&i| MeasurementSetting {
                signal: s,
                idler: i,
            })
        })
        .collect()
}

/// Weight of the balanced bin-0/bin-1 superposition after the modulator.
pub fn superposition_efficiency(delta_meas: f64) -> Result<f64> {
    Ok(2.0 * (bessel_j(0, delta_meas)? * bessel_j(1, delta_meas)?).abs())
}

/// Rank-1 projector of a setting with its detection efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: Operator4,
    pub efficiency: f64,
}

pub fn projector(setting: &MeasurementSetting, delta_meas: f64) -> Result<Projector> {
    let (s, i) = (setting.signal.ket(), setting.idler.ket());
    let v = Ket::from_fn(|k, _| s[k / 2] * i[k % 2]);
    Ok(Projector {
        matrix: v * v.adjoint(),
        efficiency: setting.signal.efficiency(delta_meas)?
            * setting.idler.efficiency(delta_meas)?,
    })
}

/// Hermitian, unit-trace, positive semidefinite 4x4 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexRows", into = "ComplexRows")]
pub struct DensityMatrix(Operator4);

/// JSON form: rows of `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexRows(pub Vec<Vec<[f64; 2]>>);

impl From<DensityMatrix> for ComplexRows {
    fn from(rho: DensityMatrix) -> Self {
        ComplexRows(
            (0..4)
                .map(|r| {
                    (0..4)
                        .map(|c| [rho.0[(r, c)].re, rho.0[(r, c)].im])
                        .collect()
                })
                .collect(),
        )
    }
}

impl TryFrom<ComplexRows> for DensityMatrix {
    type Error = Error;

    fn try_from(rows: ComplexRows) -> Result<Self> {
        if rows.0.len() != 4 || rows.0.iter().any(|r| r.len() != 4) {
            return Err(Error::invalid("density matrix must be 4x4"));
        }
        DensityMatrix::new(Operator4::from_fn(|r, c| {
            let [re, im] = rows.0[r][c];
            Complex64::new(re, im)
        }))
    }
}

impl DensityMatrix {
    /// Validates the invariants to `STATE_TOLERANCE`.
    pub fn new(m: Operator4) -> Result<Self> {
        let herm = (m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if !(herm <= STATE_TOLERANCE) {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = m.trace().re;
        if !((tr - 1.0).abs() <= STATE_TOLERANCE) {
            return Err(Error::invalid(format!("trace is {tr}, not 1")));
        }
        let min_eig = eigenvalues(&m).into_iter().fold(f64::INFINITY, f64::min);
        if !(min_eig >= -STATE_TOLERANCE) {
            return Err(Error::invalid(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(DensityMatrix(m))
    }

    pub fn pure(psi: &Ket) -> Result<Self> {
        let n = psi.norm();
        if !(n > 0.0) {
            return Err(Error::invalid("zero state vector"));
        }
        let v = psi / Complex64::new(n, 0.0);
        Ok(DensityMatrix(v * v.adjoint()))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Operator4::identity() * Complex64::new(0.25, 0.0))
    }

    /// `(1 - p) rho + p I/4`.
    pub fn depolarized(&self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("mixing weight {p} outside [0, 1]")));
        }
        Ok(DensityMatrix(
            self.0 * Complex64::new(1.0 - p, 0.0)
                + Operator4::identity() * Complex64::new(p / 4.0, 0.0),
        ))
    }

    pub fn matrix(&self) -> &Operator4 {
        &self.0
    }

    pub fn probability(&self, p: &Operator4) -> f64 {
        (self.0 * p).trace().re.max(0.0)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues(&self.0)
    }
}

fn eigenvalues(m: &Operator4) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().collect()
}

/// Clips negative eigenvalues and renormalizes.
pub fn project_to_state(m: &Operator4) -> Result<DensityMatrix> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("matrix has no positive part"));
    }
    let d = Operator4::from_diagonal(&Vector4::from_fn(|k, _| {
        Complex64::new(vals[k] / total, 0.0)
    }));
    let r = eig.eigenvectors * d * eig.eigenvectors.adjoint();
    Ok(DensityMatrix((r + r.adjoint()) * Complex64::new(0.5, 0.0)))
}

pub fn phi_plus() -> Ket {
    Ket::new(ONE * FRAC_1_SQRT_2, ZERO, ZERO, ONE * FRAC_1_SQRT_2)
}

/// `<psi|rho|psi>` for normalized `psi`.
pub fn state_fidelity(rho: &DensityMatrix, psi: &Ket) -> f64 {
    let v = psi / Complex64::new(psi.norm(), 0.0);
    (v.adjoint() * rho.0 * v)[(0, 0)].re.clamp(0.0, 1.0)
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho.0 * rho.0).trace().re
}

/// Depolarizing weight for guard bands suppressed by `suppression_db`.
pub fn guard_leakage(suppression_db: f64) -> Result<f64> {
    if !(suppression_db > 0.0) {
        return Err(Error::invalid(format!(
            "suppression must be > 0 dB, got {suppression_db}"
        )));
    }
    let eps = 10f64.powf(-suppression_db / 10.0);
    Ok(eps / (1.0 + eps))
}

/// Keeps bins 0 and 1 of both photons; residual guard-band light becomes white noise.
pub fn carve_bell_state(comb: &BiphotonState, suppression_db: f64) -> Result<DensityMatrix> {
    if comb.len() < 4 {
        return Err(Error::invalid("carving needs a comb of at least 4 bins"));
    }
    let b = comb.amplitudes();
    let psi = Ket::new(b[0], ZERO, ZERO, b[1]);
    DensityMatrix::pure(&psi)?.depolarized(guard_leakage(suppression_db)?)
}

/// Accidental probability per outcome: the mean Z-basis diagonal coincidence over `car`.
pub fn accidental_floor(rho: &DensityMatrix, car: f64) -> Result<f64> {
    if !(car > 0.0) {
        return Err(Error::invalid(format!("CAR must be positive, got {car}")));
    }
    if car.is_infinite() {
        return Ok(0.0);
    }
    Ok(0.5 * (rho.0[(0, 0)].re + rho.0[(3, 3)].re) / car)
}

/// Coincidence count of one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub setting: MeasurementSetting,
    pub efficiency: f64,
    pub counts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Counts equal their means.
    Expected,
    Sampled {
        seed: u64,
    },
}

/// Counts with mean `shots * efficiency * (Tr(rho P) + floor)`.
pub fn simulate_counts(
    rho: &DensityMatrix,
    settings: &[MeasurementSetting],
    shots_per_setting: f64,
    car: f64,
    delta_meas: f64,
    mode: CountMode,
) -> Result<Vec<MeasurementRecord>> {
    if !(shots_per_setting > 0.0) {
        return Err(Error::invalid("shots per setting must be positive"));
    }
    let floor = accidental_floor(rho, car)?;
    let mut rng = match mode {
        CountMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CountMode::Expected => None,
    };
    settings
        .iter()
        .map(|s| {
            let p = projector(s, delta_meas)?;
            let mean = shots_per_setting * p.efficiency * (rho.probability(&p.matrix) + floor);
            Ok(MeasurementRecord {
                setting: *s,
                efficiency: p.efficiency,
                counts: sample(mean, rng.as_mut())?,
            })
        })
        .collect()
}

fn sample(mean: f64, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
    match rng {
        None => Ok(mean),
        Some(_) if mean <= 0.0 => Ok(0.0),
        Some(r) => Ok(Poisson::new(mean)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(r)),
    }
}

/// Expected rates versus the idler phase difference, signal analyzer at phase 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellFringe {
    pub dphi: Vec<f64>,
    pub coincidences: Vec<f64>,
    pub signal_singles: Vec<f64>,
    pub idler_singles: Vec<f64>,
    /// Efficiency of the coincidence setting.
    pub efficiency: f64,
}

pub fn bell_fringe(rho: &DensityMatrix, dphi: &[f64], delta_meas: f64) -> Result<BellFringe> {
    if dphi.len() < 2 {
        return Err(Error::invalid("fringe grid needs at least two points"));
    }
    let span = dphi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - dphi.iter().copied().fold(f64::INFINITY, f64::min);
    let step = span / (dphi.len() - 1) as f64;
    if span + step < 2.0 * PI - 1e-9 {
        return Err(Error::invalid("fringe grid must cover a full period"));
    }
    let eta = superposition_efficiency(delta_meas)?;
    let mut out = BellFringe {
        dphi: dphi.to_vec(),
        coincidences: Vec::with_capacity(dphi.len()),
        signal_singles: Vec::with_capacity(dphi.len()),
        idler_singles: Vec::with_capacity(dphi.len()),
        efficiency: eta * eta,
    };
    let sig = Analyzer::Phase(0.0).ket();
    for &d in dphi {
        let idl = Analyzer::Phase(d).ket();
        let setting = MeasurementSetting {
            signal: Analyzer::Phase(0.0),
            idler: Analyzer::Phase(d),
        };
        let p = projector(&setting, delta_meas)?;
        out.coincidences
            .push(p.efficiency * rho.probability(&p.matrix));
        let ps = Operator4::from_fn(|r, c| {
            if r % 2 == c % 2 {
                sig[r / 2] * sig[c / 2].conj()
            } else {
                ZERO
            }
        });
        let pi = Operator4::from_fn(|r, c| {
            if r / 2 == c / 2 {
                idl[r % 2] * idl[c % 2].conj()
            } else {
                ZERO
            }
        });
        out.signal_singles.push(eta * rho.probability(&ps));
        out.idler_singles.push(eta * rho.probability(&pi));
    }
    Ok(out)
}

/// Sampled fringe: `(dphi, coincidences, signal singles, idler singles)` per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeCounts {
    pub dphi: Vec<f64>,
    pub coincidences: Vec<f64>,
    pub signal_singles: Vec<f64>,
    pub idler_singles: Vec<f64>,
}

/// Scales a fringe to `pairs_per_point` with an accidental floor on the coincidences.
pub fn fringe_counts(
    fringe: &BellFringe,
    pairs_per_point: f64,
    floor: f64,
    mode: CountMode,
) -> Result<FringeCounts> {
    let mut rng = match mode {
        CountMode::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CountMode::Expected => None,
    };
    let mut out = FringeCounts {
        dphi: fringe.dphi.clone(),
        coincidences: vec![],
        signal_singles: vec![],
        idler_singles: vec![],
    };
    for k in 0..fringe.dphi.len() {
        let c = pairs_per_point * (fringe.coincidences[k] + fringe.efficiency * floor);
        out.coincidences.push(sample(c, rng.as_mut())?);
        out.signal_singles.push(sample(
            pairs_per_point * fringe.signal_singles[k],
            rng.as_mut(),
        )?);
        out.idler_singles.push(sample(
            pairs_per_point * fringe.idler_singles[k],
            rng.as_mut(),
        )?);
    }
    Ok(out)
}

/// Fit of `B (1 + V cos(dphi + chi))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub phase_offset: f64,
    pub baseline: f64,
    pub visibility_std: f64,
    /// `(V - 1/sqrt 2) / std`.
    pub significance: f64,
    pub violates_bell: bool,
}

/// Linear least squares on `B + a cos + b sin`.
pub fn fit_visibility(points: &[(f64, f64)]) -> Result<VisibilityFit> {
    let n = points.len();
    if n < 8 {
        return Err(Error::invalid(format!(
            "visibility fit needs at least 8 points, got {n}"
        )));
    }
    let min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let step = (max - min) / (n - 1) as f64;
    if max - min + step < 2.0 * PI - 1e-9 {
        return Err(Error::invalid(
            "visibility fit needs points spanning a period",
        ));
    }
    let x = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => 1.0,
        1 => points[r].0.cos(),
        _ => points[r].0.sin(),
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let xtx = x.transpose() * &x;
    let fail = |reason: &str| Error::FitFailure {
        reason: reason.into(),
        residual_rms: f64::NAN,
    };
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| fail("singular design matrix"))?;
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let rss = resid.norm_squared();
    let (b0, a, b) = (beta[0], beta[1], beta[2]);
    if !(b0 > 0.0) {
        return Err(Error::FitFailure {
            reason: "non-positive baseline".into(),
            residual_rms: (rss / n as f64).sqrt(),
        });
    }
    let amp = a.hypot(b);
    let v = amp / b0;
    let cov = inv * (rss / (n - 3) as f64);
    // Delta method on V = sqrt(a^2 + b^2) / B.
    let grad = if amp > 0.0 {
        [-v / b0, a / (amp * b0), b / (amp * b0)]
    } else {
        [0.0, 1.0 / b0, 0.0]
    };
    let var: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| grad[i] * cov[(i, j)] * grad[j])
        .sum();
    let std = var.max(0.0).sqrt();
    let significance = if std > 0.0 {
        (v - FRAC_1_SQRT_2) / std
    } else if v > FRAC_1_SQRT_2 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    Ok(VisibilityFit {
        visibility: v.min(1.0),
        phase_offset: (-b).atan2(a),
        baseline: b0,
        visibility_std: std,
        significance,
        violates_bell: significance > 1.0,
    })
}

/// Hermitian basis: diagonal units, then symmetric and antisymmetric off-diagonal pairs.
fn hermitian_basis() -> Vec<Operator4> {
    let mut out = Vec::with_capacity(16);
    for k in 0..4 {
        let mut m = Operator4::zeros();
        m[(k, k)] = ONE;
        out.push(m);
    }
    for r in 0..4 {
        for c in r + 1..4 {
            let mut s = Operator4::zeros();
            s[(r, c)] = ONE;
            s[(c, r)] = ONE;
            out.push(s);
            let mut a = Operator4::zeros();
            a[(r, c)] = Complex64::new(0.0, -1.0);
            a[(c, r)] = Complex64::new(0.0, 1.0);
            out.push(a);
        }
    }
    out
}

/// Condition number above which a setting set is flagged as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e8;

fn design(projectors: &[Operator4]) -> DMatrix<f64> {
    let basis = hermitian_basis();
    DMatrix::from_fn(projectors.len(), 16, |k, j| {
        (projectors[k] * basis[j]).trace().re
    })
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = if m.nrows() < 16 {
        0.0
    } else {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    };
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn record_projectors(records: &[MeasurementRecord]) -> Result<Vec<Operator4>> {
    if records.is_empty() {
        return Err(Error::invalid("no measurement records"));
    }
    records
        .iter()
        .map(|r| {
            if !(r.efficiency > 0.0) || !(r.counts >= 0.0) {
                return Err(Error::invalid(
                    "records need positive efficiency and non-negative counts",
                ));
            }
            let s = r.setting;
            let (a, b) = (s.signal.ket(), s.idler.ket());
            let v = Ket::from_fn(|k, _| a[k / 2] * b[k % 2]);
            Ok(v * v.adjoint())
        })
        .collect()
}

/// Least-squares inversion of efficiency-corrected counts, projected onto states.
pub fn linear_inversion(records: &[MeasurementRecord]) -> Result<DensityMatrix> {
    let projs = record_projectors(records)?;
    let a = design(&projs);
    let y = DVector::from_iterator(
        records.len(),
        records.iter().map(|r| r.counts / r.efficiency),
    );
    let x = a
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let basis = hermitian_basis();
    let m = basis
        .iter()
        .zip(x.iter())
        .fold(Operator4::zeros(), |acc, (b, &c)| {
            acc + b * Complex64::new(c, 0.0)
        });
    project_to_state(&m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub random_restarts: usize,
    pub seed: u64,
    pub bfgs: BfgsOptions,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            random_restarts: 3,
            seed: 0,
            bfgs: BfgsOptions {
                max_iterations: 5000,
                g_tol: 1e-9,
                f_tol: 1e-16,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each accepted step of the winning start.
    pub history: Vec<f64>,
    pub ill_conditioned: bool,
    pub starts: usize,
}

/// Upper-triangular `T` (real diagonal) from 16 parameters; `rho = T^dagger T / Tr`.
fn unpack(x: &[f64]) -> Operator4 {
    let mut t = Operator4::zeros();
    let mut k = 4;
    for r in 0..4 {
        t[(r, r)] = Complex64::new(x[r], 0.0);
        for c in r + 1..4 {
            t[(r, c)] = Complex64::new(x[k], x[k + 1]);
            k += 2;
        }
    }
    t
}

fn pack(t: &Operator4) -> Vec<f64> {
    let mut x: Vec<f64> = (0..4).map(|r| t[(r, r)].re).collect();
    for r in 0..4 {
        for c in r + 1..4 {
            x.push(t[(r, c)].re);
            x.push(t[(r, c)].im);
        }
    }
    x
}

fn cholesky_start(rho: &DensityMatrix) -> Option<Vec<f64>> {
    let reg = rho.0 * Complex64::new(1.0 - 1e-6, 0.0)
        + Operator4::identity() * Complex64::new(0.25e-6, 0.0);
    let l = reg.cholesky()?.l();
    Some(pack(&l.adjoint()))
}

/// Negative normalization-free Poisson log-likelihood and its gradient in the `T` parameters.
struct Likelihood {
    projectors: Vec<Operator4>,
    efficiency: Vec<f64>,
    counts: Vec<f64>,
    total: f64,
    /// Sum of `efficiency * projector`.
    weighted: Operator4,
}

impl Likelihood {
    fn new(records: &[MeasurementRecord]) -> Result<Self> {
        let projectors = record_projectors(records)?;
        let efficiency: Vec<f64> = records.iter().map(|r| r.efficiency).collect();
        let counts: Vec<f64> = records.iter().map(|r| r.counts).collect();
        let total = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("records contain no counts"));
        }
        let weighted = projectors
            .iter()
            .zip(&efficiency)
            .fold(Operator4::zeros(), |acc, (p, e)| {
                acc + p * Complex64::new(*e, 0.0)
            });
        Ok(Likelihood {
            projectors,
            efficiency,
            counts,
            total,
            weighted,
        })
    }

    /// `sum n_k ln(eta_k p_k / sum eta p)`: invariant under scaling of `rho`.
    fn log_likelihood(&self, a: &Operator4) -> f64 {
        let norm = (a * self.weighted).trace().re;
        let mut ll = 0.0;
        for ((p, e), n) in self
            .projectors
            .iter()
            .zip(&self.efficiency)
            .zip(&self.counts)
        {
            if *n > 0.0 {
                let pk = (a * p).trace().re;
                ll += n * (e * pk / norm).ln();
            }
        }
        ll
    }

    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let t = unpack(x);
        let a = t.adjoint() * t;
        let norm = (a * self.weighted).trace().re;
        let mut f = self.total * norm.ln();
        let mut h = self.weighted * Complex64::new(self.total / norm, 0.0);
        for (p, n) in self.projectors.iter().zip(&self.counts) {
            if *n > 0.0 {
                let pk = (a * p).trace().re;
                f -= n * pk.ln();
                h -= p * Complex64::new(n / pk, 0.0);
            }
        }
        // Pins the otherwise free overall scale of A.
        let tr = a.trace().re;
        f += (tr - 1.0).powi(2);
        h += Operator4::identity() * Complex64::new(2.0 * (tr - 1.0), 0.0);
        if !f.is_finite() {
            return (f64::INFINITY, vec![0.0; 16]);
        }
        let th = t * h;
        let mut g: Vec<f64> = (0..4).map(|r| 2.0 * th[(r, r)].re).collect();
        for r in 0..4 {
            for c in r + 1..4 {
                g.push(2.0 * th[(r, c)].re);
                g.push(2.0 * th[(r, c)].im);
            }
        }
        (f, g)
    }
}

/// Maximum-likelihood state from coincidence records.
///
/// Starts from the linear-inversion estimate and from random Cholesky
/// factors; returns the best converged optimum.
pub fn mle_reconstruct(records: &[MeasurementRecord], opts: &MleOptions) -> Result<MleResult> {
    let lik = Likelihood::new(records)?;
    let ill_conditioned = condition_number(&design(&lik.projectors)) > CONDITION_LIMIT;
    let mut starts = Vec::new();
    if let Some(x) = linear_inversion(records)
        .ok()
        .as_ref()
        .and_then(cholesky_start)
    {
        starts.push(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_restarts {
        starts.push(
            (0..16)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f64>>(),
        );
    }
    let n_starts = starts.len();
    let runs: Vec<_> = starts
        .iter()
        .map(|x0| bfgs(|x| lik.objective(x), x0, &opts.bfgs))
        .collect();
    let best = runs
        .iter()
        .filter(|m| m.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::OptimizerFailure {
            reason: "no start reached a finite likelihood".into(),
            best_objective: f64::INFINITY,
        })?;
    let converged = runs
        .iter()
        .any(|m| m.converged && m.value <= best.value + 1e-9 * (1.0 + best.value.abs()));
    let t = unpack(&best.x);
    let a = t.adjoint() * t;
    let tr = a.trace().re;
    let m = a / Complex64::new(tr, 0.0);
    let rho = DensityMatrix((m + m.adjoint()) * Complex64::new(0.5, 0.0));
    if !converged {
        return Err(Error::OptimizerFailure {
            reason: "no start converged".into(),
            best_objective: best.value,
        });
    }
    let offset = lik.total * lik.total.ln();
    Ok(MleResult {
        log_likelihood: lik.log_likelihood(&rho.0),
        iterations: best.iterations,
        converged,
        // The objective is -ln L up to a constant and the scale penalty.
        history: best.history.iter().map(|f| offset - f).collect(),
        ill_conditioned,
        starts: n_starts,
        rho,
    })
}

/// Haar-random pure two-qubit state.
pub fn random_pure_state(rng: &mut impl rand::Rng) -> Ket {
    let v =
        Ket::from_fn(|_, _| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}
