//! Single-tone electro-optic phase modulator as a bin-mixing operator.
//!
//! A drive `delta * sin(Omega t + theta)` with `Omega` equal to the bin
//! spacing scatters bin `n` into bin `m` with amplitude
//! `J_{m-n}(delta) exp(i (m-n) theta)`. An upshift by one bin therefore
//! carries `exp(i theta)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel::{truncation_order, BesselTable};
use crate::error::{Error, Result};
use crate::lattice::FrequencyLattice;
use crate::operator::ModeOperator;

/// Sideband power discarded by the truncation rule.
pub const TRUNCATION_TAIL: f64 = 1e-14;

/// Default tolerance on the unitarity deficit of interior bins.
pub const UNITARITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfDrive {
    #[serde(rename = "depth_rad")]
    pub depth: f64,
    #[serde(rename = "phase_rad")]
    pub phase: f64,
    #[serde(rename = "frequency_hz")]
    pub frequency: f64,
    pub enabled: bool,
}

impl RfDrive {
    pub fn new(depth: f64, phase: f64, frequency: f64) -> Self {
        RfDrive {
            depth,
            phase,
            frequency,
            enabled: true,
        }
    }

    pub fn off(frequency: f64) -> Self {
        RfDrive {
            depth: 0.0,
            phase: 0.0,
            frequency,
            enabled: false,
        }
    }

    /// Modulation depth actually applied (0 when disabled).
    pub fn effective_depth(&self) -> f64 {
        if self.enabled {
            self.depth
        } else {
            0.0
        }
    }
}

/// Smallest order `k` with sideband power beyond `|k|` below `TRUNCATION_TAIL`.
/// Bins at least this far from the window edge are unitary to that level.
pub fn guard_bins(delta: f64) -> Result<usize> {
    truncation_order(delta, TRUNCATION_TAIL)
}

/// Bessel-series mixing operator of one drive on `lattice`.
pub fn eom_operator(drive: &RfDrive, lattice: &FrequencyLattice) -> Result<ModeOperator> {
    if drive.depth < 0.0 || !drive.depth.is_finite() {
        return Err(Error::invalid(format!(
            "modulation depth must be >= 0, got {}",
            drive.depth
        )));
    }
    let rel = (drive.frequency - lattice.spacing()).abs() / lattice.spacing();
    if !(rel <= 1e-9) {
        return Err(Error::invalid(format!(
            "RF frequency {} Hz does not match the bin spacing {} Hz",
            drive.frequency,
            lattice.spacing()
        )));
    }
    let delta = drive.effective_depth();
    let k_order = guard_bins(delta)?;
    if lattice.half_width() <= k_order {
        return Err(Error::invalid(format!(
            "window half width {} must exceed the {k_order} sideband orders kept at depth {delta}",
            lattice.half_width()
        )));
    }
    // Every order that fits in the window is kept. Zeroing orders beyond
    // k_order would leave amplitude-level (~sqrt(tail)) errors in M^dagger M.
    let table = BesselTable::new(delta, lattice.len())?;
    let theta = drive.phase;
    Ok(ModeOperator::from_fn(
        *lattice,
        format!("eom(d={delta},t={theta})"),
        |m, n| {
            let k = m - n;
            Complex64::from_polar(table.get(k), k as f64 * theta)
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bessel::bessel_j_series;
    use crate::lattice::{default_half_width, make_lattice};
    use crate::operator::unitarity_deficit;
    use std::f64::consts::PI;

    const DNU: f64 = 13.25e9;

    fn lattice(hw: usize) -> FrequencyLattice {
        make_lattice(193.7e12, DNU, hw).unwrap()
    }

    #[test]
    fn zero_depth_is_identity() {
        let l = lattice(6);
        let op = eom_operator(&RfDrive::new(0.0, 1.0, DNU), &l).unwrap();
        assert_eq!(op.entries(), ModeOperator::identity(l).entries());
        let off = eom_operator(&RfDrive::off(DNU), &l).unwrap();
        assert_eq!(off.entries(), ModeOperator::identity(l).entries());
    }

    #[test]
    fn center_element_matches_series_oracle() {
        let l = lattice(default_half_width(0.8169));
        let op = eom_operator(&RfDrive::new(0.8169, 0.0, DNU), &l).unwrap();
        let oracle = bessel_j_series(0, 0.8169);
        assert!((op.element(0, 0).unwrap().re - oracle).abs() < 1e-15);
        let up = op.element(1, 0).unwrap();
        assert!((up.re - bessel_j_series(1, 0.8169)).abs() < 1e-15);
    }

    #[test]
    fn upshift_carries_plus_theta() {
        let l = lattice(13);
        let op = eom_operator(&RfDrive::new(0.5, 0.3, DNU), &l).unwrap();
        let up = op.element(3, 2).unwrap();
        assert!((up.arg() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn antiphase_pair_is_identity_on_interior() {
        let d = 0.8169;
        let l = lattice(default_half_width(d) + 10);
        let a = eom_operator(&RfDrive::new(d, 0.4, DNU), &l).unwrap();
        let b = eom_operator(&RfDrive::new(d, 0.4 + PI, DNU), &l).unwrap();
        let k = guard_bins(d).unwrap();
        let prod = b.after(&a).unwrap();
        let dist = prod
            .interior_distance(&ModeOperator::identity(l), k)
            .unwrap();
        assert!(dist < 1e-10, "{dist}");
    }

    #[test]
    fn unitarity_deficit_interior_vs_edge() {
        let d = 0.8169;
        let l = lattice(default_half_width(d) * 2);
        let op = eom_operator(&RfDrive::new(d, 0.0, DNU), &l).unwrap();
        assert!(unitarity_deficit(&op, 12) <= UNITARITY_TOLERANCE);
        assert!(unitarity_deficit(&op, 0) > 1e-3);
    }

    #[test]
    fn frequency_mismatch_rejected() {
        let l = lattice(13);
        assert!(matches!(
            eom_operator(&RfDrive::new(0.8, 0.0, 15.34e9), &l),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn too_narrow_window_rejected() {
        let l = lattice(3);
        assert!(eom_operator(&RfDrive::new(0.8, 0.0, DNU), &l).is_err());
    }

    #[test]
    fn phase_covariance() {
        let (d, th) = (1.1, 0.77);
        let l = lattice(16);
        let a = eom_operator(&RfDrive::new(d, th, DNU), &l).unwrap();
        let b = eom_operator(&RfDrive::new(d, 0.0, DNU), &l).unwrap();
        let p = ModeOperator::phase_ramp(l, th);
        let pd = ModeOperator::phase_ramp(l, -th);
        let c = p.after(&b).unwrap().after(&pd).unwrap();
        assert!(a.interior_distance(&c, 0).unwrap() < 1e-14);
    }
}
