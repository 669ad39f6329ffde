//! Frequency-bin index space.
//!
//! Bins are signed integers centred on a reference bin. Physical
//! frequencies are always derived from the index, never stored per bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Extra bins kept on each side of the modulation sidebands.
pub const WINDOW_GUARD_BINS: usize = 12;

/// An equally spaced set of frequency bins `l_min..=l_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeSpec", into = "LatticeSpec")]
pub struct FrequencyLattice {
    center_frequency: f64,
    spacing: f64,
    l_min: i64,
    l_max: i64,
}

/// Serialized form of a lattice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub center_frequency_hz: f64,
    pub spacing_hz: f64,
    pub half_width: usize,
}

impl TryFrom<LatticeSpec> for FrequencyLattice {
    type Error = Error;

    fn try_from(spec: LatticeSpec) -> Result<Self> {
        make_lattice(spec.center_frequency_hz, spec.spacing_hz, spec.half_width)
    }
}

impl From<FrequencyLattice> for LatticeSpec {
    fn from(l: FrequencyLattice) -> Self {
        LatticeSpec {
            center_frequency_hz: l.center_frequency,
            spacing_hz: l.spacing,
            half_width: l.half_width(),
        }
    }
}

/// Builds the symmetric window `[-half_width, half_width]` with bin 0 at `center_frequency`.
pub fn make_lattice(
    center_frequency: f64,
    spacing: f64,
    half_width: usize,
) -> Result<FrequencyLattice> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::invalid(format!(
            "lattice spacing must be positive, got {spacing}"
        )));
    }
    if !center_frequency.is_finite() {
        return Err(Error::invalid("lattice center frequency must be finite"));
    }
    if half_width == 0 {
        return Err(Error::invalid("lattice half width must be at least 1"));
    }
    let hw = half_width as i64;
    Ok(FrequencyLattice {
        center_frequency,
        spacing,
        l_min: -hw,
        l_max: hw,
    })
}

/// Window half width needed to simulate modulation depths up to `delta_max`.
pub fn default_half_width(delta_max: f64) -> usize {
    delta_max.abs().ceil() as usize + WINDOW_GUARD_BINS
}

impl FrequencyLattice {
    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn l_min(&self) -> i64 {
        self.l_min
    }

    pub fn l_max(&self) -> i64 {
        self.l_max
    }

    pub fn half_width(&self) -> usize {
        ((self.l_max - self.l_min) / 2) as usize
    }

    /// Number of bins in the window.
    pub fn len(&self) -> usize {
        (self.l_max - self.l_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, l: i64) -> bool {
        (self.l_min..=self.l_max).contains(&l)
    }

    /// Row/column position of bin `l` in operator matrices.
    pub fn index_of(&self, l: i64) -> Option<usize> {
        self.contains(l).then(|| (l - self.l_min) as usize)
    }

    pub fn bin_at(&self, index: usize) -> i64 {
        self.l_min + index as i64
    }

    pub fn bins(&self) -> impl Iterator<Item = i64> {
        self.l_min..=self.l_max
    }

    pub fn bin_frequency(&self, l: i64) -> f64 {
        self.center_frequency + l as f64 * self.spacing
    }

    pub fn bin_wavelength(&self, l: i64) -> f64 {
        SPEED_OF_LIGHT / self.bin_frequency(l)
    }

    /// Distance from bin `l` to the nearest window edge (0 at the edge).
    pub fn edge_distance(&self, l: i64) -> Option<usize> {
        self.contains(l)
            .then(|| (l - self.l_min).min(self.l_max - l) as usize)
    }

    /// Nearest bin to an optical frequency, if it lies within `tolerance` bins of a bin centre.
    pub fn nearest_bin(&self, frequency: f64, tolerance: f64) -> Option<i64> {
        let x = (frequency - self.center_frequency) / self.spacing;
        let l = x.round();
        ((x - l).abs() <= tolerance && self.contains(l as i64)).then_some(l as i64)
    }

    /// Same window and spacing, bin for bin.
    pub fn same_grid(&self, other: &FrequencyLattice) -> bool {
        self.l_min == other.l_min
            && self.l_max == other.l_max
            && rel_eq(self.spacing, other.spacing)
            && rel_eq(self.center_frequency, other.center_frequency)
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seventeen_bins_at_13_25_ghz() {
        let l = make_lattice(193.7e12, 13.25e9, 8).unwrap();
        assert_eq!(l.len(), 17);
        assert_relative_eq!(l.bin_frequency(1), 193.71325e12, max_relative = 1e-15);
    }

    #[test]
    fn minimal_window() {
        let l = make_lattice(190e12, 10e9, 1).unwrap();
        assert_eq!(l.bins().collect::<Vec<_>>(), vec![-1, 0, 1]);
    }

    #[test]
    fn span_of_twenty_bins() {
        let l = make_lattice(193e12, 15.34e9, 10).unwrap();
        assert_relative_eq!(
            l.bin_frequency(10) - l.bin_frequency(-10),
            306.8e9,
            max_relative = 1e-9
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            make_lattice(1.0, 0.0, 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_lattice(1.0, -1.0, 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_lattice(1.0, 1.0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn spacing_is_constant_and_increasing() {
        let l = make_lattice(193.7e12, 13.25e9, 20).unwrap();
        for b in l.l_min()..l.l_max() {
            let d = l.bin_frequency(b + 1) - l.bin_frequency(b);
            assert!(d > 0.0);
            assert_relative_eq!(d, 13.25e9, max_relative = 1e-6);
        }
    }

    #[test]
    fn index_mapping_and_serde() {
        let l = make_lattice(193.7e12, 13.25e9, 4).unwrap();
        assert_eq!(l.index_of(-4), Some(0));
        assert_eq!(l.index_of(4), Some(8));
        assert_eq!(l.index_of(5), None);
        assert_eq!(l.edge_distance(-3), Some(1));
        let json = serde_json::to_string(&l).unwrap();
        let back: FrequencyLattice = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
        assert!(serde_json::from_str::<FrequencyLattice>(
            r#"{"center_frequency_hz":1.0,"spacing_hz":-2.0,"half_width":3}"#
        )
        .is_err());
    }

    #[test]
    fn default_window_policy() {
        assert_eq!(default_half_width(0.8169), 13);
        assert_eq!(default_half_width(1.4), 14);
    }
}
