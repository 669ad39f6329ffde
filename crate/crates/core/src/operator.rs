//! Linear frequency-domain transformations over a bin window.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::FrequencyLattice;

/// Complex matrix indexed by (output bin, input bin) on a lattice window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOperator {
    lattice: FrequencyLattice,
    entries: DMatrix<Complex64>,
    label: String,
}

impl ModeOperator {
    pub fn new(
        lattice: FrequencyLattice,
        entries: DMatrix<Complex64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = lattice.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::invalid(format!(
                "operator is {}x{} but the lattice window has {n} bins",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(ModeOperator {
            lattice,
            entries,
            label: label.into(),
        })
    }

    /// Builds entries from a function of (output bin, input bin).
    pub fn from_fn(
        lattice: FrequencyLattice,
        label: impl Into<String>,
        mut f: impl FnMut(i64, i64) -> Complex64,
    ) -> Self {
        let n = lattice.len();
        let entries = DMatrix::from_fn(n, n, |r, c| f(lattice.bin_at(r), lattice.bin_at(c)));
        ModeOperator {
            lattice,
            entries,
            label: label.into(),
        }
    }

    pub fn identity(lattice: FrequencyLattice) -> Self {
        let n = lattice.len();
        ModeOperator {
            lattice,
            entries: DMatrix::identity(n, n),
            label: "identity".into(),
        }
    }

    /// Diagonal operator with one entry per bin, ordered from `l_min`.
    pub fn diagonal(
        lattice: FrequencyLattice,
        diag: &[Complex64],
        label: impl Into<String>,
    ) -> Result<Self> {
        if diag.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "diagonal has {} entries, window has {} bins",
                diag.len(),
                lattice.len()
            )));
        }
        let entries = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
        Self::new(lattice, entries, label)
    }

    /// `P(phi)`: bin `l` picks up `exp(i l phi)`.
    pub fn phase_ramp(lattice: FrequencyLattice, phi: f64) -> Self {
        Self::from_fn(lattice, "phase-ramp", |m, n| {
            if m == n {
                Complex64::from_polar(1.0, m as f64 * phi)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn lattice(&self) -> &FrequencyLattice {
        &self.lattice
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Entry for (output bin, input bin), `None` outside the window.
    pub fn element(&self, out_bin: i64, in_bin: i64) -> Option<Complex64> {
        let r = self.lattice.index_of(out_bin)?;
        let c = self.lattice.index_of(in_bin)?;
        Some(self.entries[(r, c)])
    }

    /// Matrix product `self * rhs`: `rhs` acts first.
    pub fn after(&self, rhs: &ModeOperator) -> Result<ModeOperator> {
        if !self.lattice.same_grid(&rhs.lattice) {
            return Err(Error::invalid(format!(
                "cannot compose '{}' with '{}': lattices differ",
                self.label, rhs.label
            )));
        }
        Ok(ModeOperator {
            lattice: self.lattice,
            entries: &self.entries * &rhs.entries,
            label: format!("{}*{}", self.label, rhs.label),
        })
    }

    /// Applies the operator to per-bin amplitudes ordered from `l_min`.
    pub fn apply(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        if input.len() != self.lattice.len() {
            return Err(Error::invalid(format!(
                "input has {} amplitudes, window has {} bins",
                input.len(),
                self.lattice.len()
            )));
        }
        let v = nalgebra::DVector::from_column_slice(input);
        Ok((&self.entries * v).iter().copied().collect())
    }

    /// Index reversal `M[-m, -n]`, the view seen by a mirror-image (idler) photon.
    pub fn mirrored(&self) -> Result<ModeOperator> {
        if self.lattice.l_min() != -self.lattice.l_max() {
            return Err(Error::invalid(
                "mirroring needs a window symmetric about bin 0",
            ));
        }
        let n = self.lattice.len();
        let entries = DMatrix::from_fn(n, n, |r, c| self.entries[(n - 1 - r, n - 1 - c)]);
        Ok(ModeOperator {
            lattice: self.lattice,
            entries,
            label: format!("mirror({})", self.label),
        })
    }

    /// Largest entrywise modulus difference over bins at least `margin` from the edge.
    pub fn interior_distance(&self, other: &ModeOperator, margin: usize) -> Result<f64> {
        if !self.lattice.same_grid(&other.lattice) {
            return Err(Error::invalid("operators live on different lattices"));
        }
        let idx = interior_indices(&self.lattice, margin);
        let mut worst: f64 = 0.0;
        for &r in &idx {
            for &c in &idx {
                worst = worst.max((self.entries[(r, c)] - other.entries[(r, c)]).norm());
            }
        }
        Ok(worst)
    }
}

pub(crate) fn interior_indices(lattice: &FrequencyLattice, margin: usize) -> Vec<usize> {
    lattice
        .bins()
        .filter(|&b| lattice.edge_distance(b).is_some_and(|d| d >= margin))
        .filter_map(|b| lattice.index_of(b))
        .collect()
}

/// `max |(M^dagger M - I)_{ij}|` over bins at least `interior_margin` from the window edge.
pub fn unitarity_deficit(op: &ModeOperator, interior_margin: usize) -> f64 {
    let gram = op.entries.adjoint() * &op.entries;
    let idx = interior_indices(&op.lattice, interior_margin);
    let mut worst: f64 = 0.0;
    for &r in &idx {
        for &c in &idx {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((gram[(r, c)] - target).norm());
        }
    }
    worst
}
