//! Bessel functions of the first kind, integer order.
//!
//! Two independent evaluators are provided: the ascending power series
//! (used for `|x| < 2`) and Miller's normalized downward recurrence
//! (used elsewhere). They agree to ~1e-15 where both are accurate, which
//! the tests check.

use crate::error::{Error, Result};

/// Largest `|x|` for which accuracy is validated.
pub const MAX_ARGUMENT: f64 = 50.0;

const SERIES_LIMIT: f64 = 2.0;

fn check_argument(x: f64) -> Result<()> {
    if !x.is_finite() || x.abs() > MAX_ARGUMENT {
        return Err(Error::invalid(format!(
            "Bessel argument {x} outside the validated range |x| <= {MAX_ARGUMENT}"
        )));
    }
    Ok(())
}

/// `J_order(x)` for any integer order and `|x| <= 50`.
pub fn bessel_j(order: i64, x: f64) -> Result<f64> {
    check_argument(x)?;
    let n = order.unsigned_abs() as usize;
    let value = if x.abs() < SERIES_LIMIT {
        series_nonneg(n, x.abs())
    } else {
        miller_sequence(x.abs(), n)[n]
    };
    Ok(apply_symmetries(order, x, value))
}

/// Power-series evaluation, valid for modest `|x|` (cancellation grows with `|x|`).
pub fn bessel_j_series(order: i64, x: f64) -> f64 {
    let n = order.unsigned_abs() as usize;
    apply_symmetries(order, x, series_nonneg(n, x.abs()))
}

/// Miller-recurrence evaluation.
pub fn bessel_j_miller(order: i64, x: f64) -> Result<f64> {
    check_argument(x)?;
    let n = order.unsigned_abs() as usize;
    Ok(apply_symmetries(order, x, miller_sequence(x.abs(), n)[n]))
}

// J_{-n}(x) = (-1)^n J_n(x) and J_n(-x) = (-1)^n J_n(x).
fn apply_symmetries(order: i64, x: f64, value_at_abs: f64) -> f64 {
    let odd = order.rem_euclid(2) == 1;
    let mut v = value_at_abs;
    if order < 0 && odd {
        v = -v;
    }
    if x < 0.0 && odd {
        v = -v;
    }
    v
}

fn series_nonneg(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    // (x/2)^n / n!
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = -half * half;
    let mut sum = term;
    for m in 1..200 {
        term *= q / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `J_0(x) ..= J_{n_max}(x)` for `x >= 0` by Miller's algorithm with the
/// normalization `J_0 + 2 sum J_{2k} = 1`.
fn miller_sequence(x: f64, n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let reach = n_max.max(x.ceil() as usize);
    let mut start = reach + 30 + (160.0 * reach as f64).sqrt().ceil() as usize;
    start += start % 2;

    let mut seq = vec![0.0; start + 2];
    seq[start] = 1e-30;
    for k in (1..=start).rev() {
        seq[k - 1] = 2.0 * k as f64 / x * seq[k] - seq[k + 1];
        if seq[k - 1].abs() > 1e250 {
            for v in seq.iter_mut().skip(k - 1) {
                *v *= 1e-250;
            }
        }
    }
    let norm = seq[0] + 2.0 * seq.iter().skip(2).step_by(2).sum::<f64>();
    for (o, s) in out.iter_mut().zip(&seq) {
        *o = s / norm;
    }
    out
}

/// Precomputed `J_k(x)` for `|k| <= k_max`.
#[derive(Debug, Clone)]
pub struct BesselTable {
    x: f64,
    values: Vec<f64>,
}

impl BesselTable {
    pub fn new(x: f64, k_max: usize) -> Result<Self> {
        check_argument(x)?;
        let mut values = if x.abs() < SERIES_LIMIT {
            (0..=k_max).map(|k| series_nonneg(k, x.abs())).collect()
        } else {
            miller_sequence(x.abs(), k_max)
        };
        if x < 0.0 {
            for (k, v) in values.iter_mut().enumerate() {
                if k % 2 == 1 {
                    *v = -*v;
                }
            }
        }
        Ok(BesselTable { x, values })
    }

    pub fn argument(&self) -> f64 {
        self.x
    }

    pub fn k_max(&self) -> usize {
        self.values.len() - 1
    }

    /// `J_k(x)`; zero beyond the tabulated range.
    pub fn get(&self, k: i64) -> f64 {
        let n = k.unsigned_abs() as usize;
        match self.values.get(n) {
            Some(&v) if k < 0 && n % 2 == 1 => -v,
            Some(&v) => v,
            None => 0.0,
        }
    }
}

/// Smallest `k` with `sum_{|j|>k} J_j(x)^2 < tail`.
pub fn truncation_order(x: f64, tail: f64) -> Result<usize> {
    check_argument(x)?;
    let k_max = x.abs().ceil() as usize + 60;
    let table = BesselTable::new(x, k_max)?;
    // tails[k] = 2 * sum_{j>k} J_j^2, accumulated from the top so no cancellation.
    let mut acc = 0.0;
    let mut order = k_max;
    for k in (0..k_max).rev() {
        let j = table.get(k as i64 + 1);
        acc += 2.0 * j * j;
        if acc < tail {
            order = k;
        } else {
            break;
        }
    }
    Ok(order)
}
