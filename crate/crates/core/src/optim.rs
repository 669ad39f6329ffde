//! Small local optimizers used by the fitting and reconstruction code.

use nalgebra::{DMatrix, DVector};

/// Result of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each iteration (non-increasing).
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iterations: 5000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.1,
        }
    }
}

/// Downhill simplex minimization of `f` from `x0`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| dist(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best
                .iter()
                .zip(&entry.0)
                .map(|(b, xi)| b + 0.5 * (xi - b))
                .collect();
            let v = eval(&x, &mut evals);
            *entry = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations,
        evaluations: evals,
        converged,
        history,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub g_tol: f64,
    /// ... or when the objective decrease over an iteration is below `f_tol * (1 + |f|)`.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 2000,
            g_tol: 1e-10,
            f_tol: 1e-15,
        }
    }
}

/// Quasi-Newton minimization with Armijo backtracking. `fg` returns the
/// objective and its gradient.
pub fn bfgs(
    mut fg: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    opts: &BfgsOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = fg(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut evals = 1;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut history = vec![fx];
    let mut converged = false;
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < opts.max_iterations {
        if g.amax() <= opts.g_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
            slope = g.dot(&p);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + step * &p;
            let (fn_, gn) = fg(xn.as_slice());
            evals += 1;
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, DVector::from_vec(gn)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if h == DMatrix::identity(n, n) {
                // Steepest descent cannot make progress: treat as converged at machine precision.
                converged = g.amax() <= opts.g_tol.sqrt();
                break;
            }
            h = DMatrix::identity(n, n);
            continue;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        let decrease = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        history.push(fx);
        if decrease <= opts.f_tol * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        evaluations: evals,
        converged,
        history,
    }
}

/// Result of a nonlinear least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `J^T J` at the solution, for covariance estimates.
    pub normal_matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LeastSquares {
    pub fn sum_of_squares(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// `s^2 (J^T J)^-1` with `s^2 = RSS / (n - p)`; `None` when singular or not over-determined.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let n = self.residuals.len();
        let p = self.x.len();
        if n <= p {
            return None;
        }
        let s2 = self.sum_of_squares() / (n - p) as f64;
        self.normal_matrix.clone().try_inverse().map(|inv| inv * s2)
    }
}

fn numeric_jacobian(r: &mut impl FnMut(&[f64]) -> Vec<f64>, x: &[f64], r0: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-7 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let rp = r(&xp);
        xp[j] = x[j] - h;
        let rm = r(&xp);
        xp[j] = x[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Levenberg-Marquardt on the residual vector `r(x)` with a central-difference Jacobian.
pub fn levenberg_marquardt(
    mut r: impl FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    max_iterations: usize,
) -> LeastSquares {
    let mut x = x0.to_vec();
    let mut res = r(&x);
    let mut cost: f64 = res.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = numeric_jacobian(&mut r, &x, &res);

    while iterations < max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let jtr = &jt * DVector::from_column_slice(&res);
        if jtr.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(dx) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
            let rn = r(&xn);
            let cn: f64 = rn.iter().map(|v| v * v).sum();
            if cn.is_finite() && cn < cost {
                let rel_step = dx.norm() / (1e-12 + DVector::from_column_slice(&x).norm());
                let rel_cost = (cost - cn) / cost.max(1e-300);
                x = xn;
                res = rn;
                cost = cn;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel_step < 1e-13 || rel_cost < 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        jac = numeric_jacobian(&mut r, &x, &res);
        if !improved {
            // No downhill step at any damping: at a (numerical) minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let normal_matrix = jac.transpose() * &jac;
    LeastSquares {
        x,
        residuals: res,
        normal_matrix,
        iterations,
        converged,
    }
}
