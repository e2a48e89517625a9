//! Levenberg-Marquardt least squares and the two saturating-exponential
//! fits used by the calibrations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative tolerance on cost decrease and step length.
    pub rel_tol: f64,
    /// Absolute tolerance on cost (sum of squared residuals).
    pub abs_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-10,
            abs_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Root mean square of the final residuals.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes the sum of squared residuals with a forward-difference
/// Jacobian. `residuals(params, out)` fills `out` (length `n_residuals`).
pub fn levenberg_marquardt<F>(
    residuals: F,
    n_residuals: usize,
    x0: &[f64],
    opts: &LmOptions,
) -> Result<LmReport>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    if n_residuals < n {
        return Err(Error::Underdetermined(format!(
            "{n_residuals} residuals for {n} parameters"
        )));
    }
    let eval = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let mut r = DVector::zeros(n_residuals);
        residuals(x.as_slice(), r.as_mut_slice());
        if r.iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(Error::FitDiverged(format!("non-finite residual at {:?}", x.as_slice())))
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let mut r = eval(&x)?;
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut converged = cost <= opts.abs_tol * opts.abs_tol;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut jac = DMatrix::zeros(n_residuals, n);
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * x[j].abs().max(1e-8);
            let mut xh = x.clone();
            xh[j] += h;
            let rh = eval(&xh)?;
            jac.set_column(j, &((rh - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;

        // Marquardt damping until a step lowers the cost
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = a
                .lu()
                .solve(&(-&grad))
                .ok_or_else(|| Error::FitDiverged("singular normal equations".into()))?;
            let trial = &x + &step;
            let r_trial = match eval(&trial) {
                Ok(v) => v,
                Err(_) => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let trial_cost = sum_sq(&r_trial);
            if trial_cost < cost {
                let small_step = step.norm() <= opts.rel_tol * (x.norm() + opts.rel_tol);
                let small_gain = cost - trial_cost <= opts.rel_tol * cost;
                x = trial;
                r = r_trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                converged = small_step || small_gain || cost <= opts.abs_tol * opts.abs_tol;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left: we are at a stationary point
                converged = true;
                break;
            }
        }
    }

    Ok(LmReport {
        params: x.iter().copied().collect(),
        residual_rms: (cost / n_residuals as f64).sqrt(),
        iterations,
        converged,
    })
}

fn check_points(x: &[f64], y: &[f64], min_distinct: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::domain("x and y lengths differ"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("fit data must be finite"));
    }
    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < min_distinct {
        return Err(Error::Underdetermined(format!(
            "need at least {min_distinct} distinct abscissae, got {}",
            xs.len()
        )));
    }
    Ok(())
}

/// Fits `y = 1 - exp(-k x)`; returns `(k, report)`.
pub fn fit_saturating_rate(x: &[f64], y: &[f64]) -> Result<(f64, LmReport)> {
    check_points(x, y, 2)?;
    // linearized guess from -ln(1 - y) / x on usable points
    let mut guesses: Vec<f64> = x
        .iter()
        .zip(y)
        .filter(|&(&xi, &yi)| xi > 0.0 && yi > 0.0 && yi < 1.0)
        .map(|(&xi, &yi)| -(1.0 - yi).ln() / xi)
        .collect();
    guesses.sort_by(f64::total_cmp);
    let k0 = guesses.get(guesses.len() / 2).copied().unwrap_or(1.0);
    let report = levenberg_marquardt(
        |p, out| {
            for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                *o = 1.0 - (-p[0] * xi).exp() - yi;
            }
        },
        x.len(),
        &[k0],
        &LmOptions::default(),
    )?;
    Ok((report.params[0], report))
}

/// Fits `y = alpha (1 - exp(-beta x))`; returns `(alpha, beta, report)`.
pub fn fit_saturating_exponential(x: &[f64], y: &[f64]) -> Result<(f64, f64, LmReport)> {
    check_points(x, y, 3)?;
    let y_max = y.iter().copied().fold(0.0_f64, f64::max);
    let alpha0 = if y_max > 0.0 { y_max } else { 1.0 };
    // rate at which the curve first reaches half of alpha0
    let beta0 = x
        .iter()
        .zip(y)
        .filter(|&(&xi, &yi)| xi > 0.0 && yi >= 0.5 * alpha0)
        .map(|(&xi, _)| std::f64::consts::LN_2 / xi)
        .fold(f64::NAN, f64::max);
    let beta0 = if beta0.is_finite() { beta0 } else { 1.0 };
    let report = levenberg_marquardt(
        |p, out| {
            for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
                *o = p[0] * (1.0 - (-p[1] * xi).exp()) - yi;
            }
        },
        x.len(),
        &[alpha0, beta0],
        &LmOptions::default(),
    )?;
    Ok((report.params[0], report.params[1], report))
}
