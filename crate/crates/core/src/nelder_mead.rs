//! Box-constrained Nelder-Mead simplex search.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop once the simplex diameter, measured in units of each
    /// coordinate's box width, drops below this.
    pub xtol_rel: f64,
    /// Initial simplex edge as a fraction of each coordinate's box width.
    pub initial_step: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            xtol_rel: 1e-10,
            initial_step: 0.05,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

struct Box_<'a> {
    lower: &'a [f64],
    upper: &'a [f64],
    scale: Vec<f64>,
}

impl Box_<'_> {
    fn clip(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Maximizes `objective` over the box `[lower, upper]` starting from `x0`.
/// Trial points are clipped into the box coordinate-wise.
pub fn maximize<F>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 || lower.len() != n || upper.len() != n {
        return Err(Error::domain("dimension mismatch between x0 and bounds"));
    }
    if x0.iter().zip(lower).zip(upper).any(|((&x, &lo), &hi)| !(lo <= x && x <= hi)) {
        return Err(Error::domain(format!("start point {x0:?} outside bounds")));
    }
    let bx = Box_ {
        lower,
        upper,
        scale: x0
            .iter()
            .zip(lower)
            .zip(upper)
            .map(|((&x, &lo), &hi)| {
                let w = hi - lo;
                if w.is_finite() && w > 0.0 {
                    w
                } else {
                    x.abs().max(1.0)
                }
            })
            .collect(),
    };

    let mut evaluations = 0usize;
    // internally minimize the negated objective
    let mut eval = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let v = objective(x);
        if v.is_finite() {
            Ok(-v)
        } else {
            Err(Error::NonFinite {
                point: x.to_vec(),
                value: v,
            })
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = opts.initial_step * bx.scale[i];
        // step inward when the start sits on the upper bound
        v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
        bx.clip(&mut v);
        simplex.push(v);
    }
    let mut values = simplex.iter().map(|v| eval(v)).collect::<Result<Vec<f64>>>()?;

    let diameter = |simplex: &[Vec<f64>], scale: &[f64]| -> f64 {
        let best = &simplex[0];
        simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(best)
                    .zip(scale)
                    .map(|((a, b), s)| ((a - b) / s).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut order: Vec<usize> = (0..=n).collect();
    while iterations < opts.max_iterations {
        // sort ascending by value; ties keep the older vertex first
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        order = (0..=n).collect();

        if diameter(&simplex, &bx.scale) < opts.xtol_rel {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            bx.clip(&mut p);
            p
        };

        let reflected = along(opts.reflection);
        let f_r = eval(&reflected)?;
        if f_r < values[0] {
            let expanded = along(opts.reflection * opts.expansion);
            let f_e = eval(&expanded)?;
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
            continue;
        }
        let (candidate, f_c) = if f_r < values[n] {
            let outside = along(opts.reflection * opts.contraction);
            let f = eval(&outside)?;
            (outside, (f <= f_r).then_some(f))
        } else {
            let inside = along(-opts.contraction);
            let f = eval(&inside)?;
            (inside, (f < values[n]).then_some(f))
        };
        if let Some(f_c) = f_c {
            simplex[n] = candidate;
            values[n] = f_c;
            continue;
        }
        for i in 1..=n {
            let shrunk: Vec<f64> = simplex[0]
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + opts.shrink * (v - b))
                .collect();
            values[i] = eval(&shrunk)?;
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("non-empty simplex");
    Ok(NelderMeadResult {
        x: simplex[best].clone(),
        value: -values[best],
        converged,
        iterations,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola() {
        let r = maximize(|x| -(x[0] - 2.0).powi(2), &[0.0], &[-10.0], &[10.0], &Default::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let r = maximize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &Default::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let r = maximize(|x| x[0] + x[1], &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 0.5], &Default::default()).unwrap();
        assert_eq!(r.x, vec![1.0, 0.5]);
    }

    #[test]
    fn flat_objective_converges() {
        let r = maximize(|_| 3.0, &[0.2, 0.4], &[0.0, 0.0], &[1.0, 1.0], &Default::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let err = maximize(
            |x| if x[0] > 0.5 { f64::NAN } else { x[0] },
            &[0.0],
            &[0.0],
            &[1.0],
            &Default::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFinite { point, .. } => assert!(point[0] > 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn start_outside_bounds() {
        assert!(maximize(|x| x[0], &[2.0], &[0.0], &[1.0], &Default::default()).is_err());
    }
}
