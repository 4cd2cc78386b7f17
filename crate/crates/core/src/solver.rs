//! Bounded derivative-free minimization: Nelder-Mead simplex with
//! candidates clamped into a box. Small and deterministic, which is all the
//! calibration objective needs.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct NmOptions {
    pub max_iters: usize,
    /// Stop when the simplex function-value spread falls below this.
    pub f_tol: f64,
    /// Stop when the simplex collapses below this diameter.
    pub x_tol: f64,
    /// Initial simplex step per coordinate, as a fraction of the box width.
    pub step_fraction: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        NmOptions { max_iters: 200, f_tol: 1e-12, x_tol: 1e-10, step_fraction: 0.15 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Minimize `f` over the box `[lo, hi]`, starting from `x0`. Runs to
/// convergence or the iteration cap; `converged == false` means the cap was
/// hit and the best point so far is returned.
pub fn nelder_mead_bounded(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &NmOptions,
) -> Result<NmResult> {
    let n = x0.len();
    if n == 0 || lo.len() != n || hi.len() != n {
        return Err(Error::param("dimension mismatch in bounds"));
    }
    for i in 0..n {
        if !(lo[i] < hi[i]) {
            return Err(Error::param(format!("empty bound interval at coordinate {i}")));
        }
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut base = x0.to_vec();
    clamp_into(&mut base, lo, hi);
    simplex.push(base.clone());
    for i in 0..n {
        let mut v = base.clone();
        let step = opts.step_fraction * (hi[i] - lo[i]);
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        clamp_into(&mut v, lo, hi);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        // Order ascending by value.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= opts.f_tol || diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i != worst {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
        }

        let point = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp_into(&mut p, lo, hi);
            p
        };

        let reflected = point(alpha);
        let f_reflected = f(&reflected);
        if f_reflected < values[order[0]] {
            let expanded = point(gamma);
            let f_expanded = f(&expanded);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        let contracted = point(-rho);
        let f_contracted = f(&contracted);
        if f_contracted < values[worst] {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        // Shrink toward the best vertex.
        let best_point = simplex[best].clone();
        for (i, v) in simplex.iter_mut().enumerate() {
            if i == best {
                continue;
            }
            for (x, b) in v.iter_mut().zip(&best_point) {
                *x = b + sigma * (*x - b);
            }
            clamp_into(v, lo, hi);
            values[i] = f(v);
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    Ok(NmResult {
        x: simplex[best].clone(),
        fx: values[best],
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.2).powi(2);
        let r = nelder_mead_bounded(
            &mut f,
            &[0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NmOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-5, "{:?}", r.x);
        assert!((r.x[1] + 0.2).abs() < 1e-5, "{:?}", r.x);
        assert!(r.fx < 1e-9);
    }

    #[test]
    fn respects_bounds_when_minimum_is_outside() {
        let mut f = |x: &[f64]| (x[0] - 5.0).powi(2) + (x[1] - 5.0).powi(2);
        let r = nelder_mead_bounded(
            &mut f,
            &[0.0, 0.0],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &NmOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn never_returns_a_point_worse_than_the_start() {
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            (x[0].sin() * 3.0).powi(2) + x[1].abs()
        };
        let x0 = [1.2, 0.7];
        let r = nelder_mead_bounded(&mut f, &x0, &[-2.0, -2.0], &[2.0, 2.0], &NmOptions::default())
            .unwrap();
        let f0 = (x0[0].sin() * 3.0_f64).powi(2) + x0[1].abs();
        assert!(r.fx <= f0);
        assert!(calls > 3);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut f = |x: &[f64]| (x[0] - 0.123).powi(2) + (x[1] - 0.456).powi(2);
        let opts = NmOptions { max_iters: 2, ..NmOptions::default() };
        let r = nelder_mead_bounded(&mut f, &[-0.9, -0.9], &[-1.0, -1.0], &[1.0, 1.0], &opts)
            .unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn rejects_bad_bounds() {
        let mut f = |x: &[f64]| x[0];
        assert!(nelder_mead_bounded(&mut f, &[0.0], &[1.0], &[0.0], &NmOptions::default()).is_err());
        assert!(nelder_mead_bounded(&mut f, &[0.0], &[0.0, 1.0], &[1.0], &NmOptions::default())
            .is_err());
    }
}
