//! Preconditioned L-BFGS with backtracking Armijo line search.

use std::collections::VecDeque;

use serde::Serialize;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub armijo: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 12, gradient_tol: 1e-8, max_iterations: 5000, armijo: 1e-4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub energies: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f` from `x`. `f` returns (value, gradient); `precond` applies an
/// approximate inverse Hessian.
pub fn minimize<F, P>(x: &mut [f64], mut f: F, precond: P, opts: &LbfgsOptions) -> LbfgsReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&[f64]) -> Vec<f64>,
{
    let (mut fx, mut g) = f(x);
    let mut energies = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iter = 0;
    while iter < opts.max_iterations {
        let gn = norm(&g);
        if gn <= opts.gradient_tol {
            return LbfgsReport { iterations: iter, gradient_norm: gn, converged: true, energies };
        }
        // Two-loop recursion with a scaled preconditioner as the seed.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let mut r = precond(&q);
        if let Some((s, y, _)) = hist.back() {
            let py = precond(y);
            let gamma = dot(s, y) / dot(y, &py);
            r.iter_mut().for_each(|ri| *ri *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        let mut d: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = precond(&g).iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft <= fx + opts.armijo * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn_)) = accepted else {
            // No decrease representable in floating point.
            let gn = norm(&g);
            return LbfgsReport { iterations: iter, gradient_norm: gn, converged: gn <= opts.gradient_tol, energies };
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn_.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            hist.push_back((s, y, 1.0 / sy));
            if hist.len() > opts.memory {
                hist.pop_front();
            }
        }
        x.copy_from_slice(&xn);
        fx = fn_;
        g = gn_;
        energies.push(fx);
        iter += 1;
    }
    let gn = norm(&g);
    LbfgsReport { iterations: iter, gradient_norm: gn, converged: gn <= opts.gradient_tol, energies }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let mut x = vec![-1.2, 1.0];
        let rep = minimize(
            &mut x,
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                (f, g)
            },
            |v| v.to_vec(),
            &LbfgsOptions { gradient_tol: 1e-10, ..Default::default() },
        );
        assert!(rep.converged);
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8);
        assert!(rep.energies.windows(2).all(|w| w[1] <= w[0]));
    }
}
