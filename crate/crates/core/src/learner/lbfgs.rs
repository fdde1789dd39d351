//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Accepted iterates never increase the objective. The search direction
//! comes from the usual two-loop recursion over the last `memory` curvature
//! pairs; pairs with non-positive curvature are skipped.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Stop once `|g| <= tol * |g0|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

/// Minimizes `f` from `x0`. `f(x, grad)` returns the value and fills `grad`.
pub fn minimize(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    cfg: LbfgsConfig,
) -> Solution {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let g0 = norm(&g);
    let target = cfg.tol * g0;
    let mut history = vec![fx];

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory];
    let mut gnorm = g0;
    let mut iterations = 0;
    let mut converged = gnorm <= target || gnorm == 0.0;

    while !converged && iterations < cfg.max_iter {
        // two-loop recursion: d = -H g
        d.copy_from_slice(&g);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            d.iter_mut().for_each(|v| *v *= scale);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alpha_buf[k];
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // lost descent; restart from steepest descent
            pairs.clear();
            let scale = 1.0 / gnorm.max(1.0);
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi * scale;
            }
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            // no further decrease representable in floating point
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        history.push(fx);
        gnorm = norm(&g);

        if cfg.memory > 0 && sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        converged = gnorm <= target;
    }

    Solution {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        converged,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        // f = sum_i (i + 1) * (x_i - i)^2
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let w = (i + 1) as f64;
                let r = xi - i as f64;
                v += w * r * r;
                g[i] = 2.0 * w * r;
            }
            v
        };
        let sol = minimize(f, vec![0.0; 6], LbfgsConfig::default());
        assert!(sol.converged);
        for (i, xi) in sol.x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-5);
        }
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = LbfgsConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let sol = minimize(f, vec![-1.2, 1.0], cfg);
        assert!((sol.x[0] - 1.0).abs() < 1e-5, "{:?}", sol.x);
        assert!((sol.x[1] - 1.0).abs() < 1e-5);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn already_optimal() {
        let sol = minimize(
            |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            },
            vec![0.0],
            LbfgsConfig::default(),
        );
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
    }
}
