//! l2-regularized (optionally cost-weighted) logistic loss.
//!
//! ```text
//! f(theta) = C * sum_i sigma_i * log(1 + exp(-y_i * theta . x_i)) + 0.5 * |theta|^2
//! ```

use crate::corpus::SparseVector;
use crate::error::{Error, Result};

/// `log(1 + exp(-m))` without overflow.
#[inline]
pub fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-z))`, stable for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary training problem for a single node.
#[derive(Debug, Clone)]
pub struct BinaryProblem<'a> {
    xs: Vec<&'a SparseVector>,
    ys: Vec<f64>,
    sigma: Option<Vec<f64>>,
    c: f64,
    /// Feature dimensionality; `theta` has one extra slot when `bias` is set.
    dim: usize,
    bias: bool,
}

impl<'a> BinaryProblem<'a> {
    pub fn new(
        xs: Vec<&'a SparseVector>,
        ys: Vec<f64>,
        sigma: Option<Vec<f64>>,
        c: f64,
        dim: usize,
        bias: bool,
    ) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("C must be positive and finite, got {c}")));
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if let Some(y) = ys.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(Error::invalid(format!("binary labels must be +-1, got {y}")));
        }
        if let Some(s) = &sigma {
            if s.len() != xs.len() {
                return Err(Error::DimensionMismatch {
                    expected: xs.len(),
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("costs must be positive and finite"));
            }
        }
        for x in &xs {
            if x.max_index() as usize > dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.max_index() as usize,
                });
            }
            if x.iter().any(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite("features"));
            }
        }
        Ok(BinaryProblem {
            xs,
            ys,
            sigma,
            c,
            dim,
            bias,
        })
    }

    /// Length of the weight vector.
    pub fn n_params(&self) -> usize {
        self.dim + usize::from(self.bias)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    #[inline]
    fn margin(&self, theta: &[f64], x: &SparseVector) -> f64 {
        let z = x.dot_dense(&theta[..self.dim]);
        if self.bias {
            z + theta[self.dim]
        } else {
            z
        }
    }

    /// Objective at `theta`; writes the gradient into `grad`.
    pub fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.n_params());
        grad.copy_from_slice(theta);
        let mut loss = 0.0;
        for (k, (x, &y)) in self.xs.iter().zip(&self.ys).enumerate() {
            let m = y * self.margin(theta, x);
            let w = self.sigma.as_ref().map_or(1.0, |s| s[k]);
            loss += w * log1p_exp_neg(m);
            // d/dtheta log(1 + exp(-m)) = -y * x * sigmoid(-m)
            let coef = -self.c * w * y * sigmoid(-m);
            for (i, v) in x.iter() {
                grad[i as usize - 1] += coef * v;
            }
            if self.bias {
                grad[self.dim] += coef;
            }
        }
        self.c * loss + 0.5 * theta.iter().map(|t| t * t).sum::<f64>()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.eval(theta, &mut g)
    }

    /// Raw score `theta . x` (plus bias) for instance `k`.
    pub fn score(&self, theta: &[f64], k: usize) -> f64 {
        self.margin(theta, self.xs[k])
    }

    pub fn label(&self, k: usize) -> f64 {
        self.ys[k]
    }
}

/// Objective and gradient for the given data. `costs = None` means unit costs.
pub fn lr_objective_gradient(
    theta: &[f64],
    xs: &[&SparseVector],
    ys: &[f64],
    c: f64,
    costs: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("theta"));
    }
    let p = BinaryProblem::new(
        xs.to_vec(),
        ys.to_vec(),
        costs.map(<[f64]>::to_vec),
        c,
        theta.len(),
        false,
    )?;
    let mut g = vec![0.0; theta.len()];
    let f = p.eval(theta, &mut g);
    Ok((f, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(e: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn zero_theta_values() {
        let xs = [sv(&[(1, 1.0), (3, 2.0)]), sv(&[(2, -1.0)]), sv(&[(1, 0.5)])];
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let ys = [1.0, -1.0, -1.0];
        let c = 2.5;
        let (f, g) = lr_objective_gradient(&[0.0; 3], &refs, &ys, c, None).unwrap();
        assert!((f - c * 3.0 * 2f64.ln()).abs() < 1e-12);
        // -(C/2) * sum y_i x_i = -(1.25) * [1 - 0.5, 1, 2]
        let expect = [-1.25 * 0.5, -1.25 * 1.0, -1.25 * 2.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn stable_for_large_margins() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e4), 1.0);
        assert_eq!(sigmoid(-1e4), 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(log1p_exp_neg(1e4).abs() < 1e-300);
        assert_eq!(log1p_exp_neg(-1e4), 1e4);
        let xs = [sv(&[(1, 1.0)])];
        let (f, g) = lr_objective_gradient(&[1e6], &[&xs[0]], &[-1.0], 1.0, None).unwrap();
        assert!(f.is_finite() && g[0].is_finite());
    }

    #[test]
    fn rejects_bad_input() {
        let x = sv(&[(2, 1.0)]);
        assert!(lr_objective_gradient(&[0.0], &[&x], &[1.0], 1.0, None).is_err());
        assert!(lr_objective_gradient(&[0.0; 2], &[&x], &[0.5], 1.0, None).is_err());
        assert!(lr_objective_gradient(&[0.0; 2], &[&x], &[1.0], 0.0, None).is_err());
        assert!(lr_objective_gradient(&[0.0; 2], &[&x], &[1.0], 1.0, Some(&[])).is_err());
        assert!(lr_objective_gradient(&[f64::NAN; 2], &[&x], &[1.0], 1.0, None).is_err());
    }

    #[test]
    fn unit_costs_match_plain() {
        let xs = [sv(&[(1, 0.3), (2, -1.2)]), sv(&[(2, 0.7)])];
        let refs: Vec<&SparseVector> = xs.iter().collect();
        let theta = [0.4, -0.9];
        let a = lr_objective_gradient(&theta, &refs, &[1.0, -1.0], 3.0, None).unwrap();
        let b = lr_objective_gradient(&theta, &refs, &[1.0, -1.0], 3.0, Some(&[1.0, 1.0]))
            .unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
