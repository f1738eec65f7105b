//! Non-negative sparse self-expressiveness: each event descriptor is
//! approximated as a sparse non-negative combination of the other rows,
//! solved by cyclic coordinate descent with soft-thresholding.
//!
//! Rows are the samples (X is M x d), so the coefficient matrix C is M x M
//! with a zero diagonal; without that constraint C = I would be optimal.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfExpressConfig {
    pub max_iter: usize,
    /// Relative objective change below which a sweep terminates the solve.
    pub tol: f64,
}

impl Default for SelfExpressConfig {
    fn default() -> Self {
        SelfExpressConfig {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// Result of a self-expressiveness solve: the coefficients and the objective
/// value after every sweep (monotone non-increasing).
#[derive(Debug, Clone)]
pub struct SelfExpressSolution {
    pub coefficients: Array2<f64>,
    pub objective_per_sweep: Vec<f64>,
}

pub fn objective(x: &Array2<f64>, c: &Array2<f64>, alpha: f64) -> f64 {
    let residual = x - &c.dot(x);
    residual.iter().map(|r| r * r).sum::<f64>() + alpha * c.iter().map(|v| v.abs()).sum::<f64>()
}

/// Minimize `||X - C X||_F^2 + alpha ||C||_1` over `C >= 0`, `diag(C) = 0`.
pub fn self_express(
    x: &Array2<f64>,
    alpha: f64,
    cfg: &SelfExpressConfig,
) -> Result<SelfExpressSolution> {
    if !(alpha > 0.0) {
        return Err(Error::config("self-express alpha must be positive"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("self-express input contains non-finite values"));
    }
    let m = x.nrows();
    let mut c: Array2<f64> = Array2::zeros((m, m));
    // Row norms; coordinate steps divide by ||x_j||^2.
    let row_sq: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .collect();
    // Residual R = X - C X, maintained incrementally.
    let mut residual = x.clone();

    let mut history = vec![objective(x, &c, alpha)];
    for _ in 0..cfg.max_iter {
        for i in 0..m {
            for j in 0..m {
                if i == j || row_sq[j] < 1e-15 {
                    continue;
                }
                let dot: f64 = (0..x.ncols()).map(|d| x[(j, d)] * residual[(i, d)]).sum();
                let old = c[(i, j)];
                let new = (old + (dot - alpha / 2.0) / row_sq[j]).max(0.0);
                if new != old {
                    let delta = old - new;
                    for d in 0..x.ncols() {
                        residual[(i, d)] += delta * x[(j, d)];
                    }
                    c[(i, j)] = new;
                }
            }
        }
        let obj = objective(x, &c, alpha);
        let prev = *history.last().unwrap();
        history.push(obj);
        if (prev - obj).abs() <= cfg.tol * prev.abs().max(1e-12) {
            break;
        }
    }
    Ok(SelfExpressSolution {
        coefficients: c,
        objective_per_sweep: history,
    })
}
