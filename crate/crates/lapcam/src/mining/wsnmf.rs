//! Weighted symmetric NMF by damped multiplicative updates with seeded
//! restarts: `min_{U >= 0} 0.5 * || W (.) (G - U U^T) ||_F^2`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WsnmfConfig {
    pub restarts: usize,
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for WsnmfConfig {
    fn default() -> Self {
        WsnmfConfig {
            restarts: 10,
            iters: 400,
            tol: 1e-10,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WsnmfSolution {
    /// Membership matrix with balanced (unit) column norms.
    pub membership: Array2<f64>,
    /// Final objective of the best restart, evaluated before rescaling.
    pub objective: f64,
    /// Objective history of the best restart (index 0 = initial value).
    pub objective_per_iter: Vec<f64>,
    pub best_restart: usize,
}

/// Objective with the literal weighted norm: entries weighted by `W^2`
/// inside the squared residual.
pub fn wsnmf_objective(g: &Array2<f64>, w: &Array2<f64>, u: &Array2<f64>) -> f64 {
    let uut = u.dot(&u.t());
    let mut acc = 0.0;
    for ((i, j), &gij) in g.indexed_iter() {
        let r = w[(i, j)] * (gij - uut[(i, j)]);
        acc += r * r;
    }
    0.5 * acc
}

fn solve_once(
    g: &Array2<f64>,
    w2: &Array2<f64>,
    g_weighted: &Array2<f64>,
    w: &Array2<f64>,
    k: usize,
    iters: usize,
    tol: f64,
    seed: u64,
) -> (Array2<f64>, Vec<f64>) {
    let m = g.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = g.iter().map(|v| v.abs()).sum::<f64>() / (m * m) as f64;
    let scale = (mean.max(1e-12) / k as f64).sqrt();
    let mut u = Array2::from_shape_fn((m, k), |_| rng.gen::<f64>() * scale);

    const BETA: f64 = 0.5;
    const EPS: f64 = 1e-12;
    let mut history = vec![wsnmf_objective(g, w, &u)];
    for _ in 0..iters {
        let numer = g_weighted.dot(&u);
        let uut = u.dot(&u.t());
        let denom = (w2 * &uut).dot(&u);
        for ((i, c), v) in u.indexed_iter_mut() {
            let ratio = numer[(i, c)] / (denom[(i, c)] + EPS);
            *v *= 1.0 - BETA + BETA * ratio;
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        let obj = wsnmf_objective(g, w, &u);
        let prev = *history.last().unwrap();
        history.push(obj);
        if (prev - obj).abs() <= tol * prev.abs().max(1e-12) {
            break;
        }
    }
    (u, history)
}

/// Solve weighted symmetric NMF. The best of `cfg.restarts` seeded runs by
/// final objective wins; its membership columns are then rescaled to unit
/// norm so no cluster dominates the argmax by scale alone.
pub fn wsnmf(
    g: &Array2<f64>,
    w: &Array2<f64>,
    k: usize,
    cfg: &WsnmfConfig,
) -> Result<WsnmfSolution> {
    let m = g.nrows();
    if k < 2 {
        return Err(Error::config("wsnmf needs k >= 2"));
    }
    if k >= m {
        return Err(Error::config(format!("wsnmf needs k < M (k={k}, M={m})")));
    }
    if g.ncols() != m || w.nrows() != m || w.ncols() != m {
        return Err(Error::config("wsnmf matrices must be square and matching"));
    }
    let w2 = w * w;
    let g_weighted = &w2 * g;
    let mut best: Option<(f64, usize, Array2<f64>, Vec<f64>)> = None;
    for r in 0..cfg.restarts.max(1) {
        let (u, history) = solve_once(
            g,
            &w2,
            &g_weighted,
            w,
            k,
            cfg.iters,
            cfg.tol,
            cfg.seed.wrapping_add(r as u64),
        );
        let obj = *history.last().unwrap();
        if best.as_ref().map_or(true, |(b, _, _, _)| obj < *b) {
            best = Some((obj, r, u, history));
        }
    }
    let (objective, best_restart, mut u, objective_per_iter) = best.unwrap();
    for c in 0..k {
        let norm = u.column(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            u.column_mut(c).mapv_inplace(|v| v / norm);
        }
    }
    Ok(WsnmfSolution {
        membership: u,
        objective,
        objective_per_iter,
        best_restart,
    })
}

/// Hard labels: argmax membership per row, ties to the smallest index.
pub fn assign_labels(u: &Array2<f64>) -> Vec<usize> {
    u.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn block_graph(sizes: &[usize], noise: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let m: usize = sizes.iter().sum();
        let mut truth = Vec::with_capacity(m);
        for (c, &s) in sizes.iter().enumerate() {
            truth.extend(std::iter::repeat(c).take(s));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Array2::zeros((m, m));
        for i in 0..m {
            for j in (i + 1)..m {
                let v = if truth[i] == truth[j] {
                    1.0
                } else {
                    rng.gen::<f64>() * noise
                };
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        (g, truth)
    }

    fn purity(pred: &[usize], truth: &[usize]) -> f64 {
        let k_pred = pred.iter().max().unwrap() + 1;
        let k_true = truth.iter().max().unwrap() + 1;
        let mut table = vec![vec![0usize; k_true]; k_pred];
        for (&p, &t) in pred.iter().zip(truth) {
            table[p][t] += 1;
        }
        let hits: usize = table.iter().map(|row| row.iter().max().unwrap()).sum();
        hits as f64 / pred.len() as f64
    }

    #[test]
    fn recovers_two_planted_blocks() {
        let (g, truth) = block_graph(&[5, 5], 0.1, 3);
        let w = Array2::from_elem((10, 10), 1.0);
        let mut ok = 0;
        for seed in 0..10u64 {
            let cfg = WsnmfConfig {
                restarts: 1,
                seed,
                ..WsnmfConfig::default()
            };
            let sol = wsnmf(&g, &w, 2, &cfg).unwrap();
            if purity(&assign_labels(&sol.membership), &truth) == 1.0 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "only {ok}/10 restarts recovered the partition");
    }

    #[test]
    fn recovers_three_planted_blocks() {
        let (g, truth) = block_graph(&[6, 5, 7], 0.1, 4);
        let w = Array2::from_elem((18, 18), 1.0);
        let mut ok = 0;
        for seed in 0..10u64 {
            let cfg = WsnmfConfig {
                restarts: 1,
                seed: 100 + seed,
                ..WsnmfConfig::default()
            };
            let sol = wsnmf(&g, &w, 3, &cfg).unwrap();
            if purity(&assign_labels(&sol.membership), &truth) == 1.0 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "only {ok}/10 restarts recovered the partition");
    }

    #[test]
    fn objective_non_increasing() {
        let (g, _) = block_graph(&[5, 5, 5], 0.2, 9);
        let mut w = Array2::from_elem((15, 15), 1.0);
        // Non-trivial weights exercise the weighted update path.
        for i in 0..15 {
            w[(i, i)] = 0.0;
            for j in 0..15 {
                if (i + j) % 3 == 0 {
                    w[(i, j)] = 0.5;
                }
            }
        }
        let w = (&w + &w.t()) / 2.0;
        let sol = wsnmf(&g, &w, 3, &WsnmfConfig::default()).unwrap();
        for pair in sol.objective_per_iter.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn unit_weights_match_plain_symmetric_nmf_objective() {
        let (g, _) = block_graph(&[4, 4], 0.0, 5);
        let ones = Array2::from_elem((8, 8), 1.0);
        let sol = wsnmf(&g, &ones, 2, &WsnmfConfig::default()).unwrap();
        // With W = 1 the weighted objective equals the unweighted value.
        let uut = sol.membership.dot(&sol.membership.t());
        // Reconstruct U before rescaling is not needed: compare objectives
        // through the public function on the same U.
        let plain: f64 = g
            .indexed_iter()
            .map(|((i, j), &v)| (v - uut[(i, j)]) * (v - uut[(i, j)]))
            .sum::<f64>()
            * 0.5;
        let weighted = wsnmf_objective(&g, &ones, &sol.membership);
        assert!((plain - weighted).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_drives_membership_to_zero() {
        let g = Array2::zeros((6, 6));
        let w = Array2::from_elem((6, 6), 1.0);
        let cfg = WsnmfConfig {
            iters: 2000,
            ..WsnmfConfig::default()
        };
        let sol = wsnmf(&g, &w, 2, &cfg).unwrap();
        assert!(sol.objective < 1e-12, "objective {}", sol.objective);
    }

    #[test]
    fn k_bounds_are_enforced() {
        let g = Array2::zeros((4, 4));
        let w = Array2::from_elem((4, 4), 1.0);
        assert!(wsnmf(&g, &w, 4, &WsnmfConfig::default()).is_err());
        assert!(wsnmf(&g, &w, 1, &WsnmfConfig::default()).is_err());
    }

    #[test]
    fn argmax_labels_and_ties() {
        let u = array![[0.1, 0.9], [0.5, 0.5], [0.9, 0.3]];
        assert_eq!(assign_labels(&u), vec![1, 0, 0]);
        let scaled = &u * 3.0;
        assert_eq!(assign_labels(&scaled), assign_labels(&u));
    }
}
