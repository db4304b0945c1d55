use crate::error::{Error, Result};
use crate::probmap::Match;

use super::pck::{check_alpha, match_error, threshold};

/// Number of removal steps; fractions are `k / STEPS` for `k < STEPS`.
pub const STEPS: usize = 50;
pub const MIN_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SparsificationResult {
    pub fractions_removed: Vec<f64>,
    pub pck_curve: Vec<f64>,
    pub oracle_curve: Vec<f64>,
    pub error_curve: Vec<f64>,
    pub ause: f64,
}

pub fn removal_fractions() -> Vec<f64> {
    (0..STEPS).map(|k| k as f64 / STEPS as f64).collect()
}

/// Trapezoidal integral of `ys` over `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// PCK of the points left after removing the first `floor(k n / STEPS)`
/// entries of `order`, for every step `k`.
fn removal_curve(order: &[usize], correct: &[bool]) -> Vec<f64> {
    let n = order.len();
    // kept_correct[r] = correct points among order[r..]
    let mut kept_correct = vec![0usize; n + 1];
    for r in (0..n).rev() {
        kept_correct[r] = kept_correct[r + 1] + correct[order[r]] as usize;
    }
    (0..STEPS)
        .map(|k| {
            let removed = k * n / STEPS;
            kept_correct[removed] as f64 / (n - removed) as f64
        })
        .collect()
}

/// Sparsification of PCK at `alpha`: lowest-confidence points are removed
/// first (ties in index order), the oracle removes the largest errors first.
pub fn sparsification(matches: &[Match], alpha: f64, ref_dims: (usize, usize)) -> Result<SparsificationResult> {
    check_alpha(alpha)?;
    if matches.len() < MIN_POINTS {
        return Err(Error::Contract(format!(
            "sparsification needs at least {MIN_POINTS} points, got {}",
            matches.len()
        )));
    }
    let thr = threshold(alpha, ref_dims);
    let errors = matches.iter().map(match_error).collect::<Result<Vec<f64>>>()?;
    let correct: Vec<bool> = errors.iter().map(|&e| e <= thr).collect();

    let mut by_conf: Vec<usize> = (0..matches.len()).collect();
    by_conf.sort_by(|&a, &b| matches[a].confidence.total_cmp(&matches[b].confidence).then(a.cmp(&b)));
    let mut by_error: Vec<usize> = (0..matches.len()).collect();
    by_error.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));

    let pck_curve = removal_curve(&by_conf, &correct);
    let oracle_curve = removal_curve(&by_error, &correct);
    Ok(SparsificationResult::from_curves(pck_curve, oracle_curve))
}

impl SparsificationResult {
    pub fn from_curves(pck_curve: Vec<f64>, oracle_curve: Vec<f64>) -> Self {
        let fractions_removed = removal_fractions();
        let error_curve: Vec<f64> = oracle_curve.iter().zip(&pck_curve).map(|(o, a)| o - a).collect();
        let ause = trapezoid(&fractions_removed, &error_curve);
        SparsificationResult {
            fractions_removed,
            pck_curve,
            oracle_curve,
            error_curve,
            ause,
        }
    }

    /// Pointwise mean of the curves, integrated afterwards.
    pub fn average(items: &[SparsificationResult]) -> Option<SparsificationResult> {
        let n = items.len();
        if n == 0 {
            return None;
        }
        let mean = |f: fn(&SparsificationResult) -> &Vec<f64>| -> Vec<f64> {
            (0..STEPS).map(|k| items.iter().map(|r| f(r)[k]).sum::<f64>() / n as f64).collect()
        };
        Some(Self::from_curves(mean(|r| &r.pck_curve), mean(|r| &r.oracle_curve)))
    }
}
