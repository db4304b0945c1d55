use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Denominator floor of the relative error, per unit of loss.
pub const ABS_FLOOR: f64 = 1e-6;

/// Central-difference gradient check.
///
/// `build` receives a fresh graph with one trainable leaf per entry of
/// `params` and must return a scalar loss. The relative error of an entry is
/// `|a - f| / max(|a|, |f|, ABS_FLOOR * max(1, |L|))`: gradients below the
/// floor are at the level of the difference quotient's rounding noise.
pub fn gradcheck<B>(params: &[Tensor<f64>], step: f64, build: B) -> Result<GradCheck>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("gradcheck step must be positive, got {step}")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &vars)?;
        if !g.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "gradcheck loss must be scalar, got shape {:?}",
                g.shape(loss)
            )));
        }
        Ok((g, vars, loss))
    };

    let (mut g, vars, loss) = eval(params)?;
    let floor = ABS_FLOOR * g.scalar_value(loss).abs().max(1.0);
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.len() {
            let x0 = p.data()[k];
            probe[pi].data_mut()[k] = x0 + step;
            let (gp, _, lp) = eval(&probe)?;
            probe[pi].data_mut()[k] = x0 - step;
            let (gm, _, lm) = eval(&probe)?;
            probe[pi].data_mut()[k] = x0;
            let numeric = (gp.scalar_value(lp) - gm.scalar_value(lm)) / (2.0 * step);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.entries += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
