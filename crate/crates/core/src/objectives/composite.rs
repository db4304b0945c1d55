use crate::error::Result;
use crate::ndgraph::{Graph, Real, Tensor, Var};

/// Bounds applied to every ratio weight.
pub const LAMBDA_MIN: f64 = 1e-3;
pub const LAMBDA_MAX: f64 = 1e3;

/// `num / den` clamped to `[LAMBDA_MIN, LAMBDA_MAX]`; a vanishing denominator
/// yields 1.
pub fn ratio_weight(num: f64, den: f64) -> f64 {
    if !(den.abs() > 1e-12) || !num.is_finite() || !den.is_finite() {
        return 1.0;
    }
    (num / den).clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Loss terms available for one training element. Absent terms are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct Components {
    pub vis_pw_bi: Option<Var>,
    pub pwarp_sup: Option<Var>,
    pub pneg: Option<Var>,
    pub kp: Option<Var>,
    /// Comparison loss (max-score / min-entropy), weight 1.
    pub baseline: Option<Var>,
}

/// Detached component values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComponentValues {
    pub vis_pw_bi: f64,
    pub pwarp_sup: f64,
    pub pneg: f64,
    pub kp: f64,
    pub baseline: f64,
}

impl Components {
    pub fn values<F: Real>(&self, g: &Graph<F>) -> ComponentValues {
        let v = |x: Option<Var>| x.map(|x| g.scalar_value(x).as_f64()).unwrap_or(0.0);
        ComponentValues {
            vis_pw_bi: v(self.vis_pw_bi),
            pwarp_sup: v(self.pwarp_sup),
            pneg: v(self.pneg),
            kp: v(self.kp),
            baseline: v(self.baseline),
        }
    }
}

/// Gradient-stopped weights of the composite objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambdas {
    pub psup: f64,
    pub pneg: f64,
    pub kp: f64,
}

impl ComponentValues {
    /// Element-wise mean of several value sets.
    pub fn mean(items: &[ComponentValues]) -> ComponentValues {
        let n = items.len().max(1) as f64;
        let mut m = ComponentValues::default();
        for v in items {
            m.vis_pw_bi += v.vis_pw_bi / n;
            m.pwarp_sup += v.pwarp_sup / n;
            m.pneg += v.pneg / n;
            m.kp += v.kp / n;
            m.baseline += v.baseline / n;
        }
        m
    }

    /// Weak regime: `λ_psup = L_vis / L_psup`, `λ_pneg` fixed.
    pub fn weak_lambdas(&self, lambda_pneg: f64) -> Lambdas {
        Lambdas {
            psup: ratio_weight(self.vis_pw_bi, self.pwarp_sup),
            pneg: lambda_pneg,
            kp: 0.0,
        }
    }

    /// Strong regime: `λ_psup` as in the weak regime and
    /// `λ_kp = (λ_psup L_psup + L_vis) / L_kp`.
    pub fn strong_lambdas(&self) -> Lambdas {
        let psup = ratio_weight(self.vis_pw_bi, self.pwarp_sup);
        Lambdas {
            psup,
            pneg: 0.0,
            kp: ratio_weight(psup * self.pwarp_sup + self.vis_pw_bi, self.kp),
        }
    }
}

/// Component values, weights and weighted total of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub values: ComponentValues,
    pub lambdas: Lambdas,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,vis_pw_bi,pwarp_sup,pneg,kp,lambda_psup,lambda_pneg,lambda_kp,total";

    pub fn csv_row(&self, step: usize) -> String {
        let v = &self.values;
        let l = &self.lambdas;
        format!(
            "{step},{},{},{},{},{},{},{},{}",
            v.vis_pw_bi, v.pwarp_sup, v.pneg, v.kp, l.psup, l.pneg, l.kp, self.total
        )
    }

    /// Mean of several reports (weights of the first report are kept).
    pub fn mean(items: &[LossReport]) -> Option<LossReport> {
        let first = items.first()?;
        let values: Vec<ComponentValues> = items.iter().map(|r| r.values).collect();
        Some(LossReport {
            values: ComponentValues::mean(&values),
            lambdas: first.lambdas,
            total: items.iter().map(|r| r.total).sum::<f64>() / items.len() as f64,
        })
    }
}

/// Builds `L_vis + λ_psup L_psup + λ_pneg L_pneg + λ_kp L_kp` from the terms
/// present, with the weights treated as constants.
pub fn assemble<F: Real>(g: &mut Graph<F>, c: &Components, lambdas: &Lambdas) -> Result<(Var, LossReport)> {
    let terms = [
        (c.vis_pw_bi, 1.0),
        (c.pwarp_sup, lambdas.psup),
        (c.pneg, lambdas.pneg),
        (c.kp, lambdas.kp),
        (c.baseline, 1.0),
    ];
    let mut total: Option<Var> = None;
    for (term, w) in terms {
        let Some(v) = term else { continue };
        let scaled = g.scale(v, F::lit(w))?;
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(F::zero())),
    };
    let report = LossReport {
        values: c.values(g),
        lambdas: *lambdas,
        total: g.scalar_value(total).as_f64(),
    };
    Ok((total, report))
}

/// Weak objective with weights taken from this evaluation's own values.
pub fn weak_objective<F: Real>(g: &mut Graph<F>, c: &Components, lambda_pneg: f64) -> Result<(Var, LossReport)> {
    let lambdas = c.values(g).weak_lambdas(lambda_pneg);
    assemble(g, c, &lambdas)
}

/// Strong objective with weights taken from this evaluation's own values.
pub fn strong_objective<F: Real>(g: &mut Graph<F>, c: &Components) -> Result<(Var, LossReport)> {
    let lambdas = c.values(g).strong_lambdas();
    assemble(g, c, &lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(g: &mut Graph<f64>, v: [f64; 4]) -> Components {
        let mut s = |x: f64| Some(g.param(Tensor::scalar(x)));
        Components {
            vis_pw_bi: s(v[0]),
            pwarp_sup: s(v[1]),
            pneg: s(v[2]),
            kp: s(v[3]),
            baseline: None,
        }
    }

    #[test]
    fn weak_worked_example() {
        let mut g = Graph::new();
        let mut c = scalars(&mut g, [2.0, 4.0, 0.3, 0.0]);
        c.kp = None;
        let (_, r) = weak_objective(&mut g, &c, 1.0).unwrap();
        assert_eq!(r.lambdas.psup, 0.5);
        assert!((r.total - 4.3).abs() < 1e-12);
    }

    #[test]
    fn strong_worked_example() {
        let mut g = Graph::new();
        let mut c = scalars(&mut g, [1.0, 2.0, 0.0, 4.0]);
        c.pneg = None;
        let (_, r) = strong_objective(&mut g, &c).unwrap();
        assert_eq!((r.lambdas.psup, r.lambdas.kp), (0.5, 0.5));
        assert!((r.total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_components() {
        let mut g = Graph::new();
        let c = scalars(&mut g, [0.0; 4]);
        assert_eq!(weak_objective(&mut g, &c, 1.0).unwrap().1.total, 0.0);
        assert_eq!(strong_objective(&mut g, &c).unwrap().1.total, 0.0);
    }

    #[test]
    fn ratio_is_capped() {
        assert_eq!(ratio_weight(1.0, 0.0), 1.0);
        assert_eq!(ratio_weight(1e9, 1.0), LAMBDA_MAX);
        assert_eq!(ratio_weight(1e-9, 1.0), LAMBDA_MIN);
    }
}
