use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Real, Var};

use super::mapping::{Grid, Layout, ProbMapping};

/// Raw similarity scores on a graph. `layout.unmatched_state` records whether
/// the bin row (filled with `bin`) was appended.
#[derive(Clone, Copy, Debug)]
pub struct CostVolume {
    pub layout: Layout,
    pub scores: Var,
    pub bin: Option<Var>,
}

/// A probabilistic mapping living on a graph, differentiable through `probs`.
#[derive(Clone, Copy, Debug)]
pub struct ProbNode {
    pub layout: Layout,
    pub probs: Var,
    /// Scores and temperature when the spatial columns of `probs` are their
    /// direct column softmax.
    pub softmax_input: Option<(Var, f64)>,
}

impl ProbNode {
    pub fn value<F: Real>(&self, g: &Graph<F>) -> ProbMapping<F> {
        ProbMapping::new_unchecked(self.layout, g.value(self.probs).clone())
    }

    /// Log probabilities of the spatial source columns, when available
    /// without going through `ln(probs)`.
    pub fn log_probs<F: Real>(&self, g: &mut Graph<F>) -> Result<Option<Var>> {
        match self.softmax_input {
            Some((scores, t)) => g.log_softmax_columns(scores, F::lit(t)).map(Some),
            None => Ok(None),
        }
    }
}

fn feature_grid<F: Real>(g: &Graph<F>, feat: Var) -> Result<(usize, Grid)> {
    match *g.shape(feat) {
        [d, h, w] => Ok((d, Grid::new(h, w))),
        ref s => Err(Error::dim("cost_volume", format!("features must be d x h x w, got {s:?}"))),
    }
}

/// `scores(i, j) = <feat_t(i), feat_s(j)>`, plus a bin row filled with `bin_z`.
pub fn cost_volume<F: Real>(g: &mut Graph<F>, feat_t: Var, feat_s: Var, bin_z: Option<Var>) -> Result<CostVolume> {
    let (dt, target) = feature_grid(g, feat_t)?;
    let (ds, source) = feature_grid(g, feat_s)?;
    if dt != ds {
        return Err(Error::dim("cost_volume", format!("channel counts {dt} vs {ds}")));
    }
    let ft = g.reshape(feat_t, &[dt, target.cells()])?;
    let ft = g.transpose(ft)?;
    let fs = g.reshape(feat_s, &[ds, source.cells()])?;
    let mut scores = g.matmul(ft, fs)?;
    if let Some(z) = bin_z {
        scores = g.append_row(scores, z)?;
    }
    Ok(CostVolume {
        layout: Layout {
            target,
            source,
            unmatched_state: bin_z.is_some(),
            unmatched_column: false,
        },
        scores,
        bin: bin_z,
    })
}

/// Column softmax at `temperature`; with a bin, also appends the constant
/// `∅` column `e_∅`.
pub fn to_prob_mapping<F: Real>(g: &mut Graph<F>, c: &CostVolume, temperature: F) -> Result<ProbNode> {
    let mut probs = g.softmax_columns(c.scores, temperature)?;
    let mut layout = c.layout;
    if layout.unmatched_state {
        probs = g.append_unit_column(probs)?;
        layout.unmatched_column = true;
    }
    Ok(ProbNode {
        layout,
        probs,
        softmax_input: Some((c.scores, temperature.as_f64())),
    })
}

/// `P_{A<-B} ⊗ P_{B<-C}`: marginalizes over the intermediate cells.
pub fn compose<F: Real>(g: &mut Graph<F>, p_tj: &ProbNode, p_js: &ProbNode) -> Result<ProbNode> {
    let layout = p_tj.layout.compose(&p_js.layout)?;
    let probs = g.matmul(p_tj.probs, p_js.probs)?;
    Ok(ProbNode {
        layout,
        probs,
        softmax_input: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgraph::Tensor;

    #[test]
    fn constant_features_give_all_ones() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::filled(&[1, 2, 2], 1.0));
        let c = cost_volume(&mut g, f, f, None).unwrap();
        assert_eq!(g.shape(c.scores), &[4, 4]);
        assert!(g.value(c.scores).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn one_hot_features_give_identity() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::from_fn(&[4, 2, 2], |k| if k / 4 == k % 4 { 1.0 } else { 0.0 }));
        let c = cost_volume(&mut g, f, f, None).unwrap();
        let v = g.value(c.scores);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(v.at2(i, j), (i == j) as u8 as f64);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 2, 2]));
        let b = g.constant(Tensor::zeros(&[3, 2, 2]));
        assert!(matches!(cost_volume(&mut g, a, b, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn uniform_with_bin() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::zeros(&[1, 2, 2]));
        let z = g.param(Tensor::scalar(0.0));
        let c = cost_volume(&mut g, f, f, Some(z)).unwrap();
        let p = to_prob_mapping(&mut g, &c, 1.0).unwrap().value(&g);
        assert_eq!((p.rows(), p.cols()), (5, 5));
        for j in 0..4 {
            for i in 0..5 {
                assert!((p.get(i, j) - 0.2).abs() < 1e-15);
            }
        }
        assert_eq!(p.get(4, 4), 1.0);
        assert!(ProbMapping::new(*p.layout(), p.probs().clone()).is_ok());
    }
}
