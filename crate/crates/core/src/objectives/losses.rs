use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Real, Tensor, Var};
use crate::probmap::{compose, smooth_target, GroundTruth, GtMode, ProbNode};
use crate::warp::Point;

use super::visibility::VisibilityMask;

/// Target value of `P(∅|i)` on negative pairs.
pub const DEFAULT_P_NEG: f64 = 0.9;

/// Drops the fixed `∅` column, leaving one column per spatial source cell.
pub fn spatial_columns<F: Real>(g: &mut Graph<F>, p: &ProbNode) -> Result<Var> {
    if p.layout.unmatched_column {
        g.slice_cols(p.probs, 0, p.layout.source.cells())
    } else {
        Ok(p.probs)
    }
}

fn check_target<F: Real>(op: &'static str, p: &ProbNode, gt: &GroundTruth<F>) -> Result<()> {
    let l = gt.mapping.layout();
    if p.layout.target != l.target || p.layout.source != l.source {
        return Err(Error::dim(op, "prediction and ground truth grids differ"));
    }
    if p.layout.unmatched_state != l.unmatched_state {
        return Err(Error::Contract(format!("{op}: unmatched-state flags disagree")));
    }
    Ok(())
}

/// `-sum_j w_j sum_i target(i|j) ln p(i|j)` over the spatial columns of `p`
/// (or the listed ones). A direct softmax is handled in the log domain, any
/// other mapping through the clamped logarithm.
fn cross_entropy<F: Real>(
    g: &mut Graph<F>,
    p: &ProbNode,
    cols: Option<&[usize]>,
    target: &Tensor<F>,
    weights: &[F],
) -> Result<Var> {
    if let Some(lp) = p.log_probs(g)? {
        let lp = match cols {
            Some(c) => g.select_cols(lp, c)?,
            None => lp,
        };
        let (r, c) = g.value(lp).dims2()?;
        if target.shape() != [r, c] || weights.len() != c {
            return Err(Error::dim("cross_entropy", "target or weights do not match the prediction"));
        }
        let coef = Tensor::from_fn(&[r, c], |k| -target.data()[k] * weights[k % c]);
        let coef = g.constant(coef);
        let terms = g.mul(lp, coef)?;
        return g.sum(terms);
    }
    let pred = match cols {
        Some(c) => g.select_cols(p.probs, c)?,
        None => spatial_columns(g, p)?,
    };
    g.ce_with_constant_target(pred, target, weights)
}

fn zero<F: Real>(g: &mut Graph<F>) -> Var {
    g.constant(Tensor::scalar(F::zero()))
}

/// Visibility-masked cross-entropy of an already composed `I <- J <- I'`
/// mapping against one-hot targets, averaged over the selected columns.
pub fn pw_bipath_loss_composed<F: Real>(
    g: &mut Graph<F>,
    p_comp: &ProbNode,
    gt: &GroundTruth<F>,
    mask: &VisibilityMask,
) -> Result<Var> {
    check_target("pw_bipath_loss", p_comp, gt)?;
    if mask.flags.len() != gt.nearest.len() {
        return Err(Error::dim("pw_bipath_loss", "mask length differs from the column count"));
    }
    if mask.count() == 0 {
        return Ok(zero(g));
    }
    let pred = spatial_columns(g, p_comp)?;
    g.ce_with_constant_target(pred, gt.mapping.probs(), &mask.weights::<F>())
}

/// Composes `P_{I<-J} ⊗ P_{J<-I'}` and applies [`pw_bipath_loss_composed`].
pub fn pw_bipath_loss<F: Real>(
    g: &mut Graph<F>,
    p_tj: &ProbNode,
    p_js: &ProbNode,
    gt: &GroundTruth<F>,
    mask: &VisibilityMask,
) -> Result<Var> {
    let comp = compose(g, p_tj, p_js)?;
    pw_bipath_loss_composed(g, &comp, gt, mask)
}

/// Cross-entropy of the direct `I <- I'` mapping against `P_W`, averaged over
/// every column with a defined target.
pub fn pwarp_sup_loss<F: Real>(g: &mut Graph<F>, p_ts: &ProbNode, gt: &GroundTruth<F>) -> Result<Var> {
    check_target("pwarp_sup_loss", p_ts, gt)?;
    let mut w = gt.supervision_weights();
    let n = w.iter().filter(|&&v| v > F::zero()).count();
    if n == 0 {
        return Ok(zero(g));
    }
    let inv = F::one() / F::lit(n as f64);
    w.iter_mut().for_each(|v| *v *= inv);
    cross_entropy(g, p_ts, None, gt.mapping.probs(), &w)
}

/// Mean binary cross-entropy between `P(∅|i)` and `p_neg` over spatial columns.
pub fn pneg_loss<F: Real>(g: &mut Graph<F>, p: &ProbNode, p_neg: f64) -> Result<Var> {
    let Some(row) = p.layout.unmatched_row() else {
        return Err(Error::Contract("pneg_loss needs a mapping with an unmatched state".into()));
    };
    if !(p_neg > 0.0 && p_neg < 1.0) {
        return Err(Error::Parameter(format!("p_neg must lie in (0, 1), got {p_neg}")));
    }
    let cols = p.layout.source.cells();
    let w = vec![F::one() / F::lit(cols as f64); cols];
    if let Some(lp) = p.log_probs(g)? {
        let last = g.slice_rows(lp, row, row + 1)?;
        return g.binary_cross_entropy_log(last, F::lit(p_neg), &w);
    }
    let last = g.slice_rows(p.probs, row, row + 1)?;
    let last = g.slice_cols(last, 0, cols)?;
    g.binary_cross_entropy(last, F::lit(p_neg), &w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeypointMode {
    /// Cross-entropy against a target column built like `P_W`.
    Ce(GtMode),
    /// Mean Euclidean distance between soft-argmax and the target.
    Epe,
}

/// Keypoint loss on annotated `(source, target)` pairs in cell units. Each
/// source point reads the prediction column of its nearest source cell.
pub fn keypoint_loss<F: Real>(g: &mut Graph<F>, p: &ProbNode, kps: &[(Point, Point)], mode: KeypointMode) -> Result<Var> {
    if kps.is_empty() {
        return Err(Error::Contract("keypoint_loss needs at least one keypoint".into()));
    }
    let (src, tgt) = (p.layout.source, p.layout.target);
    let inside = |q: Point, w: usize, h: usize| {
        q[0] >= -0.5 && q[1] >= -0.5 && q[0] <= w as f64 - 0.5 && q[1] <= h as f64 - 0.5
    };
    if kps.iter().any(|(s, t)| !inside(*s, src.w, src.h) || !inside(*t, tgt.w, tgt.h)) {
        return Err(Error::Parameter("keypoint outside the grid".into()));
    }
    let cols: Vec<usize> = kps.iter().map(|(s, _)| src.nearest(*s)).collect();
    let k = kps.len();
    let rows = p.layout.rows();
    match mode {
        KeypointMode::Ce(gt_mode) => {
            let mut target = vec![F::zero(); rows * k];
            for (n, (_, t)) in kps.iter().enumerate() {
                match gt_mode {
                    GtMode::OneHot => target[tgt.nearest(*t) * k + n] = F::one(),
                    GtMode::Smooth => {
                        for (i, v) in smooth_target(tgt, *t).into_iter().enumerate() {
                            target[i * k + n] = F::lit(v);
                        }
                    }
                }
            }
            let target = Tensor::matrix(rows, k, target)?;
            cross_entropy(g, p, Some(&cols), &target, &vec![F::one() / F::lit(k as f64); k])
        }
        KeypointMode::Epe => {
            let picked = g.select_cols(p.probs, &cols)?;
            let cells = tgt.cells();
            let spatial = if p.layout.unmatched_state {
                let s = g.slice_rows(picked, 0, cells)?;
                g.normalize_cols(s)?
            } else {
                picked
            };
            let coords = g.constant(Tensor::from_fn(&[2, cells], |n| F::lit(tgt.coords(n % cells)[n / cells])));
            let expected = g.matmul(coords, spatial)?;
            let truth = g.constant(Tensor::from_fn(&[2, k], |n| F::lit(kps[n % k].1[n / k])));
            let diff = g.sub(expected, truth)?;
            let dist = g.column_norms(diff)?;
            g.mean(dist)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    MaxScore,
    MinEntropy,
}

/// Comparison losses on a single mapping: `-mean_j max_i P(i|j)` or the mean
/// column entropy, multiplied by `sign`.
pub fn baseline_loss<F: Real>(g: &mut Graph<F>, p: &ProbNode, kind: BaselineKind, sign: f64) -> Result<Var> {
    let pred = spatial_columns(g, p)?;
    let v = match kind {
        BaselineKind::MaxScore => {
            let m = g.column_max(pred)?;
            let m = g.mean(m)?;
            g.scale(m, -F::one())?
        }
        BaselineKind::MinEntropy => {
            let e = g.column_entropy(pred)?;
            g.mean(e)?
        }
    };
    g.scale(v, F::lit(sign))
}
