use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::probmap::{Match, ProbMapping, DEFAULT_TEMPERATURE};
use crate::synthdata::InstancePair;

use super::pck::{cell_to_pixel, dense_matches, foreground_bbox, pck, pixel_to_cell, Extractor, PckConfig, Reference};
use super::report::{Curve, MetricRow};
use super::sparsification::{sparsification, SparsificationResult, MIN_POINTS};

pub const EXTRACTORS: [Extractor; 2] = [Extractor::Argmax, Extractor::SoftArgmax];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub pck: PckConfig,
    pub temperature: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pck: PckConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Metric rows and sparsification curves of one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub curves: Vec<Curve>,
}

impl Evaluation {
    pub fn value(&self, metric: &str, alpha: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.alpha == alpha)
            .map(|r| r.value)
    }
}

/// Per-pair scores, indexed `[extractor][alpha]`.
struct PairEval {
    dense: Vec<Vec<Option<f64>>>,
    keypoints: Vec<Vec<Option<f64>>>,
    sparsification: Vec<Vec<Option<SparsificationResult>>>,
}

fn ref_dims(pair: &InstancePair, reference: Reference) -> (usize, usize) {
    let full = (pair.image_a.height(), pair.image_a.width());
    match reference {
        Reference::Image => full,
        Reference::Bbox => foreground_bbox(&pair.foreground_a, pair.image_a.width()).unwrap_or(full),
    }
}

/// Keypoint matches: the column of the cell nearest to each point of image b.
fn keypoint_matches(p: &ProbMapping<f32>, pair: &InstancePair, extractor: Extractor) -> Vec<Match> {
    let layout = *p.layout();
    let (src, tgt) = (layout.source, layout.target);
    let (w, h) = (pair.image_b.width(), pair.image_b.height());
    let (wa, ha) = (pair.image_a.width(), pair.image_a.height());
    let all = extractor.extract(p);
    pair.keypoints
        .iter()
        .map(|&(pa, pb)| {
            let j = src.nearest([pixel_to_cell(pb[0], src.w, w), pixel_to_cell(pb[1], src.h, h)]);
            let m = all[j];
            Match {
                source: pb,
                target: m.target.map(|c| [cell_to_pixel(c[0], tgt.w, wa), cell_to_pixel(c[1], tgt.h, ha)]),
                confidence: m.confidence,
                truth: Some(pa),
            }
        })
        .collect()
}

fn evaluate_pair(enc: &Encoder, pair: &InstancePair, cfg: &EvalConfig) -> Result<PairEval> {
    let gt = pair
        .gt_map_ab
        .as_ref()
        .ok_or_else(|| Error::Contract("evaluation pairs must carry a ground-truth map".into()))?;
    let p = enc.predict(&pair.image_a, &pair.image_b, cfg.temperature)?;
    let dims = ref_dims(pair, cfg.pck.reference);
    let mut out = PairEval {
        dense: Vec::new(),
        keypoints: Vec::new(),
        sparsification: Vec::new(),
    };
    for ex in EXTRACTORS {
        let dense = dense_matches(&p, gt, ex)?;
        let kps = keypoint_matches(&p, pair, ex);
        let (mut d, mut k, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for &alpha in &cfg.pck.alphas {
            d.push(if dense.is_empty() { None } else { Some(pck(&dense, alpha, dims)?) });
            k.push(if kps.is_empty() { None } else { Some(pck(&kps, alpha, dims)?) });
            s.push(if dense.len() < MIN_POINTS { None } else { Some(sparsification(&dense, alpha, dims)?) });
        }
        out.dense.push(d);
        out.keypoints.push(k);
        out.sparsification.push(s);
    }
    Ok(out)
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in vals {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean `P(∅|j)` over every source cell of every pair; `None` without the
/// unmatched state.
pub fn mean_unmatched_prob(enc: &Encoder, pairs: &[InstancePair], temperature: f64) -> Result<Option<f64>> {
    if !enc.cfg.unmatched_bin || pairs.is_empty() {
        return Ok(None);
    }
    let per_pair = pairs
        .par_iter()
        .map(|pair| {
            let p = enc.predict(&pair.image_a, &pair.image_b, temperature)?;
            let n = p.layout().source.cells();
            Ok(mean((0..n).map(|j| p.unmatched_prob(j) as f64)).unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(per_pair.into_iter()))
}

/// Dense, keypoint and sparsification metrics on `positives` (averaged over
/// pairs) and the mean unmatched probability on `negatives`.
///
/// Metrics: `dense_pck_<ex>`, `kp_pck_<ex>`, `ause_<ex>` (integral of the
/// pair-averaged error curve), `ause_per_pair_<ex>` (mean of per-pair
/// integrals) for each extractor and threshold, and `mean_unmatched_prob_neg`.
pub fn evaluate(
    enc: &Encoder,
    positives: &[InstancePair],
    negatives: &[InstancePair],
    cfg: &EvalConfig,
    checkpoint: &str,
) -> Result<Evaluation> {
    cfg.pck.validate()?;
    if positives.is_empty() {
        return Err(Error::Contract("evaluation needs at least one positive pair".into()));
    }
    let per_pair = positives
        .par_iter()
        .map(|pair| evaluate_pair(enc, pair, cfg))
        .collect::<Result<Vec<PairEval>>>()?;
    let reference = cfg.pck.reference.name();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let row = |metric: String, alpha: Option<f64>, reference: &str, value: f64| MetricRow {
        checkpoint: checkpoint.to_string(),
        metric,
        alpha,
        reference: reference.to_string(),
        value,
    };
    let plot_alpha = cfg
        .pck
        .alphas
        .iter()
        .position(|&a| (a - 0.10).abs() < 1e-12)
        .unwrap_or(0);
    for (e, ex) in EXTRACTORS.iter().enumerate() {
        for (a, &alpha) in cfg.pck.alphas.iter().enumerate() {
            let name = ex.name();
            if let Some(v) = mean(per_pair.iter().filter_map(|p| p.dense[e][a])) {
                rows.push(row(format!("dense_pck_{name}"), Some(alpha), reference, v));
            }
            if let Some(v) = mean(per_pair.iter().filter_map(|p| p.keypoints[e][a])) {
                rows.push(row(format!("kp_pck_{name}"), Some(alpha), reference, v));
            }
            let sp: Vec<SparsificationResult> = per_pair
                .iter()
                .filter_map(|p| p.sparsification[e][a].clone())
                .collect();
            if let Some(avg) = SparsificationResult::average(&sp) {
                rows.push(row(format!("ause_{name}"), Some(alpha), reference, avg.ause));
                let per = mean(sp.iter().map(|r| r.ause)).unwrap_or(0.0);
                rows.push(row(format!("ause_per_pair_{name}"), Some(alpha), reference, per));
                if a == plot_alpha {
                    let label = |kind: &str| format!("{name} {kind} @{}", super::report::fmt_sig6(alpha));
                    curves.push(Curve {
                        label: label("actual"),
                        xs: avg.fractions_removed.clone(),
                        ys: avg.pck_curve.clone(),
                    });
                    curves.push(Curve {
                        label: label("oracle"),
                        xs: avg.fractions_removed.clone(),
                        ys: avg.oracle_curve.clone(),
                    });
                }
            }
        }
    }
    if let Some(v) = mean_unmatched_prob(enc, negatives, cfg.temperature)? {
        rows.push(row("mean_unmatched_prob_neg".into(), None, "none", v));
    }
    Ok(Evaluation { rows, curves })
}
