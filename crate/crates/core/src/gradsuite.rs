//! Finite-difference checks of every differentiable primitive, every loss
//! and both composite objectives on small random instances in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{Encoder, EncoderConfig, EncoderVars, FEATURE_EPS};
use crate::ndgraph::{gradcheck, Graph, Tensor, Var};
use crate::objectives::{
    assemble, baseline_loss, estimate_visibility, keypoint_loss, pneg_loss, pw_bipath_loss_composed, pwarp_sup_loss,
    BaselineKind, Components, KeypointMode, Lambdas, VisibilityMask, DEFAULT_GAMMA, DEFAULT_P_NEG,
};
use crate::probmap::{compose, cost_volume, gt_prob_mapping, to_prob_mapping, GroundTruth, GtMode, ProbNode};
use crate::warp::{Affine, AnalyticMap, DenseWarp, Point};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;
/// Central-difference step.
pub const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Composite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub entries: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Grid side used by the mapping-level checks.
pub const GRID: usize = 4;
const D: usize = 3;
const TEMPERATURE: f64 = 0.5;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Uniform in `[lo, hi]`, kept away from kinks.
fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Contracts `x` with fixed random weights so every output entry matters.
fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = randn(&mut rng, g.shape(x));
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    g.sum(y)
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn check(name: &str, kind: CheckKind, params: Vec<Tensor<f64>>, build: Build) -> Result<CheckOutcome> {
    let r = gradcheck(&params, STEP, |g, v| build(g, v))?;
    Ok(CheckOutcome {
        name: name.to_string(),
        kind,
        max_rel_error: r.max_rel_error,
        tolerance: match kind {
            CheckKind::Primitive => PRIMITIVE_TOLERANCE,
            CheckKind::Composite => COMPOSITE_TOLERANCE,
        },
        entries: r.entries,
    })
}

/// Random column-stochastic-free matrix with entries bounded away from 0.
fn positive(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    uniform(rng, &[r, c], 0.1, 1.0)
}

fn primitives(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prim = CheckKind::Primitive;
    let mut out = Vec::new();
    let s = seed.wrapping_mul(31);
    let (a, b) = (randn(&mut rng, &[3, 4]), randn(&mut rng, &[4, 5]));
    out.push(check("matmul", prim, vec![a.clone(), b], Box::new(move |g, v| {
        let y = g.matmul(v[0], v[1])?;
        probe(g, y, s)
    }))?);
    out.push(check("transpose", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.transpose(v[0])?;
        probe(g, y, s + 1)
    }))?);
    out.push(check("reshape", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.reshape(v[0], &[2, 6])?;
        probe(g, y, s + 2)
    }))?);
    let a2 = randn(&mut rng, &[3, 4]);
    for (name, k) in [("add", 0), ("sub", 1), ("mul", 2)] {
        out.push(check(name, prim, vec![a.clone(), a2.clone()], Box::new(move |g, v| {
            let y = match k {
                0 => g.add(v[0], v[1])?,
                1 => g.sub(v[0], v[1])?,
                _ => g.mul(v[0], v[1])?,
            };
            probe(g, y, s + 3)
        }))?);
    }
    let scalar = Tensor::scalar(rng.random_range(0.5..1.5));
    out.push(check("add_scalar_broadcast", prim, vec![a.clone(), scalar.clone()], Box::new(move |g, v| {
        let y = g.add(v[0], v[1])?;
        probe(g, y, s + 4)
    }))?);
    out.push(check("mul_scalar_broadcast", prim, vec![a.clone(), scalar], Box::new(move |g, v| {
        let y = g.mul(v[0], v[1])?;
        probe(g, y, s + 5)
    }))?);
    out.push(check("scale", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.scale(v[0], -1.7)?;
        probe(g, y, s + 6)
    }))?);
    // Entries at least 0.05 away from the kink.
    let r = Tensor::from_fn(&[3, 4], |_| {
        let m: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() { m } else { -m }
    });
    out.push(check("relu", prim, vec![r], Box::new(move |g, v| {
        let y = g.relu(v[0])?;
        probe(g, y, s + 7)
    }))?);
    out.push(check("softmax_columns", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.softmax_columns(v[0], 0.7)?;
        probe(g, y, s + 8)
    }))?);
    out.push(check("log_softmax_columns", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.log_softmax_columns(v[0], 0.7)?;
        probe(g, y, s + 20)
    }))?);
    let pred = positive(&mut rng, 3, 4);
    let target = positive(&mut rng, 3, 4);
    let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
    out.push(check("ce_with_constant_target", prim, vec![pred.clone()], Box::new(move |g, v| {
        g.ce_with_constant_target(v[0], &target, &weights)
    }))?);
    for stride in [1, 2] {
        let x = randn(&mut rng, &[2, 5, 6]);
        let k = randn(&mut rng, &[3, 2, 3, 3]);
        out.push(check(&format!("conv2d_stride{stride}"), prim, vec![x, k], Box::new(move |g, v| {
            let y = g.conv2d(v[0], v[1], stride)?;
            probe(g, y, s + 9)
        }))?);
    }
    out.push(check("l2_normalize_channels", prim, vec![randn(&mut rng, &[3, 2, 2])], Box::new(move |g, v| {
        let y = g.l2_normalize_channels(v[0], FEATURE_EPS)?;
        probe(g, y, s + 10)
    }))?);
    out.push(check("append_row", prim, vec![a.clone(), Tensor::scalar(0.3)], Box::new(move |g, v| {
        let y = g.append_row(v[0], v[1])?;
        probe(g, y, s + 11)
    }))?);
    out.push(check("append_unit_column", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.append_unit_column(v[0])?;
        probe(g, y, s + 12)
    }))?);
    out.push(check("slice_rows", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.slice_rows(v[0], 1, 3)?;
        probe(g, y, s + 13)
    }))?);
    out.push(check("slice_cols", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.slice_cols(v[0], 1, 3)?;
        probe(g, y, s + 14)
    }))?);
    out.push(check("select_cols", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.select_cols(v[0], &[3, 0, 3])?;
        probe(g, y, s + 15)
    }))?);
    out.push(check("normalize_cols", prim, vec![pred.clone()], Box::new(move |g, v| {
        let y = g.normalize_cols(v[0])?;
        probe(g, y, s + 16)
    }))?);
    out.push(check("column_norms", prim, vec![a.clone()], Box::new(move |g, v| {
        let y = g.column_norms(v[0])?;
        probe(g, y, s + 17)
    }))?);
    out.push(check("sum", prim, vec![a.clone()], Box::new(|g, v| g.sum(v[0])))?);
    out.push(check("mean", prim, vec![a.clone()], Box::new(|g, v| g.mean(v[0])))?);
    let probs = uniform(&mut rng, &[1, 5], 0.05, 0.95);
    let bce_w: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
    out.push(check("binary_cross_entropy", prim, vec![probs], Box::new(move |g, v| {
        g.binary_cross_entropy(v[0], 0.9, &bce_w)
    }))?);
    let log_probs = Tensor::from_fn(&[1, 5], |_| rng.random_range(0.05f64..0.95).ln());
    let bce_w: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
    out.push(check("binary_cross_entropy_log", prim, vec![log_probs], Box::new(move |g, v| {
        g.binary_cross_entropy_log(v[0], 0.9, &bce_w)
    }))?);
    // Distinct column maxima.
    let distinct = Tensor::from_fn(&[3, 4], |k| (k as f64 * 0.37).sin() + k as f64 * 0.01);
    out.push(check("column_max", prim, vec![distinct], Box::new(move |g, v| {
        let y = g.column_max(v[0])?;
        probe(g, y, s + 18)
    }))?);
    out.push(check("column_entropy", prim, vec![pred], Box::new(move |g, v| {
        let y = g.column_entropy(v[0])?;
        probe(g, y, s + 19)
    }))?);
    Ok(out)
}

/// Random similarity warp on the `GRID x GRID` cell grid; cells mapped off
/// the grid are invalid.
fn random_grid_warp(rng: &mut ChaCha8Rng) -> Result<DenseWarp> {
    let a = Affine::from_params(
        rng.random_range(0.8..1.2),
        rng.random_range(-0.3..0.3),
        0.0,
        rng.random_range(-0.8..0.8),
        rng.random_range(-0.8..0.8),
    );
    let c = (GRID as f64 - 1.0) / 2.0;
    let centred = Affine::translation(c, c).compose(&a).compose(&Affine::translation(-c, -c));
    let probe = DenseWarp::from_analytic(GRID, GRID, AnalyticMap::Pixel(centred.clone()), None)?;
    let mask: Vec<bool> = probe
        .map()
        .iter()
        .map(|t| t.iter().all(|&v| (-0.5..=GRID as f64 - 0.5).contains(&v)))
        .collect();
    DenseWarp::from_analytic(GRID, GRID, AnalyticMap::Pixel(centred), Some(mask))
}

/// Parameters of a mapping-level instance: features of I, J, I' and of a
/// negative pair, plus the bin score.
struct Instance {
    params: Vec<Tensor<f64>>,
    gt_one: GroundTruth<f64>,
    gt_smooth: GroundTruth<f64>,
    keypoints: Vec<(Point, Point)>,
    bin: bool,
}

const F_I: usize = 0;
const F_J: usize = 1;
const F_IP: usize = 2;
const F_A: usize = 3;
const F_B: usize = 4;
const Z: usize = 5;

impl Instance {
    fn new(rng: &mut ChaCha8Rng, bin: bool) -> Result<Self> {
        let mut params: Vec<Tensor<f64>> = (0..5).map(|_| randn(rng, &[D, GRID, GRID])).collect();
        if bin {
            params.push(Tensor::scalar(rng.random_range(-0.5..0.5)));
        }
        let warp = random_grid_warp(rng)?;
        let keypoints = (0..4)
            .map(|_| {
                let mut p = || [rng.random_range(0.0..GRID as f64 - 1.0), rng.random_range(0.0..GRID as f64 - 1.0)];
                (p(), p())
            })
            .collect();
        Ok(Instance {
            params,
            gt_one: gt_prob_mapping(&warp, GtMode::OneHot, bin)?,
            gt_smooth: gt_prob_mapping(&warp, GtMode::Smooth, bin)?,
            keypoints,
            bin,
        })
    }
}

/// Normalized features and a mapping builder on a graph.
fn mapping(g: &mut Graph<f64>, v: &[Var], t: usize, s: usize, bin: bool) -> Result<ProbNode> {
    let ft = g.l2_normalize_channels(v[t], FEATURE_EPS)?;
    let fs = g.l2_normalize_channels(v[s], FEATURE_EPS)?;
    let c = cost_volume(g, ft, fs, bin.then(|| v[Z]))?;
    to_prob_mapping(g, &c, TEMPERATURE)
}

/// Loss terms under test. Mask and weights come from the caller so they
/// stay fixed under perturbation.
#[derive(Clone, Copy)]
enum Term {
    PwBipath,
    /// `prob` drops the softmax scores, forcing the clamped-log route.
    PwarpSup { prob: bool },
    Pneg { prob: bool },
    Keypoint(KeypointMode),
    Baseline(BaselineKind),
    Weak,
    Strong,
}

fn components(
    g: &mut Graph<f64>,
    v: &[Var],
    inst: &Instance,
    mask: &VisibilityMask,
    term: Term,
) -> Result<Components> {
    let bin = inst.bin;
    let strip = |mut p: ProbNode, prob: bool| {
        if prob {
            p.softmax_input = None;
        }
        p
    };
    let mut c = Components::default();
    let p_tj = mapping(g, v, F_I, F_J, bin)?;
    if matches!(term, Term::PwBipath | Term::Weak | Term::Strong) {
        let p_js = mapping(g, v, F_J, F_IP, bin)?;
        let comp = compose(g, &p_tj, &p_js)?;
        c.vis_pw_bi = Some(pw_bipath_loss_composed(g, &comp, &inst.gt_one, mask)?);
    }
    if let Term::PwarpSup { prob } = term {
        let p_ts = strip(mapping(g, v, F_I, F_IP, bin)?, prob);
        c.pwarp_sup = Some(pwarp_sup_loss(g, &p_ts, &inst.gt_smooth)?);
    } else if matches!(term, Term::Weak | Term::Strong) {
        let p_ts = mapping(g, v, F_I, F_IP, bin)?;
        c.pwarp_sup = Some(pwarp_sup_loss(g, &p_ts, &inst.gt_smooth)?);
    }
    if let Term::Pneg { prob } = term {
        let p_ab = strip(mapping(g, v, F_A, F_B, bin)?, prob);
        c.pneg = Some(pneg_loss(g, &p_ab, DEFAULT_P_NEG)?);
    } else if matches!(term, Term::Weak) {
        let p_ai = mapping(g, v, F_A, F_I, bin)?;
        c.pneg = Some(pneg_loss(g, &p_ai, DEFAULT_P_NEG)?);
    }
    match term {
        Term::Keypoint(mode) => c.kp = Some(keypoint_loss(g, &p_tj, &inst.keypoints, mode)?),
        Term::Strong => c.kp = Some(keypoint_loss(g, &p_tj, &inst.keypoints, KeypointMode::Ce(GtMode::Smooth))?),
        Term::Baseline(kind) => c.baseline = Some(baseline_loss(g, &p_tj, kind, 1.0)?),
        _ => {}
    }
    Ok(c)
}

fn losses(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = Vec::new();
    let cases: [(&str, Term, bool); 12] = [
        ("pw_bipath", Term::PwBipath, true),
        ("pwarp_sup", Term::PwarpSup { prob: false }, true),
        ("pwarp_sup_clamped_log", Term::PwarpSup { prob: true }, true),
        ("pneg", Term::Pneg { prob: false }, true),
        ("pneg_clamped_log", Term::Pneg { prob: true }, true),
        ("keypoint_ce_onehot", Term::Keypoint(KeypointMode::Ce(GtMode::OneHot)), false),
        ("keypoint_ce_smooth", Term::Keypoint(KeypointMode::Ce(GtMode::Smooth)), false),
        ("keypoint_epe", Term::Keypoint(KeypointMode::Epe), true),
        ("max_score", Term::Baseline(BaselineKind::MaxScore), true),
        ("min_entropy", Term::Baseline(BaselineKind::MinEntropy), true),
        ("weak_objective", Term::Weak, true),
        ("strong_objective", Term::Strong, false),
    ];
    for (name, term, bin) in cases {
        let inst = Instance::new(&mut rng, bin)?;
        // Mask and weights from the unperturbed instance.
        let mut g = Graph::new();
        let v: Vec<Var> = inst.params.iter().map(|p| g.param(p.clone())).collect();
        let p_tj = mapping(&mut g, &v, F_I, F_J, bin)?;
        let p_js = mapping(&mut g, &v, F_J, F_IP, bin)?;
        let comp = compose(&mut g, &p_tj, &p_js)?;
        let mask = estimate_visibility(&comp.value(&g), &inst.gt_one, DEFAULT_GAMMA)?;
        let values = components(&mut g, &v, &inst, &mask, term)?.values(&g);
        let lambdas = match term {
            Term::Weak => values.weak_lambdas(1.0),
            Term::Strong => values.strong_lambdas(),
            _ => Lambdas {
                psup: 1.0,
                pneg: 1.0,
                kp: 1.0,
            },
        };
        let params = inst.params.clone();
        out.push(check(name, CheckKind::Composite, params, Box::new(move |g, v| {
            let c = components(g, v, &inst, &mask, term)?;
            Ok(assemble(g, &c, &lambdas)?.0)
        }))?);
    }
    Ok(out)
}

/// Encoder, cost volume, softmax and cross-entropy end to end on a 16x16
/// image.
fn encoder_chain(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe1c0);
    let cfg = EncoderConfig {
        hidden: 4,
        feature_dim: 3,
        ..EncoderConfig::default()
    };
    let enc = Encoder::new(cfg, &mut rng)?;
    let mut params: Vec<Tensor<f64>> = enc.params.iter().map(|(_, t)| t.cast()).collect();
    let last = params.len() - 1;
    params[last] = Tensor::scalar(0.2);
    let img_a = uniform(&mut rng, &[3, 16, 16], 0.0, 1.0);
    let img_b = uniform(&mut rng, &[3, 16, 16], 0.0, 1.0);
    // Features on a 4x4 grid: 16 spatial rows plus the bin.
    let target = positive(&mut rng, 17, 16);
    let weights = vec![1.0 / 16.0; 16];
    check("encoder_cost_volume_ce", CheckKind::Composite, params, Box::new(move |g, v| {
        let vars = EncoderVars {
            kernels: [v[0], v[1], v[2]],
            z: Some(v[3]),
            all: v.to_vec(),
        };
        let a = g.constant(img_a.clone());
        let b = g.constant(img_b.clone());
        let fa = enc.encode(g, &vars, a)?;
        let fb = enc.encode(g, &vars, b)?;
        let c = cost_volume(g, fa, fb, vars.z)?;
        let p = g.softmax_columns(c.scores, TEMPERATURE)?;
        g.ce_with_constant_target(p, &target, &weights)
    }))
}

/// Runs every check. Deterministic in `seed`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = primitives(seed)?;
    out.extend(losses(seed)?);
    out.push(encoder_chain(seed)?);
    Ok(out)
}
