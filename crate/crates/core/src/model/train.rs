use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndgraph::{Graph, Var};
use crate::objectives::{
    assemble, baseline_loss, estimate_visibility, keypoint_loss, pneg_loss, pw_bipath_loss_composed, pwarp_sup_loss,
    BaselineKind, ComponentValues, Components, KeypointMode, Lambdas, LossReport, VisibilityMask, DEFAULT_GAMMA,
    DEFAULT_P_NEG,
};
use crate::probmap::{compose, cost_volume, gt_prob_mapping, to_prob_mapping, GtMode, ProbNode, DEFAULT_TEMPERATURE};
use crate::synthdata::{InstancePair, Label};
use crate::warp::{build_triplet, crop_offset, downscale_warp, sample_warp, Image, Jitter, Point, WarpConfig};

use super::checkpoint::Checkpoint;
use super::encoder::{Encoder, EncoderConfig, EncoderVars};
use super::optim::{Adam, AdamConfig};

/// Training objective, including the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Masked bipath + warp supervision + negative-pair loss.
    Weak,
    /// Masked bipath + warp supervision + keypoints.
    Strong,
    WarpSupOnly,
    /// Unmasked bipath loss alone.
    PwBipathOnly,
    MaxScore,
    MinEntropy,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::Weak,
        Objective::Strong,
        Objective::WarpSupOnly,
        Objective::PwBipathOnly,
        Objective::MaxScore,
        Objective::MinEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Weak => "weak",
            Objective::Strong => "strong",
            Objective::WarpSupOnly => "warp_sup_only",
            Objective::PwBipathOnly => "pw_bipath_only",
            Objective::MaxScore => "max_score",
            Objective::MinEntropy => "min_entropy",
        }
    }

    fn uses_negatives(self) -> bool {
        matches!(self, Objective::Weak | Objective::MaxScore | Objective::MinEntropy)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub objective: Objective,
    pub gamma: f64,
    pub temperature: f64,
    pub p_neg: f64,
    pub lambda_pneg: f64,
    /// Restricts the bipath loss to the estimated visible cells.
    pub use_visibility: bool,
    /// Negative pairs per positive triplet in the weak objective (0 or 1).
    pub negatives_per_positive: usize,
    pub keypoint_mode: KeypointMode,
    pub warp: WarpConfig,
    pub jitter: Option<Jitter>,
    /// Halve the learning rate every this many steps (0 disables).
    pub lr_halve_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 8,
            steps: 2000,
            objective: Objective::Weak,
            gamma: DEFAULT_GAMMA,
            temperature: DEFAULT_TEMPERATURE,
            p_neg: DEFAULT_P_NEG,
            lambda_pneg: 1.0,
            use_visibility: true,
            negatives_per_positive: 1,
            keypoint_mode: KeypointMode::Ce(GtMode::Smooth),
            warp: WarpConfig::default(),
            jitter: Some(Jitter::default()),
            lr_halve_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if !(self.adam.lr >= 0.0) || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("need lr >= 0, steps >= 1 and batch_size >= 1".into()));
        }
        if !(self.temperature > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter("temperature must be > 0 and gamma in (0, 1]".into()));
        }
        if self.negatives_per_positive > 1 {
            return Err(Error::Parameter("at most one negative pair per positive is supported".into()));
        }
        if self.objective == Objective::Strong && enc.unmatched_bin {
            return Err(Error::Config("the strong objective runs without the unmatched bin".into()));
        }
        self.warp.validate()
    }

    /// Learning rate of update number `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.lr_halve_every {
            0 => self.adam.lr,
            k => self.adam.lr * 0.5f64.powi(((t - 1) / k as u64) as i32),
        }
    }
}

/// Training pairs split by label.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub positives: Vec<InstancePair>,
    pub negatives: Vec<InstancePair>,
}

impl TrainData {
    pub fn from_pairs(pairs: impl IntoIterator<Item = InstancePair>) -> Self {
        let mut d = TrainData::default();
        for p in pairs {
            match p.label {
                Label::Positive => d.positives.push(p),
                Label::Negative => d.negatives.push(p),
            }
        }
        d
    }
}

/// Central `s x s` crop of an image.
pub fn center_crop(img: &Image, s: usize) -> Result<Image> {
    img.crop(crop_offset(img.width(), s), crop_offset(img.height(), s), s, s)
}

struct Element {
    g: Graph<f32>,
    vars: EncoderVars,
    comps: Components,
    values: ComponentValues,
}

/// Gradients and report of one step, before the optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub report: LossReport,
    pub grads: Vec<Vec<f64>>,
}

/// Encoder, optimizer and step counter. Every batch is a pure function of
/// the seed and the step index, so resumed runs replay exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub enc: Encoder,
    pub opt: Adam,
    pub step: u64,
}

const DATA_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl Trainer {
    pub fn new(cfg: TrainConfig, enc_cfg: EncoderConfig) -> Result<Self> {
        cfg.validate(&enc_cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let enc = Encoder::new(enc_cfg, &mut rng)?;
        let opt = Adam::new(&enc, cfg.adam);
        Ok(Trainer { cfg, enc, opt, step: 0 })
    }

    pub fn from_checkpoint(cfg: TrainConfig, enc_cfg: EncoderConfig, ck: &Checkpoint) -> Result<Self> {
        cfg.validate(&enc_cfg)?;
        let mut tmp = Trainer::new(cfg, enc_cfg.clone())?;
        tmp.enc = ck.restore(&enc_cfg, &mut tmp.opt)?;
        tmp.step = ck.step;
        Ok(tmp)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_state(&self.enc, &self.opt, self.step)
    }

    fn element_rng(&self, step: u64, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ DATA_STREAM_SALT);
        rng.set_stream((step << 16) | k as u64);
        rng
    }

    fn build_element(&self, data: &TrainData, step: u64, k: usize) -> Result<Element> {
        let cfg = &self.cfg;
        let mut rng = self.element_rng(step, k);
        let pos = &data.positives[rng.random_range(0..data.positives.len())];
        let size = pos.image_a.width();
        let crop = cfg.warp.crop_size;
        let warp = sample_warp(&mut rng, &cfg.warp, size, pos.image_a.height())?;
        let jitter = cfg.jitter.as_ref().map(|j| (j, &mut rng));
        let trip = build_triplet(&pos.image_a, &pos.image_b, &warp, crop, jitter)?;
        let (gw, gh) = (crop / 4, crop / 4);
        let gt_warp = downscale_warp(&trip.warp, gw, gh)?;
        let bin = self.enc.cfg.unmatched_bin;
        let gt_one = gt_prob_mapping::<f32>(&gt_warp, GtMode::OneHot, bin)?;
        let gt_smooth = gt_prob_mapping::<f32>(&gt_warp, GtMode::Smooth, bin)?;

        let mut g = Graph::<f32>::new();
        let vars = self.enc.register(&mut g);
        let f_i = self.enc.encode_image(&mut g, &vars, &trip.image_i)?;
        let f_ip = self.enc.encode_image(&mut g, &vars, &trip.image_i_prime)?;
        let f_j = self.enc.encode_image(&mut g, &vars, &trip.image_j)?;
        let tau = cfg.temperature as f32;
        let mapping = |g: &mut Graph<f32>, t: Var, s: Var| -> Result<ProbNode> {
            let c = cost_volume(g, t, s, vars.z)?;
            to_prob_mapping(g, &c, tau)
        };
        let p_tj = mapping(&mut g, f_i, f_j)?;
        let mut comps = Components::default();
        let obj = cfg.objective;

        if matches!(obj, Objective::Weak | Objective::Strong | Objective::PwBipathOnly) {
            let p_js = mapping(&mut g, f_j, f_ip)?;
            let comp = compose(&mut g, &p_tj, &p_js)?;
            let mask = if cfg.use_visibility && obj != Objective::PwBipathOnly {
                estimate_visibility(&comp.value(&g), &gt_one, cfg.gamma)?
            } else {
                VisibilityMask::eligible(&gt_one)
            };
            comps.vis_pw_bi = Some(pw_bipath_loss_composed(&mut g, &comp, &gt_one, &mask)?);
        }
        if matches!(obj, Objective::Weak | Objective::Strong | Objective::WarpSupOnly) {
            let p_ts = mapping(&mut g, f_i, f_ip)?;
            comps.pwarp_sup = Some(pwarp_sup_loss(&mut g, &p_ts, &gt_smooth)?);
        }
        if obj == Objective::Strong {
            let kps = grid_keypoints(&pos.keypoints, size, crop);
            if !kps.is_empty() {
                comps.kp = Some(keypoint_loss(&mut g, &p_tj, &kps, cfg.keypoint_mode)?);
            }
        }
        let baseline = match obj {
            Objective::MaxScore => Some(BaselineKind::MaxScore),
            Objective::MinEntropy => Some(BaselineKind::MinEntropy),
            _ => None,
        };
        if let Some(kind) = baseline {
            comps.baseline = Some(baseline_loss(&mut g, &p_tj, kind, 1.0)?);
        }
        let wants_negative = obj.uses_negatives() && cfg.negatives_per_positive > 0 && !data.negatives.is_empty();
        if wants_negative && (bin || baseline.is_some()) {
            // A: the image of a negative pair whose class differs from I's.
            let neg = &data.negatives[rng.random_range(0..data.negatives.len())];
            let other = if neg.class_a != pos.class_a { &neg.image_a } else { &neg.image_b };
            let fa = self.enc.encode_image(&mut g, &vars, &center_crop(other, crop)?)?;
            let p_neg_map = mapping(&mut g, fa, f_i)?;
            if let Some(kind) = baseline {
                let b = baseline_loss(&mut g, &p_neg_map, kind, -1.0)?;
                comps.baseline = Some(match comps.baseline {
                    Some(a) => g.add(a, b)?,
                    None => b,
                });
            } else {
                comps.pneg = Some(pneg_loss(&mut g, &p_neg_map, cfg.p_neg)?);
            }
        }
        let values = comps.values(&g);
        Ok(Element { g, vars, comps, values })
    }

    fn lambdas(&self, mean: &ComponentValues) -> Lambdas {
        match self.cfg.objective {
            Objective::Weak => mean.weak_lambdas(self.cfg.lambda_pneg),
            Objective::Strong => mean.strong_lambdas(),
            _ => Lambdas {
                psup: 1.0,
                pneg: 1.0,
                kp: 1.0,
            },
        }
    }

    /// Forward and backward pass of the batch for update number `step`
    /// (1-based), without touching the parameters.
    pub fn compute_step(&self, data: &TrainData, step: u64) -> Result<StepResult> {
        if data.positives.is_empty() {
            return Err(Error::Parameter("training needs at least one positive pair".into()));
        }
        let b = self.cfg.batch_size;
        let diverged = |k: usize, e: Error| match e {
            Error::NonFinite(_) => Error::Diverged {
                step: step as usize,
                element: k,
                detail: e.to_string(),
            },
            other => other,
        };
        let mut elements = (0..b)
            .into_par_iter()
            .map(|k| self.build_element(data, step, k).map_err(|e| diverged(k, e)))
            .collect::<Result<Vec<Element>>>()?;
        let values: Vec<ComponentValues> = elements.iter().map(|e| e.values).collect();
        let lambdas = self.lambdas(&ComponentValues::mean(&values));
        let inv_b = 1.0 / b as f32;
        let results = elements
            .par_iter_mut()
            .enumerate()
            .map(|(k, el)| {
                let (total, report) = assemble(&mut el.g, &el.comps, &lambdas).map_err(|e| diverged(k, e))?;
                let scaled = el.g.scale(total, inv_b).map_err(|e| diverged(k, e))?;
                el.g.backward(scaled).map_err(|e| diverged(k, e))?;
                if !report.total.is_finite() {
                    return Err(Error::Diverged {
                        step: step as usize,
                        element: k,
                        detail: "non-finite loss".into(),
                    });
                }
                Ok(report)
            })
            .collect::<Result<Vec<LossReport>>>()?;
        let mut grads: Vec<Vec<f64>> = self.enc.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        for el in &elements {
            for (acc, &v) in grads.iter_mut().zip(&el.vars.all) {
                if let Some(gr) = el.g.grad(v) {
                    acc.iter_mut().zip(gr).for_each(|(a, &x)| *a += x as f64);
                }
            }
        }
        let report = LossReport::mean(&results).expect("non-empty batch");
        Ok(StepResult { report, grads })
    }

    /// Runs the next update and returns its report.
    pub fn train_step(&mut self, data: &TrainData) -> Result<LossReport> {
        let t = self.step + 1;
        let res = self.compute_step(data, t)?;
        let lr = self.cfg.lr_at(t);
        self.opt.step(&mut self.enc, &res.grads, t, lr)?;
        if !self.enc.all_finite() {
            return Err(Error::Diverged {
                step: t as usize,
                element: 0,
                detail: "parameters became non-finite after the update".into(),
            });
        }
        self.step = t;
        Ok(res.report)
    }
}

/// Converts `(point in I, point in J)` keypoints of full-size images into
/// `(source in J, target in I)` grid coordinates of the central crop,
/// dropping those outside it.
pub fn grid_keypoints(kps: &[(Point, Point)], size: usize, crop: usize) -> Vec<(Point, Point)> {
    let o = crop_offset(size, crop) as f64;
    let cells = (crop / 4) as f64;
    let to_grid = |p: Point| [(p[0] - o + 0.5) / 4.0 - 0.5, (p[1] - o + 0.5) / 4.0 - 0.5];
    let inside = |q: Point| q.iter().all(|&c| c >= -0.5 && c <= cells - 0.5);
    kps.iter()
        .map(|&(a, b)| (to_grid(b), to_grid(a)))
        .filter(|&(s, t)| inside(s) && inside(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("nope".parse::<Objective>().is_err());
    }

    #[test]
    fn lr_halving_is_step_indexed() {
        let cfg = TrainConfig {
            lr_halve_every: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(10), 1e-3);
        assert_eq!(cfg.lr_at(11), 5e-4);
    }

    #[test]
    fn keypoints_map_to_crop_grid() {
        let kps = [([4.0 + 1.5, 4.0 + 1.5], [4.0 - 2.0, 10.0])];
        assert!(grid_keypoints(&kps, 64, 56).is_empty());
        let kps = [([5.5, 5.5], [7.5, 9.5])];
        let g = grid_keypoints(&kps, 64, 56);
        assert_eq!(g, vec![([0.5, 1.0], [0.0, 0.0])]);
    }
}
