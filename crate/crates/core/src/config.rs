//! Experiment configuration: a flat text file of `key = value` lines grouped
//! under `[section]` headers.
//!
//! ```text
//! # comment
//! [train]
//! steps = 500
//! objective = weak
//! ```
//!
//! Every key has a default (see [`ExperimentConfig::to_text`] for the full
//! list); unknown sections, unknown keys and repeated keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::{EvalConfig, PckConfig, Reference};
use crate::model::{EncoderConfig, Objective, TrainConfig};
use crate::objectives::KeypointMode;
use crate::probmap::GtMode;
use crate::synthdata::{DatasetConfig, Split};

/// Environment variable naming a default configuration file.
pub const CONFIG_ENV: &str = "PWCONFIG";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub encoder: EncoderConfig,
    /// `train.jitter` is derived from `photometric_jitter` and the rendering
    /// jitter; see [`ExperimentConfig::train_config`].
    pub train: TrainConfig,
    pub photometric_jitter: bool,
    /// Save a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: usize,
    pub pck: PckConfig,
    pub eval_split: Split,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            photometric_jitter: true,
            checkpoint_every: 500,
            pck: PckConfig::default(),
            eval_split: Split::Test,
        }
    }
}

/// Conversion between a field and its textual value.
trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("`{s}` is not a valid {}", stringify!($t)))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(f64, f32, usize, u64);

impl Value for bool {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("`{s}` is not true or false")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for Objective {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl Value for KeypointMode {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ce_onehot" => Ok(KeypointMode::Ce(GtMode::OneHot)),
            "ce_smooth" => Ok(KeypointMode::Ce(GtMode::Smooth)),
            "epe" => Ok(KeypointMode::Epe),
            _ => Err(format!("`{s}` is not one of ce_onehot, ce_smooth, epe")),
        }
    }
    fn render(&self) -> String {
        match self {
            KeypointMode::Ce(GtMode::OneHot) => "ce_onehot",
            KeypointMode::Ce(GtMode::Smooth) => "ce_smooth",
            KeypointMode::Epe => "epe",
        }
        .to_string()
    }
}

impl Value for Reference {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl Value for Split {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl Value for Vec<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|t| <f64 as Value>::parse(t.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
    }
}

type Getter = fn(&ExperimentConfig) -> String;
type Setter = fn(&mut ExperimentConfig, &str) -> std::result::Result<(), String>;

struct Key {
    section: &'static str,
    name: &'static str,
    doc: &'static str,
    get: Getter,
    set: Setter,
}

macro_rules! key {
    ($section:literal, $name:literal, $doc:literal, $($path:tt)+) => {
        Key {
            section: $section,
            name: $name,
            doc: $doc,
            get: |c| Value::render(&c.$($path)+),
            set: |c, v| {
                c.$($path)+ = Value::parse(v)?;
                Ok(())
            },
        }
    };
}

const KEYS: &[Key] = &[
    key!("data", "seed", "dataset seed", data.seed),
    key!("data", "n_pos", "positive pairs", data.n_pos),
    key!("data", "n_neg", "negative pairs", data.n_neg),
    key!("data", "n_classes", "object classes (at least 2)", data.n_classes),
    key!("data", "n_landmarks", "landmarks per class", data.templates.n_landmarks),
    key!("data", "min_parts", "fewest parts per class", data.templates.min_parts),
    key!("data", "max_parts", "most parts per class", data.templates.max_parts),
    key!("render", "image_size", "square image side in pixels", data.pair.image_size),
    key!("render", "base_radius", "pixels per template unit at scale 1", data.pair.base_radius),
    key!("render", "scale_min", "smallest instance scale", data.pair.scale_range.0),
    key!("render", "scale_max", "largest instance scale", data.pair.scale_range.1),
    key!("render", "max_rotation", "largest instance rotation (radians)", data.pair.max_rotation),
    key!("render", "min_inside", "fraction of the instance kept inside the image", data.pair.min_inside),
    key!("render", "coverage_min", "smallest foreground fraction", data.pair.coverage.0),
    key!("render", "coverage_max", "largest foreground fraction", data.pair.coverage.1),
    key!("render", "max_distractors", "distractor blobs per image", data.pair.max_distractors),
    key!("render", "distractor_scale_min", "smallest distractor scale", data.pair.distractor_scale.0),
    key!("render", "distractor_scale_max", "largest distractor scale", data.pair.distractor_scale.1),
    key!("jitter", "brightness_min", "lowest brightness gain", data.pair.jitter.brightness.0),
    key!("jitter", "brightness_max", "highest brightness gain", data.pair.jitter.brightness.1),
    key!("jitter", "contrast_min", "lowest contrast gain", data.pair.jitter.contrast.0),
    key!("jitter", "contrast_max", "highest contrast gain", data.pair.jitter.contrast.1),
    key!("jitter", "noise_sigma", "additive Gaussian noise", data.pair.jitter.noise_sigma),
    key!("warp", "sigma_h", "homography corner perturbation", train.warp.sigma_h),
    key!("warp", "sigma_tps", "TPS control point perturbation", train.warp.sigma_tps),
    key!("warp", "affine_scale", "affine scale range", train.warp.affine_scale),
    key!("warp", "affine_translation", "affine translation range", train.warp.affine_translation),
    key!("warp", "affine_angle", "affine rotation range (radians)", train.warp.affine_angle),
    key!("warp", "p_flip", "horizontal flip probability", train.warp.p_flip),
    key!("warp", "resize_size", "image side seen by the warp sampler", train.warp.resize_size),
    key!("warp", "crop_size", "training crop side", train.warp.crop_size),
    key!("encoder", "hidden", "hidden channels", encoder.hidden),
    key!("encoder", "feature_dim", "feature channels d", encoder.feature_dim),
    key!("encoder", "unmatched_bin", "learn the unmatched-state score z", encoder.unmatched_bin),
    key!("encoder", "z_init", "initial z", encoder.z_init),
    key!("train", "seed", "training seed", train.seed),
    key!("train", "objective", "weak, strong, warp_sup_only, pw_bipath_only, max_score or min_entropy", train.objective),
    key!("train", "steps", "optimizer updates", train.steps),
    key!("train", "batch_size", "triplets per update", train.batch_size),
    key!("train", "lr", "learning rate", train.adam.lr),
    key!("train", "beta1", "first-moment decay", train.adam.beta1),
    key!("train", "beta2", "second-moment decay", train.adam.beta2),
    key!("train", "eps", "optimizer epsilon", train.adam.eps),
    key!("train", "lr_halve_every", "halve the learning rate every this many steps (0: never)", train.lr_halve_every),
    key!("train", "temperature", "softmax temperature", train.temperature),
    key!("train", "gamma", "visible fraction kept by the mask", train.gamma),
    key!("train", "use_visibility", "mask the bipath loss", train.use_visibility),
    key!("train", "p_neg", "target unmatched probability on negatives", train.p_neg),
    key!("train", "lambda_pneg", "weight of the negative-pair loss", train.lambda_pneg),
    key!("train", "negatives_per_positive", "negative pairs per triplet (0 or 1)", train.negatives_per_positive),
    key!("train", "keypoint_mode", "ce_onehot, ce_smooth or epe", train.keypoint_mode),
    key!("train", "photometric_jitter", "jitter training triplets", photometric_jitter),
    key!("train", "checkpoint_every", "checkpoint interval in steps (0: final only)", checkpoint_every),
    key!("eval", "alphas", "PCK thresholds", pck.alphas),
    key!("eval", "reference", "image or bbox", pck.reference),
    key!("eval", "split", "train, val or test", eval_split),
];

impl ExperimentConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if !KEYS.iter().any(|k| k.section == name) {
                    return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::Config(format!("line {line_no}: key `{k}` outside any section")))?;
            let key = KEYS
                .iter()
                .find(|e| e.section == sec && e.name == k)
                .ok_or_else(|| Error::Config(format!("line {line_no}: unknown key `{sec}.{k}`")))?;
            if !seen.insert((sec.to_string(), k.to_string())) {
                return Err(Error::Config(format!("line {line_no}: key `{sec}.{k}` given twice")));
            }
            (key.set)(&mut cfg, v).map_err(|e| Error::Config(format!("line {line_no}: `{sec}.{k}`: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Loads `path`, else the file named by `PWCONFIG`, else the defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    /// Every key with its current value, grouped by section. Parsing the
    /// output reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for k in KEYS {
            if k.section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", k.section);
                current = k.section;
            }
            let _ = writeln!(out, "# {}\n{} = {}", k.doc, k.name, (k.get)(self));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |e: Error| Error::Config(e.to_string());
        self.data.pair.validate().map_err(ctx)?;
        self.pck.validate().map_err(ctx)?;
        self.train_config().validate(&self.encoder).map_err(ctx)?;
        if self.train.warp.resize_size != self.data.pair.image_size {
            return Err(Error::Config(format!(
                "warp.resize_size ({}) must equal render.image_size ({})",
                self.train.warp.resize_size, self.data.pair.image_size
            )));
        }
        if self.train.warp.crop_size % 4 != 0 {
            return Err(Error::Config("warp.crop_size must be a multiple of 4".into()));
        }
        if self.data.n_classes < 2 {
            return Err(Error::Config("data.n_classes must be at least 2".into()));
        }
        Ok(())
    }

    /// Training settings with the photometric jitter resolved.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            jitter: self.photometric_jitter.then(|| self.data.pair.jitter.clone()),
            ..self.train.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            pck: self.pck.clone(),
            temperature: self.train.temperature,
        }
    }
}
