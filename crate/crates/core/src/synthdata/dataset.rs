use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{Affine, AnalyticMap, DenseWarp, Image, Point};

use super::pair::{make_pair, InstancePair, Label, PairConfig};
use super::template::{make_templates, ClassTemplate, TemplateConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_classes: usize,
    pub templates: TemplateConfig,
    pub pair: PairConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            n_pos: 286,
            n_neg: 286,
            n_classes: 6,
            templates: TemplateConfig::default(),
            pair: PairConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("`{s}` is not one of train, val, test"))
    }
}

/// Index-addressable corpus; every pair is a pure function of `(seed, index)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    cfg: DatasetConfig,
    templates: Vec<ClassTemplate>,
}

impl Dataset {
    pub fn new(cfg: DatasetConfig) -> Result<Self> {
        cfg.pair.validate()?;
        if cfg.n_pos + cfg.n_neg == 0 {
            return Err(Error::Parameter("dataset needs at least one pair".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let templates = make_templates(&mut rng, cfg.n_classes, &cfg.templates)?;
        Ok(Dataset { cfg, templates })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    pub fn templates(&self) -> &[ClassTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.cfg.n_pos + self.cfg.n_neg
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Negatives are spread evenly through the index range.
    pub fn label(&self, index: usize) -> Label {
        let (n, neg) = (self.len(), self.cfg.n_neg);
        if (index + 1) * neg / n > index * neg / n {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    /// 70 / 15 / 15 split by contiguous index ranges.
    pub fn split(&self, index: usize) -> Split {
        let n = self.len();
        if index < n * 70 / 100 {
            Split::Train
        } else if index < n * 85 / 100 {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split(i) == split).collect()
    }

    pub fn pair(&self, index: usize) -> Result<InstancePair> {
        if index >= self.len() {
            return Err(Error::Parameter(format!("pair index {index} out of range {}", self.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64 + 1);
        make_pair(&mut rng, &self.templates, self.label(index) == Label::Positive, &self.cfg.pair)
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub label: Label,
    pub split: Split,
    pub class_a: usize,
    pub class_b: usize,
    pub image_a: String,
    pub image_b: String,
    pub foreground_a: String,
    pub foreground_b: String,
    /// Row-major 2x3 template-to-image matrices.
    pub transform_a: [f64; 6],
    pub transform_b: [f64; 6],
    /// `[ax, ay, bx, by]` per keypoint.
    pub keypoints: Vec<[f64; 4]>,
}

pub const MANIFEST: &str = "manifest.jsonl";

fn flat(a: &Affine) -> [f64; 6] {
    let m = &a.m;
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]]
}

fn unflat(v: &[f64; 6]) -> Affine {
    Affine {
        m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]]],
    }
}

fn mask_image(mask: &[bool], size: usize) -> Image {
    Image::from_fn(size, size, 1, |x, y, _| mask[y * size + x] as u8 as f32)
}

/// Writes every pair as PWIM tensors plus a JSON-lines manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<ManifestRecord>> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let size = ds.config().pair.image_size;
    let manifest_path = dir.join(MANIFEST);
    let file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut out = BufWriter::new(file);
    let mut records = Vec::with_capacity(ds.len());
    for index in 0..ds.len() {
        let p = ds.pair(index)?;
        let name = |s: &str| format!("images/{index:05}_{s}.pwim");
        let rec = ManifestRecord {
            index,
            label: p.label,
            split: ds.split(index),
            class_a: p.class_a,
            class_b: p.class_b,
            image_a: name("a"),
            image_b: name("b"),
            foreground_a: name("fg_a"),
            foreground_b: name("fg_b"),
            transform_a: flat(&p.transform_a),
            transform_b: flat(&p.transform_b),
            keypoints: p.keypoints.iter().map(|(a, b)| [a[0], a[1], b[0], b[1]]).collect(),
        };
        p.image_a.write_pwim(dir.join(&rec.image_a))?;
        p.image_b.write_pwim(dir.join(&rec.image_b))?;
        mask_image(&p.foreground_a, size).write_pwim(dir.join(&rec.foreground_a))?;
        mask_image(&p.foreground_b, size).write_pwim(dir.join(&rec.foreground_b))?;
        let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
        records.push(rec);
    }
    out.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::format(offset, format!("manifest: {e}")))?;
            records.push(rec);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(records)
}

/// Reloads a pair written by [`write_dataset`]. The ground-truth map is
/// rebuilt from the stored placements, so it is exact.
pub fn load_pair(dir: &Path, rec: &ManifestRecord) -> Result<InstancePair> {
    let image_a = Image::read_pwim(dir.join(&rec.image_a))?;
    let image_b = Image::read_pwim(dir.join(&rec.image_b))?;
    let mask = |rel: &str| -> Result<Vec<bool>> {
        Ok(Image::read_pwim(dir.join(rel))?.data().iter().map(|&v| v > 0.5).collect())
    };
    let foreground_a = mask(&rec.foreground_a)?;
    let foreground_b = mask(&rec.foreground_b)?;
    let size = image_b.width();
    let transform_a = unflat(&rec.transform_a);
    let transform_b = unflat(&rec.transform_b);
    let gt_map_ab = match rec.label {
        Label::Positive => {
            let map = transform_a.compose(&transform_b.inverse()?);
            Some(DenseWarp::from_analytic(size, size, AnalyticMap::Pixel(map), Some(foreground_b.clone()))?)
        }
        Label::Negative => None,
    };
    let keypoints: Vec<(Point, Point)> = rec.keypoints.iter().map(|k| ([k[0], k[1]], [k[2], k[3]])).collect();
    Ok(InstancePair {
        image_a,
        image_b,
        class_a: rec.class_a,
        class_b: rec.class_b,
        transform_a,
        transform_b,
        foreground_a,
        foreground_b,
        gt_map_ab,
        keypoints,
        label: rec.label,
    })
}
