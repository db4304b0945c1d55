use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::warp::{Affine, AnalyticMap, DenseWarp, Image, Jitter, Point};

use super::template::{hsv_to_rgb, ClassTemplate};

/// Placement attempts before a pair is given up.
pub const MAX_PLACEMENT_TRIES: usize = 32;

/// Rendering and placement ranges for instance pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairConfig {
    pub image_size: usize,
    /// Pixels per template unit at scale 1.
    pub base_radius: f64,
    pub scale_range: (f64, f64),
    pub max_rotation: f64,
    /// Minimum fraction of the instance that must lie inside the image.
    pub min_inside: f64,
    /// Allowed fraction of image pixels covered by the instance.
    pub coverage: (f64, f64),
    pub max_distractors: usize,
    pub distractor_scale: (f64, f64),
    pub jitter: Jitter,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            image_size: 64,
            base_radius: 22.0,
            scale_range: (0.6, 1.4),
            max_rotation: PI / 6.0,
            min_inside: 0.8,
            coverage: (0.15, 0.60),
            max_distractors: 3,
            distractor_scale: (0.25, 0.45),
            jitter: Jitter::default(),
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.image_size < 8 || self.image_size % 4 != 0 {
            return Err(Error::Parameter(format!(
                "image size {} must be a multiple of 4 and at least 8",
                self.image_size
            )));
        }
        if !(lo > 0.0 && lo <= hi) || !(self.base_radius > 0.0) {
            return Err(Error::Parameter("scale range and base radius must be positive".into()));
        }
        if !(self.coverage.0 < self.coverage.1) || !(0.0..=1.0).contains(&self.min_inside) {
            return Err(Error::Parameter("coverage range must be increasing, min_inside in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Two rendered images and, for positives, their exact dense correspondence.
#[derive(Clone, Debug)]
pub struct InstancePair {
    pub image_a: Image,
    pub image_b: Image,
    pub class_a: usize,
    pub class_b: usize,
    /// Template-to-image placements.
    pub transform_a: Affine,
    pub transform_b: Affine,
    pub foreground_a: Vec<bool>,
    pub foreground_b: Vec<bool>,
    /// `T_a ∘ T_b⁻¹`, mapping image-b pixels to image-a pixels, valid on the
    /// foreground of b. `None` for negatives.
    pub gt_map_ab: Option<DenseWarp>,
    /// `(point in a, point in b)` for every landmark visible in both images.
    pub keypoints: Vec<(Point, Point)>,
    pub label: Label,
}

/// Smooth value noise: bilinear-smoothstep interpolation of a random lattice,
/// two octaves, in low-saturation colours.
fn background<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Image {
    let mut img = Image::zeros(size, size, 3);
    let base_hue = rng.random::<f64>();
    for (octave, cells, gain) in [(0, 4usize, 0.7f32), (1, 9, 0.3)] {
        let n = cells + 1;
        let lattice: Vec<[f32; 3]> = (0..n * n)
            .map(|_| {
                let h = base_hue + rng.random_range(-0.15..0.15) + 0.5 * octave as f64 * rng.random::<f64>();
                hsv_to_rgb(h, rng.random_range(0.0..0.25), rng.random_range(0.2..0.8))
            })
            .collect();
        let step = cells as f64 / size as f64;
        for y in 0..size {
            for x in 0..size {
                let (u, v) = ((x as f64 + 0.5) * step, (y as f64 + 0.5) * step);
                let (i, j) = ((u.floor() as usize).min(cells - 1), (v.floor() as usize).min(cells - 1));
                let s = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
                let (fx, fy) = (s(u - i as f64), s(v - j as f64));
                for c in 0..3 {
                    let l = |a: usize, b: usize| lattice[b * n + a][c];
                    let top = l(i, j) * (1.0 - fx) + l(i + 1, j) * fx;
                    let bot = l(i, j + 1) * (1.0 - fx) + l(i + 1, j + 1) * fx;
                    let cur = img.get(x, y, c);
                    img.set(x, y, c, cur + gain * (top * (1.0 - fy) + bot * fy));
                }
            }
        }
    }
    img
}

/// Paints `template` through `placement`; returns the covered pixels.
fn paint(img: &mut Image, template: &ClassTemplate, placement: &Affine) -> Result<Vec<bool>> {
    let inv = placement.inverse()?;
    let (w, h) = (img.width(), img.height());
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let q = inv.apply([x as f64, y as f64]);
            if template.contains(q) {
                let col = template.color(q);
                for (c, v) in col.iter().enumerate() {
                    img.set(x, y, c, *v);
                }
                mask[y * w + x] = true;
            }
        }
    }
    Ok(mask)
}

fn coverage_mask(template: &ClassTemplate, placement: &Affine, size: usize) -> Result<Vec<bool>> {
    let inv = placement.inverse()?;
    Ok((0..size * size)
        .map(|k| template.contains(inv.apply([(k % size) as f64, (k / size) as f64])))
        .collect())
}

/// Draws an affine placement satisfying the inside-fraction and coverage
/// constraints.
pub fn sample_placement<R: Rng + ?Sized>(rng: &mut R, template: &ClassTemplate, cfg: &PairConfig) -> Result<Affine> {
    let size = cfg.image_size;
    let area = template.area();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1);
        let angle = rng.random_range(-cfg.max_rotation..=cfg.max_rotation);
        let cx = rng.random_range(0.0..(size - 1) as f64);
        let cy = rng.random_range(0.0..(size - 1) as f64);
        let t = Affine::from_params(scale * cfg.base_radius, angle, 0.0, cx, cy);
        let covered = coverage_mask(template, &t, size)?.iter().filter(|&&m| m).count() as f64;
        let inside = covered / (area * t.det().abs());
        let coverage = covered / (size * size) as f64;
        if inside >= cfg.min_inside && coverage >= cfg.coverage.0 && coverage <= cfg.coverage.1 {
            return Ok(t);
        }
    }
    Err(Error::Degenerate(format!(
        "no placement of class {} met the constraints in {MAX_PLACEMENT_TRIES} tries",
        template.class_id
    )))
}

fn render<R: Rng + ?Sized>(
    rng: &mut R,
    templates: &[ClassTemplate],
    template: &ClassTemplate,
    placement: &Affine,
    cfg: &PairConfig,
) -> Result<(Image, Vec<bool>)> {
    let size = cfg.image_size;
    let mut img = background(rng, size);
    let others: Vec<&ClassTemplate> = templates.iter().filter(|t| t.class_id != template.class_id).collect();
    let n = rng.random_range(0..=cfg.max_distractors);
    for _ in 0..n {
        if others.is_empty() {
            break;
        }
        let d = others[rng.random_range(0..others.len())];
        let t = Affine::from_params(
            rng.random_range(cfg.distractor_scale.0..=cfg.distractor_scale.1) * cfg.base_radius,
            rng.random_range(0.0..2.0 * PI),
            0.0,
            rng.random_range(0.0..size as f64),
            rng.random_range(0.0..size as f64),
        );
        paint(&mut img, d, &t)?;
    }
    let mask = paint(&mut img, template, placement)?;
    Ok((cfg.jitter.apply(&img, rng), mask))
}

fn in_image(p: Point, size: usize) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (size - 1) as f64 && p[1] <= (size - 1) as f64
}

/// Ground truth and keypoints implied by two placements of one template.
pub fn correspondence(
    template: &ClassTemplate,
    transform_a: &Affine,
    transform_b: &Affine,
    foreground_b: Vec<bool>,
    size: usize,
) -> Result<(DenseWarp, Vec<(Point, Point)>)> {
    let map = transform_a.compose(&transform_b.inverse()?);
    let warp = DenseWarp::from_analytic(size, size, AnalyticMap::Pixel(map), Some(foreground_b))?;
    let kps = template
        .landmarks
        .iter()
        .map(|&l| (transform_a.apply(l), transform_b.apply(l)))
        .filter(|(a, b)| in_image(*a, size) && in_image(*b, size))
        .collect();
    Ok((warp, kps))
}

/// Renders a positive pair (one template placed twice) or a negative pair
/// (two different templates).
pub fn make_pair<R: Rng + ?Sized>(
    rng: &mut R,
    templates: &[ClassTemplate],
    positive: bool,
    cfg: &PairConfig,
) -> Result<InstancePair> {
    cfg.validate()?;
    if templates.is_empty() || (!positive && templates.len() < 2) {
        return Err(Error::Parameter("not enough templates for the requested pair".into()));
    }
    let ia = rng.random_range(0..templates.len());
    let ib = if positive {
        ia
    } else {
        (ia + rng.random_range(1..templates.len())) % templates.len()
    };
    let (ta, tb) = (&templates[ia], &templates[ib]);
    let transform_a = sample_placement(rng, ta, cfg)?;
    let transform_b = sample_placement(rng, tb, cfg)?;
    let (image_a, foreground_a) = render(rng, templates, ta, &transform_a, cfg)?;
    let (image_b, foreground_b) = render(rng, templates, tb, &transform_b, cfg)?;
    let (gt_map_ab, keypoints) = if positive {
        let (w, k) = correspondence(ta, &transform_a, &transform_b, foreground_b.clone(), cfg.image_size)?;
        (Some(w), k)
    } else {
        (None, Vec::new())
    };
    Ok(InstancePair {
        image_a,
        image_b,
        class_a: ta.class_id,
        class_b: tb.class_id,
        transform_a,
        transform_b,
        foreground_a,
        foreground_b,
        gt_map_ab,
        keypoints,
        label: if positive { Label::Positive } else { Label::Negative },
    })
}
