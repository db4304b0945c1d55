use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::warp::Point;

/// Control radii of a silhouette outline.
const OUTLINE_POINTS: usize = 12;
/// Largest hue offset of a part relative to its class hue.
const PART_HUE_SPREAD: f64 = 0.04;

/// Settings for [`make_templates`].
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateConfig {
    pub n_landmarks: usize,
    pub min_parts: usize,
    pub max_parts: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            n_landmarks: 8,
            min_parts: 4,
            max_parts: 8,
        }
    }
}

/// Hue separation guaranteed between the mean hues of `n` classes.
pub fn hue_margin(n_classes: usize) -> f64 {
    0.4 / n_classes as f64
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Appearance of one part: a hue-specific colour modulated by oriented stripes.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
    pub stripe_angle: f64,
    pub stripe_freq: f64,
    pub stripe_phase: f64,
}

impl Part {
    fn color(&self, q: Point) -> [f32; 3] {
        let (s, c) = self.stripe_angle.sin_cos();
        let t = self.stripe_freq * (q[0] * c + q[1] * s) + self.stripe_phase;
        hsv_to_rgb(self.hue, self.saturation, self.value * (0.7 + 0.3 * t.sin()))
    }
}

/// An object class in template coordinates: a star-shaped silhouette of
/// radius at most 1 around the origin, split into angular parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTemplate {
    pub class_id: usize,
    pub hue: f64,
    pub radii: Vec<f64>,
    /// Angle at which the first part starts.
    pub part_phase: f64,
    pub parts: Vec<Part>,
    pub landmarks: Vec<Point>,
}

impl ClassTemplate {
    /// Outline radius in direction `theta` (periodic cosine interpolation of
    /// the control radii).
    pub fn radius(&self, theta: f64) -> f64 {
        let n = self.radii.len();
        let u = theta.rem_euclid(TAU) / TAU * n as f64;
        let k = (u.floor() as usize) % n;
        let f = u - u.floor();
        let w = (1.0 - (f * PI).cos()) / 2.0;
        self.radii[k] * (1.0 - w) + self.radii[(k + 1) % n] * w
    }

    pub fn contains(&self, q: Point) -> bool {
        let r2 = q[0] * q[0] + q[1] * q[1];
        r2 < 1e-18 || r2.sqrt() <= self.radius(q[1].atan2(q[0]))
    }

    pub fn part_of(&self, q: Point) -> usize {
        let a = (q[1].atan2(q[0]) - self.part_phase).rem_euclid(TAU);
        ((a / TAU * self.parts.len() as f64) as usize).min(self.parts.len() - 1)
    }

    /// Texture colour at a template point (meaningful inside the silhouette).
    pub fn color(&self, q: Point) -> [f32; 3] {
        self.parts[self.part_of(q)].color(q)
    }

    /// Silhouette area in template units.
    pub fn area(&self) -> f64 {
        let n = 720;
        (0..n)
            .map(|k| {
                let r = self.radius((k as f64 + 0.5) / n as f64 * TAU);
                0.5 * r * r * TAU / n as f64
            })
            .sum()
    }

    /// Rasterized silhouette on a `res x res` grid spanning `[-1, 1]^2`.
    pub fn silhouette(&self, res: usize) -> Vec<bool> {
        let step = 2.0 / res as f64;
        (0..res * res)
            .map(|k| {
                let q = [-1.0 + ((k % res) as f64 + 0.5) * step, -1.0 + ((k / res) as f64 + 0.5) * step];
                self.contains(q)
            })
            .collect()
    }
}

fn make_template<R: Rng + ?Sized>(rng: &mut R, class_id: usize, hue: f64, cfg: &TemplateConfig) -> ClassTemplate {
    let raw: Vec<f64> = (0..OUTLINE_POINTS).map(|_| rng.random_range(0.65..=1.0)).collect();
    let n = raw.len();
    let radii = (0..n)
        .map(|k| 0.25 * raw[(k + n - 1) % n] + 0.5 * raw[k] + 0.25 * raw[(k + 1) % n])
        .collect();
    let n_parts = rng.random_range(cfg.min_parts..=cfg.max_parts);
    // evenly spread, shuffled offsets keep the class mean hue near `hue`
    let mut offsets: Vec<f64> = (0..n_parts)
        .map(|k| PART_HUE_SPREAD * (2.0 * k as f64 / (n_parts - 1) as f64 - 1.0))
        .collect();
    offsets.shuffle(rng);
    let parts = offsets
        .into_iter()
        .map(|o| Part {
            hue: (hue + o).rem_euclid(1.0),
            saturation: rng.random_range(0.6..0.9),
            value: rng.random_range(0.65..0.95),
            stripe_angle: rng.random_range(0.0..PI),
            stripe_freq: rng.random_range(8.0..12.0),
            stripe_phase: rng.random_range(0.0..TAU),
        })
        .collect();
    let mut t = ClassTemplate {
        class_id,
        hue,
        radii,
        part_phase: rng.random_range(0.0..TAU),
        parts,
        landmarks: Vec::new(),
    };
    // centroid of each of K equal sectors of a disc of the local radius
    let k = cfg.n_landmarks;
    let half = PI / k as f64;
    t.landmarks = (0..k)
        .map(|i| {
            let theta = t.part_phase + (2 * i + 1) as f64 * half;
            let r = 2.0 * t.radius(theta) * half.sin() / (3.0 * half);
            [r * theta.cos(), r * theta.sin()]
        })
        .collect();
    t
}

/// Builds `n_classes` templates with evenly spaced (slightly jittered) class
/// hues, so mean hues differ by at least [`hue_margin`].
pub fn make_templates<R: Rng + ?Sized>(rng: &mut R, n_classes: usize, cfg: &TemplateConfig) -> Result<Vec<ClassTemplate>> {
    if n_classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {n_classes}")));
    }
    if cfg.n_landmarks < 2 || cfg.min_parts < 2 || cfg.min_parts > cfg.max_parts {
        return Err(Error::Parameter("template config needs >= 2 landmarks and 2 <= min_parts <= max_parts".into()));
    }
    let base = rng.random::<f64>();
    Ok((0..n_classes)
        .map(|c| {
            let hue = (base + (c as f64 + 0.2 * (rng.random::<f64>() - 0.5)) / n_classes as f64).rem_euclid(1.0);
            make_template(rng, c, hue, cfg)
        })
        .collect())
}
