use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

use super::field::{in_bounds, DenseWarp};
use super::transform::{Affine, Homography, Point, Tps, Transform};

/// Attempts per draw before giving up on degenerate or low-coverage warps.
pub const MAX_WARP_TRIES: usize = 16;

/// Minimum fraction of the central crop whose target stays inside the crop.
pub const MIN_CROP_COVERAGE: f64 = 0.25;

/// Ranges for the synthetic warp distribution. All geometric ranges are in
/// normalized `[-1, 1]` coordinates, angles in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpConfig {
    pub sigma_h: f64,
    pub sigma_tps: f64,
    pub affine_scale: f64,
    pub affine_translation: f64,
    pub affine_angle: f64,
    pub p_flip: f64,
    pub resize_size: usize,
    pub crop_size: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            sigma_h: 0.4,
            sigma_tps: 0.4,
            affine_scale: 0.45,
            affine_translation: 0.25,
            affine_angle: PI / 12.0,
            p_flip: 0.05,
            resize_size: 64,
            crop_size: 56,
        }
    }
}

impl WarpConfig {
    /// A configuration that only ever produces the identity mapping.
    pub fn zero_range(resize_size: usize, crop_size: usize) -> Self {
        WarpConfig {
            sigma_h: 0.0,
            sigma_tps: 0.0,
            affine_scale: 0.0,
            affine_translation: 0.0,
            affine_angle: 0.0,
            p_flip: 0.0,
            resize_size,
            crop_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.sigma_h) || !in_unit(self.sigma_tps) {
            return Err(Error::Parameter(format!(
                "sigma_h and sigma_tps must lie in [0, 1], got {} and {}",
                self.sigma_h, self.sigma_tps
            )));
        }
        if !in_unit(self.p_flip) {
            return Err(Error::Parameter(format!("p_flip must lie in [0, 1], got {}", self.p_flip)));
        }
        if !(0.0..1.0).contains(&self.affine_scale) || self.affine_translation < 0.0 || self.affine_angle < 0.0 {
            return Err(Error::Parameter("affine ranges must be non-negative (scale below 1)".into()));
        }
        if self.crop_size == 0 || self.crop_size > self.resize_size {
            return Err(Error::Parameter(format!(
                "crop size {} must be in 1..={}",
                self.crop_size, self.resize_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WarpKind {
    Homography,
    Tps,
    AffineTps,
}

/// A drawn warp together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct SampledWarp {
    pub kind: WarpKind,
    pub flipped: bool,
    pub transform: Transform,
    pub field: DenseWarp,
    /// Rejected draws before this one.
    pub retries: usize,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, half_range: f64) -> f64 {
    // lo + span * u, so a zero range yields exactly 0.
    half_range * (2.0 * rng.random::<f64>() - 1.0)
}

fn displaced<R: Rng + ?Sized>(rng: &mut R, pts: &[Point], sigma: f64) -> (Vec<Point>, bool) {
    let mut moved = false;
    let out = pts
        .iter()
        .map(|p| {
            let d = [uniform(rng, sigma), uniform(rng, sigma)];
            moved |= d != [0.0, 0.0];
            [p[0] + d[0], p[1] + d[1]]
        })
        .collect();
    (out, moved)
}

const CORNERS: [Point; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

fn sample_tps<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Result<Transform> {
    let ctrl = Tps::grid(3);
    let (dst, moved) = displaced(rng, &ctrl, sigma);
    if !moved {
        return Ok(Transform::Identity);
    }
    Ok(Transform::Tps(Tps::fit(ctrl, dst)?))
}

fn sample_transform<R: Rng + ?Sized>(rng: &mut R, cfg: &WarpConfig, kind: WarpKind) -> Result<Transform> {
    match kind {
        WarpKind::Homography => {
            let (dst, moved) = displaced(rng, &CORNERS, cfg.sigma_h);
            if !moved {
                return Ok(Transform::Identity);
            }
            let dst = [dst[0], dst[1], dst[2], dst[3]];
            Ok(Transform::Homography(Homography::from_points(CORNERS, dst)?))
        }
        WarpKind::Tps => sample_tps(rng, cfg.sigma_tps),
        WarpKind::AffineTps => {
            let scale = 1.0 + uniform(rng, cfg.affine_scale);
            let angle = uniform(rng, cfg.affine_angle);
            let shear = uniform(rng, cfg.affine_angle);
            let tx = uniform(rng, cfg.affine_translation);
            let ty = uniform(rng, cfg.affine_translation);
            let affine = Affine::from_params(scale, angle, shear, tx, ty);
            let tps = sample_tps(rng, cfg.sigma_tps)?;
            if affine == Affine::identity() {
                return Ok(tps);
            }
            Ok(Transform::Affine(affine).then(tps))
        }
    }
}

/// Fraction of the central `crop_w x crop_h` window whose target also lands
/// inside that window.
fn central_coverage(field: &DenseWarp, crop_w: usize, crop_h: usize) -> f64 {
    let x0 = (field.width() - crop_w) / 2;
    let y0 = (field.height() - crop_h) / 2;
    let mut hits = 0usize;
    for y in y0..y0 + crop_h {
        for x in x0..x0 + crop_w {
            let q = field.at(x, y);
            if field.is_valid(x, y) && in_bounds([q[0] - x0 as f64, q[1] - y0 as f64], crop_w, crop_h) {
                hits += 1;
            }
        }
    }
    hits as f64 / (crop_w * crop_h) as f64
}

/// Draws a homography, TPS or affine-TPS warp (equal odds), optionally
/// followed by a horizontal flip, and rasterizes it on a `w x h` grid.
///
/// Degenerate fits and warps whose central-crop coverage falls below
/// [`MIN_CROP_COVERAGE`] are redrawn up to [`MAX_WARP_TRIES`] times; rejected
/// draws still consume randomness, so the result is a pure function of the
/// generator state.
pub fn sample_warp_detailed<R: Rng + ?Sized>(rng: &mut R, cfg: &WarpConfig, w: usize, h: usize) -> Result<SampledWarp> {
    cfg.validate()?;
    if w < 8 || h < 8 {
        return Err(Error::Parameter(format!("warp size {w}x{h} below 8x8")));
    }
    let crop_w = ((cfg.crop_size * w) as f64 / cfg.resize_size as f64).round().clamp(1.0, w as f64) as usize;
    let crop_h = ((cfg.crop_size * h) as f64 / cfg.resize_size as f64).round().clamp(1.0, h as f64) as usize;
    let mut last_err = None;
    for retries in 0..MAX_WARP_TRIES {
        let kind = match rng.random_range(0..3u32) {
            0 => WarpKind::Homography,
            1 => WarpKind::Tps,
            _ => WarpKind::AffineTps,
        };
        let transform = sample_transform(rng, cfg, kind);
        let flipped = rng.random::<f64>() < cfg.p_flip;
        let transform = match transform {
            Ok(t) => t,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let transform = if flipped { transform.then(Transform::FlipX) } else { transform };
        let field = DenseWarp::from_transform(w, h, transform.clone())?;
        if central_coverage(&field, crop_w, crop_h) < MIN_CROP_COVERAGE {
            last_err = Some(Error::Degenerate("crop coverage below 25%".into()));
            continue;
        }
        return Ok(SampledWarp {
            kind,
            flipped,
            transform,
            field,
            retries,
        });
    }
    Err(Error::Degenerate(format!(
        "no acceptable warp after {MAX_WARP_TRIES} tries (last: {})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub fn sample_warp<R: Rng + ?Sized>(rng: &mut R, cfg: &WarpConfig, w: usize, h: usize) -> Result<DenseWarp> {
    sample_warp_detailed(rng, cfg, w, h).map(|s| s.field)
}
