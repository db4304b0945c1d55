use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::field::{warp_image, DenseWarp};
use super::image::Image;

/// Simplified photometric jitter: brightness gain, contrast gain about the
/// image mean, additive Gaussian noise, then clamping to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jitter {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub noise_sigma: f32,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            brightness: (0.8, 1.2),
            contrast: (0.8, 1.2),
            noise_sigma: 0.02,
        }
    }
}

impl Jitter {
    pub fn apply<R: Rng + ?Sized>(&self, img: &Image, rng: &mut R) -> Image {
        let gain = rng.random_range(self.brightness.0..=self.brightness.1);
        let contrast = rng.random_range(self.contrast.0..=self.contrast.1);
        let mean = img.data().iter().sum::<f32>() / img.data().len() as f32;
        let noise = Normal::new(0.0f32, self.noise_sigma).expect("valid sigma");
        let mut out = img.clone();
        for v in out.data_mut() {
            let n = if self.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            *v = (((*v - mean) * contrast + mean) * gain + n).clamp(0.0, 1.0);
        }
        out
    }
}

/// Training triplet `(I, I', J)` with `I'(p) = I(M(p))`, all `s x s`.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub image_i: Image,
    pub image_i_prime: Image,
    pub image_j: Image,
    /// `M` in cropped coordinates: maps `I'` pixels into `I`.
    pub warp: DenseWarp,
}

/// Offset of a centred `s`-window inside an `n`-wide frame.
pub fn crop_offset(n: usize, s: usize) -> usize {
    (n - s) / 2
}

/// Warps `I`, centrally crops all three images to `s x s`, re-expresses the
/// warp in crop coordinates and, when a generator is supplied, jitters each
/// image independently.
pub fn build_triplet<R: Rng + ?Sized>(
    img_i: &Image,
    img_j: &Image,
    warp: &DenseWarp,
    s: usize,
    jitter: Option<(&Jitter, &mut R)>,
) -> Result<Triplet> {
    let (w, h) = (img_i.width(), img_i.height());
    if img_j.width() != w || img_j.height() != h {
        return Err(Error::dim("build_triplet", "I and J differ in size"));
    }
    if s == 0 || s > w || s > h {
        return Err(Error::Parameter(format!("crop size {s} exceeds image size {w}x{h}")));
    }
    let warped = warp_image(img_i, warp)?;
    let (ox, oy) = (crop_offset(w, s), crop_offset(h, s));
    let mut image_i = img_i.crop(ox, oy, s, s)?;
    let mut image_i_prime = warped.crop(ox, oy, s, s)?;
    let mut image_j = img_j.crop(ox, oy, s, s)?;
    let warp = warp.crop(ox, oy, s, s)?;
    if let Some((jit, rng)) = jitter {
        image_i = jit.apply(&image_i, rng);
        image_i_prime = jit.apply(&image_i_prime, rng);
        image_j = jit.apply(&image_j, rng);
    }
    Ok(Triplet {
        image_i,
        image_i_prime,
        image_j,
        warp,
    })
}
