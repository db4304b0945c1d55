//! Synthetic warps and the `(I, I', J)` training triplet.

mod field;
mod image;
mod sampler;
mod transform;
mod triplet;

pub use field::{downscale_warp, warp_image, AnalyticMap, DenseWarp};
pub use image::{pwim, Image};
pub use sampler::{
    sample_warp, sample_warp_detailed, SampledWarp, WarpConfig, WarpKind, MAX_WARP_TRIES, MIN_CROP_COVERAGE,
};
pub use transform::{
    from_normalized, solve_linear, to_normalized, Affine, Homography, Point, Tps, Transform, DEGENERATE_DET,
};
pub use triplet::{build_triplet, crop_offset, Jitter, Triplet};
