use proptest::prelude::*;
use pwarpc::warp::{
    build_triplet, downscale_warp, sample_warp_detailed, warp_image, Affine, DenseWarp, Image, Point, Transform,
    WarpConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn norm(x: f64, n: usize) -> f64 {
    x / (n - 1) as f64 * 2.0 - 1.0
}

fn denorm(u: f64, n: usize) -> f64 {
    (u + 1.0) / 2.0 * (n - 1) as f64
}

/// Applies a normalized-coordinate transform to a pixel of a `w x h` frame.
fn pixel_oracle(t: &Transform, p: Point, w: usize, h: usize) -> Point {
    let q = t.apply([norm(p[0], w), norm(p[1], h)]);
    [denorm(q[0], w), denorm(q[1], h)]
}

fn bilinear_oracle(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xx: f64, yy: f64| {
        let xi = (xx as usize).min(img.width() - 1);
        let yi = (yy as usize).min(img.height() - 1);
        img.get(xi, yi, c) as f64
    };
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x0 + 1.0, y0)
        + (1.0 - fx) * fy * at(x0, y0 + 1.0)
        + fx * fy * at(x0 + 1.0, y0 + 1.0)
}

fn noise_image(seed: u64, w: usize, h: usize) -> Image {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f32>())
}

#[test]
fn normalized_translation_shifts_pixels() {
    let (w, h) = (33, 17);
    let t = Transform::Affine(Affine::translation(0.25, -0.5));
    let field = DenseWarp::from_transform(w, h, t).unwrap();
    let (sx, sy) = (0.25 * (w - 1) as f64 / 2.0, -0.5 * (h - 1) as f64 / 2.0);
    for y in 0..h {
        for x in 0..w {
            let q = field.at(x, y);
            assert!((q[0] - (x as f64 + sx)).abs() < 1e-9 && (q[1] - (y as f64 + sy)).abs() < 1e-9);
        }
    }
}

#[test]
fn affine_then_flip_equals_flipped_affine() {
    let (w, h) = (40, 30);
    let a = Affine::from_params(1.1, 0.2, -0.1, 0.05, -0.1);
    let direct = DenseWarp::from_transform(w, h, Transform::Affine(a.clone()).then(Transform::FlipX)).unwrap();
    let flipped = DenseWarp::from_transform(w, h, Transform::Affine(a)).unwrap().then_flip();
    for (p, q) in direct.map().iter().zip(flipped.map()) {
        assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
    }
    assert_eq!(direct.valid(), flipped.valid());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_warps_are_finite_and_cover_the_crop(seed in any::<u64>()) {
        let cfg = WarpConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_warp_detailed(&mut rng, &cfg, 64, 64).unwrap();
        prop_assert!(s.field.map().iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        let off = (cfg.resize_size - cfg.crop_size) / 2;
        let crop = s.field.crop(off, off, cfg.crop_size, cfg.crop_size).unwrap();
        prop_assert!(crop.valid_fraction() >= 0.25);
        for (i, p) in s.field.map().iter().enumerate() {
            let inside = p[0] >= 0.0 && p[0] <= 63.0 && p[1] >= 0.0 && p[1] <= 63.0;
            prop_assert_eq!(s.field.valid()[i], inside);
        }
    }

    #[test]
    fn coarse_map_samples_cell_centres(seed in any::<u64>(), cells in 4usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample_warp_detailed(&mut rng, &WarpConfig::default(), 64, 48).unwrap();
        let coarse = downscale_warp(&s.field, cells, cells).unwrap();
        for cy in 0..cells {
            for cx in 0..cells {
                let centre = [(cx as f64 + 0.5) * 64.0 / cells as f64 - 0.5, (cy as f64 + 0.5) * 48.0 / cells as f64 - 0.5];
                let t = pixel_oracle(&s.transform, centre, 64, 48);
                let want = [(t[0] + 0.5) * cells as f64 / 64.0 - 0.5, (t[1] + 0.5) * cells as f64 / 48.0 - 0.5];
                let got = coarse.at(cx, cy);
                prop_assert!((got[0] - want[0]).abs() < 1e-9 && (got[1] - want[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn triplet_prime_resamples_image_i(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp = sample_warp_detailed(&mut rng, &WarpConfig::default(), 64, 64).unwrap().field;
        let (img_i, img_j) = (noise_image(seed, 64, 64), noise_image(seed ^ 1, 64, 64));
        let t = build_triplet::<ChaCha8Rng>(&img_i, &img_j, &warp, 56, None).unwrap();
        for y in 0..56 {
            for x in 0..56 {
                if !t.warp.is_valid(x, y) {
                    continue;
                }
                let q = t.warp.at(x, y);
                for c in 0..3 {
                    let want = bilinear_oracle(&t.image_i, q[0], q[1], c);
                    prop_assert!((t.image_i_prime.get(x, y, c) as f64 - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn identity_warp_leaves_images_unchanged(seed in any::<u64>(), w in 1usize..20, h in 1usize..20) {
        let img = noise_image(seed, w, h);
        prop_assert_eq!(warp_image(&img, &DenseWarp::identity(w, h)).unwrap(), img);
    }
}
