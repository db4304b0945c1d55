use proptest::prelude::*;
use pwarpc::synthdata::{hue_margin, make_pair, make_templates, Dataset, DatasetConfig, Label, PairConfig, Split, TemplateConfig};
use pwarpc::warp::{Affine, Image, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn invert(a: &Affine) -> [[f64; 3]; 2] {
    let [[p, q, tx], [r, s, ty]] = a.m;
    let det = p * s - q * r;
    let (ip, iq, ir, is) = (s / det, -q / det, -r / det, p / det);
    [[ip, iq, -(ip * tx + iq * ty)], [ir, is, -(ir * tx + is * ty)]]
}

fn apply(m: &[[f64; 3]; 2], p: Point) -> Point {
    [
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
    ]
}

fn sample(img: &Image, p: Point, c: usize) -> f64 {
    let (x0, y0) = (p[0].floor(), p[1].floor());
    let (fx, fy) = (p[0] - x0, p[1] - y0);
    let at = |x: f64, y: f64| img.get((x as usize).min(img.width() - 1), (y as usize).min(img.height() - 1), c) as f64;
    (1.0 - fx) * (1.0 - fy) * at(x0, y0)
        + fx * (1.0 - fy) * at(x0 + 1.0, y0)
        + (1.0 - fx) * fy * at(x0, y0 + 1.0)
        + fx * fy * at(x0 + 1.0, y0 + 1.0)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn hue_of(rgb: [f32; 3]) -> Option<f64> {
    let [r, g, b] = rgb.map(|v| v as f64);
    let (max, min) = (r.max(g).max(b), r.min(g).min(b));
    let d = max - min;
    if d < 1e-6 {
        return None;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(h / 6.0)
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[test]
fn measured_class_hues_are_separated() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let ts = make_templates(&mut rng, n, &TemplateConfig::default()).unwrap();
        let means: Vec<f64> = ts
            .iter()
            .map(|t| {
                let (mut sx, mut sy) = (0.0, 0.0);
                for k in 0..100 * 100 {
                    let q = [(k % 100) as f64 / 50.0 - 1.0, (k / 100) as f64 / 50.0 - 1.0];
                    if let Some(h) = t.contains(q).then(|| hue_of(t.color(q))).flatten() {
                        sx += (h * std::f64::consts::TAU).cos();
                        sy += (h * std::f64::consts::TAU).sin();
                    }
                }
                sy.atan2(sx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU
            })
            .collect();
        for a in 0..n {
            for b in a + 1..n {
                let d = circular_distance(means[a], means[b]);
                assert!(d >= hue_margin(n), "seed {seed}: classes {a},{b} hue distance {d}");
            }
        }
    }
}

#[test]
fn dataset_counts_splits_and_determinism() {
    let cfg = DatasetConfig {
        n_pos: 200,
        n_neg: 50,
        ..Default::default()
    };
    let ds = Dataset::new(cfg.clone()).unwrap();
    assert_eq!(ds.len(), 250);
    assert_eq!((0..ds.len()).filter(|&i| ds.label(i) == Label::Negative).count(), 50);
    let mut seen: Vec<usize> = Split::ALL.iter().flat_map(|&s| ds.indices(s)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..250).collect::<Vec<_>>());
    let again = Dataset::new(cfg).unwrap();
    let (a, b) = (ds.pair(0).unwrap(), again.pair(0).unwrap());
    assert_eq!(a.image_a.data(), b.image_a.data());
    assert_eq!(a.image_b.data(), b.image_b.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn positive_pairs_have_exact_ground_truth(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = PairConfig::default();
        let ts = make_templates(&mut rng, 4, &TemplateConfig::default()).unwrap();
        let pair = make_pair(&mut rng, &ts, true, &cfg).unwrap();
        let size = cfg.image_size;
        let gt = pair.gt_map_ab.as_ref().unwrap();
        let b_to_a = invert(&pair.transform_b);

        // pointwise oracle T_a(T_b^-1(p)) on 100 foreground pixels of b
        let fg: Vec<usize> = (0..size * size).filter(|&k| pair.foreground_b[k]).collect();
        for _ in 0..100 {
            let k = fg[rng.random_range(0..fg.len())];
            let p = [(k % size) as f64, (k / size) as f64];
            let want = pair.transform_a.apply(apply(&b_to_a, p));
            let got = gt.at(k % size, k / size);
            prop_assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
        }

        for (ka, kb) in &pair.keypoints {
            let m = gt.eval(*kb);
            prop_assert!((m[0] - ka[0]).abs() < 1e-6 && (m[1] - ka[1]).abs() < 1e-6);
        }

        let (mut va, mut vb) = (Vec::new(), Vec::new());
        for &k in &fg {
            let q = gt.at(k % size, k / size);
            let inside = q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= (size - 1) as f64 && q[1] <= (size - 1) as f64;
            if !inside || !pair.foreground_a[q[1].round() as usize * size + q[0].round() as usize] {
                continue;
            }
            for c in 0..3 {
                va.push(sample(&pair.image_a, q, c));
                vb.push(pair.image_b.get(k % size, k / size, c) as f64);
            }
        }
        let r = pearson(&va, &vb);
        prop_assert!(r >= 0.9, "texture correlation {r}");

        for mask in [&pair.foreground_a, &pair.foreground_b] {
            let cover = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
            prop_assert!((0.15..=0.60).contains(&cover), "coverage {cover}");
        }
    }
}
