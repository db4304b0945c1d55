use proptest::prelude::*;
use pwarpc::ndgraph::{Graph, Tensor, Var};
use pwarpc::objectives::{
    baseline_loss, estimate_visibility, pneg_loss, pw_bipath_loss, pw_bipath_loss_composed, pwarp_sup_loss, select_top,
    weak_objective, BaselineKind, Components, VisibilityMask,
};
use pwarpc::probmap::{gt_prob_mapping, CostVolume, Grid, GroundTruth, GtMode, Layout, ProbMapping, ProbNode};
use pwarpc::warp::{AnalyticMap, Affine, DenseWarp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(g: &mut Graph<f64>, layout: Layout, data: Vec<f64>) -> ProbNode {
    let probs = g.param(Tensor::matrix(layout.rows(), layout.cols(), data).unwrap());
    ProbNode {
        layout,
        probs,
        softmax_input: None,
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n * n]
}

fn random_columns(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<f64> {
    let mut d: Vec<f64> = (0..r * c).map(|_| rng.random::<f64>() + 1e-3).collect();
    for j in 0..c {
        let s: f64 = (0..r).map(|i| d[i * c + j]).sum();
        (0..r).for_each(|i| d[i * c + j] /= s);
    }
    d
}

fn shift_gt(grid: Grid, dx: f64) -> GroundTruth<f64> {
    let warp =
        DenseWarp::from_analytic(grid.w, grid.h, AnalyticMap::Pixel(Affine::translation(dx, 0.0)), None).unwrap();
    gt_prob_mapping(&warp, GtMode::OneHot, false).unwrap()
}

#[test]
fn uniform_kernels_give_log_n() {
    let grid = Grid::new(2, 3);
    let n = grid.cells();
    let l = Layout::plain(grid, grid);
    let gt = gt_prob_mapping::<f64>(&DenseWarp::identity(3, 2), GtMode::OneHot, false).unwrap();
    let mut g = Graph::new();
    let (a, b) = (node(&mut g, l, uniform(n)), node(&mut g, l, uniform(n)));
    let bi = pw_bipath_loss(&mut g, &a, &b, &gt, &VisibilityMask::full(n)).unwrap();
    let sup = pwarp_sup_loss(&mut g, &a, &gt).unwrap();
    for v in [bi, sup] {
        assert!((g.scalar_value(v) - (n as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn two_cell_bipath_contribution() {
    let l = Layout::plain(Grid::new(1, 2), Grid::new(1, 2));
    let gt = gt_prob_mapping::<f64>(&DenseWarp::identity(2, 1), GtMode::OneHot, false).unwrap();
    let mut g = Graph::new();
    let a = node(&mut g, l, vec![0.7, 0.2, 0.3, 0.8]);
    let b = node(&mut g, l, vec![0.5, 1.0, 0.5, 0.0]);
    let mask = VisibilityMask {
        flags: vec![true, false],
        warning: false,
    };
    let loss = pw_bipath_loss(&mut g, &a, &b, &gt, &mask).unwrap();
    assert!((g.scalar_value(loss) + 0.45f64.ln()).abs() < 1e-12);
    assert!((g.scalar_value(loss) - 0.7985).abs() < 1e-4);
}

#[test]
fn entropy_baseline_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = Grid::new(3, 3);
    let data = random_columns(&mut rng, 9, 9);
    let mut g = Graph::new();
    let p = node(&mut g, Layout::plain(grid, grid), data.clone());
    let e = baseline_loss(&mut g, &p, BaselineKind::MinEntropy, 1.0).unwrap();
    let m = baseline_loss(&mut g, &p, BaselineKind::MaxScore, 1.0).unwrap();
    let mut ent = 0.0;
    let mut peak = 0.0;
    for j in 0..9 {
        ent -= (0..9).map(|i| data[i * 9 + j] * data[i * 9 + j].ln()).sum::<f64>() / 9.0;
        peak += (0..9).map(|i| data[i * 9 + j]).fold(0.0, f64::max) / 9.0;
    }
    assert!((g.scalar_value(e) - ent).abs() < 1e-12);
    assert!((g.scalar_value(m) + peak).abs() < 1e-12);
    assert!(g.scalar_value(m) >= -1.0 && g.scalar_value(m) <= -1.0 / 9.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_are_nonnegative_and_finite(seed in any::<u64>(), dx in -2i32..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(3, 4);
        let n = grid.cells();
        let l = Layout::plain(grid, grid);
        let gt = shift_gt(grid, dx as f64);
        let mut g = Graph::new();
        let a = node(&mut g, l, random_columns(&mut rng, n, n));
        let b = node(&mut g, l, random_columns(&mut rng, n, n));
        let mask = VisibilityMask::eligible(&gt);
        let bi = pw_bipath_loss(&mut g, &a, &b, &gt, &mask).unwrap();
        let sup = pwarp_sup_loss(&mut g, &a, &gt).unwrap();
        let ent = baseline_loss(&mut g, &a, BaselineKind::MinEntropy, 1.0).unwrap();
        for v in [bi, sup, ent] {
            let x = g.scalar_value(v);
            prop_assert!(x.is_finite() && x >= 0.0);
        }
    }

    #[test]
    fn mask_keeps_ceil_gamma_n_and_ignores_monotone_rescaling(
        scores in prop::collection::vec(0.0..1.0f64, 1..40), gamma in 0.05..=1.0f64,
    ) {
        let cand: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let m = select_top(&cand, gamma, scores.len()).unwrap();
        prop_assert_eq!(m.count(), (gamma * scores.len() as f64 - 1e-9).ceil() as usize);
        let warped: Vec<(usize, f64)> = cand.iter().map(|&(j, q)| (j, (3.0 * q).exp() - 7.0)).collect();
        prop_assert_eq!(select_top(&warped, gamma, scores.len()).unwrap(), m);
    }

    #[test]
    fn visibility_reads_the_composite_at_the_target(seed in any::<u64>(), dx in -1i32..=1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(2, 3);
        let n = grid.cells();
        let gt = shift_gt(grid, dx as f64);
        let comp = ProbMapping::new(Layout::plain(grid, grid), Tensor::matrix(n, n, random_columns(&mut rng, n, n)).unwrap()).unwrap();
        let mask = estimate_visibility(&comp, &gt, 0.5).unwrap();
        let mut q: Vec<(usize, f64)> = gt.eligible().map(|j| (j, comp.get(gt.nearest[j].unwrap(), j))).collect();
        q.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = (q.len() as f64 * 0.5).ceil() as usize;
        let mut want: Vec<usize> = q[..keep].iter().map(|p| p.0).collect();
        want.sort_unstable();
        prop_assert_eq!(mask.selected(), want);
    }

    #[test]
    fn masked_column_gets_no_gradient(seed in any::<u64>(), drop in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(2, 3);
        let n = grid.cells();
        let gt = gt_prob_mapping::<f64>(&DenseWarp::identity(3, 2), GtMode::OneHot, false).unwrap();
        let data = random_columns(&mut rng, n, n);
        let grads = |mask: &VisibilityMask| {
            let mut g = Graph::new();
            let p = node(&mut g, Layout::plain(grid, grid), data.clone());
            let loss = pw_bipath_loss_composed(&mut g, &p, &gt, mask).unwrap();
            g.backward(loss).unwrap();
            g.grad(p.probs).unwrap().to_vec()
        };
        let full = grads(&VisibilityMask::full(n));
        let mut flags = vec![true; n];
        flags[drop] = false;
        let part = grads(&VisibilityMask { flags, warning: false });
        // the mean runs over one column fewer
        let rescale = (n - 1) as f64 / n as f64;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if j == drop {
                    prop_assert_eq!(part[k], 0.0);
                } else {
                    prop_assert!((part[k] * rescale - full[k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn log_domain_and_probability_routes_agree(seed in any::<u64>(), spread in 0.1..3.0f64, z in -3.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::new(2, 3);
        let n = grid.cells();
        let layout = Layout { target: grid, source: grid, unmatched_state: true, unmatched_column: false };
        let mut scores: Vec<f64> = (0..n * n).map(|_| rng.random_range(-spread..spread)).collect();
        scores.extend(std::iter::repeat_n(z, n));
        let warp = DenseWarp::from_analytic(3, 2, AnalyticMap::Pixel(Affine::translation(0.6, -0.3)), None).unwrap();
        let gt_bin = gt_prob_mapping::<f64>(&warp, GtMode::Smooth, true).unwrap();
        let mut g = Graph::new();
        let s = g.param(Tensor::matrix(n + 1, n, scores).unwrap());
        let cv = CostVolume { layout, scores: s, bin: None };
        let fast = pwarpc::probmap::to_prob_mapping(&mut g, &cv, 0.5).unwrap();
        let slow = ProbNode { softmax_input: None, ..fast };
        let pairs = [
            (pneg_loss(&mut g, &fast, 0.9).unwrap(), pneg_loss(&mut g, &slow, 0.9).unwrap()),
            (pwarp_sup_loss(&mut g, &fast, &gt_bin).unwrap(), pwarp_sup_loss(&mut g, &slow, &gt_bin).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!((g.scalar_value(a) - g.scalar_value(b)).abs() < 1e-10);
        }
    }

    #[test]
    fn weak_total_is_the_ratio_weighted_sum(vis in 0.01..5.0f64, sup in 0.01..5.0f64, neg in 0.0..2.0f64, lp in 0.1..2.0f64) {
        let mut g = Graph::<f64>::new();
        let c: Vec<Var> = [vis, sup, neg].iter().map(|&v| g.param(Tensor::scalar(v))).collect();
        let comps = Components { vis_pw_bi: Some(c[0]), pwarp_sup: Some(c[1]), pneg: Some(c[2]), ..Default::default() };
        let (total, report) = weak_objective(&mut g, &comps, lp).unwrap();
        let lambda = (vis / sup).clamp(pwarpc::objectives::LAMBDA_MIN, pwarpc::objectives::LAMBDA_MAX);
        let want = vis + lambda * sup + lp * neg;
        prop_assert!((g.scalar_value(total) - want).abs() < 1e-6);
        prop_assert!((report.total - want).abs() < 1e-6);
    }
}
