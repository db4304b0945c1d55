use crate::error::Result;
use crate::ndgraph::{Real, Tensor};
use crate::warp::{DenseWarp, Point};

use super::mapping::{Grid, Layout, ProbMapping};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GtMode {
    OneHot,
    Smooth,
}

/// Standard deviation of the 3x3 blur used by smooth targets.
pub const SMOOTH_SIGMA: f64 = 1.0;

/// Normalized 3x3 Gaussian kernel, row-major over `dy, dx in -1..=1`.
pub fn gaussian3(sigma: f64) -> [f64; 9] {
    let mut k = [0.0; 9];
    for (n, v) in k.iter_mut().enumerate() {
        let (dx, dy) = ((n % 3) as f64 - 1.0, (n / 3) as f64 - 1.0);
        *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Smooth target distribution over `grid` for a real-valued position:
/// bilinear spread onto the four nearest cells, 3x3 Gaussian blur (cells
/// outside the grid are dropped), then renormalization.
pub fn smooth_target(grid: Grid, target: Point) -> Vec<f64> {
    let (w, h) = (grid.w, grid.h);
    let mut spread = vec![0.0; grid.cells()];
    let tx = target[0].clamp(0.0, (w - 1) as f64);
    let ty = target[1].clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (tx.floor() as usize, ty.floor() as usize);
    let (fx, fy) = (tx - x0 as f64, ty - y0 as f64);
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let (x, y) = (x0 + dx, y0 + dy);
            if x < w && y < h {
                spread[grid.index(x, y)] += wx * wy;
            }
        }
    }
    let k = gaussian3(SMOOTH_SIGMA);
    let mut out = vec![0.0; grid.cells()];
    let mut total = 0.0;
    // Only cells within one step of the spread can receive mass.
    for y in y0.saturating_sub(1)..(y0 + 3).min(h) {
        for x in x0.saturating_sub(1)..(x0 + 3).min(w) {
            let mut acc = 0.0;
            for (n, kv) in k.iter().enumerate() {
                let sx = x as isize + (n % 3) as isize - 1;
                let sy = y as isize + (n / 3) as isize - 1;
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    acc += kv * spread[grid.index(sx as usize, sy as usize)];
                }
            }
            out[grid.index(x, y)] = acc;
            total += acc;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Ground-truth mapping `P_W` derived from a warp at grid resolution, with
/// per-column bookkeeping used by the objectives.
#[derive(Clone, Debug)]
pub struct GroundTruth<F> {
    /// Constant target mapping. Ineligible columns hold `e_∅` when the layout
    /// has an unmatched state and a placeholder uniform column otherwise.
    pub mapping: ProbMapping<F>,
    pub mode: GtMode,
    /// Continuous target `M_W(i')` in cell units, `None` where invalid.
    pub targets: Vec<Option<Point>>,
    /// Nearest target cell, `None` where invalid.
    pub nearest: Vec<Option<usize>>,
}

impl<F: Real> GroundTruth<F> {
    /// Columns with a valid spatial target.
    pub fn eligible(&self) -> impl Iterator<Item = usize> + '_ {
        self.nearest.iter().enumerate().filter_map(|(j, n)| n.map(|_| j))
    }

    pub fn eligible_count(&self) -> usize {
        self.nearest.iter().filter(|n| n.is_some()).count()
    }

    /// Column weights for the warp-supervision loss: every column that has a
    /// defined target (spatial, or `∅` when the state exists) counts.
    pub fn supervision_weights(&self) -> Vec<F> {
        let has_state = self.mapping.layout().unmatched_state;
        self.nearest
            .iter()
            .map(|n| if n.is_some() || has_state { F::one() } else { F::zero() })
            .collect()
    }
}

/// Builds `P_W` for a warp whose domain and codomain are the same cell grid.
pub fn gt_prob_mapping<F: Real>(warp: &DenseWarp, mode: GtMode, unmatched: bool) -> Result<GroundTruth<F>> {
    let grid = Grid::new(warp.height(), warp.width());
    let layout = Layout {
        target: grid,
        source: grid,
        unmatched_state: unmatched,
        unmatched_column: false,
    };
    let (rows, cols) = (layout.rows(), layout.cols());
    let mut probs = vec![F::zero(); rows * cols];
    let mut targets = Vec::with_capacity(cols);
    let mut nearest = Vec::with_capacity(cols);
    for j in 0..cols {
        let (x, y) = (j % grid.w, j / grid.w);
        if warp.is_valid(x, y) {
            let t = warp.at(x, y);
            let n = grid.nearest(t);
            match mode {
                GtMode::OneHot => probs[n * cols + j] = F::one(),
                GtMode::Smooth => {
                    for (i, v) in smooth_target(grid, t).into_iter().enumerate() {
                        probs[i * cols + j] = F::lit(v);
                    }
                }
            }
            targets.push(Some(t));
            nearest.push(Some(n));
        } else {
            if unmatched {
                probs[(rows - 1) * cols + j] = F::one();
            } else {
                let u = F::lit(1.0 / rows as f64);
                for i in 0..rows {
                    probs[i * cols + j] = u;
                }
            }
            targets.push(None);
            nearest.push(None);
        }
    }
    let mapping = ProbMapping::new_unchecked(layout, Tensor::matrix(rows, cols, probs)?);
    Ok(GroundTruth {
        mapping,
        mode,
        targets,
        nearest,
    })
}
