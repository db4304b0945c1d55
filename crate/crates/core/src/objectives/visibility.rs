use crate::error::{Error, Result};
use crate::ndgraph::Real;
use crate::probmap::{GroundTruth, ProbMapping};

/// Default fraction of eligible cells kept visible.
pub const DEFAULT_GAMMA: f64 = 0.7;

/// Gradient-stopped selection of the source cells trusted by the bipath loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisibilityMask {
    pub flags: Vec<bool>,
    /// Set when no column was eligible; the mask is then empty.
    pub warning: bool,
}

impl VisibilityMask {
    pub fn full(n: usize) -> Self {
        VisibilityMask {
            flags: vec![true; n],
            warning: n == 0,
        }
    }

    /// Flags every eligible column of a ground truth.
    pub fn eligible<F: Real>(gt: &GroundTruth<F>) -> Self {
        let flags: Vec<bool> = gt.nearest.iter().map(|n| n.is_some()).collect();
        let warning = !flags.iter().any(|&f| f);
        VisibilityMask { flags, warning }
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.flags.iter().enumerate().filter_map(|(j, &f)| f.then_some(j)).collect()
    }

    /// Column weights `flag / count` (all zero for an empty mask).
    pub fn weights<F: Real>(&self) -> Vec<F> {
        let n = self.count();
        let w = if n == 0 { F::zero() } else { F::one() / F::lit(n as f64) };
        self.flags.iter().map(|&f| if f { w } else { F::zero() }).collect()
    }
}

/// Keeps the `ceil(gamma * N)` highest scores among `candidates`
/// (`(column, score)` pairs); ties go to the lower column.
pub fn select_top(candidates: &[(usize, f64)], gamma: f64, n_cols: usize) -> Result<VisibilityMask> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let mut order = candidates.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep = (gamma * order.len() as f64 - 1e-9).ceil() as usize;
    let mut flags = vec![false; n_cols];
    for &(j, _) in order.iter().take(keep) {
        flags[j] = true;
    }
    Ok(VisibilityMask {
        flags,
        warning: candidates.is_empty(),
    })
}

/// Reads `q(i') = P_comp(M_W(i') | i')` on the eligible columns of `gt` and
/// keeps the top `gamma` fraction.
pub fn estimate_visibility<F: Real>(p_comp: &ProbMapping<F>, gt: &GroundTruth<F>, gamma: f64) -> Result<VisibilityMask> {
    let n = gt.nearest.len();
    if p_comp.layout().source.cells() != n || p_comp.layout().target != gt.mapping.layout().target {
        return Err(Error::dim("estimate_visibility", "composite mapping and ground truth grids differ"));
    }
    let q: Vec<(usize, f64)> = gt
        .nearest
        .iter()
        .enumerate()
        .filter_map(|(j, t)| t.map(|i| (j, p_comp.get(i, j).as_f64())))
        .collect();
    select_top(&q, gamma, n)
}
