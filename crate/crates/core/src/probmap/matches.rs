use crate::ndgraph::Real;
use crate::warp::Point;

use super::mapping::{Grid, ProbMapping};

/// Predicted correspondence for one source cell, in cell units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub source: Point,
    /// `None` when the prediction is the unmatched state.
    pub target: Option<Point>,
    pub confidence: f64,
    /// Ground-truth target, when known.
    pub truth: Option<Point>,
}

/// One match per spatial source cell, in vectorized order.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub source_grid: Grid,
    pub target_grid: Grid,
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn unmatched_count(&self) -> usize {
        self.matches.iter().filter(|m| m.target.is_none()).count()
    }
}

/// Mode of every column (ties to the lowest row); a mode at `∅` is reported
/// as unmatched.
pub fn argmax_match<F: Real>(p: &ProbMapping<F>) -> MatchSet {
    let layout = *p.layout();
    let rows = p.rows();
    let matches = (0..layout.source.cells())
        .map(|j| {
            let mut best = 0;
            let mut best_v = p.get(0, j);
            for i in 1..rows {
                let v = p.get(i, j);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            let target = (Some(best) != layout.unmatched_row()).then(|| layout.target.coords(best));
            Match {
                source: layout.source.coords(j),
                target,
                confidence: best_v.as_f64(),
                truth: None,
            }
        })
        .collect();
    MatchSet {
        source_grid: layout.source,
        target_grid: layout.target,
        matches,
    }
}

/// Expected target position per column. Mass on `∅` is excluded and the rest
/// renormalized; confidence is `1 - P(∅|j)` with the state, else the column
/// maximum. A column with no spatial mass is reported as unmatched.
pub fn soft_argmax_match<F: Real>(p: &ProbMapping<F>) -> MatchSet {
    let layout = *p.layout();
    let cells = layout.target.cells();
    let matches = (0..layout.source.cells())
        .map(|j| {
            let (mut sx, mut sy, mut mass, mut peak) = (0.0, 0.0, 0.0, 0.0f64);
            for i in 0..cells {
                let v = p.get(i, j).as_f64();
                let c = layout.target.coords(i);
                sx += v * c[0];
                sy += v * c[1];
                mass += v;
                peak = peak.max(v);
            }
            let confidence = if layout.unmatched_state {
                1.0 - p.unmatched_prob(j).as_f64()
            } else {
                peak
            };
            Match {
                source: layout.source.coords(j),
                target: (mass > 0.0).then(|| [sx / mass, sy / mass]),
                confidence,
                truth: None,
            }
        })
        .collect();
    MatchSet {
        source_grid: layout.source,
        target_grid: layout.target,
        matches,
    }
}
