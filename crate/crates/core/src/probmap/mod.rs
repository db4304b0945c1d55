//! Probabilistic mappings between feature grids: cost volumes, column-stochastic
//! conversion with an optional unmatched state `∅`, composition, ground-truth
//! targets and match extraction.

mod graph_ops;
mod ground_truth;
mod mapping;
mod matches;

pub use graph_ops::{compose, cost_volume, to_prob_mapping, CostVolume, ProbNode};
pub use ground_truth::{gaussian3, gt_prob_mapping, smooth_target, GroundTruth, GtMode, SMOOTH_SIGMA};
pub use mapping::{stochastic_tolerance, Grid, Layout, ProbMapping};
pub use matches::{argmax_match, soft_argmax_match, Match, MatchSet};

/// Softmax temperature used for all mappings by default.
pub const DEFAULT_TEMPERATURE: f64 = 1.0 / 50.0;
