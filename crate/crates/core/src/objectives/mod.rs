//! Training losses on probabilistic mappings and their ratio-balanced
//! combinations.
//!
//! Every loss is a mean over its active columns. Visibility masks and ratio
//! weights are computed from detached values and enter the graph as
//! constants.

mod composite;
mod losses;
mod visibility;

pub use composite::{
    assemble, ratio_weight, strong_objective, weak_objective, ComponentValues, Components, Lambdas, LossReport,
    LAMBDA_MAX, LAMBDA_MIN,
};
pub use losses::{
    baseline_loss, keypoint_loss, pneg_loss, pw_bipath_loss, pw_bipath_loss_composed, pwarp_sup_loss,
    spatial_columns, BaselineKind, KeypointMode, DEFAULT_P_NEG,
};
pub use visibility::{estimate_visibility, select_top, VisibilityMask, DEFAULT_GAMMA};
