//! Evaluation: PCK, dense transfer accuracy against exact ground truth,
//! sparsification curves with AUSE, and CSV / SVG reports.

mod evaluate;
mod pck;
mod report;
mod sparsification;

pub use evaluate::{evaluate, mean_unmatched_prob, EvalConfig, Evaluation, EXTRACTORS};
pub use pck::{
    cell_to_pixel, dense_matches, dense_transfer_pck, foreground_bbox, pck, pixel_to_cell, threshold, Extractor,
    PckConfig, Reference, DEFAULT_ALPHAS,
};
pub use report::{curves_svg, fmt_sig6, metrics_csv, report, Curve, MetricRow, CSV_HEADER, CURVES_SVG, METRICS_CSV};
pub use sparsification::{removal_fractions, sparsification, trapezoid, SparsificationResult, MIN_POINTS, STEPS};
