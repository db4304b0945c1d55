use crate::error::{Error, Result};
use crate::ndgraph::Real;
use crate::probmap::{argmax_match, soft_argmax_match, Match, ProbMapping};
use crate::warp::{DenseWarp, Point};

/// Default PCK thresholds, as fractions of the reference size.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.05, 0.10, 0.15];

/// Which dimensions scale the PCK threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reference {
    /// Full target image.
    Image,
    /// Tight bounding box of the target foreground.
    Bbox,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Image => "image",
            Reference::Bbox => "bbox",
        }
    }
}

impl std::str::FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Reference::Image),
            "bbox" => Ok(Reference::Bbox),
            _ => Err(Error::Config(format!("unknown PCK reference `{s}` (expected image or bbox)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PckConfig {
    pub alphas: Vec<f64>,
    pub reference: Reference,
}

impl Default for PckConfig {
    fn default() -> Self {
        PckConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
            reference: Reference::Image,
        }
    }
}

impl PckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Parameter("at least one PCK alpha is required".into()));
        }
        self.alphas.iter().try_for_each(|&a| check_alpha(a))
    }
}

/// Match extraction rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Extractor {
    Argmax,
    SoftArgmax,
}

impl Extractor {
    pub fn name(self) -> &'static str {
        match self {
            Extractor::Argmax => "argmax",
            Extractor::SoftArgmax => "soft_argmax",
        }
    }

    pub fn extract<F: Real>(self, p: &ProbMapping<F>) -> Vec<Match> {
        match self {
            Extractor::Argmax => argmax_match(p).matches,
            Extractor::SoftArgmax => soft_argmax_match(p).matches,
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("PCK alpha must lie in (0, 1], got {alpha}")))
    }
}

/// `alpha * max(h, w)`.
pub fn threshold(alpha: f64, ref_dims: (usize, usize)) -> f64 {
    alpha * ref_dims.0.max(ref_dims.1) as f64
}

/// Distance between prediction and truth; infinite for unmatched predictions.
pub(crate) fn match_error(m: &Match) -> Result<f64> {
    let truth = m
        .truth
        .ok_or_else(|| Error::Contract("PCK needs a ground-truth target for every match".into()))?;
    Ok(match m.target {
        Some(t) => (t[0] - truth[0]).hypot(t[1] - truth[1]),
        None => f64::INFINITY,
    })
}

/// Fraction of matches whose prediction lies within `alpha * max(h, w)` of
/// the truth. Unmatched predictions count as incorrect.
pub fn pck(matches: &[Match], alpha: f64, ref_dims: (usize, usize)) -> Result<f64> {
    check_alpha(alpha)?;
    if matches.is_empty() {
        return Err(Error::Contract("PCK of an empty match set".into()));
    }
    let thr = threshold(alpha, ref_dims);
    let mut correct = 0usize;
    for m in matches {
        if match_error(m)? <= thr {
            correct += 1;
        }
    }
    Ok(correct as f64 / matches.len() as f64)
}

/// Dimensions `(h, w)` of the tight bounding box of a `width`-wide mask.
pub fn foreground_bbox(mask: &[bool], width: usize) -> Option<(usize, usize)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % width, i / width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (x0 != usize::MAX).then(|| (y1 - y0 + 1, x1 - x0 + 1))
}

/// Cell centre in pixel coordinates of an image `size` pixels wide covered by
/// `cells` cells.
pub fn cell_to_pixel(c: f64, cells: usize, size: usize) -> f64 {
    (c + 0.5) * size as f64 / cells as f64 - 0.5
}

pub fn pixel_to_cell(p: f64, cells: usize, size: usize) -> f64 {
    (p + 0.5) * cells as f64 / size as f64 - 0.5
}

/// Matches of every source cell that is valid under `gt_map`, in pixel
/// coordinates, with the pixel-level truth attached.
///
/// `gt_map` maps source-image pixels to target-image pixels; both images are
/// taken to share its resolution. A cell is kept when the pixel nearest its
/// centre is valid and its true target lies inside the target image.
pub fn dense_matches<F: Real>(p: &ProbMapping<F>, gt_map: &DenseWarp, extractor: Extractor) -> Result<Vec<Match>> {
    let layout = *p.layout();
    let (w, h) = (gt_map.width(), gt_map.height());
    let (src, tgt) = (layout.source, layout.target);
    let inside = |q: Point| q[0] >= -0.5 && q[0] <= w as f64 - 0.5 && q[1] >= -0.5 && q[1] <= h as f64 - 0.5;
    let mut out = Vec::new();
    for mut m in extractor.extract(p) {
        let centre = [cell_to_pixel(m.source[0], src.w, w), cell_to_pixel(m.source[1], src.h, h)];
        let nx = (centre[0].round().max(0.0) as usize).min(w - 1);
        let ny = (centre[1].round().max(0.0) as usize).min(h - 1);
        if !gt_map.is_valid(nx, ny) {
            continue;
        }
        let truth = gt_map.eval(centre);
        if !inside(truth) {
            continue;
        }
        m.source = centre;
        m.target = m.target.map(|c| [cell_to_pixel(c[0], tgt.w, w), cell_to_pixel(c[1], tgt.h, h)]);
        m.truth = Some(truth);
        out.push(m);
    }
    Ok(out)
}

/// PCK over the valid cells of `gt_map`, in pixel units.
pub fn dense_transfer_pck<F: Real>(
    p: &ProbMapping<F>,
    gt_map: &DenseWarp,
    alpha: f64,
    ref_dims: (usize, usize),
    extractor: Extractor,
) -> Result<f64> {
    let matches = dense_matches(p, gt_map, extractor)?;
    if matches.is_empty() {
        return Err(Error::Contract("dense transfer PCK: ground truth has no valid cells".into()));
    }
    pck(&matches, alpha, ref_dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(target: Option<Point>, truth: Point) -> Match {
        Match {
            source: [0.0, 0.0],
            target,
            confidence: 1.0,
            truth: Some(truth),
        }
    }

    #[test]
    fn two_points_half_correct() {
        let ms = [m(Some([3.0, 0.0]), [0.0, 0.0]), m(Some([0.0, 8.0]), [0.0, 0.0])];
        assert_eq!(pck(&ms, 0.05, (100, 100)).unwrap(), 0.5);
    }

    #[test]
    fn unmatched_is_incorrect_and_empty_is_an_error() {
        let ms = [m(None, [0.0, 0.0]), m(Some([0.0, 0.0]), [0.0, 0.0])];
        assert_eq!(pck(&ms, 1.0, (10, 10)).unwrap(), 0.5);
        assert!(matches!(pck(&[], 0.1, (10, 10)), Err(Error::Contract(_))));
        assert!(matches!(pck(&ms, 0.0, (10, 10)), Err(Error::Parameter(_))));
    }

    #[test]
    fn bbox_dims() {
        let mut mask = vec![false; 20];
        mask[6] = true;
        mask[13] = true;
        assert_eq!(foreground_bbox(&mask, 5), Some((2, 3)));
        assert_eq!(foreground_bbox(&[false; 4], 2), None);
    }
}
