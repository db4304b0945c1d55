use crate::error::{Error, Result};

use super::image::Image;
use super::transform::{from_normalized, to_normalized, Affine, Point, Transform};

/// Stand-in coordinate for points a projective map sends to infinity.
const FAR_AWAY: f64 = -1.0e6;

/// Closed-form description of the map a [`DenseWarp`] was rasterized from.
///
/// Keeping it lets coarser grids sample the exact mapping at arbitrary
/// sub-pixel positions instead of interpolating the raster.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticMap {
    /// A transform on normalized coordinates of a `width x height` frame,
    /// viewed through a window displaced by `offset` pixels (for crops).
    Normalized {
        transform: Transform,
        width: usize,
        height: usize,
        offset: Point,
    },
    /// An affine map in pixel coordinates.
    Pixel(Affine),
}

impl AnalyticMap {
    pub fn eval(&self, p: Point) -> Point {
        match self {
            AnalyticMap::Normalized {
                transform,
                width,
                height,
                offset,
            } => {
                let u = [
                    to_normalized(p[0] + offset[0], *width),
                    to_normalized(p[1] + offset[1], *height),
                ];
                let q = transform.apply(u);
                [
                    from_normalized(q[0], *width) - offset[0],
                    from_normalized(q[1], *height) - offset[1],
                ]
            }
            AnalyticMap::Pixel(a) => a.apply(p),
        }
    }

    /// The same map seen through a window shifted by `(dx, dy)` in both the
    /// domain and the codomain.
    pub fn shifted(&self, dx: f64, dy: f64) -> AnalyticMap {
        match self {
            AnalyticMap::Normalized {
                transform,
                width,
                height,
                offset,
            } => AnalyticMap::Normalized {
                transform: transform.clone(),
                width: *width,
                height: *height,
                offset: [offset[0] + dx, offset[1] + dy],
            },
            AnalyticMap::Pixel(a) => AnalyticMap::Pixel(
                Affine::translation(-dx, -dy)
                    .compose(a)
                    .compose(&Affine::translation(dx, dy)),
            ),
        }
    }
}

/// Per-pixel mapping field `M(p)` into a frame of the same size, with a
/// validity flag per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseWarp {
    width: usize,
    height: usize,
    map: Vec<Point>,
    valid: Vec<bool>,
    analytic: Option<AnalyticMap>,
}

impl DenseWarp {
    /// Builds a field from explicit values; validity is `in-bounds && mask`.
    pub fn from_map(width: usize, height: usize, map: Vec<Point>, mask: Option<Vec<bool>>) -> Result<Self> {
        if width == 0 || height == 0 || map.len() != width * height {
            return Err(Error::dim("dense_warp", format!("{width}x{height} field with {} entries", map.len())));
        }
        if let Some(m) = &mask {
            if m.len() != map.len() {
                return Err(Error::dim("dense_warp", "mask length mismatch"));
            }
        }
        let map: Vec<Point> = map
            .into_iter()
            .map(|q| if q[0].is_finite() && q[1].is_finite() { q } else { [FAR_AWAY, FAR_AWAY] })
            .collect();
        let valid = map
            .iter()
            .enumerate()
            .map(|(i, q)| in_bounds(*q, width, height) && mask.as_ref().is_none_or(|m| m[i]))
            .collect();
        Ok(DenseWarp {
            width,
            height,
            map,
            valid,
            analytic: None,
        })
    }

    /// Rasterizes an analytic map at every pixel.
    pub fn from_analytic(width: usize, height: usize, analytic: AnalyticMap, mask: Option<Vec<bool>>) -> Result<Self> {
        let mut map = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                map.push(analytic.eval([x as f64, y as f64]));
            }
        }
        let mut w = Self::from_map(width, height, map, mask)?;
        w.analytic = Some(analytic);
        Ok(w)
    }

    pub fn from_transform(width: usize, height: usize, transform: Transform) -> Result<Self> {
        if matches!(transform, Transform::Identity) {
            return Ok(Self::identity(width, height));
        }
        let analytic = AnalyticMap::Normalized {
            transform,
            width,
            height,
            offset: [0.0, 0.0],
        };
        Self::from_analytic(width, height, analytic, None)
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let mut map = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                map.push([x as f64, y as f64]);
            }
        }
        DenseWarp {
            width,
            height,
            map,
            valid: vec![true; width * height],
            analytic: Some(AnalyticMap::Pixel(Affine::identity())),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn map(&self) -> &[Point] {
        &self.map
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn analytic(&self) -> Option<&AnalyticMap> {
        self.analytic.as_ref()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Point {
        self.map[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len() as f64
    }

    /// Mapping at a real position: exact when an analytic form is attached,
    /// otherwise bilinear interpolation of the raster.
    pub fn eval(&self, p: Point) -> Point {
        if let Some(a) = &self.analytic {
            return a.eval(p);
        }
        let x0 = (p[0].floor().max(0.0) as usize).min(self.width - 1);
        let y0 = (p[1].floor().max(0.0) as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (p[0] - x0 as f64).clamp(0.0, 1.0);
        let fy = (p[1] - y0 as f64).clamp(0.0, 1.0);
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            *o = (1.0 - fx) * (1.0 - fy) * self.at(x0, y0)[d]
                + fx * (1.0 - fy) * self.at(x1, y0)[d]
                + (1.0 - fx) * fy * self.at(x0, y1)[d]
                + fx * fy * self.at(x1, y1)[d];
        }
        out
    }

    /// Restricts to the window `[x0, x0 + w) x [y0, y0 + h)`, re-expressing
    /// both domain and codomain in window coordinates. Validity is recomputed
    /// against the window bounds.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<DenseWarp> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::Parameter(format!(
                "warp crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let (dx, dy) = (x0 as f64, y0 as f64);
        let mut map = Vec::with_capacity(w * h);
        let mut mask = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let q = self.at(x + x0, y + y0);
                map.push([q[0] - dx, q[1] - dy]);
                mask.push(self.is_valid(x + x0, y + y0));
            }
        }
        let mut out = DenseWarp::from_map(w, h, map, Some(mask))?;
        out.analytic = self.analytic.as_ref().map(|a| a.shifted(dx, dy));
        Ok(out)
    }

    /// Mirrors the output of the map horizontally (`x -> w - 1 - x`).
    pub fn then_flip(&self) -> DenseWarp {
        let w = self.width as f64 - 1.0;
        let map = self.map.iter().map(|q| [w - q[0], q[1]]).collect();
        let valid = self.valid.clone();
        let analytic = match &self.analytic {
            Some(AnalyticMap::Normalized {
                transform,
                width,
                height,
                offset,
            }) if *offset == [0.0, 0.0] => Some(AnalyticMap::Normalized {
                transform: transform.clone().then(Transform::FlipX),
                width: *width,
                height: *height,
                offset: *offset,
            }),
            Some(AnalyticMap::Pixel(a)) => {
                let f = Affine {
                    m: [[-1.0, 0.0, w], [0.0, 1.0, 0.0]],
                };
                Some(AnalyticMap::Pixel(f.compose(a)))
            }
            _ => None,
        };
        DenseWarp {
            width: self.width,
            height: self.height,
            map,
            valid,
            analytic,
        }
    }

    /// Three-channel rendering `(x, y, valid)` for inspection as PWIM.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.width, self.height, 3, |x, y, c| match c {
            0 => self.at(x, y)[0] as f32,
            1 => self.at(x, y)[1] as f32,
            _ => self.is_valid(x, y) as u8 as f32,
        })
    }
}

#[inline]
pub(crate) fn in_bounds(q: Point, width: usize, height: usize) -> bool {
    q[0] >= 0.0 && q[0] <= (width - 1) as f64 && q[1] >= 0.0 && q[1] <= (height - 1) as f64
}

/// Resamples a pixel-level warp on a `grid_w x grid_h` cell grid.
///
/// Cell `c` is centred on pixel coordinate `(c + 0.5) * W / grid_w - 0.5`;
/// the mapping is evaluated there and its target converted back to cell
/// units with the same affine convention. A cell stays valid when the pixel
/// nearest to its centre is valid and its target lies inside the grid.
pub fn downscale_warp(warp: &DenseWarp, grid_w: usize, grid_h: usize) -> Result<DenseWarp> {
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::Parameter(format!("grid dims must be positive, got {grid_w}x{grid_h}")));
    }
    let rx = grid_w as f64 / warp.width as f64;
    let ry = grid_h as f64 / warp.height as f64;
    let mut map = Vec::with_capacity(grid_w * grid_h);
    let mut mask = Vec::with_capacity(grid_w * grid_h);
    for cy in 0..grid_h {
        for cx in 0..grid_w {
            let p = [(cx as f64 + 0.5) / rx - 0.5, (cy as f64 + 0.5) / ry - 0.5];
            let t = warp.eval(p);
            map.push([(t[0] + 0.5) * rx - 0.5, (t[1] + 0.5) * ry - 0.5]);
            let nx = (p[0].round().max(0.0) as usize).min(warp.width - 1);
            let ny = (p[1].round().max(0.0) as usize).min(warp.height - 1);
            mask.push(warp.is_valid(nx, ny));
        }
    }
    DenseWarp::from_map(grid_w, grid_h, map, Some(mask))
}

/// Bilinear backward warp: `out(p) = img(M(p))` where valid, black elsewhere.
pub fn warp_image(img: &Image, warp: &DenseWarp) -> Result<Image> {
    if img.width() != warp.width() || img.height() != warp.height() {
        return Err(Error::dim(
            "warp_image",
            format!("image {}x{} vs warp {}x{}", img.width(), img.height(), warp.width(), warp.height()),
        ));
    }
    let c = img.channels();
    let mut out = Image::zeros(img.width(), img.height(), c);
    let mut px = vec![0.0f32; c];
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !warp.is_valid(x, y) {
                continue;
            }
            let q = warp.at(x, y);
            img.bilinear(q[0], q[1], &mut px);
            for (ch, v) in px.iter().enumerate() {
                out.set(x, y, ch, *v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn translation(w: usize, h: usize, tx: f64, ty: f64) -> DenseWarp {
        DenseWarp::from_analytic(w, h, AnalyticMap::Pixel(Affine::translation(tx, ty)), None).unwrap()
    }

    #[test]
    fn identity_warp_is_identity_on_images() {
        let img = Image::from_fn(6, 5, 3, |x, y, c| (x * 3 + y * 7 + c) as f32 / 40.0);
        assert_eq!(warp_image(&img, &DenseWarp::identity(6, 5)).unwrap(), img);
    }

    #[test]
    fn integer_shift_blackens_last_column() {
        let img = Image::from_fn(5, 3, 1, |x, y, _| (1 + x + 10 * y) as f32);
        let out = warp_image(&img, &translation(5, 3, 1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(out.get(x, y, 0), img.get(x + 1, y, 0));
            }
            assert_eq!(out.get(4, y, 0), 0.0);
        }
    }

    #[test]
    fn half_pixel_shift_averages_ramp_neighbours() {
        let img = Image::from_fn(6, 2, 1, |x, y, _| (x * x + y) as f32);
        let out = warp_image(&img, &translation(6, 2, 0.5, 0.0)).unwrap();
        for x in 0..5 {
            let expect = 0.5 * (img.get(x, 1, 0) + img.get(x + 1, 1, 0));
            assert!((out.get(x, 1, 0) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = Image::zeros(4, 4, 1);
        assert!(warp_image(&img, &DenseWarp::identity(5, 4)).is_err());
    }

    #[test]
    fn downscale_identity_and_translation() {
        let id = downscale_warp(&DenseWarp::identity(16, 16), 4, 4).unwrap();
        for cy in 0..4 {
            for cx in 0..4 {
                let q = id.at(cx, cy);
                assert!((q[0] - cx as f64).abs() < 1e-12 && (q[1] - cy as f64).abs() < 1e-12);
            }
        }
        let t = downscale_warp(&translation(16, 16, -8.0, 4.0), 4, 4).unwrap();
        let q = t.at(3, 0);
        assert!((q[0] - 1.0).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12);
        assert!(!t.is_valid(0, 0));
        assert!(downscale_warp(&t, 0, 3).is_err());
    }

    #[test]
    fn crop_shifts_targets_and_revalidates() {
        let w = translation(10, 10, 5.0, 5.0);
        let c = w.crop(2, 2, 6, 6).unwrap();
        assert_eq!(c.at(0, 0), [5.0, 5.0]);
        assert!(c.is_valid(0, 0));
        assert!(!c.is_valid(1, 0));
        assert_eq!(c.eval([0.0, 0.0]), [5.0, 5.0]);
    }
}
