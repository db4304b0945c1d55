//! Parametric 2-D transforms acting on normalized coordinates in `[-1, 1]^2`.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Pivot magnitude product below which a linear system counts as singular.
pub const DEGENERATE_DET: f64 = 1e-9;

/// Solves `a * x = b` in place by Gaussian elimination with partial pivoting.
/// Returns the determinant of `a`; fails when `|det| < DEGENERATE_DET`.
pub fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<f64> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        if p == 0.0 {
            break;
        }
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    if !(det.abs() >= DEGENERATE_DET) {
        return Err(Error::Degenerate(format!("singular system, |det| = {:e}", det.abs())));
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * b[k];
        }
        b[r] = s / a[r * n + r];
    }
    Ok(det)
}

/// Projective map fitted to four point pairs by direct linear transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
    pub src: [Point; 4],
    pub dst: [Point; 4],
}

impl Homography {
    pub fn from_points(src: [Point; 4], dst: [Point; 4]) -> Result<Self> {
        let mut a = vec![0.0; 64];
        let mut b = vec![0.0; 8];
        for (k, (s, d)) in src.iter().zip(&dst).enumerate() {
            let (x, y, u, v) = (s[0], s[1], d[0], d[1]);
            a[(2 * k) * 8..(2 * k + 1) * 8].copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a[(2 * k + 1) * 8..(2 * k + 2) * 8].copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[2 * k] = u;
            b[2 * k + 1] = v;
        }
        solve_linear(&mut a, &mut b, 8)?;
        let h = [[b[0], b[1], b[2]], [b[3], b[4], b[5]], [b[6], b[7], 1.0]];
        Ok(Homography { h, src, dst })
    }

    pub fn apply(&self, p: Point) -> Point {
        let h = &self.h;
        let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
        if w.abs() < 1e-12 {
            return [f64::INFINITY, f64::INFINITY];
        }
        [
            (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
            (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
        ]
    }
}

/// Thin-plate spline interpolating control-point displacements with the
/// radial basis `U(r) = r^2 ln r^2` (`r^2` clamped at `1e-12`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tps {
    pub ctrl: Vec<Point>,
    pub dst: Vec<Point>,
    /// Radial weights, one `[wx, wy]` per control point.
    weights: Vec<Point>,
    /// Affine part `[a0, ax, ay]` for each output coordinate.
    affine: [[f64; 3]; 2],
}

fn tps_kernel(r2: f64) -> f64 {
    let r2 = r2.max(1e-12);
    r2 * r2.ln()
}

impl Tps {
    pub fn fit(ctrl: Vec<Point>, dst: Vec<Point>) -> Result<Self> {
        let n = ctrl.len();
        if n < 3 || dst.len() != n {
            return Err(Error::Parameter(format!("TPS needs >= 3 matched control points, got {n}")));
        }
        let m = n + 3;
        let mut base = vec![0.0; m * m];
        for i in 0..n {
            for j in 0..n {
                let dx = ctrl[i][0] - ctrl[j][0];
                let dy = ctrl[i][1] - ctrl[j][1];
                base[i * m + j] = tps_kernel(dx * dx + dy * dy);
            }
            let prow = [1.0, ctrl[i][0], ctrl[i][1]];
            for k in 0..3 {
                base[i * m + n + k] = prow[k];
                base[(n + k) * m + i] = prow[k];
            }
        }
        let mut coef = [vec![0.0; m], vec![0.0; m]];
        for (d, c) in coef.iter_mut().enumerate() {
            let mut a = base.clone();
            for i in 0..n {
                c[i] = dst[i][d];
            }
            solve_linear(&mut a, c, m)?;
        }
        let weights = (0..n).map(|i| [coef[0][i], coef[1][i]]).collect();
        let affine = [
            [coef[0][n], coef[0][n + 1], coef[0][n + 2]],
            [coef[1][n], coef[1][n + 1], coef[1][n + 2]],
        ];
        Ok(Tps {
            ctrl,
            dst,
            weights,
            affine,
        })
    }

    /// Control points on a regular `k x k` grid spanning `[-1, 1]^2`.
    pub fn grid(k: usize) -> Vec<Point> {
        let step = 2.0 / (k - 1) as f64;
        let mut pts = Vec::with_capacity(k * k);
        for iy in 0..k {
            for ix in 0..k {
                pts.push([-1.0 + ix as f64 * step, -1.0 + iy as f64 * step]);
            }
        }
        pts
    }

    pub fn apply(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let a = &self.affine[d];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (c, w) in self.ctrl.iter().zip(&self.weights) {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            let u = tps_kernel(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }
}

/// `p -> A p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    /// Rotation by `angle`, shear by `shear` (radians) and isotropic `scale`,
    /// composed as `R * Sh * S`, followed by translation `(tx, ty)`.
    pub fn from_params(scale: f64, angle: f64, shear: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let k = shear.tan();
        // R * [[1, k], [0, 1]] * scale
        let a = [[c * scale, (c * k - s) * scale], [s * scale, (s * k + c) * scale]];
        Affine {
            m: [[a[0][0], a[0][1], tx], [a[1][0], a[1][1], ty]],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Affine) -> Affine {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            m[r][0] = a[r][0] * b[0][0] + a[r][1] * b[1][0];
            m[r][1] = a[r][0] * b[0][1] + a[r][1] * b[1][1];
            m[r][2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        Affine { m }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Result<Affine> {
        let d = self.det();
        if d.abs() < DEGENERATE_DET {
            return Err(Error::Degenerate(format!("affine determinant {d:e}")));
        }
        let m = &self.m;
        let ia = [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]];
        Ok(Affine {
            m: [
                [ia[0][0], ia[0][1], -(ia[0][0] * m[0][2] + ia[0][1] * m[1][2])],
                [ia[1][0], ia[1][1], -(ia[1][0] * m[0][2] + ia[1][1] * m[1][2])],
            ],
        })
    }
}

/// A mapping from normalized output coordinates to normalized input
/// coordinates, i.e. the `M_W` used as `I'(p) = I(M_W(p))`.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Identity,
    Homography(Homography),
    Tps(Tps),
    Affine(Affine),
    /// Horizontal mirror `x -> -x`.
    FlipX,
    /// Applied left to right: `Chain([a, b])` maps `p` to `b(a(p))`.
    Chain(Vec<Transform>),
}

impl Transform {
    pub fn apply(&self, p: Point) -> Point {
        match self {
            Transform::Identity => p,
            Transform::Homography(h) => h.apply(p),
            Transform::Tps(t) => t.apply(p),
            Transform::Affine(a) => a.apply(p),
            Transform::FlipX => [-p[0], p[1]],
            Transform::Chain(ts) => ts.iter().fold(p, |q, t| t.apply(q)),
        }
    }

    /// `then ∘ self`.
    pub fn then(self, then: Transform) -> Transform {
        match self {
            Transform::Identity => then,
            Transform::Chain(mut ts) => {
                ts.push(then);
                Transform::Chain(ts)
            }
            t => Transform::Chain(vec![t, then]),
        }
    }
}

/// Pixel -> normalized coordinate on an axis with `n` samples.
#[inline]
pub fn to_normalized(x: f64, n: usize) -> f64 {
    2.0 * x / (n as f64 - 1.0) - 1.0
}

#[inline]
pub fn from_normalized(u: f64, n: usize) -> f64 {
    (u + 1.0) * (n as f64 - 1.0) / 2.0
}
