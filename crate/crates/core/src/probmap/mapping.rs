use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndgraph::{gemm, MatRef, Real, Tensor};
use crate::warp::{pwim, Point};

/// Cell grid of a feature map. Cells are vectorized y-major:
/// `index = y * w + x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn new(h: usize, w: usize) -> Self {
        Grid { h, w }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.w + x
    }

    /// `(x, y)` cell coordinates of a vectorized index.
    pub fn coords(&self, idx: usize) -> Point {
        [(idx % self.w) as f64, (idx / self.w) as f64]
    }

    /// Index of the cell nearest to a real position, clamped into the grid.
    pub fn nearest(&self, p: Point) -> usize {
        let x = (p[0].round().max(0.0) as usize).min(self.w - 1);
        let y = (p[1].round().max(0.0) as usize).min(self.h - 1);
        self.index(x, y)
    }
}

/// Shape metadata shared by cost volumes and probabilistic mappings.
///
/// Rows index target cells (plus the unmatched state `∅` as the last row when
/// `unmatched_state`), columns index source cells (plus the fixed `∅` column
/// when `unmatched_column`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Layout {
    pub target: Grid,
    pub source: Grid,
    pub unmatched_state: bool,
    pub unmatched_column: bool,
}

impl Layout {
    pub fn plain(target: Grid, source: Grid) -> Self {
        Layout {
            target,
            source,
            unmatched_state: false,
            unmatched_column: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.target.cells() + self.unmatched_state as usize
    }

    pub fn cols(&self) -> usize {
        self.source.cells() + self.unmatched_column as usize
    }

    /// Row index of `∅`, when present.
    pub fn unmatched_row(&self) -> Option<usize> {
        self.unmatched_state.then(|| self.target.cells())
    }

    /// Layout of `self ⊗ next`, i.e. `P_{A<-B} ⊗ P_{B<-C}`.
    pub fn compose(&self, next: &Layout) -> Result<Layout> {
        if self.source != next.target {
            return Err(Error::dim(
                "compose",
                format!("intermediate grids differ: {:?} vs {:?}", self.source, next.target),
            ));
        }
        if self.unmatched_state != next.unmatched_state {
            return Err(Error::Contract("compose: unmatched-state flags disagree".into()));
        }
        if self.unmatched_state && !self.unmatched_column {
            return Err(Error::Contract(
                "compose: the left mapping needs its fixed unmatched column to absorb P(∅|·)".into(),
            ));
        }
        Ok(Layout {
            target: self.target,
            source: next.source,
            unmatched_state: self.unmatched_state,
            unmatched_column: next.unmatched_column,
        })
    }

    fn reserved_word(&self) -> Result<u32> {
        if self.target.w > 255 || self.source.w > 255 {
            return Err(Error::Parameter("grid widths above 255 cannot be serialized".into()));
        }
        Ok(self.target.w as u32
            | (self.source.w as u32) << 8
            | (self.unmatched_state as u32) << 16
            | (self.unmatched_column as u32) << 17
            | 1 << 31)
    }

    fn from_header(h: &pwim::Header) -> Result<Layout> {
        let r = h.reserved;
        if r >> 31 != 1 || h.channels != 1 {
            return Err(Error::format(12, "PWIM file does not hold a probabilistic mapping"));
        }
        let tw = (r & 0xff) as usize;
        let sw = ((r >> 8) & 0xff) as usize;
        let state = (r >> 16) & 1 == 1;
        let column = (r >> 17) & 1 == 1;
        let tcells = h.height.checked_sub(state as usize);
        let scells = h.width.checked_sub(column as usize);
        match (tcells, scells) {
            (Some(tc), Some(sc)) if tw > 0 && sw > 0 && tc % tw == 0 && sc % sw == 0 && tc > 0 && sc > 0 => Ok(Layout {
                target: Grid::new(tc / tw, tw),
                source: Grid::new(sc / sw, sw),
                unmatched_state: state,
                unmatched_column: column,
            }),
            _ => Err(Error::format(12, "inconsistent grid metadata in PWIM header")),
        }
    }
}

/// Column-stochastic matrix `P(i | j)` with its grid metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMapping<F> {
    layout: Layout,
    probs: Tensor<F>,
}

/// Column-sum tolerance used when validating mappings of a given height.
pub fn stochastic_tolerance<F: Real>(rows: usize) -> f64 {
    (F::epsilon().as_f64() * rows as f64 * 8.0).max(1e-6)
}

impl<F: Real> ProbMapping<F> {
    /// Validates shape, range and column sums (and the fixed `∅` column).
    pub fn new(layout: Layout, probs: Tensor<F>) -> Result<Self> {
        let (r, c) = probs.dims2()?;
        if (r, c) != (layout.rows(), layout.cols()) {
            return Err(Error::dim(
                "prob_mapping",
                format!("matrix {r}x{c} vs layout {}x{}", layout.rows(), layout.cols()),
            ));
        }
        let tol = stochastic_tolerance::<F>(r);
        let d = probs.data();
        for j in 0..c {
            let mut s = 0.0;
            for i in 0..r {
                let v = d[i * c + j].as_f64();
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(Error::Contract(format!("P({i}|{j}) = {v} outside [0, 1]")));
                }
                s += v;
            }
            if (s - 1.0).abs() > tol {
                return Err(Error::Contract(format!("column {j} sums to {s}")));
            }
        }
        if layout.unmatched_column {
            let j = c - 1;
            for i in 0..r {
                let expect = if i == r - 1 { F::one() } else { F::zero() };
                if d[i * c + j] != expect {
                    return Err(Error::Contract("unmatched column must equal e_∅ exactly".into()));
                }
            }
        }
        Ok(ProbMapping { layout, probs })
    }

    pub(crate) fn new_unchecked(layout: Layout, probs: Tensor<F>) -> Self {
        ProbMapping { layout, probs }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn probs(&self) -> &Tensor<F> {
        &self.probs
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn cols(&self) -> usize {
        self.layout.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.probs.at2(i, j)
    }

    /// `P(∅ | j)`, or zero without an unmatched state.
    pub fn unmatched_prob(&self, j: usize) -> F {
        self.layout
            .unmatched_row()
            .map(|r| self.get(r, j))
            .unwrap_or_else(F::zero)
    }

    /// Identity permutation on a grid, optionally with the unmatched state
    /// and its fixed column.
    pub fn identity(grid: Grid, unmatched: bool) -> Self {
        let layout = Layout {
            target: grid,
            source: grid,
            unmatched_state: unmatched,
            unmatched_column: unmatched,
        };
        let n = layout.rows();
        let probs = Tensor::from_fn(&[n, n], |k| if k / n == k % n { F::one() } else { F::zero() });
        ProbMapping { layout, probs }
    }

    /// `self ⊗ next` evaluated directly (no autodiff).
    pub fn compose(&self, next: &ProbMapping<F>) -> Result<ProbMapping<F>> {
        let layout = self.layout.compose(&next.layout)?;
        let (m, k, n) = (self.rows(), self.cols(), next.cols());
        let mut out = vec![F::zero(); m * n];
        gemm(
            MatRef::new(self.probs.data(), m, k),
            MatRef::new(next.probs.data(), k, n),
            F::zero(),
            &mut out,
        );
        Ok(ProbMapping::new_unchecked(layout, Tensor::matrix(m, n, out)?))
    }

    pub fn cast<G: Real>(&self) -> ProbMapping<G> {
        ProbMapping {
            layout: self.layout,
            probs: self.probs.cast(),
        }
    }

    pub fn to_pwim_bytes(&self) -> Result<Vec<u8>> {
        let header = pwim::Header {
            height: self.rows(),
            width: self.cols(),
            channels: 1,
            reserved: self.layout.reserved_word()?,
        };
        let data: Vec<f32> = self.probs.data().iter().map(|v| v.as_f64() as f32).collect();
        pwim::encode(&header, &data)
    }

    pub fn from_pwim_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, data) = pwim::decode(bytes)?;
        let layout = Layout::from_header(&h)?;
        let probs = Tensor::matrix(h.height, h.width, data.into_iter().map(|v| F::lit(v as f64)).collect())?;
        Ok(ProbMapping { layout, probs })
    }

    pub fn write_pwim(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pwim_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_pwim(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pwim_bytes(&bytes)
    }
}
