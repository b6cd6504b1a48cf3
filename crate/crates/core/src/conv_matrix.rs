//! Spatial kernels and their matrix form on a token grid.
//!
//! Images on a `rows × cols` grid are vectorized row-major, so pixel `(r, c)`
//! is entry `r · cols + c`. A kernel `h` of odd size `f` acts as the
//! cross-correlation used by deep-learning frameworks:
//!
//! ```text
//! y[r, c] = Σ_{a,b} h[a, b] · x[r + a − p, c + b − p],   p = (f − 1) / 2
//! ```
//!
//! so an impulse at `center + (dr, dc)` copies `x[r + dr, c + dc]` into
//! `y[r, c]`. Out-of-grid reads are zero or wrap around, depending on the
//! [`PaddingMode`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols })
    }

    /// Number of tokens `N = rows · cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Displacement of an impulse's 1-entry from the kernel center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImpulseOffset {
    pub dr: i64,
    pub dc: i64,
}

impl ImpulseOffset {
    pub const CENTER: ImpulseOffset = ImpulseOffset { dr: 0, dc: 0 };

    pub fn new(dr: i64, dc: i64) -> Self {
        Self { dr, dc }
    }

    pub fn fits(&self, size: usize) -> bool {
        let half = (size as i64 - 1) / 2;
        self.dr.abs() <= half && self.dc.abs() <= half
    }

    /// Offset between flattened token indices, e.g. `(-1, 0)` on an 8-wide
    /// grid is `-8`.
    pub fn flattened(&self, grid: GridShape) -> i64 {
        self.dr * grid.cols as i64 + self.dc
    }

    /// All offsets of a size-`f` kernel, row-major.
    pub fn all(size: usize) -> Vec<ImpulseOffset> {
        let half = (size as i64 - 1) / 2;
        (-half..=half)
            .flat_map(|dr| (-half..=half).map(move |dc| ImpulseOffset { dr, dc }))
            .collect()
    }
}

impl fmt::Display for ImpulseOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.dr, self.dc)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    #[default]
    Zero,
    Circular,
}

impl PaddingMode {
    /// Where index `i + shift` lands on an axis of length `n`.
    fn source(self, i: usize, shift: i64, n: usize) -> Option<usize> {
        let j = i as i64 + shift;
        match self {
            PaddingMode::Zero => (0..n as i64).contains(&j).then_some(j as usize),
            PaddingMode::Circular => Some(j.rem_euclid(n as i64) as usize),
        }
    }
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaddingMode::Zero => "zero",
            PaddingMode::Circular => "circular",
        })
    }
}

impl FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PaddingMode::Zero),
            "circular" => Ok(PaddingMode::Circular),
            other => Err(Error::Config(format!("unknown padding mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Impulse(ImpulseOffset),
    Box,
    Random,
    Custom,
}

/// Square `f × f` spatial filter with odd `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    weights: DMatrix<f64>,
    kind: KernelKind,
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel size must be odd and positive, got {size}")));
    }
    Ok(())
}

impl Kernel2D {
    pub fn impulse(size: usize, offset: ImpulseOffset) -> Result<Self> {
        check_size(size)?;
        if !offset.fits(size) {
            return Err(Error::OffsetOutOfBounds {
                dr: offset.dr,
                dc: offset.dc,
                size,
            });
        }
        let half = (size as i64 - 1) / 2;
        let mut weights = DMatrix::zeros(size, size);
        weights[((half + offset.dr) as usize, (half + offset.dc) as usize)] = 1.0;
        Ok(Self {
            weights,
            kind: KernelKind::Impulse(offset),
        })
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        check_size(size)?;
        Ok(Self {
            weights: DMatrix::from_element(size, size, 1.0),
            kind: KernelKind::Box,
        })
    }

    /// I.i.d. standard normal entries scaled by `1 / f`.
    pub fn random<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<Self> {
        check_size(size)?;
        let scale = 1.0 / size as f64;
        let mut weights = DMatrix::zeros(size, size);
        // fill row-major so the draw order matches the vectorization order
        for r in 0..size {
            for c in 0..size {
                weights[(r, c)] = rng::standard_normal(rng) * scale;
            }
        }
        Ok(Self {
            weights,
            kind: KernelKind::Random,
        })
    }

    pub fn custom(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::Config(format!(
                "kernel must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        check_size(weights.nrows())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("kernel has non-finite weights".into()));
        }
        Ok(Self {
            weights,
            kind: KernelKind::Custom,
        })
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn impulse_offset(&self) -> Option<ImpulseOffset> {
        match self.kind {
            KernelKind::Impulse(o) => Some(o),
            _ => None,
        }
    }

    /// Row-major flattening into `R^{f²}`.
    pub fn vectorized(&self) -> DVector<f64> {
        let f = self.size();
        DVector::from_fn(f * f, |i, _| self.weights[(i / f, i % f)])
    }
}

pub fn make_impulse_kernel(size: usize, offset: ImpulseOffset) -> Result<Kernel2D> {
    Kernel2D::impulse(size, offset)
}

pub fn make_box_kernel(size: usize) -> Result<Kernel2D> {
    Kernel2D::box_filter(size)
}

pub fn sample_random_kernel(size: usize, seed: u64) -> Result<Kernel2D> {
    Kernel2D::random(size, &mut rng::stream(seed, rng::Purpose::Kernel, 0, 0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankStrategy {
    /// Offsets drawn independently and uniformly.
    Uniform,
    /// Shuffled passes over all `f²` offsets; every offset appears once
    /// before any appears twice.
    #[default]
    CoverageFirst,
}

impl FromStr for BankStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(BankStrategy::Uniform),
            "coverage_first" | "coverage-first" => Ok(BankStrategy::CoverageFirst),
            other => Err(Error::Config(format!("unknown bank strategy `{other}`"))),
        }
    }
}

pub fn sample_impulse_offsets<R: Rng + ?Sized>(
    count: usize,
    size: usize,
    strategy: BankStrategy,
    rng: &mut R,
) -> Result<Vec<ImpulseOffset>> {
    check_size(size)?;
    let all = ImpulseOffset::all(size);
    let mut out = Vec::with_capacity(count);
    match strategy {
        BankStrategy::Uniform => {
            for _ in 0..count {
                out.push(all[rng.random_range(0..all.len())]);
            }
        }
        BankStrategy::CoverageFirst => {
            use rand::seq::SliceRandom;
            while out.len() < count {
                let mut pass = all.clone();
                pass.shuffle(rng);
                let take = (count - out.len()).min(pass.len());
                out.extend_from_slice(&pass[..take]);
            }
        }
    }
    Ok(out)
}

pub fn sample_impulse_bank(
    count: usize,
    size: usize,
    seed: u64,
    strategy: BankStrategy,
) -> Result<Vec<Kernel2D>> {
    if count == 0 {
        return Err(Error::Config("impulse bank needs at least one filter".into()));
    }
    let mut rng = rng::stream(seed, rng::Purpose::Kernel, 0, 1);
    sample_impulse_offsets(count, size, strategy, &mut rng)?
        .into_iter()
        .map(|o| Kernel2D::impulse(size, o))
        .collect()
}

/// `N × N` matrix `H` with `vec(h ∗ x) = H vec(x)`.
#[derive(Debug, Clone)]
pub struct ConvMatrix {
    grid: GridShape,
    data: DMatrix<f64>,
    source: Kernel2D,
    padding: PaddingMode,
}

/// Builds `H` block by block: kernel row `a` contributes one `cols × cols`
/// banded block `F_a`, placed on block diagonal `a − p`. Under circular
/// padding both the blocks and their placement wrap, giving a block
/// circulant matrix with circulant blocks.
pub fn make_conv_matrix(kernel: &Kernel2D, grid: GridShape, padding: PaddingMode) -> Result<ConvMatrix> {
    let f = kernel.size();
    if f > 2 * grid.rows.min(grid.cols) {
        return Err(Error::Config(format!(
            "kernel size {f} exceeds twice the smaller side of grid {grid}"
        )));
    }
    let half = (f as i64 - 1) / 2;
    let n = grid.len();
    let mut data = DMatrix::zeros(n, n);

    for a in 0..f {
        let mut block = DMatrix::<f64>::zeros(grid.cols, grid.cols);
        for c in 0..grid.cols {
            for b in 0..f {
                if let Some(src) = padding.source(c, b as i64 - half, grid.cols) {
                    block[(c, src)] += kernel.weights[(a, b)];
                }
            }
        }
        let row_shift = a as i64 - half;
        for br in 0..grid.rows {
            let Some(bc) = padding.source(br, row_shift, grid.rows) else {
                continue;
            };
            let mut view = data.view_mut((br * grid.cols, bc * grid.cols), (grid.cols, grid.cols));
            view += &block;
        }
    }

    Ok(ConvMatrix {
        grid,
        data,
        source: kernel.clone(),
        padding,
    })
}

impl ConvMatrix {
    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn source(&self) -> &Kernel2D {
        &self.source
    }

    pub fn padding(&self) -> PaddingMode {
        self.padding
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.data * x
    }

    /// Rows with at least one nonzero entry. Under zero padding an impulse
    /// leaves boundary rows empty; those have no target position.
    pub fn interior_rows(&self) -> Vec<usize> {
        (0..self.data.nrows())
            .filter(|&i| self.data.row(i).iter().any(|&v| v != 0.0))
            .collect()
    }

    /// For an impulse matrix, the column holding each row's 1, or `None`
    /// for an empty row. Errors if the matrix is not a sub-permutation of
    /// ones.
    pub fn impulse_targets(&self) -> Result<Vec<Option<usize>>> {
        impulse_targets(&self.data)
    }
}

pub(crate) fn impulse_targets(h: &DMatrix<f64>) -> Result<Vec<Option<usize>>> {
    let mut out = Vec::with_capacity(h.nrows());
    for i in 0..h.nrows() {
        let mut target = None;
        for (j, &v) in h.row(i).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if v != 1.0 || target.is_some() {
                return Err(Error::Contract(format!("row {i} is not an impulse row")));
            }
            target = Some(j);
        }
        out.push(target);
    }
    Ok(out)
}
