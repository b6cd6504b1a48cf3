//! Rank, spanned filter sets, and the ConvMixer channel-mixing oracle.
//!
//! A ConvMixer block maps `X = [x₁ … x_D]` (tokens × channels) to
//! `[H₁x₁ … H_D x_D] W`: a depthwise spatial convolution followed by a
//! channel mix. When `X` has rank `k` and the spatial filters can be split
//! into `k` groups that each span the whole `f²`-dimensional kernel space,
//! any other block `[H′ᵢxᵢ] W′` is reproduced exactly by re-fitting `W`
//! alone. [`prop1_oracle`] performs that fit by least squares and reports
//! how far it gets.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::conv_matrix::{make_conv_matrix, ConvMatrix, GridShape, Kernel2D, PaddingMode};
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_RTOL};
use crate::rng;

/// Tokens × channels matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(DMatrix<f64>);

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::UndefinedInput("embedding has non-finite entries".into()));
        }
        Ok(Self(data))
    }

    pub fn tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn channels(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// `(N × k)(k × D)` product of standard normal factors: rank `k` almost
/// surely.
pub fn low_rank_embedding(tokens: usize, channels: usize, rank: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = rng::seeded(seed);
    let left = DMatrix::from_fn(tokens, rank, |_, _| rng::standard_normal(&mut rng));
    let right = DMatrix::from_fn(rank, channels, |_, _| rng::standard_normal(&mut rng));
    EmbeddingMatrix(left * right)
}

/// One spatial filter per channel, all of the same size, with their matrix
/// forms on a common grid.
#[derive(Debug, Clone)]
pub struct FilterBank {
    matrices: Vec<ConvMatrix>,
    grid: GridShape,
}

impl FilterBank {
    pub fn new(filters: Vec<Kernel2D>, grid: GridShape, padding: PaddingMode) -> Result<Self> {
        let Some(first) = filters.first() else {
            return Err(Error::Config("filter bank is empty".into()));
        };
        let size = first.size();
        if let Some(bad) = filters.iter().find(|k| k.size() != size) {
            return Err(Error::Config(format!(
                "mixed kernel sizes in bank: {size} and {}",
                bad.size()
            )));
        }
        let matrices = filters
            .iter()
            .map(|k| make_conv_matrix(k, grid, padding))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { matrices, grid })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn kernel_size(&self) -> usize {
        self.matrices[0].source().size()
    }

    pub fn matrices(&self) -> &[ConvMatrix] {
        &self.matrices
    }

    pub fn kernels(&self) -> impl Iterator<Item = &Kernel2D> {
        self.matrices.iter().map(ConvMatrix::source)
    }
}

/// `D × D` channel-mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMixWeights(pub DMatrix<f64>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanReport {
    pub claimed_m: usize,
    pub claimed_k: usize,
    pub satisfied: bool,
    pub subset_ranks: Vec<usize>,
    /// Dimension of the intersection of all group spans.
    pub common_dim: usize,
    pub tolerance: f64,
}

/// `Σσᵢ² / σ_max²`.
pub fn stable_rank(x: &EmbeddingMatrix) -> Result<f64> {
    let s = linalg::singular_values(x.as_matrix());
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Err(Error::UndefinedInput("stable rank of a zero matrix".into()));
    }
    Ok(s.iter().map(|v| v * v).sum::<f64>() / (max * max))
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(x: &EmbeddingMatrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::Config(format!("relative tolerance {rel_tol} outside (0, 1)")));
    }
    Ok(linalg::numerical_rank(x.as_matrix(), rel_tol))
}

/// Tests whether the vectorized filters of `bank` form an `M–k` spanned set.
///
/// Filters are visited in a seeded random order and each is placed in the
/// group whose span it enlarges and whose rank is currently lowest; a filter
/// that enlarges no group goes to the smallest group. For `M = f²` the set is
/// spanned iff every group reaches rank `f²`. For smaller `M` the common
/// subspace is the intersection of all group spans, found by repeatedly
/// keeping the principal directions whose cosine is within `tolerance` of 1.
pub fn check_spanned(bank: &FilterBank, m: usize, k: usize, seed: u64, tolerance: f64) -> Result<SpanReport> {
    let dim = bank.kernel_size().pow(2);
    if k == 0 || bank.len() < k {
        return Err(Error::Infeasible {
            filters: bank.len(),
            groups: k,
        });
    }
    if m > dim {
        return Err(Error::Config(format!("M = {m} exceeds kernel dimension {dim}")));
    }

    let vectors: Vec<DVector<f64>> = bank.kernels().map(Kernel2D::vectorized).collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::Purpose::Sweep, 0, 0));

    let mut groups: Vec<Vec<DVector<f64>>> = vec![Vec::new(); k];
    let mut ranks = vec![0usize; k];
    let rank_of = |g: &[DVector<f64>]| {
        if g.is_empty() {
            0
        } else {
            linalg::numerical_rank(&DMatrix::from_columns(g), tolerance)
        }
    };

    for &i in &order {
        let v = &vectors[i];
        let mut best: Option<(usize, usize)> = None;
        for g in 0..k {
            let mut trial = groups[g].clone();
            trial.push(v.clone());
            let r = rank_of(&trial);
            if r > ranks[g] && best.is_none_or(|(_, br)| ranks[g] < br) {
                best = Some((g, ranks[g]));
            }
        }
        let target = match best {
            Some((g, _)) => g,
            None => (0..k).min_by_key(|&g| groups[g].len()).unwrap_or(0),
        };
        groups[target].push(v.clone());
        ranks[target] = rank_of(&groups[target]);
    }

    let common_dim = intersection_dim(&groups, tolerance);
    let satisfied = if m == dim {
        ranks.iter().all(|&r| r >= dim)
    } else {
        common_dim >= m
    };

    Ok(SpanReport {
        claimed_m: m,
        claimed_k: k,
        satisfied,
        subset_ranks: ranks,
        common_dim,
        tolerance,
    })
}

fn intersection_dim(groups: &[Vec<DVector<f64>>], tolerance: f64) -> usize {
    let mut basis: Option<DMatrix<f64>> = None;
    for g in groups {
        let q = linalg::column_basis(&DMatrix::from_columns(g), tolerance);
        basis = Some(match basis {
            None => q,
            Some(b) if b.ncols() == 0 || q.ncols() == 0 => DMatrix::zeros(b.nrows(), 0),
            Some(b) => {
                // singular values of BᵀQ are the cosines of the principal angles
                let svd = linalg::ThinSvd::new(&(b.transpose() * &q));
                let shared = svd.s.iter().filter(|&&c| c >= 1.0 - tolerance.max(1e-9)).count();
                &b * svd.u.columns(0, shared)
            }
        });
    }
    basis.map_or(0, |b| b.ncols())
}

fn check_bank(x: &EmbeddingMatrix, bank: &FilterBank) -> Result<()> {
    if bank.len() != x.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} filters for {} channels",
            bank.len(),
            x.channels()
        )));
    }
    if bank.grid().len() != x.tokens() {
        return Err(Error::DimensionMismatch(format!(
            "grid {} has {} tokens, embedding has {}",
            bank.grid(),
            bank.grid().len(),
            x.tokens()
        )));
    }
    Ok(())
}

/// Depthwise spatial mixing: column `i` of the output is `Hᵢ xᵢ`.
pub fn mixer_spatial(x: &EmbeddingMatrix, bank: &FilterBank) -> Result<EmbeddingMatrix> {
    check_bank(x, bank)?;
    let mut out = DMatrix::zeros(x.tokens(), x.channels());
    for (i, h) in bank.matrices().iter().enumerate() {
        out.set_column(i, &(h.data() * x.0.column(i)));
    }
    Ok(EmbeddingMatrix(out))
}

/// Spatial mixing followed by channel mixing with `w`.
pub fn mixer_block(x: &EmbeddingMatrix, bank: &FilterBank, w: &ChannelMixWeights) -> Result<EmbeddingMatrix> {
    let spatial = mixer_spatial(x, bank)?;
    if w.0.nrows() != x.channels() {
        return Err(Error::DimensionMismatch(format!(
            "channel mix has {} input channels, embedding has {}",
            w.0.nrows(),
            x.channels()
        )));
    }
    Ok(EmbeddingMatrix(spatial.0 * &w.0))
}

#[derive(Debug, Clone)]
pub struct ChannelFit {
    pub weights: ChannelMixWeights,
    /// Largest `‖A w_c − y_c‖ / ‖y_c‖` over output channels `c`.
    pub rel_residual: f64,
}

/// Least-squares channel weights reproducing `target` from already
/// spatially mixed features. Every output channel shares the design matrix,
/// so all columns are solved against one factorization.
pub fn fit_channel_mixing(spatial: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<ChannelFit> {
    let w = linalg::least_squares(spatial, target, RANK_RTOL)?;
    let fitted = spatial * &w;
    let rel_residual = (0..target.ncols())
        .map(|c| {
            let y = target.column(c);
            let err = (fitted.column(c) - y).norm();
            let scale = y.norm();
            if scale > 0.0 {
                err / scale
            } else {
                err
            }
        })
        .fold(0.0, f64::max);
    Ok(ChannelFit {
        weights: ChannelMixWeights(w),
        rel_residual,
    })
}

/// Fits channel weights for the fixed bank so that its block matches the
/// block built from `target_bank` and `target_w` on input `x`.
pub fn prop1_oracle(
    x: &EmbeddingMatrix,
    fixed_bank: &FilterBank,
    target_bank: &FilterBank,
    target_w: &ChannelMixWeights,
) -> Result<ChannelFit> {
    if x.0.iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedInput("input embedding is all zero".into()));
    }
    if fixed_bank.kernel_size() != target_bank.kernel_size() || fixed_bank.grid() != target_bank.grid() {
        return Err(Error::DimensionMismatch(
            "fixed and target banks differ in kernel size or grid".into(),
        ));
    }
    let spatial = mixer_spatial(x, fixed_bank)?;
    let target = mixer_block(x, target_bank, target_w)?;
    fit_channel_mixing(&spatial.0, &target.0)
}
