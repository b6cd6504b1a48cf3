//! Solving query/key weights whose initial attention map is an impulse
//! convolution.
//!
//! Per head the pipeline is:
//!
//! 1. pseudo input `X̃ = LayerNorm(P)` from the positional encoding `P`;
//! 2. target logits `M̃ = αH + βZ`, `H` an impulse convolution matrix and
//!    `Z ~ N(0, 1/D)`;
//! 3. `M̂ = X̃⁺ M̃ (X̃⁺)ᵀ` with `X̃⁺` the pseudo-inverse;
//! 4. thin SVD `M̂ = U diag(s) Vᵀ`, `Q̃ = U√s`, `K̃ = V√s`, both truncated to
//!    the head width `d`;
//! 5. `Q = γ Q̃ / ‖Q̃‖_F`, `K = γ K̃ / ‖K̃‖_F`.
//!
//! When `rank(X̃) ≤ d` nothing is lost in step 4 and `X̃QKᵀX̃ᵀ` equals `M̃`
//! up to a positive factor.

mod model;

pub use model::{init_default, init_mimetic, init_vit, InitConfig, InitMethod, ModelInit};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conv_matrix::{ConvMatrix, ImpulseOffset};
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};
use crate::rng;
use crate::spanned_set::EmbeddingMatrix;

/// Singular values below this fraction of the largest are dropped before
/// taking square roots.
pub const SINGULAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PosEncoding {
    pub data: DMatrix<f64>,
    pub std: f64,
    pub seed: u64,
}

/// Truncated-normal positional encoding, clipped at ±2 std.
pub fn init_pos_encoding(tokens: usize, dim: usize, std: f64, seed: u64) -> Result<PosEncoding> {
    if tokens == 0 || dim == 0 {
        return Err(Error::Config("positional encoding needs N, D >= 1".into()));
    }
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("positional std must be positive, got {std}")));
    }
    let mut rng = rng::stream(seed, rng::Purpose::PosEncoding, 0, 0);
    let mut data = DMatrix::zeros(tokens, dim);
    for r in 0..tokens {
        for c in 0..dim {
            data[(r, c)] = rng::truncated_normal(&mut rng, std);
        }
    }
    Ok(PosEncoding { data, std, seed })
}

/// Row-wise layer norm with unit gain and zero bias.
pub fn layer_norm_rows(p: &DMatrix<f64>, eps: f64) -> Result<EmbeddingMatrix> {
    let dim = p.ncols();
    if dim < 2 {
        return Err(Error::Config(format!("layer norm needs D >= 2, got {dim}")));
    }
    let mut out = p.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / dim as f64;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / dim as f64;
        let denom = (var + eps).sqrt();
        if denom > 0.0 {
            row /= denom;
        }
    }
    EmbeddingMatrix::new(out)
}

/// `D × N` pseudo-inverse of a full-rank pseudo input.
///
/// With `N ≥ D` this is `(X̃ᵀX̃)⁻¹X̃ᵀ`; with `N < D` it is the Moore-Penrose
/// right inverse `X̃ᵀ(X̃X̃ᵀ)⁻¹`, so `X̃ X̃⁺ = I_N`.
pub fn pseudo_inverse(xt: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    linalg::full_rank_pinv(xt.as_matrix())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `softmax(X Q Kᵀ Xᵀ)`.
    PaperExact,
    /// `softmax(X Q Kᵀ Xᵀ / √d)`, as inside a standard ViT block.
    #[default]
    InvSqrtD,
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleMode::PaperExact => "paper_exact",
            ScaleMode::InvSqrtD => "inv_sqrt_d",
        })
    }
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_exact" | "paper-exact" => Ok(ScaleMode::PaperExact),
            "inv_sqrt_d" | "inv-sqrt-d" => Ok(ScaleMode::InvSqrtD),
            other => Err(Error::Config(format!("unknown scale mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitHyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub filter: usize,
    pub d_head: usize,
    pub scale_mode: ScaleMode,
}

impl Default for InitHyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0 / 40.0,
            gamma: 2.0,
            filter: 3,
            d_head: 64,
            scale_mode: ScaleMode::InvSqrtD,
        }
    }
}

impl InitHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.filter == 0 || self.filter.is_multiple_of(2) {
            return Err(Error::Config(format!("filter size must be odd, got {}", self.filter)));
        }
        if self.d_head == 0 {
            return Err(Error::Config("head dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian noise `Z ~ N(0, 1/D)` drawn from the stream of one head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub dim: usize,
    pub seed: u64,
    pub layer: usize,
    pub head: usize,
}

impl NoiseSpec {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            layer: 0,
            head: 0,
        }
    }

    pub fn for_head(self, layer: usize, head: usize) -> Self {
        Self { layer, head, ..self }
    }

    pub fn sample(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut rng = rng::stream(self.seed, rng::Purpose::TargetNoise, self.layer, self.head);
        let std = 1.0 / (self.dim as f64).sqrt();
        let mut z = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                z[(r, c)] = rng::standard_normal(&mut rng) * std;
            }
        }
        z
    }
}

/// `αH + βZ`.
pub fn build_target_map(h: &ConvMatrix, hp: &InitHyperparams, noise: &NoiseSpec) -> DMatrix<f64> {
    let n = h.grid().len();
    let mut target = h.data() * hp.alpha;
    if hp.beta != 0.0 {
        target += noise.sample(n, n) * hp.beta;
    }
    target
}

/// Per-head query/key initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInit {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub target_offset: Option<ImpulseOffset>,
    pub layer: usize,
    pub head: usize,
}

/// Pseudo input and its pseudo-inverse, shared by every head solved against
/// the same positional encoding.
#[derive(Debug, Clone)]
pub struct PseudoInput {
    x: EmbeddingMatrix,
    pinv: DMatrix<f64>,
}

impl PseudoInput {
    pub fn from_pos(pos: &PosEncoding, eps: f64) -> Result<Self> {
        Self::from_embedding(layer_norm_rows(&pos.data, eps)?)
    }

    /// Uses `x` directly as the pseudo input, skipping layer norm.
    pub fn from_embedding(x: EmbeddingMatrix) -> Result<Self> {
        let pinv = pseudo_inverse(&x)?;
        Ok(Self { x, pinv })
    }

    pub fn x(&self) -> &EmbeddingMatrix {
        &self.x
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }
}

/// Runs the full pipeline for one head, layer-normalizing `pos` first.
pub fn solve_qk(pos: &PosEncoding, h: &ConvMatrix, hp: &InitHyperparams, noise: NoiseSpec, ln_eps: f64) -> Result<AttentionInit> {
    if hp.d_head > pos.data.ncols() {
        return Err(Error::Config(format!("head dimension {} exceeds D = {}", hp.d_head, pos.data.ncols())));
    }
    let pseudo = PseudoInput::from_pos(pos, ln_eps)?;
    solve_qk_with(&pseudo, h, hp, noise)
}

pub fn solve_qk_with(pseudo: &PseudoInput, h: &ConvMatrix, hp: &InitHyperparams, noise: NoiseSpec) -> Result<AttentionInit> {
    hp.validate()?;
    let (n, dim) = (pseudo.x.tokens(), pseudo.x.channels());
    if h.grid().len() != n {
        return Err(Error::DimensionMismatch(format!(
            "convolution matrix has {} tokens, pseudo input has {n}",
            h.grid().len()
        )));
    }
    if hp.d_head > dim {
        return Err(Error::Config(format!("head dimension {} exceeds D = {dim}", hp.d_head)));
    }

    let target = build_target_map(h, hp, &noise);
    let m_hat = &pseudo.pinv * target * pseudo.pinv.transpose();
    let (q, k) = factor_truncated(&m_hat, hp.d_head)?;

    Ok(AttentionInit {
        q: normalized(q, hp.gamma)?,
        k: normalized(k, hp.gamma)?,
        target_offset: h.source().impulse_offset(),
        layer: noise.layer,
        head: noise.head,
    })
}

/// `(U√s, V√s)` restricted to the leading `width` singular triplets.
pub(crate) fn factor_truncated(m: &DMatrix<f64>, width: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let svd = ThinSvd::new(m);
    let width = width.min(svd.s.len());
    let floor = SINGULAR_FLOOR * svd.max();
    let root: Vec<f64> = svd.s.iter().take(width).map(|&s| if s > floor { s.sqrt() } else { 0.0 }).collect();
    let scale = |basis: &DMatrix<f64>| {
        let mut out = basis.columns(0, width).into_owned();
        for (mut col, &r) in out.column_iter_mut().zip(&root) {
            col *= r;
        }
        out
    };
    Ok((scale(&svd.u), scale(&svd.v)))
}

fn normalized(m: DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    let norm = m.norm();
    if norm == 0.0 {
        return Err(Error::UndefinedInput("target factorizes to zero".into()));
    }
    Ok(m * (gamma / norm))
}

/// `X Q Kᵀ Xᵀ`, divided by `√d` under [`ScaleMode::InvSqrtD`].
pub fn attention_logits(x: &DMatrix<f64>, q: &DMatrix<f64>, k: &DMatrix<f64>, scale_mode: ScaleMode) -> DMatrix<f64> {
    let mut logits = (x * q) * (x * k).transpose();
    if scale_mode == ScaleMode::InvSqrtD {
        logits /= (q.ncols() as f64).sqrt();
    }
    logits
}

pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Row-stochastic attention map `softmax(logits)`.
pub fn synthesize_attention(x: &EmbeddingMatrix, q: &DMatrix<f64>, k: &DMatrix<f64>, scale_mode: ScaleMode) -> Result<DMatrix<f64>> {
    if q.nrows() != x.channels() || k.nrows() != x.channels() || q.ncols() != k.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} channels, Q is {}x{}, K is {}x{}",
            x.channels(),
            q.nrows(),
            q.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(softmax_rows(&attention_logits(x.as_matrix(), q, k, scale_mode)))
}
