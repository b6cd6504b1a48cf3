//! Whole-model initialization bundles: structured impulse heads and the two
//! unstructured comparators.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    factor_truncated, init_pos_encoding, layer_norm_rows, solve_qk_with, synthesize_attention, AttentionInit,
    InitHyperparams, NoiseSpec, PosEncoding, PseudoInput, ScaleMode,
};
use crate::conv_matrix::{make_conv_matrix, sample_impulse_offsets, BankStrategy, GridShape, Kernel2D, PaddingMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::spanned_set::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    #[default]
    Impulse,
    Default,
    Mimetic,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Impulse => "impulse",
            InitMethod::Default => "default",
            InitMethod::Mimetic => "mimetic",
        })
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impulse" => Ok(InitMethod::Impulse),
            "default" => Ok(InitMethod::Default),
            "mimetic" => Ok(InitMethod::Mimetic),
            other => Err(Error::Config(format!("unknown init method `{other}`"))),
        }
    }
}

/// Model shape plus every knob of the three initializers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub grid: GridShape,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_head: usize,
    pub filter: usize,
    pub padding: PaddingMode,
    pub scale_mode: ScaleMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pos_std: f64,
    pub ln_eps: f64,
    pub offset_strategy: BankStrategy,
    /// Std of the truncated normal used by the default initializer.
    pub default_std: f64,
    pub mimetic_mu: f64,
    /// Scale of the `N(0, 1/D)` perturbation added to `μI` by the mimetic
    /// comparator.
    pub mimetic_noise: f64,
}

impl Default for InitConfig {
    /// ViT-Tiny on an 8×8 token grid.
    fn default() -> Self {
        Self {
            grid: GridShape { rows: 8, cols: 8 },
            dim: 192,
            heads: 3,
            layers: 12,
            d_head: 64,
            filter: 3,
            padding: PaddingMode::Zero,
            scale_mode: ScaleMode::InvSqrtD,
            alpha: 1.0,
            beta: 1.0 / 40.0,
            gamma: 2.0,
            pos_std: 0.02,
            ln_eps: 1e-6,
            offset_strategy: BankStrategy::CoverageFirst,
            default_std: 0.02,
            mimetic_mu: 0.7,
            mimetic_noise: 0.07,
        }
    }
}

impl InitConfig {
    pub fn tokens(&self) -> usize {
        self.grid.len()
    }

    pub fn hyperparams(&self) -> InitHyperparams {
        InitHyperparams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            filter: self.filter,
            d_head: self.d_head,
            scale_mode: self.scale_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        GridShape::new(self.grid.rows, self.grid.cols)?;
        if self.dim < 2 {
            return Err(Error::Config(format!("embedding dimension must be >= 2, got {}", self.dim)));
        }
        if self.heads == 0 || self.layers == 0 {
            return Err(Error::Config("need at least one layer and one head".into()));
        }
        if self.d_head > self.dim {
            return Err(Error::Config(format!("head dimension {} exceeds D = {}", self.d_head, self.dim)));
        }
        if self.filter > 2 * self.grid.rows.min(self.grid.cols) {
            return Err(Error::Config(format!("filter {} too large for grid {}", self.filter, self.grid)));
        }
        if !(self.pos_std > 0.0 && self.default_std > 0.0 && self.ln_eps >= 0.0) {
            return Err(Error::Config("standard deviations must be positive".into()));
        }
        if !(self.mimetic_mu > 0.0 && self.mimetic_noise >= 0.0) {
            return Err(Error::Config("mimetic mu must be positive and noise non-negative".into()));
        }
        self.hyperparams().validate()?;
        if self.d_head * self.heads != self.dim {
            log::warn!(
                "d_head * heads = {} differs from D = {}",
                self.d_head * self.heads,
                self.dim
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInit {
    pub config: InitConfig,
    pub seed: u64,
    pub method: InitMethod,
    pub pos: PosEncoding,
    /// Layer-major, `layers · heads` entries.
    pub attention: Vec<AttentionInit>,
}

impl ModelInit {
    pub fn head(&self, layer: usize, head: usize) -> Option<&AttentionInit> {
        self.attention.get(layer * self.config.heads + head)
    }

    pub fn pseudo_input(&self) -> Result<EmbeddingMatrix> {
        layer_norm_rows(&self.pos.data, self.config.ln_eps)
    }

    /// Attention map of one head on the pseudo input.
    pub fn attention_map(&self, init: &AttentionInit) -> Result<DMatrix<f64>> {
        synthesize_attention(&self.pseudo_input()?, &init.q, &init.k, self.config.scale_mode)
    }
}

fn base(config: &InitConfig, seed: u64, method: InitMethod) -> Result<ModelInit> {
    config.validate()?;
    let pos = init_pos_encoding(config.tokens(), config.dim, config.pos_std, seed)?;
    Ok(ModelInit {
        config: config.clone(),
        seed,
        method,
        pos,
        attention: Vec::with_capacity(config.layers * config.heads),
    })
}

/// Impulse-structured initialization of every head.
///
/// Each layer draws its heads' offsets from its own stream, so heads of one
/// layer get distinct offsets while `heads ≤ f²` under coverage-first
/// assignment. Every head uses fresh target noise keyed by
/// `(seed, layer, head)`.
pub fn init_vit(config: &InitConfig, seed: u64) -> Result<ModelInit> {
    let mut model = base(config, seed, InitMethod::Impulse)?;
    let pseudo = PseudoInput::from_pos(&model.pos, config.ln_eps)?;
    let hp = config.hyperparams();
    for layer in 0..config.layers {
        let mut offset_rng = rng::stream(seed, rng::Purpose::HeadOffsets, layer, 0);
        let offsets = sample_impulse_offsets(config.heads, config.filter, config.offset_strategy, &mut offset_rng)?;
        for (head, offset) in offsets.into_iter().enumerate() {
            let kernel = Kernel2D::impulse(config.filter, offset)?;
            let h = make_conv_matrix(&kernel, config.grid, config.padding)?;
            let noise = NoiseSpec::new(config.dim, seed).for_head(layer, head);
            model.attention.push(solve_qk_with(&pseudo, &h, &hp, noise)?);
        }
    }
    Ok(model)
}

/// Unstructured baseline: i.i.d. truncated normal queries and keys.
pub fn init_default(config: &InitConfig, seed: u64) -> Result<ModelInit> {
    let mut model = base(config, seed, InitMethod::Default)?;
    let (dim, width, std) = (config.dim, config.d_head, config.default_std);
    for layer in 0..config.layers {
        for head in 0..config.heads {
            let mut rng = rng::stream(seed, rng::Purpose::DefaultWeights, layer, head);
            let mut draw = || {
                let mut m = DMatrix::zeros(dim, width);
                for r in 0..dim {
                    for c in 0..width {
                        m[(r, c)] = rng::truncated_normal(&mut rng, std);
                    }
                }
                m
            };
            let q = draw();
            let k = draw();
            model.attention.push(AttentionInit {
                q,
                k,
                target_offset: None,
                layer,
                head,
            });
        }
    }
    Ok(model)
}

/// Simplified mimetic comparator: `QKᵀ ≈ μI + noise · Z`, `Z ~ N(0, 1/D)`,
/// factored by truncated SVD. Every head receives the same pair.
pub fn init_mimetic(config: &InitConfig, seed: u64, mu: f64) -> Result<ModelInit> {
    let config = InitConfig {
        mimetic_mu: mu,
        ..config.clone()
    };
    let mut model = base(&config, seed, InitMethod::Mimetic)?;
    let dim = config.dim;
    let mut target = DMatrix::identity(dim, dim) * mu;
    if config.mimetic_noise > 0.0 {
        let mut rng = rng::stream(seed, rng::Purpose::MimeticNoise, 0, 0);
        let std = config.mimetic_noise / (dim as f64).sqrt();
        for r in 0..dim {
            for c in 0..dim {
                target[(r, c)] += rng::standard_normal(&mut rng) * std;
            }
        }
    }
    let (q, k) = factor_truncated(&target, config.d_head)?;
    for layer in 0..config.layers {
        for head in 0..config.heads {
            model.attention.push(AttentionInit {
                q: q.clone(),
                k: k.clone(),
                target_offset: None,
                layer,
                head,
            });
        }
    }
    Ok(model)
}

impl ModelInit {
    /// Dispatches on `method`; the mimetic variant uses `config.mimetic_mu`.
    pub fn build(config: &InitConfig, seed: u64, method: InitMethod) -> Result<Self> {
        match method {
            InitMethod::Impulse => init_vit(config, seed),
            InitMethod::Default => init_default(config, seed),
            InitMethod::Mimetic => init_mimetic(config, seed, config.mimetic_mu),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> InitConfig {
        InitConfig {
            grid: GridShape { rows: 4, cols: 4 },
            dim: 24,
            heads: 2,
            layers: 2,
            d_head: 12,
            ..Default::default()
        }
    }

    #[test]
    fn distinct_offsets_within_a_layer() {
        let cfg = InitConfig { heads: 9, d_head: 8, ..small() };
        let model = init_vit(&cfg, 3).unwrap();
        for layer in 0..cfg.layers {
            let mut offs: Vec<_> = (0..9).map(|h| model.head(layer, h).unwrap().target_offset.unwrap()).collect();
            offs.sort();
            offs.dedup();
            assert_eq!(offs.len(), 9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small();
        assert_eq!(init_vit(&cfg, 1).unwrap(), init_vit(&cfg, 1).unwrap());
        assert_ne!(init_vit(&cfg, 1).unwrap().attention, init_vit(&cfg, 2).unwrap().attention);
        assert_eq!(init_default(&cfg, 1).unwrap(), init_default(&cfg, 1).unwrap());
    }

    #[test]
    fn mimetic_exact_without_noise() {
        let cfg = InitConfig {
            d_head: 24,
            mimetic_noise: 0.0,
            ..small()
        };
        let model = init_mimetic(&cfg, 0, 0.5).unwrap();
        let head = &model.attention[0];
        let qk = &head.q * head.k.transpose();
        assert!((qk - DMatrix::identity(24, 24) * 0.5).amax() <= 1e-8);
        assert!(model.attention.iter().all(|a| a.q == head.q && a.k == head.k));
    }

    #[test]
    fn config_errors() {
        assert!(matches!(init_vit(&InitConfig { d_head: 25, ..small() }, 0), Err(Error::Config(_))));
        assert!(matches!(init_vit(&InitConfig { filter: 4, ..small() }, 0), Err(Error::Config(_))));
        assert!(matches!(init_vit(&InitConfig { heads: 0, ..small() }, 0), Err(Error::Config(_))));
    }
}
