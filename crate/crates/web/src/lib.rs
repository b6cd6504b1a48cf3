//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exported: an attention map for one head, the matrix
//! form of a small convolution, and the channel-mixing residual as a
//! function of embedding width.

use structattn::attention_init::{
    init_pos_encoding, solve_qk_with, synthesize_attention, InitConfig, InitMethod, ModelInit, NoiseSpec, PseudoInput,
    ScaleMode,
};
use structattn::conv_matrix::{make_conv_matrix, GridShape, ImpulseOffset, Kernel2D, PaddingMode};
use structattn::fidelity::{detect_offset, peak_accuracy, row_entropy};
use structattn::verify::{prop1_cell, BankKind};
use wasm_bindgen::prelude::*;

/// Row-major square matrix with its side length.
#[wasm_bindgen]
pub struct MatrixView {
    size: usize,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl MatrixView {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[wasm_bindgen]
pub struct AttentionView {
    map: MatrixView,
    detected_dr: i32,
    detected_dc: i32,
    /// `NaN` when the head has no planted offset.
    peak_recovery: f64,
    entropy_ratio: f64,
}

#[wasm_bindgen]
impl AttentionView {
    pub fn size(&self) -> usize {
        self.map.size
    }

    pub fn values(&self) -> Vec<f64> {
        self.map.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn detected_dr(&self) -> i32 {
        self.detected_dr
    }

    #[wasm_bindgen(getter)]
    pub fn detected_dc(&self) -> i32 {
        self.detected_dc
    }

    #[wasm_bindgen(getter)]
    pub fn peak_recovery(&self) -> f64 {
        self.peak_recovery
    }

    #[wasm_bindgen(getter)]
    pub fn entropy_ratio(&self) -> f64 {
        self.entropy_ratio
    }
}

#[wasm_bindgen]
pub struct Curve {
    dims: Vec<u32>,
    residuals: Vec<f64>,
}

#[wasm_bindgen]
impl Curve {
    pub fn dims(&self) -> Vec<u32> {
        self.dims.clone()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.residuals.clone()
    }
}

fn flatten(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn offset_3x3(index: usize) -> Result<ImpulseOffset, String> {
    ImpulseOffset::all(3)
        .get(index)
        .copied()
        .ok_or_else(|| format!("offset index {index} out of range 0..9"))
}

fn err(e: structattn::Error) -> String {
    e.to_string()
}

/// One attention head on the default 8×8, `D = 192` model. `offset_index`
/// picks the impulse offset in row-major order over the 3×3 kernel and is
/// ignored by the unstructured methods.
pub fn compute_attention(
    method: &str,
    seed: u64,
    offset_index: usize,
    alpha_over_beta: f64,
    scale_mode: &str,
) -> Result<AttentionView, String> {
    let method: InitMethod = method.parse().map_err(err)?;
    let scale_mode: ScaleMode = scale_mode.parse().map_err(err)?;
    if alpha_over_beta.is_nan() || alpha_over_beta <= 0.0 {
        return Err("alpha/beta must be positive".into());
    }
    let config = InitConfig {
        layers: 1,
        heads: 1,
        scale_mode,
        beta: 1.0 / alpha_over_beta,
        ..Default::default()
    };
    let offset = offset_3x3(offset_index)?;
    let h = make_conv_matrix(&Kernel2D::impulse(3, offset).map_err(err)?, config.grid, config.padding).map_err(err)?;

    let (map, planted) = match method {
        InitMethod::Impulse => {
            let pos = init_pos_encoding(config.tokens(), config.dim, config.pos_std, seed).map_err(err)?;
            let pseudo = PseudoInput::from_pos(&pos, config.ln_eps).map_err(err)?;
            let init = solve_qk_with(&pseudo, &h, &config.hyperparams(), NoiseSpec::new(config.dim, seed)).map_err(err)?;
            let map = synthesize_attention(pseudo.x(), &init.q, &init.k, scale_mode).map_err(err)?;
            (map, true)
        }
        _ => {
            let model = ModelInit::build(&config, seed, method).map_err(err)?;
            (model.attention_map(&model.attention[0]).map_err(err)?, false)
        }
    };
    let detected = detect_offset(&map, config.grid).map_err(err)?;
    let peak_recovery = if planted {
        peak_accuracy(&map, &h).map_err(err)?
    } else {
        f64::NAN
    };
    let entropy_ratio = row_entropy(&map).map_err(err)? / (config.tokens() as f64).ln();
    Ok(AttentionView {
        map: MatrixView {
            size: map.nrows(),
            values: flatten(&map),
        },
        detected_dr: detected.dr as i32,
        detected_dc: detected.dc as i32,
        peak_recovery,
        entropy_ratio,
    })
}

/// Matrix form of a `size × size` kernel on a `side × side` grid.
/// `kernel` is `impulse`, `box` or `random`.
pub fn compute_conv_matrix(
    kernel: &str,
    size: usize,
    offset_dr: i64,
    offset_dc: i64,
    side: usize,
    padding: &str,
    seed: u64,
) -> Result<MatrixView, String> {
    let padding: PaddingMode = padding.parse().map_err(err)?;
    let kernel = match kernel {
        "impulse" => Kernel2D::impulse(size, ImpulseOffset::new(offset_dr, offset_dc)),
        "box" => Kernel2D::box_filter(size),
        "random" => structattn::conv_matrix::sample_random_kernel(size, seed),
        other => return Err(format!("unknown kernel `{other}`")),
    }
    .map_err(err)?;
    let grid = GridShape::new(side, side).map_err(err)?;
    let h = make_conv_matrix(&kernel, grid, padding).map_err(err)?;
    Ok(MatrixView {
        size: grid.len(),
        values: flatten(h.data()),
    })
}

/// Residual of the best channel mix against a random target block for
/// `D = 1..=max_dim` on the 8×8 grid.
pub fn compute_prop1_curve(bank: &str, filter: usize, k: usize, max_dim: usize, seed: u64) -> Result<Curve, String> {
    let kind: BankKind = bank.parse().map_err(err)?;
    let grid = GridShape::new(8, 8).map_err(err)?;
    let mut curve = Curve {
        dims: Vec::with_capacity(max_dim),
        residuals: Vec::with_capacity(max_dim),
    };
    for d in 1..=max_dim {
        let row = prop1_cell(d, k, filter, kind, seed, grid, PaddingMode::Zero).map_err(err)?;
        curve.dims.push(d as u32);
        curve.residuals.push(row.rel_residual);
    }
    Ok(curve)
}

#[wasm_bindgen]
pub fn attention_map(
    method: &str,
    seed: u32,
    offset_index: usize,
    alpha_over_beta: f64,
    scale_mode: &str,
) -> Result<AttentionView, JsError> {
    compute_attention(method, seed.into(), offset_index, alpha_over_beta, scale_mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn conv_matrix(
    kernel: &str,
    size: usize,
    offset_dr: i32,
    offset_dc: i32,
    side: usize,
    padding: &str,
    seed: u32,
) -> Result<MatrixView, JsError> {
    compute_conv_matrix(kernel, size, offset_dr.into(), offset_dc.into(), side, padding, seed.into())
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn prop1_curve(bank: &str, filter: usize, k: usize, max_dim: usize, seed: u32) -> Result<Curve, JsError> {
    compute_prop1_curve(bank, filter, k, max_dim, seed.into()).map_err(|e| JsError::new(&e))
}
