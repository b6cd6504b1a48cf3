//! How closely an attention map realizes its impulse target.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::attention_init::{AttentionInit, InitMethod, ModelInit};
use crate::conv_matrix::{impulse_targets, make_conv_matrix, ConvMatrix, GridShape, ImpulseOffset, Kernel2D};
use crate::error::{Error, Result};

/// Row-stochasticity tolerance for [`row_entropy`].
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub layer: usize,
    pub head: usize,
    pub method: InitMethod,
    pub target: Option<ImpulseOffset>,
    pub detected: ImpulseOffset,
    /// `detected` as an offset between flattened token indices.
    pub detected_flat: i64,
    /// `None` for heads without an impulse target.
    pub peak_recovery: Option<f64>,
    pub mean_row_entropy: f64,
    /// `mean_row_entropy / ln N`.
    pub entropy_ratio: f64,
    pub frobenius_error: Option<f64>,
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in row.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "attention map is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Fraction of rows with a target whose argmax lands on it. Rows left empty
/// by zero padding are skipped.
pub fn peak_accuracy(m: &DMatrix<f64>, h: &ConvMatrix) -> Result<f64> {
    check_square(m, h.grid().len())?;
    let targets = impulse_targets(h.data())?;
    let (mut hits, mut rows) = (0usize, 0usize);
    for (i, target) in targets.iter().enumerate() {
        if let Some(t) = target {
            rows += 1;
            hits += usize::from(argmax(m.row(i).iter().copied()) == *t);
        }
    }
    if rows == 0 {
        return Err(Error::Contract("impulse matrix has no interior rows".into()));
    }
    Ok(hits as f64 / rows as f64)
}

/// Grid displacement whose shifted diagonal carries the most attention mass.
///
/// Displacement `(dr, dc)` collects `M[(r, c), (r + dr, c + dc)]` over all
/// positions where the shifted token stays on the grid. Ties go to the
/// smallest `|dr| + |dc|`, then to row-major order.
pub fn detect_offset(m: &DMatrix<f64>, grid: GridShape) -> Result<ImpulseOffset> {
    check_square(m, grid.len())?;
    let (rows, cols) = (grid.rows as i64, grid.cols as i64);
    let mut best: Option<(f64, ImpulseOffset)> = None;
    for dr in -(rows - 1)..rows {
        for dc in -(cols - 1)..cols {
            let mut mass = 0.0;
            for r in 0.max(-dr)..rows.min(rows - dr) {
                for c in 0.max(-dc)..cols.min(cols - dc) {
                    let i = grid.index(r as usize, c as usize);
                    let j = grid.index((r + dr) as usize, (c + dc) as usize);
                    mass += m[(i, j)];
                }
            }
            let cand = ImpulseOffset::new(dr, dc);
            let better = match best {
                None => true,
                Some((bm, bo)) => mass > bm || (mass == bm && bo.dr.abs() + bo.dc.abs() > dr.abs() + dc.abs()),
            };
            if better {
                best = Some((mass, cand));
            }
        }
    }
    Ok(best.map(|(_, o)| o).unwrap_or(ImpulseOffset::CENTER))
}

/// Mean Shannon entropy (nats) of the rows of a row-stochastic matrix.
pub fn row_entropy(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Err(Error::Contract("empty attention map".into()));
    }
    let mut total = 0.0;
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().any(|&p| p.is_nan() || p < 0.0) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Contract(format!("row {i} is not a probability distribution")));
        }
        total -= row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    }
    Ok(total / m.nrows() as f64)
}

/// `‖(M − H)_I‖_F / ‖H_I‖_F` over the interior rows `I` of `H`.
pub fn map_error(m: &DMatrix<f64>, h: &ConvMatrix) -> Result<f64> {
    check_square(m, h.grid().len())?;
    let rows = h.interior_rows();
    if rows.is_empty() {
        return Err(Error::Contract("target has no interior rows".into()));
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for &i in &rows {
        diff += (m.row(i) - h.data().row(i)).norm_squared();
        norm += h.data().row(i).norm_squared();
    }
    Ok((diff / norm).sqrt())
}

/// Scores one head of `model` against its planted offset, if any.
pub fn evaluate_head(model: &ModelInit, init: &AttentionInit) -> Result<FidelityReport> {
    let map = model.attention_map(init)?;
    report_for_map(&map, model, init)
}

pub(crate) fn report_for_map(map: &DMatrix<f64>, model: &ModelInit, init: &AttentionInit) -> Result<FidelityReport> {
    let grid = model.config.grid;
    let detected = detect_offset(map, grid)?;
    let mean_row_entropy = row_entropy(map)?;
    let (peak_recovery, frobenius_error) = match init.target_offset {
        Some(offset) => {
            let kernel = Kernel2D::impulse(model.config.filter, offset)?;
            let h = make_conv_matrix(&kernel, grid, model.config.padding)?;
            (Some(peak_accuracy(map, &h)?), Some(map_error(map, &h)?))
        }
        None => (None, None),
    };
    Ok(FidelityReport {
        layer: init.layer,
        head: init.head,
        method: model.method,
        target: init.target_offset,
        detected,
        detected_flat: detected.flattened(grid),
        peak_recovery,
        mean_row_entropy,
        entropy_ratio: mean_row_entropy / (grid.len() as f64).ln(),
        frobenius_error,
    })
}

/// Reports for every head accepted by `select(layer, head)`, sorted by
/// layer then head.
pub fn evaluate_model(model: &ModelInit, mut select: impl FnMut(usize, usize) -> bool) -> Result<Vec<FidelityReport>> {
    let x = model.pseudo_input()?;
    let mut out = Vec::new();
    for init in &model.attention {
        if !select(init.layer, init.head) {
            continue;
        }
        let map = crate::attention_init::synthesize_attention(&x, &init.q, &init.k, model.config.scale_mode)?;
        out.push(report_for_map(&map, model, init)?);
    }
    out.sort_by_key(|r| (r.layer, r.head));
    Ok(out)
}
