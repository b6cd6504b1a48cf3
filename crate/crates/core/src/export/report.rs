use std::io::Write;

use serde::Serialize;

use crate::attention_init::InitMethod;
use crate::error::{Error, Result};
use crate::fidelity::FidelityReport;

/// One CSV line of the fidelity report. Heads without a planted offset leave
/// the target and target-relative columns empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityRow {
    pub layer: usize,
    pub head: usize,
    pub method: InitMethod,
    pub target_dr: Option<i64>,
    pub target_dc: Option<i64>,
    pub detected_dr: i64,
    pub detected_dc: i64,
    pub peak_recovery: Option<f64>,
    pub mean_row_entropy: f64,
    pub frobenius_error: Option<f64>,
    pub detected_flat: i64,
    pub entropy_ratio: f64,
}

impl From<&FidelityReport> for FidelityRow {
    fn from(r: &FidelityReport) -> Self {
        Self {
            layer: r.layer,
            head: r.head,
            method: r.method,
            target_dr: r.target.map(|t| t.dr),
            target_dc: r.target.map(|t| t.dc),
            detected_dr: r.detected.dr,
            detected_dc: r.detected.dc,
            peak_recovery: r.peak_recovery,
            mean_row_entropy: r.mean_row_entropy,
            frobenius_error: r.frobenius_error,
            detected_flat: r.detected_flat,
            entropy_ratio: r.entropy_ratio,
        }
    }
}

pub fn write_fidelity_csv<W: Write>(reports: &[FidelityReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(FidelityRow::from(r))
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
