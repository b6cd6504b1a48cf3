//! Seeded sweeps over the channel-mixing oracle and the spanned-set check,
//! with the pass rules the theory predicts.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::conv_matrix::{sample_impulse_bank, BankStrategy, GridShape, Kernel2D, PaddingMode};
use crate::error::{Error, Result};
use crate::rng;
use crate::spanned_set::{check_spanned, low_rank_embedding, prop1_oracle, ChannelMixWeights, FilterBank};

/// Residual at or below which a fit counts as exact.
pub const EXACT_RESIDUAL: f64 = 1e-6;
/// Residual above which a box bank counts as having failed.
pub const BOX_RESIDUAL_FLOOR: f64 = 1e-3;
/// Relative rank tolerance for span checks.
pub const SPAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BankKind {
    Random,
    Impulse,
    Box,
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BankKind::Random => "random",
            BankKind::Impulse => "impulse",
            BankKind::Box => "box",
        })
    }
}

impl FromStr for BankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BankKind::Random),
            "impulse" => Ok(BankKind::Impulse),
            "box" => Ok(BankKind::Box),
            other => Err(Error::Config(format!("unknown bank kind `{other}`"))),
        }
    }
}

/// Bank of `count` filters. Impulse banks use coverage-first offsets;
/// `role` separates the random streams of banks built from the same seed.
pub fn build_bank(
    kind: BankKind,
    count: usize,
    size: usize,
    grid: GridShape,
    padding: PaddingMode,
    seed: u64,
    role: usize,
) -> Result<FilterBank> {
    let filters = match kind {
        BankKind::Random => (0..count)
            .map(|i| Kernel2D::random(size, &mut rng::stream(seed, rng::Purpose::Kernel, role + 2, i)))
            .collect::<Result<Vec<_>>>()?,
        BankKind::Impulse => sample_impulse_bank(count, size, seed ^ role as u64, BankStrategy::CoverageFirst)?,
        BankKind::Box => vec![Kernel2D::box_filter(size)?; count],
    };
    FilterBank::new(filters, grid, padding)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Row {
    #[serde(rename = "D")]
    pub d: usize,
    pub k: usize,
    pub f: usize,
    pub bank_kind: BankKind,
    pub rel_residual: f64,
    /// Whether the fixed bank is `f²–k` spanned.
    pub satisfied: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Outside the hypothesis `D ≥ k f²`; reported only.
    Excluded,
}

impl Prop1Row {
    pub fn in_hypothesis(&self) -> bool {
        self.d >= self.k * self.f * self.f
    }

    pub fn verdict(&self) -> Verdict {
        match self.bank_kind {
            BankKind::Box if self.rel_residual > BOX_RESIDUAL_FLOOR => Verdict::Pass,
            BankKind::Box => Verdict::Fail,
            _ if !self.in_hypothesis() => Verdict::Excluded,
            _ if self.rel_residual <= EXACT_RESIDUAL => Verdict::Pass,
            _ => Verdict::Fail,
        }
    }
}

/// One oracle run: rank-`k` input on `grid` with `d` channels, fixed bank of
/// `kind`, random target bank and random target channel mix.
pub fn prop1_cell(
    d: usize,
    k: usize,
    f: usize,
    kind: BankKind,
    seed: u64,
    grid: GridShape,
    padding: PaddingMode,
) -> Result<Prop1Row> {
    if d == 0 || k == 0 {
        return Err(Error::Config("D and k must be positive".into()));
    }
    let x = low_rank_embedding(grid.len(), d, k, seed);
    let fixed = build_bank(kind, d, f, grid, padding, seed, 0)?;
    let target = build_bank(BankKind::Random, d, f, grid, padding, seed, 1)?;
    let mut rng = rng::stream(seed, rng::Purpose::Sweep, 1, 0);
    let target_w = ChannelMixWeights(DMatrix::from_fn(d, d, |_, _| rng::standard_normal(&mut rng)));
    let fit = prop1_oracle(&x, &fixed, &target, &target_w)?;
    let satisfied = d >= k && check_spanned(&fixed, f * f, k, seed, SPAN_TOLERANCE)?.satisfied;
    Ok(Prop1Row {
        d,
        k,
        f,
        bank_kind: kind,
        rel_residual: fit.rel_residual,
        satisfied,
        seed,
    })
}

/// Every combination, sorted by `(D, k, f, bank_kind, seed)`.
pub fn prop1_sweep(
    ds: &[usize],
    ks: &[usize],
    fs: &[usize],
    kinds: &[BankKind],
    seeds: &[u64],
    grid: GridShape,
    padding: PaddingMode,
) -> Result<Vec<Prop1Row>> {
    let mut rows = Vec::new();
    for &d in ds {
        for &k in ks {
            for &f in fs {
                for &kind in kinds {
                    for &seed in seeds {
                        rows.push(prop1_cell(d, k, f, kind, seed, grid, padding)?);
                    }
                }
            }
        }
    }
    rows.sort_by_key(|r| (r.d, r.k, r.f, r.bank_kind, r.seed));
    Ok(rows)
}

pub fn write_prop1_csv<W: Write>(rows: &[Prop1Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanRow {
    pub bank_kind: BankKind,
    #[serde(rename = "D")]
    pub d: usize,
    pub f: usize,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub satisfied: bool,
    pub subset_ranks: String,
    pub common_dim: usize,
    /// What the theory predicts, when it predicts anything.
    pub expected: Option<bool>,
}

/// Predicted outcome of [`check_spanned`] for a bank of `kind`.
///
/// Box filters share one direction, so they are `M–k` spanned only for
/// `M ≤ 1`. Generic random filters fill balanced groups, each of rank
/// `min(size, f²)`, and generic subspaces meet in dimension
/// `f² − Σ(f² − rank)`. Coverage-first impulses give every group all `f²`
/// offsets once `D ≥ k f²`.
pub fn expected_span(kind: BankKind, d: usize, f: usize, k: usize, m: usize) -> Option<bool> {
    let dim = f * f;
    match kind {
        BankKind::Box => Some(m <= 1 && d >= k),
        BankKind::Random => {
            let deficit: usize = (0..k)
                .map(|g| {
                    let size = d / k + usize::from(g < d % k);
                    dim - size.min(dim)
                })
                .sum();
            Some(dim.saturating_sub(deficit) >= m)
        }
        BankKind::Impulse if d >= k * dim => Some(true),
        BankKind::Impulse if m == dim => Some(false),
        BankKind::Impulse => None,
    }
}

pub fn span_cell(
    kind: BankKind,
    d: usize,
    f: usize,
    k: usize,
    m: usize,
    seed: u64,
    grid: GridShape,
) -> Result<SpanRow> {
    let bank = build_bank(kind, d, f, grid, PaddingMode::Zero, seed, 0)?;
    let report = check_spanned(&bank, m, k, seed, SPAN_TOLERANCE)?;
    Ok(SpanRow {
        bank_kind: kind,
        d,
        f,
        k,
        m,
        seed,
        satisfied: report.satisfied,
        subset_ranks: report
            .subset_ranks
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" "),
        common_dim: report.common_dim,
        expected: expected_span(kind, d, f, k, m),
    })
}

pub fn write_span_csv<W: Write>(rows: &[SpanRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
