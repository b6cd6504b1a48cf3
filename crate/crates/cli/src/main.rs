mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use structattn::attention_init::ModelInit;
use structattn::conv_matrix::{GridShape, PaddingMode};
use structattn::export::{read_container, render_attention_pgm, write_container, write_fidelity_csv, DType, Zoom};
use structattn::fidelity::evaluate_model;
use structattn::verify::{self, BankKind, Verdict};
use structattn::Error;

use crate::config::ModelArgs;

/// Exit statuses.
mod exit {
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const VERIFY: u8 = 5;
}

#[derive(Parser)]
#[command(name = "structattn", version, about = "Impulse-structured attention initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize a model and write a SAIW container.
    Init(InitArgs),
    /// Re-synthesize attention maps from a container; write PGMs and a fidelity CSV.
    Inspect(InspectArgs),
    /// Sweep the channel-mixing oracle and write its CSV.
    #[command(name = "verify-prop1")]
    VerifyProp1(Prop1Args),
    /// Check whether a filter bank is M-k spanned.
    #[command(name = "verify-span")]
    VerifySpan(SpanArgs),
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Store tensors as f64 instead of f32.
    #[arg(long)]
    f64: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    container: PathBuf,
    /// Output directory for images and fidelity.csv.
    #[arg(long)]
    out: PathBuf,
    /// Only these layers (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    layer: Vec<usize>,
    /// Only these heads (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    head: Vec<usize>,
    /// Side of the upper-left zoom crop; 0 disables it.
    #[arg(long, default_value_t = 16)]
    zoom: usize,
}

#[derive(Args)]
struct Prop1Args {
    #[arg(long, value_delimiter = ',', default_values_t = [9, 18, 27])]
    dims: Vec<usize>,
    #[arg(long = "ks", value_delimiter = ',', default_values_t = [1, 2])]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [3])]
    filter: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["random".to_string(), "impulse".to_string(), "box".to_string()])]
    kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0])]
    seeds: Vec<u64>,
    #[arg(long, num_args = 2, value_names = ["ROWS", "COLS"], default_values_t = [8, 8])]
    grid: Vec<usize>,
    /// zero | circular
    #[arg(long, default_value = "zero")]
    padding: String,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpanArgs {
    /// random | impulse | box
    #[arg(long)]
    kind: String,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    filter: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Claimed common dimension M; defaults to f².
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => exit::IO,
            Error::Format(_) | Error::Corruption(_) | Error::Validation { .. } => exit::FORMAT,
            Error::Contract(_) => exit::VERIFY,
            _ => exit::CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn csv_sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(fs::File::create(path).map_err(|e| io_failure(path, e))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_init(args: &InitArgs) -> CmdResult {
    let resolved = args.model.resolve()?;
    let model = ModelInit::build(&resolved.config, resolved.seed, resolved.method)?;
    let dtype = if args.f64 { DType::F64 } else { DType::F32 };
    write_container(&model, &args.out, dtype)?;

    let mut stdout = io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{} init, seed {}, {} tensors -> {}",
        model.method,
        model.seed,
        1 + 2 * model.attention.len(),
        args.out.display()
    );
    for a in &model.attention {
        let target = a.target_offset.map_or_else(|| "-".to_string(), |o| o.to_string());
        let _ = writeln!(
            stdout,
            "layer {:>2} head {:>2} target {:>8} |Q|={:.6} |K|={:.6}",
            a.layer,
            a.head,
            target,
            a.q.norm(),
            a.k.norm()
        );
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> CmdResult {
    let model = read_container(&args.container)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let keep = |layer: usize, head: usize| {
        (args.layer.is_empty() || args.layer.contains(&layer)) && (args.head.is_empty() || args.head.contains(&head))
    };
    let reports = evaluate_model(&model, keep)?;

    let x = model.pseudo_input()?;
    let zoom = (args.zoom > 0).then(|| Zoom::corner(args.zoom));
    for init in model.attention.iter().filter(|a| keep(a.layer, a.head)) {
        let map = structattn::attention_init::synthesize_attention(&x, &init.q, &init.k, model.config.scale_mode)?;
        let path = args.out.join(format!("layer{}_head{}.pgm", init.layer, init.head));
        render_attention_pgm(&map, &path, zoom)?;
    }

    let csv_path = args.out.join("fidelity.csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_failure(&csv_path, e))?;
    write_fidelity_csv(&reports, file)?;

    let targeted: Vec<_> = reports.iter().filter(|r| r.target.is_some()).collect();
    let agree = targeted.iter().filter(|r| r.target == Some(r.detected)).count();
    let entropy = reports.iter().map(|r| r.mean_row_entropy).sum::<f64>() / reports.len().max(1) as f64;
    println!(
        "{} heads, {} method; offsets agree {agree}/{}; mean row entropy {entropy:.4} (ln N = {:.4})",
        reports.len(),
        model.method,
        targeted.len(),
        (model.config.tokens() as f64).ln()
    );
    Ok(())
}

fn grid_from(v: &[usize]) -> Result<GridShape, Failure> {
    Ok(GridShape::new(v[0], v[1])?)
}

fn cmd_verify_prop1(args: &Prop1Args) -> CmdResult {
    let kinds = args
        .kinds
        .iter()
        .map(|k| k.parse::<BankKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let padding: PaddingMode = args.padding.parse()?;
    let rows = verify::prop1_sweep(
        &args.dims,
        &args.ks,
        &args.filter,
        &kinds,
        &args.seeds,
        grid_from(&args.grid)?,
        padding,
    )?;
    verify::write_prop1_csv(&rows, csv_sink(&args.out)?)?;

    let failed: Vec<_> = rows.iter().filter(|r| r.verdict() == Verdict::Fail).collect();
    let excluded = rows.iter().filter(|r| r.verdict() == Verdict::Excluded).count();
    eprintln!("{} cells, {} failed, {excluded} outside D >= k f^2", rows.len(), failed.len());
    for r in &failed {
        eprintln!(
            "FAIL D={} k={} f={} {} seed {}: rel_residual {:e}",
            r.d, r.k, r.f, r.bank_kind, r.seed, r.rel_residual
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: exit::VERIFY,
            message: "oracle expectations violated".into(),
        })
    }
}

fn cmd_verify_span(args: &SpanArgs) -> CmdResult {
    let kind: BankKind = args.kind.parse()?;
    let m = args.m.unwrap_or(args.filter * args.filter);
    // banks need a grid even though only the kernels matter here
    let side = 8.max(args.filter.div_ceil(2));
    let grid = GridShape::new(side, side)?;
    let mut rows = Vec::new();
    for &seed in &args.seeds {
        let row = verify::span_cell(kind, args.dim, args.filter, args.k, m, seed, grid)?;
        eprintln!(
            "seed {seed}: {}-{} spanned = {} (group ranks [{}], common dim {}, expected {})",
            m,
            args.k,
            row.satisfied,
            row.subset_ranks,
            row.common_dim,
            row.expected.map_or("n/a".to_string(), |e| e.to_string())
        );
        rows.push(row);
    }
    if args.out.is_some() {
        verify::write_span_csv(&rows, csv_sink(&args.out)?)?;
    }
    if rows.iter().all(|r| r.expected.is_none_or(|e| e == r.satisfied)) {
        Ok(())
    } else {
        Err(Failure {
            code: exit::VERIFY,
            message: "span check disagrees with the expected outcome".into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Init(a) => cmd_init(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::VerifyProp1(a) => cmd_verify_prop1(a),
        Command::VerifySpan(a) => cmd_verify_span(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
