//! `spanet`: selection inspection, gradient checks, cost and timing
//! benchmarks, training, k sweeps and attention-map rendering.

mod bench;
mod input;
mod train;
mod viz;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spanet_core::grad::{gradcheck, GradCheckConfig};
use spanet_core::trainer::Insertion;
use spanet_core::{BlockKind, ScaleMode};

#[derive(Parser, Debug)]
#[command(name = "spanet", version, about, arg_required_else_help = true)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for all written files.
    #[arg(long, global = true, default_value = "spanet-out")]
    out: PathBuf,

    /// JSON training config; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score positions of one input and show the selected top-k.
    Sps(SpsArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Cost model, crossover scan and wall-time measurement.
    Bench(bench::BenchArgs),
    /// Train the small CNN, optionally with one attention block.
    Train(train::TrainArgs),
    /// Train one SPA model per k.
    Sweep(train::SweepArgs),
    /// Write affinity matrices and attention maps as PGM and CSV.
    Viz(viz::VizArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockArg {
    Spa,
    Nl,
    Se,
    Gc,
    None,
}

impl BlockArg {
    pub fn kind(self) -> Option<BlockKind> {
        match self {
            BlockArg::Spa => Some(BlockKind::Spa),
            BlockArg::Nl => Some(BlockKind::Nl),
            BlockArg::Se => Some(BlockKind::Se),
            BlockArg::Gc => Some(BlockKind::Gc),
            BlockArg::None => None,
        }
    }
}

pub fn parse_scale(s: &str) -> Result<ScaleMode, String> {
    s.parse().map_err(|e: spanet_core::Error| e.to_string())
}

pub fn parse_insert(s: &str) -> Result<Insertion, String> {
    s.parse().map_err(|e: spanet_core::Error| e.to_string())
}

/// Bad flag values detected after parsing. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Shared invocation context.
pub struct Ctx {
    pub seed: u64,
    pub seed_given: bool,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
}

impl Ctx {
    pub fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[derive(Args, Debug)]
struct SpsArgs {
    #[command(flatten)]
    input: input::InputArgs,
    /// Channel width the input is lifted to.
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Query width; defaults to half the channels.
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long, default_value_t = 8)]
    k: usize,
}

fn run_sps(ctx: &Ctx, args: &SpsArgs) -> Result<u8> {
    let x = input::load(&args.input, args.channels, ctx.seed)?;
    let inner = args.inner.unwrap_or((args.channels / 2).max(1));
    let spec = spanet_core::BlockSpec::new(BlockKind::Spa, args.channels, args.k).with_inner(inner);
    let params = spanet_core::blocks::init_params(&spec, ctx.seed)?;
    let spanet_core::BlockParams::Spa(p) = &params else {
        unreachable!("spec asked for SPA")
    };
    let q = p.theta.apply_matrix(&x.flatten())?;
    let sel = spanet_core::sps::select(&q, args.k)?;
    println!("n = {}, k = {}", x.positions(), sel.k());
    println!("rank,position,row,col,score");
    for (rank, &i) in sel.indices.iter().enumerate() {
        println!("{rank},{i},{},{},{}", i / x.width(), i % x.width(), sel.scores[i]);
    }
    match sel.boundary_gap() {
        Some(gap) => println!("boundary gap {gap:.6e}"),
        None => println!("boundary gap n/a (k = n)"),
    }
    let path = ctx.write("saliency.csv", viz::saliency_csv(&sel, x.width()))?;
    println!("wrote {}", path.display());
    Ok(0)
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Block to check.
    #[arg(long, value_enum, default_value = "spa")]
    block: BlockArg,
    /// Check every block kind.
    #[arg(long)]
    all: bool,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<ScaleMode>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn run_gradcheck(ctx: &Ctx, args: &GradcheckArgs) -> Result<u8> {
    let kinds: Vec<BlockKind> = if args.all {
        BlockKind::ALL.to_vec()
    } else {
        vec![args
            .block
            .kind()
            .ok_or_else(|| usage("gradcheck needs a block kind other than none"))?]
    };
    if args.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let mut cfg = GradCheckConfig::small();
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(s) = args.scale {
        cfg.scale_mode = s;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = t;
    }
    println!(
        "c = {}, c_i = {}, {}x{}, k = {}, tolerance {:.0e}",
        cfg.channels, cfg.inner_channels, cfg.height, cfg.width, cfg.k, cfg.tolerance
    );
    let mut worst = 0.0f64;
    let mut pass = true;
    for kind in kinds {
        for seed in ctx.seed..ctx.seed + args.seeds {
            let report = gradcheck(kind, &cfg, seed)?;
            println!(
                "# {kind} seed {seed} (effective {}, {} resamples, eps {})",
                report.effective_seed, report.resamples, report.epsilon
            );
            print!("{report}");
            worst = worst.max(report.max_rel_err());
            pass &= report.pass;
        }
    }
    println!(
        "gradcheck: {} (max rel err {worst:.3e})",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<spanet_core::Error>() {
        Some(spanet_core::Error::Argument(_) | spanet_core::Error::Parse { .. } | spanet_core::Error::Shape(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        seed_given: cli.seed.is_some(),
        out: cli.out,
        config: cli.config,
    };
    let result = match &cli.command {
        Command::Sps(a) => run_sps(&ctx, a),
        Command::Gradcheck(a) => run_gradcheck(&ctx, a),
        Command::Bench(a) => bench::run(&ctx, a),
        Command::Train(a) => train::run_train(&ctx, a),
        Command::Sweep(a) => train::run_sweep(&ctx, a),
        Command::Viz(a) => viz::run(&ctx, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
