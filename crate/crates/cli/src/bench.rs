use anyhow::Result;
use clap::Args;
use spanet_core::bench::{
    crossover_scan, floor_log2, nl_cost, resnet_stage_configs, scan_csv, spa_cost, time_block, TimingConfig,
    BENCH_CSV_HEADER, DEFAULT_TRIALS,
};
use spanet_core::BlockKind;

use crate::{usage, BlockArg, Ctx};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Print the cost pair at n = 1024, c_i = 64, k = 64.
    #[arg(long)]
    paper_example: bool,
    /// Cost crossover over ResNet-like stage shapes.
    #[arg(long)]
    scan: bool,
    /// Time one block kind instead of both SPA and NL.
    #[arg(long, value_enum)]
    block: Option<BlockArg>,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    inner: usize,
    #[arg(long, default_value_t = 64)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
}

fn power_of_two(v: u128) -> String {
    if v.is_power_of_two() {
        format!("2^{}", floor_log2(v))
    } else {
        v.to_string()
    }
}

fn paper_example() -> Result<()> {
    let (n, ci, k) = (1024, 64, 64);
    let nl = nl_cost(n, ci)?;
    let per_term = nl.term("affinity").expect("nl affinity term");
    println!(
        "nl  n={n} c_i={ci}: per-term n^2*c_i = {per_term} = {} (total {})",
        power_of_two(per_term),
        nl.dominant_multiplies
    );
    let spa = spa_cost(n, ci, k)?;
    let terms: Vec<String> = spa.breakdown.iter().map(|t| power_of_two(t.multiplies)).collect();
    println!(
        "spa n={n} c_i={ci} k={k}: c_i^2*k + n*c_i^2 = {} = {} (floor log2 = {})",
        spa.dominant_multiplies,
        terms.join(" + "),
        floor_log2(spa.dominant_multiplies)
    );
    println!("ratio nl per-term / spa = {:.2}", per_term as f64 / spa.dominant_multiplies as f64);
    Ok(())
}

pub fn run(ctx: &Ctx, args: &BenchArgs) -> Result<u8> {
    if args.paper_example {
        paper_example()?;
    }
    if args.scan {
        let csv = scan_csv(&crossover_scan(&resnet_stage_configs(args.k as u64))?);
        print!("{csv}");
        let path = ctx.write("scan.csv", &csv)?;
        eprintln!("wrote {}", path.display());
    }
    if args.paper_example || args.scan {
        return Ok(0);
    }

    let kinds = match args.block {
        None => vec![BlockKind::Spa, BlockKind::Nl],
        Some(b) => vec![b.kind().ok_or_else(|| usage("cannot time block none"))?],
    };
    let config = TimingConfig {
        channels: args.channels,
        inner_channels: args.inner,
        height: args.height,
        width: args.width,
        k: args.k,
    };
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    println!("{BENCH_CSV_HEADER}");
    for kind in kinds {
        let r = time_block(kind, &config, args.trials, ctx.seed)?;
        println!("{}", r.csv_row());
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let path = ctx.write("bench.csv", &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}
