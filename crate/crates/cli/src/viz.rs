use std::fmt::Write as _;
use std::fs::File;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use spanet_core::blocks::{init_params, read_params};
use spanet_core::dataio::{matrix_csv, write_pgm};
use spanet_core::sps::{select, SelectionResult};
use spanet_core::{BlockKind, BlockParams, BlockSpec, ChannelMatrix, ScaleMode};

use crate::input::{self, InputArgs};
use crate::{parse_scale, usage, BlockArg, Ctx};

#[derive(Args, Debug)]
pub struct VizArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Attention block to inspect (spa or nl).
    #[arg(long, value_enum, default_value = "nl")]
    block: BlockArg,
    /// Block weights written by `train`; seeded init otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Channel width the input is lifted to (seeded init only).
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<ScaleMode>,
    /// Query positions (row-major index) to render for NL; defaults to the centre.
    #[arg(long, value_delimiter = ',')]
    query: Vec<usize>,
    /// Nearest-neighbour upscale factor of the PGM images.
    #[arg(long, default_value_t = 4)]
    upscale: usize,
}

/// `position,row,col,score,selected` for every position.
pub fn saliency_csv(sel: &SelectionResult, width: usize) -> String {
    let mut out = String::from("position,row,col,score,selected\n");
    let selected = sel.is_selected();
    for (p, s) in sel.scores.iter().enumerate() {
        writeln!(
            out,
            "{p},{},{},{s},{}",
            p / width,
            p % width,
            u8::from(selected[p])
        )
        .expect("write to String");
    }
    out
}

fn block_params(ctx: &Ctx, args: &VizArgs) -> Result<BlockParams> {
    if let Some(p) = &args.params {
        let params = read_params(File::open(p).with_context(|| format!("opening {}", p.display()))?)
            .with_context(|| format!("reading {}", p.display()))?;
        if !matches!(params.kind(), BlockKind::Spa | BlockKind::Nl) {
            return Err(usage(format!("{} has a {} block; viz needs spa or nl", p.display(), params.kind())));
        }
        return Ok(params);
    }
    let kind = match args.block {
        BlockArg::Spa => BlockKind::Spa,
        BlockArg::Nl => BlockKind::Nl,
        other => return Err(usage(format!("viz needs --block spa or nl, got {other:?}").to_lowercase())),
    };
    let mut spec = BlockSpec::new(kind, args.channels, args.k)
        .with_inner(args.inner.unwrap_or((args.channels / 2).max(1)));
    if let Some(s) = args.scale {
        spec = spec.with_scale(s);
    }
    Ok(init_params(&spec, ctx.seed)?)
}

struct Emitter<'a> {
    ctx: &'a Ctx,
    upscale: usize,
    written: Vec<PathBuf>,
}

impl Emitter<'_> {
    fn map(&mut self, stem: &str, m: &ChannelMatrix) -> Result<()> {
        let csv = self.ctx.write(&format!("{stem}.csv"), matrix_csv(m))?;
        let pgm = self.ctx.out_dir()?.join(format!("{stem}.pgm"));
        write_pgm(m, &pgm, self.upscale).with_context(|| format!("writing {}", pgm.display()))?;
        self.written.extend([pgm, csv]);
        Ok(())
    }
}

pub fn run(ctx: &Ctx, args: &VizArgs) -> Result<u8> {
    if args.upscale == 0 {
        return Err(usage("--upscale must be positive"));
    }
    let params = block_params(ctx, args)?;
    let x = input::load(&args.input, params.channels(), ctx.seed)?;
    let (h, w, n) = (x.height(), x.width(), x.positions());
    if let Some(&q) = args.query.iter().find(|&&q| q >= n) {
        return Err(usage(format!("query position {q} out of range for {n} positions")));
    }
    let (_, rec) = params.forward_introspect(&x)?;
    let mut emit = Emitter {
        ctx,
        upscale: args.upscale,
        written: Vec::new(),
    };
    emit.map("affinity", &rec.affinity.matrix)?;

    let sel = match &rec.selection {
        Some(s) => s.clone(),
        None => select(&rec.q, n)?,
    };
    emit.written.push(ctx.write("saliency.csv", saliency_csv(&sel, w))?);
    let heat = ChannelMatrix::new(h, w, sel.scores.clone())?;
    emit.map("saliency_map", &heat)?;

    if params.kind() == BlockKind::Nl {
        let a = &rec.affinity.matrix;
        let queries = if args.query.is_empty() {
            vec![(h / 2) * w + w / 2]
        } else {
            args.query.clone()
        };
        for q in queries {
            let map = ChannelMatrix::new(h, w, a.row(q).to_vec())?;
            emit.map(&format!("query_{q}"), &map)?;
        }
        let mean: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| a.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        emit.map("mean_attention", &ChannelMatrix::new(h, w, mean)?)?;
    } else if !args.query.is_empty() {
        eprintln!("note: spa affinity is channel-wise; --query has no spatial map to render");
    }

    println!(
        "{} block, input {}x{}x{}, affinity {}x{}, stochastic error {:.2e}",
        params.kind(),
        x.channels(),
        h,
        w,
        rec.affinity.matrix.rows(),
        rec.affinity.matrix.cols(),
        rec.affinity.stochastic_error()
    );
    for p in &emit.written {
        println!("wrote {}", p.display());
    }
    Ok(0)
}
