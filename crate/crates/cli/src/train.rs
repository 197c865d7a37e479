use std::fs::{self, File};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use spanet_core::blocks::write_params;
use spanet_core::dataio::{idx_labeled_images, read_cifar10_bin, read_idx, synth_blobs, LabeledImage};
use spanet_core::trainer::{sweep_csv, sweep_k, train, Insertion, TinyCnn, TrainConfig};
use spanet_core::ScaleMode;

use crate::{parse_insert, parse_scale, usage, BlockArg, Ctx};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synth,
    Idx,
    Cifar,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "synth")]
    data: DataSource,
    /// IDX image file or CIFAR-10 batch.
    #[arg(long)]
    path: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Synthetic training samples.
    #[arg(long, default_value_t = 512)]
    samples: usize,
    /// Synthetic held-out samples.
    #[arg(long, default_value_t = 256)]
    eval_samples: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Side of synthetic images.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Held-out share of file datasets.
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
}

#[derive(Args, Debug)]
pub struct HyperArgs {
    #[arg(long, value_enum)]
    block: Option<BlockArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_scale)]
    scale: Option<ScaleMode>,
    #[arg(long, value_parser = parse_insert)]
    insert: Option<Insertion>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    reduction: Option<usize>,
    /// Start from the published recipe (batch 128, lr 0.9).
    #[arg(long)]
    reference_recipe: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Values of k to train.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    ks: Vec<usize>,
}

/// Config file (or built-in defaults) overlaid with explicit flags.
fn resolve_config(ctx: &Ctx, h: &HyperArgs) -> Result<TrainConfig> {
    let mut cfg = match &ctx.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None if h.reference_recipe => TrainConfig::reference(),
        None => TrainConfig::default(),
    };
    if h.reference_recipe && ctx.config.is_some() {
        return Err(usage("--reference-recipe and --config are exclusive"));
    }
    if let Some(b) = h.block {
        cfg.block = b.kind();
    }
    macro_rules! overlay {
        ($($field:ident),*) => { $(if let Some(v) = h.$field { cfg.$field = v; })* };
    }
    overlay!(k, epochs, batch_size, lr_max, lr_min, momentum, weight_decay, reduction);
    if let Some(s) = h.scale {
        cfg.scale_mode = s;
    }
    if let Some(i) = h.insert {
        cfg.insert = i;
    }
    if ctx.seed_given {
        cfg.seed = ctx.seed;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn split(mut all: Vec<LabeledImage>, fraction: f64) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(usage("--eval-fraction must lie in [0, 1)"));
    }
    let held = (all.len() as f64 * fraction).round() as usize;
    let eval = all.split_off(all.len() - held);
    Ok((all, eval))
}

fn load_data(d: &DataArgs, seed: u64) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let need_path = || {
        d.path
            .as_ref()
            .ok_or_else(|| usage("file datasets need --path"))
    };
    let (train_set, eval_set) = match d.data {
        DataSource::Synth => {
            if d.samples == 0 {
                return Err(usage("--samples must be positive"));
            }
            (
                synth_blobs(d.samples, d.classes, d.size, d.size, seed)?,
                synth_blobs(d.eval_samples, d.classes, d.size, d.size, seed.wrapping_add(1))?,
            )
        }
        DataSource::Idx => {
            let p = need_path()?;
            let l = d.labels.as_ref().ok_or_else(|| usage("--data idx needs --labels"))?;
            let images = read_idx(p).with_context(|| format!("reading {}", p.display()))?;
            let labels = read_idx(l).with_context(|| format!("reading {}", l.display()))?;
            split(idx_labeled_images(&images, &labels)?, d.eval_fraction)?
        }
        DataSource::Cifar => {
            let p = need_path()?;
            split(read_cifar10_bin(p).with_context(|| format!("reading {}", p.display()))?, d.eval_fraction)?
        }
    };
    if train_set.is_empty() {
        return Err(usage("training set is empty"));
    }
    Ok((train_set, eval_set))
}

fn classes_of(train_set: &[LabeledImage], eval_set: &[LabeledImage]) -> usize {
    let max = train_set.iter().chain(eval_set).map(|s| s.label).max().unwrap_or(0);
    (max + 1).max(2)
}

pub fn run_train(ctx: &Ctx, args: &TrainArgs) -> Result<u8> {
    let cfg = resolve_config(ctx, &args.hyper)?;
    let (train_set, eval_set) = load_data(&args.data, cfg.seed)?;
    let [c, h, w] = train_set[0].image.shape();
    let mut model = TinyCnn::from_config(&cfg, c, classes_of(&train_set, &eval_set), h, w)?;
    let report = train(&mut model, &train_set, &eval_set, &cfg)?;
    for e in &report.epochs {
        let eval = e.eval_acc.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.5}  train {:.4}  eval {eval}",
            e.epoch, e.lr, e.train_loss, e.train_acc
        );
    }
    ctx.write("train.csv", report.to_csv())?;
    ctx.write("train.json", serde_json::to_string_pretty(&report)?)?;
    if let Some((_, params)) = &model.block {
        let path = ctx.out_dir()?.join("block.spab");
        write_params(params, File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    println!(
        "final train acc {:.4}, eval acc {}, {:.1}s; wrote {}",
        report.final_train_acc,
        report.final_eval_acc.map_or("-".into(), |v| format!("{v:.4}")),
        report.wall_s,
        ctx.out.display()
    );
    Ok(0)
}

pub fn run_sweep(ctx: &Ctx, args: &SweepArgs) -> Result<u8> {
    let mut cfg = resolve_config(ctx, &args.hyper)?;
    match cfg.block {
        None | Some(spanet_core::BlockKind::Spa) => cfg.block = Some(spanet_core::BlockKind::Spa),
        Some(other) => return Err(usage(format!("sweep varies SPA k; --block {other} does not apply"))),
    }
    if args.ks.is_empty() {
        return Err(usage("--ks needs at least one value"));
    }
    let (train_set, eval_set) = load_data(&args.data, cfg.seed)?;
    let rows = sweep_k(&args.ks, &cfg, &train_set, &eval_set)?;
    let csv = sweep_csv(&rows);
    print!("{csv}");
    let path = ctx.write("sweep.csv", &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}
