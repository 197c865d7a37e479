use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use spanet_core::dataio::{read_cifar10_bin, read_feature_map, read_idx, synth_blobs};
use spanet_core::tensor::conv1x1_apply;
use spanet_core::{ChannelMatrix, Conv1x1, FeatureMap, Rng};

use crate::usage;

const LIFT_SALT: u64 = 0x11F7;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// One seeded synthetic blob image.
    Synth,
    /// A spatially constant image.
    Constant,
    /// One image of an IDX `[N, h, w]` file.
    Idx,
    /// One record of a CIFAR-10 binary batch.
    Cifar,
    /// A raw `FMAP` feature-map file, used as is.
    Raw,
}

#[derive(Args, Debug)]
pub struct InputArgs {
    #[arg(long, value_enum, default_value = "synth")]
    pub input: Source,
    /// File for idx, cifar and raw inputs.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Sample index within the file or synthetic set.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Side length of synthetic and constant inputs.
    #[arg(long, default_value_t = 14)]
    pub size: usize,
    /// Pixel value of the constant input.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
}

fn path(args: &InputArgs) -> Result<&PathBuf> {
    args.path
        .as_ref()
        .ok_or_else(|| usage(format!("--input {:?} needs --path", args.input).to_lowercase()))
}

fn pick<T>(mut items: Vec<T>, index: usize) -> Result<T> {
    if index >= items.len() {
        return Err(usage(format!("--index {index} out of range for {} samples", items.len())));
    }
    Ok(items.swap_remove(index))
}

/// The raw image, before any channel lift.
pub fn load_image(args: &InputArgs, seed: u64) -> Result<FeatureMap> {
    if matches!(args.input, Source::Synth | Source::Constant) && args.size == 0 {
        return Err(usage("--size must be positive"));
    }
    Ok(match args.input {
        Source::Synth => pick(synth_blobs(args.index + 1, 2, args.size, args.size, seed)?, args.index)?.image,
        Source::Constant => {
            if !args.value.is_finite() {
                return Err(usage("--value must be finite"));
            }
            FeatureMap::new(1, args.size, args.size, vec![args.value; args.size * args.size])?
        }
        Source::Idx => {
            let p = path(args)?;
            let t = read_idx(p).with_context(|| format!("reading {}", p.display()))?;
            let [n, h, w] = t.dims[..] else {
                return Err(usage(format!("{} is not an [N, h, w] image file", p.display())));
            };
            if args.index >= n {
                return Err(usage(format!("--index {} out of range for {n} images", args.index)));
            }
            let plane = &t.data[args.index * h * w..(args.index + 1) * h * w];
            FeatureMap::new(1, h, w, plane.iter().map(|&b| f64::from(b) / 255.0).collect())?
        }
        Source::Cifar => {
            let p = path(args)?;
            pick(read_cifar10_bin(p).with_context(|| format!("reading {}", p.display()))?, args.index)?.image
        }
        Source::Raw => {
            let p = path(args)?;
            read_feature_map(p).with_context(|| format!("reading {}", p.display()))?
        }
    })
}

/// Maps `x` to `channels` channels with a seeded bias-free 1x1 projection.
/// Inputs that already have the width pass through unchanged.
pub fn lift(x: FeatureMap, channels: usize, seed: u64) -> Result<FeatureMap> {
    if channels == 0 {
        return Err(usage("--channels must be positive"));
    }
    if x.channels() == channels {
        return Ok(x);
    }
    let mut rng = Rng::new(seed ^ LIFT_SALT);
    let std = 1.0 / (x.channels() as f64).sqrt();
    let weight = ChannelMatrix::new(
        channels,
        x.channels(),
        (0..channels * x.channels()).map(|_| std * rng.normal()).collect(),
    )?;
    Ok(conv1x1_apply(&Conv1x1::new(weight, vec![0.0; channels])?, &x)?)
}

pub fn load(args: &InputArgs, channels: usize, seed: u64) -> Result<FeatureMap> {
    lift(load_image(args, seed)?, channels, seed)
}
