//! Multiply-count cost models and wall-time measurement of block forwards.
//!
//! Costs count only the two dominant products of each attention block: for
//! SPA the `c_i x c_i` Gram over `k` keys and the aggregation over `n`
//! positions; for NL the `n x n` affinity and its aggregation. The 1x1
//! transforms are reported separately by [`transform_multiplies`].

use std::fmt::Write as _;
use std::time::Instant;

use crate::blocks::{random_params, BlockKind, BlockSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTerm {
    pub name: &'static str,
    pub multiplies: u128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostModel {
    pub n: u64,
    pub inner_channels: u64,
    /// Zero for NL.
    pub k: u64,
    pub dominant_multiplies: u128,
    pub breakdown: Vec<CostTerm>,
}

impl CostModel {
    fn from_terms(n: u64, inner_channels: u64, k: u64, breakdown: Vec<CostTerm>) -> Self {
        let dominant_multiplies = breakdown.iter().map(|t| t.multiplies).sum();
        Self {
            n,
            inner_channels,
            k,
            dominant_multiplies,
            breakdown,
        }
    }

    pub fn term(&self, name: &str) -> Option<u128> {
        self.breakdown.iter().find(|t| t.name == name).map(|t| t.multiplies)
    }
}

/// `floor(log2(v))` for `v > 0`.
pub fn floor_log2(v: u128) -> u32 {
    assert!(v > 0);
    127 - v.leading_zeros()
}

fn positive(name: &str, v: u64) -> Result<u128> {
    if v == 0 {
        Err(Error::argument(format!("{name} must be positive")))
    } else {
        Ok(u128::from(v))
    }
}

/// `c_i^2 k` (Gram of the selected keys) plus `n c_i^2` (aggregation).
pub fn spa_cost(n: u64, inner_channels: u64, k: u64) -> Result<CostModel> {
    let (nn, ci, kk) = (positive("n", n)?, positive("c_i", inner_channels)?, positive("k", k)?);
    Ok(CostModel::from_terms(
        n,
        inner_channels,
        k,
        vec![
            CostTerm {
                name: "affinity",
                multiplies: ci * ci * kk,
            },
            CostTerm {
                name: "aggregation",
                multiplies: nn * ci * ci,
            },
        ],
    ))
}

/// `n^2 c_i` for the affinity and again for the aggregation.
pub fn nl_cost(n: u64, inner_channels: u64) -> Result<CostModel> {
    let (nn, ci) = (positive("n", n)?, positive("c_i", inner_channels)?);
    Ok(CostModel::from_terms(
        n,
        inner_channels,
        0,
        vec![
            CostTerm {
                name: "affinity",
                multiplies: nn * nn * ci,
            },
            CostTerm {
                name: "aggregation",
                multiplies: nn * nn * ci,
            },
        ],
    ))
}

/// Multiplies spent in the 1x1 transforms: SPA has two input transforms
/// (theta, g), NL three (theta, phi, g); both have one output transform.
pub fn transform_multiplies(kind: BlockKind, n: u64, channels: u64, inner_channels: u64) -> u128 {
    let one = u128::from(n) * u128::from(channels) * u128::from(inner_channels);
    match kind {
        BlockKind::Spa => 3 * one,
        BlockKind::Nl => 4 * one,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    pub n: u64,
    pub channels: u64,
    pub inner_channels: u64,
    pub k: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRow {
    pub config: ScanConfig,
    pub spa_cost: u128,
    pub nl_cost: u128,
    pub spa_wins: bool,
    pub spa_with_transforms: u128,
    pub nl_with_transforms: u128,
    pub spa_wins_with_transforms: bool,
}

pub fn crossover_scan(configs: &[ScanConfig]) -> Result<Vec<ScanRow>> {
    if configs.is_empty() {
        return Err(Error::argument("crossover scan needs at least one config"));
    }
    configs
        .iter()
        .map(|&config| {
            let spa = spa_cost(config.n, config.inner_channels, config.k)?.dominant_multiplies;
            let nl = nl_cost(config.n, config.inner_channels)?.dominant_multiplies;
            let spa_t = spa
                + transform_multiplies(BlockKind::Spa, config.n, config.channels, config.inner_channels);
            let nl_t = nl
                + transform_multiplies(BlockKind::Nl, config.n, config.channels, config.inner_channels);
            Ok(ScanRow {
                config,
                spa_cost: spa,
                nl_cost: nl,
                spa_wins: spa < nl,
                spa_with_transforms: spa_t,
                nl_with_transforms: nl_t,
                spa_wins_with_transforms: spa_t < nl_t,
            })
        })
        .collect()
}

pub const SCAN_CSV_HEADER: &str =
    "n,c,c_inner,k,spa_cost,nl_cost,spa_wins,spa_with_transforms,nl_with_transforms,spa_wins_with_transforms";

pub fn scan_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from(SCAN_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let c = r.config;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.n,
            c.channels,
            c.inner_channels,
            c.k,
            r.spa_cost,
            r.nl_cost,
            r.spa_wins,
            r.spa_with_transforms,
            r.nl_with_transforms,
            r.spa_wins_with_transforms
        )
        .expect("write to String");
    }
    out
}

/// ResNet-style stage shapes for a 32x32 input with 64 base channels.
pub fn resnet_stage_configs(k: u64) -> Vec<ScanConfig> {
    [(1024u64, 64u64), (256, 128), (64, 256), (16, 512)]
        .into_iter()
        .map(|(n, c)| ScanConfig {
            n,
            channels: c,
            inner_channels: c / 2,
            k: k.min(n),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingConfig {
    pub channels: usize,
    pub inner_channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
}

impl TimingConfig {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub kind: BlockKind,
    pub config: TimingConfig,
    pub trials: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// `None` for SE/GC, which have no cost model.
    pub dominant_multiplies: Option<u128>,
}

pub const WARMUP_RUNS: usize = 3;
pub const DEFAULT_TRIALS: usize = 50;
pub const MIN_TRIALS: usize = 10;

pub const BENCH_CSV_HEADER: &str = "block,n,c,c_inner,k,dominant_multiplies,median_s,min_s,max_s";

impl BenchResult {
    pub fn csv_row(&self) -> String {
        let c = self.config;
        format!(
            "{},{},{},{},{},{},{:.9},{:.9},{:.9}",
            self.kind,
            c.positions(),
            c.channels,
            c.inner_channels,
            if self.kind == BlockKind::Spa { c.k } else { 0 },
            self.dominant_multiplies.map_or(String::new(), |v| v.to_string()),
            self.median_s,
            self.min_s,
            self.max_s
        )
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times sequential forward passes on a seeded random input, after
/// [`WARMUP_RUNS`] discarded runs.
pub fn time_block(kind: BlockKind, config: &TimingConfig, trials: usize, seed: u64) -> Result<BenchResult> {
    if trials < MIN_TRIALS {
        return Err(Error::argument(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let spec = BlockSpec::new(kind, config.channels, config.k).with_inner(config.inner_channels);
    let params = random_params(&spec, seed)?;
    let mut rng = Rng::new(seed.wrapping_add(1));
    let n = config.channels * config.positions();
    let x = FeatureMap::new(
        config.channels,
        config.height,
        config.width,
        (0..n).map(|_| rng.normal()).collect(),
    )?;

    for _ in 0..WARMUP_RUNS {
        std::hint::black_box(params.forward(std::hint::black_box(&x))?);
    }
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        std::hint::black_box(params.forward(std::hint::black_box(&x))?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);

    let (np, ci) = (config.positions() as u64, config.inner_channels as u64);
    let dominant_multiplies = match kind {
        BlockKind::Spa => Some(spa_cost(np, ci, config.k as u64)?.dominant_multiplies),
        BlockKind::Nl => Some(nl_cost(np, ci)?.dominant_multiplies),
        _ => None,
    };
    Ok(BenchResult {
        kind,
        config: *config,
        trials,
        median_s: median(&times),
        min_s: times[0],
        max_s: times[trials - 1],
        dominant_multiplies,
    })
}
