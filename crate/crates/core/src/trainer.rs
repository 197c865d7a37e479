//! A two-convolution classifier with one optional attention block, trained
//! by SGD with momentum, weight decay and cosine annealing.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blocks::{init_params, BlockKind, BlockParams, BlockSpec, ScaleMode};
use crate::dataio::LabeledImage;
use crate::error::{Error, Result};
use crate::grad::{Conv3x3Weights, GradTape, ParamId, Var};
use crate::rng::Rng;
use crate::tensor::{ChannelMatrix, Conv1x1, FeatureMap};

pub const CONV1_OUT: usize = 16;
pub const CONV2_OUT: usize = 32;
const BLOCK_PARAM_BASE: usize = 6;
const BLOCK_SEED_SALT: u64 = 0x5EED_B10C;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insertion {
    #[default]
    AfterConv1,
    AfterConv2,
}

impl Insertion {
    pub fn name(self) -> &'static str {
        match self {
            Insertion::AfterConv1 => "after_conv1",
            Insertion::AfterConv2 => "after_conv2",
        }
    }

    /// `(channels, height, width)` of the feature map the block sees.
    pub fn feature_shape(self, height: usize, width: usize) -> (usize, usize, usize) {
        match self {
            Insertion::AfterConv1 => (CONV1_OUT, height / 2, width / 2),
            Insertion::AfterConv2 => (CONV2_OUT, height / 4, width / 4),
        }
    }

    pub fn positions(self, height: usize, width: usize) -> usize {
        let (_, h, w) = self.feature_shape(height, width);
        h * w
    }
}

impl fmt::Display for Insertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Insertion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "after_conv1" => Ok(Insertion::AfterConv1),
            "after_conv2" => Ok(Insertion::AfterConv2),
            _ => Err(Error::argument(format!("unknown insertion point {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains the plain baseline.
    pub block: Option<BlockKind>,
    pub k: usize,
    pub scale_mode: ScaleMode,
    /// SE/GC bottleneck reduction.
    pub reduction: usize,
    pub insert: Insertion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_max: 0.05,
            lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            seed: 0,
            block: None,
            k: 8,
            scale_mode: ScaleMode::default(),
            reduction: 4,
            insert: Insertion::default(),
        }
    }
}

impl TrainConfig {
    /// The published recipe: batch 128, learning rate 0.9.
    pub fn reference() -> Self {
        Self {
            batch_size: 128,
            lr_max: 0.9,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be positive"));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::argument(format!("lr_max must be positive, got {}", self.lr_max)));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::argument(format!(
                "lr_min must lie in [0, lr_max], got {}",
                self.lr_min
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::argument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::argument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.block.is_some() && (self.k == 0 || self.reduction == 0) {
            return Err(Error::argument("k and reduction must be positive"));
        }
        Ok(())
    }

    pub fn block_spec(&self, kind: BlockKind, height: usize, width: usize) -> BlockSpec {
        let (c, _, _) = self.insert.feature_shape(height, width);
        BlockSpec::new(kind, c, self.k)
            .with_reduction(self.reduction)
            .with_scale(self.scale_mode)
    }
}

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = epochs`.
pub fn cosine_lr(t: usize, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs;
    if t > total {
        return Err(Error::argument(format!("epoch {t} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(cfg.lr_max);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + phase.cos()))
}

/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::shape(format!(
            "sgd on {} params with {} grads and {} velocity entries",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Loss and `d(loss)/d(logits)` of softmax cross-entropy for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// conv3x3 -> ReLU -> pool -> conv3x3 -> ReLU -> pool -> global average
/// pool -> linear, with an optional block after either pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    pub in_channels: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub conv1: Conv3x3Weights,
    pub conv2: Conv3x3Weights,
    pub fc: Conv1x1,
    pub block: Option<(Insertion, BlockParams)>,
}

fn he_conv(rng: &mut Rng, out_channels: usize, in_channels: usize) -> Conv3x3Weights {
    let mut k = Conv3x3Weights::zeros(out_channels, in_channels);
    let std = (2.0 / (in_channels * 9) as f64).sqrt();
    k.weight.iter_mut().for_each(|w| *w = std * rng.normal());
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    /// Mean loss over the batch.
    pub loss: f64,
    pub correct: usize,
    /// One entry per tensor, in [`TinyCnn::params`] order.
    pub grads: Vec<Vec<f64>>,
}

impl TinyCnn {
    /// Baseline network without a block.
    pub fn new(in_channels: usize, classes: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || classes < 2 {
            return Err(Error::argument("need at least one input channel and two classes"));
        }
        if height < 4 || width < 4 {
            return Err(Error::argument(format!("input {height}x{width} is smaller than 4x4")));
        }
        let mut rng = Rng::new(seed);
        let conv1 = he_conv(&mut rng, CONV1_OUT, in_channels);
        let conv2 = he_conv(&mut rng, CONV2_OUT, CONV1_OUT);
        let std = 1.0 / (CONV2_OUT as f64).sqrt();
        let weight = ChannelMatrix::new(
            classes,
            CONV2_OUT,
            (0..classes * CONV2_OUT).map(|_| std * rng.normal()).collect(),
        )?;
        Ok(Self {
            in_channels,
            classes,
            height,
            width,
            conv1,
            conv2,
            fc: Conv1x1::new(weight, vec![0.0; classes])?,
            block: None,
        })
    }

    /// Baseline plus the block named by `cfg`, all seeded from `cfg.seed`.
    /// The backbone weights do not depend on the block choice.
    pub fn from_config(cfg: &TrainConfig, in_channels: usize, classes: usize, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let net = Self::new(in_channels, classes, height, width, cfg.seed)?;
        match cfg.block {
            None => Ok(net),
            Some(kind) => {
                let params = init_params(&cfg.block_spec(kind, height, width), cfg.seed ^ BLOCK_SEED_SALT)?;
                net.with_block(params, cfg.insert)
            }
        }
    }

    pub fn with_block(mut self, params: BlockParams, insert: Insertion) -> Result<Self> {
        let (c, h, w) = insert.feature_shape(self.height, self.width);
        if params.channels() != c {
            return Err(Error::shape(format!(
                "{} block has {} channels, {} expects {c}",
                params.kind(),
                params.channels(),
                insert
            )));
        }
        if let BlockParams::Spa(p) = &params {
            if p.k > h * w {
                return Err(Error::argument(format!(
                    "k = {} exceeds the {} positions at {insert}",
                    p.k,
                    h * w
                )));
            }
        }
        self.block = Some((insert, params));
        Ok(self)
    }

    pub fn without_block(&self) -> Self {
        Self {
            block: None,
            ..self.clone()
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            self.fc.weight.data(),
            &self.fc.bias,
        ];
        if let Some((_, b)) = &self.block {
            out.extend(b.tensors().into_iter().map(|(_, t)| t));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            self.fc.weight.data_mut(),
            &mut self.fc.bias,
        ];
        if let Some((_, b)) = &mut self.block {
            out.extend(b.tensors_mut().into_iter().map(|(_, t)| t));
        }
        out
    }

    fn graph(&self, tape: &mut GradTape, image: &FeatureMap) -> Result<Var> {
        if image.channels() != self.in_channels || image.height() != self.height || image.width() != self.width {
            return Err(Error::shape(format!(
                "network takes [{}, {}, {}], got {:?}",
                self.in_channels,
                self.height,
                self.width,
                image.shape()
            )));
        }
        let (h, w) = (self.height, self.width);
        let x = tape.leaf(image.flatten());
        let a = tape.conv3x3(x, &self.conv1, h, w, ParamId(0), ParamId(1))?;
        let a = tape.relu(a);
        let mut a = tape.max_pool2(a, h, w)?;
        let (h, w) = (h / 2, w / 2);
        if let Some((Insertion::AfterConv1, b)) = &self.block {
            a = b.graph(tape, a, BLOCK_PARAM_BASE)?.out;
        }
        let a = tape.conv3x3(a, &self.conv2, h, w, ParamId(2), ParamId(3))?;
        let a = tape.relu(a);
        let mut a = tape.max_pool2(a, h, w)?;
        if let Some((Insertion::AfterConv2, b)) = &self.block {
            a = b.graph(tape, a, BLOCK_PARAM_BASE)?.out;
        }
        let pooled = tape.row_mean(a);
        tape.affine(pooled, &self.fc.weight, Some(&self.fc.bias), ParamId(4), Some(ParamId(5)))
    }

    pub fn logits(&self, image: &FeatureMap) -> Result<Vec<f64>> {
        let mut tape = GradTape::inference();
        let out = self.graph(&mut tape, image)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.classes {
            return Err(Error::argument(format!("label {label} outside {} classes", self.classes)));
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &[LabeledImage]) -> Result<Metrics> {
        if data.is_empty() {
            return Err(Error::argument("cannot evaluate on an empty set"));
        }
        let (mut loss, mut correct) = (0.0, 0usize);
        for s in data {
            self.check_label(s.label)?;
            let z = self.logits(&s.image)?;
            loss += cross_entropy(&z, s.label).0;
            correct += usize::from(argmax(&z) == s.label);
        }
        Ok(Metrics {
            loss: loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        })
    }

    /// Mean cross-entropy over `batch` and its gradient for every tensor.
    pub fn loss_and_grads(&self, batch: &[&LabeledImage]) -> Result<BatchGradients> {
        if batch.is_empty() {
            return Err(Error::argument("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<Vec<f64>> = self.params().iter().map(|t| vec![0.0; t.len()]).collect();
        let (mut loss, mut correct) = (0.0, 0usize);
        for s in batch {
            self.check_label(s.label)?;
            let mut tape = GradTape::recording();
            let out = self.graph(&mut tape, &s.image)?;
            let z = tape.value(out).data().to_vec();
            let (l, dz) = cross_entropy(&z, s.label);
            loss += l;
            correct += usize::from(argmax(&z) == s.label);
            let seed = ChannelMatrix::new(self.classes, 1, dz.iter().map(|g| g * scale).collect())?;
            let g = tape.backward(&[(out, seed)])?;
            for (i, acc) in grads.iter_mut().enumerate() {
                if let Some(gi) = g.param(ParamId(i)) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
        }
        Ok(BatchGradients {
            loss: loss * scale,
            correct,
            grads,
        })
    }
}

/// Momentum buffers for every tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(model: &TinyCnn, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: model.params().iter().map(|t| vec![0.0; t.len()]).collect(),
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, model: &mut TinyCnn, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::shape("optimizer state does not match the network"));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            sgd_step(p, g, v, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained network.
    pub epoch: usize,
    /// Rate used during this epoch; for epoch 0, the starting rate.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_eval_acc: Option<f64>,
    pub wall_s: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,lr,train_loss,train_acc,eval_acc";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EPOCH_CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let eval = e.eval_acc.map_or(String::new(), |v| v.to_string());
            writeln!(out, "{},{},{},{},{eval}", e.epoch, e.lr, e.train_loss, e.train_acc).expect("write to String");
        }
        out
    }
}

/// Metrics are measured after each epoch with a full pass over both sets.
/// Batch order is a Fisher-Yates shuffle seeded with `seed + epoch`.
pub fn train(model: &mut TinyCnn, train_set: &[LabeledImage], eval_set: &[LabeledImage], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::argument("training set is empty"));
    }
    let start = Instant::now();
    let snapshot = |model: &TinyCnn, epoch: usize, lr: f64| -> Result<EpochMetrics> {
        let m = model.evaluate(train_set)?;
        if !m.loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: m.loss });
        }
        let eval_acc = if eval_set.is_empty() {
            None
        } else {
            Some(model.evaluate(eval_set)?.accuracy)
        };
        Ok(EpochMetrics {
            epoch,
            lr,
            train_loss: m.loss,
            train_acc: m.accuracy,
            eval_acc,
        })
    };

    let mut history = vec![snapshot(model, 0, cosine_lr(0, cfg)?)?];
    let mut opt = Sgd::new(model, cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg)?;
        let mut rng = Rng::new(cfg.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &train_set[i]).collect();
            let g = model.loss_and_grads(&batch)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss: g.loss });
            }
            opt.step(model, &g.grads, lr)?;
        }
        history.push(snapshot(model, epoch + 1, lr)?);
    }
    let last = history.last().expect("initial snapshot").clone();
    Ok(TrainReport {
        config: cfg.clone(),
        epochs: history,
        final_train_loss: last.train_loss,
        final_train_acc: last.train_acc,
        final_eval_acc: last.eval_acc,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    /// Positions at the insertion point.
    pub n: usize,
    pub feasible: bool,
    pub train_acc: Option<f64>,
    pub eval_acc: Option<f64>,
    pub wall_s: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "k,n,feasible,train_acc,eval_acc,wall_s";

/// One SPA run per `k` with the shared seed. Rows with `k > n` are marked
/// infeasible and not trained.
pub fn sweep_k(ks: &[usize], base: &TrainConfig, train_set: &[LabeledImage], eval_set: &[LabeledImage]) -> Result<Vec<SweepRow>> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::argument("training set is empty"))?;
    let [in_c, h, w] = first.image.shape();
    let classes = train_set.iter().chain(eval_set).map(|s| s.label).max().unwrap_or(0) + 1;
    let n = base.insert.positions(h, w);
    ks.iter()
        .map(|&k| {
            if k == 0 || k > n {
                return Ok(SweepRow {
                    k,
                    n,
                    feasible: false,
                    train_acc: None,
                    eval_acc: None,
                    wall_s: None,
                });
            }
            let cfg = TrainConfig {
                block: Some(BlockKind::Spa),
                k,
                ..base.clone()
            };
            let mut model = TinyCnn::from_config(&cfg, in_c, classes.max(2), h, w)?;
            let report = train(&mut model, train_set, eval_set, &cfg)?;
            Ok(SweepRow {
                k,
                n,
                feasible: true,
                train_acc: Some(report.final_train_acc),
                eval_acc: report.final_eval_acc,
                wall_s: Some(report.wall_s),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.k,
            r.n,
            r.feasible,
            cell(r.train_acc),
            cell(r.eval_acc),
            cell(r.wall_s)
        )
        .expect("write to String");
    }
    out
}
