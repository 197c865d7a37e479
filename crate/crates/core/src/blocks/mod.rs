//! Residual attention blocks: salient-positions attention (SPA), non-local
//! (NL), squeeze-and-excitation (SE) and global context (GC).
//!
//! Every block maps `[c, h, w]` to `[c, h, w]`. Forward passes are written
//! against a [`GradTape`], so the same code serves inference and training.

mod serialize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use serialize::{read_params, write_params, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::grad::tape::{GradTape, ParamId, Var};
use crate::rng::Rng;
use crate::sps::{self, SelectionResult};
use crate::tensor::{softmax_columns, ChannelMatrix, Conv1x1, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Spa,
    Nl,
    Se,
    Gc,
}

impl BlockKind {
    pub const ALL: [BlockKind; 4] = [BlockKind::Spa, BlockKind::Nl, BlockKind::Se, BlockKind::Gc];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Spa => "spa",
            BlockKind::Nl => "nl",
            BlockKind::Se => "se",
            BlockKind::Gc => "gc",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            BlockKind::Spa => 0,
            BlockKind::Nl => 1,
            BlockKind::Se => 2,
            BlockKind::Gc => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown block kind {s:?}")))
    }
}

/// Divisor applied to the SPA Gram logits before the column softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// Inner channel count `c_i`.
    #[default]
    Channels,
    /// Number of selected positions `k`.
    Positions,
    /// `sqrt(c_i)`.
    #[serde(rename = "sqrt")]
    SqrtChannels,
    None,
}

impl ScaleMode {
    pub fn divisor(self, inner_channels: usize, k: usize) -> f64 {
        match self {
            ScaleMode::Channels => inner_channels as f64,
            ScaleMode::Positions => k as f64,
            ScaleMode::SqrtChannels => (inner_channels as f64).sqrt(),
            ScaleMode::None => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleMode::Channels => "channels",
            ScaleMode::Positions => "positions",
            ScaleMode::SqrtChannels => "sqrt",
            ScaleMode::None => "none",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ScaleMode::Channels => 0,
            ScaleMode::Positions => 1,
            ScaleMode::SqrtChannels => 2,
            ScaleMode::None => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        [
            ScaleMode::Channels,
            ScaleMode::Positions,
            ScaleMode::SqrtChannels,
            ScaleMode::None,
        ]
        .into_iter()
        .find(|m| m.tag() == tag)
    }
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channels" => Ok(ScaleMode::Channels),
            "positions" => Ok(ScaleMode::Positions),
            "sqrt" => Ok(ScaleMode::SqrtChannels),
            "none" => Ok(ScaleMode::None),
            _ => Err(Error::argument(format!("unknown scale mode {s:?}"))),
        }
    }
}

/// SPA weights. `theta` produces the queries, and the keys are a column
/// subset of the queries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaBlockParams {
    pub theta: Conv1x1,
    pub g: Conv1x1,
    pub w_z: Conv1x1,
    pub k: usize,
    pub scale_mode: ScaleMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlBlockParams {
    pub theta: Conv1x1,
    pub phi: Conv1x1,
    pub g: Conv1x1,
    pub w_z: Conv1x1,
    /// Key dimension in the `1/sqrt(d)` logit scaling.
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeBlockParams {
    pub fc1: ChannelMatrix,
    pub fc2: ChannelMatrix,
    pub reduction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcBlockParams {
    pub mask: Conv1x1,
    pub bottleneck_in: ChannelMatrix,
    pub bottleneck_out: ChannelMatrix,
    pub reduction: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Spa(SpaBlockParams),
    Nl(NlBlockParams),
    Se(SeBlockParams),
    Gc(GcBlockParams),
}

/// Shape and hyper-parameters for constructing a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub channels: usize,
    /// `c_i` for SPA/NL.
    pub inner_channels: usize,
    /// Selected positions for SPA.
    pub k: usize,
    /// Bottleneck reduction for SE/GC.
    pub reduction: usize,
    pub scale_mode: ScaleMode,
}

impl BlockSpec {
    pub const DEFAULT_REDUCTION: usize = 16;

    /// Defaults: `c_i = max(c/2, 1)`, `r = 16`, channel-count scaling.
    pub fn new(kind: BlockKind, channels: usize, k: usize) -> Self {
        Self {
            kind,
            channels,
            inner_channels: (channels / 2).max(1),
            k,
            reduction: Self::DEFAULT_REDUCTION,
            scale_mode: ScaleMode::Channels,
        }
    }

    pub fn with_inner(mut self, inner_channels: usize) -> Self {
        self.inner_channels = inner_channels;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_scale(mut self, scale_mode: ScaleMode) -> Self {
        self.scale_mode = scale_mode;
        self
    }

    /// Hidden width of the SE/GC bottleneck, `max(c / r, 1)`.
    pub fn bottleneck(&self) -> usize {
        (self.channels / self.reduction.max(1)).max(1)
    }
}

/// Column-stochastic channel affinity (SPA) or row-stochastic spatial
/// affinity (NL).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub kind: AffinityKind,
    pub matrix: ChannelMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    SpaChannel,
    NlSpatial,
}

impl AffinityMatrix {
    /// Largest deviation of the normalized axis sums from 1.
    pub fn stochastic_error(&self) -> f64 {
        let m = match self.kind {
            AffinityKind::SpaChannel => self.matrix.transpose(),
            AffinityKind::NlSpatial => self.matrix.clone(),
        };
        (0..m.rows())
            .map(|r| (m.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Intermediates of an SPA or NL forward pass.
#[derive(Debug, Clone)]
pub struct IntrospectionRecord {
    /// Queries `[c_i, n]`.
    pub q: ChannelMatrix,
    /// Values `[c_i, n]`.
    pub v: ChannelMatrix,
    /// Present for SPA only.
    pub selection: Option<SelectionResult>,
    /// Scaled logits before the softmax.
    pub logits: ChannelMatrix,
    pub affinity: AffinityMatrix,
}

/// Tape handles for the intermediates of an attention graph.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub q: Var,
    pub v: Var,
    pub logits: Var,
    pub affinity: Var,
    pub selection: Option<SelectionResult>,
}

/// Output handle of a block graph, with attention intermediates for SPA/NL.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    pub out: Var,
    pub attention: Option<AttentionVars>,
}

fn pid(base: usize, i: usize) -> ParamId {
    ParamId(base + i)
}

fn conv_on_tape(tape: &mut GradTape, x: Var, conv: &Conv1x1, base: usize, first: usize) -> Result<Var> {
    tape.affine(
        x,
        &conv.weight,
        Some(&conv.bias),
        pid(base, first),
        Some(pid(base, first + 1)),
    )
}

fn check_in_channels(what: &str, conv: &Conv1x1, c: usize) -> Result<()> {
    if conv.in_channels() != c {
        return Err(Error::shape(format!(
            "{what} expects {} input channels, got {c}",
            conv.in_channels()
        )));
    }
    Ok(())
}

impl SpaBlockParams {
    pub fn channels(&self) -> usize {
        self.theta.in_channels()
    }

    pub fn inner_channels(&self) -> usize {
        self.theta.out_channels()
    }

    fn validate(&self) -> Result<()> {
        let (c, ci) = (self.channels(), self.inner_channels());
        if self.g.in_channels() != c
            || self.g.out_channels() != ci
            || self.w_z.in_channels() != ci
            || self.w_z.out_channels() != c
        {
            return Err(Error::shape("SPA transforms disagree on channel widths"));
        }
        if self.k == 0 {
            return Err(Error::argument("SPA k must be positive"));
        }
        Ok(())
    }

    /// Builds the SPA graph on `x` (`[c, n]`). Parameter ids run from `base`
    /// in [`BlockParams::tensors`] order.
    pub fn graph(&self, tape: &mut GradTape, x: Var, base: usize) -> Result<BlockGraph> {
        self.validate()?;
        check_in_channels("SPA theta", &self.theta, tape.value(x).rows())?;
        let q = conv_on_tape(tape, x, &self.theta, base, 0)?;
        let v = conv_on_tape(tape, x, &self.g, base, 2)?;
        let selection = sps::select(tape.value(q), self.k)?;
        let keys = tape.gather_columns(q, &selection.indices)?;
        let divisor = self.scale_mode.divisor(self.inner_channels(), self.k);
        let logits = tape.gram(keys, divisor)?;
        let affinity = tape.softmax_columns(logits)?;
        // Output channel q mixes value channels with weights A[., q].
        let y = tape.matmul_tn(affinity, v)?;
        let z = conv_on_tape(tape, y, &self.w_z, base, 4)?;
        let out = tape.add(x, z)?;
        Ok(BlockGraph {
            out,
            attention: Some(AttentionVars {
                q,
                v,
                logits,
                affinity,
                selection: Some(selection),
            }),
        })
    }
}

impl NlBlockParams {
    pub fn channels(&self) -> usize {
        self.theta.in_channels()
    }

    pub fn inner_channels(&self) -> usize {
        self.theta.out_channels()
    }

    fn validate(&self) -> Result<()> {
        let (c, ci) = (self.channels(), self.inner_channels());
        for conv in [&self.phi, &self.g] {
            if conv.in_channels() != c || conv.out_channels() != ci {
                return Err(Error::shape("NL transforms disagree on channel widths"));
            }
        }
        if self.w_z.in_channels() != ci || self.w_z.out_channels() != c {
            return Err(Error::shape("NL output transform has the wrong shape"));
        }
        if self.d == 0 {
            return Err(Error::argument("NL key dimension must be positive"));
        }
        Ok(())
    }

    pub fn graph(&self, tape: &mut GradTape, x: Var, base: usize) -> Result<BlockGraph> {
        self.validate()?;
        check_in_channels("NL theta", &self.theta, tape.value(x).rows())?;
        let q = conv_on_tape(tape, x, &self.theta, base, 0)?;
        let key = conv_on_tape(tape, x, &self.phi, base, 2)?;
        let v = conv_on_tape(tape, x, &self.g, base, 4)?;
        let raw = tape.matmul_tn(q, key)?;
        let logits = tape.scale(raw, 1.0 / (self.d as f64).sqrt());
        let affinity = tape.softmax_rows(logits)?;
        let y = tape.matmul_nt(v, affinity)?;
        let z = conv_on_tape(tape, y, &self.w_z, base, 6)?;
        let out = tape.add(x, z)?;
        Ok(BlockGraph {
            out,
            attention: Some(AttentionVars {
                q,
                v,
                logits,
                affinity,
                selection: None,
            }),
        })
    }
}

impl SeBlockParams {
    pub fn channels(&self) -> usize {
        self.fc1.cols()
    }

    pub fn graph(&self, tape: &mut GradTape, x: Var, base: usize) -> Result<BlockGraph> {
        let c = tape.value(x).rows();
        if self.fc1.cols() != c || self.fc2.rows() != c || self.fc2.cols() != self.fc1.rows() {
            return Err(Error::shape(format!(
                "SE fc1 {:?} / fc2 {:?} do not fit {c} channels",
                self.fc1.shape(),
                self.fc2.shape()
            )));
        }
        let z = tape.row_mean(x);
        let h = tape.affine(z, &self.fc1, None, pid(base, 0), None)?;
        let h = tape.relu(h);
        let s = tape.affine(h, &self.fc2, None, pid(base, 1), None)?;
        let gate = tape.sigmoid(s);
        let out = tape.mul_broadcast(x, gate)?;
        Ok(BlockGraph {
            out,
            attention: None,
        })
    }
}

impl GcBlockParams {
    pub fn channels(&self) -> usize {
        self.mask.in_channels()
    }

    pub fn graph(&self, tape: &mut GradTape, x: Var, base: usize) -> Result<BlockGraph> {
        let c = tape.value(x).rows();
        if self.mask.out_channels() != 1 {
            return Err(Error::shape("GC mask must have a single output channel"));
        }
        check_in_channels("GC mask", &self.mask, c)?;
        if self.bottleneck_in.cols() != c
            || self.bottleneck_out.rows() != c
            || self.bottleneck_out.cols() != self.bottleneck_in.rows()
        {
            return Err(Error::shape("GC bottleneck does not fit the channel count"));
        }
        let logits = conv_on_tape(tape, x, &self.mask, base, 0)?;
        let attn = tape.softmax_rows(logits)?;
        let context = tape.matmul_nt(x, attn)?;
        let h = tape.affine(context, &self.bottleneck_in, None, pid(base, 2), None)?;
        let h = tape.relu(h);
        let delta = tape.affine(h, &self.bottleneck_out, None, pid(base, 3), None)?;
        let out = tape.add_broadcast(x, delta)?;
        Ok(BlockGraph {
            out,
            attention: None,
        })
    }
}

impl BlockParams {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockParams::Spa(_) => BlockKind::Spa,
            BlockParams::Nl(_) => BlockKind::Nl,
            BlockParams::Se(_) => BlockKind::Se,
            BlockParams::Gc(_) => BlockKind::Gc,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            BlockParams::Spa(p) => p.channels(),
            BlockParams::Nl(p) => p.channels(),
            BlockParams::Se(p) => p.channels(),
            BlockParams::Gc(p) => p.channels(),
        }
    }

    /// Named learnable tensors, in declaration order. This order fixes both
    /// the tape parameter ids and the serialized layout.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            BlockParams::Spa(p) => vec![
                ("theta.weight", p.theta.weight.data()),
                ("theta.bias", &p.theta.bias),
                ("g.weight", p.g.weight.data()),
                ("g.bias", &p.g.bias),
                ("w_z.weight", p.w_z.weight.data()),
                ("w_z.bias", &p.w_z.bias),
            ],
            BlockParams::Nl(p) => vec![
                ("theta.weight", p.theta.weight.data()),
                ("theta.bias", &p.theta.bias),
                ("phi.weight", p.phi.weight.data()),
                ("phi.bias", &p.phi.bias),
                ("g.weight", p.g.weight.data()),
                ("g.bias", &p.g.bias),
                ("w_z.weight", p.w_z.weight.data()),
                ("w_z.bias", &p.w_z.bias),
            ],
            BlockParams::Se(p) => vec![("fc1", p.fc1.data()), ("fc2", p.fc2.data())],
            BlockParams::Gc(p) => vec![
                ("mask.weight", p.mask.weight.data()),
                ("mask.bias", &p.mask.bias),
                ("bottleneck_in", p.bottleneck_in.data()),
                ("bottleneck_out", p.bottleneck_out.data()),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            BlockParams::Spa(p) => vec![
                ("theta.weight", p.theta.weight.data_mut()),
                ("theta.bias", &mut p.theta.bias),
                ("g.weight", p.g.weight.data_mut()),
                ("g.bias", &mut p.g.bias),
                ("w_z.weight", p.w_z.weight.data_mut()),
                ("w_z.bias", &mut p.w_z.bias),
            ],
            BlockParams::Nl(p) => vec![
                ("theta.weight", p.theta.weight.data_mut()),
                ("theta.bias", &mut p.theta.bias),
                ("phi.weight", p.phi.weight.data_mut()),
                ("phi.bias", &mut p.phi.bias),
                ("g.weight", p.g.weight.data_mut()),
                ("g.bias", &mut p.g.bias),
                ("w_z.weight", p.w_z.weight.data_mut()),
                ("w_z.bias", &mut p.w_z.bias),
            ],
            BlockParams::Se(p) => vec![("fc1", p.fc1.data_mut()), ("fc2", p.fc2.data_mut())],
            BlockParams::Gc(p) => vec![
                ("mask.weight", p.mask.weight.data_mut()),
                ("mask.bias", &mut p.mask.bias),
                ("bottleneck_in", p.bottleneck_in.data_mut()),
                ("bottleneck_out", p.bottleneck_out.data_mut()),
            ],
        }
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors().len()
    }

    pub fn graph(&self, tape: &mut GradTape, x: Var, base: usize) -> Result<BlockGraph> {
        match self {
            BlockParams::Spa(p) => p.graph(tape, x, base),
            BlockParams::Nl(p) => p.graph(tape, x, base),
            BlockParams::Se(p) => p.graph(tape, x, base),
            BlockParams::Gc(p) => p.graph(tape, x, base),
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut tape = GradTape::inference();
        let xv = tape.leaf(x.flatten());
        let graph = self.graph(&mut tape, xv, 0)?;
        unflatten_like(tape.value(graph.out).clone(), x)
    }
}

fn unflatten_like(m: ChannelMatrix, like: &FeatureMap) -> Result<FeatureMap> {
    FeatureMap::from_matrix(m, like.height(), like.width())
}

fn run_attention(params: &BlockParams, x: &FeatureMap) -> Result<(FeatureMap, IntrospectionRecord)> {
    let mut tape = GradTape::inference();
    let xv = tape.leaf(x.flatten());
    let graph = params.graph(&mut tape, xv, 0)?;
    let vars = graph.attention.expect("attention block");
    let kind = match params.kind() {
        BlockKind::Spa => AffinityKind::SpaChannel,
        _ => AffinityKind::NlSpatial,
    };
    let record = IntrospectionRecord {
        q: tape.value(vars.q).clone(),
        v: tape.value(vars.v).clone(),
        selection: vars.selection,
        logits: tape.value(vars.logits).clone(),
        affinity: AffinityMatrix {
            kind,
            matrix: tape.value(vars.affinity).clone(),
        },
    };
    let out = unflatten_like(tape.value(graph.out).clone(), x)?;
    Ok((out, record))
}

/// Channel affinity from the selected keys `[c_i, k]`: column softmax of
/// the scaled Gram matrix `K Kᵀ / s`.
pub fn spa_affinity(keys: &ChannelMatrix, scale_mode: ScaleMode) -> Result<AffinityMatrix> {
    let divisor = scale_mode.divisor(keys.rows(), keys.cols());
    let logits = spa_logits(keys, divisor)?;
    Ok(AffinityMatrix {
        kind: AffinityKind::SpaChannel,
        matrix: softmax_columns(&logits)?,
    })
}

/// Scaled Gram logits `K Kᵀ / divisor`.
pub fn spa_logits(keys: &ChannelMatrix, divisor: f64) -> Result<ChannelMatrix> {
    Ok(crate::tensor::matmul_nt(keys, keys)?.scaled(1.0 / divisor))
}

pub fn spa_forward(x: &FeatureMap, p: &SpaBlockParams) -> Result<FeatureMap> {
    BlockParams::Spa(p.clone()).forward(x)
}

pub fn spa_forward_introspect(
    x: &FeatureMap,
    p: &SpaBlockParams,
) -> Result<(FeatureMap, IntrospectionRecord)> {
    run_attention(&BlockParams::Spa(p.clone()), x)
}

pub fn nl_forward(x: &FeatureMap, p: &NlBlockParams) -> Result<FeatureMap> {
    BlockParams::Nl(p.clone()).forward(x)
}

pub fn nl_forward_introspect(
    x: &FeatureMap,
    p: &NlBlockParams,
) -> Result<(FeatureMap, IntrospectionRecord)> {
    run_attention(&BlockParams::Nl(p.clone()), x)
}

pub fn se_forward(x: &FeatureMap, p: &SeBlockParams) -> Result<FeatureMap> {
    BlockParams::Se(p.clone()).forward(x)
}

pub fn gc_forward(x: &FeatureMap, p: &GcBlockParams) -> Result<FeatureMap> {
    BlockParams::Gc(p.clone()).forward(x)
}

impl BlockParams {
    /// Forward with intermediates, for SPA and NL blocks.
    pub fn forward_introspect(&self, x: &FeatureMap) -> Result<(FeatureMap, IntrospectionRecord)> {
        match self {
            BlockParams::Spa(_) | BlockParams::Nl(_) => run_attention(self, x),
            _ => Err(Error::argument(format!(
                "{} block has no attention intermediates",
                self.kind()
            ))),
        }
    }
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> ChannelMatrix {
    let scale = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.normal() * scale).collect();
    ChannelMatrix::new(rows, cols, data).expect("positive dims")
}

fn random_conv(rng: &mut Rng, out: usize, inp: usize) -> Conv1x1 {
    Conv1x1 {
        weight: random_matrix(rng, out, inp),
        bias: vec![0.0; out],
    }
}

/// Seeded initialization. Weights are standard normal scaled by
/// `1/sqrt(fan_in)`, biases are zero, and the output transform of every
/// residual block is zero so a fresh block is the identity map.
pub fn init_params(spec: &BlockSpec, seed: u64) -> Result<BlockParams> {
    if spec.channels == 0 || spec.inner_channels == 0 {
        return Err(Error::argument("block channel widths must be positive"));
    }
    let mut rng = Rng::new(seed);
    let (c, ci) = (spec.channels, spec.inner_channels);
    Ok(match spec.kind {
        BlockKind::Spa => {
            if spec.k == 0 {
                return Err(Error::argument("SPA k must be positive"));
            }
            BlockParams::Spa(SpaBlockParams {
                theta: random_conv(&mut rng, ci, c),
                g: random_conv(&mut rng, ci, c),
                w_z: Conv1x1::zeros(c, ci),
                k: spec.k,
                scale_mode: spec.scale_mode,
            })
        }
        BlockKind::Nl => BlockParams::Nl(NlBlockParams {
            theta: random_conv(&mut rng, ci, c),
            phi: random_conv(&mut rng, ci, c),
            g: random_conv(&mut rng, ci, c),
            w_z: Conv1x1::zeros(c, ci),
            d: ci,
        }),
        BlockKind::Se => {
            let hidden = spec.bottleneck();
            BlockParams::Se(SeBlockParams {
                fc1: random_matrix(&mut rng, hidden, c),
                fc2: random_matrix(&mut rng, c, hidden),
                reduction: spec.reduction,
            })
        }
        BlockKind::Gc => {
            let hidden = spec.bottleneck();
            BlockParams::Gc(GcBlockParams {
                mask: random_conv(&mut rng, 1, c),
                bottleneck_in: random_matrix(&mut rng, hidden, c),
                bottleneck_out: ChannelMatrix::zeros(c, hidden),
                reduction: spec.reduction,
            })
        }
    })
}

/// Like [`init_params`] but every tensor, including biases and zero-started
/// output transforms, is drawn at random. Used to exercise gradients away
/// from the identity start.
pub fn random_params(spec: &BlockSpec, seed: u64) -> Result<BlockParams> {
    let mut params = init_params(spec, seed)?;
    let mut rng = Rng::new(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
    for (_, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = 0.5 * rng.normal();
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests;
