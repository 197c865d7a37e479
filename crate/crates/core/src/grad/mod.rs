//! Backward passes for the blocks and a central-difference checker.
//!
//! Hard top-k selection is treated as a constant during backward: gradient
//! reaches the queries only through the columns that were selected.

pub mod tape;

use std::fmt;

pub use tape::{Conv3x3Weights, GradTape, Gradients, OpKind, ParamId, Var};

use crate::blocks::{random_params, BlockKind, BlockParams, BlockSpec, ScaleMode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sps;
use crate::tensor::{ChannelMatrix, FeatureMap};

/// Recorded forward of a single block on input `x`.
#[derive(Debug, Clone)]
pub struct BlockTape {
    pub kind: BlockKind,
    pub tape: GradTape,
    pub input: Var,
    pub output: Var,
    names: Vec<&'static str>,
    height: usize,
    width: usize,
}

/// Gradients of `⟨upstream, block(x)⟩`.
#[derive(Debug, Clone)]
pub struct BlockGradients {
    pub input: FeatureMap,
    /// One entry per parameter tensor, in [`BlockParams::tensors`] order.
    pub params: Vec<(&'static str, Vec<f64>)>,
}

pub fn forward_recorded(params: &BlockParams, x: &FeatureMap) -> Result<(FeatureMap, BlockTape)> {
    let mut tape = GradTape::recording();
    let input = tape.leaf(x.flatten());
    let graph = params.graph(&mut tape, input, 0)?;
    let out = FeatureMap::from_matrix(tape.value(graph.out).clone(), x.height(), x.width())?;
    let names = params.tensors().into_iter().map(|(n, _)| n).collect();
    Ok((
        out,
        BlockTape {
            kind: params.kind(),
            tape,
            input,
            output: graph.out,
            names,
            height: x.height(),
            width: x.width(),
        },
    ))
}

pub fn backward(params: &BlockParams, tape: &BlockTape, upstream: &FeatureMap) -> Result<BlockGradients> {
    if params.kind() != tape.kind {
        return Err(Error::argument(format!(
            "tape recorded a {} block, params are {}",
            tape.kind,
            params.kind()
        )));
    }
    let out_shape = tape.tape.value(tape.output).shape();
    if [upstream.channels(), upstream.positions()] != out_shape
        || upstream.height() != tape.height
    {
        return Err(Error::shape(format!(
            "upstream {:?} does not match block output {:?}",
            upstream.shape(),
            out_shape
        )));
    }
    let grads = tape.tape.backward(&[(tape.output, upstream.flatten())])?;
    let input_value = tape.tape.value(tape.input);
    let input = FeatureMap::from_matrix(grads.wrt(tape.input, input_value), tape.height, tape.width)?;
    let param_grads = params
        .tensors()
        .into_iter()
        .zip(&tape.names)
        .enumerate()
        .map(|(i, ((_, t), &name))| {
            let g = grads
                .param(ParamId(i))
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()]);
            (name, g)
        })
        .collect();
    Ok(BlockGradients {
        input,
        params: param_grads,
    })
}

/// Default perturbation for coordinate value `v`.
pub fn default_epsilon(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`. With
/// `epsilon = None` each coordinate uses [`default_epsilon`].
pub fn finite_diff<F>(mut f: F, x: &[f64], epsilon: Option<f64>) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if let Some(e) = epsilon {
        if e.is_nan() || e <= 0.0 {
            return Err(Error::argument(format!("epsilon must be positive, got {e}")));
        }
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let eps = epsilon.unwrap_or_else(|| default_epsilon(x[i]));
        probe[i] = x[i] + eps;
        let plus = f(&probe)?;
        probe[i] = x[i] - eps;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("objective not finite around coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Floor in the denominator of [`relative_error`]. Gradients that are
/// identically zero (a bias feeding a shift-invariant softmax) still pick up
/// ~1e-10 of central-difference roundoff, so smaller floors flag noise.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a - g| / max(|a|, |g|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &g)| relative_error(a, g))
        .fold(0.0, f64::max)
}

/// Shape of a gradient check run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub channels: usize,
    pub inner_channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub reduction: usize,
    pub scale_mode: ScaleMode,
    pub tolerance: f64,
}

impl GradCheckConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-4;

    /// The small default shape for `kind`: `c = 4`, `c_i = 2`, `4x4`
    /// spatial, `k = 3`, `r = 2`.
    pub fn small() -> Self {
        Self {
            channels: 4,
            inner_channels: 2,
            height: 4,
            width: 4,
            k: 3,
            reduction: 2,
            scale_mode: ScaleMode::Channels,
            tolerance: Self::DEFAULT_TOLERANCE,
        }
    }

    pub fn spec(&self, kind: BlockKind) -> BlockSpec {
        BlockSpec::new(kind, self.channels, self.k)
            .with_inner(self.inner_channels)
            .with_reduction(self.reduction)
            .with_scale(self.scale_mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub kind: BlockKind,
    pub seed: u64,
    /// Seed actually used after boundary-gap resampling.
    pub effective_seed: u64,
    pub resamples: usize,
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub epsilon: String,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<6} {:<16} {:>12.3e} {:>10.1e}  {}",
                self.kind.name(),
                e.name,
                e.max_rel_err,
                self.tolerance,
                if e.max_rel_err <= self.tolerance { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn random_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    random_map_scaled(rng, c, h, w, 1.0)
}

fn random_map_scaled(rng: &mut Rng, c: usize, h: usize, w: usize, std: f64) -> FeatureMap {
    let data = (0..c * h * w).map(|_| std * rng.normal()).collect();
    FeatureMap::new(c, h, w, data).expect("positive dims")
}

fn inner_product(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Relative gap threshold below which a sample is rejected.
pub const BOUNDARY_GAP: f64 = 1e-3;

const MAX_RESAMPLES: usize = 1000;

/// Seeded parameters and input for a check, resampled until the SPA
/// selection boundary is clear of finite-difference perturbations.
fn sample_case(
    kind: BlockKind,
    cfg: &GradCheckConfig,
    seed: u64,
) -> Result<(BlockParams, FeatureMap, FeatureMap, u64, usize)> {
    let spec = cfg.spec(kind);
    for attempt in 0..MAX_RESAMPLES {
        let s = seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9));
        let params = random_params(&spec, s)?;
        let mut rng = Rng::new(s ^ 0x1234_5678);
        // Half-scale inputs keep the Gram logits out of softmax saturation.
        let x = random_map_scaled(&mut rng, cfg.channels, cfg.height, cfg.width, 0.5);
        let upstream = random_map(&mut rng, cfg.channels, cfg.height, cfg.width);
        if let BlockParams::Spa(p) = &params {
            let q = p.theta.apply_matrix(&x.flatten())?;
            let sel = sps::select(&q, p.k)?;
            if let Some(gap) = sel.boundary_gap() {
                let max = sel.scores.iter().copied().fold(0.0, f64::max);
                if gap < BOUNDARY_GAP * max {
                    continue;
                }
            }
        }
        return Ok((params, x, upstream, s, attempt));
    }
    Err(Error::argument("could not find a sample clear of the selection boundary"))
}

/// Compares analytic and central-difference gradients of `⟨u, block(x)⟩`
/// for the input and every parameter tensor.
pub fn gradcheck(kind: BlockKind, cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let (params, x, upstream, effective_seed, resamples) = sample_case(kind, cfg, seed)?;
    let (_, tape) = forward_recorded(&params, &x)?;
    let analytic = backward(&params, &tape, &upstream)?;

    let mut entries = Vec::new();
    let objective_x = |xs: &[f64]| -> Result<f64> {
        let probe = FeatureMap::new(x.channels(), x.height(), x.width(), xs.to_vec())?;
        Ok(inner_product(&upstream, &params.forward(&probe)?))
    };
    let numeric = finite_diff(objective_x, x.data(), None)?;
    entries.push(GradCheckEntry {
        name: "input".into(),
        max_rel_err: max_relative_error(analytic.input.data(), &numeric),
    });

    for (i, (name, grad)) in analytic.params.iter().enumerate() {
        let base = params.tensors()[i].1.to_vec();
        let objective = |vals: &[f64]| -> Result<f64> {
            let mut probe = params.clone();
            probe.tensors_mut()[i].1.copy_from_slice(vals);
            Ok(inner_product(&upstream, &probe.forward(&x)?))
        };
        let numeric = finite_diff(objective, &base, None)?;
        entries.push(GradCheckEntry {
            name: (*name).to_string(),
            max_rel_err: max_relative_error(grad, &numeric),
        });
    }
    let pass = entries.iter().all(|e| e.max_rel_err <= cfg.tolerance);
    Ok(GradCheckReport {
        kind,
        seed,
        effective_seed,
        resamples,
        entries,
        tolerance: cfg.tolerance,
        epsilon: "1e-5*max(1,|x|)".into(),
        pass,
    })
}

/// `⟨upstream, out⟩` gradient of a dense, selection-free SPA evaluation
/// (full Gram of the queries). Only meaningful as a comparison at `k = n`.
pub fn dense_spa_gradients(
    params: &crate::blocks::SpaBlockParams,
    x: &FeatureMap,
    upstream: &FeatureMap,
) -> Result<(ChannelMatrix, Vec<Vec<f64>>)> {
    let mut tape = GradTape::recording();
    let xv = tape.leaf(x.flatten());
    let q = tape.affine(xv, &params.theta.weight, Some(&params.theta.bias), ParamId(0), Some(ParamId(1)))?;
    let v = tape.affine(xv, &params.g.weight, Some(&params.g.bias), ParamId(2), Some(ParamId(3)))?;
    let n = x.positions();
    let logits = tape.gram(q, params.scale_mode.divisor(params.inner_channels(), n))?;
    let a = tape.softmax_columns(logits)?;
    let y = tape.matmul_tn(a, v)?;
    let z = tape.affine(y, &params.w_z.weight, Some(&params.w_z.bias), ParamId(4), Some(ParamId(5)))?;
    let out = tape.add(xv, z)?;
    let grads = tape.backward(&[(out, upstream.flatten())])?;
    let dx = grads.wrt(xv, tape.value(xv));
    let dparams = (0..6)
        .map(|i| grads.param(ParamId(i)).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    Ok((dx, dparams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::init_params;

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff(|x| Ok(x[0] * x[0]), &[3.0], None).unwrap();
        assert!((g[0] - 6.0).abs() <= 1e-8, "{}", g[0]);

        let g = finite_diff(|_| Ok(4.2), &[1.0, -2.0, 0.0], None).unwrap();
        assert_eq!(g, vec![0.0; 3]);

        let x = [0.5, -1.5, 2.0, 10.0];
        let g = finite_diff(|v| Ok(v.iter().map(|a| a * a).sum()), &x, None).unwrap();
        for (gi, xi) in g.iter().zip(x) {
            assert!(relative_error(*gi, 2.0 * xi) <= 1e-7);
        }
    }

    #[test]
    fn finite_diff_errors() {
        assert!(finite_diff(|_| Ok(0.0), &[1.0], Some(0.0)).is_err());
        assert!(matches!(
            finite_diff(|_| Ok(f64::NAN), &[1.0], None),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for kind in BlockKind::ALL {
            let params = random_params(&BlockSpec::new(kind, 4, 3).with_reduction(2), 2).unwrap();
            let x = random_map(&mut Rng::new(9), 4, 3, 3);
            let (_, tape) = forward_recorded(&params, &x).unwrap();
            let g = backward(&params, &tape, &FeatureMap::zeros(4, 3, 3)).unwrap();
            assert!(g.input.data().iter().all(|&v| v == 0.0), "{kind}");
            for (_, p) in g.params {
                assert!(p.iter().all(|&v| v == 0.0), "{kind}");
            }
        }
    }

    #[test]
    fn identity_spa_block_passes_upstream_through() {
        let params = init_params(&BlockSpec::new(BlockKind::Spa, 4, 3), 5).unwrap();
        let x = random_map(&mut Rng::new(1), 4, 4, 4);
        let u = random_map(&mut Rng::new(2), 4, 4, 4);
        let (_, tape) = forward_recorded(&params, &x).unwrap();
        let g = backward(&params, &tape, &u).unwrap();
        assert_eq!(g.input, u);
    }

    #[test]
    fn backward_rejects_mismatched_kind() {
        let spa = random_params(&BlockSpec::new(BlockKind::Spa, 4, 2), 1).unwrap();
        let nl = random_params(&BlockSpec::new(BlockKind::Nl, 4, 2), 1).unwrap();
        let x = random_map(&mut Rng::new(1), 4, 2, 2);
        let (_, tape) = forward_recorded(&spa, &x).unwrap();
        assert!(backward(&nl, &tape, &x).is_err());
    }

    #[test]
    fn spa_gradcheck_small_config() {
        let report = gradcheck(BlockKind::Spa, &GradCheckConfig::small(), 0).unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn se_gradcheck() {
        let report = gradcheck(BlockKind::Se, &GradCheckConfig::small(), 1).unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn nl_gradcheck_nine_positions() {
        let cfg = GradCheckConfig {
            height: 3,
            width: 3,
            ..GradCheckConfig::small()
        };
        let report = gradcheck(BlockKind::Nl, &cfg, 2).unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn spa_gradcheck_full_selection() {
        let cfg = GradCheckConfig {
            k: 16,
            ..GradCheckConfig::small()
        };
        let report = gradcheck(BlockKind::Spa, &cfg, 3).unwrap();
        assert_eq!(report.resamples, 0);
        assert!(report.pass, "{report}");
    }
}
