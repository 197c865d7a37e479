use super::*;
use crate::grad::tape::sigmoid;

fn random_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut rng = Rng::new(seed);
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.normal()).collect()).unwrap()
}

fn spa(seed: u64, c: usize, ci: usize, k: usize) -> SpaBlockParams {
    match random_params(&BlockSpec::new(BlockKind::Spa, c, k).with_inner(ci), seed).unwrap() {
        BlockParams::Spa(p) => p,
        _ => unreachable!(),
    }
}

fn nl(seed: u64, c: usize, ci: usize) -> NlBlockParams {
    match random_params(&BlockSpec::new(BlockKind::Nl, c, 1).with_inner(ci), seed).unwrap() {
        BlockParams::Nl(p) => p,
        _ => unreachable!(),
    }
}

#[test]
fn spa_affinity_identity_keys() {
    let a = spa_affinity(&ChannelMatrix::identity(2), ScaleMode::Channels).unwrap();
    let e = 0.5f64.exp();
    assert!((a.matrix.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    assert!((a.matrix.get(1, 0) - 1.0 / (e + 1.0)).abs() < 1e-15);
    assert!((a.matrix.get(0, 0) - 0.6225).abs() < 1e-4);
    assert_eq!(a.kind, AffinityKind::SpaChannel);
}

#[test]
fn spa_affinity_zero_keys_is_uniform() {
    let a = spa_affinity(&ChannelMatrix::zeros(4, 3), ScaleMode::Channels).unwrap();
    assert!(a.matrix.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn spa_logits_symmetric() {
    let mut rng = Rng::new(4);
    let keys = ChannelMatrix::new(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
    let l = spa_logits(&keys, 5.0).unwrap();
    for p in 0..5 {
        for q in 0..5 {
            assert!((l.get(p, q) - l.get(q, p)).abs() <= 1e-12);
        }
    }
}

#[test]
fn spa_zero_output_transform_is_identity() {
    let mut p = spa(1, 6, 3, 4);
    p.w_z = Conv1x1::zeros(6, 3);
    let x = random_map(2, 6, 3, 4);
    assert_eq!(spa_forward(&x, &p).unwrap(), x);
}

#[test]
fn spa_zero_input_zero_bias_gives_zero() {
    let mut p = spa(1, 4, 2, 3);
    p.theta.bias.fill(0.0);
    p.g.bias.fill(0.0);
    p.w_z.bias.fill(0.0);
    let x = FeatureMap::zeros(4, 3, 3);
    let y = spa_forward(&x, &p).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn spa_full_selection_matches_dense_gram() {
    let p = spa(7, 6, 3, 12);
    let x = random_map(8, 6, 3, 4);
    let (out, rec) = spa_forward_introspect(&x, &p).unwrap();

    // Independent route: no selection, full Gram of Q.
    let q = p.theta.apply_matrix(&x.flatten()).unwrap();
    let v = p.g.apply_matrix(&x.flatten()).unwrap();
    let mut logits = ChannelMatrix::zeros(3, 3);
    for a in 0..3 {
        for b in 0..3 {
            let s: f64 = (0..12).map(|t| q.get(a, t) * q.get(b, t)).sum();
            logits.set(a, b, s / 3.0);
        }
    }
    let attn = softmax_columns(&logits).unwrap();
    assert!(attn.max_abs_diff(&rec.affinity.matrix) < 1e-12);
    let mut y = ChannelMatrix::zeros(3, 12);
    for qc in 0..3 {
        for pos in 0..12 {
            let s: f64 = (0..3).map(|pc| attn.get(pc, qc) * v.get(pc, pos)).sum();
            y.set(qc, pos, s);
        }
    }
    let z = p.w_z.apply_matrix(&y).unwrap();
    let expected = x.flatten().add(&z).unwrap();
    assert!(out.flatten().max_abs_diff(&expected) < 1e-10);
}

#[test]
fn spa_rejects_k_beyond_positions() {
    let p = spa(1, 4, 2, 10);
    let x = random_map(1, 4, 3, 3);
    assert!(matches!(spa_forward(&x, &p), Err(Error::Argument(_))));
}

#[test]
fn spa_rejects_channel_mismatch() {
    let p = spa(1, 4, 2, 2);
    let x = random_map(1, 3, 3, 3);
    assert!(matches!(spa_forward(&x, &p), Err(Error::Shape(_))));
}

#[test]
fn spa_output_channels_are_convex_mixes() {
    let p = spa(3, 8, 4, 5);
    let x = random_map(3, 8, 4, 4);
    let (_, rec) = spa_forward_introspect(&x, &p).unwrap();
    let a = &rec.affinity.matrix;
    assert!(a.data().iter().all(|&v| v >= 0.0));
    assert!(rec.affinity.stochastic_error() < 1e-9);
    assert_eq!(rec.selection.as_ref().unwrap().k(), 5);
}

#[test]
fn nl_constant_input_gives_uniform_rows() {
    let p = nl(5, 4, 2);
    let x = FeatureMap::new(4, 3, 3, [0.3, -1.0, 2.0, 0.7].iter().flat_map(|&v| [v; 9]).collect())
        .unwrap();
    let (_, rec) = nl_forward_introspect(&x, &p).unwrap();
    assert_eq!(rec.affinity.matrix.shape(), [9, 9]);
    for v in rec.affinity.matrix.data() {
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
    }
}

#[test]
fn nl_zero_output_transform_is_identity() {
    let mut p = nl(5, 4, 2);
    p.w_z = Conv1x1::zeros(4, 2);
    let x = random_map(6, 4, 3, 3);
    assert_eq!(nl_forward(&x, &p).unwrap(), x);
}

#[test]
fn nl_single_position() {
    let p = nl(5, 4, 2);
    let x = random_map(6, 4, 1, 1);
    let (out, rec) = nl_forward_introspect(&x, &p).unwrap();
    assert_eq!(rec.affinity.matrix, ChannelMatrix::filled(1, 1, 1.0));
    let z = p.w_z.apply_matrix(&rec.v).unwrap();
    let expected = x.flatten().add(&z).unwrap();
    assert!(out.flatten().max_abs_diff(&expected) < 1e-15);
}

#[test]
fn se_examples() {
    let x = random_map(1, 4, 3, 3);
    let p = SeBlockParams {
        fc1: ChannelMatrix::filled(2, 4, 0.7),
        fc2: ChannelMatrix::zeros(4, 2),
        reduction: 2,
    };
    let y = se_forward(&x, &p).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert_eq!(*a, 0.5 * b);
    }
    assert!(se_forward(&FeatureMap::zeros(4, 3, 3), &p)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let (a, b) = (0.8, -1.3);
    let x = FeatureMap::new(2, 2, 2, vec![a, a, a, a, b, b, b, b]).unwrap();
    let p = SeBlockParams {
        fc1: ChannelMatrix::identity(2),
        fc2: ChannelMatrix::identity(2),
        reduction: 1,
    };
    let y = se_forward(&x, &p).unwrap();
    let (ga, gb) = (sigmoid(a.max(0.0)), sigmoid(b.max(0.0)));
    assert!((y.data()[0] - ga * a).abs() < 1e-15);
    assert!((y.data()[4] - gb * b).abs() < 1e-15);
    assert_eq!(gb, 0.5);
}

#[test]
fn gc_examples() {
    let x = random_map(2, 4, 3, 3);
    let mut p = match random_params(&BlockSpec::new(BlockKind::Gc, 4, 1).with_reduction(2), 3).unwrap() {
        BlockParams::Gc(p) => p,
        _ => unreachable!(),
    };

    // Zero mask: context is the spatial mean per channel.
    let mut uniform = p.clone();
    uniform.mask = Conv1x1::zeros(1, 4);
    let out = gc_forward(&x, &uniform).unwrap();
    let means: Vec<f64> = (0..4).map(|c| x.flatten().row(c).iter().sum::<f64>() / 9.0).collect();
    let hidden: Vec<f64> = (0..2)
        .map(|h| (0..4).map(|c| uniform.bottleneck_in.get(h, c) * means[c]).sum::<f64>().max(0.0))
        .collect();
    for c in 0..4 {
        let delta: f64 = (0..2).map(|h| uniform.bottleneck_out.get(c, h) * hidden[h]).sum();
        for pos in 0..9 {
            let got = out.data()[c * 9 + pos];
            assert!((got - (x.data()[c * 9 + pos] + delta)).abs() < 1e-12);
        }
    }

    // Single position: context is that position's vector whatever the mask.
    let x1 = random_map(4, 4, 1, 1);
    let mut tape = GradTape::inference();
    let xv = tape.leaf(x1.flatten());
    p.graph(&mut tape, xv, 0).unwrap();
    let ctx = tape.value(Var::nth(3)).clone();
    assert_eq!(ctx.data(), x1.data());

    p.bottleneck_out = ChannelMatrix::zeros(4, 2);
    assert_eq!(gc_forward(&x, &p).unwrap(), x);
}

#[test]
fn init_is_deterministic_and_identity() {
    for kind in BlockKind::ALL {
        let spec = BlockSpec::new(kind, 8, 4);
        assert_eq!(init_params(&spec, 3).unwrap(), init_params(&spec, 3).unwrap());
        assert_ne!(init_params(&spec, 3).unwrap(), init_params(&spec, 4).unwrap());
    }
    let x = random_map(1, 8, 4, 4);
    let fresh = init_params(&BlockSpec::new(BlockKind::Spa, 8, 4), 9).unwrap();
    assert_eq!(fresh.forward(&x).unwrap(), x);
    let fresh = init_params(&BlockSpec::new(BlockKind::Gc, 8, 4), 9).unwrap();
    assert_eq!(fresh.forward(&x).unwrap(), x);
}

#[test]
fn init_scales_by_fan_in() {
    let c = 100;
    let p = init_params(&BlockSpec::new(BlockKind::Spa, c, 1).with_inner(100), 17).unwrap();
    let theta = &p.tensors()[0].1;
    assert_eq!(theta.len(), 10_000);
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    let var = theta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / theta.len() as f64;
    let target = 1.0 / c as f64;
    assert!((var - target).abs() <= 0.2 * target, "var {var}");
}

#[test]
fn output_shape_matches_input_for_all_blocks() {
    for kind in BlockKind::ALL {
        for (c, h, w) in [(1, 1, 1), (3, 2, 5), (8, 4, 4)] {
            let spec = BlockSpec::new(kind, c, 1).with_reduction(2);
            let params = random_params(&spec, 1).unwrap();
            let x = random_map(2, c, h, w);
            let y = params.forward(&x).unwrap();
            assert_eq!(y.shape(), x.shape(), "{kind}");
            assert!(y.is_finite());
        }
    }
}

#[test]
fn block_kind_and_scale_parse() {
    for kind in BlockKind::ALL {
        assert_eq!(kind.name().parse::<BlockKind>().unwrap(), kind);
    }
    assert!("xx".parse::<BlockKind>().is_err());
    assert_eq!("sqrt".parse::<ScaleMode>().unwrap(), ScaleMode::SqrtChannels);
    assert_eq!(ScaleMode::Positions.divisor(8, 3), 3.0);
}
