use std::fs::File;

use spanet_core::blocks::{read_params, write_params, BlockSpec};
use spanet_core::dataio::{read_pgm, synth_blobs, write_pgm};
use spanet_core::trainer::{sweep_csv, sweep_k, train, Insertion, TinyCnn, TrainConfig};
use spanet_core::{BlockKind, BlockParams};

#[test]
fn trained_block_survives_a_file_round_trip() {
    let data = synth_blobs(48, 2, 8, 8, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        block: Some(BlockKind::Spa),
        k: 4,
        ..TrainConfig::default()
    };
    let mut net = TinyCnn::from_config(&cfg, 1, 2, 8, 8).unwrap();
    train(&mut net, &data, &[], &cfg).unwrap();
    let (insert, params) = net.block.clone().unwrap();
    assert!(params.tensors().iter().any(|(_, t)| t.iter().any(|&v| v != 0.0)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("block.spab");
    write_params(&params, File::create(&path).unwrap()).unwrap();
    let back = read_params(File::open(&path).unwrap()).unwrap();
    assert_eq!(back, params);

    let reloaded = net.without_block().with_block(back, insert).unwrap();
    for s in &data {
        assert_eq!(reloaded.logits(&s.image).unwrap(), net.logits(&s.image).unwrap());
    }
}

#[test]
fn introspected_spa_affinity_renders_as_image() {
    let spec = BlockSpec::new(BlockKind::Spa, 8, 5).with_inner(6);
    let params = spanet_core::blocks::random_params(&spec, 3).unwrap();
    let x = synth_blobs(1, 2, 4, 4, 0).unwrap().remove(0).image;
    let lifted = spanet_core::FeatureMap::new(8, 4, 4, (0..8).flat_map(|_| x.data().to_vec()).collect()).unwrap();
    let (out, rec) = params.forward_introspect(&lifted).unwrap();
    assert_eq!(out.shape(), [8, 4, 4]);
    assert_eq!(rec.affinity.matrix.shape(), [6, 6]);
    assert!(rec.affinity.stochastic_error() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    let img = write_pgm(&rec.affinity.matrix, &path, 4).unwrap();
    assert_eq!(read_pgm(&path).unwrap(), img);
    assert_eq!((img.width, img.height), (24, 24));
}

#[test]
fn sweep_runs_every_feasible_k() {
    let data = synth_blobs(16, 2, 8, 8, 2).unwrap();
    let base = TrainConfig {
        epochs: 1,
        insert: Insertion::AfterConv1,
        ..TrainConfig::default()
    };
    let rows = sweep_k(&[2, 4, 8, 16, 32], &base, &data, &data).unwrap();
    // 8x8 input leaves 16 positions after the first pool
    assert_eq!(
        rows.iter().map(|r| r.feasible).collect::<Vec<_>>(),
        [true, true, true, true, false]
    );
    for r in rows.iter().filter(|r| r.feasible) {
        assert!(r.train_acc.unwrap().is_finite() && r.eval_acc.unwrap().is_finite());
    }
    assert_eq!(sweep_csv(&rows).lines().count(), 6);
    assert!(matches!(
        TinyCnn::from_config(&TrainConfig { block: Some(BlockKind::Se), ..base }, 1, 2, 8, 8)
            .unwrap()
            .block,
        Some((_, BlockParams::Se(_)))
    ));
}
