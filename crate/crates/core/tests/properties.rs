use proptest::prelude::*;

use spanet_core::bench::spa_cost;
use spanet_core::blocks::{random_params, spa_logits, BlockSpec};
use spanet_core::grad::{backward, dense_spa_gradients, forward_recorded};
use spanet_core::sps::{saliency_scores, select};
use spanet_core::tensor::{conv1x1_apply, matmul, softmax_columns, square_sum_columns, top_k_indices};
use spanet_core::trainer::{cosine_lr, TrainConfig};
use spanet_core::{BlockKind, BlockParams, ChannelMatrix, Conv1x1, FeatureMap, Rng};

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> ChannelMatrix {
    ChannelMatrix::new(rows, cols, (0..rows * cols).map(|_| std * rng.normal()).collect()).unwrap()
}

fn random_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.normal()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn top_k_equals_stable_sort_prefix(scores in prop::collection::vec(0u8..6, 1..40), k_frac in 0.0f64..1.0) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        prop_assert_eq!(top_k_indices(&scores, k).unwrap(), order[..k].to_vec());
    }

    #[test]
    fn softmax_columns_are_stochastic(seed: u64, rows in 1usize..8, cols in 1usize..8, scale in prop::sample::select(vec![1.0, 100.0, 1e4])) {
        let mut rng = Rng::new(seed);
        let s = softmax_columns(&random_matrix(&mut rng, rows, cols, scale)).unwrap();
        for c in 0..cols {
            let col = s.column(c);
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn matmul_is_associative(seed: u64, a in 1usize..6, b in 1usize..6, c in 1usize..6, d in 1usize..6) {
        let mut rng = Rng::new(seed);
        let (x, y, z) = (random_matrix(&mut rng, a, b, 1.0), random_matrix(&mut rng, b, c, 1.0), random_matrix(&mut rng, c, d, 1.0));
        let left = matmul(&matmul(&x, &y).unwrap(), &z).unwrap();
        let right = matmul(&x, &matmul(&y, &z).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-10);
    }

    #[test]
    fn conv1x1_is_matmul_plus_bias(seed: u64, cin in 1usize..5, cout in 1usize..5, h in 1usize..4, w in 1usize..4) {
        let mut rng = Rng::new(seed);
        let k = Conv1x1::new(random_matrix(&mut rng, cout, cin, 1.0), (0..cout).map(|_| rng.normal()).collect()).unwrap();
        let x = random_map(&mut rng, cin, h, w);
        let mut expect = matmul(&k.weight, &x.flatten()).unwrap();
        for o in 0..cout {
            for p in 0..h * w {
                expect.set(o, p, expect.get(o, p) + k.bias[o]);
            }
        }
        prop_assert_eq!(conv1x1_apply(&k, &x).unwrap().flatten(), expect);
    }

    #[test]
    fn square_sums_scale_quadratically(seed: u64, rows in 1usize..6, cols in 1usize..10, lambda in -10.0f64..10.0) {
        let mut rng = Rng::new(seed);
        let m = random_matrix(&mut rng, rows, cols, 1.0);
        let base = square_sum_columns(&m).unwrap();
        let scaled = square_sum_columns(&m.scaled(lambda)).unwrap();
        for (s, b) in scaled.iter().zip(&base) {
            prop_assert!((s - lambda * lambda * b).abs() <= 1e-12 * s.abs().max(1e-300));
        }
    }

    #[test]
    fn selection_follows_column_permutation(seed: u64, rows in 1usize..5, cols in 2usize..20, k_frac in 0.0f64..1.0) {
        let mut rng = Rng::new(seed);
        let q = random_matrix(&mut rng, rows, cols, 1.0);
        let k = 1 + ((cols - 1) as f64 * k_frac) as usize;
        let mut perm: Vec<usize> = (0..cols).collect();
        rng.shuffle(&mut perm);
        // column j of the permuted matrix is column perm[j] of q
        let mut permuted = ChannelMatrix::zeros(rows, cols);
        for r in 0..rows {
            for (j, &src) in perm.iter().enumerate() {
                permuted.set(r, j, q.get(r, src));
            }
        }
        let a = select(&q, k).unwrap().indices;
        let b: Vec<usize> = select(&permuted, k).unwrap().indices.into_iter().map(|j| perm[j]).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn selection_grows_by_prefix_and_ignores_scale(seed: u64, rows in 1usize..5, cols in 2usize..20) {
        let mut rng = Rng::new(seed);
        let q = random_matrix(&mut rng, rows, cols, 1.0);
        let full = select(&q, cols).unwrap().indices;
        for k in 1..=cols {
            let sel = select(&q, k).unwrap().indices;
            prop_assert_eq!(&sel[..], &full[..k]);
            for lambda in [0.1, 7.3] {
                prop_assert_eq!(&select(&q.scaled(lambda), k).unwrap().indices, &sel);
            }
        }
        prop_assert_eq!(saliency_scores(&q).unwrap().len(), cols);
    }

    #[test]
    fn spa_logits_are_symmetric(seed: u64, ci in 1usize..6, k in 1usize..10) {
        let mut rng = Rng::new(seed);
        let l = spa_logits(&random_matrix(&mut rng, ci, k, 1.0), ci as f64).unwrap();
        for i in 0..ci {
            for j in 0..ci {
                prop_assert!((l.get(i, j) - l.get(j, i)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn spa_cost_is_monotone(n in 1u64..5000, ci in 1u64..200, k in 1u64..200) {
        let base = spa_cost(n, ci, k).unwrap().dominant_multiplies;
        prop_assert!(spa_cost(n + 1, ci, k).unwrap().dominant_multiplies >= base);
        prop_assert!(spa_cost(n, ci + 1, k).unwrap().dominant_multiplies >= base);
        prop_assert!(spa_cost(n, ci, k + 1).unwrap().dominant_multiplies >= base);
    }

    #[test]
    fn cosine_schedule_never_increases(epochs in 1usize..200, lr_max in 1e-4f64..2.0, frac in 0.0f64..1.0) {
        let cfg = TrainConfig { epochs, lr_max, lr_min: lr_max * frac, ..TrainConfig::default() };
        for t in 0..epochs {
            prop_assert!(cosine_lr(t + 1, &cfg).unwrap() <= cosine_lr(t, &cfg).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn backward_is_linear_in_upstream(seed: u64, kind in prop::sample::select(BlockKind::ALL.to_vec()), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = BlockSpec::new(kind, 4, 3).with_inner(2).with_reduction(2);
        let params = random_params(&spec, seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(1));
        let x = random_map(&mut rng, 4, 3, 3);
        let (u1, u2) = (random_map(&mut rng, 4, 3, 3), random_map(&mut rng, 4, 3, 3));
        let mix = FeatureMap::new(4, 3, 3, u1.data().iter().zip(u2.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (_, tape) = forward_recorded(&params, &x).unwrap();
        let g1 = backward(&params, &tape, &u1).unwrap();
        let g2 = backward(&params, &tape, &u2).unwrap();
        let gm = backward(&params, &tape, &mix).unwrap();
        for i in 0..x.data().len() {
            let expect = a * g1.input.data()[i] + b * g2.input.data()[i];
            prop_assert!((gm.input.data()[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
        for ((_, p1), ((_, p2), (_, pm))) in g1.params.iter().zip(g2.params.iter().zip(&gm.params)) {
            for ((v1, v2), vm) in p1.iter().zip(p2).zip(pm) {
                let expect = a * v1 + b * v2;
                prop_assert!((vm - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn full_selection_gradient_matches_dense_gram(seed: u64, c in 2usize..6, h in 1usize..4, w in 1usize..4) {
        let n = h * w;
        let spec = BlockSpec::new(BlockKind::Spa, c, n).with_inner(c.div_ceil(2));
        let params = random_params(&spec, seed).unwrap();
        let BlockParams::Spa(spa) = &params else { unreachable!() };
        let mut rng = Rng::new(seed ^ 77);
        let x = random_map(&mut rng, c, h, w);
        let up = random_map(&mut rng, c, h, w);
        let (_, tape) = forward_recorded(&params, &x).unwrap();
        let sparse = backward(&params, &tape, &up).unwrap();
        let (dx, dense) = dense_spa_gradients(spa, &x, &up).unwrap();
        prop_assert!(sparse.input.flatten().max_abs_diff(&dx) < 1e-8);
        for ((_, s), d) in sparse.params.iter().zip(&dense) {
            for (a, b) in s.iter().zip(d) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
