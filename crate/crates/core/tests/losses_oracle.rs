mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sleepssl::losses::*;
use sleepssl_nn::Tensor;

fn tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::new(&[rows.len(), rows[0].len()], common::flatten(rows)).unwrap()
}

fn set(rows: &[Vec<Vec<f64>>; 6]) -> ProjectionSet<f64> {
    ProjectionSet {
        zt1: tensor(&rows[0]),
        zt2: tensor(&rows[1]),
        zs1: tensor(&rows[2]),
        zs2: tensor(&rows[3]),
        zf1: tensor(&rows[4]),
        zf2: tensor(&rows[5]),
    }
}

fn random_set(seed: u64, n: usize, dim: usize) -> [Vec<Vec<f64>>; 6] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| common::random_rows(&mut rng, n, dim))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nt_xent_matches_direct_sum(seed in any::<u64>(), n in 1usize..=8, dim in 1usize..12, tau in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_rows(&mut rng, n, dim);
        let b = common::random_rows(&mut rng, n, dim);
        let got = nt_xent(&tensor(&a), &tensor(&b), tau).unwrap().loss;
        prop_assert!((got - common::nt_xent(&a, &b, tau)).abs() <= 1e-9);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn diverse_matches_direct_sum(seed in any::<u64>(), n in 1usize..=8, dim in 1usize..12, tau in 0.5f64..20.0) {
        let z = random_set(seed, n, dim);
        let got = diverse_loss(&tensor(&z[0]), &tensor(&z[1]), &tensor(&z[2]), &tensor(&z[3]), tau).unwrap().loss;
        prop_assert!((got - common::diverse(&z[0], &z[1], &z[2], &z[3], tau)).abs() <= 1e-9);
    }

    #[test]
    fn positive_rescale_changes_nothing(seed in any::<u64>(), n in 1usize..=8, scale in 0.01f64..100.0) {
        let z = random_set(seed, n, 6);
        let scaled: [Vec<Vec<f64>>; 6] = z.clone().map(|m| m.into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect());
        let cfg = LossConfig::default();
        let a = total_loss(&set(&z), &cfg).unwrap().components;
        let b = total_loss(&set(&scaled), &cfg).unwrap().components;
        for (x, y) in [(a.tt, b.tt), (a.ss, b.ss), (a.ff, b.ff), (a.d, b.d)] {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn common_batch_permutation_changes_nothing(seed in any::<u64>(), n in 1usize..=8) {
        let z = random_set(seed, n, 5);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let permuted: [Vec<Vec<f64>>; 6] = z.clone().map(|m| order.iter().map(|&i| m[i].clone()).collect());
        let cfg = LossConfig::default();
        let a = total_loss(&set(&z), &cfg).unwrap().components;
        let b = total_loss(&set(&permuted), &cfg).unwrap().components;
        for (x, y) in [(a.tt, b.tt), (a.ss, b.ss), (a.ff, b.ff)] {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!((a.d - b.d).abs() <= 1e-12);
    }

    #[test]
    fn total_is_weighted_sum_of_components(seed in any::<u64>(), l1 in 0.0f64..3.0, l2 in 0.0f64..3.0) {
        let z = random_set(seed, 4, 8);
        let cfg = LossConfig { lambda1: l1, lambda2: l2, ..LossConfig::default() };
        let t = total_loss(&set(&z), &cfg).unwrap();
        let c = t.components;
        prop_assert!((t.total - (l1 * (c.tt + c.ss + c.ff) + l2 * c.d)).abs() <= 1e-9);
        prop_assert!((c.tt - common::nt_xent(&z[0], &z[1], 1.0)).abs() <= 1e-9);
        prop_assert!((c.d - common::diverse(&z[0], &z[1], &z[2], &z[3], 10.0)).abs() <= 1e-9);
    }
}

#[test]
fn single_pair_nt_xent_is_exactly_zero() {
    let a = vec![vec![0.3, -1.2, 4.0]];
    let b = vec![vec![-2.0, 0.1, 0.7]];
    assert_eq!(nt_xent(&tensor(&a), &tensor(&b), 1.0).unwrap().loss, 0.0);
}

#[test]
fn single_sample_total_is_weighted_diverse_term() {
    let z = random_set(5, 1, 4);
    let t = total_loss(&set(&z), &LossConfig::default()).unwrap();
    assert_eq!(t.total, 2.0 * t.components.d);
}

#[test]
fn orthonormal_two_pairs() {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let a = vec![e1.clone(), e2.clone()];
    let got = nt_xent(&tensor(&a), &tensor(&a), 1.0).unwrap().loss;
    // Each anchor sees its twin (cos 1) and two orthogonal rows (cos 0).
    let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
    assert!((got - expected).abs() < 1e-12);
    assert!((got - common::nt_xent(&a, &a, 1.0)).abs() < 1e-12);
}

#[test]
fn diverse_with_orthogonal_views() {
    let a = vec![vec![1.0, 0.0]];
    let b = vec![vec![0.0, 1.0]];
    let got = diverse_loss(&tensor(&a), &tensor(&a), &tensor(&b), &tensor(&b), 10.0).unwrap().loss;
    let expected = -(0.1f64.exp() / (0.1f64.exp() + 2.0)).ln();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn zero_weights_zero_total() {
    let z = random_set(9, 3, 4);
    let cfg = LossConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..LossConfig::default()
    };
    assert_eq!(total_loss(&set(&z), &cfg).unwrap().total, 0.0);
}

#[test]
fn zero_row_is_flagged_not_nan() {
    let a = vec![vec![0.0, 0.0], vec![1.0, 2.0]];
    let b = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
    let out = nt_xent(&tensor(&a), &tensor(&b), 1.0).unwrap();
    assert!(out.degenerate);
    assert!(out.loss.is_finite());
    assert!(out.grads.iter().all(|g| g.all_finite()));
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), (0.0, true));
    assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).0, -1.0);
}
