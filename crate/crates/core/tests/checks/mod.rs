//! Checks that exercise the crate and are shared by several test targets.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sleepssl::encoders::{MultiViewModel, ProjectionVars, ResNetVariant};
use sleepssl::losses::{total_loss, LossConfig, ProjectionSet};
use sleepssl::views::StftConfig;
use sleepssl_nn::gradcheck::{check_gradients, relative_error};
use sleepssl_nn::{Graph, Mode, ParamKind, Tensor};

pub const GRAD_STEP: f64 = 1e-5;

/// Smaller step for the full model. Perturbing an early layer moves
/// thousands of activations at once, and a larger step pushes some of them
/// across a ReLU or max-pool switch.
pub const CHAIN_STEP: f64 = 1e-7;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Maximum relative error of every differentiable primitive for one seed.
pub fn primitive_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor<f64>>, mode: Mode, rng: &mut ChaCha8Rng, f: &dyn Fn(&mut Graph<f64>, &[sleepssl_nn::Var]) -> sleepssl_nn::Result<sleepssl_nn::Var>| {
        let r = check_gradients(&inputs, mode, GRAD_STEP, rng, |g, v| f(g, v)).unwrap();
        out.push((name, r.max_relative_error));
    };
    let x = randn(&[2, 3, 11], &mut rng);
    let w = randn(&[4, 3, 5], &mut rng);
    run("conv1d", vec![x.clone(), w], Mode::Train, &mut rng, &|g, v| g.conv1d(v[0], v[1], 2, 2));
    let x2 = randn(&[2, 2, 6, 5], &mut rng);
    let w2 = randn(&[3, 2, 3, 3], &mut rng);
    run("conv2d", vec![x2.clone(), w2], Mode::Train, &mut rng, &|g, v| g.conv2d(v[0], v[1], 1, 1));
    run("maxpool1d", vec![x.clone()], Mode::Train, &mut rng, &|g, v| g.maxpool1d(v[0], 5, 2, 2));
    run("maxpool2d", vec![x2], Mode::Train, &mut rng, &|g, v| g.maxpool2d(v[0], 2, 2, 0));
    let bx = randn(&[4, 3, 7], &mut rng);
    let gamma = randn(&[3], &mut rng);
    let beta = randn(&[3], &mut rng);
    run("batchnorm (train)", vec![bx.clone(), gamma.clone(), beta.clone()], Mode::Train, &mut rng, &|g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
    });
    run("batchnorm (eval)", vec![bx, gamma, beta], Mode::Eval, &mut rng, &|g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], Some((&[0.1, -0.2, 0.3], &[1.5, 0.7, 2.0])), 1e-5)?.0)
    });
    let dx = randn(&[3, 4], &mut rng);
    let dw = randn(&[5, 4], &mut rng);
    let db = randn(&[5], &mut rng);
    run("linear", vec![dx.clone(), dw, db], Mode::Train, &mut rng, &|g, v| g.linear(v[0], v[1], Some(v[2])));
    run("relu", vec![dx.clone()], Mode::Train, &mut rng, &|g, v| Ok(g.relu(v[0])));
    let other = randn(&[3, 4], &mut rng);
    run("add", vec![dx.clone(), other.clone()], Mode::Train, &mut rng, &|g, v| g.add(v[0], v[1]));
    run("concat", vec![dx, other], Mode::Train, &mut rng, &|g, v| g.concat(v[0], v[1]));
    run("global_avg_pool", vec![x], Mode::Train, &mut rng, &|g, v| g.global_avg_pool(v[0]));
    let logits = randn(&[4, 5], &mut rng);
    run("softmax_cross_entropy", vec![logits], Mode::Train, &mut rng, &|g, v| {
        g.softmax_cross_entropy(v[0], &[0, 4, 2, 2])
    });
    out
}

/// Analytic gradient of the total loss against central differences over
/// every entry of the six projection matrices.
pub fn total_loss_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim) = (3, 5);
    let mut mats: Vec<Tensor<f64>> = (0..6).map(|_| randn(&[n, dim], &mut rng)).collect();
    let cfg = LossConfig::default();
    let build = |m: &[Tensor<f64>]| ProjectionSet {
        zt1: m[0].clone(),
        zt2: m[1].clone(),
        zs1: m[2].clone(),
        zs2: m[3].clone(),
        zf1: m[4].clone(),
        zf2: m[5].clone(),
    };
    let analytic = total_loss(&build(&mats), &cfg).unwrap().grads;
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        for j in 0..n * dim {
            let orig = mats[i].data()[j];
            mats[i].data_mut()[j] = orig + GRAD_STEP;
            let fp = total_loss(&build(&mats), &cfg).unwrap().total;
            mats[i].data_mut()[j] = orig - GRAD_STEP;
            let fm = total_loss(&build(&mats), &cfg).unwrap().total;
            mats[i].data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic[i].data()[j], (fp - fm) / (2.0 * GRAD_STEP)));
        }
    }
    worst
}

fn projections(g: &Graph<f64>, z: &ProjectionVars) -> ProjectionSet<f64> {
    ProjectionSet {
        zt1: g.value(z.zt1).clone(),
        zt2: g.value(z.zt2).clone(),
        zs1: g.value(z.zs1).clone(),
        zs2: g.value(z.zs2).clone(),
        zf1: g.value(z.zf1).clone(),
        zf2: g.value(z.zf2).clone(),
    }
}

pub struct ChainCheck {
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// Trainable tensors whose gradient is identically zero.
    pub untouched: Vec<String>,
}

/// Total loss through both encoders and all six heads in 64-bit: the full
/// backward pass against central differences on randomly chosen
/// parameter entries, plus a check that every trainable tensor receives
/// gradient.
pub fn model_chain_check(seed: u64, coordinates: usize) -> ChainCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MultiViewModel::<f64>::new(ResNetVariant::ResNet18, StftConfig::default(), seed);
    let b = 4;
    let inputs: Vec<Tensor<f64>> = vec![
        randn(&[b, 1, 3000], &mut rng),
        randn(&[b, 1, 3000], &mut rng),
        randn(&[b, 1, 129, 43], &mut rng),
        randn(&[b, 1, 129, 43], &mut rng),
    ];
    let cfg = LossConfig::default();
    let backward = |m: &MultiViewModel<f64>| -> (sleepssl_nn::Gradients<f64>, Graph<f64>) {
        let mut g = Graph::new(Mode::Train);
        let v: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let z = m.forward_views(&mut g, v[0], v[1], v[2], v[3], &mut Vec::new()).unwrap();
        let set = projections(&g, &z);
        let t = total_loss(&set, &cfg).unwrap();
        let seeds: Vec<_> = z.as_array().into_iter().zip(t.grads).collect();
        let grads = g.backward(&seeds);
        (grads, g)
    };
    let (grads, g) = backward(&model);
    model.store.zero_grad();
    g.accumulate_param_grads(&grads, &mut model.store);
    let trainable: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Trainable)
        .map(|(id, p)| (id, p.name.clone(), p.grad.clone()))
        .collect();
    let untouched = trainable
        .iter()
        .filter(|(_, _, g)| g.data().iter().all(|&v| v == 0.0))
        .map(|(_, n, _)| n.clone())
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..coordinates {
        let (id, _, grad) = &trainable[rng.gen_range(0..trainable.len())];
        let j = rng.gen_range(0..grad.numel());
        let orig = model.store.value(*id).data()[j];
        let eval = |m: &mut MultiViewModel<f64>, v: f64| {
            m.store.value_mut(*id).data_mut()[j] = v;
            let mut g = Graph::new(Mode::Train);
            let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let z = m.forward_views(&mut g, vars[0], vars[1], vars[2], vars[3], &mut Vec::new()).unwrap();
            let set = projections(&g, &z);
            total_loss(&set, &cfg).unwrap().total
        };
        let fp = eval(&mut model, orig + CHAIN_STEP);
        let fm = eval(&mut model, orig - CHAIN_STEP);
        model.store.value_mut(*id).data_mut()[j] = orig;
        let num = (fp - fm) / (2.0 * CHAIN_STEP);
        worst = worst.max(relative_error(grad.data()[j], num));
    }
    ChainCheck {
        max_relative_error: worst,
        coordinates,
        untouched,
    }
}
