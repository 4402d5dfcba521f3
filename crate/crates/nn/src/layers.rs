//! Parameterised layers. Each layer only stores parameter ids; values live
//! in a [`ParamStore`] so models can be cast, checkpointed and reloaded by
//! name.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

/// Bias-free 1-D convolution; always followed by batchnorm in this crate's
/// models.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let w = he_normal(&[out_channels, in_channels, kernel], in_channels * kernel, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.conv1d(x, w, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.conv2d(x, w, self.stride, self.padding)
    }
}

/// Batchnorm over axis 1 with running statistics stored as buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// A deferred running-statistics update produced by a training-mode
/// forward pass.
#[derive(Debug, Clone)]
pub struct RunningUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub count: usize,
}

impl<T: Scalar> RunningUpdate<T> {
    /// `running = (1 - momentum) * running + momentum * batch`, with the
    /// unbiased batch variance.
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = T::from_f64_lossy(BN_MOMENTUM);
        let keep = T::one() - m;
        let correction = if self.count > 1 {
            T::from_usize(self.count).unwrap() / T::from_usize(self.count - 1).unwrap()
        } else {
            T::one()
        };
        for (r, &b) in store.value_mut(self.mean_id).data_mut().iter_mut().zip(&self.batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.value_mut(self.var_id).data_mut().iter_mut().zip(&self.batch_var) {
            *r = keep * *r + m * b * correction;
        }
    }
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                ParamKind::Buffer,
            ),
        }
    }

    /// In training mode the batch statistics are pushed onto `updates`; the
    /// caller applies them once the step is committed.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        updates: &mut Vec<RunningUpdate<T>>,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = T::from_f64_lossy(BN_EPS);
        if g.is_training() {
            let (y, stats) = g.batch_norm(x, gamma, beta, None, eps)?;
            let stats = stats.expect("training-mode batchnorm returns statistics");
            updates.push(RunningUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                batch_mean: stats.mean,
                batch_var: stats.var,
                count: stats.count,
            });
            Ok(y)
        } else {
            let rm = store.value(self.running_mean).data();
            let rv = store.value(self.running_var).data();
            Ok(g.batch_norm(x, gamma, beta, Some((rm, rv)), eps)?.0)
        }
    }
}

/// Dense layer `y = x wᵀ + b`, PyTorch-style uniform init.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = uniform(&[out_features, in_features], bound, rng);
        let b = uniform(&[out_features], bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: store.add(format!("{name}.bias"), b, ParamKind::Trainable),
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}
