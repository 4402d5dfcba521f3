//! Batch normalisation over the channel axis (axis 1) of `[B, C, ...]`.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

/// Per-channel batch statistics of a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(NnError::Shape(format!(
            "batchnorm over {channels} channels got input {shape:?}"
        )));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Training mode when `running` is `None` (batch statistics are used and
/// returned); inference mode normalises with the supplied running stats.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&[T], &[T])>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormSaved<T>, Option<BatchStats<T>>)> {
    let c = gamma.numel();
    if beta.numel() != c {
        return Err(NnError::Shape("batchnorm gamma/beta length mismatch".into()));
    }
    let (b, inner) = layout(x.shape(), c)?;
    let data = x.data();
    let (mean, var, stats) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        None => {
            let count = b * inner;
            let n = T::from_usize(count).unwrap();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    let off = (bi * c + ch) * inner;
                    s += data[off..off + inner].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut ss = T::zero();
                for bi in 0..b {
                    let off = (bi * c + ch) * inner;
                    for &v in &data[off..off + inner] {
                        ss += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = ss / n;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(stats))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); data.len()];
    let mut y = vec![T::zero(); data.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * inner;
            let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + inner {
                let h = (data[i] - m) * is;
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    let saved = BatchNormSaved {
        xhat: Tensor::new(x.shape(), xhat)?,
        inv_std,
        training: running.is_none(),
    };
    Ok((Tensor::new(x.shape(), y)?, saved, stats))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    saved: &BatchNormSaved<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.numel();
    let shape = dy.shape();
    let b = shape[0];
    let inner: usize = shape[2..].iter().product();
    let n = T::from_usize(b * inner).unwrap();
    let xh = saved.xhat.data();
    let g = dy.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * inner;
            for i in off..off + inner {
                dgamma[ch] += g[i] * xh[i];
                dbeta[ch] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * inner;
            let scale = gamma.data()[ch] * saved.inv_std[ch];
            if saved.training {
                let (sg, sgx) = (dbeta[ch], dgamma[ch]);
                for i in off..off + inner {
                    dx[i] = scale * (g[i] - sg / n - xh[i] * sgx / n);
                }
            } else {
                for i in off..off + inner {
                    dx[i] = scale * g[i];
                }
            }
        }
    }
    (
        Tensor::new(shape, dx).unwrap(),
        Tensor::new(&[c], dgamma).unwrap(),
        Tensor::new(&[c], dbeta).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardised_batch_passes_through() {
        // Two samples per channel: ±1 has mean 0 and population variance 1.
        let x = Tensor::new(&[2, 1, 1], vec![1.0f64, -1.0]).unwrap();
        let gamma = Tensor::full(&[1], 1.0);
        let beta = Tensor::zeros(&[1]);
        let (y, _, stats) = batchnorm_forward(&x, &gamma, &beta, None, 1e-5).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![0.0]);
        assert_eq!(stats.var, vec![1.0]);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let x = Tensor::from_fn(&[3, 2, 4], |i| (i as f32).sin());
        let gamma = Tensor::zeros(&[2]);
        let beta = Tensor::full(&[2], 5.0f32);
        let (y, _, _) = batchnorm_forward(&x, &gamma, &beta, None, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn single_sample_zero_variance_is_finite() {
        let x = Tensor::new(&[1, 1, 1], vec![3.0f32]).unwrap();
        let (y, _, _) =
            batchnorm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), None, 1e-5).unwrap();
        assert!(y.all_finite());
        assert_eq!(y.data(), &[0.0]);
    }
}
