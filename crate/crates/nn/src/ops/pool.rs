//! Max pooling with implicit −∞ padding. Each output remembers the flat
//! input index it came from; ties go to the first index in scan order.

use super::output_len;
use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn maxpool1d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.rank() != 3 {
        return Err(NnError::Shape(format!(
            "maxpool1d expects [B,C,L], got {:?}",
            x.shape()
        )));
    }
    let (b, c, l) = (x.dim(0), x.dim(1), x.dim(2));
    let lout = output_len("maxpool1d", l, kernel, stride, padding)?;
    if padding >= kernel {
        return Err(NnError::Shape(format!(
            "maxpool1d padding {padding} must be smaller than kernel {kernel}"
        )));
    }
    let mut out = Vec::with_capacity(b * c * lout);
    let mut arg = Vec::with_capacity(b * c * lout);
    let data = x.data();
    for row in 0..b * c {
        let base = row * l;
        let xs = &data[base..base + l];
        for o in 0..lout {
            let start = (o * stride) as isize - padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + kernel as isize) as usize).min(l);
            let mut best_i = lo;
            let mut best = xs[lo];
            for (i, &v) in xs.iter().enumerate().take(hi).skip(lo + 1) {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            out.push(best);
            arg.push((base + best_i) as u32);
        }
    }
    Ok((Tensor::new(&[b, c, lout], out)?, arg))
}

pub fn maxpool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(NnError::Shape(format!(
            "maxpool2d expects [B,C,H,W], got {:?}",
            x.shape()
        )));
    }
    if padding >= kernel {
        return Err(NnError::Shape(format!(
            "maxpool2d padding {padding} must be smaller than kernel {kernel}"
        )));
    }
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = output_len("maxpool2d", h, kernel, stride, padding)?;
    let ow = output_len("maxpool2d", w, kernel, stride, padding)?;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..oh {
            let si = (oi * stride) as isize - padding as isize;
            let (ilo, ihi) = (si.max(0) as usize, ((si + kernel as isize) as usize).min(h));
            for oj in 0..ow {
                let sj = (oj * stride) as isize - padding as isize;
                let (jlo, jhi) = (sj.max(0) as usize, ((sj + kernel as isize) as usize).min(w));
                let mut best_i = base + ilo * w + jlo;
                let mut best = data[best_i];
                for i in ilo..ihi {
                    for j in jlo..jhi {
                        let idx = base + i * w + j;
                        if data[idx] > best {
                            best = data[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    Ok((Tensor::new(&[b, c, oh, ow], out)?, arg))
}

/// Scatters output gradients back to the recorded argmax positions.
pub fn maxpool_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i as usize] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pool() {
        let x = Tensor::new(&[1, 2, 3], vec![1.0f32, 5.0, 2.0, -1.0, 0.0, 3.0]).unwrap();
        let (y, _) = maxpool1d_forward(&x, 1, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ties_route_to_first_index() {
        let x = Tensor::new(&[1, 1, 4], vec![2.0f64; 4]).unwrap();
        let (y, arg) = maxpool1d_forward(&x, 4, 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0]);
        assert_eq!(arg, vec![0]);
        let dx = maxpool_backward(x.shape(), &arg, &Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn padded_windows_ignore_padding() {
        let x = Tensor::new(&[1, 1, 3], vec![-5.0f64, -7.0, -1.0]).unwrap();
        let (y, _) = maxpool1d_forward(&x, 3, 1, 1).unwrap();
        assert_eq!(y.data(), &[-5.0, -1.0, -1.0]);
    }

    #[test]
    fn pool2d_halves() {
        let x = Tensor::from_fn(&[1, 1, 5, 3], |i| i as f64);
        let (y, arg) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 1]);
        assert_eq!(y.data(), &[4.0, 10.0]);
        assert_eq!(arg, vec![4, 10]);
    }
}
