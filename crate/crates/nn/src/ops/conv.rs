//! Convolutions lowered to GEMM through im2col, one sample at a time.

use super::{output_len, valid_range};
use crate::error::{NnError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub len: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_len: usize,
}

impl Conv1dGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if input.len() != 3 || weight.len() != 3 {
            return Err(NnError::Shape(format!(
                "conv1d expects [B,Cin,L] and [Cout,Cin,k], got {input:?} and {weight:?}"
            )));
        }
        if input[1] != weight[1] {
            return Err(NnError::Shape(format!(
                "conv1d channel mismatch: input has {}, weight expects {}",
                input[1], weight[1]
            )));
        }
        let out_len = output_len("conv1d", input[2], weight[2], stride, padding)?;
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            len: input[2],
            out_channels: weight[0],
            kernel: weight[2],
            stride,
            padding,
            out_len,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel
    }
}

fn im2col_1d<T: Scalar>(x: &[T], g: &Conv1dGeometry, col: &mut [T]) {
    let lout = g.out_len;
    for c in 0..g.in_channels {
        let xc = &x[c * g.len..(c + 1) * g.len];
        for j in 0..g.kernel {
            let row = &mut col[(c * g.kernel + j) * lout..(c * g.kernel + j + 1) * lout];
            let (lo, hi) = valid_range(g.len, lout, g.stride, j, g.padding);
            row[..lo].fill(T::zero());
            row[hi..].fill(T::zero());
            if g.stride == 1 {
                let start = lo + j - g.padding;
                row[lo..hi].copy_from_slice(&xc[start..start + (hi - lo)]);
            } else {
                for (o, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                    *r = xc[o * g.stride + j - g.padding];
                }
            }
        }
    }
}

fn col2im_1d<T: Scalar>(col: &[T], g: &Conv1dGeometry, dx: &mut [T]) {
    let lout = g.out_len;
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * g.len..(c + 1) * g.len];
        for j in 0..g.kernel {
            let row = &col[(c * g.kernel + j) * lout..(c * g.kernel + j + 1) * lout];
            let (lo, hi) = valid_range(g.len, lout, g.stride, j, g.padding);
            for (o, &r) in row.iter().enumerate().take(hi).skip(lo) {
                dxc[o * g.stride + j - g.padding] += r;
            }
        }
    }
}

pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv1dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let in_size = g.in_channels * g.len;
    let out_size = g.out_channels * g.out_len;
    let mut out = vec![T::zero(); g.batch * out_size];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * g.out_len]
    };
    for b in 0..g.batch {
        let xb = &x.data()[b * in_size..(b + 1) * in_size];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col_1d(xb, &g, &mut col);
            &col
        };
        gemm(
            g.out_channels,
            g.out_len,
            g.col_rows(),
            w.data(),
            false,
            cols,
            false,
            T::zero(),
            &mut out[b * out_size..(b + 1) * out_size],
        );
    }
    Tensor::new(&[g.batch, g.out_channels, g.out_len], out)
}

/// Returns `(d input, d weight)`; the input gradient is skipped when
/// `need_input_grad` is false.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = Conv1dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let in_size = g.in_channels * g.len;
    let out_size = g.out_channels * g.out_len;
    let rows = g.col_rows();
    let mut dw = vec![T::zero(); g.out_channels * rows];
    let mut dx = if need_input_grad {
        vec![T::zero(); g.batch * in_size]
    } else {
        Vec::new()
    };
    let mut col = vec![T::zero(); rows * g.out_len];
    for b in 0..g.batch {
        let xb = &x.data()[b * in_size..(b + 1) * in_size];
        let dyb = &dy.data()[b * out_size..(b + 1) * out_size];
        {
            let cols: &[T] = if g.is_pointwise() {
                xb
            } else {
                im2col_1d(xb, &g, &mut col);
                &col
            };
            gemm(g.out_channels, rows, g.out_len, dyb, false, cols, true, T::one(), &mut dw);
        }
        if need_input_grad {
            let dxb = &mut dx[b * in_size..(b + 1) * in_size];
            if g.is_pointwise() {
                gemm(rows, g.out_len, g.out_channels, w.data(), true, dyb, false, T::zero(), dxb);
            } else {
                gemm(rows, g.out_len, g.out_channels, w.data(), true, dyb, false, T::zero(), &mut col);
                col2im_1d(&col, &g, dxb);
            }
        }
    }
    let dx = if need_input_grad {
        Some(Tensor::new(x.shape(), dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::new(w.shape(), dw)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(NnError::Shape(format!(
                "conv2d expects [B,Cin,H,W] and [Cout,Cin,kh,kw], got {input:?} and {weight:?}"
            )));
        }
        if input[1] != weight[1] {
            return Err(NnError::Shape(format!(
                "conv2d channel mismatch: input has {}, weight expects {}",
                input[1], weight[1]
            )));
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            out_channels: weight[0],
            kernel_h: weight[2],
            kernel_w: weight[3],
            stride,
            padding,
            out_h: output_len("conv2d", input[2], weight[2], stride, padding)?,
            out_w: output_len("conv2d", input[3], weight[3], stride, padding)?,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col_2d<T: Scalar>(x: &[T], g: &Conv2dGeometry, col: &mut [T]) {
    let plane = g.out_plane();
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kernel_h {
            let (olo, ohi) = valid_range(h, g.out_h, g.stride, ki, g.padding);
            for kj in 0..g.kernel_w {
                let (plo, phi) = valid_range(w, g.out_w, g.stride, kj, g.padding);
                let r = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let row = &mut col[r * plane..(r + 1) * plane];
                row.fill(T::zero());
                for oi in olo..ohi {
                    let ii = oi * g.stride + ki - g.padding;
                    for oj in plo..phi {
                        row[oi * g.out_w + oj] = xc[ii * w + oj * g.stride + kj - g.padding];
                    }
                }
            }
        }
    }
}

fn col2im_2d<T: Scalar>(col: &[T], g: &Conv2dGeometry, dx: &mut [T]) {
    let plane = g.out_plane();
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kernel_h {
            let (olo, ohi) = valid_range(h, g.out_h, g.stride, ki, g.padding);
            for kj in 0..g.kernel_w {
                let (plo, phi) = valid_range(w, g.out_w, g.stride, kj, g.padding);
                let r = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let row = &col[r * plane..(r + 1) * plane];
                for oi in olo..ohi {
                    let ii = oi * g.stride + ki - g.padding;
                    for oj in plo..phi {
                        dxc[ii * w + oj * g.stride + kj - g.padding] += row[oi * g.out_w + oj];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Conv2dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let in_size = g.in_channels * g.height * g.width;
    let out_size = g.out_channels * g.out_plane();
    let mut out = vec![T::zero(); g.batch * out_size];
    let mut col = vec![T::zero(); g.col_rows() * g.out_plane()];
    for b in 0..g.batch {
        im2col_2d(&x.data()[b * in_size..(b + 1) * in_size], &g, &mut col);
        gemm(
            g.out_channels,
            g.out_plane(),
            g.col_rows(),
            w.data(),
            false,
            &col,
            false,
            T::zero(),
            &mut out[b * out_size..(b + 1) * out_size],
        );
    }
    Tensor::new(&[g.batch, g.out_channels, g.out_h, g.out_w], out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = Conv2dGeometry::new(x.shape(), w.shape(), stride, padding)?;
    let in_size = g.in_channels * g.height * g.width;
    let out_size = g.out_channels * g.out_plane();
    let rows = g.col_rows();
    let mut dw = vec![T::zero(); g.out_channels * rows];
    let mut dx = if need_input_grad {
        vec![T::zero(); g.batch * in_size]
    } else {
        Vec::new()
    };
    let mut col = vec![T::zero(); rows * g.out_plane()];
    for b in 0..g.batch {
        let dyb = &dy.data()[b * out_size..(b + 1) * out_size];
        im2col_2d(&x.data()[b * in_size..(b + 1) * in_size], &g, &mut col);
        gemm(g.out_channels, rows, g.out_plane(), dyb, false, &col, true, T::one(), &mut dw);
        if need_input_grad {
            gemm(rows, g.out_plane(), g.out_channels, w.data(), true, dyb, false, T::zero(), &mut col);
            col2im_2d(&col, &g, &mut dx[b * in_size..(b + 1) * in_size]);
        }
    }
    let dx = if need_input_grad {
        Some(Tensor::new(x.shape(), dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::new(w.shape(), dw)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Direct nested-loop cross-correlation.
    fn conv1d_loops(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> Vec<f64> {
        let (b, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
        let (cout, k) = (w.dim(0), w.dim(2));
        let lout = (l + 2 * p - k) / s + 1;
        let mut out = vec![0.0; b * cout * lout];
        for bi in 0..b {
            for co in 0..cout {
                for o in 0..lout {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for j in 0..k {
                            let pos = (o * s + j) as isize - p as isize;
                            if pos >= 0 && (pos as usize) < l {
                                acc += x.data()[(bi * cin + ci) * l + pos as usize]
                                    * w.data()[(co * cin + ci) * k + j];
                            }
                        }
                    }
                    out[(bi * cout + co) * lout + o] = acc;
                }
            }
        }
        out
    }

    fn conv2d_loops(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> Vec<f64> {
        let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;
        let mut out = vec![0.0; b * cout * oh * ow];
        for bi in 0..b {
            for co in 0..cout {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for a in 0..kh {
                                for c in 0..kw {
                                    let y = (i * s + a) as isize - p as isize;
                                    let xx = (j * s + c) as isize - p as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                        acc += x.data()[((bi * cin + ci) * h + y as usize) * wd + xx as usize]
                                            * w.data()[((co * cin + ci) * kh + a) * kw + c];
                                    }
                                }
                            }
                        }
                        out[((bi * cout + co) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_loop_oracle() {
        for (seed, (b, cin, l, cout, k, s, p)) in [
            (2, 3, 17, 4, 5, 2, 2),
            (1, 1, 30, 2, 7, 1, 3),
            (3, 2, 11, 3, 1, 2, 0),
            (2, 2, 9, 2, 1, 1, 0),
        ]
        .into_iter()
        .enumerate()
        {
            let x = Tensor::new(&[b, cin, l], lcg(seed as u64, b * cin * l)).unwrap();
            let w = Tensor::new(&[cout, cin, k], lcg(seed as u64 + 100, cout * cin * k)).unwrap();
            let y = conv1d_forward(&x, &w, s, p).unwrap();
            let want = conv1d_loops(&x, &w, s, p);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = Tensor::new(&[1, 1, 5], vec![1.0f32, -2.0, 3.0, 0.5, 9.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1], vec![1.0f32]).unwrap();
        let y = conv1d_forward(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_rejects_bad_geometry() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4]);
        assert!(conv1d_forward(&x, &Tensor::zeros(&[1, 3, 1]), 1, 0).is_err());
        assert!(conv1d_forward(&x, &Tensor::zeros(&[1, 2, 9]), 1, 0).is_err());
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let x = Tensor::new(&[2, 2, 7, 5], lcg(7, 140)).unwrap();
        let w = Tensor::new(&[3, 2, 3, 3], lcg(8, 54)).unwrap();
        for (s, p) in [(1, 1), (2, 0), (1, 0)] {
            let y = conv2d_forward(&x, &w, s, p).unwrap();
            let want = conv2d_loops(&x, &w, s, p);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
