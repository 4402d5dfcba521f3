//! Raw forward/backward kernels over tensors. The graph in
//! [`crate::graph`] records which of these ran and replays their backward
//! halves in reverse order.

pub mod conv;
pub mod norm;
pub mod pool;

use crate::error::{NnError, Result};

/// `floor((input + 2 * padding - kernel) / stride) + 1`, rejecting
/// geometries with no valid output position.
pub fn output_len(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    let err = || NnError::OutputLength {
        op,
        input,
        kernel,
        stride,
        padding,
    };
    if kernel == 0 || stride == 0 || input + 2 * padding < kernel {
        return Err(err());
    }
    Ok((input + 2 * padding - kernel) / stride + 1)
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Range of output positions `o` for which `o * stride + offset - padding`
/// lands inside `[0, len)`.
pub(crate) fn valid_range(
    len: usize,
    out_len: usize,
    stride: usize,
    offset: usize,
    padding: usize,
) -> (usize, usize) {
    let lo = if offset >= padding {
        0
    } else {
        ceil_div(padding - offset, stride)
    };
    let hi = if len + padding > offset {
        ceil_div(len + padding - offset, stride).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}
