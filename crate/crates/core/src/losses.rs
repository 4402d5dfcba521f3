//! Contrastive objectives on projection outputs, with analytic gradients.
//!
//! Both losses share one shape: rows are split into groups, row `i` is
//! paired with row `i ^ 1`, and its softmax denominator runs over every
//! other row of its group. NT-Xent uses the whole interleaved batch as a
//! single group; the diverse loss uses one group of four rows per sample.

use sleepssl_nn::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub tau_d: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            tau_d: 10.0,
            lambda1: 1.0,
            lambda2: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau_d > 0.0) {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine similarity; a zero-norm argument yields 0 and sets the flag.
pub fn cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb), false)
}

#[derive(Debug, Clone)]
pub struct PairLoss<T> {
    pub loss: T,
    /// Gradient per input matrix, in argument order.
    pub grads: Vec<Tensor<T>>,
    /// Some row had zero norm.
    pub degenerate: bool,
}

fn check_inputs<T: Scalar>(zs: &[&Tensor<T>]) -> Result<(usize, usize)> {
    let shape = zs[0].shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("projection of shape {shape:?} is not [N, dim]")));
    }
    if shape[0] == 0 {
        return Err(Error::Empty("projection batch"));
    }
    if zs.iter().any(|z| z.shape() != shape) {
        return Err(Error::Dimension("projection matrices differ in shape".into()));
    }
    Ok((shape[0], shape[1]))
}

/// Loss and gradient for `rows` (each `dim` long) arranged in consecutive
/// groups of `group` rows. Returns the mean of the per-anchor terms.
fn grouped_pair_loss<T: Scalar>(rows: &[T], dim: usize, group: usize, tau: f64) -> (T, Vec<T>, bool) {
    let n = rows.len() / dim;
    let inv_tau = T::from_f64_lossy(1.0 / tau);
    let mut degenerate = false;
    let mut unit = vec![T::zero(); rows.len()];
    let mut norms = vec![T::zero(); n];
    for i in 0..n {
        let r = &rows[i * dim..(i + 1) * dim];
        let norm = r.iter().map(|&v| v * v).sum::<T>().sqrt();
        norms[i] = norm;
        if norm > T::zero() {
            for (u, &v) in unit[i * dim..(i + 1) * dim].iter_mut().zip(r) {
                *u = v / norm;
            }
        } else {
            degenerate = true;
        }
    }
    let mut total = T::zero();
    let mut grad_unit = vec![T::zero(); rows.len()];
    let mut sim = vec![T::zero(); group];
    let mut weight = vec![T::zero(); group];
    for g0 in (0..n).step_by(group) {
        for a in 0..group {
            let i = g0 + a;
            let ui = &unit[i * dim..(i + 1) * dim];
            for b in 0..group {
                if b != a {
                    let uk = &unit[(g0 + b) * dim..(g0 + b + 1) * dim];
                    sim[b] = ui.iter().zip(uk).map(|(&x, &y)| x * y).sum::<T>() * inv_tau;
                }
            }
            let max = (0..group)
                .filter(|&b| b != a)
                .map(|b| sim[b])
                .fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for b in (0..group).filter(|&b| b != a) {
                weight[b] = (sim[b] - max).exp();
                denom += weight[b];
            }
            let p = a ^ 1;
            total += denom.ln() + max - sim[p];
            // d l_i / d s_ik = softmax_k - [k = positive]
            for b in (0..group).filter(|&b| b != a) {
                let mut c = weight[b] / denom;
                if b == p {
                    c -= T::one();
                }
                let c = c * inv_tau;
                let k = g0 + b;
                for d in 0..dim {
                    let uk = unit[k * dim + d];
                    let ui = unit[i * dim + d];
                    grad_unit[i * dim + d] += c * uk;
                    grad_unit[k * dim + d] += c * ui;
                }
            }
        }
    }
    let scale = T::one() / T::from_usize(n).unwrap();
    // Back through u = z / |z|: dz = (du - u (u . du)) / |z|.
    let mut grad = vec![T::zero(); rows.len()];
    for i in 0..n {
        if norms[i] == T::zero() {
            continue;
        }
        let u = &unit[i * dim..(i + 1) * dim];
        let du = &grad_unit[i * dim..(i + 1) * dim];
        let proj: T = u.iter().zip(du).map(|(&a, &b)| a * b).sum();
        for d in 0..dim {
            grad[i * dim + d] = (du[d] - u[d] * proj) / norms[i] * scale;
        }
    }
    (total * scale, grad, degenerate)
}

/// NT-Xent over the interleaved batch `[a_0, b_0, a_1, b_1, ...]`.
pub fn nt_xent<T: Scalar>(za: &Tensor<T>, zb: &Tensor<T>, tau: f64) -> Result<PairLoss<T>> {
    let (n, dim) = check_inputs(&[za, zb])?;
    let mut rows = Vec::with_capacity(2 * n * dim);
    for k in 0..n {
        rows.extend_from_slice(za.row(k));
        rows.extend_from_slice(zb.row(k));
    }
    let (loss, grad, degenerate) = grouped_pair_loss(&rows, dim, 2 * n, tau);
    let mut ga = Vec::with_capacity(n * dim);
    let mut gb = Vec::with_capacity(n * dim);
    for k in 0..n {
        ga.extend_from_slice(&grad[2 * k * dim..(2 * k + 1) * dim]);
        gb.extend_from_slice(&grad[(2 * k + 1) * dim..(2 * k + 2) * dim]);
    }
    Ok(PairLoss {
        loss,
        grads: vec![Tensor::new(&[n, dim], ga)?, Tensor::new(&[n, dim], gb)?],
        degenerate,
    })
}

/// Per-sample contrast between the two time and two spectrogram
/// projections of the same epoch.
pub fn diverse_loss<T: Scalar>(
    zt_i: &Tensor<T>,
    zt_j: &Tensor<T>,
    zs_i: &Tensor<T>,
    zs_j: &Tensor<T>,
    tau_d: f64,
) -> Result<PairLoss<T>> {
    let inputs = [zt_i, zt_j, zs_i, zs_j];
    let (n, dim) = check_inputs(&inputs)?;
    let mut rows = Vec::with_capacity(4 * n * dim);
    for k in 0..n {
        for z in inputs {
            rows.extend_from_slice(z.row(k));
        }
    }
    let (loss, grad, degenerate) = grouped_pair_loss(&rows, dim, 4, tau_d);
    let mut grads: Vec<Vec<T>> = vec![Vec::with_capacity(n * dim); 4];
    for k in 0..n {
        for (v, g) in grads.iter_mut().enumerate() {
            let r = 4 * k + v;
            g.extend_from_slice(&grad[r * dim..(r + 1) * dim]);
        }
    }
    Ok(PairLoss {
        loss,
        grads: grads
            .into_iter()
            .map(|g| Tensor::new(&[n, dim], g))
            .collect::<std::result::Result<_, _>>()?,
        degenerate,
    })
}

/// Outputs of the six projection heads for one batch.
#[derive(Debug, Clone)]
pub struct ProjectionSet<T> {
    pub zt1: Tensor<T>,
    pub zt2: Tensor<T>,
    pub zs1: Tensor<T>,
    pub zs2: Tensor<T>,
    pub zf1: Tensor<T>,
    pub zf2: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub tt: f64,
    pub ss: f64,
    pub ff: f64,
    pub d: f64,
}

impl LossComponents {
    pub fn combine(&self, cfg: &LossConfig) -> f64 {
        cfg.lambda1 * (self.tt + self.ff + self.ss) + cfg.lambda2 * self.d
    }
}

#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub total: f64,
    pub components: LossComponents,
    /// Gradients of the total w.r.t. zt1, zt2, zs1, zs2, zf1, zf2.
    pub grads: [Tensor<T>; 6],
    pub degenerate: bool,
}

pub fn total_loss<T: Scalar>(z: &ProjectionSet<T>, cfg: &LossConfig) -> Result<TotalLoss<T>> {
    cfg.validate()?;
    let tt = nt_xent(&z.zt1, &z.zt2, cfg.tau)?;
    let ss = nt_xent(&z.zs1, &z.zs2, cfg.tau)?;
    let ff = nt_xent(&z.zf1, &z.zf2, cfg.tau)?;
    let d = diverse_loss(&z.zt1, &z.zt2, &z.zs1, &z.zs2, cfg.tau_d)?;
    let components = LossComponents {
        tt: tt.loss.to_f64_lossy(),
        ss: ss.loss.to_f64_lossy(),
        ff: ff.loss.to_f64_lossy(),
        d: d.loss.to_f64_lossy(),
    };
    let l1 = T::from_f64_lossy(cfg.lambda1);
    let l2 = T::from_f64_lossy(cfg.lambda2);
    let mix = |a: &Tensor<T>, b: &Tensor<T>| -> Tensor<T> {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| l1 * x + l2 * y).collect();
        Tensor::new(a.shape(), data).unwrap()
    };
    let scaled = |a: &Tensor<T>| a.map(|x| l1 * x);
    let grads = [
        mix(&tt.grads[0], &d.grads[0]),
        mix(&tt.grads[1], &d.grads[1]),
        mix(&ss.grads[0], &d.grads[2]),
        mix(&ss.grads[1], &d.grads[3]),
        scaled(&ff.grads[0]),
        scaled(&ff.grads[1]),
    ];
    Ok(TotalLoss {
        total: components.combine(cfg),
        components,
        grads,
        degenerate: tt.degenerate || ss.degenerate || ff.degenerate || d.degenerate,
    })
}
