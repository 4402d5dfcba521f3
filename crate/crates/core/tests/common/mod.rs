//! Independent reference implementations used by the integration tests.
//! None of these call into the crate under test.

#![allow(dead_code)]

use rand::Rng;

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `-log(exp(cos(z_i, z_j)/t) / sum_{k != i} exp(cos(z_i, z_k)/t))`
fn pair_term(z: &[&[f64]], i: usize, j: usize, t: f64) -> f64 {
    let num = (cos(z[i], z[j]) / t).exp();
    let den: f64 = (0..z.len()).filter(|&k| k != i).map(|k| (cos(z[i], z[k]) / t).exp()).sum();
    -(num / den).ln()
}

/// Direct summation over the interleaved 2N vectors.
pub fn nt_xent(za: &[Vec<f64>], zb: &[Vec<f64>], t: f64) -> f64 {
    let n = za.len();
    let mut z: Vec<&[f64]> = Vec::with_capacity(2 * n);
    for k in 0..n {
        z.push(&za[k]);
        z.push(&zb[k]);
    }
    let mut total = 0.0;
    for k in 0..n {
        total += pair_term(&z, 2 * k, 2 * k + 1, t) + pair_term(&z, 2 * k + 1, 2 * k, t);
    }
    total / (2 * n) as f64
}

/// Four-element denominators per sample.
pub fn diverse(ti: &[Vec<f64>], tj: &[Vec<f64>], si: &[Vec<f64>], sj: &[Vec<f64>], t: f64) -> f64 {
    let n = ti.len();
    let mut total = 0.0;
    for k in 0..n {
        let z: [&[f64]; 4] = [&ti[k], &tj[k], &si[k], &sj[k]];
        total += pair_term(&z, 0, 1, t) + pair_term(&z, 1, 0, t) + pair_term(&z, 2, 3, t) + pair_term(&z, 3, 2, t);
    }
    total / (4 * n) as f64
}

/// Accuracy, Cohen's kappa and macro F1 from a row-major `k x k` count
/// matrix (rows = truth). Classes with no support and no predictions
/// score F1 = 0.
pub fn metrics(k: usize, counts: &[u64]) -> (f64, f64, f64) {
    let at = |i: usize, j: usize| counts[i * k + j] as f64;
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let diag: f64 = (0..k).map(|i| at(i, i)).sum();
    let po = diag / n;
    let mut pe = 0.0;
    for c in 0..k {
        let row: f64 = (0..k).map(|j| at(c, j)).sum();
        let col: f64 = (0..k).map(|i| at(i, c)).sum();
        pe += row * col;
    }
    pe /= n * n;
    let kappa = if pe == 1.0 { 0.0 } else { (po - pe) / (1.0 - pe) };
    let mut f1_sum = 0.0;
    for c in 0..k {
        let tp = at(c, c);
        let fp: f64 = (0..k).filter(|&i| i != c).map(|i| at(i, c)).sum();
        let fn_: f64 = (0..k).filter(|&j| j != c).map(|j| at(c, j)).sum();
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    (po, kappa, f1_sum / k as f64)
}

pub fn svm_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let mut f = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for (xi, &yi) in x.iter().zip(y) {
        let m = 1.0 - yi * (xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b);
        if m > 0.0 {
            f += c * m * m;
        }
    }
    f
}

fn solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut out = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * out[c]).sum();
        out[r] = (rhs[r] - s) / a[r][r];
    }
    out
}

/// Damped generalised Newton on the squared-hinge primal. The objective
/// is piecewise quadratic, so once the active set settles the step is
/// exact and the result is accurate to rounding.
pub fn svm_newton(x: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64, f64) {
    let d = x[0].len();
    let mut v = vec![0.0; d + 1];
    let aug = |xi: &[f64]| -> Vec<f64> { xi.iter().copied().chain(std::iter::once(1.0)).collect() };
    let obj = |v: &[f64]| svm_objective(x, y, &v[..d], v[d], c);
    for _ in 0..200 {
        let mut g: Vec<f64> = v.clone();
        g[d] = 0.0;
        let mut h = vec![vec![0.0; d + 1]; d + 1];
        for i in 0..d {
            h[i][i] = 1.0;
        }
        h[d][d] = 1e-12;
        for (xi, &yi) in x.iter().zip(y) {
            let xa = aug(xi);
            let m = 1.0 - yi * xa.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            if m > 0.0 {
                for p in 0..=d {
                    g[p] -= 2.0 * c * m * yi * xa[p];
                    for q in 0..=d {
                        h[p][q] += 2.0 * c * xa[p] * xa[q];
                    }
                }
            }
        }
        if g.iter().all(|gi| gi.abs() < 1e-13) {
            break;
        }
        let step = solve(h, g.iter().map(|gi| -gi).collect());
        let f0 = obj(&v);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = v.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            if obj(&cand) <= f0 || t < 1e-12 {
                v = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let f = obj(&v);
    (v[..d].to_vec(), v[d], f)
}

/// Minimum of the 1-D two-point objective on a grid refined around the
/// best point, as a check that does not rely on derivatives.
pub fn grid_minimum(f: impl Fn(f64, f64) -> f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    let (mut cw, mut cb, mut span) = ((lo + hi) / 2.0, 0.0, (hi - lo) / 2.0);
    let mut best = (cw, cb, f(cw, cb));
    for _ in 0..40 {
        for i in -20..=20 {
            for j in -20..=20 {
                let w = cw + span * i as f64 / 20.0;
                let b = cb + span * j as f64 / 20.0;
                let v = f(w, b);
                if v < best.2 {
                    best = (w, b, v);
                }
            }
        }
        cw = best.0;
        cb = best.1;
        span *= 0.25;
    }
    best
}
