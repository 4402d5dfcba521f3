//! Row-major dense `f64` matrix used for feature tables and the SVM.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-column affine standardisation fitted on one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    /// Population standard deviation, with 0 replaced by 1.
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::Empty("training matrix"));
        }
        let n = train.rows() as f64;
        let mut mean = vec![0.0; train.cols()];
        for i in 0..train.rows() {
            for (m, v) in mean.iter_mut().zip(train.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; train.cols()];
        for i in 0..train.rows() {
            for ((s, v), m) in var.iter_mut().zip(train.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "matrix has {} columns, transform was fitted on {}",
                m.cols(),
                self.mean.len()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same transform to `train` and to every
/// matrix in `others`.
pub fn zscore_fit_apply(train: &Matrix, others: &[&Matrix]) -> Result<(Matrix, Vec<Matrix>, ZScore)> {
    let z = ZScore::fit(train)?;
    let t = z.apply(train)?;
    let rest = others.iter().map(|m| z.apply(m)).collect::<Result<_>>()?;
    Ok((t, rest, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_value_column() {
        let m = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let (t, _, z) = zscore_fit_apply(&m, &[]).unwrap();
        // Population std of {1,2,3} is sqrt(2/3); 1/sqrt(2/3) = 1.224744871...
        let e = (1.5f64).sqrt();
        assert_eq!(z.std, vec![(2.0f64 / 3.0).sqrt()]);
        for (a, b) in t.data().iter().zip([-e, 0.0, e]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.data()[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_column_centres_to_zero() {
        let m = Matrix::new(3, 2, vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap();
        let (t, _, z) = zscore_fit_apply(&m, &[]).unwrap();
        assert_eq!(z.std[0], 1.0);
        assert!((0..3).all(|i| t.get(i, 0) == 0.0));
    }

    #[test]
    fn held_out_uses_training_statistics() {
        let train = Matrix::new(2, 1, vec![0.0, 2.0]).unwrap();
        let test = Matrix::new(1, 1, vec![3.0]).unwrap();
        let (_, rest, _) = zscore_fit_apply(&train, &[&test]).unwrap();
        assert_eq!(rest[0].data(), &[2.0]);
        let wrong = Matrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(zscore_fit_apply(&train, &[&wrong]).is_err());
        assert!(ZScore::fit(&Matrix::zeros(0, 1)).is_err());
    }
}
