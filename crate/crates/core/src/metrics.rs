//! Confusion matrices, Acc / Cohen's κ / macro-F1, and fold aggregation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Dimension(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(Self { k, counts })
    }

    pub fn from_predictions(k: usize, truth: &[u8], predicted: &[u8]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dimension("truth and prediction lengths differ".into()));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= k || p as usize >= k {
                return Err(Error::InvalidArgument(format!("class {} outside 0..{k}", t.max(p))));
            }
            cm.counts[t as usize * k + p as usize] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|j| self.get(c, j)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, c)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension("confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn nonempty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix")),
            n => Ok(n as f64),
        }
    }

    /// Classes with neither true nor predicted samples.
    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.k).filter(|&c| self.row_sum(c) == 0 && self.col_sum(c) == 0).collect()
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.trace() as f64 / cm.nonempty()?)
}

/// `(p_o - p_e) / (1 - p_e)`, or 0 when `p_e = 1`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.nonempty()?;
    let po = cm.trace() as f64 / n;
    let pe = (0..cm.k)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if pe == 1.0 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Per-class F1 with 0 for any zero denominator.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let pred = cm.col_sum(c) as f64;
            let real = cm.row_sum(c) as f64;
            let precision = if pred > 0.0 { tp / pred } else { 0.0 };
            let recall = if real > 0.0 { tp / real } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    Ok(per_class_f1(cm).iter().sum::<f64>() / cm.k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl FoldMetrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(&confusion)?,
            kappa: cohen_kappa(&confusion)?,
            macro_f1: macro_f1(&confusion)?,
            confusion,
        })
    }

    pub fn from_predictions(k: usize, truth: &[u8], predicted: &[u8]) -> Result<Self> {
        Self::from_confusion(ConfusionMatrix::from_predictions(k, truth, predicted)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub title: String,
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
    pub mean_kappa: f64,
    pub mean_macro_f1: f64,
    /// Sum of the fold matrices.
    pub overall: ConfusionMatrix,
    /// Provenance and run notes, emitted in insertion order.
    pub provenance: Vec<(String, String)>,
}

impl EvalReport {
    pub fn add_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.push((key.into(), value.into()));
    }

    pub fn provenance(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// One row per fold plus a `mean` row; provenance as `#` comments.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        let k = self.overall.classes();
        out.push_str("fold,n,acc,kappa,mf1");
        for i in 0..k {
            for j in 0..k {
                let _ = write!(out, ",cm_{i}_{j}");
            }
        }
        out.push('\n');
        let mut line = |name: &str, n: u64, acc: f64, kappa: f64, mf1: f64, cm: &ConfusionMatrix| {
            let _ = write!(out, "{name},{n},{acc:.6},{kappa:.6},{mf1:.6}");
            for c in cm.counts() {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        };
        for (i, f) in self.folds.iter().enumerate() {
            line(&i.to_string(), f.confusion.total(), f.accuracy, f.kappa, f.macro_f1, &f.confusion);
        }
        line(
            "mean",
            self.overall.total(),
            self.mean_accuracy,
            self.mean_kappa,
            self.mean_macro_f1,
            &self.overall,
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.title);
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "  {k}: {v}");
        }
        let _ = writeln!(out, "{:>6} {:>7} {:>8} {:>8} {:>8}", "fold", "n", "Acc", "kappa", "MF1");
        for (i, f) in self.folds.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>6} {:>7} {:>8.4} {:>8.4} {:>8.4}",
                i,
                f.confusion.total(),
                f.accuracy,
                f.kappa,
                f.macro_f1
            );
        }
        let _ = writeln!(
            out,
            "{:>6} {:>7} {:>8.4} {:>8.4} {:>8.4}",
            "mean",
            self.overall.total(),
            self.mean_accuracy,
            self.mean_kappa,
            self.mean_macro_f1
        );
        let k = self.overall.classes();
        out.push_str("confusion (rows true, cols predicted)\n");
        for i in 0..k {
            let row: Vec<String> = (0..k).map(|j| format!("{:>6}", self.overall.get(i, j))).collect();
            let _ = writeln!(out, "  {}", row.join(" "));
        }
        out
    }
}

/// Arithmetic means over folds and the summed confusion matrix.
pub fn aggregate(title: impl Into<String>, folds: Vec<FoldMetrics>) -> Result<EvalReport> {
    let first = folds.first().ok_or(Error::Empty("fold list"))?;
    let mut overall = ConfusionMatrix::new(first.confusion.classes());
    for f in &folds {
        overall.add(&f.confusion)?;
    }
    let n = folds.len() as f64;
    let mean = |f: fn(&FoldMetrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
    let mut report = EvalReport {
        title: title.into(),
        mean_accuracy: mean(|f| f.accuracy),
        mean_kappa: mean(|f| f.kappa),
        mean_macro_f1: mean(|f| f.macro_f1),
        overall,
        folds,
        provenance: Vec::new(),
    };
    let absent: Vec<String> = report
        .folds
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let a = f.confusion.absent_classes();
            (!a.is_empty()).then(|| format!("fold{i}:{a:?}"))
        })
        .collect();
    if !absent.is_empty() {
        report.add_provenance("absent_classes_scored_f1_0", absent.join(" "));
    }
    Ok(report)
}
