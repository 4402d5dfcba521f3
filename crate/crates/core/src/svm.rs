//! L2-regularised linear SVM, primal form, solved by full-batch gradient
//! descent with backtracking. Multiclass problems use one-vs-rest.

use std::str::FromStr;

use crate::edf::ClassId;
use crate::epoching::FoldAssignment;
use crate::error::{Error, Result};
use crate::io::{self, Meta, Reader};
use crate::matrix::{Matrix, ZScore};
use crate::metrics::{aggregate, EvalReport, FoldMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvmLoss {
    /// `max(0, 1 - y f(x))^2`
    SquaredHinge,
    /// `max(0, 1 - y f(x))`, minimised with subgradients.
    Hinge,
}

impl FromStr for SvmLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_hinge" => Ok(SvmLoss::SquaredHinge),
            "hinge" => Ok(SvmLoss::Hinge),
            other => Err(Error::InvalidArgument(format!("unknown SVM loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop when the max-norm of the gradient falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub loss: SvmLoss,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-4,
            max_iter: 1000,
            loss: SvmLoss::SquaredHinge,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.tolerance > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "SVM needs C > 0, tolerance > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before the first step, then updated by the exact change of
    /// every accepted step.
    pub history: Vec<f64>,
}

/// `½|w|² + C Σ loss(1 - y (w·x + b))`; the bias is not regularised.
pub fn objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, cfg: &SvmConfig) -> f64 {
    objective_from_scores(&scores_of(x, w, b), y, w, cfg)
}

fn objective_from_scores(scores: &[f64], y: &[f64], w: &[f64], cfg: &SvmConfig) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let data: f64 = scores
        .iter()
        .zip(y)
        .map(|(s, y)| {
            let m = 1.0 - y * s;
            match cfg.loss {
                SvmLoss::SquaredHinge if m > 0.0 => m * m,
                SvmLoss::Hinge if m > 0.0 => m,
                _ => 0.0,
            }
        })
        .sum();
    reg + cfg.c * data
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scores_of(x: &Matrix, w: &[f64], b: f64) -> Vec<f64> {
    (0..x.rows()).map(|i| dot(x.row(i), w) + b).collect()
}

fn gradient(x: &Matrix, y: &[f64], scores: &[f64], w: &[f64], cfg: &SvmConfig) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let m = 1.0 - y[i] * scores[i];
        if m > 0.0 {
            let coef = match cfg.loss {
                SvmLoss::SquaredHinge => -2.0 * cfg.c * m * y[i],
                SvmLoss::Hinge => -cfg.c * y[i],
            };
            for (g, v) in gw.iter_mut().zip(x.row(i)) {
                *g += coef * v;
            }
            gb += coef;
        }
    }
    (gw, gb)
}

fn check_binary(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Empty("SVM training set"));
    }
    if y.len() != x.rows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("SVM features".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("binary labels must be +1 or -1".into()));
    }
    Ok(())
}

/// Starting from `init` (or zero), descends until the gradient max-norm
/// drops below `cfg.tolerance` or `cfg.max_iter` steps have been taken.
/// Each step is accepted only under the Armijo condition, so the objective
/// never increases.
pub fn train_binary_from(x: &Matrix, y: &[f64], cfg: &SvmConfig, init: Option<(&[f64], f64)>) -> Result<BinaryFit> {
    cfg.validate()?;
    check_binary(x, y)?;
    let (mut w, mut b) = match init {
        Some((w0, b0)) if w0.len() == x.cols() => (w0.to_vec(), b0),
        Some(_) => return Err(Error::Dimension("initial weight length".into())),
        None => (vec![0.0; x.cols()], 0.0),
    };
    // Scores are updated along the search direction instead of being
    // recomputed, so a line-search trial costs O(m + d).
    let mut scores = scores_of(x, &w, b);
    let mut f = objective_from_scores(&scores, y, &w, cfg);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let (gw, gb) = gradient(x, y, &scores, &w, cfg);
        let gmax = gw.iter().fold(gb.abs(), |m, v| m.max(v.abs()));
        if gmax < cfg.tolerance {
            converged = true;
            break;
        }
        let gnorm2 = gw.iter().map(|v| v * v).sum::<f64>() + gb * gb;
        let direction = scores_of(x, &gw, gb);
        step *= 2.0;
        let mut accepted = false;
        while step > 1e-30 {
            let change = objective_change(&scores, &direction, y, &w, &gw, step, cfg);
            if change <= -1e-4 * step * gnorm2 {
                for (wi, g) in w.iter_mut().zip(&gw) {
                    *wi -= step * g;
                }
                b -= step * gb;
                for (s, d) in scores.iter_mut().zip(&direction) {
                    *s -= step * d;
                }
                f += change;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        history.push(f);
    }
    Ok(BinaryFit {
        objective: objective(x, y, &w, b, cfg),
        w,
        b,
        iterations,
        converged,
        history,
    })
}

/// Objective difference for the step `(w, b) -= step * (gw, gb)`, written
/// in terms of differences so that it stays accurate when the change is
/// far below the objective's own rounding error.
fn objective_change(
    scores: &[f64],
    direction: &[f64],
    y: &[f64],
    w: &[f64],
    gw: &[f64],
    step: f64,
    cfg: &SvmConfig,
) -> f64 {
    let reg: f64 = -step * w.iter().zip(gw).map(|(wi, g)| g * (wi - 0.5 * step * g)).sum::<f64>();
    let data: f64 = scores
        .iter()
        .zip(direction)
        .zip(y)
        .map(|((s, d), y)| {
            let m = 1.0 - y * s;
            let delta = y * step * d;
            let nm = m + delta;
            match (cfg.loss, m > 0.0, nm > 0.0) {
                (SvmLoss::SquaredHinge, true, true) => delta * (2.0 * m + delta),
                (SvmLoss::SquaredHinge, true, false) => -m * m,
                (SvmLoss::SquaredHinge, false, true) => nm * nm,
                (SvmLoss::Hinge, true, true) => delta,
                (SvmLoss::Hinge, true, false) => -m,
                (SvmLoss::Hinge, false, true) => nm,
                (_, false, false) => 0.0,
            }
        })
        .sum();
    reg + cfg.c * data
}

pub fn train_binary(x: &Matrix, y: &[f64], cfg: &SvmConfig) -> Result<BinaryFit> {
    train_binary_from(x, y, cfg, None)
}

/// `+1` when `w·x + b >= 0`, else `-1`.
pub fn predict_binary(w: &[f64], b: f64, x: &[f64]) -> f64 {
    if dot(w, x) + b >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Ascending class ids, one separator each.
    pub classes: Vec<u8>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// Applied to inputs before scoring.
    pub normalization: Option<ZScore>,
    pub converged: Vec<bool>,
    pub meta: Meta,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn prepare(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "features have {} columns, model expects {}",
                x.cols(),
                self.dim()
            )));
        }
        match &self.normalization {
            Some(z) => z.apply(x),
            None => Ok(x.clone()),
        }
    }

    /// Per-class scores `w·x + b`, row-major `[rows, classes]`.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        let x = self.prepare(x)?;
        let k = self.classes.len();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            for c in 0..k {
                out.row_mut(i)[c] = dot(&self.weights[c], x.row(i)) + self.biases[c];
            }
        }
        Ok(out)
    }

    /// Argmax of the class scores; ties go to the lowest class id.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        let s = self.scores(x)?;
        Ok((0..s.rows())
            .map(|i| {
                let row = s.row(i);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                self.classes[best]
            })
            .collect())
    }
}

/// One-vs-rest over the classes present in `labels`.
pub fn train_multiclass(x: &Matrix, labels: &[u8], cfg: &SvmConfig) -> Result<SvmModel> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), x.rows())));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Empty("SVM training set"));
    }
    let mut model = SvmModel {
        classes: classes.clone(),
        weights: Vec::new(),
        biases: Vec::new(),
        normalization: None,
        converged: Vec::new(),
        meta: Meta::new(),
    };
    for &c in &classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let fit = train_binary(x, &y, cfg)?;
        if !fit.converged {
            log::debug!("class {c}: stopped after {} iterations without reaching tolerance", fit.iterations);
        }
        model.weights.push(fit.w);
        model.biases.push(fit.b);
        model.converged.push(fit.converged);
    }
    Ok(model)
}

/// Z-scores `x` with statistics fitted on it, trains, and stores the
/// transform in the model so raw features can be scored directly.
pub fn train_normalized(x: &Matrix, labels: &[u8], cfg: &SvmConfig) -> Result<SvmModel> {
    let z = ZScore::fit(x)?;
    let mut model = train_multiclass(&z.apply(x)?, labels, cfg)?;
    model.normalization = Some(z);
    Ok(model)
}

/// Subject-level k-fold evaluation: per fold, trains a normalised model
/// on the other folds and scores the held-out subjects.
pub fn cross_validate(
    x: &Matrix,
    labels: &[u8],
    subjects: &[String],
    folds: &FoldAssignment,
    cfg: &SvmConfig,
) -> Result<EvalReport> {
    if labels.len() != x.rows() || subjects.len() != x.rows() {
        return Err(Error::Dimension("labels/subjects do not match feature rows".into()));
    }
    let mut fold_metrics = Vec::new();
    let mut unconverged = 0;
    for fold in 0..folds.k {
        let (train, test) = folds.split_rows(subjects, fold);
        if train.is_empty() || test.is_empty() {
            log::warn!("fold {fold}: empty train or test part, skipped");
            continue;
        }
        let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        let model = train_normalized(&x.select_rows(&train), &ytr, cfg)?;
        unconverged += model.converged.iter().filter(|c| !**c).count();
        let predicted = model.predict(&x.select_rows(&test))?;
        fold_metrics.push(FoldMetrics::from_predictions(ClassId::COUNT, &yte, &predicted)?);
    }
    let mut report = aggregate("linear SVM", fold_metrics)?;
    report.add_provenance("svm_c", cfg.c.to_string());
    report.add_provenance("svm_tolerance", cfg.tolerance.to_string());
    report.add_provenance("svm_unconverged_binary_problems", unconverged.to_string());
    Ok(report)
}

pub const MODEL_MAGIC: &[u8; 4] = b"SSVM";
pub const MODEL_VERSION: u16 = 1;

impl SvmModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.dim();
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        for ((&c, w), &b) in self.classes.iter().zip(&self.weights).zip(&self.biases) {
            buf.push(c);
            w.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            buf.extend_from_slice(&b.to_le_bytes());
        }
        match &self.normalization {
            Some(z) => {
                buf.push(1);
                z.mean.iter().chain(&z.std).for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            }
            None => buf.push(0),
        }
        io::put_meta(&mut buf, &self.meta)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "SVM model");
        r.magic(MODEL_MAGIC)?;
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("SVM model version {version} unsupported")));
        }
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let mut model = SvmModel {
            classes: Vec::with_capacity(k),
            weights: Vec::with_capacity(k),
            biases: Vec::with_capacity(k),
            normalization: None,
            converged: vec![true; k],
            meta: Meta::new(),
        };
        for _ in 0..k {
            model.classes.push(r.u8()?);
            model.weights.push(r.f64s(d)?);
            model.biases.push(r.f64()?);
        }
        if r.u8()? == 1 {
            let mean = r.f64s(d)?;
            let std = r.f64s(d)?;
            model.normalization = Some(ZScore { mean, std });
        }
        model.meta = r.finish_with_meta()?;
        Ok(model)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        io::write_all(std::fs::File::create(path)?, &self.to_bytes()?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&io::read_all(std::fs::File::open(path)?)?)
    }
}
