//! Self-supervised pretraining, linear evaluation on frozen time features,
//! encoder checkpoints and feature extraction.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sleepssl_nn::{Adam, AdamConfig, Checkpoint, Graph, Linear, Mode, ParamStore, Tensor};

use crate::config::{derive_seed, LinearEvalConfig, RunConfig};
use crate::encoders::{MultiViewModel, ResNetVariant, View, PROJECTION_DIM};
use crate::epoching::{FoldAssignment, SleepEpoch, EPOCH_SAMPLES};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ViewTag};
use crate::io::Meta;
use crate::losses::{total_loss, LossComponents, LossConfig, ProjectionSet};
use crate::matrix::{Matrix, ZScore};
use crate::metrics::{aggregate, EvalReport, FoldMetrics};
use crate::views::{epoch_rng, make_views, AugmentConfig, Stft, StftConfig, Window};

/// Rows per inference forward pass.
pub const INFERENCE_BATCH: usize = 64;
const CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub variant: ResNetVariant,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_start: usize,
    pub eval_every: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub stft: StftConfig,
    pub linear_eval: LinearEvalConfig,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            variant: cfg.encoder,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            eval_start: cfg.eval_start,
            eval_every: cfg.eval_every,
            loss: cfg.loss,
            adam: cfg.adam,
            augment: cfg.augment,
            stft: cfg.stft,
            linear_eval: cfg.linear_eval,
            seed: cfg.stage_seed("pretrain"),
        }
    }

    pub fn schedule(&self) -> Vec<usize> {
        evaluation_schedule(self.epochs, self.eval_start, self.eval_every)
    }
}

/// Training epochs (1-based) after which linear evaluation runs.
pub fn evaluation_schedule(epochs: usize, start: usize, every: usize) -> Vec<usize> {
    if every == 0 || start == 0 {
        return Vec::new();
    }
    (start..=epochs).step_by(every).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub components: LossComponents,
    pub total: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,step,L_TT,L_SS,L_FF,L_D,L_tot\n");
    for r in rows {
        let c = r.components;
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.epoch, r.step, c.tt, c.ss, c.ff, c.d, r.total);
    }
    out
}

/// Labelled epochs and the subject folds used for periodic evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub epochs: &'a [SleepEpoch],
    pub folds: &'a FoldAssignment,
}

pub struct PretrainOutcome {
    pub model: MultiViewModel<f32>,
    pub checkpoint: EncoderCheckpoint,
    pub log: Vec<LogRow>,
    pub evaluations: Vec<(usize, EvalReport)>,
}

/// View tensors `[B,1,3000]` ×2 and `[B,1,bins,frames]` ×2 for a batch.
pub fn view_batch(
    epochs: &[&SleepEpoch],
    augment: &AugmentConfig,
    stft: &Stft,
    seed: u64,
) -> Result<[Tensor<f32>; 4]> {
    let b = epochs.len();
    let (mut t1, mut t2, mut s1, mut s2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut spec_shape = [0, 0];
    for e in epochs {
        let v = make_views(&e.values, augment, stft, &mut epoch_rng(seed, &e.subject_id, e.index))?;
        spec_shape = [v.s1.bins, v.s1.frames];
        t1.extend(v.t1);
        t2.extend(v.t2);
        s1.extend(v.s1.data);
        s2.extend(v.s2.data);
    }
    let ts = [b, 1, EPOCH_SAMPLES];
    let ss = [b, 1, spec_shape[0], spec_shape[1]];
    Ok([
        Tensor::new(&ts, t1)?,
        Tensor::new(&ts, t2)?,
        Tensor::new(&ss, s1)?,
        Tensor::new(&ss, s2)?,
    ])
}

/// One training-mode forward and backward on a batch. The optimizer step
/// and running-statistics updates are applied only when `adam` is given.
fn step(
    model: &mut MultiViewModel<f32>,
    views: [Tensor<f32>; 4],
    loss_cfg: &LossConfig,
    adam: Option<&mut Adam<f32>>,
) -> Result<(LossComponents, f64)> {
    let mut g = Graph::new(Mode::Train);
    let [t1, t2, s1, s2] = views.map(|t| g.input(t));
    let mut updates = Vec::new();
    let z = model.forward_views(&mut g, t1, t2, s1, s2, &mut updates)?;
    let set = ProjectionSet {
        zt1: g.value(z.zt1).clone(),
        zt2: g.value(z.zt2).clone(),
        zs1: g.value(z.zs1).clone(),
        zs2: g.value(z.zs2).clone(),
        zf1: g.value(z.zf1).clone(),
        zf2: g.value(z.zf2).clone(),
    };
    let loss = total_loss(&set, loss_cfg)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("total loss {:?}", loss.components)));
    }
    if let Some(adam) = adam {
        let seeds: Vec<_> = z.as_array().into_iter().zip(loss.grads).collect();
        let grads = g.backward(&seeds);
        model.store.zero_grad();
        g.accumulate_param_grads(&grads, &mut model.store);
        adam.step(&mut model.store)?;
        for u in &updates {
            u.apply(&mut model.store);
        }
    }
    Ok((loss.components, loss.total))
}

/// Loss of the current model on a fixed batch, without changing it.
pub fn fixed_batch_loss(
    model: &MultiViewModel<f32>,
    batch: &[&SleepEpoch],
    cfg: &PretrainConfig,
    view_seed: u64,
) -> Result<f64> {
    let stft = Stft::new(cfg.stft)?;
    let views = view_batch(batch, &cfg.augment, &stft, view_seed)?;
    let mut m = model.clone();
    Ok(step(&mut m, views, &cfg.loss, None)?.1)
}

/// Builds a model from `cfg.seed` and trains it on `data` (labels are
/// ignored). With an evaluation set, linear evaluation runs at the
/// scheduled epochs and the best mean-MF1 parameters are kept; otherwise
/// the final parameters are returned.
pub fn pretrain(data: &[SleepEpoch], eval: Option<EvalSet<'_>>, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    let model = MultiViewModel::<f32>::new(cfg.variant, cfg.stft, derive_seed(cfg.seed, "init"));
    pretrain_model(model, data, eval, cfg)
}

pub fn pretrain_model(
    mut model: MultiViewModel<f32>,
    data: &[SleepEpoch],
    eval: Option<EvalSet<'_>>,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    if data.len() < 2 {
        return Err(Error::Empty("pretext set (need at least two epochs)"));
    }
    let stft = Stft::new(cfg.stft)?;
    let mut adam = Adam::new(&model.store, cfg.adam);
    let n = data.len();
    let b = cfg.batch_size.min(n);
    let schedule = if eval.is_some() { cfg.schedule() } else { Vec::new() };
    let mut log = Vec::new();
    let mut evaluations = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut global_step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle{epoch}"))));
        let view_seed = derive_seed(cfg.seed, &format!("views{epoch}"));
        for chunk in order.chunks_exact(b) {
            let batch: Vec<&SleepEpoch> = chunk.iter().map(|&i| &data[i]).collect();
            let views = view_batch(&batch, &cfg.augment, &stft, view_seed)?;
            let (components, total) = step(&mut model, views, &cfg.loss, Some(&mut adam))?;
            global_step += 1;
            log.push(LogRow {
                epoch,
                step: global_step,
                components,
                total,
            });
        }
        if let Some(last) = log.last() {
            log::info!("epoch {epoch}: L_tot {:.5}", last.total);
        }
        if let (Some(ev), true) = (eval, schedule.contains(&epoch)) {
            let report = linear_eval(&model, ev, &cfg.linear_eval, derive_seed(cfg.seed, "linear_eval"))?;
            log::info!("epoch {epoch}: linear evaluation MF1 {:.4}", report.mean_macro_f1);
            if best.as_ref().map_or(true, |(mf1, _, _)| report.mean_macro_f1 > *mf1) {
                best = Some((report.mean_macro_f1, epoch, model.store.clone()));
            }
            evaluations.push((epoch, report));
        }
    }
    let mut meta = Meta::new();
    match best {
        Some((mf1, epoch, store)) => {
            model.store = store;
            meta.insert("selection".into(), "best_mf1".into());
            meta.insert("best_mf1".into(), format!("{mf1}"));
            meta.insert("selected_epoch".into(), epoch.to_string());
        }
        None => {
            meta.insert("selection".into(), "final".into());
            meta.insert("selected_epoch".into(), cfg.epochs.to_string());
        }
    }
    let checkpoint = EncoderCheckpoint::from_model(&model, meta);
    Ok(PretrainOutcome {
        model,
        checkpoint,
        log,
        evaluations,
    })
}

/// Runs the frozen model over `epochs` in inference mode. Spectrograms
/// are taken from the unaugmented signal.
pub fn extract_features(model: &MultiViewModel<f32>, epochs: &[SleepEpoch], view: View) -> Result<FeatureMatrix> {
    let stft = Stft::new(model.stft)?;
    let dim = model.feature_dim(view);
    let mut data = Vec::with_capacity(epochs.len() * dim);
    for chunk in epochs.chunks(INFERENCE_BATCH) {
        let b = chunk.len();
        let time = (view != View::Spec)
            .then(|| {
                let flat: Vec<f32> = chunk.iter().flat_map(|e| e.values.iter().copied()).collect();
                Tensor::new(&[b, 1, EPOCH_SAMPLES], flat)
            })
            .transpose()?;
        let spec = if view != View::Time {
            let mut flat = Vec::new();
            let mut shape = [0, 0];
            for e in chunk {
                let s = stft.apply(&e.values)?;
                shape = [s.bins, s.frames];
                flat.extend(s.data);
            }
            Some(Tensor::new(&[b, 1, shape[0], shape[1]], flat)?)
        } else {
            None
        };
        data.extend_from_slice(model.features(view, time, spec)?.data());
    }
    let tag = match view {
        View::Time => ViewTag::Time,
        View::Spec => ViewTag::Spec,
        View::Concat => ViewTag::Concat,
    };
    FeatureMatrix::new(
        tag,
        dim,
        data,
        epochs.iter().map(|e| e.label.map(|c| c.0)).collect(),
        epochs.iter().map(|e| e.subject_id.clone()).collect(),
    )
}

/// Epoch samples as a feature table.
pub fn raw_features(epochs: &[SleepEpoch]) -> Result<FeatureMatrix> {
    FeatureMatrix::new(
        ViewTag::Raw,
        EPOCH_SAMPLES,
        epochs.iter().flat_map(|e| e.values.iter().copied()).collect(),
        epochs.iter().map(|e| e.label.map(|c| c.0)).collect(),
        epochs.iter().map(|e| e.subject_id.clone()).collect(),
    )
}

/// Linear evaluation of the frozen time encoder.
pub fn linear_eval(
    model: &MultiViewModel<f32>,
    eval: EvalSet<'_>,
    cfg: &LinearEvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let f = extract_features(model, eval.epochs, View::Time)?;
    let (x, y, subjects) = f.labelled()?;
    linear_eval_features(&x, &y, &subjects, eval.folds, cfg, seed)
}

/// Per fold: standardise with training-fold statistics, fit a dense
/// layer with softmax cross-entropy, score the held-out subjects.
pub fn linear_eval_features(
    x: &Matrix,
    labels: &[u8],
    subjects: &[String],
    folds: &FoldAssignment,
    cfg: &LinearEvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    if labels.len() != x.rows() || subjects.len() != x.rows() {
        return Err(Error::Dimension("labels/subjects do not match feature rows".into()));
    }
    let mut fold_metrics = Vec::new();
    for fold in 0..folds.k {
        let (train, test) = folds.split_rows(subjects, fold);
        if train.is_empty() || test.is_empty() {
            log::warn!("fold {fold}: empty train or test part, skipped");
            continue;
        }
        let z = ZScore::fit(&x.select_rows(&train))?;
        let xtr = z.apply(&x.select_rows(&train))?;
        let xte = z.apply(&x.select_rows(&test))?;
        let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        let clf = DenseClassifier::fit(&xtr, &ytr, cfg, derive_seed(seed, &format!("fold{fold}")))?;
        fold_metrics.push(FoldMetrics::from_predictions(CLASSES, &yte, &clf.predict(&xte)?)?);
    }
    let mut report = aggregate("linear evaluation", fold_metrics)?;
    report.add_provenance("classifier", format!("dense+softmax adam lr={} epochs={}", cfg.lr, cfg.epochs));
    Ok(report)
}

/// Single dense layer `D -> 5` trained with Adam on minibatches, starting
/// from zero parameters so the result depends only on the shuffling seed.
pub struct DenseClassifier {
    store: ParamStore<f32>,
    layer: Linear,
}

impl DenseClassifier {
    pub fn fit(x: &Matrix, y: &[u8], cfg: &LinearEvalConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "clf", x.cols(), CLASSES, &mut rng);
        store.value_mut(layer.weight).data_mut().fill(0.0);
        store.value_mut(layer.bias).data_mut().fill(0.0);
        let mut adam = Adam::new(
            &store,
            AdamConfig {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let flat: Vec<f32> = chunk.iter().flat_map(|&i| x.row(i).iter().map(|&v| v as f32)).collect();
                let targets: Vec<usize> = chunk.iter().map(|&i| y[i] as usize).collect();
                let mut g = Graph::new(Mode::Train);
                let xin = g.input(Tensor::new(&[chunk.len(), x.cols()], flat)?);
                let logits = layer.forward(&mut g, &store, xin)?;
                let loss = g.softmax_cross_entropy(logits, &targets)?;
                let grads = g.backward_scalar(loss);
                store.zero_grad();
                g.accumulate_param_grads(&grads, &mut store);
                adam.step(&mut store)?;
            }
        }
        Ok(Self { store, layer })
    }

    /// Argmax of the logits, ties to the lowest class.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        let flat: Vec<f32> = x.data().iter().map(|&v| v as f32).collect();
        let mut g = Graph::new(Mode::Eval);
        let xin = g.input(Tensor::new(&[x.rows(), x.cols()], flat)?);
        let logits = self.layer.forward(&mut g, &self.store, xin)?;
        let out = g.value(logits);
        Ok((0..x.rows())
            .map(|i| {
                let row = out.row(i);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect())
    }
}

/// Serialized parameters of E_t, E_s and the heads with enough metadata to
/// rebuild the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCheckpoint {
    pub inner: Checkpoint,
}

impl EncoderCheckpoint {
    pub fn from_model(model: &MultiViewModel<f32>, extra: Meta) -> Self {
        let mut meta = extra;
        meta.insert("encoder".into(), model.variant().to_string());
        meta.insert("time_dim".into(), model.feature_dim(View::Time).to_string());
        meta.insert("spec_dim".into(), model.feature_dim(View::Spec).to_string());
        meta.insert("projection_dim".into(), PROJECTION_DIM.to_string());
        meta.insert("stft_window".into(), model.stft.window_len.to_string());
        meta.insert("stft_hop".into(), model.stft.hop.to_string());
        meta.insert(
            "stft_window_fn".into(),
            match model.stft.window {
                Window::Hann => "hann",
                Window::Rectangular => "rectangular",
            }
            .into(),
        );
        meta.insert("stft_log".into(), model.stft.log_magnitude.to_string());
        Self {
            inner: Checkpoint::from_store(&model.store, meta, None),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.inner.metadata.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.inner.metadata.insert(key.into(), value.into());
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks `{key}`")))
    }

    pub fn variant(&self) -> Result<ResNetVariant> {
        self.required("encoder")?.parse()
    }

    pub fn stft(&self) -> Result<StftConfig> {
        let num = |k: &str| -> Result<usize> {
            self.required(k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint metadata `{k}` is not a number")))
        };
        Ok(StftConfig {
            window_len: num("stft_window")?,
            hop: num("stft_hop")?,
            window: match self.required("stft_window_fn")? {
                "rectangular" => Window::Rectangular,
                _ => Window::Hann,
            },
            log_magnitude: self.required("stft_log")? == "true",
        })
    }

    pub fn to_model(&self) -> Result<MultiViewModel<f32>> {
        let mut model = MultiViewModel::new(self.variant()?, self.stft()?, 0);
        self.inner.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.inner.write_to(&mut f)?;
        std::io::Write::flush(&mut f)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(Self {
            inner: Checkpoint::read_from(f)?,
        })
    }
}
