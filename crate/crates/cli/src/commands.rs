use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sleepssl::config::RunConfig;
use sleepssl::edf::ClassId;
use sleepssl::encoders::View;
use sleepssl::epoching::{kfold, make_split, subsample_pretext, EpochStore, SleepEpoch};
use sleepssl::features::{FeatureMatrix, ViewTag};
use sleepssl::ingest::{ingest_dir, DATA_DIR_ENV};
use sleepssl::metrics::{aggregate, EvalReport, FoldMetrics};
use sleepssl::pretrain::{self, log_csv, EncoderCheckpoint, EvalSet, PretrainConfig};
use sleepssl::svm::{cross_validate, train_normalized, SvmModel};
use sleepssl::synth::{generate, SynthConfig};

use crate::ConfigArgs;

fn load_config(args: &ConfigArgs, extra: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    for item in &args.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{item}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in extra {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    println!("seed: {}", cfg.seed);
    println!("config hash: {}", cfg.hash());
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_report(report: &EvalReport, base: &Path) -> Result<()> {
    std::fs::write(with_suffix(base, ".csv"), report.to_csv())?;
    std::fs::write(with_suffix(base, ".txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn ingest(args: &ConfigArgs, dir: Option<PathBuf>, channel: Option<String>, out: &Path) -> Result<()> {
    let cfg = load_config(args, &[])?;
    let dir = dir
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| anyhow!("no --psg-dir given and {DATA_DIR_ENV} is not set"))?;
    let channel = channel.unwrap_or_else(|| cfg.channel.clone());
    let mut ingested = ingest_dir(&dir, &channel, cfg.segment)?;
    for path in &ingested.pairing.unpaired {
        println!("unpaired: {}", path.display());
    }
    for (prefix, reason) in &ingested.skipped {
        println!("skipped {prefix}: {reason}");
    }
    let store = &mut ingested.store;
    store.meta.insert("config_hash".into(), cfg.hash());
    store.write(out)?;
    let name = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    std::fs::write(with_suffix(out, ".manifest.csv"), store.manifest_csv(&name))?;
    println!(
        "wrote {} epochs from {} subjects to {}",
        store.epochs.len(),
        store.subjects().len(),
        out.display()
    );
    Ok(())
}

pub fn synth(
    args: &ConfigArgs,
    classes: usize,
    per_class: usize,
    subjects: usize,
    seed: Option<u64>,
    noise: f64,
    out: &Path,
) -> Result<()> {
    let extra: Vec<(&str, String)> = seed.map(|s| ("seed", s.to_string())).into_iter().collect();
    let cfg = load_config(args, &extra)?;
    let mut store = generate(&SynthConfig {
        classes,
        per_class,
        subjects,
        seed: cfg.seed,
        noise_std: noise,
        ..SynthConfig::default()
    })?;
    store.meta.insert("config_hash".into(), cfg.hash());
    store.write(out)?;
    let name = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    std::fs::write(with_suffix(out, ".manifest.csv"), store.manifest_csv(&name))?;
    println!("wrote {} synthetic epochs to {}", store.epochs.len(), out.display());
    Ok(())
}

pub fn pretrain(
    args: &ConfigArgs,
    store_path: &Path,
    encoder: Option<String>,
    fraction: Option<f64>,
    out: &Path,
    log: Option<PathBuf>,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(e) = encoder {
        extra.push(("encoder", e));
    }
    if let Some(f) = fraction {
        extra.push(("fraction", f.to_string()));
    }
    let cfg = load_config(args, &extra)?;
    let store = EpochStore::read(store_path).with_context(|| format!("reading {}", store_path.display()))?;
    let plan = make_split(&store.subjects(), cfg.split, cfg.fraction, cfg.stage_seed("split"))?;
    let pretext = subsample_pretext(
        &store.of_subjects(&plan.pretext_subjects),
        cfg.fraction,
        cfg.stage_seed("subsample"),
    )?;
    let eval = store.of_subjects(&plan.eval_subjects);
    let folds = kfold(
        &plan.eval_subjects,
        cfg.folds.min(plan.eval_subjects.len()),
        cfg.stage_seed("folds"),
    )?;
    println!(
        "pretext: {} subjects, {} epochs; evaluation: {} subjects, {} epochs",
        plan.pretext_subjects.len(),
        pretext.len(),
        plan.eval_subjects.len(),
        eval.len()
    );
    let pcfg = PretrainConfig::from_run(&cfg);
    let eval_set = (!eval.is_empty()).then_some(EvalSet {
        epochs: &eval,
        folds: &folds,
    });
    let outcome = pretrain::pretrain(&pretext, eval_set, &pcfg)?;
    for (epoch, r) in &outcome.evaluations {
        println!(
            "epoch {epoch}: linear evaluation Acc {:.4} kappa {:.4} MF1 {:.4}",
            r.mean_accuracy, r.mean_kappa, r.mean_macro_f1
        );
    }
    let mut ckpt = outcome.checkpoint;
    ckpt.set_meta("config_hash", cfg.hash());
    ckpt.set_meta("seed", cfg.seed.to_string());
    ckpt.set_meta("fraction", cfg.fraction.to_string());
    ckpt.set_meta("pretext_subjects", plan.pretext_subjects.join(","));
    ckpt.set_meta("eval_subjects", plan.eval_subjects.join(","));
    ckpt.write(out)?;
    let log_path = log.unwrap_or_else(|| with_suffix(out, ".log.csv"));
    std::fs::write(&log_path, log_csv(&outcome.log))?;
    println!(
        "wrote checkpoint {} ({} steps, selection {})",
        out.display(),
        outcome.log.len(),
        ckpt.meta("selection").unwrap_or("final")
    );
    Ok(())
}

fn subject_list(ckpt: Option<&EncoderCheckpoint>, key: &str) -> Result<Vec<String>> {
    let ckpt = ckpt.ok_or_else(|| anyhow!("--subjects {} needs --checkpoint", key.trim_end_matches("_subjects")))?;
    let list = ckpt
        .meta(key)
        .ok_or_else(|| anyhow!("checkpoint does not record `{key}`"))?;
    Ok(list.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
}

pub fn features(
    args: &ConfigArgs,
    checkpoint: Option<&Path>,
    store_path: &Path,
    view: &str,
    raw: bool,
    subjects: Option<String>,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(args, &[])?;
    let store = EpochStore::read(store_path).with_context(|| format!("reading {}", store_path.display()))?;
    let ckpt = checkpoint
        .map(|p| EncoderCheckpoint::read(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let selection = subjects.unwrap_or_else(|| {
        match ckpt.as_ref().and_then(|c| c.meta("eval_subjects")) {
            Some(_) => "eval".into(),
            None => "all".into(),
        }
    });
    let epochs: Vec<SleepEpoch> = match selection.as_str() {
        "all" => store.epochs.clone(),
        "eval" => store.of_subjects(&subject_list(ckpt.as_ref(), "eval_subjects")?),
        "pretext" => store.of_subjects(&subject_list(ckpt.as_ref(), "pretext_subjects")?),
        other => bail!("--subjects must be eval, pretext or all, got `{other}`"),
    };
    if epochs.is_empty() {
        bail!("no epochs selected");
    }
    let mut table = if raw {
        pretrain::raw_features(&epochs)?
    } else {
        let ckpt = ckpt.as_ref().ok_or_else(|| anyhow!("--checkpoint is required unless --raw"))?;
        let model = ckpt.to_model()?;
        let view: View = view.parse()?;
        let mut t = pretrain::extract_features(&model, &epochs, view)?;
        t.meta.insert("checkpoint_id".into(), format!("{:016x}", model.store.checksum("")));
        t.meta.insert("encoder".into(), model.variant().to_string());
        if let Some(h) = ckpt.meta("config_hash") {
            t.meta.insert("checkpoint_config_hash".into(), h.to_string());
        }
        t
    };
    table.meta.insert("config_hash".into(), cfg.hash());
    table.meta.insert("subjects".into(), selection);
    table.write(out)?;
    println!(
        "wrote {} rows of {} features (view {}) to {}",
        table.rows,
        table.dim,
        table.view.name(),
        out.display()
    );
    Ok(())
}

fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::read(path).with_context(|| format!("reading {}", path.display()))
}

fn provenance(report: &mut EvalReport, cfg: &RunConfig, table: &FeatureMatrix) {
    report.add_provenance("config_hash", cfg.hash());
    report.add_provenance(
        "checkpoint_id",
        table.meta.get("checkpoint_id").cloned().unwrap_or_else(|| "none".into()),
    );
    report.add_provenance("view", table.view.name());
    report.add_provenance("dim", table.dim.to_string());
}

pub fn svm(args: &ConfigArgs, features: &Path, folds: Option<usize>, c: Option<f64>, out: &Path) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(k) = folds {
        extra.push(("folds", k.to_string()));
    }
    if let Some(c) = c {
        extra.push(("svm_c", c.to_string()));
    }
    let cfg = load_config(args, &extra)?;
    let table = read_features(features)?;
    let (x, y, subjects) = table.labelled()?;
    if y.is_empty() {
        bail!("{} has no labelled rows", features.display());
    }
    let mut distinct = subjects.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        bail!("cross-validation needs at least two subjects, found {}", distinct.len());
    }
    let k = cfg.folds.min(distinct.len());
    let assignment = kfold(&distinct, k, cfg.stage_seed("folds"))?;
    let mut report = cross_validate(&x, &y, &subjects, &assignment, &cfg.svm)?;
    report.title = format!("linear SVM, {k}-fold subject cross-validation, {} features", table.view.name());
    provenance(&mut report, &cfg, &table);

    let mut model = train_normalized(&x, &y, &cfg.svm)?;
    model.meta.insert("config_hash".into(), cfg.hash());
    model.meta.insert("view".into(), table.view.name().into());
    model.meta.insert("dim".into(), table.dim.to_string());
    if let Some(id) = table.meta.get("checkpoint_id") {
        model.meta.insert("checkpoint_id".into(), id.clone());
    }
    model.write(out)?;
    write_report(&report, &with_suffix(out, ".report"))?;
    println!("wrote model {}", out.display());
    Ok(())
}

pub fn evaluate(args: &ConfigArgs, model_path: &Path, features: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(args, &[])?;
    let model = SvmModel::read(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let table = read_features(features)?;
    if model.dim() != table.dim {
        bail!(
            "dimension mismatch: model expects {} features, {} has {}",
            model.dim(),
            features.display(),
            table.dim
        );
    }
    if let Some(view) = model.meta.get("view") {
        if view != table.view.name() {
            bail!("view mismatch: model was fitted on `{view}` features, table holds `{}`", table.view.name());
        }
    }
    if let Some(dim) = model.meta.get("dim") {
        if dim != &table.dim.to_string() {
            bail!("dimension metadata mismatch: model records {dim}, table has {}", table.dim);
        }
    }
    if table.view == ViewTag::Raw && model.normalization.is_none() {
        log::warn!("raw features scored by a model without stored normalisation");
    }
    let (x, y, _) = table.labelled()?;
    if y.is_empty() {
        bail!("{} has no labelled rows", features.display());
    }
    let predicted = model.predict(&x)?;
    let fold = FoldMetrics::from_predictions(ClassId::COUNT, &y, &predicted)?;
    let mut report = aggregate(format!("linear SVM evaluation, {} features", table.view.name()), vec![fold])?;
    provenance(&mut report, &cfg, &table);
    if let Some(h) = model.meta.get("config_hash") {
        report.add_provenance("model_config_hash", h.clone());
    }
    write_report(&report, &out.unwrap_or_else(|| with_suffix(features, ".eval")))?;
    Ok(())
}
