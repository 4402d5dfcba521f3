//! Line-based `key = value` run configuration with a global seed, derived
//! per-stage seeds and a content hash embedded in every artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use sleepssl_nn::AdamConfig;

use crate::edf::DEFAULT_CHANNEL;
use crate::encoders::ResNetVariant;
use crate::epoching::{SegmentOptions, SplitCounts};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::svm::{SvmConfig, SvmLoss};
use crate::views::{AugmentConfig, ScaleMode, StftConfig, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearEvalConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for LinearEvalConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub channel: String,
    pub segment: SegmentOptions,
    pub split: SplitCounts,
    pub fraction: f64,
    pub folds: usize,
    pub encoder: ResNetVariant,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_start: usize,
    pub eval_every: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub stft: StftConfig,
    pub linear_eval: LinearEvalConfig,
    pub svm: SvmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channel: DEFAULT_CHANNEL.to_string(),
            segment: SegmentOptions::default(),
            split: SplitCounts::SLEEP_EDF,
            fraction: 1.0,
            folds: 5,
            encoder: ResNetVariant::ResNet18,
            batch_size: 256,
            epochs: 200,
            eval_start: 80,
            eval_every: 4,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            stft: StftConfig::default(),
            linear_eval: LinearEvalConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), no).is_some() {
                return Err(Error::Config(format!("line {}: `{k}` set twice", no + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "channel" => self.channel = v.to_string(),
            "trim_wake_minutes" => {
                self.segment.trim_wake_minutes = if v == "off" { None } else { Some(parse(key, v)?) }
            }
            "pretext_subjects" => self.split.pretext = parse(key, v)?,
            "eval_subjects" => self.split.eval = parse(key, v)?,
            "fraction" => self.fraction = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "encoder" => self.encoder = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "eval_start" => self.eval_start = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "lr" => self.adam.lr = parse(key, v)?,
            "weight_decay" => self.adam.weight_decay = parse(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "tau" => self.loss.tau = parse(key, v)?,
            "tau_d" => self.loss.tau_d = parse(key, v)?,
            "lambda1" => self.loss.lambda1 = parse(key, v)?,
            "lambda2" => self.loss.lambda2 = parse(key, v)?,
            "jitter_amplitude" => self.augment.jitter_amplitude = parse(key, v)?,
            "mask_segments" => self.augment.mask_segments = parse(key, v)?,
            "mask_total_fraction" => self.augment.mask_total_fraction = parse(key, v)?,
            "flip_probability" => self.augment.flip_probability = parse(key, v)?,
            "scale_sigma" => self.augment.scale_sigma = parse(key, v)?,
            "scale_mode" => {
                self.augment.scale_mode = match v {
                    "scalar" => ScaleMode::Scalar,
                    "elementwise" => ScaleMode::Elementwise,
                    _ => return Err(Error::Config(format!("`{key}`: expected scalar|elementwise"))),
                }
            }
            "stft_window" => self.stft.window_len = parse(key, v)?,
            "stft_hop" => self.stft.hop = parse(key, v)?,
            "stft_window_fn" => {
                self.stft.window = match v {
                    "hann" => Window::Hann,
                    "rectangular" => Window::Rectangular,
                    _ => return Err(Error::Config(format!("`{key}`: expected hann|rectangular"))),
                }
            }
            "stft_log" => self.stft.log_magnitude = parse_bool(key, v)?,
            "linear_eval_epochs" => self.linear_eval.epochs = parse(key, v)?,
            "linear_eval_lr" => self.linear_eval.lr = parse(key, v)?,
            "linear_eval_batch" => self.linear_eval.batch_size = parse(key, v)?,
            "svm_c" => self.svm.c = parse(key, v)?,
            "svm_tolerance" => self.svm.tolerance = parse(key, v)?,
            "svm_max_iter" => self.svm.max_iter = parse(key, v)?,
            "svm_loss" => self.svm.loss = parse::<SvmLoss>(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("fraction must lie in (0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.folds == 0 {
            return bad("folds must be at least 1");
        }
        if self.linear_eval.batch_size == 0 {
            return bad("linear_eval_batch must be at least 1");
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.stft.validate()?;
        self.svm.validate()?;
        Ok(())
    }

    /// Canonical resolved form: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("channel", self.channel.clone());
        put(
            "trim_wake_minutes",
            self.segment.trim_wake_minutes.map_or("off".into(), |v| v.to_string()),
        );
        put("pretext_subjects", self.split.pretext.to_string());
        put("eval_subjects", self.split.eval.to_string());
        put("fraction", self.fraction.to_string());
        put("folds", self.folds.to_string());
        put("encoder", self.encoder.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("eval_start", self.eval_start.to_string());
        put("eval_every", self.eval_every.to_string());
        put("lr", self.adam.lr.to_string());
        put("weight_decay", self.adam.weight_decay.to_string());
        put("adam_beta1", self.adam.beta1.to_string());
        put("adam_beta2", self.adam.beta2.to_string());
        put("adam_eps", self.adam.eps.to_string());
        put("tau", self.loss.tau.to_string());
        put("tau_d", self.loss.tau_d.to_string());
        put("lambda1", self.loss.lambda1.to_string());
        put("lambda2", self.loss.lambda2.to_string());
        put("jitter_amplitude", self.augment.jitter_amplitude.to_string());
        put("mask_segments", self.augment.mask_segments.to_string());
        put("mask_total_fraction", self.augment.mask_total_fraction.to_string());
        put("flip_probability", self.augment.flip_probability.to_string());
        put("scale_sigma", self.augment.scale_sigma.to_string());
        put(
            "scale_mode",
            match self.augment.scale_mode {
                ScaleMode::Scalar => "scalar",
                ScaleMode::Elementwise => "elementwise",
            }
            .into(),
        );
        put("stft_window", self.stft.window_len.to_string());
        put("stft_hop", self.stft.hop.to_string());
        put(
            "stft_window_fn",
            match self.stft.window {
                Window::Hann => "hann",
                Window::Rectangular => "rectangular",
            }
            .into(),
        );
        put("stft_log", self.stft.log_magnitude.to_string());
        put("linear_eval_epochs", self.linear_eval.epochs.to_string());
        put("linear_eval_lr", self.linear_eval.lr.to_string());
        put("linear_eval_batch", self.linear_eval.batch_size.to_string());
        put("svm_c", self.svm.c.to_string());
        put("svm_tolerance", self.svm.tolerance.to_string());
        put("svm_max_iter", self.svm.max_iter.to_string());
        put(
            "svm_loss",
            match self.svm.loss {
                SvmLoss::SquaredHinge => "squared_hinge",
                SvmLoss::Hinge => "hinge",
            }
            .into(),
        );
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of SHA-256 over [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed for a named stage, independent across stage names.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let cfg = RunConfig::parse("seed = 7\nencoder = resnet50 # comment\nfraction=0.2\ntrim_wake_minutes = 30\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.encoder, ResNetVariant::ResNet50);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap().hash(), cfg.hash());
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        assert!(RunConfig::parse("sed = 1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("fraction = 0").is_err());
        assert!(RunConfig::parse("just text").is_err());
    }

    #[test]
    fn hashes_and_seeds_differ() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.stage_seed("split"), a.stage_seed("folds"));
        assert_eq!(a.stage_seed("split"), derive_seed(0, "split"));
    }
}
