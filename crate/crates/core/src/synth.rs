//! Synthetic labelled EEG-like epochs for desk-scale runs.
//!
//! Each class is a narrow band of oscillations around its own centre
//! frequency with random phases, plus white Gaussian noise. Every subject
//! carries a small frequency offset so that folds differ slightly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::edf::ClassId;
use crate::epoching::{EpochStore, SleepEpoch, EPOCH_SAMPLES, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Centre frequency (Hz) for W, N1, N2, N3, REM.
pub const CLASS_FREQUENCIES_HZ: [f64; 5] = [10.0, 6.0, 13.0, 1.5, 4.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub subjects: usize,
    pub seed: u64,
    /// Components summed per epoch, spread over the band.
    pub components: usize,
    /// Half-width of the band relative to the centre frequency.
    pub bandwidth: f64,
    /// Standard deviation of the per-subject relative frequency offset.
    pub subject_shift: f64,
    pub amplitude: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 40,
            subjects: 5,
            seed: 0,
            components: 3,
            bandwidth: 0.1,
            subject_shift: 0.03,
            amplitude: 1.0,
            noise_std: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > ClassId::COUNT {
            return Err(Error::InvalidArgument(format!(
                "classes must be in 1..={}, got {}",
                ClassId::COUNT,
                self.classes
            )));
        }
        if self.per_class == 0 || self.subjects == 0 || self.components == 0 {
            return Err(Error::InvalidArgument(
                "per-class count, subject count and components must be positive".into(),
            ));
        }
        if !(self.bandwidth >= 0.0 && self.bandwidth < 1.0)
            || !(self.subject_shift >= 0.0)
            || !(self.amplitude > 0.0)
            || !(self.noise_std >= 0.0)
        {
            return Err(Error::InvalidArgument("invalid synthetic signal parameters".into()));
        }
        Ok(())
    }
}

pub fn subject_name(i: usize) -> String {
    format!("syn{i:02}")
}

/// Epoch `j` of class `c` goes to subject `j mod subjects`; each subject's
/// epochs are indexed in generation order.
pub fn generate(cfg: &SynthConfig) -> Result<EpochStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shift = Normal::new(0.0, cfg.subject_shift).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let offsets: Vec<f64> = (0..cfg.subjects).map(|_| shift.sample(&mut rng)).collect();
    let mut next_index = vec![0usize; cfg.subjects];
    let mut epochs = Vec::with_capacity(cfg.classes * cfg.per_class);
    let per_component = cfg.amplitude / (cfg.components as f64).sqrt();
    for c in 0..cfg.classes {
        for j in 0..cfg.per_class {
            let s = j % cfg.subjects;
            let centre = CLASS_FREQUENCIES_HZ[c] * (1.0 + offsets[s]);
            let waves: Vec<(f64, f64)> = (0..cfg.components)
                .map(|_| {
                    let f = centre * (1.0 + rng.gen_range(-cfg.bandwidth..=cfg.bandwidth));
                    (f, rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            let values: Vec<f32> = (0..EPOCH_SAMPLES)
                .map(|n| {
                    let t = n as f64 / SAMPLE_RATE_HZ;
                    let clean: f64 = waves
                        .iter()
                        .map(|&(f, phase)| per_component * (std::f64::consts::TAU * f * t + phase).sin())
                        .sum();
                    (clean + noise.sample(&mut rng)) as f32
                })
                .collect();
            epochs.push(SleepEpoch::new(
                subject_name(s),
                next_index[s],
                values,
                Some(ClassId::new(c as u8)?),
            )?);
            next_index[s] += 1;
        }
    }
    let mut store = EpochStore::new(epochs);
    store.meta.insert("source".into(), "synthetic".into());
    store.meta.insert("synth_seed".into(), cfg.seed.to_string());
    Ok(store)
}
