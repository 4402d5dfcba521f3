//! The four views of an epoch: two augmented time series and their
//! log-magnitude spectrograms.

use std::hash::Hasher;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::epoching::EPOCH_SAMPLES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// One multiplicative factor for the whole epoch.
    Scalar,
    /// An independent factor per sample.
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Uniform jitter half-width as a multiple of the epoch's std.
    pub jitter_amplitude: f64,
    pub mask_segments: usize,
    pub mask_total_fraction: f64,
    pub flip_probability: f64,
    pub scale_sigma: f64,
    pub scale_mode: ScaleMode,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_amplitude: 0.1,
            mask_segments: 3,
            mask_total_fraction: 0.125,
            flip_probability: 0.5,
            scale_sigma: 0.1,
            scale_mode: ScaleMode::Scalar,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Leaves every epoch unchanged.
    pub fn identity() -> Self {
        Self {
            jitter_amplitude: 0.0,
            mask_segments: 0,
            mask_total_fraction: 0.0,
            flip_probability: 0.0,
            scale_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.mask_total_fraction) || !unit(self.flip_probability) {
            return Err(Error::InvalidArgument("augmentation fractions must lie in [0, 1]".into()));
        }
        if !(self.jitter_amplitude >= 0.0) || !(self.scale_sigma >= 0.0) {
            return Err(Error::InvalidArgument(
                "jitter amplitude and scale sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn check_len(x: &[f32]) -> Result<()> {
    if x.len() != EPOCH_SAMPLES {
        return Err(Error::Dimension(format!("epoch of {} samples", x.len())));
    }
    Ok(())
}

fn population_std(x: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    (x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Draws up to `segments` disjoint runs whose lengths sum to at most
/// `budget`, returned as sorted `(start, len)` pairs.
pub fn mask_runs<R: Rng + ?Sized>(len: usize, segments: usize, budget: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if segments == 0 || budget == 0 || len == 0 {
        return Vec::new();
    }
    let total = rng.gen_range(0..=budget.min(len));
    if total == 0 {
        return Vec::new();
    }
    // Split `total` into `segments` nonnegative parts, then spread the runs
    // over the free samples with sorted gap cut points.
    let mut cuts: Vec<usize> = (0..segments - 1).map(|_| rng.gen_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(segments);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        lengths.push(c - prev);
        prev = c;
    }
    let free = len - total;
    let mut gaps: Vec<usize> = (0..segments).map(|_| rng.gen_range(0..=free)).collect();
    gaps.sort_unstable();
    let mut runs = Vec::new();
    let mut used = 0;
    for (gap, l) in gaps.into_iter().zip(lengths) {
        if l > 0 {
            runs.push((gap + used, l));
        }
        used += l;
    }
    runs
}

/// Uniform jitter scaled by the epoch's std, followed by zero masking.
pub fn augment_t1<R: Rng + ?Sized>(epoch: &[f32], config: &AugmentConfig, rng: &mut R) -> Result<Vec<f32>> {
    check_len(epoch)?;
    let a = config.jitter_amplitude * population_std(epoch);
    let mut out: Vec<f32> = if a > 0.0 {
        epoch.iter().map(|&v| (v as f64 + rng.gen_range(-a..=a)) as f32).collect()
    } else {
        epoch.to_vec()
    };
    let budget = (config.mask_total_fraction * EPOCH_SAMPLES as f64).floor() as usize;
    for (start, len) in mask_runs(out.len(), config.mask_segments, budget, rng) {
        out[start..start + len].fill(0.0);
    }
    Ok(out)
}

/// Optional time reversal, then Gaussian scaling around 1.
pub fn augment_t2<R: Rng + ?Sized>(epoch: &[f32], config: &AugmentConfig, rng: &mut R) -> Result<Vec<f32>> {
    check_len(epoch)?;
    let mut out = epoch.to_vec();
    if config.flip_probability > 0.0 && rng.gen_bool(config.flip_probability) {
        out.reverse();
    }
    if config.scale_sigma > 0.0 {
        let dist = Normal::new(1.0, config.scale_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        match config.scale_mode {
            ScaleMode::Scalar => {
                let s = dist.sample(rng) as f32;
                out.iter_mut().for_each(|v| *v *= s);
            }
            ScaleMode::Elementwise => out.iter_mut().for_each(|v| *v *= dist.sample(rng) as f32),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
    /// `log(1 + |X|)` when true, plain `|X|` otherwise.
    pub log_magnitude: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 64,
            window: Window::Hann,
            log_magnitude: true,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len || self.window_len > EPOCH_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "STFT needs 0 < hop ({}) <= window ({}) <= {EPOCH_SAMPLES}",
                self.hop, self.window_len
            )));
        }
        Ok(())
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| match self.window {
                Window::Hann => 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos(),
                Window::Rectangular => 1.0,
            })
            .collect()
    }
}

/// Row-major `bins × frames` spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f32 {
        self.data[bin * self.frames + frame]
    }
}

/// Reusable planned transform for one configuration.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        if config.hop == 0 || config.hop > config.window_len {
            return Err(Error::InvalidArgument(format!(
                "STFT needs 0 < hop ({}) <= window ({})",
                config.hop, config.window_len
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(config.window_len);
        Ok(Self {
            window: config.window_coefficients(),
            config,
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn apply(&self, series: &[f32]) -> Result<Spectrogram> {
        let c = &self.config;
        if series.len() < c.window_len {
            return Err(Error::InvalidArgument(format!(
                "series of {} samples is shorter than the {}-sample window",
                series.len(),
                c.window_len
            )));
        }
        let frames = c.frames(series.len());
        let bins = c.bins();
        let mut data = vec![0.0f32; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); c.window_len];
        for f in 0..frames {
            let start = f * c.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(series[start + i] as f64 * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                let m = buf[k].norm();
                data[k * frames + f] = if c.log_magnitude { m.ln_1p() } else { m } as f32;
            }
        }
        Ok(Spectrogram { bins, frames, data })
    }
}

pub fn stft(series: &[f32], config: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*config)?.apply(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub t1: Vec<f32>,
    pub t2: Vec<f32>,
    pub s1: Spectrogram,
    pub s2: Spectrogram,
}

pub fn make_views<R: Rng + ?Sized>(
    epoch: &[f32],
    augment: &AugmentConfig,
    stft: &Stft,
    rng: &mut R,
) -> Result<ViewBundle> {
    let t1 = augment_t1(epoch, augment, rng)?;
    let t2 = augment_t2(epoch, augment, rng)?;
    let s1 = stft.apply(&t1)?;
    let s2 = stft.apply(&t2)?;
    Ok(ViewBundle { t1, t2, s1, s2 })
}

/// Per-epoch generator keyed on `(seed, subject, index)`, so views do not
/// depend on batch composition or iteration order.
pub fn epoch_rng(seed: u64, subject: &str, index: usize) -> ChaCha8Rng {
    let mut h = Fnv1a::default();
    h.write_u64(seed);
    h.write(subject.as_bytes());
    h.write_u8(0xff);
    h.write_u64(index as u64);
    ChaCha8Rng::seed_from_u64(h.finish())
}

struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf29ce484222325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq_hz: f64) -> Vec<f32> {
        (0..EPOCH_SAMPLES)
            .map(|i| (2.0 * std::f64::consts::PI * freq_hz * i as f64 / 100.0).sin() as f32)
            .collect()
    }

    /// Maximal runs of exact zeros, counted independently of `mask_runs`.
    fn zero_runs(x: &[f32]) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = 0;
        for &v in x {
            if v == 0.0 {
                cur += 1;
            } else if cur > 0 {
                runs.push(cur);
                cur = 0;
            }
        }
        if cur > 0 {
            runs.push(cur);
        }
        runs
    }

    #[test]
    fn identity_configuration() {
        let x = sine(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig::identity();
        assert_eq!(augment_t1(&x, &cfg, &mut rng).unwrap(), x);
        assert_eq!(augment_t2(&x, &cfg, &mut rng).unwrap(), x);
    }

    #[test]
    fn masking_budget() {
        let x: Vec<f32> = (0..EPOCH_SAMPLES).map(|i| 1.0 + i as f32).collect();
        let cfg = AugmentConfig {
            jitter_amplitude: 0.0,
            ..AugmentConfig::default()
        };
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t1 = augment_t1(&x, &cfg, &mut rng).unwrap();
            let runs = zero_runs(&t1);
            assert!(runs.len() <= 3, "{runs:?}");
            assert!(runs.iter().sum::<usize>() <= 375);
        }
    }

    #[test]
    fn zero_epoch_stays_zero() {
        let x = vec![0.0f32; EPOCH_SAMPLES];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t1 = augment_t1(&x, &AugmentConfig::default(), &mut rng).unwrap();
        assert!(t1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_only() {
        let x = sine(1.3);
        let cfg = AugmentConfig {
            flip_probability: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let once = augment_t2(&x, &cfg, &mut rng).unwrap();
        let mut rev = x.clone();
        rev.reverse();
        assert_eq!(once, rev);
        assert_eq!(augment_t2(&once, &cfg, &mut rng).unwrap(), x);
    }

    #[test]
    fn scalar_scaling_is_uniform() {
        let x = vec![2.0f32; EPOCH_SAMPLES];
        let cfg = AugmentConfig {
            scale_sigma: 0.1,
            ..AugmentConfig::identity()
        };
        let t2 = augment_t2(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert!(t2.iter().all(|&v| v == t2[0]));
        assert_ne!(t2[0], 2.0);
    }

    #[test]
    fn zero_series_and_shape() {
        let s = stft(&vec![0.0; EPOCH_SAMPLES], &StftConfig::default()).unwrap();
        assert_eq!((s.bins, s.frames), (129, 43));
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert!(stft(&[0.0; 100], &StftConfig::default()).is_err());
    }

    #[test]
    fn frame_count_by_enumeration() {
        let cfg = StftConfig::default();
        let mut count = 0;
        let mut start = 0;
        while start + cfg.window_len <= EPOCH_SAMPLES {
            count += 1;
            start += cfg.hop;
        }
        assert_eq!(count, 43);
        assert_eq!(cfg.frames(EPOCH_SAMPLES), count);
    }

    #[test]
    fn bin_eight_sinusoid_rectangular() {
        let cfg = StftConfig {
            window: Window::Rectangular,
            log_magnitude: false,
            ..StftConfig::default()
        };
        // Frequency of bin 8: 8 cycles per 256-sample window.
        let x: Vec<f32> = (0..EPOCH_SAMPLES)
            .map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / 256.0).cos() as f32)
            .collect();
        let s = stft(&x, &cfg).unwrap();
        for f in 0..s.frames {
            // Direct DFT of this frame at every retained bin.
            let frame = &x[f * 64..f * 64 + 256];
            let dft: Vec<f64> = (0..129)
                .map(|k| {
                    let (mut re, mut im) = (0.0f64, 0.0f64);
                    for (n, &v) in frame.iter().enumerate() {
                        let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / 256.0;
                        re += v as f64 * ang.cos();
                        im += v as f64 * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect();
            let argmax = (0..129).max_by(|&a, &b| dft[a].total_cmp(&dft[b])).unwrap();
            assert_eq!(argmax, 8);
            for k in 0..129 {
                assert!((s.get(k, f) as f64 - dft[k]).abs() < 1e-3);
                if k != 8 {
                    assert!(dft[k] < 1e-3 * dft[8]);
                }
            }
        }
    }

    #[test]
    fn views_shapes_and_determinism() {
        let x = sine(10.0);
        let st = Stft::new(StftConfig::default()).unwrap();
        let cfg = AugmentConfig::default();
        let a = make_views(&x, &cfg, &st, &mut epoch_rng(1, "s", 3)).unwrap();
        let b = make_views(&x, &cfg, &st, &mut epoch_rng(1, "s", 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.t1.len(), a.t2.len()), (3000, 3000));
        assert_eq!((a.s1.bins, a.s1.frames, a.s2.bins, a.s2.frames), (129, 43, 129, 43));
        let id = make_views(&x, &AugmentConfig::identity(), &st, &mut epoch_rng(1, "s", 3)).unwrap();
        let direct = st.apply(&x).unwrap();
        assert_eq!(id.s1, direct);
        assert_eq!(id.s2, direct);
        assert_ne!(a, make_views(&x, &cfg, &st, &mut epoch_rng(1, "s", 4)).unwrap());
    }
}
