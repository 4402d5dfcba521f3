use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sleepssl::epoching::EPOCH_SAMPLES;
use sleepssl::views::*;

fn series(seed: u64, len: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rand::Rng::gen_range(&mut rng, -50.0f32..50.0)).collect()
}

fn plain(window: Window, window_len: usize, hop: usize) -> StftConfig {
    StftConfig {
        window_len,
        hop,
        window,
        log_magnitude: false,
    }
}

/// Lengths of the maximal runs of exact zeros.
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_energy_matches_spectrum(seed in any::<u64>(), log2 in 3u32..9) {
        let n = 1usize << log2;
        let x = series(seed, 3 * n);
        let s = stft(&x, &plain(Window::Rectangular, n, n)).unwrap();
        for f in 0..s.frames {
            let energy: f64 = x[f * n..(f + 1) * n].iter().map(|&v| (v as f64).powi(2)).sum();
            // Real input: bins 1..n/2 appear twice in the full spectrum.
            let mut spectrum = 0.0;
            for k in 0..s.bins {
                let m = (s.get(k, f) as f64).powi(2);
                spectrum += if k == 0 || k == n / 2 { m } else { 2.0 * m };
            }
            prop_assert!((energy - spectrum / n as f64).abs() <= 1e-6 * energy);
        }
    }

    #[test]
    fn shift_by_hop_moves_frames(seed in any::<u64>(), hop in 8usize..64) {
        let cfg = StftConfig { hop, ..StftConfig::default() };
        let x = series(seed, 1200 + hop);
        let a = stft(&x[..1200], &cfg).unwrap();
        let b = stft(&x[hop..], &cfg).unwrap();
        for f in 0..a.frames - 1 {
            for k in 0..a.bins {
                prop_assert!((a.get(k, f + 1) as f64 - b.get(k, f) as f64).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn augmentation_preserves_length_and_bounds_masking(
        seed in any::<u64>(),
        fraction in 0.0f64..0.5,
        segments in 0usize..6,
    ) {
        let cfg = AugmentConfig {
            jitter_amplitude: 0.0,
            mask_segments: segments,
            mask_total_fraction: fraction,
            ..AugmentConfig::default()
        };
        let epoch: Vec<f32> = series(seed, EPOCH_SAMPLES).iter().map(|v| v + 100.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t1 = augment_t1(&epoch, &cfg, &mut rng).unwrap();
        let t2 = augment_t2(&epoch, &cfg, &mut rng).unwrap();
        prop_assert_eq!(t1.len(), EPOCH_SAMPLES);
        prop_assert_eq!(t2.len(), EPOCH_SAMPLES);
        let runs = zero_runs(&t1);
        prop_assert!(runs.len() <= segments);
        prop_assert!(runs.iter().sum::<usize>() <= (fraction * EPOCH_SAMPLES as f64).floor() as usize);
    }

    #[test]
    fn runs_are_disjoint_and_in_range(seed in any::<u64>(), len in 1usize..500, segments in 0usize..8, budget in 0usize..500) {
        let runs = mask_runs(len, segments, budget, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(runs.len() <= segments);
        prop_assert!(runs.iter().map(|r| r.1).sum::<usize>() <= budget.min(len));
        for w in runs.windows(2) {
            prop_assert!(w[0].0 + w[0].1 <= w[1].0);
        }
        if let Some(last) = runs.last() {
            prop_assert!(last.0 + last.1 <= len);
        }
    }
}

#[test]
fn masking_example() {
    let cfg = AugmentConfig {
        jitter_amplitude: 0.0,
        ..AugmentConfig::default()
    };
    let epoch = vec![1.0f32; EPOCH_SAMPLES];
    for seed in 0..50 {
        let t1 = augment_t1(&epoch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let runs = zero_runs(&t1);
        assert!(runs.len() <= 3);
        assert!(runs.iter().sum::<usize>() <= 375);
    }
}

#[test]
fn identity_views_share_one_spectrogram() {
    let epoch = series(3, EPOCH_SAMPLES);
    let engine = Stft::new(StftConfig::default()).unwrap();
    let v = make_views(&epoch, &AugmentConfig::identity(), &engine, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(v.t1, epoch);
    assert_eq!(v.t2, epoch);
    let direct = engine.apply(&epoch).unwrap();
    assert_eq!(v.s1, direct);
    assert_eq!(v.s2, direct);
    assert_eq!((direct.bins, direct.frames), (129, 43));
}

#[test]
fn bundle_is_reproducible() {
    let epoch = series(4, EPOCH_SAMPLES);
    let engine = Stft::new(StftConfig::default()).unwrap();
    let a = make_views(&epoch, &AugmentConfig::default(), &engine, &mut epoch_rng(9, "s1", 5)).unwrap();
    let b = make_views(&epoch, &AugmentConfig::default(), &engine, &mut epoch_rng(9, "s1", 5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.t1.len(), 3000);
    assert_eq!((a.s2.bins, a.s2.frames), (129, 43));
}

#[test]
fn sinusoid_on_a_bin_has_one_peak() {
    // Direct DFT of one frame as the oracle.
    let n = 256;
    let x: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / n as f64).cos() as f32)
        .collect();
    let s = stft(&x, &plain(Window::Rectangular, n, 64)).unwrap();
    for k in 0..s.bins {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (i, &v) in x.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            re += v as f64 * ang.cos();
            im += v as f64 * ang.sin();
        }
        assert!((s.get(k, 0) as f64 - re.hypot(im)).abs() < 1e-3, "bin {k}");
        if k != 8 {
            assert!(s.get(k, 0) < 1e-3);
        }
    }
    assert!((s.get(8, 0) - 128.0).abs() < 1e-3);
}
