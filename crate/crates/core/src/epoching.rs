//! Thirty-second epochs, subject splits, pretext subsampling, subject-level
//! folds, and the `SSEP` epoch store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edf::{map_stage, ClassId, Recording, StageInterval};
use crate::error::{Error, Result};
use crate::io::{self, Meta, Reader};

pub const EPOCH_SECONDS: f64 = 30.0;
pub const SAMPLE_RATE_HZ: f64 = 100.0;
pub const EPOCH_SAMPLES: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct SleepEpoch {
    pub subject_id: String,
    /// Position among the epochs emitted for this subject's recording.
    pub index: usize,
    pub values: Vec<f32>,
    pub label: Option<ClassId>,
}

impl SleepEpoch {
    pub fn new(subject_id: impl Into<String>, index: usize, values: Vec<f32>, label: Option<ClassId>) -> Result<Self> {
        if values.len() != EPOCH_SAMPLES {
            return Err(Error::Dimension(format!(
                "epoch has {} samples, expected {EPOCH_SAMPLES}",
                values.len()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            index,
            values,
            label,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    /// Keep only this many minutes of wake before the first and after the
    /// last non-wake epoch. `None` keeps every epoch.
    pub trim_wake_minutes: Option<f64>,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { trim_wake_minutes: None }
    }
}

/// Cuts a 100 Hz recording into labelled 3000-sample windows. Windows start
/// at each interval's onset and step by 30 s inside it; windows that would
/// run past the interval or the recording are dropped, as are windows
/// whose stage has no class.
pub fn segment_epochs(
    recording: &Recording,
    intervals: &[StageInterval],
    options: SegmentOptions,
) -> Result<Vec<SleepEpoch>> {
    if recording.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::SampleRate(recording.sample_rate_hz));
    }
    check_coverage(recording.duration_s(), intervals)?;
    let mut epochs = Vec::new();
    for iv in intervals {
        let Some(label) = map_stage(iv.raw_label) else {
            continue;
        };
        let start = (iv.onset_s * SAMPLE_RATE_HZ).round() as i64;
        let count = (iv.duration_s / EPOCH_SECONDS + 1e-9).floor() as i64;
        for k in 0..count {
            let s = start + k * EPOCH_SAMPLES as i64;
            if s < 0 {
                continue;
            }
            let s = s as usize;
            let e = s + EPOCH_SAMPLES;
            if e > recording.samples.len() {
                break;
            }
            let values = recording.samples[s..e].iter().map(|&v| v as f32).collect();
            epochs.push(SleepEpoch {
                subject_id: recording.subject_id.clone(),
                index: 0,
                values,
                label: Some(label),
            });
        }
    }
    if let Some(minutes) = options.trim_wake_minutes {
        epochs = trim_wake(epochs, minutes);
    }
    for (i, e) in epochs.iter_mut().enumerate() {
        e.index = i;
    }
    Ok(epochs)
}

/// The scored timeline must end within one epoch of the recording end.
/// Sleep-EDF hypnograms often close with an unscored or movement interval
/// that overruns the signal; an overrun made only of such intervals is
/// accepted.
fn check_coverage(recording_s: f64, intervals: &[StageInterval]) -> Result<()> {
    let scored_end = intervals
        .iter()
        .filter(|iv| map_stage(iv.raw_label).is_some())
        .map(StageInterval::end_s)
        .fold(0.0, f64::max);
    let any_end = intervals.iter().map(StageInterval::end_s).fold(0.0, f64::max);
    let scored_overrun = scored_end - recording_s > EPOCH_SECONDS;
    let under = recording_s - any_end > EPOCH_SECONDS;
    if scored_overrun || under {
        return Err(Error::CoverageMismatch {
            intervals_s: if scored_overrun { scored_end } else { any_end },
            recording_s,
        });
    }
    Ok(())
}

fn trim_wake(epochs: Vec<SleepEpoch>, minutes: f64) -> Vec<SleepEpoch> {
    let margin = (minutes * 60.0 / EPOCH_SECONDS).round() as usize;
    let asleep = |e: &SleepEpoch| e.label.is_some_and(|c| c.0 != 0);
    let (Some(first), Some(last)) = (epochs.iter().position(asleep), epochs.iter().rposition(asleep)) else {
        return epochs;
    };
    let lo = first.saturating_sub(margin);
    let hi = (last + margin).min(epochs.len() - 1);
    epochs.into_iter().skip(lo).take(hi - lo + 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub pretext: usize,
    pub eval: usize,
}

impl SplitCounts {
    pub const SLEEP_EDF: SplitCounts = SplitCounts { pretext: 58, eval: 20 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub pretext_subjects: Vec<String>,
    pub eval_subjects: Vec<String>,
    pub pretext_fraction: f64,
    pub seed: u64,
}

/// Shuffles the distinct subject ids under `seed` and deals the first
/// `counts.pretext` to the pretext group and the next `counts.eval` to
/// evaluation.
pub fn make_split(subject_ids: &[String], counts: SplitCounts, pretext_fraction: f64, seed: u64) -> Result<SplitPlan> {
    check_fraction(pretext_fraction)?;
    let mut ids: Vec<String> = subject_ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let needed = counts.pretext + counts.eval;
    if ids.len() < needed {
        return Err(Error::InsufficientSubjects {
            needed,
            available: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eval_subjects = ids[counts.pretext..needed].to_vec();
    ids.truncate(counts.pretext);
    Ok(SplitPlan {
        pretext_subjects: ids,
        eval_subjects,
        pretext_fraction,
        seed,
    })
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("fraction {f} outside (0, 1]")))
    }
}

/// Seed-deterministic selection of `round(fraction * n)` epochs without
/// replacement, returned in their original order.
pub fn subsample_pretext(epochs: &[SleepEpoch], fraction: f64, seed: u64) -> Result<Vec<SleepEpoch>> {
    if epochs.is_empty() {
        return Err(Error::Empty("pretext epochs"));
    }
    check_fraction(fraction)?;
    if fraction == 1.0 {
        return Ok(epochs.to_vec());
    }
    let n = epochs.len();
    let take = ((fraction * n as f64).round() as usize).min(n);
    let mut picked = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, take).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| epochs[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_subject: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.fold_of_subject.get(subject).copied()
    }

    /// Subject ids per fold, sorted.
    pub fn folds(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (s, &f) in &self.fold_of_subject {
            out[f].push(s.clone());
        }
        out
    }

    /// Row indices of the training and test part of `fold` for rows with
    /// the given subject ids. Rows of unknown subjects are in neither.
    pub fn split_rows(&self, subjects: &[String], fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in subjects.iter().enumerate() {
            match self.fold_of(s) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {}
            }
        }
        (train, test)
    }
}

/// Subject-level k-fold assignment: shuffle under `seed`, then deal
/// round-robin so fold sizes differ by at most one.
pub fn kfold(eval_subjects: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut ids: Vec<String> = eval_subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k == 0 || k > ids.len() {
        return Err(Error::InsufficientSubjects {
            needed: k.max(1),
            available: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of_subject = ids.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldAssignment { k, fold_of_subject })
}

pub const STORE_MAGIC: &[u8; 4] = b"SSEP";
pub const STORE_VERSION: u16 = 1;
const UNLABELED: u8 = 255;

/// An epoch corpus as written to disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStore {
    pub epochs: Vec<SleepEpoch>,
    pub meta: Meta,
}

impl EpochStore {
    pub fn new(epochs: Vec<SleepEpoch>) -> Self {
        Self {
            epochs,
            meta: Meta::new(),
        }
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.epochs
            .iter()
            .filter(|e| seen.insert(e.subject_id.clone()))
            .map(|e| e.subject_id.clone())
            .collect()
    }

    pub fn of_subjects(&self, subjects: &[String]) -> Vec<SleepEpoch> {
        let set: BTreeSet<&String> = subjects.iter().collect();
        self.epochs.iter().filter(|e| set.contains(&e.subject_id)).cloned().collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.epochs.len()).map_err(|_| Error::InvalidArgument("too many epochs".into()))?;
        let mut buf = Vec::with_capacity(self.epochs.len() * (EPOCH_SAMPLES * 4 + 16) + 16);
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&count.to_le_bytes());
        for e in &self.epochs {
            if e.values.len() != EPOCH_SAMPLES {
                return Err(Error::Dimension(format!("epoch with {} samples", e.values.len())));
            }
            io::put_string_u16(&mut buf, &e.subject_id)?;
            buf.push(e.label.map_or(UNLABELED, |c| c.0));
            io::put_f32s(&mut buf, &e.values);
        }
        io::put_meta(&mut buf, &self.meta)?;
        Ok(buf)
    }

    /// Epoch indices are reassigned per subject in file order.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "epoch store");
        r.magic(STORE_MAGIC)?;
        let version = r.u16()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("epoch store version {version} unsupported")));
        }
        let count = r.u32()? as usize;
        let mut epochs = Vec::with_capacity(count.min(1 << 20));
        let mut next_index: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..count {
            let subject_id = r.string_u16()?;
            let label = match r.u8()? {
                UNLABELED => None,
                c => Some(ClassId::new(c).map_err(|_| Error::Format(format!("label byte {c}")))?),
            };
            let mut values = Vec::with_capacity(EPOCH_SAMPLES);
            r.f32s(EPOCH_SAMPLES, &mut values)?;
            let slot = next_index.entry(subject_id.clone()).or_insert(0);
            epochs.push(SleepEpoch {
                subject_id,
                index: *slot,
                values,
                label,
            });
            *slot += 1;
        }
        let meta = r.finish_with_meta()?;
        Ok(Self { epochs, meta })
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        io::write_all(std::fs::File::create(path)?, &self.to_bytes()?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&io::read_all(std::fs::File::open(path)?)?)
    }

    /// `subject_id,file,epoch_index,label` with an empty label for
    /// unlabelled epochs.
    pub fn manifest_csv(&self, file: &str) -> String {
        let mut out = String::from("subject_id,file,epoch_index,label\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let label = e.label.map_or(String::new(), |c| c.0.to_string());
            let _ = writeln!(out, "{},{},{},{}", e.subject_id, file, i, label);
        }
        out
    }
}
