//! Directory ingestion: pairs `<prefix>-PSG.edf` with
//! `<prefix>-Hypnogram.edf` and segments every pair into labelled epochs.
//!
//! Sleep-EDF names the two files of one night with different final
//! characters (`SC4001E0-PSG.edf`, `SC4001EC-Hypnogram.edf`), so a PSG file
//! without an exact partner is matched to the single hypnogram whose
//! prefix agrees on everything but the last character.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::edf::{parse_edf, parse_hypnogram};
use crate::epoching::{segment_epochs, EpochStore, SegmentOptions, SleepEpoch};
use crate::error::{Error, Result};

pub const PSG_SUFFIX: &str = "-PSG.edf";
pub const HYPNOGRAM_SUFFIX: &str = "-Hypnogram.edf";
/// Environment variable naming a directory of Sleep-EDF files.
pub const DATA_DIR_ENV: &str = "SLEEPSSL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingPair {
    pub prefix: String,
    pub subject_id: String,
    pub psg: PathBuf,
    pub hypnogram: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<RecordingPair>,
    /// Files with one of the two suffixes and no partner.
    pub unpaired: Vec<PathBuf>,
}

/// Sleep-EDF cassette and telemetry files are named `SC4ssN..`/`ST7ssN..`
/// with a two-digit subject `ss` and night `N`; both nights of a subject
/// share the id `SC4ss`. Other names use the whole prefix.
pub fn subject_of(prefix: &str) -> String {
    let b = prefix.as_bytes();
    let sleep_edf = b.len() >= 6
        && (prefix.starts_with("SC4") || prefix.starts_with("ST7"))
        && b[3..6].iter().all(u8::is_ascii_digit);
    if sleep_edf {
        prefix[..5].to_string()
    } else {
        prefix.to_string()
    }
}

fn drop_last_char(s: &str) -> &str {
    s.char_indices().last().map_or(s, |(i, _)| &s[..i])
}

pub fn pair_files(dir: &Path) -> Result<Pairing> {
    let mut psg = BTreeMap::new();
    let mut hyp = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(p) = name.strip_suffix(PSG_SUFFIX) {
            psg.insert(p.to_string(), path.clone());
        } else if let Some(p) = name.strip_suffix(HYPNOGRAM_SUFFIX) {
            hyp.insert(p.to_string(), path.clone());
        }
    }
    let mut out = Pairing::default();
    let mut loose = Vec::new();
    for (prefix, path) in psg {
        match hyp.remove(&prefix) {
            Some(h) => out.pairs.push(RecordingPair {
                subject_id: subject_of(&prefix),
                prefix,
                psg: path,
                hypnogram: h,
            }),
            None => loose.push((prefix, path)),
        }
    }
    for (prefix, path) in loose {
        let stem = drop_last_char(&prefix);
        let candidates: Vec<String> = hyp
            .keys()
            .filter(|k| k.len() == prefix.len() && drop_last_char(k) == stem)
            .cloned()
            .collect();
        if let [only] = candidates.as_slice() {
            let h = hyp.remove(only).unwrap();
            out.pairs.push(RecordingPair {
                subject_id: subject_of(&prefix),
                prefix,
                psg: path,
                hypnogram: h,
            });
        } else {
            out.unpaired.push(path);
        }
    }
    out.unpaired.extend(hyp.into_values());
    out.pairs.sort_by(|a, b| a.prefix.cmp(&b.prefix));
    out.unpaired.sort();
    Ok(out)
}

/// Epochs of one night; the subject id comes from the file name.
pub fn ingest_pair(pair: &RecordingPair, channel: &str, options: SegmentOptions) -> Result<Vec<SleepEpoch>> {
    let mut rec = parse_edf(&std::fs::read(&pair.psg)?, channel)?;
    rec.subject_id = pair.subject_id.clone();
    let intervals = parse_hypnogram(&std::fs::read(&pair.hypnogram)?)?;
    segment_epochs(&rec, &intervals, options)
}

#[derive(Debug)]
pub struct Ingested {
    pub store: EpochStore,
    pub pairing: Pairing,
    /// Prefix and reason for every pair that failed.
    pub skipped: Vec<(String, String)>,
}

/// Ingests every pair in `dir`. Failing pairs are skipped and reported;
/// the call fails only when no pair succeeds.
pub fn ingest_dir(dir: &Path, channel: &str, options: SegmentOptions) -> Result<Ingested> {
    let pairing = pair_files(dir)?;
    if pairing.pairs.is_empty() {
        return Err(Error::NoRecordingPairs);
    }
    let mut epochs: Vec<SleepEpoch> = Vec::new();
    let mut next_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = Vec::new();
    for pair in &pairing.pairs {
        match ingest_pair(pair, channel, options) {
            Ok(night) => {
                let next = next_index.entry(pair.subject_id.clone()).or_default();
                for mut e in night {
                    e.index = *next;
                    *next += 1;
                    epochs.push(e);
                }
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", pair.prefix);
                skipped.push((pair.prefix.clone(), e.to_string()));
            }
        }
    }
    if skipped.len() == pairing.pairs.len() {
        return Err(Error::NoPairIngested(
            skipped.iter().map(|(p, r)| format!("{p}: {r}")).collect::<Vec<_>>().join("; "),
        ));
    }
    let mut store = EpochStore::new(epochs);
    store.meta.insert("source".into(), "edf".into());
    store.meta.insert("channel".into(), channel.to_string());
    store.meta.insert("recordings".into(), (pairing.pairs.len() - skipped.len()).to_string());
    Ok(Ingested {
        store,
        pairing,
        skipped,
    })
}
