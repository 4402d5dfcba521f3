//! EDF/EDF+ polysomnography and hypnogram parsing.
//!
//! Only what the pipeline needs: a single calibrated channel out of a
//! `*PSG.edf` file, and sleep-stage intervals out of the time-stamped
//! annotation lists (TALs) of a `*Hypnogram.edf` file. A small writer for
//! both kinds of file is included so synthetic fixtures can be produced
//! without real recordings.

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_CHANNEL: &str = "EEG Fpz-Cz";
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

const MAIN_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const TAL_DURATION: u8 = 0x15;
const TAL_SEPARATOR: u8 = 0x14;
const TAL_END: u8 = 0x00;

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    /// Number of data records, resolved from the file size when the header
    /// says `-1`.
    pub num_records: usize,
    pub record_duration_s: f64,
    pub num_signals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub label: String,
    pub physical_dim: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl SignalSpec {
    /// Physical units per digital step.
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn calibrate(&self, digital: i16) -> f64 {
        self.physical_min + (digital as i32 - self.digital_min) as f64 * self.gain()
    }

    /// Nearest digital level for a physical value, clamped to the digital
    /// range.
    pub fn quantize(&self, physical: f64) -> i16 {
        let d = ((physical - self.physical_min) / self.gain()).round() + self.digital_min as f64;
        d.clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }
}

/// One calibrated channel of a PSG file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub channel: String,
    pub sample_rate_hz: f64,
    /// Physical units, microvolts for Sleep-EDF EEG channels.
    pub samples: Vec<f64>,
    /// Start of the recording in seconds since 1970-01-01.
    pub start_epoch_time: i64,
}

impl Recording {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Hypnogram labels as scored in Sleep-EDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RawStage {
    Wake,
    Rem,
    S1,
    S2,
    S3,
    S4,
    Movement,
    Unscored,
}

impl RawStage {
    pub const ALL: [RawStage; 8] = [
        RawStage::Wake,
        RawStage::Rem,
        RawStage::S1,
        RawStage::S2,
        RawStage::S3,
        RawStage::S4,
        RawStage::Movement,
        RawStage::Unscored,
    ];

    pub fn code(self) -> char {
        match self {
            RawStage::Wake => 'W',
            RawStage::Rem => 'R',
            RawStage::S1 => '1',
            RawStage::S2 => '2',
            RawStage::S3 => '3',
            RawStage::S4 => '4',
            RawStage::Movement => 'M',
            RawStage::Unscored => '?',
        }
    }

    /// Parses one of the eight single-character codes.
    pub fn from_code(code: &str) -> Result<Self> {
        Ok(match code {
            "W" => RawStage::Wake,
            "R" => RawStage::Rem,
            "1" => RawStage::S1,
            "2" => RawStage::S2,
            "3" => RawStage::S3,
            "4" => RawStage::S4,
            "M" => RawStage::Movement,
            "?" => RawStage::Unscored,
            other => return Err(Error::UnknownStage(other.to_string())),
        })
    }

    /// Maps a hypnogram annotation text; `None` for non-stage annotations.
    pub fn from_annotation(text: &str) -> Option<Self> {
        match text.trim() {
            "Movement time" => Some(RawStage::Movement),
            t => t.strip_prefix("Sleep stage ").and_then(|c| Self::from_code(c.trim()).ok()),
        }
    }

    pub fn annotation_text(self) -> String {
        match self {
            RawStage::Movement => "Movement time".to_string(),
            s => format!("Sleep stage {}", s.code()),
        }
    }
}

impl fmt::Display for RawStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// Five-class sleep stage: 0 W, 1 N1, 2 N2, 3 N3, 4 REM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const COUNT: usize = 5;
    pub const NAMES: [&'static str; 5] = ["W", "N1", "N2", "N3", "REM"];

    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < Self::COUNT {
            Ok(ClassId(id))
        } else {
            Err(Error::InvalidArgument(format!("class id {id} outside 0..5")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Stage classes: stages 3 and 4 merge into N3; movement and unscored
/// intervals have no class.
pub fn map_stage(raw: RawStage) -> Option<ClassId> {
    match raw {
        RawStage::Wake => Some(ClassId(0)),
        RawStage::S1 => Some(ClassId(1)),
        RawStage::S2 => Some(ClassId(2)),
        RawStage::S3 | RawStage::S4 => Some(ClassId(3)),
        RawStage::Rem => Some(ClassId(4)),
        RawStage::Movement | RawStage::Unscored => None,
    }
}

/// [`map_stage`] for a textual code, rejecting anything outside the eight
/// hypnogram labels.
pub fn map_stage_code(code: &str) -> Result<Option<ClassId>> {
    RawStage::from_code(code).map(map_stage)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageInterval {
    pub onset_s: f64,
    pub duration_s: f64,
    pub raw_label: RawStage,
}

impl StageInterval {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

fn ascii_field(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim().to_string()
}

fn numeric<T: std::str::FromStr>(field: &'static str, bytes: &[u8]) -> Result<T> {
    let s = ascii_field(bytes);
    s.parse().map_err(|_| Error::HeaderField { field, value: s })
}

/// Parsed header block plus the byte layout of one data record.
#[derive(Debug, Clone)]
pub struct EdfLayout {
    pub header: EdfHeader,
    pub signals: Vec<SignalSpec>,
    pub record_bytes: usize,
}

impl EdfLayout {
    fn signal_offset(&self, index: usize) -> usize {
        self.signals[..index].iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn signal_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label.trim())
    }
}

/// Parses the main and per-signal headers and checks the data section
/// length against them.
pub fn parse_layout(bytes: &[u8]) -> Result<EdfLayout> {
    if bytes.len() < MAIN_HEADER {
        return Err(Error::TruncatedHeader);
    }
    let h = &bytes[..MAIN_HEADER];
    let header_bytes: usize = numeric("header_bytes", &h[184..192])?;
    let declared_records: i64 = numeric("num_records", &h[236..244])?;
    let record_duration_s: f64 = numeric("record_duration", &h[244..252])?;
    let num_signals: usize = numeric("num_signals", &h[252..256])?;
    if num_signals == 0 {
        return Err(Error::HeaderField {
            field: "num_signals",
            value: "0".into(),
        });
    }
    if header_bytes != MAIN_HEADER + SIGNAL_HEADER * num_signals {
        return Err(Error::HeaderField {
            field: "header_bytes",
            value: header_bytes.to_string(),
        });
    }
    if !(record_duration_s >= 0.0) {
        return Err(Error::HeaderField {
            field: "record_duration",
            value: record_duration_s.to_string(),
        });
    }
    if bytes.len() < header_bytes {
        return Err(Error::TruncatedHeader);
    }
    let ns = num_signals;
    let sig = &bytes[MAIN_HEADER..header_bytes];
    // Field arrays follow each other: label, transducer, dimension, pmin,
    // pmax, dmin, dmax, prefiltering, samples per record, reserved.
    let field = |offset: usize, width: usize, i: usize| &sig[offset * ns + i * width..offset * ns + (i + 1) * width];
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let spec = SignalSpec {
            label: ascii_field(field(0, 16, i)),
            physical_dim: ascii_field(field(16 + 80, 8, i)),
            physical_min: numeric("physical_min", field(104, 8, i))?,
            physical_max: numeric("physical_max", field(112, 8, i))?,
            digital_min: numeric("digital_min", field(120, 8, i))?,
            digital_max: numeric("digital_max", field(128, 8, i))?,
            samples_per_record: numeric("samples_per_record", field(216, 8, i))?,
        };
        signals.push(spec);
    }
    let record_bytes: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
    let data_len = bytes.len() - header_bytes;
    let num_records = if declared_records < 0 {
        if record_bytes == 0 {
            0
        } else {
            data_len / record_bytes
        }
    } else {
        declared_records as usize
    };
    if data_len < num_records * record_bytes {
        return Err(Error::TruncatedData);
    }
    let header = EdfHeader {
        version: ascii_field(&h[0..8]),
        patient_id: ascii_field(&h[8..88]),
        recording_id: ascii_field(&h[88..168]),
        start_date: ascii_field(&h[168..176]),
        start_time: ascii_field(&h[176..184]),
        header_bytes,
        num_records,
        record_duration_s,
        num_signals,
    };
    Ok(EdfLayout {
        header,
        signals,
        record_bytes,
    })
}

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// `dd.mm.yy` + `hh.mm.ss` to seconds since 1970; two-digit years 85–99
/// are 1985–1999, the rest 2000–2084.
pub fn start_epoch_seconds(date: &str, time: &str) -> Result<i64> {
    let parts = |s: &str, field: &'static str| -> Result<[i64; 3]> {
        let v: Vec<i64> = s
            .split('.')
            .map(|p| p.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::HeaderField {
                field,
                value: s.to_string(),
            })?;
        <[i64; 3]>::try_from(v).map_err(|_| Error::HeaderField {
            field,
            value: s.to_string(),
        })
    };
    let [d, mo, y] = parts(date, "start_date")?;
    let [hh, mm, ss] = parts(time, "start_time")?;
    let year = if y >= 85 { 1900 + y } else { 2000 + y };
    Ok(days_from_civil(year, mo, d) * 86_400 + hh * 3600 + mm * 60 + ss)
}

/// Decodes one channel of an EDF file into physical units.
pub fn parse_edf(bytes: &[u8], channel: &str) -> Result<Recording> {
    let layout = parse_layout(bytes)?;
    let index = layout
        .signal_index(channel)
        .ok_or_else(|| Error::UnknownChannel(channel.to_string()))?;
    let spec = &layout.signals[index];
    if spec.digital_min == spec.digital_max {
        return Err(Error::DegenerateCalibration(spec.label.clone()));
    }
    if spec.physical_min == spec.physical_max || spec.digital_min > spec.digital_max {
        return Err(Error::HeaderField {
            field: "physical/digital range",
            value: spec.label.clone(),
        });
    }
    let h = &layout.header;
    if !(h.record_duration_s > 0.0) {
        return Err(Error::HeaderField {
            field: "record_duration",
            value: h.record_duration_s.to_string(),
        });
    }
    let offset = layout.signal_offset(index);
    let n = spec.samples_per_record;
    let mut samples = Vec::with_capacity(h.num_records * n);
    for r in 0..h.num_records {
        let start = h.header_bytes + r * layout.record_bytes + offset;
        for pair in bytes[start..start + 2 * n].chunks_exact(2) {
            samples.push(spec.calibrate(i16::from_le_bytes([pair[0], pair[1]])));
        }
    }
    Ok(Recording {
        subject_id: h.patient_id.split_whitespace().next().unwrap_or("").to_string(),
        channel: spec.label.clone(),
        sample_rate_hz: n as f64 / h.record_duration_s,
        samples,
        start_epoch_time: start_epoch_seconds(&h.start_date, &h.start_time)?,
    })
}

/// One time-stamped annotation list.
#[derive(Debug, Clone, PartialEq)]
pub struct Tal {
    pub onset_s: f64,
    pub duration_s: Option<f64>,
    pub annotations: Vec<String>,
}

/// Parses a stream of TALs: `onset[0x15 duration]0x14 (text 0x14)* 0x00`,
/// with zero bytes as padding between lists.
pub fn parse_tals(bytes: &[u8]) -> Result<Vec<Tal>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == TAL_END {
            pos += 1;
            continue;
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == TAL_END)
            .map(|e| pos + e)
            .ok_or_else(|| Error::MalformedAnnotation("TAL without 0x00 terminator".into()))?;
        out.push(parse_one_tal(&bytes[pos..end])?);
        pos = end + 1;
    }
    Ok(out)
}

fn parse_one_tal(tal: &[u8]) -> Result<Tal> {
    let sep = tal
        .iter()
        .position(|&b| b == TAL_SEPARATOR)
        .ok_or_else(|| Error::MalformedAnnotation("missing 0x14 after onset".into()))?;
    if *tal.last().unwrap() != TAL_SEPARATOR {
        return Err(Error::MalformedAnnotation("annotation text not terminated by 0x14".into()));
    }
    let head = std::str::from_utf8(&tal[..sep])
        .map_err(|_| Error::MalformedAnnotation("non-UTF-8 onset".into()))?;
    let (onset_txt, duration_txt) = match head.split_once(TAL_DURATION as char) {
        Some((o, d)) => (o, Some(d)),
        None => (head, None),
    };
    if !onset_txt.starts_with(['+', '-']) {
        return Err(Error::MalformedAnnotation(format!("unparseable onset `{onset_txt}`")));
    }
    let onset_s: f64 = onset_txt
        .parse()
        .map_err(|_| Error::MalformedAnnotation(format!("unparseable onset `{onset_txt}`")))?;
    let duration_s = match duration_txt {
        None => None,
        Some(d) => {
            let v: f64 = d
                .parse()
                .map_err(|_| Error::MalformedAnnotation(format!("unparseable duration `{d}`")))?;
            if v < 0.0 || d.starts_with('-') {
                return Err(Error::MalformedAnnotation(format!("negative duration `{d}`")));
            }
            Some(v)
        }
    };
    let annotations = tal[sep + 1..tal.len() - 1]
        .split(|&b| b == TAL_SEPARATOR)
        .filter(|t| !t.is_empty())
        .map(|t| String::from_utf8_lossy(t).into_owned())
        .collect();
    Ok(Tal {
        onset_s,
        duration_s,
        annotations,
    })
}

/// Extracts sleep-stage intervals from an EDF+ hypnogram file, in
/// nondecreasing onset order. Non-stage annotations are skipped.
pub fn parse_hypnogram(bytes: &[u8]) -> Result<Vec<StageInterval>> {
    let layout = parse_layout(bytes)?;
    let index = layout
        .signal_index(ANNOTATION_LABEL)
        .ok_or_else(|| Error::UnknownChannel(ANNOTATION_LABEL.to_string()))?;
    let offset = layout.signal_offset(index);
    let len = layout.signals[index].samples_per_record * 2;
    let mut intervals = Vec::new();
    for r in 0..layout.header.num_records {
        let start = layout.header.header_bytes + r * layout.record_bytes + offset;
        for tal in parse_tals(&bytes[start..start + len])? {
            for text in &tal.annotations {
                if let Some(raw_label) = RawStage::from_annotation(text) {
                    intervals.push(StageInterval {
                        onset_s: tal.onset_s,
                        duration_s: tal.duration_s.unwrap_or(0.0),
                        raw_label,
                    });
                }
            }
        }
    }
    intervals.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    Ok(intervals)
}

fn put_field(buf: &mut Vec<u8>, text: &str, width: usize) {
    let mut b = text.as_bytes().to_vec();
    b.truncate(width);
    b.resize(width, b' ');
    buf.extend_from_slice(&b);
}

fn fmt_number(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 8 {
        return s;
    }
    for prec in (0..8).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= 8 {
            return s;
        }
    }
    format!("{}", v as i64)
}

/// Fixture writer for EDF/EDF+ files from digital samples.
#[derive(Debug, Clone)]
pub struct EdfWriter {
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub reserved: String,
    pub record_duration_s: f64,
}

impl Default for EdfWriter {
    fn default() -> Self {
        Self {
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            start_date: "01.01.90".into(),
            start_time: "00.00.00".into(),
            reserved: String::new(),
            record_duration_s: 30.0,
        }
    }
}

impl EdfWriter {
    /// Each signal's digital samples must hold a whole number of records;
    /// all signals must describe the same number of records.
    pub fn write(&self, signals: &[(SignalSpec, Vec<i16>)]) -> Result<Vec<u8>> {
        let ns = signals.len();
        if ns == 0 {
            return Err(Error::Empty("signals"));
        }
        let records = signals[0].1.len() / signals[0].0.samples_per_record.max(1);
        for (spec, data) in signals {
            if spec.samples_per_record == 0 || data.len() != records * spec.samples_per_record {
                return Err(Error::InvalidArgument(format!(
                    "signal `{}` length {} is not {} records of {}",
                    spec.label,
                    data.len(),
                    records,
                    spec.samples_per_record
                )));
            }
        }
        let mut buf = Vec::new();
        put_field(&mut buf, "0", 8);
        put_field(&mut buf, &self.patient_id, 80);
        put_field(&mut buf, &self.recording_id, 80);
        put_field(&mut buf, &self.start_date, 8);
        put_field(&mut buf, &self.start_time, 8);
        put_field(&mut buf, &(MAIN_HEADER + SIGNAL_HEADER * ns).to_string(), 8);
        put_field(&mut buf, &self.reserved, 44);
        put_field(&mut buf, &records.to_string(), 8);
        put_field(&mut buf, &fmt_number(self.record_duration_s), 8);
        put_field(&mut buf, &ns.to_string(), 4);
        let each = |buf: &mut Vec<u8>, width: usize, f: &dyn Fn(&SignalSpec) -> String| {
            for (spec, _) in signals {
                put_field(buf, &f(spec), width);
            }
        };
        each(&mut buf, 16, &|s| s.label.clone());
        each(&mut buf, 80, &|_| String::new());
        each(&mut buf, 8, &|s| s.physical_dim.clone());
        each(&mut buf, 8, &|s| fmt_number(s.physical_min));
        each(&mut buf, 8, &|s| fmt_number(s.physical_max));
        each(&mut buf, 8, &|s| s.digital_min.to_string());
        each(&mut buf, 8, &|s| s.digital_max.to_string());
        each(&mut buf, 80, &|_| String::new());
        each(&mut buf, 8, &|s| s.samples_per_record.to_string());
        each(&mut buf, 32, &|_| String::new());
        for r in 0..records {
            for (spec, data) in signals {
                let n = spec.samples_per_record;
                for &d in &data[r * n..(r + 1) * n] {
                    buf.extend_from_slice(&d.to_le_bytes());
                }
            }
        }
        Ok(buf)
    }

    /// One-record EDF+ annotation file holding the given TAL bytes.
    pub fn write_annotations(&self, tals: &[u8]) -> Result<Vec<u8>> {
        let mut stream = encode_tal(0.0, None, &[]);
        stream.extend_from_slice(tals);
        if stream.len() % 2 == 1 {
            stream.push(0);
        }
        let digital: Vec<i16> = stream
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        let spec = SignalSpec {
            label: ANNOTATION_LABEL.into(),
            physical_dim: String::new(),
            physical_min: -1.0,
            physical_max: 1.0,
            digital_min: -32768,
            digital_max: 32767,
            samples_per_record: digital.len(),
        };
        let writer = EdfWriter {
            reserved: "EDF+C".into(),
            record_duration_s: 0.0,
            ..self.clone()
        };
        writer.write(&[(spec, digital)])
    }
}

/// Encodes one TAL. `texts` empty gives a time-keeping TAL.
pub fn encode_tal(onset_s: f64, duration_s: Option<f64>, texts: &[&str]) -> Vec<u8> {
    let mut out = format!("{}{}", if onset_s < 0.0 { "" } else { "+" }, onset_s).into_bytes();
    if let Some(d) = duration_s {
        out.push(TAL_DURATION);
        out.extend_from_slice(d.to_string().as_bytes());
    }
    out.push(TAL_SEPARATOR);
    if texts.is_empty() {
        out.push(TAL_SEPARATOR);
    }
    for t in texts {
        out.extend_from_slice(t.as_bytes());
        out.push(TAL_SEPARATOR);
    }
    out.push(TAL_END);
    out
}

/// Hypnogram file for a sequence of stage intervals.
pub fn write_hypnogram(writer: &EdfWriter, intervals: &[StageInterval]) -> Result<Vec<u8>> {
    let mut tals = Vec::new();
    for iv in intervals {
        tals.extend(encode_tal(
            iv.onset_s,
            Some(iv.duration_s),
            &[&iv.raw_label.annotation_text()],
        ));
    }
    writer.write_annotations(&tals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eeg_spec(spr: usize) -> SignalSpec {
        SignalSpec {
            label: DEFAULT_CHANNEL.into(),
            physical_dim: "uV".into(),
            physical_min: -200.0,
            physical_max: 200.0,
            digital_min: -2048,
            digital_max: 2047,
            samples_per_record: spr,
        }
    }

    fn annotation_file(tals: &[u8]) -> Vec<u8> {
        EdfWriter::default().write_annotations(tals).unwrap()
    }

    #[test]
    fn all_digital_min_gives_physical_min() {
        let bytes = EdfWriter::default().write(&[(eeg_spec(100), vec![-2048; 100])]).unwrap();
        let rec = parse_edf(&bytes, DEFAULT_CHANNEL).unwrap();
        assert_eq!(rec.samples.len(), 100);
        assert!(rec.samples.iter().all(|&p| p == -200.0));
    }

    #[test]
    fn zero_digital_calibrates_by_formula() {
        let bytes = EdfWriter::default().write(&[(eeg_spec(3), vec![0, 0, 0])]).unwrap();
        let rec = parse_edf(&bytes, DEFAULT_CHANNEL).unwrap();
        // Hand evaluation of p = pmin + (d - dmin) (pmax - pmin) / (dmax - dmin).
        let expected = -200.0 + 2048.0 * 400.0 / 4095.0;
        assert_eq!(rec.samples[0], expected);
        assert!((rec.samples[0] - 0.048840048840048).abs() < 1e-12);
    }

    #[test]
    fn header_fields_and_rate() {
        let bytes = EdfWriter::default().write(&[(eeg_spec(3000), vec![5; 6000])]).unwrap();
        let layout = parse_layout(&bytes).unwrap();
        assert_eq!(layout.header.header_bytes, 512);
        assert_eq!(layout.header.num_records, 2);
        let rec = parse_edf(&bytes, DEFAULT_CHANNEL).unwrap();
        assert_eq!(rec.sample_rate_hz, 100.0);
        assert_eq!(rec.samples.len(), 6000);
        assert_eq!(rec.start_epoch_time, 631_152_000);
    }

    #[test]
    fn truncated_mid_record() {
        let mut bytes = EdfWriter::default().write(&[(eeg_spec(100), vec![1; 200])]).unwrap();
        bytes.truncate(bytes.len() - 50);
        assert_eq!(
            parse_edf(&bytes, DEFAULT_CHANNEL).unwrap_err().to_string(),
            "truncated data section"
        );
    }

    #[test]
    fn unknown_channel_and_bad_numbers() {
        let bytes = EdfWriter::default().write(&[(eeg_spec(10), vec![1; 10])]).unwrap();
        assert!(matches!(parse_edf(&bytes, "EEG Pz-Oz"), Err(Error::UnknownChannel(_))));
        let mut bad = bytes.clone();
        bad[236..244].copy_from_slice(b"ab      ");
        assert!(matches!(parse_edf(&bad, DEFAULT_CHANNEL), Err(Error::HeaderField { .. })));
    }

    #[test]
    fn equal_digital_bounds_rejected() {
        let mut spec = eeg_spec(4);
        spec.digital_max = spec.digital_min;
        let bytes = EdfWriter::default().write(&[(spec, vec![-2048; 4])]).unwrap();
        assert!(matches!(
            parse_edf(&bytes, DEFAULT_CHANNEL),
            Err(Error::DegenerateCalibration(_))
        ));
    }

    #[test]
    fn padded_numeric_fields_accepted() {
        let mut bytes = EdfWriter::default().write(&[(eeg_spec(10), vec![0; 10])]).unwrap();
        bytes[252..256].copy_from_slice(b" 1  ");
        assert!(parse_edf(&bytes, DEFAULT_CHANNEL).is_ok());
    }

    #[test]
    fn minus_one_records_resolved_from_size() {
        let mut bytes = EdfWriter::default().write(&[(eeg_spec(10), vec![0; 30])]).unwrap();
        bytes[236..244].copy_from_slice(b"-1      ");
        assert_eq!(parse_layout(&bytes).unwrap().header.num_records, 3);
    }

    #[test]
    fn single_tal() {
        let ivs = parse_hypnogram(&annotation_file(b"+0\x1530\x14Sleep stage W\x14\x00")).unwrap();
        assert_eq!(
            ivs,
            vec![StageInterval {
                onset_s: 0.0,
                duration_s: 30.0,
                raw_label: RawStage::Wake
            }]
        );
    }

    #[test]
    fn movement_and_non_stage_annotations() {
        let mut tals = encode_tal(30.0, Some(30.0), &["Movement time"]);
        tals.extend(encode_tal(0.0, Some(30.0), &["Sleep stage 4"]));
        tals.extend(encode_tal(12.0, None, &["Lights off"]));
        let ivs = parse_hypnogram(&annotation_file(&tals)).unwrap();
        assert_eq!(ivs.len(), 2);
        assert_eq!(ivs[0].raw_label, RawStage::S4);
        assert_eq!(ivs[1].raw_label, RawStage::Movement);
    }

    #[test]
    fn malformed_tals() {
        for bad in [
            &b"+0\x1530\x14Sleep stage W\x00"[..],
            b"+0\x1530Sleep stage W\x00",
            b"0\x1530\x14Sleep stage W\x14\x00",
            b"+x\x14Sleep stage W\x14\x00",
            b"+0\x15-30\x14Sleep stage W\x14\x00",
            b"+0\x1530\x14Sleep stage W\x14",
        ] {
            let err = parse_tals(bad).unwrap_err();
            assert!(err.to_string().starts_with("malformed annotation"), "{err}");
        }
    }

    #[test]
    fn stage_mapping() {
        assert_eq!(map_stage_code("4").unwrap(), Some(ClassId(3)));
        assert_eq!(map_stage_code("3").unwrap(), Some(ClassId(3)));
        assert_eq!(map_stage_code("W").unwrap(), Some(ClassId(0)));
        assert_eq!(map_stage_code("R").unwrap(), Some(ClassId(4)));
        assert_eq!(map_stage_code("M").unwrap(), None);
        assert_eq!(map_stage_code("?").unwrap(), None);
        assert!(map_stage_code("5").is_err());
        let mut ids: Vec<_> = RawStage::ALL.iter().filter_map(|&s| map_stage(s)).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn hypnogram_round_trip() {
        let ivs: Vec<_> = [RawStage::Wake, RawStage::S2, RawStage::Rem, RawStage::Unscored]
            .iter()
            .enumerate()
            .map(|(i, &raw_label)| StageInterval {
                onset_s: i as f64 * 30.0,
                duration_s: 30.0,
                raw_label,
            })
            .collect();
        let bytes = write_hypnogram(&EdfWriter::default(), &ivs).unwrap();
        assert_eq!(parse_hypnogram(&bytes).unwrap(), ivs);
    }
}
