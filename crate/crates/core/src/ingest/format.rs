//! On-disk recording formats.
//!
//! CSV: a header line `channels=<n>,rate=<hz>` followed by one row per sample
//! instant holding `n` comma-separated signed integers.
//!
//! Raw binary: a 16-byte little-endian header (`EEG1`, u32 channels, u32 rate,
//! u32 samples per channel) followed by channel-interleaved i16 samples.
//!
//! Either format may carry a sidecar `<name>.ann` with one annotation per line,
//! `onset=<f> offset=<f> label=<s>`, and optional `meta <key>=<value>` lines
//! for the subject label map.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EegRecording, SeizureAnnotation, SeizureKind};
use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"EEG1";
const RAW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Csv,
    RawBinary,
}

impl FileFormat {
    /// Guesses the format from the file extension (`.bin`/`.raw` are binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("raw") | Some("eeg") => FileFormat::RawBinary,
            _ => FileFormat::Csv,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "raw" | "raw-binary" | "bin" => Ok(FileFormat::RawBinary),
            other => Err(Error::Format(format!("unknown file format `{other}`"))),
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ann")
}

pub fn load_recording(path: &Path, format: FileFormat) -> Result<EegRecording> {
    let (rate, samples) = match format {
        FileFormat::Csv => parse_csv(&fs::read_to_string(path)?)?,
        FileFormat::RawBinary => parse_raw(&fs::read(path)?)?,
    };
    let mut rec = EegRecording::new(rate, samples, Vec::new())?;
    let side = sidecar_path(path);
    if side.exists() {
        let (annotations, meta) = parse_annotations(&fs::read_to_string(&side)?)?;
        rec = rec.with_annotations(annotations)?;
        rec.subject_meta = meta;
    }
    Ok(rec)
}

/// Writes the canonical form of `rec`, plus a sidecar when it has annotations
/// or subject metadata.
pub fn write_recording(rec: &EegRecording, path: &Path, format: FileFormat) -> Result<()> {
    let bytes = match format {
        FileFormat::Csv => encode_csv(rec).into_bytes(),
        FileFormat::RawBinary => encode_raw(rec),
    };
    fs::write(path, bytes)?;
    if !rec.annotations().is_empty() || !rec.subject_meta.is_empty() {
        fs::write(
            sidecar_path(path),
            write_annotations(rec.annotations(), &rec.subject_meta),
        )?;
    }
    Ok(())
}

type Meta = std::collections::BTreeMap<String, String>;

pub fn parse_annotations(text: &str) -> Result<(Vec<SeizureAnnotation>, Meta)> {
    let mut out = Vec::new();
    let mut meta = Meta::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("annotation line {}: bad meta", lineno + 1)))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        let (mut onset, mut offset, mut label) = (None, None, None);
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::Format(format!("annotation line {}: token `{tok}`", lineno + 1))
            })?;
            let bad = || Error::Format(format!("annotation line {}: bad value `{v}`", lineno + 1));
            match k {
                "onset" => onset = Some(v.parse::<f64>().map_err(|_| bad())?),
                "offset" => offset = Some(v.parse::<f64>().map_err(|_| bad())?),
                "label" => label = Some(v.parse::<SeizureKind>()?),
                _ => return Err(Error::Format(format!("annotation line {}: key `{k}`", lineno + 1))),
            }
        }
        match (onset, offset) {
            (Some(onset_s), Some(offset_s)) => out.push(SeizureAnnotation {
                onset_s,
                offset_s,
                label: label.unwrap_or(SeizureKind::Unspecified),
            }),
            _ => {
                return Err(Error::Format(format!(
                    "annotation line {}: onset and offset are required",
                    lineno + 1
                )))
            }
        }
    }
    Ok((out, meta))
}

pub fn write_annotations(annotations: &[SeizureAnnotation], meta: &Meta) -> String {
    let mut s = String::new();
    for a in annotations {
        let _ = writeln!(s, "onset={} offset={} label={}", a.onset_s, a.offset_s, a.label);
    }
    for (k, v) in meta {
        let _ = writeln!(s, "meta {k}={v}");
    }
    s
}

fn parse_csv(text: &str) -> Result<(u32, Vec<Vec<i16>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let (mut channels, mut rate) = (None, None);
    for field in header.trim().split(',') {
        match field.trim().split_once('=') {
            Some(("channels", v)) => channels = v.trim().parse::<usize>().ok(),
            Some(("rate", v)) => rate = v.trim().parse::<u32>().ok(),
            _ => return Err(Error::Format(format!("malformed header `{header}`"))),
        }
    }
    let (Some(n), Some(rate)) = (channels, rate) else {
        return Err(Error::Format(format!("malformed header `{header}`")));
    };
    if n == 0 {
        return Err(Error::Format("header declares zero channels".into()));
    }
    let mut samples = vec![Vec::new(); n];
    for (row, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (ch, field) in line.split(',').enumerate() {
            if ch >= n {
                return Err(Error::Format(format!("row {} has more than {n} values", row + 1)));
            }
            let v: i64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {}: `{field}` is not an integer", row + 1)))?;
            let v = i16::try_from(v).map_err(|_| {
                Error::Validation(format!("row {}: {v} does not fit in 16 bits", row + 1))
            })?;
            samples[ch].push(v);
            count += 1;
        }
        if count < n {
            return Err(Error::Integrity(format!(
                "row {} has {count} values; channels {count}..{n} are short",
                row + 1
            )));
        }
    }
    Ok((rate, samples))
}

fn encode_csv(rec: &EegRecording) -> String {
    let mut s = String::with_capacity(rec.len() * rec.channel_count() * 6 + 32);
    let _ = writeln!(s, "channels={},rate={}", rec.channel_count(), rec.sample_rate_hz());
    for t in 0..rec.len() {
        for ch in 0..rec.channel_count() {
            if ch > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", rec.channel(ch)[t]);
        }
        s.push('\n');
    }
    s
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_raw(bytes: &[u8]) -> Result<(u32, Vec<Vec<i16>>)> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Format("missing EEG1 header".into()));
    }
    let n = read_u32(bytes, 4) as usize;
    let rate = read_u32(bytes, 8);
    let count = read_u32(bytes, 12) as usize;
    if n == 0 {
        return Err(Error::Format("header declares zero channels".into()));
    }
    let payload = &bytes[RAW_HEADER_LEN..];
    let expected = n * count * 2;
    if payload.len() != expected {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut samples = vec![Vec::with_capacity(count); n];
    for (i, pair) in payload.chunks_exact(2).enumerate() {
        samples[i % n].push(i16::from_le_bytes([pair[0], pair[1]]));
    }
    Ok((rate, samples))
}

fn encode_raw(rec: &EegRecording) -> Vec<u8> {
    let n = rec.channel_count();
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + rec.len() * n * 2);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&rec.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
    for t in 0..rec.len() {
        for ch in 0..n {
            out.extend_from_slice(&rec.channel(ch)[t].to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_csv(channels: usize, rate: u32, rows: usize) -> String {
        let mut s = format!("channels={channels},rate={rate}\n");
        for t in 0..rows {
            let row: Vec<String> = (0..channels).map(|c| ((t * 7 + c) % 50).to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    #[test]
    fn minimal_csv_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, minimal_csv(4, 250, 15000)).unwrap();
        let rec = load_recording(&path, FileFormat::Csv).unwrap();
        assert_eq!(rec.channel_count(), 4);
        assert_eq!(rec.len(), 15000);
        assert_eq!(rec.duration_s(), 60.0);
        assert!(rec.annotations().is_empty());
    }

    #[test]
    fn sidecar_annotation_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, minimal_csv(4, 250, 250 * 200)).unwrap();
        fs::write(dir.path().join("rec.ann"), "onset=120.0 offset=155.0 label=absence\n").unwrap();
        let rec = load_recording(&path, FileFormat::Csv).unwrap();
        assert_eq!(
            rec.annotations(),
            &[SeizureAnnotation { onset_s: 120.0, offset_s: 155.0, label: SeizureKind::Absence }]
        );
    }

    #[test]
    fn short_channel_is_integrity_error() {
        let mut text = minimal_csv(4, 250, 100);
        // drop channel 3 from the final row
        let cut = text.trim_end().rfind(',').unwrap();
        text.truncate(cut);
        text.push('\n');
        assert!(matches!(parse_csv(&text), Err(Error::Integrity(_))));
    }

    #[test]
    fn malformed_header_is_format_error() {
        assert!(matches!(parse_csv("chans=4\n1,2,3,4\n"), Err(Error::Format(_))));
        assert!(matches!(parse_csv("channels=4\n1,2,3,4\n"), Err(Error::Format(_))));
        assert!(matches!(parse_csv(""), Err(Error::Format(_))));
        assert!(matches!(parse_raw(b"EEG0\0\0\0\0"), Err(Error::Format(_))));
    }

    #[test]
    fn bad_rate_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        fs::write(&path, minimal_csv(4, 256, 10)).unwrap();
        assert!(matches!(load_recording(&path, FileFormat::Csv), Err(Error::Validation(_))));
    }

    #[test]
    fn out_of_range_sample_rejected() {
        assert!(matches!(
            parse_csv("channels=4,rate=250\n1,2,3,40000\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn truncated_raw_is_integrity_error() {
        let rec = EegRecording::new(500, vec![vec![1, -2, 3]; 4], vec![]).unwrap();
        let mut bytes = encode_raw(&rec);
        bytes.pop();
        assert!(matches!(parse_raw(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn canonical_files_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("a.csv", FileFormat::Csv), ("a.bin", FileFormat::RawBinary)] {
            let path = dir.path().join(name);
            let src = minimal_csv(5, 500, 777);
            let (rate, samples) = parse_csv(&src).unwrap();
            let ann = SeizureAnnotation { onset_s: 0.25, offset_s: 1.5, label: SeizureKind::Clonic };
            let mut rec = EegRecording::new(rate, samples, vec![ann]).unwrap();
            rec.subject_meta.insert("age".into(), "11".into());
            write_recording(&rec, &path, fmt).unwrap();
            let first = fs::read(&path).unwrap();
            let first_ann = fs::read(path.with_extension("ann")).unwrap();
            let back = load_recording(&path, fmt).unwrap();
            assert_eq!(back, rec);
            write_recording(&back, &path, fmt).unwrap();
            assert_eq!(fs::read(&path).unwrap(), first);
            assert_eq!(fs::read(path.with_extension("ann")).unwrap(), first_ann);
        }
    }
}
