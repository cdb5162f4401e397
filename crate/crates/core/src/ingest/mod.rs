//! Recording model, file formats, synthetic EEG and window slicing.

mod format;
mod synth;
mod window;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{load_recording, parse_annotations, write_annotations, write_recording, FileFormat};
pub use synth::{artifact_bursts, generate_synthetic, ArtifactBurst, SeizureSpec, SynthSpec};
pub use window::{windows, SlidingWindow, WindowIter};

pub const SUPPORTED_RATES: [u32; 2] = [250, 500];
pub const MIN_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeizureKind {
    TonicClonic,
    Absence,
    Myoclonic,
    Tonic,
    Clonic,
    Atonic,
    Unspecified,
}

impl SeizureKind {
    pub fn label(self) -> &'static str {
        match self {
            SeizureKind::TonicClonic => "tonic-clonic",
            SeizureKind::Absence => "absence",
            SeizureKind::Myoclonic => "myoclonic",
            SeizureKind::Tonic => "tonic",
            SeizureKind::Clonic => "clonic",
            SeizureKind::Atonic => "atonic",
            SeizureKind::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for SeizureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SeizureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tonic-clonic" => SeizureKind::TonicClonic,
            "absence" => SeizureKind::Absence,
            "myoclonic" => SeizureKind::Myoclonic,
            "tonic" => SeizureKind::Tonic,
            "clonic" => SeizureKind::Clonic,
            "atonic" => SeizureKind::Atonic,
            "unspecified" => SeizureKind::Unspecified,
            other => return Err(Error::Format(format!("unknown seizure label `{other}`"))),
        })
    }
}

/// Ground-truth seizure interval in seconds from the start of the recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub onset_s: f64,
    pub offset_s: f64,
    pub label: SeizureKind,
}

impl SeizureAnnotation {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset_s && t <= self.offset_s
    }
}

/// Multi-channel EEG in 16-bit ADC counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    channel_count: usize,
    sample_rate_hz: u32,
    samples: Vec<Vec<i16>>,
    annotations: Vec<SeizureAnnotation>,
    pub subject_meta: BTreeMap<String, String>,
}

impl EegRecording {
    /// Builds a validated recording. Channel lengths must agree, the rate must
    /// be 250 or 500 Hz and every annotation must fit the recording.
    pub fn new(
        sample_rate_hz: u32,
        samples: Vec<Vec<i16>>,
        annotations: Vec<SeizureAnnotation>,
    ) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate_hz) {
            return Err(Error::Validation(format!(
                "sample rate {sample_rate_hz} Hz is not one of {SUPPORTED_RATES:?}"
            )));
        }
        let channel_count = samples.len();
        if channel_count < MIN_CHANNELS {
            return Err(Error::Validation(format!(
                "{channel_count} channels; at least {MIN_CHANNELS} required"
            )));
        }
        let len = samples[0].len();
        if let Some((i, ch)) = samples.iter().enumerate().find(|(_, ch)| ch.len() != len) {
            return Err(Error::Integrity(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                ch.len()
            )));
        }
        let rec = Self {
            channel_count,
            sample_rate_hz,
            samples,
            annotations: Vec::new(),
            subject_meta: BTreeMap::new(),
        };
        rec.with_annotations(annotations)
    }

    /// Replaces the annotation list after checking each interval.
    pub fn with_annotations(mut self, mut annotations: Vec<SeizureAnnotation>) -> Result<Self> {
        let dur = self.duration_s();
        for a in &annotations {
            if !(a.onset_s >= 0.0 && a.onset_s < a.offset_s && a.offset_s <= dur) {
                return Err(Error::Validation(format!(
                    "annotation {}..{} s outside recording of {dur} s",
                    a.onset_s, a.offset_s
                )));
            }
        }
        annotations.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        self.annotations = annotations;
        Ok(self)
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[Vec<i16>] {
        &self.samples
    }

    pub fn channel(&self, i: usize) -> &[i16] {
        &self.samples[i]
    }

    pub fn annotations(&self) -> &[SeizureAnnotation] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz as f64
    }
}
