//! Labeled synthetic EEG.
//!
//! Background activity is a 10 Hz resonance plus broadband noise with a weak
//! component shared by all channels. Each seizure is preceded, for
//! `preictal_lead_s` seconds, by fast 40 Hz activity on one focal channel whose
//! amplitude grows toward onset. The ictal phase is a spike-wave discharge
//! shared by every channel (3 Hz for absence, 4-6 Hz poly-spike for
//! myoclonic, 4 Hz otherwise). Artifact bursts are Cauchy-distributed
//! transients on a single channel and are listed in `subject_meta` under
//! `artifact.<i>` so tests can locate them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EegRecording, SeizureAnnotation, SeizureKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureSpec {
    pub onset_s: f64,
    pub duration_s: f64,
    pub kind: SeizureKind,
}

impl SeizureSpec {
    pub fn new(onset_s: f64, duration_s: f64) -> Self {
        Self { onset_s, duration_s, kind: SeizureKind::Absence }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBurst {
    pub onset_s: f64,
    pub duration_s: f64,
    pub channel: usize,
}

impl ArtifactBurst {
    fn meta_value(&self) -> String {
        format!("onset={} duration={} channel={}", self.onset_s, self.duration_s, self.channel)
    }

    /// Parses the `subject_meta` encoding written by the generator.
    pub fn from_meta(value: &str) -> Option<Self> {
        let mut b = ArtifactBurst { onset_s: 0.0, duration_s: 0.0, channel: 0 };
        for tok in value.split_whitespace() {
            let (k, v) = tok.split_once('=')?;
            match k {
                "onset" => b.onset_s = v.parse().ok()?,
                "duration" => b.duration_s = v.parse().ok()?,
                "channel" => b.channel = v.parse().ok()?,
                _ => return None,
            }
        }
        Some(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub channel_count: usize,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub seizures: Vec<SeizureSpec>,
    pub preictal_lead_s: f64,
    /// Number of artifact bursts, placed at seeded random times.
    pub artifact_bursts: usize,
    /// Broadband background noise level in ADC counts.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channel_count: 4,
            sample_rate_hz: 250,
            duration_s: 300.0,
            seizures: Vec::new(),
            preictal_lead_s: 14.0,
            artifact_bursts: 0,
            noise_sigma: 20.0,
            seed: 0,
        }
    }
}

const ALPHA_HZ: f64 = 10.0;
const ALPHA_POLE: f64 = 0.97;
const ALPHA_RMS: f64 = 1.5;
const COMMON_FRACTION: f64 = 0.25;
const PREICTAL_HZ: f64 = 40.0;
const PREICTAL_START_AMP: f64 = 1.5;
const PREICTAL_END_AMP: f64 = 2.5;
const SPIKE_AMP: f64 = 8.0;
const SPIKE_SD_S: f64 = 0.004;
const WAVE_AMP: f64 = 3.0;
const WAVE_SD_S: f64 = 0.05;
const ICTAL_RAMP_S: f64 = 2.0;
const ARTIFACT_SCALE: f64 = 10.0;

/// Stationary standard deviation of a unit-driven AR(2) resonator.
fn resonator_sd(r: f64, omega: f64) -> f64 {
    let a1 = 2.0 * r * omega.cos();
    let a2 = -r * r;
    let var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2).powi(2) - a1 * a1));
    var.sqrt()
}

fn validate(spec: &SynthSpec) -> Result<()> {
    if spec.preictal_lead_s < 0.0 || !spec.preictal_lead_s.is_finite() {
        return Err(Error::Validation("preictal lead must be non-negative".into()));
    }
    if !(spec.duration_s >= 0.0 && spec.duration_s.is_finite()) {
        return Err(Error::Validation("duration must be non-negative".into()));
    }
    let mut sz = spec.seizures.clone();
    sz.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for s in &sz {
        if !(s.onset_s >= 0.0 && s.duration_s > 0.0 && s.onset_s + s.duration_s <= spec.duration_s) {
            return Err(Error::Validation(format!(
                "seizure at {} s for {} s does not fit a {} s recording",
                s.onset_s, s.duration_s, spec.duration_s
            )));
        }
    }
    for pair in sz.windows(2) {
        if pair[1].onset_s < pair[0].onset_s + pair[0].duration_s {
            return Err(Error::Validation(format!(
                "seizures at {} s and {} s overlap",
                pair[0].onset_s, pair[1].onset_s
            )));
        }
    }
    Ok(())
}

/// Spike-wave template value at `phase_s` seconds into one discharge cycle.
fn discharge(kind: SeizureKind, phase_s: f64) -> f64 {
    let gauss = |t: f64, sd: f64| (-0.5 * (t / sd).powi(2)).exp();
    match kind {
        SeizureKind::Myoclonic => {
            let spikes: f64 = (0..3).map(|k| gauss(phase_s - 0.02 - 0.02 * k as f64, SPIKE_SD_S)).sum();
            SPIKE_AMP * spikes - WAVE_AMP * gauss(phase_s - 0.12, WAVE_SD_S)
        }
        _ => SPIKE_AMP * gauss(phase_s - 0.02, SPIKE_SD_S) - WAVE_AMP * gauss(phase_s - 0.12, WAVE_SD_S),
    }
}

fn discharge_hz(kind: SeizureKind) -> f64 {
    match kind {
        SeizureKind::Absence => 3.0,
        SeizureKind::Myoclonic => 5.0,
        _ => 4.0,
    }
}

/// Generates a deterministic labeled recording from `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<EegRecording> {
    validate(spec)?;
    let rate = spec.sample_rate_hz as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let nch = spec.channel_count;
    let sigma = spec.noise_sigma;

    let mut layout = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seizures = spec.seizures.clone();
    seizures.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    let focal: Vec<usize> = seizures.iter().map(|_| layout.random_range(0..nch.max(1))).collect();
    let ictal_gain: Vec<Vec<f64>> = seizures
        .iter()
        .zip(&focal)
        .map(|(_, &f)| {
            (0..nch)
                .map(|c| if c == f { 1.0 } else { layout.random_range(0.6..0.9) })
                .collect()
        })
        .collect();
    let bursts: Vec<ArtifactBurst> = (0..spec.artifact_bursts)
        .map(|_| {
            let duration_s = layout.random_range(0.2..0.6);
            let latest = (spec.duration_s - duration_s).max(0.0);
            ArtifactBurst {
                onset_s: (layout.random_range(0.0..=latest) * 100.0).round() / 100.0,
                duration_s: (duration_s * 100.0).round() / 100.0,
                channel: layout.random_range(0..nch.max(1)),
            }
        })
        .collect();

    let mut common_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    common_rng.set_stream(1);
    let common: Vec<f64> = (0..n)
        .map(|_| common_rng.sample::<f64, _>(StandardNormal) * sigma * COMMON_FRACTION)
        .collect();

    let omega = 2.0 * PI * ALPHA_HZ / rate;
    let a1 = 2.0 * ALPHA_POLE * omega.cos();
    let a2 = -ALPHA_POLE * ALPHA_POLE;
    let alpha_drive = ALPHA_RMS * sigma / resonator_sd(ALPHA_POLE, omega);
    let cauchy = Cauchy::new(0.0, ARTIFACT_SCALE * sigma).expect("positive scale");

    let mut samples = Vec::with_capacity(nch);
    for ch in 0..nch {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2 + ch as u64);
        let (mut y1, mut y2) = (0.0f64, 0.0f64);
        let mut signal: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = rng.sample(StandardNormal);
                let y = a1 * y1 + a2 * y2 + alpha_drive * e;
                y2 = y1;
                y1 = y;
                let w: f64 = rng.sample(StandardNormal);
                y + w * sigma + common[i]
            })
            .collect();

        for (k, sz) in seizures.iter().enumerate() {
            let onset = (sz.onset_s * rate).round() as usize;
            let end = (((sz.onset_s + sz.duration_s) * rate).round() as usize).min(n);
            if focal[k] == ch && spec.preictal_lead_s > 0.0 {
                let start = ((sz.onset_s - spec.preictal_lead_s).max(0.0) * rate).round() as usize;
                let span = (onset - start).max(1) as f64;
                let mut phase = rng.random_range(0.0..2.0 * PI);
                for (j, x) in signal[start..onset].iter_mut().enumerate() {
                    let frac = j as f64 / span;
                    let amp = PREICTAL_START_AMP + (PREICTAL_END_AMP - PREICTAL_START_AMP) * frac;
                    phase += 2.0 * PI * PREICTAL_HZ / rate + 0.05 * rng.sample::<f64, _>(StandardNormal);
                    *x += amp * sigma * phase.sin();
                }
            }
            let period = 1.0 / discharge_hz(sz.kind);
            let gain = ictal_gain[k][ch];
            for (j, x) in signal[onset..end].iter_mut().enumerate() {
                let t = j as f64 / rate;
                let ramp = (t / ICTAL_RAMP_S).min(1.0);
                *x += gain * ramp * sigma * discharge(sz.kind, t % period);
            }
        }

        for b in bursts.iter().filter(|b| b.channel == ch) {
            let start = (b.onset_s * rate).round() as usize;
            let end = (((b.onset_s + b.duration_s) * rate).round() as usize).min(n);
            for x in &mut signal[start.min(n)..end] {
                *x += cauchy.sample(&mut rng);
            }
        }

        samples.push(
            signal
                .into_iter()
                .map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
                .collect(),
        );
    }

    let annotations = seizures
        .iter()
        .map(|s| SeizureAnnotation {
            onset_s: s.onset_s,
            offset_s: s.onset_s + s.duration_s,
            label: s.kind,
        })
        .collect();
    let mut rec = EegRecording::new(spec.sample_rate_hz, samples, annotations)?;
    rec.subject_meta.insert("source".into(), "synthetic".into());
    rec.subject_meta.insert("seed".into(), spec.seed.to_string());
    rec.subject_meta.insert("preictal_lead_s".into(), spec.preictal_lead_s.to_string());
    for (i, b) in bursts.iter().enumerate() {
        rec.subject_meta.insert(format!("artifact.{i}"), b.meta_value());
    }
    for (k, f) in focal.iter().enumerate() {
        rec.subject_meta.insert(format!("focal.{k}"), f.to_string());
    }
    Ok(rec)
}

/// Artifact bursts recorded in a synthetic recording's metadata.
pub fn artifact_bursts(rec: &EegRecording) -> Vec<ArtifactBurst> {
    rec.subject_meta
        .iter()
        .filter(|(k, _)| k.starts_with("artifact."))
        .filter_map(|(_, v)| ArtifactBurst::from_meta(v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[i16]) -> f64 {
        (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn one_seizure_layout() {
        let spec = SynthSpec {
            seizures: vec![SeizureSpec::new(150.0, 40.0)],
            seed: 7,
            ..Default::default()
        };
        let rec = generate_synthetic(&spec).unwrap();
        assert_eq!(rec.len(), 75_000);
        assert_eq!(rec.annotations().len(), 1);
        assert_eq!(rec.annotations()[0].onset_s, 150.0);
        assert_eq!(rec.annotations()[0].offset_s, 190.0);
        // pre-ictal activity raises the focal channel's level from 136 s on
        let focal: usize = rec.subject_meta["focal.0"].parse().unwrap();
        let ch = rec.channel(focal);
        let before = rms(&ch[250 * 120..250 * 135]);
        let during = rms(&ch[250 * 137..250 * 149]);
        assert!(during > 1.2 * before, "{during} vs {before}");
    }

    #[test]
    fn background_only() {
        let rec = generate_synthetic(&SynthSpec { duration_s: 20.0, ..Default::default() }).unwrap();
        assert!(rec.annotations().is_empty());
        assert_eq!(rec.channel_count(), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec {
            duration_s: 60.0,
            seizures: vec![SeizureSpec::new(30.0, 20.0)],
            artifact_bursts: 3,
            seed: 99,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn overlapping_seizures_rejected() {
        let spec = SynthSpec {
            seizures: vec![SeizureSpec::new(100.0, 40.0), SeizureSpec::new(130.0, 20.0)],
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Validation(_))));
        let neg = SynthSpec { preictal_lead_s: -1.0, ..Default::default() };
        assert!(generate_synthetic(&neg).is_err());
    }

    #[test]
    fn artifacts_tagged() {
        let spec = SynthSpec { duration_s: 60.0, artifact_bursts: 4, seed: 3, ..Default::default() };
        let rec = generate_synthetic(&spec).unwrap();
        let bursts = artifact_bursts(&rec);
        assert_eq!(bursts.len(), 4);
        for b in bursts {
            assert!(b.onset_s + b.duration_s <= 60.0 + 1e-9);
            assert!(b.channel < 4);
        }
    }
}
