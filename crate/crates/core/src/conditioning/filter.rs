//! Linear-phase FIR band-pass.
//!
//! A Hamming-windowed sinc design with an odd tap count, normalized to unit
//! gain at the band centre. Every channel uses the same taps; the group delay
//! is `(TAPS - 1) / 2` samples.

use std::f64::consts::PI;

pub const TAPS: usize = 101;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-pass taps for `low_hz..high_hz` at `rate_hz`.
pub fn design_bandpass(rate_hz: f64, low_hz: f64, high_hz: f64, taps: usize) -> Vec<f64> {
    let m = (taps - 1) as f64 / 2.0;
    let f1 = low_hz / rate_hz;
    let f2 = high_hz / rate_hz;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let k = n as f64 - m;
            let ideal = 2.0 * f2 * sinc(2.0 * f2 * k) - 2.0 * f1 * sinc(2.0 * f1 * k);
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            ideal * window
        })
        .collect();
    let centre = frequency_response(&h, (low_hz + high_hz) / 2.0, rate_hz);
    h.iter_mut().for_each(|v| *v /= centre);
    h
}

/// Magnitude of the filter's frequency response at `freq_hz`.
pub fn frequency_response(taps: &[f64], freq_hz: f64, rate_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / rate_hz;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &h)| {
        (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin())
    });
    (re * re + im * im).sqrt()
}

/// Streaming FIR state for one channel.
#[derive(Debug, Clone)]
pub struct FirState {
    history: Vec<f64>,
}

impl FirState {
    pub fn new(taps: usize) -> Self {
        Self { history: vec![0.0; taps.saturating_sub(1)] }
    }

    /// Filters `input`, continuing from the samples seen so far.
    pub fn process(&mut self, taps: &[f64], input: &[f64]) -> Vec<f64> {
        let hist = taps.len() - 1;
        if self.history.len() != hist {
            self.history = vec![0.0; hist];
        }
        let mut ext = Vec::with_capacity(hist + input.len());
        ext.extend_from_slice(&self.history);
        ext.extend_from_slice(input);
        let out = (0..input.len())
            .map(|n| {
                let end = n + hist;
                taps.iter()
                    .enumerate()
                    .map(|(k, &h)| h * ext[end - k])
                    .sum()
            })
            .collect();
        self.history.copy_from_slice(&ext[ext.len() - hist..]);
        out
    }
}
