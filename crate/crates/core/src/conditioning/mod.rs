//! Front-end emulation: gain, band-pass, AR-residual artifact screening and
//! wavelet compression.

mod ar;
mod cauchy;
mod dwt;
mod filter;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::detector::AdaptiveThreshold;
use crate::error::{Error, Result};
use crate::ingest::SlidingWindow;
use crate::par::{self, Execution};

pub use ar::{fit_ar, ArModel};
pub use cauchy::{artifact_score, cauchy_pdf, gaussian_pdf, ArtifactScore, CauchyParams, EVIDENCE_PER_SAMPLE};
pub use dwt::{dwt, idwt, DwtOutput};
pub use filter::{design_bandpass, frequency_response, FirState, TAPS};

/// Scale factor from median absolute deviation to a Gaussian sigma.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFlag {
    pub flagged: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedWindow {
    pub window_id: u64,
    pub start_sample: usize,
    pub sample_rate_hz: u32,
    pub valid_len: usize,
    pub delta_shift: usize,
    /// Amplified, band-passed and artifact-attenuated samples, channel-major.
    pub filtered: Vec<Vec<f64>>,
    /// Level-major wavelet coefficients per channel.
    pub dwt_coeffs: Vec<Vec<f64>>,
    /// Length of the approximation block at the front of each coefficient row.
    pub approx_len: usize,
    pub artifact_flags: Vec<ArtifactFlag>,
    /// Channel with the largest coefficient energy; `None` for silence.
    pub dominant: Option<usize>,
    /// Adaptive prediction-error threshold of the dominant channel.
    pub error_threshold: f64,
    /// Zero padding entered the window or the wavelet stage.
    pub padded: bool,
}

impl ConditionedWindow {
    pub fn channel_count(&self) -> usize {
        self.filtered.len()
    }

    pub fn len(&self) -> usize {
        self.filtered.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start_s(&self) -> f64 {
        self.start_sample as f64 / self.sample_rate_hz as f64
    }

    pub fn approx_energy(&self, channel: usize) -> f64 {
        self.dwt_coeffs[channel][..self.approx_len].iter().map(|c| c * c).sum()
    }

    pub fn energy(&self, channel: usize) -> f64 {
        self.dwt_coeffs[channel].iter().map(|c| c * c).sum()
    }
}

/// `band-pass(gain * window)` with a fresh filter state per channel.
pub fn amplify_bandpass(window: &SlidingWindow, config: &EngineConfig) -> Result<Vec<Vec<f64>>> {
    config.validate_for_rate(window.sample_rate_hz)?;
    let rate = window.sample_rate_hz as f64;
    let taps = design_bandpass(rate, config.band_low_hz, config.band_high_hz, TAPS);
    Ok(window
        .data
        .iter()
        .map(|ch| {
            let x: Vec<f64> = ch.iter().map(|&v| config.gain * v as f64).collect();
            FirState::new(TAPS).process(&taps, &x)
        })
        .collect())
}

fn robust_sigma(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    if abs.is_empty() {
        return 0.0;
    }
    let mid = abs.len() / 2;
    let (_, m, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    *m * MAD_TO_SIGMA
}

#[derive(Debug, Clone)]
struct ChannelState {
    fir: FirState,
    model: Option<ArModel>,
    /// Most recent cleaned samples, oldest first.
    tail: Vec<f64>,
    threshold: AdaptiveThreshold,
}

struct ChannelOut {
    state: ChannelState,
    cleaned: Vec<f64>,
    flag: ArtifactFlag,
}

/// Streaming conditioner for one recording. Filter memory, AR models and the
/// adaptive error thresholds carry over from window to window.
#[derive(Debug, Clone)]
pub struct Conditioner {
    config: EngineConfig,
    sample_rate_hz: u32,
    taps: Vec<f64>,
    channels: Vec<ChannelState>,
    exec: Execution,
}

impl Conditioner {
    pub fn new(config: &EngineConfig, sample_rate_hz: u32, channel_count: usize) -> Result<Self> {
        config.validate_for_rate(sample_rate_hz)?;
        let taps = design_bandpass(
            sample_rate_hz as f64,
            config.band_low_hz,
            config.band_high_hz,
            TAPS,
        );
        let n = config.window_samples(sample_rate_hz);
        let channels = (0..channel_count)
            .map(|_| ChannelState {
                fir: FirState::new(TAPS),
                model: None,
                tail: Vec::new(),
                threshold: AdaptiveThreshold::new(config.gamma_s, n),
            })
            .collect();
        Ok(Self { config: config.clone(), sample_rate_hz, taps, channels, exec: Execution::Sequential })
    }

    /// Spreads per-channel work over the thread pool.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Adopts a new configuration. Filter taps are redesigned when the band
    /// changes; streaming state is kept where it still applies.
    pub fn reconfigure(&mut self, config: &EngineConfig) -> Result<()> {
        config.validate_for_rate(self.sample_rate_hz)?;
        if config.band_low_hz != self.config.band_low_hz || config.band_high_hz != self.config.band_high_hz {
            self.taps = design_bandpass(
                self.sample_rate_hz as f64,
                config.band_low_hz,
                config.band_high_hz,
                TAPS,
            );
        }
        let n = config.window_samples(self.sample_rate_hz);
        for ch in &mut self.channels {
            if ch.threshold.window_n != n || ch.threshold.gamma_s != config.gamma_s {
                let mut t = AdaptiveThreshold::new(config.gamma_s, n);
                for sq in ch.threshold.squared_errors() {
                    t.update(sq.sqrt());
                }
                ch.threshold = t;
            }
            if ch.model.as_ref().is_some_and(|m| m.order_p != config.ar_order) {
                ch.model = None;
            }
        }
        self.config = config.clone();
        Ok(())
    }

    pub fn process(&mut self, window: &SlidingWindow) -> Result<ConditionedWindow> {
        if window.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::Validation(format!(
                "window at {} Hz fed to a {} Hz conditioner",
                window.sample_rate_hz, self.sample_rate_hz
            )));
        }
        if window.channel_count() != self.channels.len() {
            return Err(Error::DimensionMismatch { left: self.channels.len(), right: window.channel_count() });
        }
        let states = std::mem::take(&mut self.channels);
        let jobs: Vec<(ChannelState, &[i16])> =
            states.into_iter().zip(window.data.iter().map(Vec::as_slice)).collect();
        let cfg = &self.config;
        let taps = &self.taps;
        let outs = par::map_vec(self.exec, jobs, |(state, raw)| condition_channel(state, raw, taps, cfg));

        let mut filtered = Vec::with_capacity(outs.len());
        let mut flags = Vec::with_capacity(outs.len());
        let mut thresholds = Vec::with_capacity(outs.len());
        for out in outs {
            thresholds.push(out.state.threshold.current_value());
            self.channels.push(out.state);
            filtered.push(out.cleaned);
            flags.push(out.flag);
        }

        let mut dwt_coeffs = Vec::with_capacity(filtered.len());
        let mut approx_len = 0;
        let mut padded = window.is_padded();
        for ch in &filtered {
            let out = dwt(ch, cfg.dwt_levels, cfg.wavelet)?;
            approx_len = out.approx_len;
            padded |= out.padded;
            dwt_coeffs.push(out.coeffs);
        }
        let mut cw = ConditionedWindow {
            window_id: window.window_id,
            start_sample: window.start_sample,
            sample_rate_hz: window.sample_rate_hz,
            valid_len: window.valid_len,
            delta_shift: window.delta_shift,
            filtered,
            dwt_coeffs,
            approx_len,
            artifact_flags: flags,
            dominant: None,
            error_threshold: 0.0,
            padded,
        };
        cw.dominant = dominant_channel(&cw);
        cw.error_threshold = cw.dominant.map_or(0.0, |d| thresholds[d]);
        Ok(cw)
    }
}

/// Argmax of coefficient energy, lowest index on ties; `None` if all zero.
pub fn dominant_channel(cw: &ConditionedWindow) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for ch in 0..cw.channel_count() {
        let e = cw.energy(ch);
        if e > 0.0 && best.is_none_or(|(_, b)| e > b) {
            best = Some((ch, e));
        }
    }
    best.map(|(ch, _)| ch)
}

fn condition_channel(mut state: ChannelState, raw: &[i16], taps: &[f64], cfg: &EngineConfig) -> ChannelOut {
    let x: Vec<f64> = raw.iter().map(|&v| cfg.gain * v as f64).collect();
    let mut y = state.fir.process(taps, &x);
    let p = cfg.ar_order;

    let model = match state.model.take() {
        Some(m) => Some(m),
        None => fit_ar(&y, p).ok(),
    };
    let mut flag = ArtifactFlag { flagged: false, score: 0.0 };
    if let Some(model) = &model {
        let (residuals, predictions) = model.residuals(&state.tail, &y);
        let sigma = robust_sigma(&residuals);
        if sigma > 0.0 && sigma.is_finite() {
            let params = CauchyParams { x0: 0.0, gamma_c: sigma };
            if let Ok(s) = artifact_score(&residuals, params, sigma, cfg.artifact_threshold) {
                flag = ArtifactFlag { flagged: s.flagged, score: s.score };
            }
            let gate = if state.threshold.is_empty() {
                cfg.gamma_s * sigma * sigma
            } else {
                state.threshold.current_value()
            };
            if flag.flagged && gate > 0.0 {
                // Re-predict from the cleaned history so a burst does not leak
                // into the predictions of the samples after it.
                let p = model.order_p;
                let mut hist: Vec<f64> = state.tail[state.tail.len().saturating_sub(p)..].to_vec();
                let offset = hist.len();
                hist.extend_from_slice(&y);
                for n in 0..y.len() {
                    let at = offset + n;
                    let pred = if at < p { predictions[n] } else { model.predict(&hist[at - p..at]) };
                    let r = hist[at] - pred;
                    let e = if r * r > gate { r.signum() * gate / r.abs() } else { r };
                    hist[at] = pred + e;
                    y[n] = hist[at];
                    state.threshold.update(e);
                }
            } else {
                residuals.iter().for_each(|&r| state.threshold.update(r));
            }
        } else {
            residuals.iter().for_each(|&r| state.threshold.update(r));
        }
    }
    state.model = fit_ar(&y, p).ok().or(model);
    let keep = y.len().saturating_sub(p);
    state.tail = y[keep..].to_vec();
    ChannelOut { state, cleaned: y, flag }
}
