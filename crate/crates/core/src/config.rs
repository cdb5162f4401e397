//! Live-tunable engine configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wavelet family used by the decomposition stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    #[default]
    Haar,
    Db4,
}

impl FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(Wavelet::Haar),
            "db4" | "daubechies4" | "d4" => Ok(Wavelet::Db4),
            other => Err(Error::Config(format!("unknown wavelet `{other}`"))),
        }
    }
}

/// Every knob of the pipeline. Clinician-facing values are `td`, `tp` and
/// `duration_required`; the rest tune the conditioning chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Detection threshold on the combined synchronization likelihood.
    pub td: f64,
    /// Prediction threshold on the AIS similarity score.
    pub tp: f64,
    /// Consecutive detector hits needed for an onset; also the number of
    /// quiet windows that end an alarm.
    pub duration_required: u32,
    /// Scaling factor of the adaptive prediction-error threshold.
    pub gamma_s: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub gain: f64,
    /// Window width in signature units (frames).
    pub window_frames: usize,
    /// Adjacent-channel time shift in samples.
    pub delta_shift: usize,
    pub artifact_threshold: f64,
    pub ar_order: usize,
    pub dwt_levels: u32,
    pub wavelet: Wavelet,
    /// Revision counter, assigned by the engine when a config is applied.
    pub version: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            td: 0.23,
            tp: 0.09,
            duration_required: 3,
            gamma_s: 1.5,
            band_low_hz: 30.0,
            band_high_hz: 100.0,
            gain: 100.0,
            window_frames: 8,
            delta_shift: 16,
            artifact_threshold: 0.6,
            ar_order: 6,
            dwt_levels: 3,
            wavelet: Wavelet::Haar,
            version: 1,
        }
    }
}

impl EngineConfig {
    /// Samples per signature unit: half a second.
    pub fn frame_samples(rate_hz: u32) -> usize {
        (rate_hz / 2) as usize
    }

    pub fn window_samples(&self, rate_hz: u32) -> usize {
        self.window_frames * Self::frame_samples(rate_hz)
    }

    /// Checks the rate-independent invariants.
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        open_unit("td", self.td)?;
        open_unit("tp", self.tp)?;
        if self.duration_required == 0 {
            return Err(Error::Config("duration must be at least 1 window".into()));
        }
        if !(self.gamma_s > 0.0 && self.gamma_s.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma_s)));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(Error::Config(format!(
                "band {}..{} Hz is not increasing",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.window_frames == 0 {
            return Err(Error::Config("w must be at least 1".into()));
        }
        if self.ar_order == 0 {
            return Err(Error::Config("ar_order must be at least 1".into()));
        }
        if !(self.artifact_threshold > 0.0 && self.artifact_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "artifact_threshold must lie in (0, 1], got {}",
                self.artifact_threshold
            )));
        }
        Ok(())
    }

    /// Full validation once the sample rate is known.
    pub fn validate_for_rate(&self, rate_hz: u32) -> Result<()> {
        self.validate()?;
        let nyquist = rate_hz as f64 / 2.0;
        if self.band_high_hz >= nyquist {
            return Err(Error::Config(format!(
                "band upper edge {} Hz is not below Nyquist {nyquist} Hz",
                self.band_high_hz
            )));
        }
        let n = self.window_samples(rate_hz);
        if self.dwt_levels == 0 || (1usize << self.dwt_levels) > n {
            return Err(Error::Config(format!(
                "{} decomposition levels do not fit a {n}-sample window",
                self.dwt_levels
            )));
        }
        if n < 10 * self.ar_order {
            return Err(Error::Config(format!(
                "a {n}-sample window is too short for AR order {}",
                self.ar_order
            )));
        }
        if self.delta_shift >= n {
            return Err(Error::Config("delta_shift must be shorter than the window".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Keys match the CLI flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key.trim() {
            "td" => self.td = num(key, value)?,
            "tp" => self.tp = num(key, value)?,
            "duration" | "duration_required" => self.duration_required = num(key, value)?,
            "gamma" | "gamma_s" => self.gamma_s = num(key, value)?,
            "band" => {
                let (lo, hi) = value
                    .split_once(':')
                    .or_else(|| value.split_once(','))
                    .ok_or_else(|| Error::Config(format!("band must be `low:high`, got `{value}`")))?;
                self.band_low_hz = num(key, lo)?;
                self.band_high_hz = num(key, hi)?;
            }
            "band_low_hz" => self.band_low_hz = num(key, value)?,
            "band_high_hz" => self.band_high_hz = num(key, value)?,
            "gain" => self.gain = num(key, value)?,
            "w" | "window_frames" => self.window_frames = num(key, value)?,
            "delta_shift" => self.delta_shift = num(key, value)?,
            "artifact_threshold" => self.artifact_threshold = num(key, value)?,
            "ar_order" => self.ar_order = num(key, value)?,
            "dwt_levels" => self.dwt_levels = num(key, value)?,
            "wavelet" => self.wavelet = value.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_key_values(text)?;
        Ok(cfg)
    }

    pub fn merge_key_values(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "td={}", self.td);
        let _ = writeln!(s, "tp={}", self.tp);
        let _ = writeln!(s, "duration={}", self.duration_required);
        let _ = writeln!(s, "gamma={}", self.gamma_s);
        let _ = writeln!(s, "band={}:{}", self.band_low_hz, self.band_high_hz);
        let _ = writeln!(s, "gain={}", self.gain);
        let _ = writeln!(s, "w={}", self.window_frames);
        let _ = writeln!(s, "delta_shift={}", self.delta_shift);
        let _ = writeln!(s, "artifact_threshold={}", self.artifact_threshold);
        let _ = writeln!(s, "ar_order={}", self.ar_order);
        let _ = writeln!(s, "dwt_levels={}", self.dwt_levels);
        let _ = writeln!(
            s,
            "wavelet={}",
            match self.wavelet {
                Wavelet::Haar => "haar",
                Wavelet::Db4 => "db4",
            }
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_at_both_rates() {
        let cfg = EngineConfig::default();
        cfg.validate_for_rate(250).unwrap();
        cfg.validate_for_rate(500).unwrap();
        assert_eq!(cfg.window_samples(250), 1000);
    }

    #[test]
    fn band_above_nyquist_rejected() {
        let cfg = EngineConfig {
            band_high_hz: 130.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate_for_rate(250), Err(Error::Config(_))));
        cfg.validate_for_rate(500).unwrap();
    }

    #[test]
    fn thresholds_must_be_open_unit() {
        for (td, tp) in [(0.0, 0.09), (0.23, 1.5), (1.0, 0.5)] {
            let cfg = EngineConfig { td, tp, ..Default::default() };
            assert!(cfg.validate().is_err(), "td={td} tp={tp}");
        }
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = EngineConfig::default();
        cfg.set("td", "0.3").unwrap();
        cfg.set("band", "20:90").unwrap();
        cfg.set("wavelet", "db4").unwrap();
        let parsed = EngineConfig::from_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn key_value_errors() {
        assert!(EngineConfig::from_key_values("td").is_err());
        assert!(EngineConfig::from_key_values("nope=1").is_err());
        assert!(EngineConfig::from_key_values("td=abc").is_err());
        let cfg = EngineConfig::from_key_values("# comment\n\ntp = 0.2\n").unwrap();
        assert_eq!(cfg.tp, 0.2);
    }
}
