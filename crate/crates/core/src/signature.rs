//! The 165-bit neural signature: encoding, bit-exact packing and the
//! real-valued vector form used for matching.
//!
//! Packed layout (bit 0 is the least significant bit of byte 0):
//!
//! | bits        | field                                   |
//! |-------------|-----------------------------------------|
//! | `[0,128)`   | 8 local values, 16 bits each, LE        |
//! | `[128,160)` | 4 global values, 8 bits each            |
//! | `[160,162)` | priority string                         |
//! | `[162,164)` | ordering string                         |
//! | `164`       | control bit                             |
//! | `[165,168)` | zero padding                            |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionedWindow;
use crate::config::EngineConfig;
use crate::error::{Error, Result};

pub const LOCAL_COUNT: usize = 8;
pub const GLOBAL_COUNT: usize = 4;
pub const DIM: usize = LOCAL_COUNT + GLOBAL_COUNT;
pub const PACKED_BITS: usize = 165;
pub const PACKED_BYTES: usize = 21;

const LOCAL_MAX: f64 = u16::MAX as f64;
const GLOBAL_MAX: f64 = u8::MAX as f64;

/// Forgetting factor of the per-channel quantization range, per window.
pub const RANGE_FORGETTING: f64 = 0.99;

/// Added to energies before taking logarithms.
const ENERGY_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Signature {
    pub local: [u16; LOCAL_COUNT],
    pub global: [u8; GLOBAL_COUNT],
    /// Two-bit string.
    pub priority_bits: u8,
    /// Two-bit string.
    pub ordering_bits: u8,
    pub control_bit: bool,
}

impl Signature {
    /// The all-zero word with the control bit set; produced for silent windows
    /// and never matched.
    pub const SENTINEL: Signature = Signature {
        local: [0; LOCAL_COUNT],
        global: [0; GLOBAL_COUNT],
        priority_bits: 0,
        ordering_bits: 0,
        control_bit: true,
    };

    pub fn is_sentinel(&self) -> bool {
        *self == Self::SENTINEL
    }

    pub fn pack(&self) -> [u8; PACKED_BYTES] {
        let mut out = [0u8; PACKED_BYTES];
        for (i, v) in self.local.iter().enumerate() {
            out[2 * i..2 * i + 2].copy_from_slice(&v.to_le_bytes());
        }
        out[16..20].copy_from_slice(&self.global);
        out[20] = (self.priority_bits & 0b11)
            | (self.ordering_bits & 0b11) << 2
            | (self.control_bit as u8) << 4;
        out
    }

    /// Inverse of [`Signature::pack`]. Nonzero padding bits are a format error.
    pub fn unpack(word: &[u8]) -> Result<Self> {
        if word.len() != PACKED_BYTES {
            return Err(Error::Format(format!("signature word is {} bytes, expected {PACKED_BYTES}", word.len())));
        }
        let tail = word[20];
        if tail & 0b1110_0000 != 0 {
            return Err(Error::Format("signature padding bits are not zero".into()));
        }
        let mut local = [0u16; LOCAL_COUNT];
        for (i, v) in local.iter_mut().enumerate() {
            *v = u16::from_le_bytes([word[2 * i], word[2 * i + 1]]);
        }
        let mut global = [0u8; GLOBAL_COUNT];
        global.copy_from_slice(&word[16..20]);
        Ok(Self {
            local,
            global,
            priority_bits: tail & 0b11,
            ordering_bits: (tail >> 2) & 0b11,
            control_bit: tail & 0b1_0000 != 0,
        })
    }

    pub fn to_hex(&self) -> String {
        self.pack().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != PACKED_BYTES * 2 || !s.is_ascii() {
            return Err(Error::Format(format!("signature hex must be {} digits", PACKED_BYTES * 2)));
        }
        let mut word = [0u8; PACKED_BYTES];
        for (i, b) in word.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Format(format!("bad hex digit in `{s}`")))?;
        }
        Self::unpack(&word)
    }

    /// Maps every field to `[0, 1]` by its quantization range.
    pub fn dequantize(&self) -> Result<SignatureVector> {
        if self.is_sentinel() {
            return Err(Error::Sentinel);
        }
        let mut values = [0.0; DIM];
        for (i, &v) in self.local.iter().enumerate() {
            values[i] = v as f64 / LOCAL_MAX;
        }
        for (i, &v) in self.global.iter().enumerate() {
            values[LOCAL_COUNT + i] = v as f64 / GLOBAL_MAX;
        }
        Ok(SignatureVector(values))
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_hex(s)
    }
}

/// One hex word per line.
pub fn dump_hex(signatures: &[Signature]) -> String {
    signatures.iter().map(|s| s.to_hex() + "\n").collect()
}

/// Parses [`dump_hex`] output; blank lines and `#` comments are skipped.
pub fn parse_hex_lines(text: &str) -> Result<Vec<Signature>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(Signature::from_hex)
        .collect()
}

/// Dequantized signature: 8 local then 4 global components, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector(pub [f64; DIM]);

impl SignatureVector {
    pub fn values(&self) -> &[f64; DIM] {
        &self.0
    }

    /// Nearest representable signature; components are clamped to `[0, 1]`.
    pub fn quantize(&self) -> Signature {
        let mut sig = Signature::default();
        for i in 0..LOCAL_COUNT {
            sig.local[i] = (self.0[i].clamp(0.0, 1.0) * LOCAL_MAX).round() as u16;
        }
        for i in 0..GLOBAL_COUNT {
            sig.global[i] = (self.0[LOCAL_COUNT + i].clamp(0.0, 1.0) * GLOBAL_MAX).round() as u8;
        }
        if sig.is_sentinel() {
            sig.control_bit = false;
        }
        sig
    }
}

fn segment_log_energies(coeffs: &[f64]) -> [f64; LOCAL_COUNT] {
    let mut sums = [0.0; LOCAL_COUNT];
    let mut counts = [0usize; LOCAL_COUNT];
    let n = coeffs.len().max(1);
    for (k, c) in coeffs.iter().enumerate() {
        let seg = k * LOCAL_COUNT / n;
        sums[seg] += c * c;
        counts[seg] += 1;
    }
    let mut out = [0.0; LOCAL_COUNT];
    for i in 0..LOCAL_COUNT {
        let mean = if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 };
        out[i] = (mean + ENERGY_FLOOR).ln();
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).abs().min(1.0)
    }
}

/// Turns conditioned windows into signatures. Keeps one running log-energy
/// range per channel so local values adapt to each subject's amplitude.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignatureEncoder {
    ranges: Vec<Option<(f64, f64)>>,
}

impl SignatureEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generate(&mut self, cw: &ConditionedWindow, config: &EngineConfig) -> Result<Signature> {
        let n = cw.channel_count();
        if n < 2 {
            return Err(Error::Validation(format!("{n} channels; signatures need 2")));
        }
        if self.ranges.len() != n {
            self.ranges = vec![None; n];
        }
        let Some(dom) = cw.dominant else {
            return Ok(Signature::SENTINEL);
        };
        let approx = |ch: usize| &cw.dwt_coeffs[ch][..cw.approx_len];

        let mut dom_levels = [0.0; LOCAL_COUNT];
        for ch in 0..n {
            let levels = segment_log_energies(approx(ch));
            let wmin = levels.iter().cloned().fold(f64::INFINITY, f64::min);
            let wmax = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if ch == dom {
                dom_levels = levels;
            }
            // A flagged channel would stretch the range for many windows.
            if cw.artifact_flags.get(ch).is_some_and(|f| f.flagged) && self.ranges[ch].is_some() {
                continue;
            }
            let r = RANGE_FORGETTING;
            self.ranges[ch] = Some(match self.ranges[ch] {
                None => (wmin, wmax),
                Some((lo, hi)) => (wmin.min(r * lo + (1.0 - r) * wmin), wmax.max(r * hi + (1.0 - r) * wmax)),
            });
        }
        let mut sig = Signature::default();
        let (lo, hi) = self.ranges[dom].unwrap_or((0.0, 0.0));
        for (i, v) in dom_levels.iter().enumerate() {
            let unit = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            sig.local[i] = (unit.clamp(0.0, 1.0) * LOCAL_MAX).round() as u16;
        }

        let coeff_shift = (config.delta_shift as f64 / (1u64 << config.dwt_levels) as f64).round().max(1.0) as usize;
        let coeff_shift = coeff_shift.min(cw.approx_len.saturating_sub(2));
        let adjacent: Vec<usize> = [dom.checked_sub(1), Some(dom + 1)]
            .into_iter()
            .flatten()
            .filter(|&c| c < n)
            .collect();
        let energy = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>();
        let dom_energy = energy(approx(dom));
        let dom_head = energy(&approx(dom)[..cw.approx_len - coeff_shift]);
        let ratio = |num: f64, den: f64| if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        let g0 = adjacent.iter().map(|&c| ratio(energy(approx(c)), dom_energy)).sum::<f64>() / adjacent.len() as f64;
        let g1 = adjacent
            .iter()
            .map(|&c| ratio(energy(&approx(c)[coeff_shift..]), dom_head))
            .sum::<f64>()
            / adjacent.len() as f64;
        let g2 = adjacent
            .iter()
            .flat_map(|&c| {
                (0..=coeff_shift).map(move |lag| pearson(&approx(dom)[..cw.approx_len - lag], &approx(c)[lag..]))
            })
            .fold(0.0, f64::max);
        let energies: Vec<f64> = (0..n).map(|c| cw.energy(c)).collect();
        let mean = energies.iter().sum::<f64>() / n as f64;
        let sd = (energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let g3 = if mean > 0.0 { (sd / mean / ((n - 1) as f64).sqrt()).clamp(0.0, 1.0) } else { 0.0 };
        for (i, g) in [g0, g1, g2, g3].into_iter().enumerate() {
            sig.global[i] = (g * GLOBAL_MAX).round() as u8;
        }
        Ok(sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_word_and_single_bit_layout() {
        assert_eq!(Signature::default().pack(), [0u8; PACKED_BYTES]);
        let mut s = Signature::default();
        s.local[0] = 1;
        let mut want = [0u8; PACKED_BYTES];
        want[0] = 1;
        assert_eq!(s.pack(), want);
        let c = Signature { control_bit: true, ..Signature::default() };
        assert_eq!(c.pack()[20], 0b1_0000);
        assert_eq!(Signature::unpack(&c.pack()).unwrap(), c);
    }

    #[test]
    fn padding_must_be_zero() {
        let mut w = [0u8; PACKED_BYTES];
        w[20] = 0b0010_0000;
        assert!(Signature::unpack(&w).is_err());
        assert!(Signature::unpack(&[0u8; 20]).is_err());
    }

    #[test]
    fn dequantize_endpoints_and_sentinel() {
        let max = Signature { local: [u16::MAX; 8], global: [u8::MAX; 4], ..Signature::default() };
        assert_eq!(max.dequantize().unwrap().0, [1.0; DIM]);
        assert_eq!(Signature::default().dequantize().unwrap().0, [0.0; DIM]);
        assert!(matches!(Signature::SENTINEL.dequantize(), Err(Error::Sentinel)));
    }

    #[test]
    fn quantize_inverts_dequantize_on_one_field() {
        let base = Signature { local: [7, 9, 11, 13, 15, 17, 19, 21], global: [1, 2, 3, 4], ..Signature::default() };
        for v in 0..=u16::MAX {
            let mut s = base;
            s.local[3] = v;
            assert_eq!(s.dequantize().unwrap().quantize(), s);
        }
        for v in 0..=u8::MAX {
            let mut s = base;
            s.global[2] = v;
            assert_eq!(s.dequantize().unwrap().quantize(), s);
        }
    }

    #[test]
    fn hex_lines_round_trip() {
        let a = Signature { local: [1, 2, 3, 4, 5, 6, 7, 0xffff], global: [9, 8, 7, 6], priority_bits: 2, ordering_bits: 1, control_bit: false };
        let text = dump_hex(&[a, Signature::SENTINEL]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().len(), 42);
        assert_eq!(parse_hex_lines(&text).unwrap(), vec![a, Signature::SENTINEL]);
        assert!(Signature::from_hex("zz").is_err());
    }
}
