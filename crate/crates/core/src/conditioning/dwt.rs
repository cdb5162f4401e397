//! Periodized orthogonal wavelet transform.
//!
//! Coefficients are laid out level-major: the level-`L` approximation first,
//! then details from the coarsest level to the finest,
//! `[cA_L | cD_L | cD_{L-1} | ... | cD_1]`.

use std::f64::consts::SQRT_2;

use crate::config::Wavelet;
use crate::error::{Error, Result};

fn lowpass(w: Wavelet) -> Vec<f64> {
    match w {
        Wavelet::Haar => vec![1.0 / SQRT_2, 1.0 / SQRT_2],
        Wavelet::Db4 => {
            let s3 = 3f64.sqrt();
            let d = 4.0 * SQRT_2;
            vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
        }
    }
}

fn filters(w: Wavelet) -> (Vec<f64>, Vec<f64>) {
    let h = lowpass(w);
    let n = h.len();
    let g = (0..n)
        .map(|k| if k % 2 == 0 { h[n - 1 - k] } else { -h[n - 1 - k] })
        .collect();
    (h, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwtOutput {
    pub coeffs: Vec<f64>,
    /// Length of the level-`L` approximation block at the front of `coeffs`.
    pub approx_len: usize,
    /// The input was zero-padded to a multiple of `2^L`.
    pub padded: bool,
}

/// Decomposes `block` over `levels` levels.
pub fn dwt(block: &[f64], levels: u32, wavelet: Wavelet) -> Result<DwtOutput> {
    let step = 1usize
        .checked_shl(levels)
        .ok_or_else(|| Error::Config(format!("{levels} levels is too deep")))?;
    let taps = lowpass(wavelet).len();
    if levels == 0 || block.is_empty() || step > block.len() || (block.len().div_ceil(step) * 2) < taps {
        return Err(Error::Config(format!(
            "{levels} levels do not fit a {}-sample block",
            block.len()
        )));
    }
    let n = block.len().div_ceil(step) * step;
    let mut coeffs = block.to_vec();
    coeffs.resize(n, 0.0);
    let (h, g) = filters(wavelet);
    let mut len = n;
    let mut scratch = vec![0.0; n];
    for _ in 0..levels {
        let half = len / 2;
        for i in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for k in 0..h.len() {
                let x = coeffs[(2 * i + k) % len];
                a += h[k] * x;
                d += g[k] * x;
            }
            scratch[i] = a;
            scratch[half + i] = d;
        }
        coeffs[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
    Ok(DwtOutput { coeffs, approx_len: len, padded: n != block.len() })
}

/// Inverse of [`dwt`] for a coefficient vector of length `n * 2^-L` aligned.
pub fn idwt(coeffs: &[f64], levels: u32, wavelet: Wavelet) -> Result<Vec<f64>> {
    let n = coeffs.len();
    let step = 1usize << levels;
    if levels == 0 || n == 0 || !n.is_multiple_of(step) {
        return Err(Error::Config(format!("{n} coefficients do not split into {levels} levels")));
    }
    let (h, g) = filters(wavelet);
    let mut out = coeffs.to_vec();
    let mut len = n / step;
    let mut scratch = vec![0.0; n];
    for _ in 0..levels {
        let full = len * 2;
        scratch[..full].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..len {
            let (a, d) = (out[i], out[len + i]);
            for k in 0..h.len() {
                scratch[(2 * i + k) % full] += h[k] * a + g[k] * d;
            }
        }
        out[..full].copy_from_slice(&scratch[..full]);
        len = full;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn haar_annihilates_constants() {
        let out = dwt(&[4.2; 64], 1, Wavelet::Haar).unwrap();
        assert!(out.coeffs[32..].iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn parseval_both_families() {
        for w in [Wavelet::Haar, Wavelet::Db4] {
            let x = noise(1000, 3);
            let out = dwt(&x, 3, w).unwrap();
            assert!(!out.padded);
            assert_eq!(out.approx_len, 125);
            let rel = (energy(&out.coeffs) - energy(&x)).abs() / energy(&x);
            assert!(rel < 1e-9, "{w:?}: {rel}");
        }
    }

    #[test]
    fn impulse_reconstructs() {
        for w in [Wavelet::Haar, Wavelet::Db4] {
            let mut x = vec![0.0; 128];
            x[37] = 1.0;
            let back = idwt(&dwt(&x, 3, w).unwrap().coeffs, 3, w).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pads_and_rejects() {
        let out = dwt(&noise(100, 1), 3, Wavelet::Haar).unwrap();
        assert!(out.padded);
        assert_eq!(out.coeffs.len(), 104);
        assert!(matches!(dwt(&[1.0; 4], 3, Wavelet::Haar), Err(Error::Config(_))));
        assert!(matches!(dwt(&[1.0; 8], 3, Wavelet::Db4), Err(Error::Config(_))));
    }

    #[test]
    fn linear_map() {
        let (u, v) = (noise(256, 5), noise(256, 9));
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        for w in [Wavelet::Haar, Wavelet::Db4] {
            let du = dwt(&u, 3, w).unwrap().coeffs;
            let dv = dwt(&v, 3, w).unwrap().coeffs;
            let dm = dwt(&mix, 3, w).unwrap().coeffs;
            for i in 0..256 {
                assert!((dm[i] - (a * du[i] + b * dv[i])).abs() < 1e-9);
            }
        }
    }
}
