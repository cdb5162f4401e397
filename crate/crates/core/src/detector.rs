//! Cross-channel synchronization detector with an adaptive error threshold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionedWindow;
use crate::error::{Error, Result};

/// Symmetric `n x n` matrix of pairwise synchronization values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMatrix {
    pub n: usize,
    /// Row-major.
    pub values: Vec<f64>,
    /// Channels with zero variance; their off-diagonal entries are zero.
    pub flat_channels: Vec<bool>,
}

impl LikelihoodMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Pairwise absolute Pearson correlation of the conditioned samples.
pub fn sync_matrix(conditioned: &ConditionedWindow) -> Result<LikelihoodMatrix> {
    let len = conditioned.valid_len.max(2).min(conditioned.len());
    let chans: Vec<&[f64]> = conditioned.filtered.iter().map(|c| &c[..len]).collect();
    correlation_matrix(&chans)
}

/// [`sync_matrix`] over raw equal-length channels.
pub fn correlation_matrix(channels: &[&[f64]]) -> Result<LikelihoodMatrix> {
    let n = channels.len();
    if n < 2 {
        return Err(Error::Validation(format!("{n} channels; synchronization needs 2")));
    }
    let len = channels[0].len();
    if let Some(c) = channels.iter().find(|c| c.len() != len) {
        return Err(Error::DimensionMismatch { left: len, right: c.len() });
    }
    let centred: Vec<Vec<f64>> = channels
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / len.max(1) as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centred.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let flat_channels: Vec<bool> = norms.iter().map(|&s| s <= scale * 1e-12 || s == 0.0).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            if flat_channels[i] || flat_channels[j] {
                continue;
            }
            let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).abs().min(1.0);
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(LikelihoodMatrix { n, values, flat_channels })
}

/// Largest off-diagonal entry.
pub fn combined_likelihood(matrix: &LikelihoodMatrix) -> Result<f64> {
    if matrix.n < 2 {
        return Err(Error::Validation("combined likelihood needs at least 2 channels".into()));
    }
    let n = matrix.n;
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                best = best.max(matrix.values[i * n + j]);
            }
        }
    }
    Ok(best)
}

/// Rolling `T = gamma * mean(e^2)` over the last `window_n` prediction errors.
///
/// The running sum is compensated and rebuilt from the ring every `window_n`
/// pushes, so it never drifts from a from-scratch evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveThreshold {
    pub gamma_s: f64,
    pub window_n: usize,
    error_history: VecDeque<f64>,
    sum: f64,
    compensation: f64,
    since_rebuild: usize,
}

impl AdaptiveThreshold {
    pub fn new(gamma_s: f64, window_n: usize) -> Self {
        let window_n = window_n.max(1);
        Self {
            gamma_s,
            window_n,
            error_history: VecDeque::with_capacity(window_n),
            sum: 0.0,
            compensation: 0.0,
            since_rebuild: 0,
        }
    }

    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    /// Pushes one prediction error `e`; its square enters the history.
    pub fn update(&mut self, error: f64) {
        let sq = error * error;
        if self.error_history.len() == self.window_n {
            if let Some(old) = self.error_history.pop_front() {
                self.add(-old);
            }
        }
        self.error_history.push_back(sq);
        self.add(sq);
        self.since_rebuild += 1;
        if self.since_rebuild >= self.window_n {
            self.sum = self.error_history.iter().sum();
            self.compensation = 0.0;
            self.since_rebuild = 0;
        }
    }

    pub fn current_value(&self) -> f64 {
        if self.error_history.is_empty() {
            return 0.0;
        }
        self.gamma_s * ((self.sum + self.compensation) / self.error_history.len() as f64).max(0.0)
    }

    pub fn len(&self) -> usize {
        self.error_history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.error_history.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.error_history.len() == self.window_n
    }

    pub fn squared_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.error_history.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorOutput {
    None,
    Onset,
    Ongoing,
}

impl DetectorOutput {
    pub fn is_active(self) -> bool {
        self != DetectorOutput::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionState {
    pub consecutive_hits: u32,
    pub duration_required: u32,
    pub last_likelihood: f64,
    pub td: f64,
}

impl DetectionState {
    pub fn new(td: f64, duration_required: u32) -> Self {
        Self { consecutive_hits: 0, duration_required: duration_required.max(1), last_likelihood: 0.0, td }
    }

    /// Counts consecutive windows above `td`; the `duration_required`-th is
    /// the onset, later ones are ongoing, and any miss resets the count.
    pub fn detect(&mut self, likelihood: f64) -> DetectorOutput {
        self.last_likelihood = likelihood;
        if likelihood > self.td {
            self.consecutive_hits = self.consecutive_hits.saturating_add(1);
            match self.consecutive_hits.cmp(&self.duration_required) {
                std::cmp::Ordering::Less => DetectorOutput::None,
                std::cmp::Ordering::Equal => DetectorOutput::Onset,
                std::cmp::Ordering::Greater => DetectorOutput::Ongoing,
            }
        } else {
            self.consecutive_hits = 0;
            DetectorOutput::None
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn run(td: f64, dur: u32, xs: &[f64]) -> Vec<DetectorOutput> {
        let mut s = DetectionState::new(td, dur);
        xs.iter().map(|&x| s.detect(x)).collect()
    }

    #[test]
    fn onset_on_third_hit() {
        use DetectorOutput::*;
        assert_eq!(run(0.23, 3, &[0.3, 0.3, 0.3]), vec![None, None, Onset]);
        assert_eq!(run(0.23, 3, &[0.3, 0.1, 0.3, 0.3, 0.3]), vec![None, None, None, None, Onset]);
        assert_eq!(run(0.23, 2, &[0.3, 0.3, 0.3]), vec![None, Onset, Ongoing]);
        assert!(run(0.23, 1, &[0.1; 50]).iter().all(|o| *o == None));
    }

    #[test]
    fn threshold_closed_forms() {
        let mut t = AdaptiveThreshold::new(2.0, 7);
        for _ in 0..20 {
            t.update(0.0);
        }
        assert_eq!(t.current_value(), 0.0);
        for _ in 0..20 {
            t.update(1.5);
        }
        assert!((t.current_value() - 2.0 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn threshold_matches_scratch() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = AdaptiveThreshold::new(1.5, 50);
        let mut all = Vec::new();
        for _ in 0..5000 {
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
            all.push(e);
            t.update(e);
            let tail = &all[all.len().saturating_sub(50)..];
            let scratch = 1.5 * tail.iter().map(|e| e * e).sum::<f64>() / tail.len() as f64;
            assert!((t.current_value() - scratch).abs() < 1e-12);
        }
    }

    #[test]
    fn copy_channel_is_perfectly_synchronized() {
        let a: Vec<f64> = (0..300).map(|i| ((i * 7919) % 113) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| -2.0 * v + 5.0).collect();
        let c = vec![3.0; 300];
        let m = correlation_matrix(&[&a, &b, &c]).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-9);
        assert_eq!(m.get(0, 2), 0.0);
        assert!(m.flat_channels[2]);
        assert_eq!(m.get(2, 2), 1.0);
    }

    #[test]
    fn independent_noise_is_weakly_coupled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chans: Vec<Vec<f64>> =
            (0..4).map(|_| (0..10_000).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let refs: Vec<&[f64]> = chans.iter().map(Vec::as_slice).collect();
        let m = correlation_matrix(&refs).unwrap();
        assert!(combined_likelihood(&m).unwrap() < 0.1);
    }

    #[test]
    fn combined_is_max_off_diagonal() {
        let id = LikelihoodMatrix { n: 3, values: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], flat_channels: vec![false; 3] };
        assert_eq!(combined_likelihood(&id).unwrap(), 0.0);
        let m = LikelihoodMatrix { n: 3, values: vec![1.0, 0.2, 0.8, 0.2, 1.0, 0.5, 0.8, 0.5, 1.0], flat_channels: vec![false; 3] };
        assert_eq!(combined_likelihood(&m).unwrap(), 0.8);
        let one = LikelihoodMatrix { n: 1, values: vec![1.0], flat_channels: vec![false] };
        assert!(combined_likelihood(&one).is_err());
    }
}
