use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Autoregressive state model `x_t = sum(alpha_i * x_{t-i}) + beta + v_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order_p: usize,
    /// `alpha[0]` multiplies `x_{t-1}`.
    pub alpha: Vec<f64>,
    pub beta: f64,
    /// Residual variance of the fit.
    pub state_noise_variance: f64,
}

impl ArModel {
    /// One-step prediction from the `order_p` most recent samples, oldest first.
    pub fn predict(&self, recent: &[f64]) -> f64 {
        debug_assert!(recent.len() >= self.order_p);
        let last = recent.len() - 1;
        self.beta
            + self
                .alpha
                .iter()
                .enumerate()
                .map(|(i, a)| a * recent[last - i])
                .sum::<f64>()
    }

    /// Prediction errors for `x`, using `tail` (oldest first) as the samples
    /// preceding `x[0]`. Samples without enough past get a zero residual.
    pub fn residuals(&self, tail: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.order_p;
        let tail = &tail[tail.len().saturating_sub(p)..];
        let mut buf = Vec::with_capacity(tail.len() + x.len());
        buf.extend_from_slice(tail);
        buf.extend_from_slice(x);
        let offset = tail.len();
        let mut residuals = Vec::with_capacity(x.len());
        let mut predictions = Vec::with_capacity(x.len());
        for n in 0..x.len() {
            let at = offset + n;
            if at < p {
                residuals.push(0.0);
                predictions.push(x[n]);
            } else {
                let pred = self.predict(&buf[at - p..at]);
                residuals.push(x[n] - pred);
                predictions.push(pred);
            }
        }
        (residuals, predictions)
    }
}

/// Least-squares AR(p) fit with intercept.
///
/// A constant (or all-zero) history makes the lag columns collinear with the
/// intercept and is reported as [`Error::DegenerateInput`].
pub fn fit_ar(history: &[f64], order_p: usize) -> Result<ArModel> {
    if order_p == 0 {
        return Err(Error::Validation("AR order must be at least 1".into()));
    }
    if history.len() < 10 * order_p {
        return Err(Error::Validation(format!(
            "{} samples are too few for AR order {order_p}",
            history.len()
        )));
    }
    let dim = order_p + 1;
    let mut ata = vec![0.0; dim * dim];
    let mut aty = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for t in order_p..history.len() {
        for i in 0..order_p {
            row[i] = history[t - 1 - i];
        }
        row[order_p] = 1.0;
        let y = history[t];
        for i in 0..dim {
            aty[i] += row[i] * y;
            for j in 0..dim {
                ata[i * dim + j] += row[i] * row[j];
            }
        }
    }
    let coef = solve(&mut ata, &mut aty, dim)
        .ok_or_else(|| Error::DegenerateInput("singular AR normal equations".into()))?;

    let model = ArModel {
        order_p,
        alpha: coef[..order_p].to_vec(),
        beta: coef[order_p],
        state_noise_variance: 0.0,
    };
    let n = history.len() - order_p;
    let sse: f64 = (order_p..history.len())
        .map(|t| (history[t] - model.predict(&history[t - order_p..t])).powi(2))
        .sum();
    Ok(ArModel { state_noise_variance: sse / n as f64, ..model })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let tol = scale * 1e-12;
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= tol {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}
