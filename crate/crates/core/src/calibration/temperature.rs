use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const GRID_POINTS: usize = 64;
const TOLERANCE: f64 = 1e-4;
pub const MIN_FIT_SAMPLES: usize = 10;
/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub t: f64,
    /// Validation NLL at T = 1 and at `t`; zero for the identity model.
    pub nll_before: f64,
    pub nll_after: f64,
    pub iterations: usize,
}

impl TemperatureModel {
    pub fn identity() -> Self {
        TemperatureModel {
            t: 1.0,
            nll_before: 0.0,
            nll_after: 0.0,
            iterations: 0,
        }
    }

    pub fn apply(&self, logits: &[f64]) -> Vec<f64> {
        apply_temperature(self.t, logits)
    }
}

/// Numerically stable `softmax(z / t)`. Entries of `-inf` get probability 0.
pub fn apply_temperature(t: f64, logits: &[f64]) -> Vec<f64> {
    debug_assert!(t > 0.0);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let e: Vec<f64> = logits.iter().map(|z| ((z - max) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    apply_temperature(1.0, logits)
}

/// Mean negative log-likelihood of `softmax(z / t)`, probabilities floored.
pub fn tempered_nll(t: f64, logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = z.iter().map(|v| ((v - max) / t).exp()).sum::<f64>().ln();
            let log_p = (z[y] - max) / t - log_norm;
            -log_p.max(PROB_FLOOR.ln())
        })
        .sum();
    total / logits.len() as f64
}

/// Fits `T` by minimizing validation NLL: a log-spaced grid over
/// `[T_MIN, T_MAX]` (plus `T = 1`), refined by golden-section search in log
/// space around the best grid point. Never returns a worse fit than `T = 1`.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureModel> {
    if logits.len() != labels.len() {
        return Err(Error::Fit(format!(
            "{} logit vectors but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "temperature fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            logits.len()
        )));
    }
    let k = logits[0].len();
    for (z, &y) in logits.iter().zip(labels) {
        if z.len() != k || y >= k {
            return Err(Error::Fit("logit vectors and labels must share one class count".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("logits must be finite".into()));
        }
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::Fit("only one class present in the fit set".into()));
    }

    let f = |log_t: f64| tempered_nll(log_t.exp(), logits, labels);
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let mut grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    let values: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("grid is nonempty");

    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b.exp() - a.exp() > TOLERANCE && iterations < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let mid = 0.5 * (a + b);
    let mut candidates = [(grid[best], values[best]), (mid, f(mid)), (c, fc), (d, fd)];
    candidates.sort_by(|x, y| x.1.total_cmp(&y.1));
    let (mut log_t, mut nll_after) = candidates[0];

    let nll_before = f(0.0);
    if nll_after > nll_before {
        log_t = 0.0;
        nll_after = nll_before;
    }
    Ok(TemperatureModel {
        t: log_t.exp(),
        nll_before,
        nll_after,
        iterations,
    })
}
