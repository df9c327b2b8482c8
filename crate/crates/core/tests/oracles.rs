//! Metric and fitting routines against independent brute-force
//! computations on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use faultarb_core::calibration::{brier, ece, fit_temperature, nll, pav, tempered_nll};

fn random_probs(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn nll_and_brier_match_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let probs: Vec<Vec<f64>> = (0..50).map(|_| random_probs(&mut rng, 7)).collect();
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..7)).collect();
        // product of likelihoods stays far above underflow at this size
        let likelihood: f64 = probs.iter().zip(&labels).map(|(p, &y)| p[y]).product();
        let expected_nll = -likelihood.ln() / 50.0;
        assert!((nll(&probs, &labels).unwrap() - expected_nll).abs() < 1e-10);

        let mut sq = 0.0;
        for (p, &y) in probs.iter().zip(&labels) {
            for (k, v) in p.iter().enumerate() {
                let t = if k == y { 1.0 } else { 0.0 };
                sq += (v - t).powi(2);
            }
        }
        assert!((brier(&probs, &labels).unwrap() - sq / 50.0).abs() < 1e-10);
    }
}

#[test]
fn ece_matches_interval_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n_bins in [1, 5, 10, 15] {
        for _ in 0..20 {
            let conf: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
            let correct: Vec<bool> = (0..50).map(|_| rng.random_bool(0.6)).collect();
            let mut expected = 0.0;
            for b in 0..n_bins {
                let (lo, hi) = (b as f64 / n_bins as f64, (b + 1) as f64 / n_bins as f64);
                let members: Vec<usize> = (0..50)
                    .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] == 0.0)) && conf[i] <= hi)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let m = members.len() as f64;
                let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
                let mean_conf = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
                expected += m / 50.0 * (acc - mean_conf).abs();
            }
            assert!((ece(&conf, &correct, n_bins).unwrap() - expected).abs() < 1e-10);
        }
    }
}

/// Unweighted isotonic regression by the max-min formula.
fn isotonic_max_min(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mean = |a: usize, b: usize| y[a..=b].iter().sum::<f64>() / (b - a + 1) as f64;
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| mean(j, k)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[test]
fn pav_matches_max_min_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.random_range(1..25);
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
        let fitted = pav(&y, &vec![1.0; n]);
        for (a, b) in fitted.iter().zip(isotonic_max_min(&y)) {
            assert!((a - b).abs() < 1e-12, "{fitted:?}");
        }
    }
}

#[test]
fn fitted_temperature_is_a_stationary_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let logits: Vec<Vec<f64>> = (0..500).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let labels: Vec<usize> = logits
        .iter()
        .map(|z| {
            // noisy argmax so the fit lands inside the search range
            if rng.random_bool(0.7) {
                z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
            } else {
                rng.random_range(0..5)
            }
        })
        .collect();
    let m = fit_temperature(&logits, &labels).unwrap();
    let h = 1e-4 * m.t;
    let slope = (tempered_nll(m.t + h, &logits, &labels) - tempered_nll(m.t - h, &logits, &labels)) / (2.0 * h);
    assert!(slope.abs() < 1e-3, "T {} slope {slope}", m.t);
    assert!(m.nll_after <= m.nll_before);
    for t in [0.5 * m.t, 2.0 * m.t] {
        assert!(tempered_nll(t, &logits, &labels) >= m.nll_after);
    }
}
