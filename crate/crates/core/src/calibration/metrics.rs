use serde::{Deserialize, Serialize};

use super::temperature::PROB_FLOOR;
use crate::class::FaultClass;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;
pub const COVERAGE_THRESHOLDS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    pub accuracy: f64,
}

fn check_inputs(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::Metric("no predictions to score".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::input("confidences and outcomes differ in length"));
    }
    if n_bins == 0 {
        return Err(Error::Metric("n_bins must be at least 1".into()));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Metric("confidences must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Index of the right-closed bin `(k/n, (k+1)/n]` holding `c`; 0 goes to the first bin.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut k = ((c * n).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
    // guard against rounding in c * n right at an edge
    if k > 0 && c <= k as f64 / n {
        k -= 1;
    } else if k + 1 < n_bins && c > (k + 1) as f64 / n {
        k += 1;
    }
    k
}

fn summarize(groups: &[Vec<usize>], edges: &[(f64, f64)], conf: &[f64], correct: &[bool]) -> Vec<ReliabilityBin> {
    groups
        .iter()
        .zip(edges)
        .map(|(g, &(lo, hi))| {
            let count = g.len();
            let (mean_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (
                    g.iter().map(|&i| conf[i]).sum::<f64>() / count as f64,
                    g.iter().filter(|&&i| correct[i]).count() as f64 / count as f64,
                )
            };
            ReliabilityBin { lo, hi, count, mean_confidence, accuracy }
        })
        .collect()
}

/// Equal-width reliability bins over `(0, 1]`.
pub fn reliability_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_inputs(confidences, correct, n_bins)?;
    let mut groups = vec![Vec::new(); n_bins];
    for (i, &c) in confidences.iter().enumerate() {
        groups[bin_index(c, n_bins)].push(i);
    }
    let edges: Vec<(f64, f64)> = (0..n_bins)
        .map(|k| (k as f64 / n_bins as f64, (k + 1) as f64 / n_bins as f64))
        .collect();
    Ok(summarize(&groups, &edges, confidences, correct))
}

fn weighted_gap(bins: &[ReliabilityBin], n: usize) -> f64 {
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum()
}

/// Expected calibration error with equal-width, right-closed bins.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = reliability_bins(confidences, correct, n_bins)?;
    Ok(weighted_gap(&bins, confidences.len()))
}

/// Equal-mass bins: samples sorted by confidence (stable) and cut into
/// `n_bins` nearly equal groups.
pub fn adaptive_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_inputs(confidences, correct, n_bins)?;
    let n = confidences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    let groups: Vec<Vec<usize>> = (0..n_bins)
        .map(|b| order[b * n / n_bins..(b + 1) * n / n_bins].to_vec())
        .filter(|g| !g.is_empty())
        .collect();
    let edges: Vec<(f64, f64)> = groups
        .iter()
        .map(|g| (confidences[g[0]], confidences[*g.last().unwrap()]))
        .collect();
    Ok(summarize(&groups, &edges, confidences, correct))
}

pub fn adaptive_ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = adaptive_bins(confidences, correct, n_bins)?;
    Ok(weighted_gap(&bins, confidences.len()))
}

fn check_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Metric("no predictions to score".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::input("probability vectors and labels differ in length"));
    }
    for (p, &y) in probs.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::input("label index outside the probability vector"));
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::input("probability vector does not sum to 1"));
        }
    }
    Ok(())
}

/// Mean negative log probability of the true class, floored at 1e-12.
pub fn nll(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_probs(probs, labels)?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / probs.len() as f64)
}

/// Mean squared distance between probability vector and one-hot truth.
pub fn brier(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_probs(probs, labels)?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(k, v)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (v - t) * (v - t)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub coverage: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub theta: f64,
    pub count: usize,
    pub coverage: f64,
    /// Error rate among retained predictions; `None` when nothing is retained.
    pub risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverage {
    pub curve: Vec<CoveragePoint>,
    pub aurc: f64,
    pub auacc: f64,
    pub thresholds: Vec<ThresholdRow>,
}

/// Risk-coverage curve from most to least confident prediction.
///
/// Integrals use the trapezoid rule over the realized coverage grid
/// `1/N, 2/N, ..., 1`, with the curve held at its first value on `(0, 1/N]`
/// so both areas cover the whole unit interval and sum to exactly 1.
pub fn risk_coverage(confidences: &[f64], correct: &[bool]) -> Result<RiskCoverage> {
    check_inputs(confidences, correct, 1)?;
    let n = confidences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));

    let mut curve = Vec::with_capacity(n);
    let mut errors = 0usize;
    for (k, &i) in order.iter().enumerate() {
        if !correct[i] {
            errors += 1;
        }
        curve.push(CoveragePoint {
            coverage: (k + 1) as f64 / n as f64,
            risk: errors as f64 / (k + 1) as f64,
        });
    }
    let integrate = |f: &dyn Fn(&CoveragePoint) -> f64| {
        let mut area = curve[0].coverage * f(&curve[0]);
        for w in curve.windows(2) {
            area += (w[1].coverage - w[0].coverage) * 0.5 * (f(&w[0]) + f(&w[1]));
        }
        area
    };
    let aurc = integrate(&|p| p.risk);
    let auacc = integrate(&|p| 1.0 - p.risk);

    let thresholds = COVERAGE_THRESHOLDS
        .iter()
        .map(|&theta| {
            let kept: Vec<usize> = (0..n).filter(|&i| confidences[i] >= theta).collect();
            let wrong = kept.iter().filter(|&&i| !correct[i]).count();
            ThresholdRow {
                theta,
                count: kept.len(),
                coverage: kept.len() as f64 / n as f64,
                risk: (!kept.is_empty()).then(|| wrong as f64 / kept.len() as f64),
            }
        })
        .collect();
    Ok(RiskCoverage { curve, aurc, auacc, thresholds })
}

/// One system's output on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: FaultClass,
    /// `None` when the system abstained.
    pub label: Option<FaultClass>,
    /// Final confidence; 0 for abstentions.
    pub confidence: f64,
    /// Probability vector over [`FaultClass::ALL`].
    pub probs: [f64; FaultClass::COUNT],
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.label == Some(self.truth)
    }

    /// Probability vector for an abstention: uniform.
    pub fn abstained(truth: FaultClass) -> Self {
        Prediction {
            truth,
            label: None,
            confidence: 0.0,
            probs: [1.0 / FaultClass::COUNT as f64; FaultClass::COUNT],
        }
    }

    /// A hard decision at confidence `c`: `c` on the label, the rest spread
    /// evenly over the other classes.
    pub fn decided(truth: FaultClass, label: FaultClass, confidence: f64) -> Self {
        let rest = (1.0 - confidence) / (FaultClass::COUNT - 1) as f64;
        let mut probs = [rest; FaultClass::COUNT];
        probs[label.index()] = confidence;
        Prediction { truth, label: Some(label), confidence, probs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: FaultClass,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub n: usize,
    /// Correct predictions over all cases; abstentions count as not correct.
    pub accuracy: f64,
    pub abstention_rate: f64,
    /// Accuracy over the cases that were not abstained; `None` if all were.
    pub selective_accuracy: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// Over non-abstained cases; `None` if all were abstained.
    pub ece: Option<f64>,
    pub adaptive_ece: Option<f64>,
    /// Over all cases, abstentions as uniform vectors.
    pub nll: f64,
    pub brier: f64,
    /// Over all cases, abstentions at confidence 0 and counted as errors.
    pub aurc: f64,
    pub auacc: f64,
    pub reliability: Vec<ReliabilityBin>,
    pub risk_coverage: Vec<CoveragePoint>,
    pub thresholds: Vec<ThresholdRow>,
}

/// Per-class metrics one-vs-rest over non-abstained predictions. Undefined
/// ratios (no predictions or no support) are reported as 0.
pub fn per_class_metrics(preds: &[Prediction]) -> Vec<ClassMetrics> {
    let decided: Vec<&Prediction> = preds.iter().filter(|p| p.label.is_some()).collect();
    FaultClass::ALL
        .iter()
        .map(|&class| {
            let tp = decided.iter().filter(|p| p.label == Some(class) && p.truth == class).count();
            let predicted = decided.iter().filter(|p| p.label == Some(class)).count();
            let support = decided.iter().filter(|p| p.truth == class).count();
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics { class, support, precision, recall, f1 }
        })
        .collect()
}

pub fn evaluate(system: &str, preds: &[Prediction], n_bins: usize) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Metric(format!("{system}: no predictions")));
    }
    let n = preds.len();
    let correct: Vec<bool> = preds.iter().map(Prediction::is_correct).collect();
    let confidences: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    let decided: Vec<usize> = (0..n).filter(|&i| preds[i].label.is_some()).collect();
    let d_conf: Vec<f64> = decided.iter().map(|&i| confidences[i]).collect();
    let d_correct: Vec<bool> = decided.iter().map(|&i| correct[i]).collect();

    let (ece_v, aece_v, reliability) = if decided.is_empty() {
        (None, None, Vec::new())
    } else {
        (
            Some(ece(&d_conf, &d_correct, n_bins)?),
            Some(adaptive_ece(&d_conf, &d_correct, n_bins)?),
            reliability_bins(&d_conf, &d_correct, n_bins)?,
        )
    };
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probs.to_vec()).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.truth.index()).collect();
    let rc = risk_coverage(&confidences, &correct)?;
    let n_correct = correct.iter().filter(|&&c| c).count();

    Ok(EvalReport {
        system: system.to_string(),
        n,
        accuracy: n_correct as f64 / n as f64,
        abstention_rate: (n - decided.len()) as f64 / n as f64,
        selective_accuracy: (!decided.is_empty())
            .then(|| d_correct.iter().filter(|&&c| c).count() as f64 / decided.len() as f64),
        per_class: per_class_metrics(preds),
        ece: ece_v,
        adaptive_ece: aece_v,
        nll: nll(&probs, &labels)?,
        brier: brier(&probs, &labels)?,
        aurc: rc.aurc,
        auacc: rc.auacc,
        reliability,
        risk_coverage: rc.curve,
        thresholds: rc.thresholds,
    })
}
