//! Naive Bayes diagnostic engine.
//!
//! Continuous features use class-conditional Gaussians fitted by maximum
//! likelihood; features listed in [`BayesConfig::discretized`] are binned into
//! equal-width intervals over the training range and use Laplace-smoothed
//! frequency tables:
//!
//! ```text
//! P(bin j | class m) = (N(m, j) + alpha) / (N(m) + alpha * J)
//! ```
//!
//! Inference runs in log space and is normalized with log-sum-exp. The
//! unnormalized log posteriors are kept as `log_scores`; calibration treats
//! them as logits.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::class::FaultClass;
use crate::dsp::{FeatureVector, FEATURE_NAMES};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "faultarb-naive-bayes";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    pub alpha: f64,
    /// Bin count `J` for discretized features.
    pub bins: usize,
    /// Names of features that take the discrete (binned) path.
    pub discretized: Vec<String>,
    /// Per-feature variance floor as a fraction of that feature's global variance.
    pub variance_floor_ratio: f64,
    pub variance_floor_min: f64,
    /// Replaces the empirical class frequencies. Renormalized to sum to 1.
    pub prior_override: Option<BTreeMap<FaultClass, f64>>,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            alpha: 1.0,
            bins: 10,
            discretized: Vec::new(),
            variance_floor_ratio: 1e-6,
            variance_floor_min: 1e-12,
            prior_override: None,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha must be finite and >= 0"));
        }
        if self.bins < 1 {
            return Err(Error::config("bins must be >= 1"));
        }
        if !(self.variance_floor_ratio >= 0.0) || !(self.variance_floor_min > 0.0) {
            return Err(Error::config(
                "variance_floor_ratio must be >= 0 and variance_floor_min > 0",
            ));
        }
        if let Some(p) = &self.prior_override {
            if p.values().any(|v| !(*v >= 0.0) || !v.is_finite()) || p.values().sum::<f64>() <= 0.0
            {
                return Err(Error::config("prior override must be nonnegative with positive sum"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureModel {
    Gaussian {
        /// Indexed by class.
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    Discrete {
        /// `J + 1` equal-width edges over the training range.
        edges: Vec<f64>,
        /// `probs[class][bin]`.
        probs: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    /// Canonical order.
    pub classes: Vec<FaultClass>,
    pub priors: Vec<f64>,
    pub features: Vec<FeatureModel>,
    pub alpha: f64,
    pub bins: usize,
    /// Per-feature variance floor actually applied.
    pub variance_floor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub label: FaultClass,
    pub confidence: f64,
    pub classes: Vec<FaultClass>,
    pub posteriors: Vec<f64>,
    pub log_scores: Vec<f64>,
}

impl Diagnosis {
    /// Posteriors laid out over [`FaultClass::ALL`]; absent classes get 0.
    pub fn full_posteriors(&self) -> [f64; FaultClass::COUNT] {
        let mut out = [0.0; FaultClass::COUNT];
        for (c, p) in self.classes.iter().zip(&self.posteriors) {
            out[c.index()] = *p;
        }
        out
    }

    /// Log scores over [`FaultClass::ALL`]; absent classes get `-inf`.
    pub fn full_log_scores(&self) -> [f64; FaultClass::COUNT] {
        let mut out = [f64::NEG_INFINITY; FaultClass::COUNT];
        for (c, s) in self.classes.iter().zip(&self.log_scores) {
            out[c.index()] = *s;
        }
        out
    }
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let j = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[j]);
    if !(hi > lo) {
        return 0;
    }
    let idx = ((v - lo) / (hi - lo) * j as f64).floor();
    (idx.max(0.0) as usize).min(j - 1)
}

fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// `log(sum(exp(v)))`, stable; `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// First index of the maximum (ties resolve to the lowest index).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl NaiveBayesModel {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[FaultClass],
        feature_names: &[&str],
        cfg: &BayesConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if x.len() != y.len() {
            return Err(Error::input(format!(
                "{} feature rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        let d = feature_names.len();
        if let Some(i) = x.iter().position(|r| r.len() != d) {
            return Err(Error::input(format!("row {i} does not have {d} features")));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("training features must be finite"));
        }
        for name in &cfg.discretized {
            if !feature_names.contains(&name.as_str()) {
                return Err(Error::config(format!("unknown discretized feature `{name}`")));
            }
        }

        let mut classes: Vec<FaultClass> = y.to_vec();
        classes.sort();
        classes.dedup();
        let members: Vec<Vec<usize>> = classes
            .iter()
            .map(|c| (0..y.len()).filter(|&i| y[i] == *c).collect())
            .collect();
        for (c, m) in classes.iter().zip(&members) {
            if m.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "class {c} has {} training samples, need at least 2",
                    m.len()
                )));
            }
        }

        let priors: Vec<f64> = match &cfg.prior_override {
            Some(map) => {
                let raw: Vec<f64> = classes
                    .iter()
                    .map(|c| map.get(c).copied().unwrap_or(0.0))
                    .collect();
                let total: f64 = raw.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::config("prior override gives zero mass to every class"));
                }
                raw.iter().map(|p| p / total).collect()
            }
            None => members
                .iter()
                .map(|m| m.len() as f64 / y.len() as f64)
                .collect(),
        };

        let n = x.len() as f64;
        let mut features = Vec::with_capacity(d);
        let mut variance_floor = Vec::with_capacity(d);
        for (f, name) in feature_names.iter().enumerate() {
            let col: Vec<f64> = x.iter().map(|r| r[f]).collect();
            let gmean = col.iter().sum::<f64>() / n;
            let gvar = col.iter().map(|v| (v - gmean).powi(2)).sum::<f64>() / n;
            let floor = (cfg.variance_floor_ratio * gvar).max(cfg.variance_floor_min);
            variance_floor.push(floor);

            if cfg.discretized.iter().any(|s| s == name) {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let j = cfg.bins;
                let edges: Vec<f64> = (0..=j)
                    .map(|k| if k == j { hi } else { lo + (hi - lo) * k as f64 / j as f64 })
                    .collect();
                let probs = members
                    .iter()
                    .map(|m| {
                        let mut counts = vec![0usize; j];
                        for &i in m {
                            counts[bin_index(&edges, col[i])] += 1;
                        }
                        let denom = m.len() as f64 + cfg.alpha * j as f64;
                        counts
                            .iter()
                            .map(|&c| (c as f64 + cfg.alpha) / denom)
                            .collect()
                    })
                    .collect();
                features.push(FeatureModel::Discrete { edges, probs });
            } else {
                let mut means = Vec::with_capacity(classes.len());
                let mut variances = Vec::with_capacity(classes.len());
                for m in &members {
                    let k = m.len() as f64;
                    let mu = m.iter().map(|&i| col[i]).sum::<f64>() / k;
                    let var = m.iter().map(|&i| (col[i] - mu).powi(2)).sum::<f64>() / k;
                    means.push(mu);
                    variances.push(var.max(floor));
                }
                features.push(FeatureModel::Gaussian { means, variances });
            }
        }

        Ok(NaiveBayesModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
            classes,
            priors,
            features,
            alpha: cfg.alpha,
            bins: cfg.bins,
            variance_floor,
        })
    }

    /// Fits on the 13-feature vectors.
    pub fn fit_features(data: &[(FeatureVector, FaultClass)], cfg: &BayesConfig) -> Result<Self> {
        let x: Vec<Vec<f64>> = data.iter().map(|(f, _)| f.to_array().to_vec()).collect();
        let y: Vec<FaultClass> = data.iter().map(|(_, c)| *c).collect();
        Self::fit(&x, &y, &FEATURE_NAMES, cfg)
    }

    /// Unnormalized log posteriors, one per class.
    pub fn log_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_names.len() {
            return Err(Error::input(format!(
                "expected {} features, got {}",
                self.feature_names.len(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "feature `{}` is not finite",
                self.feature_names[i]
            )));
        }
        Ok((0..self.classes.len())
            .map(|c| {
                let mut s = self.priors[c].ln();
                for (fm, &v) in self.features.iter().zip(x) {
                    s += match fm {
                        FeatureModel::Gaussian { means, variances } => {
                            gaussian_log_pdf(v, means[c], variances[c])
                        }
                        FeatureModel::Discrete { edges, probs } => {
                            probs[c][bin_index(edges, v)].ln()
                        }
                    };
                }
                s
            })
            .collect())
    }

    /// Normalized posteriors and the raw log scores.
    pub fn posterior(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let scores = self.log_scores(x)?;
        let lse = log_sum_exp(&scores);
        if !lse.is_finite() {
            return Err(Error::input(
                "observation has zero likelihood under every class",
            ));
        }
        let post = scores.iter().map(|s| (s - lse).exp()).collect();
        Ok((post, scores))
    }

    pub fn diagnose(&self, x: &[f64]) -> Result<Diagnosis> {
        let (posteriors, log_scores) = self.posterior(x)?;
        let best = argmax(&posteriors);
        Ok(Diagnosis {
            label: self.classes[best],
            confidence: posteriors[best],
            classes: self.classes.clone(),
            posteriors,
            log_scores,
        })
    }

    pub fn diagnose_features(&self, f: &FeatureVector) -> Result<Diagnosis> {
        self.diagnose(&f.to_array())
    }

    /// Conditional probability table of a discretized feature.
    pub fn discrete_table(&self, feature: &str) -> Option<&Vec<Vec<f64>>> {
        let i = self.feature_names.iter().position(|n| n == feature)?;
        match &self.features[i] {
            FeatureModel::Discrete { probs, .. } => Some(probs),
            FeatureModel::Gaussian { .. } => None,
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let m: NaiveBayesModel = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::input(format!(
                "unsupported model format {} v{}",
                m.format, m.version
            )));
        }
        let k = m.classes.len();
        let consistent = m.priors.len() == k
            && (m.priors.iter().sum::<f64>() - 1.0).abs() < 1e-9
            && m.features.len() == m.feature_names.len()
            && m.features.iter().all(|f| match f {
                FeatureModel::Gaussian { means, variances } => {
                    means.len() == k && variances.len() == k && variances.iter().all(|v| *v > 0.0)
                }
                FeatureModel::Discrete { edges, probs } => {
                    edges.len() >= 2
                        && probs.len() == k
                        && probs.iter().all(|row| {
                            row.len() == edges.len() - 1
                                && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
                        })
                }
            });
        if !consistent {
            return Err(Error::input("model parameters are inconsistent"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FaultClass::*;

    #[test]
    fn degenerate_variance_hits_floor() {
        let x = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        let y = [Normal, Normal, Imbalance, Imbalance];
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()).unwrap();
        let FeatureModel::Gaussian { means, variances } = &m.features[0] else {
            panic!()
        };
        // canonical order puts imbalance first
        assert_eq!(m.classes, vec![Imbalance, Normal]);
        assert_eq!(means, &vec![10.0, 0.0]);
        let floor = 1e-6 * 25.0;
        assert!(variances.iter().all(|v| (*v - floor).abs() < 1e-18));
    }

    #[test]
    fn balanced_priors_are_uniform() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, c) in FaultClass::ALL.iter().enumerate() {
            for j in 0..3 {
                x.push(vec![i as f64 + j as f64 * 0.1]);
                y.push(*c);
            }
        }
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()).unwrap();
        for p in &m.priors {
            assert!((p - 1.0 / 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn laplace_smoothing_hand_case() {
        // 10 normal samples all in the top bin, none in the bottom one, J = 4
        let mut x: Vec<Vec<f64>> = (0..10).map(|_| vec![3.9]).collect();
        let mut y = vec![Normal; 10];
        x.push(vec![0.0]);
        x.push(vec![4.0]);
        y.push(Looseness);
        y.push(Looseness);
        let cfg = BayesConfig {
            alpha: 1.0,
            bins: 4,
            discretized: vec!["v".into()],
            ..Default::default()
        };
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &cfg).unwrap();
        let table = m.discrete_table("v").unwrap();
        let normal_row = &table[m.classes.iter().position(|c| *c == Normal).unwrap()];
        assert_eq!(normal_row[0], 1.0 / 14.0);
        assert_eq!(normal_row[3], 11.0 / 14.0);
    }

    #[test]
    fn insufficient_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = [Normal, Normal, Cavitation];
        assert!(matches!(
            NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn symmetric_query_gives_uniform_posterior_and_first_class_wins() {
        // every class has the same mean and variance
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in FaultClass::ALL {
            x.push(vec![-1.0]);
            x.push(vec![1.0]);
            y.push(c);
            y.push(c);
        }
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()).unwrap();
        let d = m.diagnose(&[0.0]).unwrap();
        for p in &d.posteriors {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
        assert_eq!(d.label, BearingDamage);
    }

    #[test]
    fn separated_gaussians() {
        let x = vec![vec![-1.0], vec![1.0], vec![9.0], vec![11.0]];
        let y = [Normal, Normal, Misalignment, Misalignment];
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()).unwrap();
        let d = m.diagnose(&[0.0]).unwrap();
        assert_eq!(d.label, Normal);
        // closed form: 1 / (1 + exp(-50))
        let expected = 1.0 / (1.0 + (-50.0f64).exp());
        assert!((d.confidence - expected).abs() < 1e-12);
        assert!(d.confidence > 0.999);
    }

    #[test]
    fn prior_override_is_normalized() {
        let x = vec![vec![-1.0], vec![1.0], vec![9.0], vec![11.0]];
        let y = [Normal, Normal, Misalignment, Misalignment];
        let cfg = BayesConfig {
            prior_override: Some([(Normal, 9.0), (Misalignment, 1.0)].into_iter().collect()),
            ..Default::default()
        };
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &cfg).unwrap();
        assert_eq!(m.priors, vec![0.1, 0.9]);
    }

    #[test]
    fn non_finite_query_is_rejected() {
        let x = vec![vec![-1.0], vec![1.0], vec![9.0], vec![11.0]];
        let y = [Normal, Normal, Misalignment, Misalignment];
        let m = NaiveBayesModel::fit(&x, &y, &["v"], &BayesConfig::default()).unwrap();
        assert!(matches!(m.diagnose(&[f64::NAN]), Err(Error::Input(_))));
        assert!(m.diagnose(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let x = vec![vec![0.1, 3.0], vec![0.7, 2.0], vec![9.3, 1.0], vec![11.1, 0.5]];
        let y = [Normal, Normal, Misalignment, Misalignment];
        let cfg = BayesConfig { discretized: vec!["b".into()], bins: 3, ..Default::default() };
        let m = NaiveBayesModel::fit(&x, &y, &["a", "b"], &cfg).unwrap();
        let back = NaiveBayesModel::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(NaiveBayesModel::from_text("{}").is_err());
    }
}
