use serde::{Deserialize, Serialize};

use crate::arbiter::{Arbiter, BackendKind};
use crate::bayes::NaiveBayesModel;
use crate::calibration::{evaluate, risk_coverage, CalibrationBundle, EvalReport, Prediction};
use crate::chart::{render_panel, ChartPanel};
use crate::dsp::extract_all;
use crate::error::{Error, Result};
use crate::synth::{synthesize_dataset, Dataset, Split};

use super::config::RunConfig;
use super::pipeline::{
    arbitrate_rows, diagnose_rows, evaluate_split, extract_dataset, fit_calibration, hcaa_outcome,
    outcome_prediction, train_model, ArbiterRow, Evaluation, FeatureRow, RuleRow, SYSTEMS,
};

/// Mean and sample standard deviation over repeats (0 for one repeat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }

    /// `"95.7 ± 0.8"` at the given precision, after multiplying by `scale`.
    pub fn format(&self, decimals: usize, scale: f64) -> String {
        let f = |v: f64| {
            let s = format!("{v:.decimals$}");
            // "-0.000" reads as a sign error
            match s.strip_prefix('-') {
                Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
                _ => s,
            }
        };
        format!("{} ± {}", f(self.mean * scale), f(self.std * scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub accuracy: Stat,
    pub abstention_rate: Stat,
    pub selective_accuracy: Option<Stat>,
    pub ece: Option<Stat>,
    pub adaptive_ece: Option<Stat>,
    pub nll: Stat,
    pub brier: Stat,
    pub aurc: Stat,
    pub auacc: Stat,
}

impl SystemSummary {
    pub fn from_runs(system: &str, reports: &[&EvalReport]) -> Self {
        let stat = |f: &dyn Fn(&EvalReport) -> f64| {
            Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("at least one run")
        };
        let opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            Stat::of(&reports.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        SystemSummary {
            system: system.to_string(),
            accuracy: stat(&|r| r.accuracy),
            abstention_rate: stat(&|r| r.abstention_rate),
            selective_accuracy: opt(&|r| r.selective_accuracy),
            ece: opt(&|r| r.ece),
            adaptive_ece: opt(&|r| r.adaptive_ece),
            nll: stat(&|r| r.nll),
            brier: stat(&|r| r.brier),
            aurc: stat(&|r| r.aurc),
            auacc: stat(&|r| r.auacc),
        }
    }
}

/// Three-system comparison over one or more dataset seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub backend: BackendKind,
    pub seeds: Vec<u64>,
    pub theta: f64,
    pub delta: f64,
    pub n_bins: usize,
    /// Test cases per run.
    pub test_counts: Vec<usize>,
    /// In [`SYSTEMS`] order.
    pub summaries: Vec<SystemSummary>,
    /// `runs[i]` holds the three reports of seed `seeds[i]`.
    pub runs: Vec<Vec<EvalReport>>,
    /// Reports over the test predictions of all runs pooled together.
    pub pooled: Vec<EvalReport>,
    /// Calibration temperature fitted in each run.
    pub temperatures: Vec<f64>,
}

impl ComparisonReport {
    pub fn build(
        backend: BackendKind,
        cfg: &RunConfig,
        seeds: Vec<u64>,
        runs: Vec<(Evaluation, f64)>,
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Metric("no runs to summarize".into()));
        }
        let n_bins = cfg.calibration.n_bins;
        let summaries = SYSTEMS
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let reps: Vec<&EvalReport> = runs.iter().map(|(e, _)| &e.reports[k]).collect();
                SystemSummary::from_runs(name, &reps)
            })
            .collect();
        let pooled = SYSTEMS
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let all: Vec<Prediction> =
                    runs.iter().flat_map(|(e, _)| e.predictions[k].iter().cloned()).collect();
                evaluate(name, &all, n_bins)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComparisonReport {
            backend,
            seeds,
            theta: cfg.arbitration.theta,
            delta: cfg.arbitration.delta,
            n_bins,
            test_counts: runs.iter().map(|(e, _)| e.predictions[0].len()).collect(),
            summaries,
            pooled,
            temperatures: runs.iter().map(|(_, t)| *t).collect(),
            runs: runs.into_iter().map(|(e, _)| e.reports).collect(),
        })
    }

    pub fn summary(&self, system: &str) -> Option<&SystemSummary> {
        self.summaries.iter().find(|s| s.system == system)
    }

    pub fn pooled(&self, system: &str) -> Option<&EvalReport> {
        self.pooled.iter().find(|s| s.system == system)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Artifacts of one end-to-end run on one dataset seed.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub seed: u64,
    pub dataset: Dataset,
    pub features: Vec<FeatureRow>,
    pub model: NaiveBayesModel,
    pub rules: Vec<RuleRow>,
    /// Validation and test cases only.
    pub arbiter_rows: Vec<ArbiterRow>,
    pub bundle: CalibrationBundle,
    pub evaluation: Evaluation,
}

/// Chart panel for a dataset sample, regenerated from its seed.
pub fn dataset_panel(ds: &Dataset, cfg: &RunConfig, sample_id: &str) -> Result<Vec<u8>> {
    let entry = ds
        .entries
        .iter()
        .find(|e| e.sample_id == sample_id)
        .ok_or_else(|| Error::input(format!("unknown sample {sample_id}")))?;
    let sig = ds.signal(entry)?;
    let ex = extract_all(&sig, &cfg.features)?;
    Ok(render_panel(&ChartPanel::from_extraction(sample_id, &sig, &ex, &cfg.chart), &cfg.chart)?.png)
}

/// Synthesizes the dataset for `seed` and runs every stage in memory.
pub fn run_once(cfg: &RunConfig, seed: u64, arbiter: &Arbiter) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dataset = synthesize_dataset(&cfg.dataset_spec(seed), &cfg.synth)?;
    let features = extract_dataset(&dataset, &cfg.features)?;
    let model = train_model(&features, &cfg.bayes)?;
    let rules = diagnose_rows(&model, &features)?;

    let picked: Vec<usize> = (0..features.len()).filter(|&i| features[i].split != Split::Train).collect();
    let rows: Vec<&FeatureRow> = picked.iter().map(|&i| &features[i]).collect();
    let rule_refs: Vec<&RuleRow> = picked.iter().map(|&i| &rules[i]).collect();
    let panel = |row: &FeatureRow| -> Result<Option<Vec<u8>>> {
        if arbiter.is_oracle() {
            Ok(None)
        } else {
            dataset_panel(&dataset, cfg, &row.sample_id).map(Some)
        }
    };
    let arbiter_rows: Vec<ArbiterRow> = arbitrate_rows(arbiter, &cfg.arbitration, &rows, &rule_refs, &panel)?
        .into_iter()
        .map(|(row, _)| row)
        .collect();
    let bundle = fit_calibration(&rules, &arbiter_rows)?;
    let evaluation = evaluate_split(
        &features,
        &rules,
        &arbiter_rows,
        &bundle,
        Split::Test,
        cfg.arbitration.theta,
        cfg.arbitration.delta,
        cfg.calibration.n_bins,
    )?;
    Ok(RunArtifacts {
        seed,
        dataset,
        features,
        model,
        rules,
        arbiter_rows,
        bundle,
        evaluation,
    })
}

/// Repeats [`run_once`] for seeds `cfg.seed .. cfg.seed + cfg.repeats`, each
/// on a freshly synthesized dataset, and summarizes mean ± std per system.
/// `progress` is called after each run.
pub fn run_experiment(
    cfg: &RunConfig,
    arbiter: &Arbiter,
    mut progress: impl FnMut(usize, &RunArtifacts),
) -> Result<ComparisonReport> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    let mut seeds = Vec::with_capacity(cfg.repeats);
    for i in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(i as u64);
        let art = run_once(cfg, seed, arbiter)?;
        progress(i, &art);
        seeds.push(seed);
        runs.push((art.evaluation, art.bundle.temperature.t));
    }
    ComparisonReport::build(cfg.arbitration.backend, cfg, seeds, runs)
}

pub const SWEEP_THETAS: [f64; 14] = [
    0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];
pub const SWEEP_DELTAS: [f64; 11] = [0.00, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub delta: f64,
    pub accuracy: f64,
    pub abstention_rate: f64,
    pub aurc: f64,
    pub auacc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Highest AUACC; ties keep the earliest grid point (smaller θ, then Δ).
    pub best: SweepRow,
}

/// Grid search over (θ, Δ) on the validation split, scoring the calibrated
/// system by AUACC.
pub fn sweep(
    rules: &[RuleRow],
    arbs: &[ArbiterRow],
    bundle: &CalibrationBundle,
    thetas: &[f64],
    deltas: &[f64],
) -> Result<SweepResult> {
    let by_id: std::collections::BTreeMap<&str, &ArbiterRow> =
        arbs.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    let cases: Vec<(&RuleRow, &ArbiterRow)> = rules
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| {
            by_id
                .get(r.sample_id.as_str())
                .map(|a| (r, *a))
                .ok_or_else(|| Error::missing("arbitration", format!("no arbiter row for {}", r.sample_id)))
        })
        .collect::<Result<_>>()?;
    if cases.is_empty() {
        return Err(Error::missing("val", "no validation cases to sweep on"));
    }
    let mut rows = Vec::with_capacity(thetas.len() * deltas.len());
    for &theta in thetas {
        for &delta in deltas {
            let preds: Vec<Prediction> = cases
                .iter()
                .map(|(r, a)| outcome_prediction(r.truth, &hcaa_outcome(r, a, Some(bundle), theta, delta)))
                .collect();
            let conf: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
            let correct: Vec<bool> = preds.iter().map(Prediction::is_correct).collect();
            let rc = risk_coverage(&conf, &correct)?;
            let n = preds.len() as f64;
            rows.push(SweepRow {
                theta,
                delta,
                accuracy: correct.iter().filter(|&&c| c).count() as f64 / n,
                abstention_rate: preds.iter().filter(|p| p.label.is_none()).count() as f64 / n,
                aurc: rc.aurc,
                auacc: rc.auacc,
            });
        }
    }
    let best = *rows
        .iter()
        .reduce(|b, r| if r.auacc > b.auacc { r } else { b })
        .ok_or_else(|| Error::config("sweep grid is empty"))?;
    Ok(SweepResult { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_formats_mean_and_std() {
        let s = Stat::of(&[0.95, 0.96]).unwrap();
        assert_eq!(s.format(1, 100.0), "95.5 ± 0.7");
        assert_eq!(Stat::of(&[0.5]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
        assert_eq!(Stat { mean: -1e-17, std: 0.0 }.format(3, 1.0), "0.000 ± 0.000");
    }

    #[test]
    fn small_experiment_runs_end_to_end() {
        let mut cfg = RunConfig::default();
        cfg.dataset.per_class = 20;
        cfg.repeats = 2;
        let arbiter = Arbiter::from_config(&cfg.arbitration).unwrap();
        let mut calls = 0;
        let rep = run_experiment(&cfg, &arbiter, |_, _| calls += 1).unwrap();
        assert_eq!(calls, 2);
        assert_eq!(rep.seeds, vec![0, 1]);
        assert_eq!(rep.test_counts, vec![14, 14]);
        assert_eq!(rep.summaries.len(), 3);
        for r in rep.runs.iter().flatten() {
            assert!((r.aurc + r.auacc - 1.0).abs() < 1e-9);
        }
        assert_eq!(ComparisonReport::from_text(&rep.to_text()).unwrap(), rep);
    }
}
