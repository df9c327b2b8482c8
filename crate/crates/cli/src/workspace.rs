//! Pipeline stages over an output directory. Each stage reads the artifacts
//! of earlier stages (producing any that are missing, except the dataset)
//! and removes the now-stale artifacts of later stages.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use faultarb_core::arbiter::{Arbiter, BackendKind};
use faultarb_core::bayes::NaiveBayesModel;
use faultarb_core::calibration::CalibrationBundle;
use faultarb_core::chart::{render_panel, ChartPanel};
use faultarb_core::dsp::extract_all;
use faultarb_core::harness::store::{
    read_arbitration, read_diagnoses, read_features, read_signal, read_text, write_arbitration,
    write_case_records, write_diagnoses, write_features, write_rows, write_signal, write_text,
    Manifest, ManifestRow,
};
use faultarb_core::harness::{
    arbitrate_rows, case_report, diagnose_rows, evaluate_split, extract_signals, fit_calibration,
    run_experiment, sweep, train_model, verdict_transcript, write_report, ArbiterRow, CaseRecord,
    ComparisonReport, FeatureRow, RuleRow, RunConfig, SweepResult, SWEEP_DELTAS, SWEEP_THETAS,
};
use faultarb_core::synth::{synthesize_dataset, Split};
use faultarb_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Synth,
    Extract,
    Train,
    Diagnose,
    Arbitrate,
    Calibrate,
    Evaluate,
    Report,
}

const STAGES: [Stage; 8] = [
    Stage::Synth,
    Stage::Extract,
    Stage::Train,
    Stage::Diagnose,
    Stage::Arbitrate,
    Stage::Calibrate,
    Stage::Evaluate,
    Stage::Report,
];

pub struct Workspace {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

fn rel(p: &Path, base: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

impl Workspace {
    pub fn new(cfg: RunConfig) -> Self {
        let out = cfg.out_dir.clone();
        Workspace { cfg, out }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("dataset").join("manifest.csv")
    }
    pub fn features_path(&self) -> PathBuf {
        self.out.join("features.csv")
    }
    pub fn model_path(&self) -> PathBuf {
        self.out.join("model.json")
    }
    pub fn diagnoses_path(&self) -> PathBuf {
        self.out.join("diagnoses.csv")
    }
    pub fn arbitration_path(&self) -> PathBuf {
        self.out.join("arbitration.csv")
    }
    pub fn cases_dir(&self) -> PathBuf {
        self.out.join("cases")
    }
    pub fn bundle_path(&self) -> PathBuf {
        self.out.join("calibration.json")
    }
    pub fn evaluation_dir(&self) -> PathBuf {
        self.out.join("evaluation")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
    pub fn sweep_path(&self) -> PathBuf {
        self.out.join("sweep.csv")
    }
    pub fn experiment_dir(&self) -> PathBuf {
        self.out.join("experiment")
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Synth => vec![self.out.join("dataset")],
            Stage::Extract => vec![self.features_path()],
            Stage::Train => vec![self.model_path()],
            Stage::Diagnose => vec![self.diagnoses_path()],
            Stage::Arbitrate => vec![self.arbitration_path(), self.cases_dir()],
            Stage::Calibrate => vec![self.bundle_path(), self.sweep_path()],
            Stage::Evaluate => vec![self.evaluation_dir()],
            Stage::Report => vec![self.report_dir()],
        }
    }

    /// Removes artifacts of every stage after `stage`.
    fn invalidate_after(&self, stage: Stage) -> Result<()> {
        for later in STAGES.iter().filter(|s| **s > stage) {
            for p in self.outputs(*later) {
                let res = if p.is_dir() {
                    std::fs::remove_dir_all(&p)
                } else if p.is_file() {
                    std::fs::remove_file(&p)
                } else {
                    Ok(())
                };
                res.map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    fn mkdir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    pub fn synth(&self) -> Result<Manifest> {
        let spec = self.cfg.dataset_spec(self.cfg.seed);
        let ds = synthesize_dataset(&spec, &self.cfg.synth)?;
        let dir = self.out.join("dataset");
        let signals = dir.join("signals");
        if signals.is_dir() {
            std::fs::remove_dir_all(&signals).map_err(|e| Error::io(&signals, e))?;
        }
        self.mkdir(&signals)?;
        self.invalidate_after(Stage::Synth)?;
        let rows: Vec<ManifestRow> = ds
            .entries
            .par_iter()
            .map(|e| {
                let sig = ds.signal(e)?;
                let path = signals.join(format!("{}.sig", e.sample_id));
                write_signal(&path, &sig)?;
                Ok(ManifestRow {
                    sample_id: e.sample_id.clone(),
                    class: e.class,
                    severity: e.severity,
                    split: e.split,
                    path: rel(&path, &dir),
                    shaft_freq: sig.shaft_freq,
                    sample_rate: sig.sample_rate,
                    seed: e.seed,
                })
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest { dir, rows };
        manifest.save(&self.manifest_path())?;
        log(format!(
            "synth: {} samples ({} train, {} val, {} test) -> {}",
            ds.entries.len(),
            ds.count(Split::Train),
            ds.count(Split::Val),
            ds.count(Split::Test),
            self.manifest_path().display()
        ));
        Ok(manifest)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        if !path.is_file() {
            return Err(Error::missing(path, "no dataset; run `synth` first"));
        }
        Manifest::load(&path)
    }

    pub fn extract(&self) -> Result<Vec<FeatureRow>> {
        let manifest = self.manifest()?;
        let rows = extract_signals(&manifest.rows, &self.cfg.features, |r| {
            let sig = read_signal(&manifest.signal_path(r), &r.sample_id)?;
            Ok((sig, r.class, r.split, r.severity))
        })?;
        write_features(&self.features_path(), &rows)?;
        self.invalidate_after(Stage::Extract)?;
        log(format!("extract: {} feature rows -> {}", rows.len(), self.features_path().display()));
        Ok(rows)
    }

    pub fn features(&self) -> Result<Vec<FeatureRow>> {
        if self.features_path().is_file() {
            read_features(&self.features_path())
        } else {
            self.extract()
        }
    }

    pub fn train(&self) -> Result<NaiveBayesModel> {
        let rows = self.features()?;
        let model = train_model(&rows, &self.cfg.bayes)?;
        write_text(&self.model_path(), &model.to_text())?;
        self.invalidate_after(Stage::Train)?;
        log(format!("train: model -> {}", self.model_path().display()));
        Ok(model)
    }

    pub fn model(&self) -> Result<NaiveBayesModel> {
        if self.model_path().is_file() {
            NaiveBayesModel::from_text(&read_text(&self.model_path())?)
        } else {
            self.train()
        }
    }

    pub fn diagnose(&self) -> Result<Vec<RuleRow>> {
        let rows = self.features()?;
        let model = self.model()?;
        let rules = diagnose_rows(&model, &rows)?;
        write_diagnoses(&self.diagnoses_path(), &rules)?;
        self.invalidate_after(Stage::Diagnose)?;
        log(format!("diagnose: {} diagnoses -> {}", rules.len(), self.diagnoses_path().display()));
        Ok(rules)
    }

    pub fn diagnoses(&self) -> Result<Vec<RuleRow>> {
        if self.diagnoses_path().is_file() {
            read_diagnoses(&self.diagnoses_path())
        } else {
            self.diagnose()
        }
    }

    /// Renders and saves the chart panel of every validation and test case,
    /// then asks the arbiter about each. Arbiter failures become rows with a
    /// cause; only a backend that fails on every case is an error.
    pub fn arbitrate(&self) -> Result<Vec<ArbiterRow>> {
        let manifest = self.manifest()?;
        let features = self.features()?;
        let rules = self.diagnoses()?;
        let arbiter = Arbiter::from_config(&self.cfg.arbitration)?;
        let cases = self.cases_dir();
        self.mkdir(&cases)?;

        let picked: Vec<usize> = (0..features.len()).filter(|&i| features[i].split != Split::Train).collect();
        let by_id: std::collections::BTreeMap<&str, &ManifestRow> =
            manifest.rows.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let panel_path = |id: &str| cases.join(format!("{id}_panel.png"));
        picked.par_iter().try_for_each(|&i| -> Result<()> {
            let id = features[i].sample_id.as_str();
            let m = by_id
                .get(id)
                .ok_or_else(|| Error::missing(self.manifest_path(), format!("no manifest row for {id}")))?;
            let sig = read_signal(&manifest.signal_path(m), id)?;
            let ex = extract_all(&sig, &self.cfg.features)?;
            let img = render_panel(&ChartPanel::from_extraction(id, &sig, &ex, &self.cfg.chart), &self.cfg.chart)?;
            let p = panel_path(id);
            std::fs::write(&p, &img.png).map_err(|e| Error::io(&p, e))
        })?;

        let rows: Vec<&FeatureRow> = picked.iter().map(|&i| &features[i]).collect();
        let rule_refs: Vec<&RuleRow> = picked.iter().map(|&i| &rules[i]).collect();
        let read_panel = |row: &FeatureRow| -> Result<Option<Vec<u8>>> {
            let p = panel_path(&row.sample_id);
            std::fs::read(&p).map(Some).map_err(|e| Error::io(&p, e))
        };
        let results = arbitrate_rows(&arbiter, &self.cfg.arbitration, &rows, &rule_refs, &read_panel)?;
        let mut out = Vec::with_capacity(results.len());
        for (mut row, verdict) in results {
            let vp = cases.join(format!("{}_verdict.txt", row.sample_id));
            write_text(&vp, &verdict_transcript(&row, verdict.as_ref()))?;
            row.panel_path = Some(rel(&panel_path(&row.sample_id), &self.out));
            row.verdict_path = Some(rel(&vp, &self.out));
            out.push(row);
        }
        write_arbitration(&self.arbitration_path(), &out)?;
        self.invalidate_after(Stage::Arbitrate)?;
        let failed = out.iter().filter(|r| r.cause.is_some()).count();
        log(format!(
            "arbitrate: {} cases, {} without a verdict -> {}",
            out.len(),
            failed,
            self.arbitration_path().display()
        ));
        if !out.is_empty() && failed == out.len() && self.cfg.arbitration.backend == BackendKind::Llm {
            return Err(Error::ArbiterUnavailable(format!(
                "no case received a verdict; first cause: {}",
                out[0].cause.as_deref().unwrap_or("unknown")
            )));
        }
        Ok(out)
    }

    pub fn arbitration(&self) -> Result<Vec<ArbiterRow>> {
        if self.arbitration_path().is_file() {
            read_arbitration(&self.arbitration_path())
        } else {
            self.arbitrate()
        }
    }

    pub fn calibrate(&self) -> Result<CalibrationBundle> {
        let rules = self.diagnoses()?;
        let arbs = self.arbitration()?;
        let bundle = fit_calibration(&rules, &arbs)?;
        write_text(&self.bundle_path(), &bundle.to_text())?;
        self.invalidate_after(Stage::Calibrate)?;
        log(format!(
            "calibrate: T = {:.4} on {} validation cases -> {}",
            bundle.temperature.t,
            bundle.fit_ids.len(),
            self.bundle_path().display()
        ));
        Ok(bundle)
    }

    pub fn bundle(&self) -> Result<CalibrationBundle> {
        if self.bundle_path().is_file() {
            CalibrationBundle::from_text(&read_text(&self.bundle_path())?)
        } else {
            self.calibrate()
        }
    }

    pub fn evaluate(&self) -> Result<(ComparisonReport, Vec<CaseRecord>)> {
        let features = self.features()?;
        let rules = self.diagnoses()?;
        let arbs = self.arbitration()?;
        let bundle = self.bundle()?;
        let a = &self.cfg.arbitration;
        let mut ev = evaluate_split(
            &features,
            &rules,
            &arbs,
            &bundle,
            Split::Test,
            a.theta,
            a.delta,
            self.cfg.calibration.n_bins,
        )?;
        let cases = self.cases_dir();
        for rec in &mut ev.records {
            let p = cases.join(format!("{}_report.txt", rec.sample_id));
            rec.report_path = Some(rel(&p, &self.out));
            write_text(&p, &case_report(rec))?;
        }
        let records = std::mem::take(&mut ev.records);
        let dir = self.evaluation_dir();
        self.mkdir(&dir)?;
        write_case_records(&dir.join("case_records.csv"), &records)?;
        write_text(
            &dir.join("case_records.json"),
            &(serde_json::to_string_pretty(&records)? + "\n"),
        )?;
        let test_count = records.len();
        let report = ComparisonReport::build(a.backend, &self.cfg, vec![self.cfg.seed], vec![(ev, bundle.temperature.t)])?;
        write_text(&dir.join("comparison.json"), &report.to_text())?;
        self.invalidate_after(Stage::Evaluate)?;
        log(format!("evaluate: {test_count} test cases -> {}", dir.display()));
        Ok((report, records))
    }

    fn load_evaluation(&self) -> Result<(ComparisonReport, Vec<CaseRecord>)> {
        let dir = self.evaluation_dir();
        if !dir.join("comparison.json").is_file() {
            return self.evaluate();
        }
        let report = ComparisonReport::from_text(&read_text(&dir.join("comparison.json"))?)?;
        let records: Vec<CaseRecord> = serde_json::from_str(&read_text(&dir.join("case_records.json"))?)?;
        Ok((report, records))
    }

    pub fn report(&self) -> Result<PathBuf> {
        let (report, records) = self.load_evaluation()?;
        let md = write_report(&self.report_dir(), &report, &records)?;
        log(format!("report: {}", md.display()));
        Ok(md)
    }

    pub fn sweep(&self) -> Result<SweepResult> {
        let rules = self.diagnoses()?;
        let arbs = self.arbitration()?;
        let bundle = self.bundle()?;
        let res = sweep(&rules, &arbs, &bundle, &SWEEP_THETAS, &SWEEP_DELTAS)?;
        write_rows(&self.sweep_path(), &res.rows)?;
        log(format!("sweep: {} grid points -> {}", res.rows.len(), self.sweep_path().display()));
        Ok(res)
    }

    pub fn experiment(&self) -> Result<(ComparisonReport, PathBuf)> {
        let arbiter = Arbiter::from_config(&self.cfg.arbitration)?;
        let start = std::time::Instant::now();
        let report = run_experiment(&self.cfg, &arbiter, |i, art| {
            log(format!(
                "experiment: run {}/{} (seed {}) finished after {:.1}s",
                i + 1,
                self.cfg.repeats,
                art.seed,
                start.elapsed().as_secs_f64()
            ))
        })?;
        let dir = self.experiment_dir();
        self.mkdir(&dir)?;
        write_text(&dir.join("comparison.json"), &report.to_text())?;
        let md = write_report(&dir, &report, &[])?;
        Ok((report, md))
    }
}
