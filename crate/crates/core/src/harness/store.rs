//! On-disk formats: binary signal files and CSV tables.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayes::Diagnosis;
use crate::class::FaultClass;
use crate::dsp::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::synth::Split;

use super::pipeline::{ArbiterRow, CaseRecord, FeatureRow, RuleRow};

pub const SIGNAL_MAGIC: &str = "FAULTARB-SIGNAL";
pub const SIGNAL_VERSION: u32 = 1;
const END_HEADER: &str = "end_header";

/// Writes a signal as a short text header followed by little-endian `f32`
/// samples:
///
/// ```text
/// FAULTARB-SIGNAL
/// version 1
/// sample_rate 10000
/// shaft_freq 60
/// length 20000
/// end_header
/// ```
pub fn write_signal(path: &Path, sig: &Signal) -> Result<()> {
    let mut buf = format!(
        "{SIGNAL_MAGIC}\nversion {SIGNAL_VERSION}\nsample_rate {}\nshaft_freq {}\nlength {}\n{END_HEADER}\n",
        sig.sample_rate,
        sig.shaft_freq,
        sig.samples.len()
    )
    .into_bytes();
    buf.reserve(4 * sig.samples.len());
    for &v in &sig.samples {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_signal(path: &Path, id: &str) -> Result<Signal> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: String| Error::format(path, msg);

    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(bad("header is not terminated".into()));
        }
        let line = line.trim_end().to_string();
        if line == END_HEADER {
            break;
        }
        header.push(line);
        if header.len() > 32 {
            return Err(bad("header too long".into()));
        }
    }
    if header.first().map(String::as_str) != Some(SIGNAL_MAGIC) {
        return Err(bad("not a signal file".into()));
    }
    let field = |key: &str| -> Result<&str> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(format!("missing `{key}`")))
    };
    let version: u32 = field("version")?.parse().map_err(|_| bad("bad version".into()))?;
    if version != SIGNAL_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let sample_rate: f64 = field("sample_rate")?.parse().map_err(|_| bad("bad sample_rate".into()))?;
    let shaft_freq: f64 = field("shaft_freq")?.parse().map_err(|_| bad("bad shaft_freq".into()))?;
    let length: usize = field("length")?.parse().map_err(|_| bad("bad length".into()))?;

    let mut data = Vec::new();
    reader.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    if data.len() != 4 * length {
        return Err(bad(format!("expected {} sample bytes, found {}", 4 * length, data.len())));
    }
    let samples = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Signal::new(id, samples, sample_rate, shaft_freq)
}

/// One manifest row. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub class: FaultClass,
    pub severity: Option<f64>,
    pub split: Split,
    pub path: String,
    pub shaft_freq: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn signal_path(&self, row: &ManifestRow) -> PathBuf {
        self.dir.join(&row.path)
    }

    /// Reads a manifest and checks ids are unique and every file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<ManifestRow> = read_rows(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut seen = std::collections::BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::format(path, format!("duplicate sample_id {}", r.sample_id)));
            }
            let p = dir.join(&r.path);
            if !p.is_file() {
                return Err(Error::missing(&p, format!("signal file listed for {}", r.sample_id)));
            }
        }
        Ok(Manifest { dir, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.is_file() {
        return Err(Error::missing(path, "file does not exist"));
    }
    csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = open_csv(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(out)
}

fn write_records(path: &Path, header: &[String], records: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in records {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_records(path: &Path, header: &[String]) -> Result<Vec<csv::StringRecord>> {
    let mut r = open_csv(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::format(path, format!("unexpected header, expected {}", header.join(","))));
    }
    r.records().map(|rec| Ok(rec?)).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::format(
            path,
            format!(
                "line {}: cannot parse `{raw}` in column {}",
                rec.position().map_or(0, |p| p.line()),
                i + 1
            ),
        )
    })
}

fn opt_field(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<Option<f64>> {
    match rec.get(i) {
        None | Some("") => Ok(None),
        Some(_) => field(rec, i, path).map(Some),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn feature_header() -> Vec<String> {
    ["sample_id", "class", "split", "severity", "shaft_freq"]
        .iter()
        .map(|s| s.to_string())
        .chain(FEATURE_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

/// Feature table: identifiers, then one column per feature in canonical order.
pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    write_records(
        path,
        &feature_header(),
        rows.iter().map(|r| {
            let mut rec = vec![
                r.sample_id.clone(),
                r.truth.to_string(),
                r.split.to_string(),
                fmt_opt(r.severity),
                r.shaft_freq.to_string(),
            ];
            rec.extend(r.features.to_array().iter().map(f64::to_string));
            rec
        }),
    )
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    read_records(path, &feature_header())?
        .iter()
        .map(|rec| {
            let values = (0..FEATURE_COUNT)
                .map(|k| field::<f64>(rec, 5 + k, path))
                .collect::<Result<Vec<f64>>>()?;
            Ok(FeatureRow {
                sample_id: rec[0].to_string(),
                truth: field(rec, 1, path)?,
                split: parse_split(&rec[2], path)?,
                severity: opt_field(rec, 3, path)?,
                shaft_freq: field(rec, 4, path)?,
                features: FeatureVector::from_slice(&values)?,
            })
        })
        .collect()
}

fn parse_split(s: &str, path: &Path) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::format(path, format!("unknown split `{s}`"))),
    }
}

fn diagnosis_header() -> Vec<String> {
    let mut h: Vec<String> = ["sample_id", "split", "truth", "label", "confidence"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(FaultClass::ALL.iter().map(|c| format!("p_{c}")));
    h.extend(FaultClass::ALL.iter().map(|c| format!("z_{c}")));
    h
}

/// Rule diagnoses with full posterior (`p_*`) and log-score (`z_*`) columns.
pub fn write_diagnoses(path: &Path, rows: &[RuleRow]) -> Result<()> {
    write_records(
        path,
        &diagnosis_header(),
        rows.iter().map(|r| {
            let d = &r.diagnosis;
            let mut rec = vec![
                r.sample_id.clone(),
                r.split.to_string(),
                r.truth.to_string(),
                d.label.to_string(),
                d.confidence.to_string(),
            ];
            rec.extend(d.full_posteriors().iter().map(f64::to_string));
            rec.extend(d.full_log_scores().iter().map(f64::to_string));
            rec
        }),
    )
}

pub fn read_diagnoses(path: &Path) -> Result<Vec<RuleRow>> {
    let k = FaultClass::COUNT;
    read_records(path, &diagnosis_header())?
        .iter()
        .map(|rec| {
            let posteriors = (0..k).map(|i| field(rec, 5 + i, path)).collect::<Result<Vec<f64>>>()?;
            let log_scores = (0..k).map(|i| field(rec, 5 + k + i, path)).collect::<Result<Vec<f64>>>()?;
            Ok(RuleRow {
                sample_id: rec[0].to_string(),
                split: parse_split(&rec[1], path)?,
                truth: field(rec, 2, path)?,
                diagnosis: Diagnosis {
                    label: field(rec, 3, path)?,
                    confidence: field(rec, 4, path)?,
                    classes: FaultClass::ALL.to_vec(),
                    posteriors,
                    log_scores,
                },
            })
        })
        .collect()
}

pub fn write_arbitration(path: &Path, rows: &[ArbiterRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_arbitration(path: &Path) -> Result<Vec<ArbiterRow>> {
    read_rows(path)
}

fn case_header() -> Vec<String> {
    let mut h: Vec<String> = ["sample_id", "truth"].iter().map(|s| s.to_string()).collect();
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.extend(
        [
            "rule_label",
            "rule_confidence",
            "rule_calibrated",
            "llm_label",
            "llm_confidence",
            "llm_calibrated",
            "decision",
            "final_label",
            "final_confidence",
            "status",
            "uncalibrated_decision",
            "uncalibrated_label",
            "cause",
            "panel_path",
            "verdict_path",
            "report_path",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

/// Case records, one flat row each, features inlined.
pub fn write_case_records(path: &Path, rows: &[CaseRecord]) -> Result<()> {
    let label = |l: Option<FaultClass>| l.map(|c| c.to_string()).unwrap_or_default();
    let text = |t: &Option<String>| t.clone().unwrap_or_default();
    write_records(
        path,
        &case_header(),
        rows.iter().map(|r| {
            let mut rec = vec![r.sample_id.clone(), r.truth.to_string()];
            rec.extend(r.features.to_array().iter().map(f64::to_string));
            rec.extend([
                r.rule_label.to_string(),
                r.rule_confidence.to_string(),
                r.rule_calibrated.to_string(),
                label(r.llm_label),
                fmt_opt(r.llm_confidence),
                fmt_opt(r.llm_calibrated),
                r.outcome.decision.as_str().to_string(),
                label(r.outcome.final_label),
                fmt_opt(r.outcome.final_confidence),
                r.status.as_str().to_lowercase(),
                r.uncalibrated_decision.as_str().to_string(),
                label(r.uncalibrated_label),
                text(&r.outcome.cause),
                text(&r.panel_path),
                text(&r.verdict_path),
                text(&r.report_path),
            ]);
            rec
        }),
    )
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::missing(path, "file does not exist"));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_file_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sig");
        let samples: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.01).sin() * 1.5).collect();
        let sig = Signal::new("a", samples.clone(), 10_000.0, 59.5).unwrap();
        write_signal(&path, &sig).unwrap();
        let back = read_signal(&path, "a").unwrap();
        assert_eq!(back.sample_rate, 10_000.0);
        assert_eq!(back.shaft_freq, 59.5);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert_eq!(*b, *a as f32 as f64);
        }
    }

    #[test]
    fn truncated_signal_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sig");
        let sig = Signal::new("a", vec![0.5; 4096], 10_000.0, 60.0).unwrap();
        write_signal(&path, &sig).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_signal(&path, "a"), Err(Error::Format { .. })));
        std::fs::write(&path, b"hello\nend_header\n").unwrap();
        assert!(read_signal(&path, "a").is_err());
    }

    #[test]
    fn feature_table_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let vals: Vec<f64> = (0..FEATURE_COUNT).map(|i| 1.0 / (i as f64 + 3.0)).collect();
        let rows = vec![FeatureRow {
            sample_id: "x_0001".into(),
            truth: FaultClass::GearFault,
            split: Split::Val,
            severity: Some(0.7),
            shaft_freq: 60.0,
            features: FeatureVector::from_slice(&vals).unwrap(),
        }];
        write_features(&path, &rows).unwrap();
        assert_eq!(read_features(&path).unwrap(), rows);
    }
}
