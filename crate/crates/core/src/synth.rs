//! Labeled synthetic vibration signals for the seven machine states.
//!
//! Every class shares a base 1X sinusoid of amplitude `A` (weakened for
//! cavitation) and additive white Gaussian noise. Fault signatures scale with
//! severity `s`:
//!
//! | class          | signature                                                      |
//! |----------------|----------------------------------------------------------------|
//! | normal         | 1X only                                                        |
//! | imbalance      | 1X amplitude `(1 + 2s) A`                                      |
//! | misalignment   | 2X with `A2/A1 = 1.3 + 1.2s`                                   |
//! | looseness      | harmonics 1..=10 with amplitudes `A r^(k-1)`, `r = 0.5 + 0.4s` |
//! | bearing_damage | decaying 2.5 kHz bursts repeating at `3.58 f_s`                |
//! | gear_fault     | mesh tone at `23 f_s` with `+-f_s` sidebands                   |
//! | cavitation     | 1-4 kHz band-limited noise, variance proportional to `s`       |

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::class::FaultClass;
use crate::dsp::filter::SosFilter;
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Outer-race-like defect repetition rate, in multiples of shaft frequency.
pub const BEARING_DEFECT_ORDER: f64 = 3.58;
pub const BEARING_RESONANCE_HZ: f64 = 2500.0;
/// Time constant of each bearing impact's ring-down, seconds.
pub const BEARING_DECAY_S: f64 = 0.3e-3;
/// Peak impact amplitude at severity 1, in units of `A`.
pub const BEARING_IMPACT_GAIN: f64 = 5.0;
pub const GEAR_MESH_ORDER: f64 = 23.0;
pub const CAVITATION_BAND_HZ: (f64, f64) = (1000.0, 4000.0);
/// Band-limited noise variance at severity 1, in units of `A^2`.
pub const CAVITATION_POWER: f64 = 0.5;
pub const CAVITATION_1X: f64 = 0.2;
pub const LOOSENESS_HARMONICS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub duration: f64,
    pub shaft_freq: f64,
    pub severity: f64,
    /// Base 1X amplitude `A`.
    pub amplitude: f64,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 10_000.0,
            duration: 2.0,
            shaft_freq: 60.0,
            severity: 1.0,
            amplitude: 1.0,
            noise_std: 0.1,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Highest frequency any class signature places energy at.
    pub fn highest_component(&self) -> f64 {
        ((GEAR_MESH_ORDER + 1.0) * self.shaft_freq)
            .max(LOOSENESS_HARMONICS as f64 * self.shaft_freq)
            .max(CAVITATION_BAND_HZ.1)
            .max(BEARING_RESONANCE_HZ)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.sample_rate,
            self.duration,
            self.shaft_freq,
            self.severity,
            self.amplitude,
            self.noise_std,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("synth parameters must be finite"));
        }
        if !(self.shaft_freq > 0.0) {
            return Err(Error::config("shaft_freq must be positive"));
        }
        if !(self.sample_rate > 2.0 * self.highest_component()) {
            return Err(Error::config(format!(
                "sample_rate {} must exceed twice the highest component ({} Hz)",
                self.sample_rate,
                self.highest_component()
            )));
        }
        if self.n_samples() < 8192 {
            return Err(Error::config(format!(
                "duration x sample_rate must give at least 8192 samples, got {}",
                self.n_samples()
            )));
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::config("severity must lie in [0, 1]"));
        }
        if !(self.amplitude > 0.0) || self.noise_std < 0.0 {
            return Err(Error::config(
                "amplitude must be positive and noise_std nonnegative",
            ));
        }
        Ok(())
    }
}

fn add_tone(x: &mut [f64], fs: f64, freq: f64, amp: f64, phase: f64) {
    let w = 2.0 * PI * freq / fs;
    for (i, v) in x.iter_mut().enumerate() {
        *v += amp * (w * i as f64 + phase).sin();
    }
}

fn random_phase(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..2.0 * PI)
}

/// Generates one labeled signal. Deterministic in `(class, cfg)`.
pub fn synthesize(class: FaultClass, cfg: &SynthConfig) -> Result<Signal> {
    cfg.validate()?;
    let fs = cfg.sample_rate;
    let f1 = cfg.shaft_freq;
    let a = cfg.amplitude;
    let s = cfg.severity;
    let n = cfg.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut x = vec![0.0; n];

    let base_phase = random_phase(&mut rng);
    match class {
        FaultClass::Normal => add_tone(&mut x, fs, f1, a, base_phase),
        FaultClass::Imbalance => add_tone(&mut x, fs, f1, (1.0 + 2.0 * s) * a, base_phase),
        FaultClass::Misalignment => {
            add_tone(&mut x, fs, f1, a, base_phase);
            let p = random_phase(&mut rng);
            add_tone(&mut x, fs, 2.0 * f1, (1.3 + 1.2 * s) * a, p);
        }
        FaultClass::Looseness => {
            let r = 0.5 + 0.4 * s;
            add_tone(&mut x, fs, f1, a, base_phase);
            for k in 2..=LOOSENESS_HARMONICS {
                let p = random_phase(&mut rng);
                add_tone(&mut x, fs, k as f64 * f1, a * r.powi(k as i32 - 1), p);
            }
        }
        FaultClass::BearingDamage => {
            add_tone(&mut x, fs, f1, a, base_phase);
            let period = 1.0 / (BEARING_DEFECT_ORDER * f1);
            let amp = BEARING_IMPACT_GAIN * s * a;
            let offset = rng.random_range(0.0..period);
            let ring = (10.0 * BEARING_DECAY_S * fs).ceil() as usize;
            let w = 2.0 * PI * BEARING_RESONANCE_HZ;
            let mut t0 = offset;
            while t0 < n as f64 / fs {
                let start = (t0 * fs).ceil() as usize;
                for i in start..(start + ring).min(n) {
                    let dt = i as f64 / fs - t0;
                    x[i] += amp * (-dt / BEARING_DECAY_S).exp() * (w * dt).sin();
                }
                t0 += period;
            }
        }
        FaultClass::GearFault => {
            add_tone(&mut x, fs, f1, a, base_phase);
            let mesh = (1.0 + s) * a;
            let side = (0.3 + 0.5 * s) * mesh;
            let p = random_phase(&mut rng);
            add_tone(&mut x, fs, GEAR_MESH_ORDER * f1, mesh, p);
            let p = random_phase(&mut rng);
            add_tone(&mut x, fs, (GEAR_MESH_ORDER - 1.0) * f1, side, p);
            let p = random_phase(&mut rng);
            add_tone(&mut x, fs, (GEAR_MESH_ORDER + 1.0) * f1, side, p);
        }
        FaultClass::Cavitation => {
            add_tone(&mut x, fs, f1, CAVITATION_1X * a, base_phase);
            let target_std = (CAVITATION_POWER * s).sqrt() * a;
            if target_std > 0.0 {
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                let band = SosFilter::butter_bandpass(
                    4,
                    CAVITATION_BAND_HZ.0,
                    CAVITATION_BAND_HZ.1,
                    fs,
                )
                .filtfilt(&white);
                let mean = band.iter().sum::<f64>() / n as f64;
                let std = (band.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                if std > 0.0 {
                    for (v, b) in x.iter_mut().zip(&band) {
                        *v += (b - mean) / std * target_std;
                    }
                }
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
        for v in x.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }

    let severity = (class != FaultClass::Normal).then_some(s);
    Ok(Signal::new(
        format!("{}_{:016x}", class.as_str(), cfg.rng_seed),
        x,
        fs,
        f1,
    )?
    .with_label(class, severity))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub per_class_counts: BTreeMap<FaultClass, usize>,
    pub severity_grid: Vec<f64>,
    pub seed: u64,
    /// Train : validation : test weights.
    pub split_ratio: [u32; 3],
}

impl DatasetSpec {
    pub fn uniform(per_class: usize, seed: u64) -> Self {
        DatasetSpec {
            per_class_counts: FaultClass::ALL.iter().map(|&c| (c, per_class)).collect(),
            severity_grid: default_severity_grid(),
            seed,
            split_ratio: [7, 2, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in FaultClass::ALL {
            if self.per_class_counts.get(&c).copied().unwrap_or(0) == 0 {
                return Err(Error::config(format!("class {c} needs at least one sample")));
            }
        }
        if self.severity_grid.is_empty()
            || self
                .severity_grid
                .iter()
                .any(|s| !(0.0..=1.0).contains(s))
        {
            return Err(Error::config("severity grid must be nonempty and within [0, 1]"));
        }
        if self.split_ratio.iter().sum::<u32>() == 0 {
            return Err(Error::config("split ratio must not be all zero"));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for a class with `n` samples.
    pub fn split_counts(&self, n: usize) -> (usize, usize, usize) {
        let total: u32 = self.split_ratio.iter().sum();
        let train = n * self.split_ratio[0] as usize / total as usize;
        let val = n * self.split_ratio[1] as usize / total as usize;
        (train, val, n - train - val)
    }
}

pub fn default_severity_grid() -> Vec<f64> {
    vec![0.3, 0.5, 0.7, 0.9, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub sample_id: String,
    pub class: FaultClass,
    pub severity: Option<f64>,
    pub split: Split,
    pub seed: u64,
}

/// A dataset description. Signals are regenerated on demand from each
/// entry's seed so large datasets never have to be held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub base: SynthConfig,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn signal(&self, entry: &DatasetEntry) -> Result<Signal> {
        let cfg = SynthConfig {
            severity: entry.severity.unwrap_or(0.0),
            rng_seed: entry.seed,
            ..self.base.clone()
        };
        let mut sig = synthesize(entry.class, &cfg)?;
        sig.id = entry.sample_id.clone();
        Ok(sig)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a stratified dataset: per class, samples are shuffled with the
/// seed and cut train/val/test by the split ratio.
pub fn synthesize_dataset(spec: &DatasetSpec, base: &SynthConfig) -> Result<Dataset> {
    spec.validate()?;
    base.validate()?;
    let mut entries = Vec::new();
    for class in FaultClass::ALL {
        let n = spec.per_class_counts[&class];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, class.index() as u64, u64::MAX));
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let (n_train, n_val, _) = spec.split_counts(n);
        let mut split_of = vec![Split::Test; n];
        for (rank, &idx) in order.iter().enumerate() {
            split_of[idx] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for (i, split) in split_of.into_iter().enumerate() {
            let seed = mix_seed(spec.seed, class.index() as u64, i as u64);
            let severity = (class != FaultClass::Normal).then(|| {
                let mut srng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EE5_5EE5);
                spec.severity_grid[srng.random_range(0..spec.severity_grid.len())]
            });
            entries.push(DatasetEntry {
                sample_id: format!("{}_{:04}", class.as_str(), i),
                class,
                severity,
                split,
                seed,
            });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        base: base.clone(),
        entries,
    })
}
