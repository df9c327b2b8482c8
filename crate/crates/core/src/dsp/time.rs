use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeFeatures {
    pub rms: f64,
    pub crest_factor: f64,
    pub kurtosis: f64,
    pub impulse_factor: f64,
    pub clearance_factor: f64,
}

/// Population (non-excess) kurtosis `E[(x - mu)^4] / sigma^4`.
pub fn kurtosis(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::input("kurtosis needs at least two samples"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(Error::DegenerateSignal("zero variance".into()));
    }
    Ok(m4 / (m2 * m2))
}

pub fn time_features(x: &[f64]) -> Result<TimeFeatures> {
    if x.len() < 2 {
        return Err(Error::input("time features need at least two samples"));
    }
    let n = x.len() as f64;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_sqrt = x.iter().map(|v| v.abs().sqrt()).sum::<f64>() / n;
    let kurtosis = kurtosis(x)?;
    Ok(TimeFeatures {
        rms,
        crest_factor: peak / rms,
        kurtosis,
        impulse_factor: peak / mean_abs,
        clearance_factor: peak / (mean_sqrt * mean_sqrt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    fn sine(amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * 60.0 * i as f64 / 10_000.0 + 0.3).sin())
            .collect()
    }

    #[test]
    fn sine_statistics() {
        let tf = time_features(&sine(2.0, 20_000)).unwrap();
        assert!((tf.rms - SQRT_2).abs() < 1e-3);
        assert!((tf.crest_factor - SQRT_2).abs() < 1e-3);
        assert!((tf.kurtosis - 1.5).abs() < 0.02);
        // mean|sin| = 2/pi
        assert!((tf.impulse_factor - PI / 2.0).abs() < 1e-3);
        assert!(tf.clearance_factor > tf.impulse_factor);
    }

    #[test]
    fn constant_signal_is_degenerate() {
        assert!(matches!(
            time_features(&[1.0; 64]),
            Err(Error::DegenerateSignal(_))
        ));
        assert!(time_features(&[1.0]).is_err());
    }

    #[test]
    fn square_wave_has_unit_crest_factor() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let tf = time_features(&x).unwrap();
        assert!((tf.crest_factor - 1.0).abs() < 1e-12);
        assert!((tf.kurtosis - 1.0).abs() < 1e-12);
    }
}
