//! Butterworth biquad sections and zero-phase filtering.

use std::f64::consts::PI;

/// Second-order IIR section, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    pub fn lowpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn highpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::from_raw(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    /// Direct form II transposed, in place.
    pub fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * out + z2;
            z2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }

    /// Magnitude response at `freq`.
    pub fn gain(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let (re_z1, im_z1) = ((-w).cos(), (-w).sin());
        let (re_z2, im_z2) = ((-2.0 * w).cos(), (-2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * re_z1 + self.b[2] * re_z2,
            self.b[1] * im_z1 + self.b[2] * im_z2,
        );
        let den = (
            1.0 + self.a[0] * re_z1 + self.a[1] * re_z2,
            self.a[0] * im_z1 + self.a[1] * im_z2,
        );
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// Quality factors of the biquad sections of an even-order Butterworth prototype.
fn butterworth_qs(order: usize) -> Vec<f64> {
    assert!(order >= 2 && order.is_multiple_of(2), "even Butterworth order required");
    (1..=order / 2)
        .map(|k| {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            -1.0 / (2.0 * theta.cos())
        })
        .collect()
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn butter_lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        SosFilter {
            sections: butterworth_qs(order)
                .into_iter()
                .map(|q| Biquad::lowpass(cutoff, sample_rate, q))
                .collect(),
        }
    }

    pub fn butter_highpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        SosFilter {
            sections: butterworth_qs(order)
                .into_iter()
                .map(|q| Biquad::highpass(cutoff, sample_rate, q))
                .collect(),
        }
    }

    /// Band-pass built as a Butterworth high-pass at `lo` cascaded with a
    /// Butterworth low-pass at `hi`, both of the given order.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, sample_rate: f64) -> Self {
        let mut sections = Self::butter_highpass(order, lo, sample_rate).sections;
        sections.extend(Self::butter_lowpass(order, hi, sample_rate).sections);
        SosFilter { sections }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    pub fn gain(&self, freq: f64, sample_rate: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.gain(freq, sample_rate))
            .product()
    }

    /// Forward-backward filtering with odd-reflection edge padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (n - 1).min(256);
        let mut buf = Vec::with_capacity(n + 2 * pad);
        let first = x[0];
        let last = x[n - 1];
        buf.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        buf.extend_from_slice(x);
        buf.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        self.apply(&mut buf);
        buf.reverse();
        self.apply(&mut buf);
        buf.reverse();
        buf[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_order_qs() {
        let qs = butterworth_qs(4);
        assert!((qs[0] - 1.306563).abs() < 1e-5);
        assert!((qs[1] - 0.541196).abs() < 1e-5);
    }

    #[test]
    fn butterworth_is_3db_at_cutoff() {
        let lp = SosFilter::butter_lowpass(4, 1000.0, 10_000.0);
        assert!((lp.gain(1000.0, 10_000.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((lp.gain(1.0, 10_000.0) - 1.0).abs() < 1e-6);
        let hp = SosFilter::butter_highpass(4, 1000.0, 10_000.0);
        assert!((hp.gain(1000.0, 10_000.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(hp.gain(100.0, 10_000.0) < 1e-3);
    }

    #[test]
    fn bandpass_passes_centre_and_rejects_edges() {
        let bp = SosFilter::butter_bandpass(4, 1500.0, 4000.0, 10_000.0);
        let g = bp.gain(2500.0, 10_000.0);
        assert!((g - 1.0).abs() < 0.05, "{g}");
        assert!(bp.gain(60.0, 10_000.0) < 1e-5);
    }

    #[test]
    fn filtfilt_has_zero_phase() {
        let fs = 10_000.0;
        let x: Vec<f64> = (0..8192)
            .map(|i| (2.0 * PI * 2500.0 * i as f64 / fs).sin())
            .collect();
        let bp = SosFilter::butter_bandpass(4, 1500.0, 4000.0, fs);
        let y = bp.filtfilt(&x);
        let g = bp.gain(2500.0, fs).powi(2);
        for i in 2000..6000 {
            assert!((y[i] - g * x[i]).abs() < 1e-3, "sample {i}");
        }
    }
}
