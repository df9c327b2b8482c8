use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nondecreasing step function fitted by pool-adjacent-violators.
///
/// `breakpoints[i]` is the smallest raw confidence of block `i`; inputs map to
/// the value of the last block starting at or below them (inputs below the
/// first breakpoint take the first value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicModel {
    pub fn apply(&self, x: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= x);
        self.values[i.saturating_sub(1)]
    }
}

/// Weighted pool-adjacent-violators on `y` (already ordered by the
/// predictor). Returns one fitted value per input.
pub fn pav(y: &[f64], w: &[f64]) -> Vec<f64> {
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let total = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / total, total, n1 + n2);
        }
    }
    blocks
        .iter()
        .flat_map(|&(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Fits correctness against confidence. Equal confidences are pooled first.
pub fn fit_isotonic(confidences: &[f64], correct: &[bool]) -> Result<IsotonicModel> {
    if confidences.len() != correct.len() || confidences.is_empty() {
        return Err(Error::Fit(
            "isotonic fit needs equally many confidences and outcomes, at least one".into(),
        ));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Fit("confidences must lie in [0, 1]".into()));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for &i in &order {
        let y = if correct[i] { 1.0 } else { 0.0 };
        if xs.last() == Some(&confidences[i]) {
            let last = ys.len() - 1;
            ys[last] = (ys[last] * ws[last] + y) / (ws[last] + 1.0);
            ws[last] += 1.0;
        } else {
            xs.push(confidences[i]);
            ys.push(y);
            ws.push(1.0);
        }
    }
    let fitted = pav(&ys, &ws);

    let mut breakpoints = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (x, v) in xs.into_iter().zip(fitted) {
        if values.last() != Some(&v) {
            breakpoints.push(x);
            values.push(v);
        }
    }
    Ok(IsotonicModel { breakpoints, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case_pools_first_two() {
        let m = fit_isotonic(&[0.2, 0.4, 0.6, 0.8], &[true, false, true, true]).unwrap();
        assert_eq!(m.apply(0.2), 0.5);
        assert_eq!(m.apply(0.4), 0.5);
        assert_eq!(m.apply(0.6), 1.0);
        assert_eq!(m.apply(0.8), 1.0);
        assert_eq!(m.breakpoints, vec![0.2, 0.6]);
    }

    #[test]
    fn all_correct_is_constant_one() {
        let c: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let m = fit_isotonic(&c, &[true; 20]).unwrap();
        for x in [0.0, 0.3, 0.99, 1.0] {
            assert_eq!(m.apply(x), 1.0);
        }
    }

    #[test]
    fn calibrated_levels_are_kept() {
        // level 0.25: 1 of 4 correct, level 0.75: 3 of 4 correct
        let c = [0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75];
        let y = [true, false, false, false, true, true, true, false];
        let m = fit_isotonic(&c, &y).unwrap();
        assert_eq!(m.apply(0.25), 0.25);
        assert_eq!(m.apply(0.75), 0.75);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_isotonic(&[], &[]).is_err());
        assert!(fit_isotonic(&[1.5], &[true]).is_err());
        assert!(fit_isotonic(&[0.5, 0.6], &[true]).is_err());
    }
}
