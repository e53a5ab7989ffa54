//! Small numeric helpers shared by the estimators and oracles.

/// Neumaier-compensated running sum. Addition order is the caller's order, so
/// results are reproducible for a fixed input sequence.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased (divisor `n - 1`) sample standard deviation, two-pass.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (n - 1) as f64).sqrt()
}

/// Sample coefficient of variation of `values`: unbiased standard deviation
/// over the mean. `None` when fewer than two values are given or the mean is
/// not strictly positive.
pub fn sample_cov(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    if !(m > 0.0) || !m.is_finite() {
        return None;
    }
    Some(sample_sd(values) / m)
}

/// Exponentiates log-values after subtracting their maximum. Returns `None`
/// when every entry is `-inf`.
pub fn exp_shifted(log_values: &[f64]) -> Option<Vec<f64>> {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    Some(log_values.iter().map(|&l| (l - max).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1.0];
        values.extend(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(values.iter().copied());
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn cov_of_two_point_set() {
        let d = sample_cov(&[0.0, 2.0]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cov_of_constant_is_zero() {
        assert_eq!(sample_cov(&[3.0; 17]), Some(0.0));
    }

    #[test]
    fn cov_undefined_for_zero_mean() {
        assert_eq!(sample_cov(&[0.0, 0.0, 0.0]), None);
        assert_eq!(sample_cov(&[1.0]), None);
    }

    #[test]
    fn bernoulli_cov_matches_formula() {
        // Indicator with p = 0.25: cov = sqrt((1 - p) / p).
        let n = 100_000;
        let values: Vec<f64> = (0..n).map(|k| if k % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let d = sample_cov(&values).unwrap();
        let expected = (0.75f64 / 0.25).sqrt();
        assert!((d - expected).abs() / expected < 0.02);
    }
}
