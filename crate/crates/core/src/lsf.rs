//! Limit-state functions. Failure is `g(x) <= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps a labelled system state to a real limit-state value.
///
/// Implementations must be pure: the same state always yields the same value.
pub trait LimitState: Send + Sync {
    fn n_dims(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;
}

impl<T: LimitState + ?Sized> LimitState for &T {
    fn n_dims(&self) -> usize {
        (**self).n_dims()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }
}

impl<T: LimitState + ?Sized> LimitState for Box<T> {
    fn n_dims(&self) -> usize {
        (**self).n_dims()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }
}

/// Weighted linear system performance; fails once `sum_d c_d x_d >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLsfSpec {
    pub coefficients: Vec<f64>,
    pub threshold: f64,
}

impl LinearLsfSpec {
    pub fn new(coefficients: Vec<f64>, threshold: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::invalid("linear limit state needs at least one coefficient"));
        }
        if coefficients.iter().chain([&threshold]).any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficients and threshold must be finite"));
        }
        Ok(LinearLsfSpec { coefficients, threshold })
    }

    /// Coefficient blocks: `(count, coefficient)` pairs laid out in order.
    pub fn from_blocks(blocks: &[(usize, f64)], threshold: f64) -> Result<Self> {
        let coefficients =
            blocks.iter().flat_map(|&(n, c)| std::iter::repeat_n(c, n)).collect();
        Self::new(coefficients, threshold)
    }

    /// `threshold - sum_d c_d x_d`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "state has {} entries, linear limit state expects {}",
                x.len(),
                self.coefficients.len()
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("state label {v} is not numeric")));
        }
        let s: f64 = self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum();
        Ok(self.threshold - s)
    }

    /// Parses the linear problem format:
    ///
    /// ```toml
    /// threshold = 6
    /// [[block]]
    /// count = 10
    /// coefficient = 2
    /// ```
    ///
    /// A flat `coefficients = [...]` array may be given instead of blocks.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: LinearFile =
            toml::from_str(text).map_err(|e| Error::invalid(format!("linear problem file: {e}")))?;
        match (file.coefficients, file.block.is_empty()) {
            (Some(c), true) => Self::new(c, file.threshold),
            (None, false) => {
                let blocks: Vec<(usize, f64)> =
                    file.block.iter().map(|b| (b.count, b.coefficient)).collect();
                Self::from_blocks(&blocks, file.threshold)
            }
            _ => Err(Error::invalid("give either `coefficients` or `[[block]]` tables, not both")),
        }
    }

    /// Writes the linear problem format, run-length encoding the coefficients.
    pub fn to_toml_string(&self) -> String {
        let mut block: Vec<BlockRecord> = Vec::new();
        for &c in &self.coefficients {
            match block.last_mut() {
                Some(b) if b.coefficient == c => b.count += 1,
                _ => block.push(BlockRecord { count: 1, coefficient: c }),
            }
        }
        let file = LinearFile { threshold: self.threshold, coefficients: None, block };
        toml::to_string(&file).expect("linear problem serialization is infallible")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coefficients: Option<Vec<f64>>,
    #[serde(default)]
    block: Vec<BlockRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRecord {
    count: usize,
    coefficient: f64,
}

impl LimitState for LinearLsfSpec {
    fn n_dims(&self) -> usize {
        self.coefficients.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate(x)
    }
}

/// Wraps a closure as a limit state. Handy for tests and ad-hoc problems.
pub struct FnLsf<F> {
    n_dims: usize,
    f: F,
}

impl<F> FnLsf<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(n_dims: usize, f: F) -> Self {
        FnLsf { n_dims, f }
    }
}

impl<F> LimitState for FnLsf<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn n_dims(&self) -> usize {
        self.n_dims
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}
