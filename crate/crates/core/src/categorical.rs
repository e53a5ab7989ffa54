//! Independent categorical distributions over discrete system states.
//!
//! A system state assigns one of `n_d` ordered states to each of `n`
//! components. The independent family `h(x; v) = prod_d v_{d, i(x_d)}` serves
//! both as the input distribution and as the importance-sampling family.
//! States are addressed internally by their position within a dimension; the
//! labels (capacities, on/off flags, ...) are only interpreted by limit-state
//! functions.
//!
//! Fitting operations:
//! - [`weighted_mle`]: the cross-entropy update, may produce zero probabilities.
//! - [`posterior_predictive`]: Dirichlet posterior-predictive mean, strictly
//!   positive for any positive prior.
//! - [`map_estimate`]: posterior mode.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Tolerance on `sum_i v_{d,i} = 1` accepted at construction.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// A distribution over full state vectors (state indices per dimension).
pub trait StateDistribution: Sync {
    fn n_dims(&self) -> usize;

    fn log_pmf(&self, x: &[usize]) -> Result<f64>;

    /// Draws one state vector into `out` (length `n_dims`).
    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [usize]);

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> WeightedSampleBatch {
        let n = self.n_dims();
        let mut states = vec![0usize; n * count];
        for row in states.chunks_exact_mut(n.max(1)).take(count) {
            self.sample_into(rng, row);
        }
        WeightedSampleBatch::from_states(n, states)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dimension {
    labels: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Dimension {
    fn new(d: usize, labels: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::invalid(format!("dimension {d}: at least two states are required")));
        }
        if labels.len() != probs.len() {
            return Err(Error::invalid(format!(
                "dimension {d}: {} labels but {} probabilities",
                labels.len(),
                probs.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if !l.is_finite() {
                return Err(Error::invalid(format!("dimension {d}: label {i} is not finite")));
            }
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("dimension {d}: duplicate label {l}")));
            }
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("dimension {d}: probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().copied().collect::<CompensatedSum>().value();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!(
                "dimension {d}: probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Dimension { labels, probs, cumulative })
    }

    #[inline]
    fn draw(&self, u: f64) -> usize {
        match self.cumulative.iter().position(|&c| u < c) {
            Some(i) => i,
            // u beyond the rounded total: fall back to the last state with mass.
            None => self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0),
        }
    }
}

/// Product of independent categorical distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentCategorical {
    dims: Vec<Dimension>,
}

impl IndependentCategorical {
    /// Builds a model from `(labels, probabilities)` pairs, one per dimension.
    pub fn new(dims: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("model needs at least one dimension"));
        }
        let dims = dims
            .into_iter()
            .enumerate()
            .map(|(d, (labels, probs))| Dimension::new(d, labels, probs))
            .collect::<Result<Vec<_>>>()?;
        Ok(IndependentCategorical { dims })
    }

    /// `n` identically distributed dimensions.
    pub fn iid(n: usize, labels: &[f64], probs: &[f64]) -> Result<Self> {
        Self::new((0..n).map(|_| (labels.to_vec(), probs.to_vec())).collect())
    }

    /// Same labels as `self`, new probability vectors.
    pub fn with_probs(&self, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != self.dims.len() {
            return Err(Error::invalid(format!(
                "expected {} probability vectors, got {}",
                self.dims.len(),
                probs.len()
            )));
        }
        Self::new(self.dims.iter().zip(probs).map(|(d, p)| (d.labels.clone(), p)).collect())
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn n_states(&self, d: usize) -> usize {
        self.dims[d].labels.len()
    }

    pub fn labels(&self, d: usize) -> &[f64] {
        &self.dims[d].labels
    }

    pub fn probs(&self, d: usize) -> &[f64] {
        &self.dims[d].probs
    }

    pub fn all_probs(&self) -> Vec<Vec<f64>> {
        self.dims.iter().map(|d| d.probs.clone()).collect()
    }

    /// Number of points in the joint sample space, as a float (may be huge).
    pub fn state_space_size(&self) -> f64 {
        self.dims.iter().map(|d| d.labels.len() as f64).product()
    }

    /// True when both models have the same dimension count, state counts and labels.
    pub fn same_shape(&self, other: &IndependentCategorical) -> bool {
        self.dims.len() == other.dims.len()
            && self.dims.iter().zip(&other.dims).all(|(a, b)| a.labels == b.labels)
    }

    pub fn state_index(&self, d: usize, label: f64) -> Result<usize> {
        let dim = self
            .dims
            .get(d)
            .ok_or_else(|| Error::invalid(format!("dimension {d} out of range")))?;
        dim.labels
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::UnknownState { dim: d, state: label.to_string() })
    }

    /// Maps a row of state indices to the corresponding labels.
    pub fn labels_of(&self, x: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.dims.iter().zip(x).map(|(d, &i)| d.labels[i]));
    }

    /// Log-PMF of a labelled state vector.
    pub fn log_pmf_labels(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims.len() {
            return Err(Error::invalid(format!(
                "state has {} entries, model has {} dimensions",
                x.len(),
                self.dims.len()
            )));
        }
        let mut acc = 0.0;
        for (d, &label) in x.iter().enumerate() {
            let i = self.state_index(d, label)?;
            acc += self.dims[d].probs[i].ln();
        }
        Ok(acc)
    }

    /// Serializes to the model text format: an `[iid]` table when every
    /// dimension is identical, else one `[[dimension]]` table per dimension.
    /// Floats are written in shortest round-trip form.
    pub fn to_toml_string(&self) -> String {
        let first = &self.dims[0];
        if self.dims.len() > 1 && self.dims.iter().all(|d| d.labels == first.labels && d.probs == first.probs) {
            let file = ModelFile {
                iid: Some(IidRecord {
                    count: self.dims.len(),
                    labels: first.labels.clone(),
                    probs: first.probs.clone(),
                }),
                dimension: Vec::new(),
            };
            return toml::to_string(&file).expect("model serialization is infallible");
        }
        let file = ModelFile {
            iid: None,
            dimension: self
                .dims
                .iter()
                .map(|d| DimensionRecord { labels: d.labels.clone(), probs: d.probs.clone() })
                .collect(),
        };
        toml::to_string(&file).expect("model serialization is infallible")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::invalid(format!("model file: {e}")))?;
        match (file.iid, file.dimension.is_empty()) {
            (Some(iid), true) => Self::iid(iid.count, &iid.labels, &iid.probs),
            (None, false) => Self::new(file.dimension.into_iter().map(|r| (r.labels, r.probs)).collect()),
            (None, true) => Err(Error::invalid("model file has no dimensions")),
            (Some(_), false) => Err(Error::invalid("model file mixes `[iid]` with `[[dimension]]` tables")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iid: Option<IidRecord>,
    #[serde(default)]
    dimension: Vec<DimensionRecord>,
}

/// `count` identically distributed dimensions.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IidRecord {
    count: usize,
    labels: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DimensionRecord {
    labels: Vec<f64>,
    probs: Vec<f64>,
}

impl Serialize for IndependentCategorical {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let recs: Vec<DimensionRecord> = self
            .dims
            .iter()
            .map(|d| DimensionRecord { labels: d.labels.clone(), probs: d.probs.clone() })
            .collect();
        recs.serialize(s)
    }
}

impl StateDistribution for IndependentCategorical {
    fn n_dims(&self) -> usize {
        self.dims.len()
    }

    /// `sum_d ln v_{d, x_d}`; `-inf` when a selected probability is zero.
    fn log_pmf(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.dims.len() {
            return Err(Error::invalid(format!(
                "state has {} entries, model has {} dimensions",
                x.len(),
                self.dims.len()
            )));
        }
        let mut acc = 0.0;
        for (d, (dim, &i)) in self.dims.iter().zip(x).enumerate() {
            let p = dim
                .probs
                .get(i)
                .ok_or_else(|| Error::UnknownState { dim: d, state: format!("#{i}") })?;
            acc += p.ln();
        }
        Ok(acc)
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [usize]) {
        for (dim, slot) in self.dims.iter().zip(out.iter_mut()) {
            *slot = dim.draw(rng.random::<f64>());
        }
    }
}

/// Dirichlet prior parameters, one strictly positive vector per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPrior {
    theta: Vec<Vec<f64>>,
}

impl DirichletPrior {
    pub fn new(theta: Vec<Vec<f64>>) -> Result<Self> {
        for (d, t) in theta.iter().enumerate() {
            if let Some(v) = t.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "dimension {d}: prior parameter {v} must be positive and finite"
                )));
            }
        }
        Ok(DirichletPrior { theta })
    }

    pub fn theta(&self, d: usize) -> &[f64] {
        &self.theta[d]
    }

    fn check_shape(&self, shape: &IndependentCategorical) -> Result<()> {
        let ok = self.theta.len() == shape.n_dims()
            && self.theta.iter().enumerate().all(|(d, t)| t.len() == shape.n_states(d));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior shape does not match the model"))
        }
    }
}

/// Symmetric prior: every `theta_{d,j} = b`.
pub fn symmetric_prior(shape: &IndependentCategorical, b: f64) -> Result<DirichletPrior> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("prior concentration b = {b} must be positive")));
    }
    DirichletPrior::new((0..shape.n_dims()).map(|d| vec![b; shape.n_states(d)]).collect())
}

/// Sampled states with their limit-state values and weights.
///
/// States are stored row-major as state indices (`len() x n_dims`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSampleBatch {
    n_dims: usize,
    pub states: Vec<usize>,
    pub lsf_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub normalized: bool,
}

impl WeightedSampleBatch {
    pub fn from_states(n_dims: usize, states: Vec<usize>) -> Self {
        WeightedSampleBatch {
            n_dims,
            states,
            lsf_values: Vec::new(),
            weights: Vec::new(),
            normalized: false,
        }
    }

    /// Builds a batch from explicit rows and weights.
    pub fn from_rows(rows: &[Vec<usize>], weights: Vec<f64>) -> Result<Self> {
        let n_dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_dims) {
            return Err(Error::invalid("rows have different lengths"));
        }
        if weights.len() != rows.len() {
            return Err(Error::invalid("one weight per row is required"));
        }
        let mut batch = Self::from_states(n_dims, rows.concat());
        batch.weights = weights;
        Ok(batch)
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn len(&self) -> usize {
        self.states.len().checked_div(self.n_dims).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[usize] {
        &self.states[k * self.n_dims..(k + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.states.chunks_exact(self.n_dims.max(1))
    }

    /// Rescales weights so they sum to the batch size.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.weights.iter().copied().collect::<CompensatedSum>().value();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights("weights sum to zero".into()));
        }
        let scale = self.len() as f64 / total;
        self.weights.iter_mut().for_each(|w| *w *= scale);
        self.normalized = true;
        Ok(())
    }
}

/// Weighted maximum-likelihood update: `v_{d,i} = sum_k W_k I{x_kd = i} / sum_k W_k`.
pub fn weighted_mle(
    batch: &WeightedSampleBatch,
    shape: &IndependentCategorical,
) -> Result<IndependentCategorical> {
    if batch.n_dims() != shape.n_dims() {
        return Err(Error::invalid("batch and model dimensions differ"));
    }
    if batch.weights.len() != batch.len() {
        return Err(Error::invalid("batch has no weight per sample"));
    }
    if let Some(w) = batch.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("weight {w} is negative or not finite")));
    }
    let n = shape.n_dims();
    let mut sums: Vec<Vec<CompensatedSum>> =
        (0..n).map(|d| vec![CompensatedSum::new(); shape.n_states(d)]).collect();
    for (row, &w) in batch.rows().zip(&batch.weights) {
        if w == 0.0 {
            continue;
        }
        for (d, &i) in row.iter().enumerate() {
            sums[d]
                .get_mut(i)
                .ok_or_else(|| Error::UnknownState { dim: d, state: format!("#{i}") })?
                .add(w);
        }
    }
    let probs = sums
        .into_iter()
        .map(|s| {
            let v: Vec<f64> = s.iter().map(CompensatedSum::value).collect();
            let total: f64 = v.iter().copied().collect::<CompensatedSum>().value();
            if !(total > 0.0) {
                return Err(Error::DegenerateWeights("all weights are zero".into()));
            }
            Ok(v.into_iter().map(|x| x / total).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    shape.with_probs(probs)
}

/// Dirichlet posterior-predictive mean `(N v_hat + theta) / (N + sum theta)`.
pub fn posterior_predictive(
    fitted: &IndependentCategorical,
    sample_count: f64,
    prior: &DirichletPrior,
) -> Result<IndependentCategorical> {
    prior.check_shape(fitted)?;
    if !(sample_count > 0.0) {
        return Err(Error::invalid("sample count must be positive"));
    }
    let probs = (0..fitted.n_dims())
        .map(|d| {
            let theta = prior.theta(d);
            let denom = sample_count + theta.iter().sum::<f64>();
            fitted
                .probs(d)
                .iter()
                .zip(theta)
                .map(|(v, t)| (sample_count * v + t) / denom)
                .collect()
        })
        .collect();
    fitted.with_probs(probs)
}

/// Posterior mode `(N v_hat + theta - 1) / (N + sum (theta - 1))`; needs all `theta >= 1`.
pub fn map_estimate(
    fitted: &IndependentCategorical,
    sample_count: f64,
    prior: &DirichletPrior,
) -> Result<IndependentCategorical> {
    prior.check_shape(fitted)?;
    if !(sample_count > 0.0) {
        return Err(Error::invalid("sample count must be positive"));
    }
    if let Some(t) = prior.theta.iter().flatten().find(|t| **t < 1.0) {
        return Err(Error::UnsupportedPrior(format!(
            "posterior mode needs all prior parameters >= 1, found {t}"
        )));
    }
    let probs = (0..fitted.n_dims())
        .map(|d| {
            let theta = prior.theta(d);
            let denom = sample_count + theta.iter().map(|t| t - 1.0).sum::<f64>();
            fitted
                .probs(d)
                .iter()
                .zip(theta)
                .map(|(v, t)| (sample_count * v + t - 1.0) / denom)
                .collect()
        })
        .collect();
    fitted.with_probs(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary(p1: f64) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0, 1.0], vec![1.0 - p1, p1])
    }

    #[test]
    fn log_pmf_uniform() {
        let m = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        assert_eq!(m.log_pmf(&[0]).unwrap(), 0.5f64.ln());
    }

    #[test]
    fn log_pmf_degenerate_dimension_contributes_zero() {
        let m = IndependentCategorical::new(vec![
            (vec![0.0, 1.0], vec![1.0, 0.0]),
            (vec![0.0, 1.0], vec![0.3, 0.7]),
        ])
        .unwrap();
        assert_eq!(m.log_pmf(&[0, 1]).unwrap(), 0.7f64.ln());
        assert_eq!(m.log_pmf(&[1, 1]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn log_pmf_fifty_dim_all_zero() {
        let m = IndependentCategorical::iid(50, &[0.0, 1.0], &[0.999, 1e-3]).unwrap();
        let lp = m.log_pmf(&[0; 50]).unwrap();
        assert!((lp - 50.0 * 0.999f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_label_names_dimension() {
        let m = IndependentCategorical::iid(3, &[0.0, 3.0, 5.0], &[0.001, 0.1, 0.899]).unwrap();
        match m.log_pmf_labels(&[0.0, 4.0, 5.0]) {
            Err(Error::UnknownState { dim, .. }) => assert_eq!(dim, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.log_pmf(&[0, 3, 0]).is_err());
    }

    #[test]
    fn construction_rejects_bad_models() {
        assert!(IndependentCategorical::new(vec![(vec![0.0], vec![1.0])]).is_err());
        assert!(IndependentCategorical::new(vec![(vec![0.0, 0.0], vec![0.5, 0.5])]).is_err());
        assert!(IndependentCategorical::new(vec![(vec![0.0, 1.0], vec![0.5, 0.6])]).is_err());
        assert!(IndependentCategorical::new(vec![(vec![0.0, 1.0], vec![-0.1, 1.1])]).is_err());
    }

    #[test]
    fn point_mass_always_sampled() {
        let m = IndependentCategorical::new(vec![
            (vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]),
            binary(0.5),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = m.sample(&mut rng, 1000);
        assert!(batch.rows().all(|r| r[0] == 0));
    }

    #[test]
    fn zero_probability_state_never_sampled() {
        let m = IndependentCategorical::new(vec![(vec![0.0, 1.0, 2.0], vec![0.5, 0.0, 0.5])])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = m.sample(&mut rng, 10_000);
        assert!(batch.rows().all(|r| r[0] != 1));
    }

    #[test]
    fn empirical_frequency_within_binomial_bound() {
        let m = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let batch = m.sample(&mut rng, n);
        let freq = batch.rows().filter(|r| r[0] == 0).count() as f64 / n as f64;
        // 4 sigma of Binomial(1e6, 0.5) / 1e6 = 0.002
        assert!((freq - 0.5).abs() < 0.002, "{freq}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = IndependentCategorical::iid(5, &[0.0, 3.0, 5.0], &[0.2, 0.3, 0.5]).unwrap();
        let a = m.sample(&mut ChaCha8Rng::seed_from_u64(42), 100);
        let b = m.sample(&mut ChaCha8Rng::seed_from_u64(42), 100);
        assert_eq!(a, b);
    }

    #[test]
    fn mle_empirical_frequency() {
        let shape = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let batch =
            WeightedSampleBatch::from_rows(&[vec![0], vec![0], vec![1]], vec![1.0; 3]).unwrap();
        let v = weighted_mle(&batch, &shape).unwrap();
        assert!((v.probs(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.probs(0)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mle_zero_count() {
        let shape = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let batch =
            WeightedSampleBatch::from_rows(&[vec![0], vec![1], vec![1]], vec![2.0, 0.0, 0.0])
                .unwrap();
        let v = weighted_mle(&batch, &shape).unwrap();
        assert_eq!(v.probs(0), &[1.0, 0.0]);
    }

    #[test]
    fn mle_rejects_all_zero_weights() {
        let shape = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let batch = WeightedSampleBatch::from_rows(&[vec![0], vec![1]], vec![0.0, 0.0]).unwrap();
        assert!(matches!(weighted_mle(&batch, &shape), Err(Error::DegenerateWeights(_))));
    }

    #[test]
    fn normalize_sums_to_batch_size() {
        let mut batch =
            WeightedSampleBatch::from_rows(&[vec![0], vec![1], vec![1]], vec![0.1, 0.7, 3.0])
                .unwrap();
        batch.normalize().unwrap();
        let s: f64 = batch.weights.iter().sum();
        assert!((s - 3.0).abs() < 1e-9);
    }

    #[test]
    fn predictive_floor_example() {
        let fitted = IndependentCategorical::new(vec![(vec![0.0, 1.0], vec![0.0, 1.0])]).unwrap();
        let prior = symmetric_prior(&fitted, 5.0).unwrap();
        let mu = posterior_predictive(&fitted, 500.0, &prior).unwrap();
        assert_eq!(mu.probs(0)[0], 5.0 / 510.0);
    }

    #[test]
    fn predictive_large_sample_limit() {
        let fitted = IndependentCategorical::new(vec![binary(0.3)]).unwrap();
        let prior = symmetric_prior(&fitted, 1.0).unwrap();
        let mu = posterior_predictive(&fitted, 1e9, &prior).unwrap();
        for (a, b) in mu.probs(0).iter().zip(fitted.probs(0)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn predictive_single_sample() {
        let fitted = IndependentCategorical::new(vec![(vec![0.0, 1.0], vec![1.0, 0.0])]).unwrap();
        let prior = symmetric_prior(&fitted, 1.0).unwrap();
        let mu = posterior_predictive(&fitted, 1.0, &prior).unwrap();
        assert!((mu.probs(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mu.probs(0)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn map_with_unit_prior_is_mle() {
        let fitted = IndependentCategorical::new(vec![binary(0.37)]).unwrap();
        let prior = symmetric_prior(&fitted, 1.0).unwrap();
        let v = map_estimate(&fitted, 123.0, &prior).unwrap();
        assert_eq!(v.probs(0), fitted.probs(0));
    }

    #[test]
    fn map_symmetric_case() {
        let fitted = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let prior = DirichletPrior::new(vec![vec![2.0, 2.0]]).unwrap();
        let v = map_estimate(&fitted, 2.0, &prior).unwrap();
        assert_eq!(v.probs(0), &[0.5, 0.5]);
    }

    #[test]
    fn map_shifted_prior_equals_predictive() {
        let fitted = IndependentCategorical::iid(4, &[0.0, 1.0], &[0.8, 0.2]).unwrap();
        let fitted = fitted
            .with_probs(vec![vec![0.8, 0.2], vec![0.0, 1.0], vec![0.55, 0.45], vec![1.0, 0.0]])
            .unwrap();
        let map = map_estimate(&fitted, 500.0, &symmetric_prior(&fitted, 6.0).unwrap()).unwrap();
        let pp =
            posterior_predictive(&fitted, 500.0, &symmetric_prior(&fitted, 5.0).unwrap()).unwrap();
        for d in 0..4 {
            for (a, b) in map.probs(d).iter().zip(pp.probs(d)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn map_rejects_small_prior() {
        let fitted = IndependentCategorical::new(vec![binary(0.5)]).unwrap();
        let prior = symmetric_prior(&fitted, 0.5).unwrap();
        assert!(matches!(
            map_estimate(&fitted, 10.0, &prior),
            Err(Error::UnsupportedPrior(_))
        ));
    }

    #[test]
    fn symmetric_prior_shapes() {
        let m = IndependentCategorical::iid(2, &[0.0, 3.0, 5.0], &[0.001, 0.1, 0.899]).unwrap();
        let p = symmetric_prior(&m, 1.0).unwrap();
        assert_eq!(p.theta(1), &[1.0, 1.0, 1.0]);
        let b = IndependentCategorical::iid(2, &[0.0, 1.0], &[0.5, 0.5]).unwrap();
        assert_eq!(symmetric_prior(&b, 10.0).unwrap().theta(0), &[10.0, 10.0]);
        assert!(symmetric_prior(&m, 0.0).is_err());
        assert!(symmetric_prior(&m, -1.0).is_err());
    }

    #[test]
    fn prior_shape_mismatch_rejected() {
        let m = IndependentCategorical::iid(2, &[0.0, 1.0], &[0.5, 0.5]).unwrap();
        let prior = DirichletPrior::new(vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(posterior_predictive(&m, 10.0, &prior).is_err());
    }

    fn arb_model() -> impl Strategy<Value = IndependentCategorical> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2..5), 1..6).prop_map(|raw| {
            let dims = raw
                .into_iter()
                .map(|w| {
                    let total: f64 = w.iter().sum::<f64>() + 1e-3;
                    let mut p: Vec<f64> = w.iter().map(|x| (x + 1e-3 / w.len() as f64) / total).collect();
                    let s: f64 = p[1..].iter().sum();
                    p[0] = 1.0 - s;
                    ((0..p.len()).map(|i| i as f64 * 1.5).collect(), p)
                })
                .collect();
            IndependentCategorical::new(dims).unwrap()
        })
    }

    fn assert_simplex(m: &IndependentCategorical) {
        for d in 0..m.n_dims() {
            let p = m.probs(d);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn fitted_parameters_stay_on_simplex(
            model in arb_model(),
            seed in any::<u64>(),
            n in 1usize..200,
            b in 1.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut batch = model.sample(&mut rng, n);
            batch.weights = (0..n).map(|_| rng.random::<f64>() + 1e-6).collect();
            let v = weighted_mle(&batch, &model).unwrap();
            assert_simplex(&v);
            let prior = symmetric_prior(&model, b).unwrap();
            assert_simplex(&posterior_predictive(&v, n as f64, &prior).unwrap());
            assert_simplex(&map_estimate(&v, n as f64, &prior).unwrap());
        }

        #[test]
        fn mle_is_scale_invariant(
            model in arb_model(),
            seed in any::<u64>(),
            scale in 1e-6f64..1e6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut batch = model.sample(&mut rng, 64);
            batch.weights = (0..64).map(|_| rng.random::<f64>() + 1e-3).collect();
            let a = weighted_mle(&batch, &model).unwrap();
            batch.weights.iter_mut().for_each(|w| *w *= scale);
            let b = weighted_mle(&batch, &model).unwrap();
            for d in 0..model.n_dims() {
                for (x, y) in a.probs(d).iter().zip(b.probs(d)) {
                    prop_assert!((x - y).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn iid_text_round_trip(n in 2usize..60, p in 1e-6f64..0.5) {
            let model = IndependentCategorical::iid(n, &[0.0, 1.0], &[1.0 - p, p]).unwrap();
            let text = model.to_toml_string();
            prop_assert!(text.contains("[iid]"));
            prop_assert_eq!(IndependentCategorical::from_toml_str(&text).unwrap(), model);
        }

        #[test]
        fn model_text_round_trip_is_exact(model in arb_model()) {
            let text = model.to_toml_string();
            let back = IndependentCategorical::from_toml_str(&text).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
