//! Exact reference values, weighting diagnostics and the replication harness.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;

use crate::categorical::{IndependentCategorical, StateDistribution};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, EstimatorReport, Method};
use crate::lsf::{LimitState, LinearLsfSpec};
use crate::numeric::{compensated_sum, mean, sample_sd, CompensatedSum};
use crate::smoothing::{auxiliary_lsf, log_smooth_indicator};

/// Largest sample space the enumeration oracles accept.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// Largest lattice range the convolution oracle accepts.
const LATTICE_LIMIT: f64 = 1e8;

const ENUM_CHUNK: u64 = 1 << 12;

fn guard(input: &IndependentCategorical) -> Result<u64> {
    let size = input.state_space_size();
    if size > ENUMERATION_LIMIT as f64 {
        return Err(Error::StateSpaceTooLarge { size, limit: ENUMERATION_LIMIT });
    }
    Ok(size as u64)
}

/// Calls `f(state_indices, labels, log_pmf)` for every state in the chunk of
/// mixed-radix indices `[start, end)`.
fn for_each_state_in(
    input: &IndependentCategorical,
    start: u64,
    end: u64,
    mut f: impl FnMut(&[usize], &[f64], f64) -> Result<()>,
) -> Result<()> {
    let n = input.n_dims();
    let mut idx = vec![0usize; n];
    let mut rest = start;
    for (d, slot) in idx.iter_mut().enumerate() {
        let base = input.n_states(d) as u64;
        *slot = (rest % base) as usize;
        rest /= base;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in start..end {
        input.labels_of(&idx, &mut labels);
        let lp = input.log_pmf(&idx)?;
        f(&idx, &labels, lp)?;
        for (d, slot) in idx.iter_mut().enumerate() {
            *slot += 1;
            if *slot < input.n_states(d) {
                break;
            }
            *slot = 0;
        }
    }
    Ok(())
}

/// Runs `f` over every state, chunked in parallel; per-chunk results come back
/// in index order.
fn enumerate_chunks<T: Send>(
    input: &IndependentCategorical,
    f: impl Fn(u64, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let size = guard(input)?;
    let chunks = size.div_ceil(ENUM_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * ENUM_CHUNK, ((c + 1) * ENUM_CHUNK).min(size)))
        .collect()
}

/// Exact failure probability `sum_x p_X(x) I{g(x) <= 0}` by full enumeration.
pub fn enumerate_exact_pf<L: LimitState + ?Sized>(lsf: &L, input: &IndependentCategorical) -> Result<f64> {
    if lsf.n_dims() != input.n_dims() {
        return Err(Error::invalid("limit state and input model differ in dimension"));
    }
    let partial = enumerate_chunks(input, |a, b| {
        let mut acc = CompensatedSum::new();
        for_each_state_in(input, a, b, |_, x, lp| {
            if lsf.value(x)? <= 0.0 {
                acc.add(lp.exp());
            }
            Ok(())
        })?;
        Ok(acc)
    })?;
    let mut total = CompensatedSum::new();
    for p in partial {
        total.add(p.value());
    }
    Ok(total.value())
}

/// Exact `P(sum_d c_d X_d >= threshold)` for a linear limit state by dynamic
/// programming over the integer lattice of partial sums.
///
/// Every product `c_d * label` must be an integer; otherwise the sums do not
/// live on a lattice and [`Error::NonLattice`] is returned.
pub fn convolution_pf(spec: &LinearLsfSpec, input: &IndependentCategorical) -> Result<f64> {
    if spec.coefficients.len() != input.n_dims() {
        return Err(Error::invalid("coefficients and input model differ in dimension"));
    }
    let mut terms: Vec<Vec<(i64, f64)>> = Vec::with_capacity(input.n_dims());
    let (mut lo, mut hi) = (0i64, 0i64);
    for (d, &c) in spec.coefficients.iter().enumerate() {
        let mut dim = Vec::new();
        for (&l, &p) in input.labels(d).iter().zip(input.probs(d)) {
            let v = c * l;
            let r = v.round();
            if (v - r).abs() > 1e-9 * r.abs().max(1.0) || r.abs() > LATTICE_LIMIT {
                return Err(Error::NonLattice(format!("dimension {d}: {c} * {l} = {v}")));
            }
            if p > 0.0 {
                dim.push((r as i64, p));
            }
        }
        lo += dim.iter().map(|t| t.0).min().unwrap_or(0);
        hi += dim.iter().map(|t| t.0).max().unwrap_or(0);
        terms.push(dim);
    }
    if (hi - lo) as f64 > LATTICE_LIMIT {
        return Err(Error::NonLattice(format!("sum range {lo}..={hi} is too wide")));
    }
    let width = (hi - lo + 1) as usize;
    let mut pmf = vec![0.0; width];
    pmf[0] = 1.0;
    let mut offset = 0i64;
    let mut span = 1usize;
    for dim in &terms {
        let dmin = dim.iter().map(|t| t.0).min().unwrap_or(0);
        let dmax = dim.iter().map(|t| t.0).max().unwrap_or(0);
        let new_span = span + (dmax - dmin) as usize;
        let mut next = vec![0.0; new_span];
        for (i, &q) in pmf[..span].iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            for &(v, p) in dim {
                next[i + (v - dmin) as usize] += q * p;
            }
        }
        pmf[..new_span].copy_from_slice(&next);
        offset += dmin;
        span = new_span;
    }
    debug_assert_eq!(offset, lo);
    let tail = pmf[..span]
        .iter()
        .enumerate()
        .filter(|&(i, _)| (offset + i as i64) as f64 >= spec.threshold)
        .map(|(_, &p)| p);
    Ok(compensated_sum(tail))
}

/// Self-normalized IS estimate `sum_k (W_k / sum W) h_k`.
pub fn self_normalized_estimate(h_values: &[f64], weights: &[f64]) -> Result<f64> {
    if h_values.len() != weights.len() {
        return Err(Error::invalid("values and weights differ in length"));
    }
    let total = compensated_sum(weights.iter().copied());
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights("weights sum to zero".into()));
    }
    Ok(compensated_sum(h_values.iter().zip(weights).map(|(h, w)| h * w / total)))
}

/// Effective sample size `N / (1 + delta^2)` with `delta` the c.o.v. of the
/// weights taken with population moments, i.e. `(sum W)^2 / sum W^2`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.len() < 2 {
        return Err(Error::invalid("at least two weights are required"));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || max == 0.0 {
        return Err(Error::DegenerateWeights("weights must be non-negative with positive mean".into()));
    }
    let s1 = compensated_sum(weights.iter().map(|w| w / max));
    let s2 = compensated_sum(weights.iter().map(|w| (w / max) * (w / max)));
    Ok(s1 * s1 / s2)
}

/// Exact c.o.v. curve of the alternative weights under the previous smoothed
/// target, by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCurve {
    pub sigma_prev: f64,
    pub sigmas: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Curve value at `sigma_prev`.
    pub delta_at_prev: f64,
    /// Curve value at a width `1e-12` times the smallest positive `g_a`.
    pub delta_near_zero: f64,
    /// Closed-form limit `sqrt(Z / (0.5 p_f) - 1)`.
    pub delta_zero_limit: f64,
    /// Normalizing constant of the previous smoothed target.
    pub z: f64,
    pub p_f: f64,
}

/// Evaluates `delta(sigma) = cov(Phi(-g_a/sigma) / Phi(-g_a/sigma_prev))`
/// with `X ~ p_X Phi(-g_a/sigma_prev) / Z` on every width of `grid`.
pub fn exact_delta_curve<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    sigma_prev: f64,
    grid: &[f64],
) -> Result<DeltaCurve> {
    if !(sigma_prev > 0.0) {
        return Err(Error::invalid("previous width must be positive"));
    }
    if let Some(s) = grid.iter().find(|&&s| !(s > 0.0) || s > sigma_prev) {
        return Err(Error::invalid(format!("grid width {s} outside (0, {sigma_prev}]")));
    }
    let states: Vec<(f64, f64)> = enumerate_chunks(input, |a, b| {
        let mut out = Vec::with_capacity((b - a) as usize);
        for_each_state_in(input, a, b, |_, x, lp| {
            out.push((lp, auxiliary_lsf(lsf.value(x)?)?));
            Ok(())
        })?;
        Ok(out)
    })?
    .into_iter()
    .flatten()
    .filter(|(lp, _)| *lp > f64::NEG_INFINITY)
    .collect();

    let p_f = compensated_sum(states.iter().filter(|s| s.1 == 0.0).map(|s| s.0.exp()));
    if !(p_f > 0.0) {
        return Err(Error::invalid("the failure domain has zero probability"));
    }
    let log_prev: Vec<f64> =
        states.iter().map(|&(_, g)| log_smooth_indicator(g, sigma_prev)).collect::<Result<_>>()?;
    let z = compensated_sum(states.iter().zip(&log_prev).map(|(s, lq)| (s.0 + lq).exp()));
    let log_z = z.ln();
    let target: Vec<f64> = states.iter().zip(&log_prev).map(|(s, lq)| (s.0 + lq - log_z).exp()).collect();

    let delta = |sigma: f64| -> Result<f64> {
        let ratio: Vec<f64> = states
            .iter()
            .zip(&log_prev)
            .map(|(s, lq)| {
                if sigma == sigma_prev {
                    Ok(1.0)
                } else {
                    Ok((log_smooth_indicator(s.1, sigma)? - lq).exp())
                }
            })
            .collect::<Result<_>>()?;
        let mass = compensated_sum(target.iter().copied());
        let m = compensated_sum(target.iter().zip(&ratio).map(|(p, r)| p * r)) / mass;
        let var = compensated_sum(target.iter().zip(&ratio).map(|(p, r)| p * (r - m) * (r - m))) / mass;
        Ok(var.sqrt() / m)
    };

    let min_pos = states.iter().map(|s| s.1).filter(|&g| g > 0.0).fold(f64::INFINITY, f64::min);
    let near_zero = if min_pos.is_finite() { 1e-12 * min_pos } else { 1e-12 };
    let deltas = grid.iter().map(|&s| delta(s)).collect::<Result<Vec<f64>>>()?;
    Ok(DeltaCurve {
        sigma_prev,
        sigmas: grid.to_vec(),
        deltas,
        delta_at_prev: delta(sigma_prev)?,
        delta_near_zero: delta(near_zero.min(sigma_prev))?,
        delta_zero_limit: (z / (0.5 * p_f) - 1.0).sqrt(),
        z,
        p_f,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| if i + 1 == n { hi } else { (a + (b - a) * i as f64 / (n - 1) as f64).exp() })
        .collect()
}

/// An explicitly tabulated distribution over state-index vectors.
#[derive(Debug, Clone)]
pub struct EnumeratedDistribution {
    n_dims: usize,
    states: Vec<Vec<usize>>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    lookup: HashMap<Vec<usize>, usize>,
}

impl EnumeratedDistribution {
    pub fn new(n_dims: usize, states: Vec<Vec<usize>>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != probs.len() {
            return Err(Error::invalid("need one probability per state and at least one state"));
        }
        if states.iter().any(|s| s.len() != n_dims) {
            return Err(Error::invalid("state length differs from the dimension count"));
        }
        let total = compensated_sum(probs.iter().copied());
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probabilities must be non-negative and sum to 1"));
        }
        let mut acc = CompensatedSum::new();
        let cumulative = probs
            .iter()
            .map(|&p| {
                acc.add(p);
                acc.value()
            })
            .collect();
        let lookup = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(EnumeratedDistribution { n_dims, states, probs, cumulative, lookup })
    }

    /// The input model conditioned on failure (the zero-variance proposal).
    pub fn conditional_on_failure<L: LimitState + ?Sized>(
        lsf: &L,
        input: &IndependentCategorical,
    ) -> Result<Self> {
        let failed: Vec<(Vec<usize>, f64)> = enumerate_chunks(input, |a, b| {
            let mut out = Vec::new();
            for_each_state_in(input, a, b, |idx, x, lp| {
                if lsf.value(x)? <= 0.0 && lp > f64::NEG_INFINITY {
                    out.push((idx.to_vec(), lp.exp()));
                }
                Ok(())
            })?;
            Ok(out)
        })?
        .into_iter()
        .flatten()
        .collect();
        let p_f = compensated_sum(failed.iter().map(|f| f.1));
        if !(p_f > 0.0) {
            return Err(Error::invalid("the failure domain has zero probability"));
        }
        let (states, probs): (Vec<_>, Vec<_>) = failed.into_iter().map(|(s, p)| (s, p / p_f)).unzip();
        Self::new(input.n_dims(), states, probs)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

impl StateDistribution for EnumeratedDistribution {
    fn n_dims(&self) -> usize {
        self.n_dims
    }

    fn log_pmf(&self, x: &[usize]) -> Result<f64> {
        Ok(self.lookup.get(x).map_or(f64::NEG_INFINITY, |&i| self.probs[i].ln()))
    }

    fn sample_into(&self, rng: &mut dyn RngCore, out: &mut [usize]) {
        let u = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.states.len() - 1);
        out.copy_from_slice(&self.states[i]);
    }
}

/// Statistics of repeated independent estimator runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub method: Method,
    pub samples_per_level: usize,
    pub b: Option<f64>,
    pub delta: f64,
    pub reps: usize,
    pub true_pf: f64,
    pub mean: f64,
    pub rel_bias: f64,
    /// Sample standard deviation over mean of the estimates.
    pub sample_cov: f64,
    /// Standard error of the replication mean.
    pub std_error: f64,
    pub mean_cost: f64,
    /// Runs that did not converge (their estimates are included).
    pub fail_count: usize,
    /// Final sampling probabilities averaged over runs.
    pub mean_final_params: Option<Vec<Vec<f64>>>,
}

pub const SUMMARY_CSV_HEADER: &str = "method,N,b,delta,R,rel_bias,sample_cov,mean_cost,fail_count";
pub const REPS_CSV_HEADER: &str = "rep,seed,p_hat,levels,lsf_calls,converged";

impl ReplicationSummary {
    pub fn from_reports(
        config: &EstimatorConfig,
        reports: &[EstimatorReport],
        true_pf: f64,
    ) -> Result<Self> {
        if reports.len() < 2 {
            return Err(Error::invalid("at least two replications are required"));
        }
        if !(true_pf > 0.0) {
            return Err(Error::invalid("reference failure probability must be positive"));
        }
        let estimates: Vec<f64> = reports.iter().map(|r| r.p_hat).collect();
        let m = mean(&estimates);
        let sd = sample_sd(&estimates);
        let r = reports.len() as f64;
        let mean_final_params = mean_params(reports);
        Ok(ReplicationSummary {
            method: config.method,
            samples_per_level: config.samples_per_level,
            b: (config.method == Method::Bice).then(|| config.prior_b()).flatten(),
            delta: config.delta_target,
            reps: reports.len(),
            true_pf,
            mean: m,
            rel_bias: m / true_pf - 1.0,
            sample_cov: if m > 0.0 { sd / m } else { f64::NAN },
            std_error: sd / r.sqrt(),
            mean_cost: compensated_sum(reports.iter().map(|r| r.lsf_calls as f64)) / r,
            fail_count: reports.iter().filter(|r| !r.converged).count(),
            mean_final_params,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method.name(),
            self.samples_per_level,
            self.b.map(fmt_num).unwrap_or_default(),
            fmt_num(self.delta),
            self.reps,
            fmt_num(self.rel_bias),
            fmt_num(self.sample_cov),
            fmt_num(self.mean_cost),
            self.fail_count
        )
    }

    /// Table of averaged final probabilities: `dim,state,label,prob` rows.
    pub fn mean_params_csv(&self, input: &IndependentCategorical) -> Option<String> {
        let params = self.mean_final_params.as_ref()?;
        let mut out = String::from("dim,state,label,prob\n");
        for (d, probs) in params.iter().enumerate() {
            for (i, p) in probs.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", d + 1, i, fmt_num(input.labels(d)[i]), fmt_num(*p)));
            }
        }
        Some(out)
    }
}

fn mean_params(reports: &[EstimatorReport]) -> Option<Vec<Vec<f64>>> {
    let first = reports.first()?.final_params.as_ref()?;
    let mut sums: Vec<Vec<CompensatedSum>> =
        (0..first.n_dims()).map(|d| vec![CompensatedSum::new(); first.n_states(d)]).collect();
    for r in reports {
        let params = r.final_params.as_ref()?;
        if !params.same_shape(first) {
            return None;
        }
        for (d, row) in sums.iter_mut().enumerate() {
            for (acc, &p) in row.iter_mut().zip(params.probs(d)) {
                acc.add(p);
            }
        }
    }
    let n = reports.len() as f64;
    Some(sums.into_iter().map(|row| row.iter().map(|s| s.value() / n).collect()).collect())
}

pub fn reps_csv(reports: &[EstimatorReport]) -> String {
    let mut out = format!("{REPS_CSV_HEADER}\n");
    for (r, rep) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r,
            rep.seed,
            fmt_num(rep.p_hat),
            rep.levels,
            rep.lsf_calls,
            rep.converged
        ));
    }
    out
}

/// Locale-independent number formatting: plain decimals for moderate
/// magnitudes, shortest round-trip scientific notation otherwise.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Seed of replication `r`.
pub fn replication_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add(r as u64)
}

/// Runs `run(seed)` for `reps` derived seeds in parallel; results are in
/// replication order.
pub fn replicate_with<T: Send>(
    reps: usize,
    base_seed: u64,
    run: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..reps).into_par_iter().map(|r| run(replication_seed(base_seed, r))).collect()
}

/// Runs the configured estimator `reps` times with seeds `base_seed + r` and
/// summarizes against `true_pf`.
pub fn replicate<L: LimitState + ?Sized>(
    config: &EstimatorConfig,
    lsf: &L,
    input: &IndependentCategorical,
    reps: usize,
    base_seed: u64,
    true_pf: f64,
) -> Result<(ReplicationSummary, Vec<EstimatorReport>)> {
    if reps < 2 {
        return Err(Error::invalid("at least two replications are required"));
    }
    config.validate()?;
    let reports = replicate_with(reps, base_seed, |seed| {
        let cfg = EstimatorConfig { seed, ..config.clone() };
        estimate(lsf, input, &cfg, None)
    })?;
    let summary = ReplicationSummary::from_reports(config, &reports, true_pf)?;
    Ok((summary, reports))
}
