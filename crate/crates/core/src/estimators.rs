//! Failure-probability estimators: crude Monte Carlo, fixed-density importance
//! sampling, multilevel cross-entropy (CE), improved CE (iCE) and Bayesian
//! improved CE (BiCE).
//!
//! All runs draw from a `ChaCha8Rng` seeded with `config.seed`. Sampling is
//! sequential on that stream; limit-state evaluation of a batch runs in
//! parallel and is collected in sample order, so results do not depend on the
//! thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{
    posterior_predictive, symmetric_prior, weighted_mle, DirichletPrior, IndependentCategorical,
    StateDistribution, WeightedSampleBatch,
};
use crate::error::{Error, Result};
use crate::lsf::LimitState;
use crate::numeric::{compensated_sum, exp_shifted, sample_cov};
use crate::smoothing::{
    auxiliary_lsf, convergence_check, log_smooth_indicator, solve_sigma, SigmaWeights,
};

pub const DEFAULT_T_MAX: usize = 50;

/// Crude MCS evaluates in chunks of this many samples to bound memory.
const MCS_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mcs,
    Is,
    Ce,
    Ice,
    Bice,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mcs => "mcs",
            Method::Is => "is",
            Method::Ce => "ce",
            Method::Ice => "ice",
            Method::Bice => "bice",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcs" => Ok(Method::Mcs),
            "is" => Ok(Method::Is),
            "ce" => Ok(Method::Ce),
            "ice" => Ok(Method::Ice),
            "bice" => Ok(Method::Bice),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Weight function driving the choice of the smoothing width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `p_X Phi(-g_a/sigma) / p_ref`.
    Standard,
    /// `Phi(-g_a/sigma) / Phi(-g_a/sigma_prev)`.
    Alternative,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Every `theta_{d,j} = b`.
    Symmetric(f64),
    Explicit(DirichletPrior),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    pub samples_per_level: usize,
    pub delta_target: f64,
    pub delta_epsilon: f64,
    pub prior: Prior,
    pub rho: f64,
    pub t_max: usize,
    pub seed: u64,
    /// Draw a new batch for the final estimate instead of reusing the batch
    /// that passed the stopping test.
    pub fresh_final_batch: bool,
    /// Overrides the default width-selection weights (iCE: standard,
    /// BiCE: alternative).
    pub sigma_weights: Option<WeightMode>,
}

impl EstimatorConfig {
    pub fn new(method: Method, samples_per_level: usize) -> Self {
        EstimatorConfig {
            method,
            samples_per_level,
            delta_target: 1.5,
            delta_epsilon: 1.5,
            prior: Prior::Symmetric(5.0),
            rho: 0.1,
            t_max: DEFAULT_T_MAX,
            seed: 0,
            fresh_final_batch: false,
            sigma_weights: None,
        }
    }

    /// Sets both `delta_target` and `delta_epsilon`.
    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta_target = delta;
        self.delta_epsilon = delta;
        self
    }

    pub fn with_prior_b(mut self, b: f64) -> Self {
        self.prior = Prior::Symmetric(b);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min_n = if self.method == Method::Mcs || self.method == Method::Is { 1 } else { 2 };
        if self.samples_per_level < min_n {
            return Err(Error::invalid(format!("samples per level must be at least {min_n}")));
        }
        if !(self.delta_target > 0.0) || !(self.delta_epsilon > 0.0) {
            return Err(Error::invalid("delta_target and delta_epsilon must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho must lie in (0, 1)"));
        }
        if self.t_max < 1 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if let Prior::Symmetric(b) = self.prior {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::invalid(format!("prior concentration b = {b} must be positive")));
            }
        }
        Ok(())
    }

    /// Symmetric concentration if the prior is symmetric.
    pub fn prior_b(&self) -> Option<f64> {
        match self.prior {
            Prior::Symmetric(b) => Some(b),
            Prior::Explicit(_) => None,
        }
    }

    fn resolve_prior(&self, input: &IndependentCategorical) -> Result<DirichletPrior> {
        match &self.prior {
            Prior::Symmetric(b) => symmetric_prior(input, *b),
            Prior::Explicit(p) => Ok(p.clone()),
        }
    }

    fn weight_mode(&self) -> WeightMode {
        self.sigma_weights.unwrap_or(match self.method {
            Method::Bice => WeightMode::Alternative,
            _ => WeightMode::Standard,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Single-batch estimators (MCS, IS).
    Direct,
    Converged,
    MaxLevels,
    /// CE threshold did not decrease.
    Stagnation,
    DegenerateWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub method: Method,
    pub samples_per_level: usize,
    pub seed: u64,
    pub p_hat: f64,
    /// Number of adaptation levels `T`.
    pub levels: usize,
    pub sigma_sequence: Vec<f64>,
    pub gamma_sequence: Vec<f64>,
    /// Stopping-test c.o.v. of every sampling round (iCE/BiCE).
    pub delta_hats: Vec<f64>,
    pub lsf_calls: u64,
    pub converged: bool,
    pub termination: Termination,
    /// Estimated c.o.v. of `p_hat` from the final batch, where defined.
    pub estimate_cov: Option<f64>,
    pub failures_in_final_batch: usize,
    pub final_params: Option<IndependentCategorical>,
    /// Sampling model of every adaptation level after the input (not serialized).
    #[serde(skip)]
    pub level_params: Vec<IndependentCategorical>,
}

impl EstimatorReport {
    fn new(method: Method, config_n: usize, seed: u64) -> Self {
        EstimatorReport {
            method,
            samples_per_level: config_n,
            seed,
            p_hat: 0.0,
            levels: 0,
            sigma_sequence: Vec::new(),
            gamma_sequence: Vec::new(),
            delta_hats: Vec::new(),
            lsf_calls: 0,
            converged: true,
            termination: Termination::Direct,
            estimate_cov: None,
            failures_in_final_batch: 0,
            final_params: None,
            level_params: Vec::new(),
        }
    }
}

/// `sqrt((exp(D) - 1) / N)`: c.o.v. of an IS estimator whose proposal is at
/// KL divergence `D` from the optimal density.
pub fn kl_cov_lower_bound(kl_divergence: f64, n: usize) -> Result<f64> {
    if !(kl_divergence >= 0.0) || n == 0 {
        return Err(Error::invalid("need D >= 0 and N >= 1"));
    }
    Ok((kl_divergence.exp_m1() / n as f64).sqrt())
}

/// Evaluates the limit state on every row of the batch, in parallel, keeping
/// sample order.
pub fn evaluate_batch<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    batch: &WeightedSampleBatch,
) -> Result<Vec<f64>> {
    let n = batch.n_dims();
    batch
        .states
        .par_chunks(n.max(1))
        .map_init(
            || Vec::with_capacity(n),
            |buf, row| {
                input.labels_of(row, buf);
                let g = lsf.value(buf)?;
                if g.is_nan() {
                    return Err(Error::Evaluation("limit state returned NaN".into()));
                }
                Ok(g)
            },
        )
        .collect()
}

fn log_pmfs<D: StateDistribution + ?Sized>(model: &D, batch: &WeightedSampleBatch) -> Result<Vec<f64>> {
    batch.rows().map(|row| model.log_pmf(row)).collect()
}

fn check_dims<L: LimitState + ?Sized>(lsf: &L, input: &IndependentCategorical) -> Result<()> {
    if lsf.n_dims() != input.n_dims() {
        return Err(Error::invalid(format!(
            "limit state has {} dimensions, input model has {}",
            lsf.n_dims(),
            input.n_dims()
        )));
    }
    Ok(())
}

/// IS terms `I{g <= 0} p_X / p_ref` for a batch; a failed sample outside the
/// proposal support is an error.
fn is_terms(g: &[f64], log_input: &[f64], log_ref: &[f64]) -> Result<Vec<f64>> {
    g.iter()
        .zip(log_input.iter().zip(log_ref))
        .enumerate()
        .map(|(k, (&g, (&li, &lr)))| {
            if g > 0.0 {
                Ok(0.0)
            } else if lr == f64::NEG_INFINITY {
                Err(Error::SupportViolation { sample: k })
            } else {
                Ok((li - lr).exp())
            }
        })
        .collect()
}

fn finish_is(report: &mut EstimatorReport, terms: &[f64]) {
    let n = terms.len() as f64;
    report.p_hat = compensated_sum(terms.iter().copied()) / n;
    report.failures_in_final_batch = terms.iter().filter(|&&t| t > 0.0).count();
    report.estimate_cov = sample_cov(terms).map(|c| c / n.sqrt());
}

/// Crude Monte Carlo: fraction of failed samples from the input model.
pub fn crude_mcs<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport> {
    check_dims(lsf, input)?;
    if n == 0 {
        return Err(Error::invalid("crude Monte Carlo needs at least one sample"));
    }
    let mut failures = 0usize;
    let mut left = n;
    while left > 0 {
        let m = left.min(MCS_CHUNK);
        let batch = input.sample(rng, m);
        failures += evaluate_batch(lsf, input, &batch)?.iter().filter(|&&g| g <= 0.0).count();
        left -= m;
    }
    let mut report = EstimatorReport::new(Method::Mcs, n, 0);
    report.p_hat = failures as f64 / n as f64;
    report.lsf_calls = n as u64;
    report.failures_in_final_batch = failures;
    report.estimate_cov =
        (failures > 0).then(|| ((1.0 - report.p_hat) / (n as f64 * report.p_hat)).sqrt());
    Ok(report)
}

/// Importance sampling with a fixed proposal.
pub fn is_estimate<L, D>(
    lsf: &L,
    input: &IndependentCategorical,
    is_model: &D,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport>
where
    L: LimitState + ?Sized,
    D: StateDistribution + ?Sized,
{
    check_dims(lsf, input)?;
    if is_model.n_dims() != input.n_dims() {
        return Err(Error::invalid("proposal and input model differ in dimension"));
    }
    if n == 0 {
        return Err(Error::invalid("importance sampling needs at least one sample"));
    }
    let batch = is_model.sample(rng, n);
    let g = evaluate_batch(lsf, input, &batch)?;
    let terms = is_terms(&g, &log_pmfs(input, &batch)?, &log_pmfs(is_model, &batch)?)?;
    let mut report = EstimatorReport::new(Method::Is, n, 0);
    report.lsf_calls = n as u64;
    finish_is(&mut report, &terms);
    Ok(report)
}

struct Round {
    batch: WeightedSampleBatch,
    g: Vec<f64>,
    log_input: Vec<f64>,
    log_ref: Vec<f64>,
}

fn draw_round<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    reference: &IndependentCategorical,
    n: usize,
    rng: &mut dyn RngCore,
    report: &mut EstimatorReport,
) -> Result<Round> {
    let batch = reference.sample(rng, n);
    let g = evaluate_batch(lsf, input, &batch)?;
    report.lsf_calls += n as u64;
    let log_input = log_pmfs(input, &batch)?;
    let log_ref = log_pmfs(reference, &batch)?;
    Ok(Round { batch, g, log_input, log_ref })
}

/// Multilevel cross-entropy with hard thresholds at the lower empirical
/// `rho`-quantile of the limit-state values.
pub fn ce_run<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    config: &EstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport> {
    check_dims(lsf, input)?;
    config.validate()?;
    let n = config.samples_per_level;
    let k = ((config.rho * n as f64).ceil() as usize).clamp(1, n);
    let mut report = EstimatorReport::new(Method::Ce, n, config.seed);
    let mut reference = input.clone();
    let mut prev_gamma = f64::INFINITY;

    for t in 1..=config.t_max {
        let mut round = draw_round(lsf, input, &reference, n, rng, &mut report)?;
        let gamma = lower_quantile(&round.g, k).max(0.0);
        report.gamma_sequence.push(gamma);

        if gamma >= prev_gamma {
            let terms = is_terms(&round.g, &round.log_input, &round.log_ref)?;
            finish_is(&mut report, &terms);
            report.levels = t - 1;
            report.converged = false;
            report.termination = Termination::Stagnation;
            report.final_params = Some(reference);
            return Ok(report);
        }

        round.batch.weights = round
            .g
            .iter()
            .zip(round.log_input.iter().zip(&round.log_ref))
            .map(|(&g, (&li, &lr))| if g <= gamma { (li - lr).exp() } else { 0.0 })
            .collect();
        let fitted = match weighted_mle(&round.batch, input) {
            Ok(m) => m,
            Err(Error::DegenerateWeights(_)) => {
                let terms = is_terms(&round.g, &round.log_input, &round.log_ref)?;
                finish_is(&mut report, &terms);
                report.levels = t - 1;
                report.converged = false;
                report.termination = Termination::DegenerateWeights;
                report.final_params = Some(reference);
                return Ok(report);
            }
            Err(e) => return Err(e),
        };
        report.level_params.push(fitted.clone());
        reference = fitted;
        report.levels = t;

        if gamma == 0.0 {
            let round = draw_round(lsf, input, &reference, n, rng, &mut report)?;
            let terms = is_terms(&round.g, &round.log_input, &round.log_ref)?;
            finish_is(&mut report, &terms);
            report.termination = Termination::Converged;
            report.final_params = Some(reference);
            return Ok(report);
        }
        prev_gamma = gamma;
    }

    // Level cap reached without hitting the failure domain.
    let round = draw_round(lsf, input, &reference, n, rng, &mut report)?;
    let terms = is_terms(&round.g, &round.log_input, &round.log_ref)?;
    finish_is(&mut report, &terms);
    report.converged = false;
    report.termination = Termination::MaxLevels;
    report.final_params = Some(reference);
    Ok(report)
}

/// `k`-th smallest value (1-based).
fn lower_quantile(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Improved cross-entropy with weighted maximum-likelihood updates.
pub fn ice_run<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    config: &EstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport> {
    smoothed_run(lsf, input, config, None, rng)
}

/// Bayesian improved cross-entropy: posterior-predictive updates under a
/// Dirichlet prior.
pub fn bice_run<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    config: &EstimatorConfig,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport> {
    let prior = config.resolve_prior(input)?;
    smoothed_run(lsf, input, config, Some(&prior), rng)
}

fn smoothed_run<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    config: &EstimatorConfig,
    prior: Option<&DirichletPrior>,
    rng: &mut dyn RngCore,
) -> Result<EstimatorReport> {
    check_dims(lsf, input)?;
    config.validate()?;
    let n = config.samples_per_level;
    let method = if prior.is_some() { Method::Bice } else { Method::Ice };
    let mode = config.weight_mode();
    let mut report = EstimatorReport::new(method, n, config.seed);
    let mut reference = input.clone();
    let mut sigma_prev = f64::INFINITY;
    let mut t = 1;

    let mut round = loop {
        let mut round = draw_round(lsf, input, &reference, n, rng, &mut report)?;
        let g_a = round.g.iter().map(|&g| auxiliary_lsf(g)).collect::<Result<Vec<f64>>>()?;
        let check = convergence_check(&g_a, sigma_prev, config.delta_epsilon)?;
        report.delta_hats.push(check.delta_hat);
        if check.converged {
            report.termination = Termination::Converged;
            break round;
        }
        if t > config.t_max {
            report.converged = false;
            report.termination = Termination::MaxLevels;
            break round;
        }

        let llr: Vec<f64> = round.log_input.iter().zip(&round.log_ref).map(|(a, b)| a - b).collect();
        let weights_mode = match mode {
            WeightMode::Standard => SigmaWeights::Standard { log_likelihood_ratio: &llr },
            WeightMode::Alternative => SigmaWeights::Alternative,
        };
        let sigma = solve_sigma(&g_a, sigma_prev, config.delta_target, weights_mode)?.sigma;

        let log_w = g_a
            .iter()
            .zip(&llr)
            .map(|(&g, &lr)| Ok(lr + log_smooth_indicator(g, sigma)?))
            .collect::<Result<Vec<f64>>>()?;
        let fitted = exp_shifted(&log_w)
            .ok_or_else(|| Error::DegenerateWeights("all weights vanish".into()))
            .and_then(|w| {
                round.batch.weights = w;
                round.batch.normalize()?;
                weighted_mle(&round.batch, input)
            });
        let fitted = match fitted {
            Ok(m) => m,
            Err(Error::DegenerateWeights(_)) => {
                report.converged = false;
                report.termination = Termination::DegenerateWeights;
                break round;
            }
            Err(e) => return Err(e),
        };
        reference = match prior {
            Some(p) => posterior_predictive(&fitted, n as f64, p)?,
            None => fitted,
        };
        report.level_params.push(reference.clone());
        report.sigma_sequence.push(sigma);
        sigma_prev = sigma;
        t += 1;
    };
    report.levels = t - 1;

    if config.fresh_final_batch {
        round = draw_round(lsf, input, &reference, n, rng, &mut report)?;
    }
    let terms = is_terms(&round.g, &round.log_input, &round.log_ref)?;
    finish_is(&mut report, &terms);
    report.final_params = Some(reference);
    Ok(report)
}

/// Runs the configured estimator on a stream seeded from `config.seed`.
/// Method `is` needs `is_model`.
pub fn estimate<L: LimitState + ?Sized>(
    lsf: &L,
    input: &IndependentCategorical,
    config: &EstimatorConfig,
    is_model: Option<&IndependentCategorical>,
) -> Result<EstimatorReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = match config.method {
        Method::Mcs => crude_mcs(lsf, input, config.samples_per_level, &mut rng)?,
        Method::Is => {
            let q = is_model.ok_or_else(|| Error::invalid("method `is` needs a proposal model"))?;
            if !q.same_shape(input) {
                return Err(Error::invalid("proposal model does not match the input model"));
            }
            is_estimate(lsf, input, q, config.samples_per_level, &mut rng)?
        }
        Method::Ce => ce_run(lsf, input, config, &mut rng)?,
        Method::Ice => ice_run(lsf, input, config, &mut rng)?,
        Method::Bice => bice_run(lsf, input, config, &mut rng)?,
    };
    report.seed = config.seed;
    Ok(report)
}
