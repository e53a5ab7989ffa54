//! Smoothed failure indicators and the adaptive choice of the smoothing width.
//!
//! Intermediate targets are `p_X(x) * Phi(-g_a(x) / sigma)` with the clamped
//! limit state `g_a = max(g, 0)`. Every quantity is handled in the log domain
//! so that ratios `g_a / sigma` far into the normal tail stay finite.

use crate::error::{Error, Result};
use crate::numeric::{exp_shifted, sample_cov};

/// Relative tolerance (in `ln sigma`) of the bisection in [`solve_sigma`].
pub const SIGMA_TOLERANCE: f64 = 1e-6;

/// `sigma_floor = SIGMA_FLOOR_FACTOR * max(g_a)` (or times 1 when all `g_a` are zero).
pub const SIGMA_FLOOR_FACTOR: f64 = 1e-10;

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_8;

/// Clamped limit state: `g` if `g > 0`, else `0`.
pub fn auxiliary_lsf(g: f64) -> Result<f64> {
    if !g.is_finite() {
        return Err(Error::Evaluation(format!("limit-state value {g} is not finite")));
    }
    Ok(if g > 0.0 { g } else { 0.0 })
}

/// `ln Phi(x)` for the standard normal CDF, accurate far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 5.0 {
        // Phi(x) = 1 - Phi(-x); ln1p keeps the tiny complement.
        return (-0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln_1p();
    }
    if x > -20.0 {
        return (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln();
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Asymptotic series: Phi(x) ~ phi(x)/|x| * sum_k (-1)^k (2k-1)!! / x^{2k}.
    let z = -x;
    let z2 = z * z;
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=12 {
        term *= -((2 * k - 1) as f64) / z2;
        series += term;
    }
    -0.5 * z2 - z.ln() - LN_2PI_HALF + series.ln()
}

/// `ln Phi(-g_a / sigma)`; `sigma = +inf` gives `ln 0.5`.
pub fn log_smooth_indicator(g_a: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("smoothing width {sigma} must be positive")));
    }
    if !(g_a >= 0.0) {
        return Err(Error::invalid(format!("clamped limit state {g_a} must be non-negative")));
    }
    if g_a == 0.0 || sigma == f64::INFINITY {
        return Ok(0.5f64.ln());
    }
    Ok(log_normal_cdf(-g_a / sigma))
}

/// Log of the iCE weight `p_X(x) Phi(-g_a/sigma) / p_ref(x)` given the log
/// likelihood ratios `ln p_X - ln p_ref`.
pub fn standard_log_weights(
    log_likelihood_ratio: &[f64],
    g_a: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    if log_likelihood_ratio.len() != g_a.len() {
        return Err(Error::invalid("likelihood ratios and limit-state values differ in length"));
    }
    g_a.iter()
        .zip(log_likelihood_ratio)
        .map(|(&g, &lr)| Ok(lr + log_smooth_indicator(g, sigma)?))
        .collect()
}

/// Self-normalized iCE weights for a batch, shifted by the largest log-weight.
///
/// `log_input` and `log_ref` are the log-PMFs of the batch states under the
/// input and the reference (sampling) model. A sample with zero reference
/// probability is a support violation.
pub fn standard_weights(
    log_input: &[f64],
    log_ref: &[f64],
    g_a: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    if log_input.len() != log_ref.len() {
        return Err(Error::invalid("log-PMF vectors differ in length"));
    }
    let mut ratios = Vec::with_capacity(log_input.len());
    for (k, (&li, &lr)) in log_input.iter().zip(log_ref).enumerate() {
        if lr == f64::NEG_INFINITY {
            return Err(Error::SupportViolation { sample: k });
        }
        ratios.push(li - lr);
    }
    let logs = standard_log_weights(&ratios, g_a, sigma)?;
    exp_shifted(&logs).ok_or_else(|| Error::DegenerateWeights("all weights vanish".into()))
}

/// `Phi(-g_a/sigma) / Phi(-g_a/sigma_prev)` computed in the log domain.
pub fn alternative_log_weights(g_a: &[f64], sigma: f64, sigma_prev: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || sigma > sigma_prev {
        return Err(Error::invalid(format!(
            "trial width {sigma} must lie in (0, {sigma_prev}]"
        )));
    }
    g_a.iter()
        .map(|&g| {
            if sigma == sigma_prev {
                // Validate g anyway.
                log_smooth_indicator(g, sigma)?;
                return Ok(0.0);
            }
            Ok(log_smooth_indicator(g, sigma)? - log_smooth_indicator(g, sigma_prev)?)
        })
        .collect()
}

/// Alternative weights `Phi(-g_a/sigma) / Phi(-g_a/sigma_prev)`; exactly 1
/// where `g_a = 0` or `sigma = sigma_prev`.
pub fn alternative_weights(g_a: &[f64], sigma: f64, sigma_prev: f64) -> Result<Vec<f64>> {
    Ok(alternative_log_weights(g_a, sigma, sigma_prev)?.into_iter().map(f64::exp).collect())
}

/// Which weight function drives the width selection.
#[derive(Debug, Clone, Copy)]
pub enum SigmaWeights<'a> {
    /// `p_X Phi(-g_a/sigma) / p_ref`, needs `ln p_X - ln p_ref` per sample.
    Standard { log_likelihood_ratio: &'a [f64] },
    /// `Phi(-g_a/sigma) / Phi(-g_a/sigma_prev)`.
    Alternative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    /// Bisection bracketed and hit the target.
    Bisection,
    /// Sampled c.o.v. was not monotone; golden-section minimization used.
    GoldenSection,
    /// Target already met at the lower search bound.
    LowerBound,
    /// Target exceeded over the whole search interval.
    UpperBound,
    /// Every sample fails; the floor width is returned.
    AllFailed,
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaSolution {
    pub sigma: f64,
    /// Sample c.o.v. of the selected weights at `sigma` (`None` if undefined).
    pub delta_hat: Option<f64>,
    pub outcome: SolveOutcome,
}

impl SigmaSolution {
    pub fn converged_immediately(&self) -> bool {
        self.outcome == SolveOutcome::AllFailed
    }
}

/// Sample c.o.v. of the weights of a mode at width `sigma`.
pub fn weight_cov(g_a: &[f64], sigma: f64, sigma_prev: f64, mode: SigmaWeights<'_>) -> Result<Option<f64>> {
    let logs = match mode {
        SigmaWeights::Standard { log_likelihood_ratio } => {
            standard_log_weights(log_likelihood_ratio, g_a, sigma)?
        }
        SigmaWeights::Alternative => alternative_log_weights(g_a, sigma.min(sigma_prev), sigma_prev)?,
    };
    Ok(exp_shifted(&logs).and_then(|w| sample_cov(&w)))
}

/// Selects the next smoothing width so that the sample c.o.v. of the weights
/// matches `delta_target`, searching `(0, sigma_prev)`.
///
/// Bisection runs on `ln sigma`. If the sampled c.o.v. turns out non-monotone
/// inside the bracket the search falls back to golden-section minimization of
/// `|delta_hat - delta_target|`.
pub fn solve_sigma(
    g_a: &[f64],
    sigma_prev: f64,
    delta_target: f64,
    mode: SigmaWeights<'_>,
) -> Result<SigmaSolution> {
    if !(delta_target > 0.0) {
        return Err(Error::invalid("target c.o.v. must be positive"));
    }
    if !(sigma_prev > 0.0) {
        return Err(Error::invalid("previous width must be positive"));
    }
    if g_a.len() < 2 {
        return Err(Error::invalid("at least two samples are required"));
    }
    let max_g = g_a.iter().copied().fold(0.0, f64::max);
    if max_g == 0.0 {
        return Ok(SigmaSolution {
            sigma: SIGMA_FLOOR_FACTOR.min(sigma_prev * 0.5),
            delta_hat: Some(0.0),
            outcome: SolveOutcome::AllFailed,
        });
    }

    let upper = if sigma_prev.is_finite() { sigma_prev } else { 10.0 * max_g };
    let lower = (SIGMA_FLOOR_FACTOR * max_g).min(upper * 0.5);
    // Undefined c.o.v. (no mass at all) is treated as "too large".
    let cov = |s: f64| -> Result<f64> {
        Ok(weight_cov(g_a, s, sigma_prev, mode)?.unwrap_or(f64::INFINITY))
    };

    let d_lo = cov(lower)?;
    if d_lo <= delta_target {
        return Ok(SigmaSolution { sigma: lower, delta_hat: Some(d_lo), outcome: SolveOutcome::LowerBound });
    }
    let d_hi = cov(upper)?;
    if d_hi >= delta_target {
        // No width in the interval meets the target; stay just below the upper end.
        let sigma = if sigma_prev.is_finite() { upper * (1.0 - SIGMA_TOLERANCE) } else { upper };
        return Ok(SigmaSolution { sigma, delta_hat: Some(cov(sigma)?), outcome: SolveOutcome::UpperBound });
    }

    let (mut a, mut b) = (lower.ln(), upper.ln());
    let (mut fa, mut fb) = (d_lo, d_hi);
    while b - a > SIGMA_TOLERANCE {
        let m = 0.5 * (a + b);
        let fm = cov(m.exp())?;
        if fm > fa || fm < fb {
            return golden_section(g_a, sigma_prev, delta_target, mode, a, b);
        }
        if fm > delta_target {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
    }
    let (s, d) = if (fa - delta_target).abs() <= (fb - delta_target).abs() {
        (a.exp(), fa)
    } else {
        (b.exp(), fb)
    };
    Ok(SigmaSolution { sigma: s.min(upper_exclusive(sigma_prev, upper)), delta_hat: Some(d), outcome: SolveOutcome::Bisection })
}

fn upper_exclusive(sigma_prev: f64, upper: f64) -> f64 {
    if sigma_prev.is_finite() {
        upper * (1.0 - f64::EPSILON)
    } else {
        upper
    }
}

fn golden_section(
    g_a: &[f64],
    sigma_prev: f64,
    delta_target: f64,
    mode: SigmaWeights<'_>,
    mut a: f64,
    mut b: f64,
) -> Result<SigmaSolution> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let obj = |l: f64| -> Result<f64> {
        Ok((weight_cov(g_a, l.exp(), sigma_prev, mode)?.unwrap_or(f64::INFINITY) - delta_target).abs())
    };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (obj(c)?, obj(d)?);
    while b - a > SIGMA_TOLERANCE {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = obj(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = obj(d)?;
        }
    }
    let l = if fc < fd { c } else { d };
    let upper = if sigma_prev.is_finite() { sigma_prev } else { f64::INFINITY };
    let sigma = l.exp().min(upper_exclusive(sigma_prev, upper));
    Ok(SigmaSolution {
        sigma,
        delta_hat: weight_cov(g_a, sigma, sigma_prev, mode)?,
        outcome: SolveOutcome::GoldenSection,
    })
}

/// Outcome of the stopping test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCheck {
    pub converged: bool,
    /// Sample c.o.v. of `I{g_a = 0} / Phi(-g_a / sigma_prev)`; `+inf` when no sample fails.
    pub delta_hat: f64,
}

/// Stopping test: c.o.v. of the likelihood ratio between the optimal density
/// and the current smoothed target, estimated on the batch.
pub fn convergence_check(g_a: &[f64], sigma_prev: f64, delta_epsilon: f64) -> Result<ConvergenceCheck> {
    let ratios = g_a
        .iter()
        .map(|&g| {
            if g <= 0.0 {
                Ok((-log_smooth_indicator(0.0, sigma_prev)?).exp())
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(match sample_cov(&ratios) {
        Some(delta_hat) => ConvergenceCheck { converged: delta_hat <= delta_epsilon, delta_hat },
        None => ConvergenceCheck { converged: false, delta_hat: f64::INFINITY },
    })
}

/// Width state carried across adaptive levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingState {
    pub sigma_prev: f64,
    pub sigma_curr: f64,
    pub level_index: usize,
    pub delta_target: f64,
    pub delta_epsilon: f64,
}

impl SmoothingState {
    pub fn new(delta_target: f64, delta_epsilon: f64) -> Result<Self> {
        if !(delta_target > 0.0) || !(delta_epsilon > 0.0) {
            return Err(Error::invalid("c.o.v. targets must be positive"));
        }
        Ok(SmoothingState {
            sigma_prev: f64::INFINITY,
            sigma_curr: f64::INFINITY,
            level_index: 0,
            delta_target,
            delta_epsilon,
        })
    }

    /// Records a new width; it must be strictly smaller than the current one.
    pub fn advance(&mut self, sigma: f64) -> Result<()> {
        if !(sigma < self.sigma_curr) {
            return Err(Error::invalid(format!(
                "width {sigma} does not decrease from {}",
                self.sigma_curr
            )));
        }
        self.sigma_prev = self.sigma_curr;
        self.sigma_curr = sigma;
        self.level_index += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamp() {
        assert_eq!(auxiliary_lsf(-3.2).unwrap(), 0.0);
        assert_eq!(auxiliary_lsf(0.0).unwrap(), 0.0);
        assert_eq!(auxiliary_lsf(4.7).unwrap(), 4.7);
        assert!(auxiliary_lsf(f64::NAN).is_err());
        assert!(auxiliary_lsf(f64::INFINITY).is_err());
    }

    #[test]
    fn smooth_indicator_at_zero() {
        for s in [1e-12, 0.3, 7.0, f64::INFINITY] {
            assert_eq!(log_smooth_indicator(0.0, s).unwrap(), 0.5f64.ln());
        }
    }

    #[test]
    fn smooth_indicator_table_value() {
        let v = log_smooth_indicator(1.0, 1.0).unwrap().exp();
        assert!((v - 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn smooth_indicator_deep_tail() {
        // Oracle: ln Phi(-z) ~ -z^2/2 - ln(z sqrt(2 pi)) at z = 20.
        let v = log_smooth_indicator(10.0, 0.5).unwrap();
        let z: f64 = 20.0;
        let approx = -0.5 * z * z - (z * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!(v.is_finite());
        assert!((v - approx).abs() < 3e-3, "{v} vs {approx}");
        assert!((v + 203.9).abs() < 0.05);
    }

    #[test]
    fn smooth_indicator_rejects_bad_sigma() {
        assert!(log_smooth_indicator(1.0, 0.0).is_err());
        assert!(log_smooth_indicator(1.0, -1.0).is_err());
    }

    #[test]
    fn log_cdf_is_continuous_across_branches() {
        for x in [-20.0f64, 5.0] {
            let lo = log_normal_cdf(x - 1e-9);
            let hi = log_normal_cdf(x + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1e-12), "{x}: {lo} {hi}");
        }
    }

    #[test]
    fn log_cdf_tail_matches_reference_values() {
        // ln Phi(-30) and ln Phi(-40) from high-precision references.
        assert!((log_normal_cdf(-30.0) - (-454.321_243_956_343_2)).abs() < 1e-9);
        assert!((log_normal_cdf(-40.0) - (-804.608_442_013_753_8)).abs() < 1e-9);
    }

    #[test]
    fn standard_weights_reference_is_input() {
        let li = [-1.0, -2.0, -3.0];
        let w = standard_weights(&li, &li, &[0.3, 2.0, 5.0], f64::INFINITY).unwrap();
        assert!(w.iter().all(|&x| x == w[0]));
        let w = standard_weights(&li, &li, &[0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(w.iter().all(|&x| x == w[0]));
    }

    #[test]
    fn standard_weight_single_sample_ratio() {
        let logs = standard_log_weights(&[(0.1f64 / 0.2).ln()], &[0.0], 1.0).unwrap();
        assert!((logs[0].exp() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn standard_weights_support_violation() {
        let err = standard_weights(&[-1.0, -1.0], &[-1.0, f64::NEG_INFINITY], &[0.0, 0.0], 1.0);
        assert!(matches!(err, Err(Error::SupportViolation { sample: 1 })));
    }

    #[test]
    fn alternative_weights_examples() {
        let w = alternative_weights(&[0.0, 1.0, 3.0], 0.7, 0.7).unwrap();
        assert_eq!(w, vec![1.0; 3]);
        let w = alternative_weights(&[0.0, 0.0], 1e-6, f64::INFINITY).unwrap();
        assert_eq!(w, vec![1.0; 2]);
        let w = alternative_weights(&[2.0], 1.0, f64::INFINITY).unwrap();
        assert!((w[0] - 0.022_750_131_948_179_2 / 0.5).abs() < 1e-14);
        assert!(alternative_weights(&[1.0], 2.0, 1.0).is_err());
    }

    #[test]
    fn weights_finite_for_extreme_ratios() {
        let g: Vec<f64> = (0..=40).map(f64::from).collect();
        let w = alternative_log_weights(&g, 1.0, 2.0).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        let w = standard_log_weights(&vec![0.0; g.len()], &g, 1.0).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn all_failed_returns_floor() {
        let s = solve_sigma(&[0.0; 10], f64::INFINITY, 1.5, SigmaWeights::Alternative).unwrap();
        assert!(s.converged_immediately());
        assert_eq!(s.sigma, SIGMA_FLOOR_FACTOR);
    }

    /// Closed form for the alternative weights of a two-point set with
    /// `sigma_prev = inf`: weights are `1` (m copies) and `2 Phi(-g/sigma)` (n - m copies).
    fn two_point_cov(m: usize, n: usize, w: f64) -> f64 {
        let nf = n as f64;
        let mean = (m as f64 + (n - m) as f64 * w) / nf;
        let ss = m as f64 * (1.0 - mean).powi(2) + (n - m) as f64 * (w - mean).powi(2);
        (ss / (nf - 1.0)).sqrt() / mean
    }

    #[test]
    fn two_point_bisection_hits_target() {
        let mut g = vec![0.0; 30];
        g.extend(vec![5.0; 70]);
        let s = solve_sigma(&g, f64::INFINITY, 1.5, SigmaWeights::Alternative).unwrap();
        assert_eq!(s.outcome, SolveOutcome::Bisection);
        let w = 2.0 * (log_smooth_indicator(5.0, s.sigma).unwrap()).exp();
        let d = two_point_cov(30, 100, w);
        assert!((d - 1.5).abs() < 1e-3, "{d}");
        assert!(s.sigma < 50.0);
    }

    #[test]
    fn lower_bound_when_target_loose() {
        // 60% failures: c.o.v. of the indicator is below 1 even as sigma -> 0.
        let mut g = vec![0.0; 60];
        g.extend(vec![1.0; 40]);
        let s = solve_sigma(&g, f64::INFINITY, 1.5, SigmaWeights::Alternative).unwrap();
        assert_eq!(s.outcome, SolveOutcome::LowerBound);
    }

    #[test]
    fn decreasing_width_with_finite_previous() {
        let g: Vec<f64> = (0..200).map(|k| (k % 7) as f64).collect();
        let s = solve_sigma(&g, 2.0, 1.0, SigmaWeights::Alternative).unwrap();
        assert!(s.sigma < 2.0);
        let d = s.delta_hat.unwrap();
        assert!((d - 1.0).abs() < 1e-3);
    }

    #[test]
    fn convergence_examples() {
        let c = convergence_check(&[0.0; 8], 0.4, 1.0).unwrap();
        assert!(c.converged);
        assert_eq!(c.delta_hat, 0.0);
        let c = convergence_check(&[1.0, 2.0, 3.0], 0.4, 1.0).unwrap();
        assert!(!c.converged);
        assert_eq!(c.delta_hat, f64::INFINITY);
        let g = [0.0, 0.0, 1.0, 1.0];
        // ratios {2, 2, 0, 0}: sd = 2/sqrt(3) * sqrt(... ) -> sample cov = sqrt(4/3) / 1
        let c = convergence_check(&g, f64::INFINITY, 1.0).unwrap();
        let expected = (4.0f64 / 3.0).sqrt();
        assert!((c.delta_hat - expected).abs() < 1e-15);
        assert!(!c.converged);
        assert!(convergence_check(&g, f64::INFINITY, 1.2).unwrap().converged);
    }

    #[test]
    fn smoothing_state_enforces_decrease() {
        let mut st = SmoothingState::new(1.0, 1.0).unwrap();
        st.advance(3.0).unwrap();
        st.advance(1.0).unwrap();
        assert!(st.advance(1.0).is_err());
        assert_eq!(st.level_index, 2);
        assert!(SmoothingState::new(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn alternative_weights_identity_at_previous(
            g in prop::collection::vec(0.0f64..50.0, 1..50),
            s in 1e-3f64..100.0,
        ) {
            let w = alternative_weights(&g, s, s).unwrap();
            prop_assert!(w.iter().all(|&x| x == 1.0));
        }

        #[test]
        fn solved_sigma_decreases(
            g in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], 10..80),
            prev in prop_oneof![Just(f64::INFINITY), 0.5f64..20.0],
            target in 0.5f64..3.0,
        ) {
            let s = solve_sigma(&g, prev, target, SigmaWeights::Alternative).unwrap();
            prop_assert!(s.sigma < prev);
            prop_assert!(s.sigma > 0.0);
        }
    }
}
