//! Adaptive schedule selection and threshold analysis.
//!
//! Given a Pauli channel estimate, the planner picks how many EP rounds `k`
//! to run, which odd PEC width `r` to use, and how many Steane concatenation
//! levels `L` to finish with, so that
//!
//! 1. the Eq.-style planning bounds on the post-PEC error
//!    (`r (p_x + p_y)` for spin flips, `[4 (p_i + p_x)(p_y + p_z)]^{r/2}` for
//!    phase flips) land below `min(error_target, steane_threshold - 0.008)`,
//!    and
//! 2. enough bits survive the pipeline to fill at least one concatenated
//!    Steane block at the level demanded by the key-fidelity budget.
//!
//! Planning with the printed bounds keeps a deliberate safety margin over the
//! exact maps; the exact post-PEC distribution (always below the bounds) is
//! what gets recorded in the plan and later cross-checked by Monte Carlo.

use crate::error::Error;
use crate::maps::{ep_map, pec_predict, steane_level_map, steane_threshold};
use crate::pauli::{depolarizing, PauliRates};

/// Hard cap on the PEC width search. The effective cap is the number of bits
/// that survive the EP rounds, which binds far earlier at any realistic size.
pub const R_MAX: u64 = 1_000_000_000_000_000;

/// Fixed statistical margin kept below the Steane fixed point when choosing
/// the PEC width.
pub const STEANE_MARGIN: f64 = 0.008;

/// Guard band on the EP convergence discriminant: inputs this close to the
/// boundary are classified as non-convergent. Shifts the effective threshold
/// by ~5e-15 in bit error, well below every tolerance used elsewhere.
const CONVERGENCE_GUARD: f64 = 1e-14;

/// Planner inputs: target error for the PEC stage, key fidelity budget,
/// available sifted bits (after test-bit sacrifice), and the EP round cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub error_target: f64,
    pub key_fidelity_epsilon: f64,
    pub n_sifted: u64,
    pub max_k: u32,
}

impl PlannerConfig {
    pub fn new(
        error_target: f64,
        key_fidelity_epsilon: f64,
        n_sifted: u64,
        max_k: u32,
    ) -> Result<Self, Error> {
        if !(error_target > 0.0 && error_target < steane_threshold()) {
            return Err(Error::Internal(format!(
                "error target {error_target} outside (0, {})",
                steane_threshold()
            )));
        }
        if !(key_fidelity_epsilon > 0.0 && key_fidelity_epsilon < 1.0) {
            return Err(Error::Internal(format!(
                "key fidelity epsilon {key_fidelity_epsilon} outside (0, 1)"
            )));
        }
        Ok(Self { error_target, key_fidelity_epsilon, n_sifted, max_k })
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            error_target: 0.05,
            key_fidelity_epsilon: 1e-3,
            n_sifted: 1_000_000,
            max_k: 30,
        }
    }
}

/// A chosen distillation schedule with its predicted stage-by-stage rates.
///
/// When `feasible` is false the numeric fields are zeroed and only
/// `input_rates` is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePlan {
    pub feasible: bool,
    /// Number of EP rounds.
    pub k: u32,
    /// PEC width (odd).
    pub r: u64,
    /// Steane concatenation levels.
    pub levels: u32,
    pub input_rates: PauliRates,
    /// Rates after each EP round, then after PEC (`k + 1` entries).
    pub stage_rates: Vec<PauliRates>,
    /// EP pair survival probability per round (`k` entries).
    pub stage_survivals: Vec<f64>,
    /// Exact post-PEC channel error `p_x + p_y + p_z`.
    pub predicted_final_error: f64,
    /// Fraction of sifted bits surviving to key:
    /// product of (survival/2) over EP rounds, times 1/r, times 7^-L.
    pub predicted_yield: f64,
    /// Expected key length under `n_sifted`.
    pub predicted_key_length: u64,
}

impl SchedulePlan {
    /// An infeasible (empty) plan for the given input rates.
    pub fn placeholder(input_rates: PauliRates) -> Self {
        Self {
            feasible: false,
            k: 0,
            r: 0,
            levels: 0,
            input_rates,
            stage_rates: Vec::new(),
            stage_survivals: Vec::new(),
            predicted_final_error: 0.0,
            predicted_yield: 0.0,
            predicted_key_length: 0,
        }
    }
}

/// Whether repeated EP rounds drive the spin-flip rate to zero:
/// `(p_i - p_z)^2 > (p_i + p_z)(p_x + p_y)`, with a tiny guard band so that
/// inputs within rounding error of the boundary count as non-convergent.
pub fn ep_converges(rates: &PauliRates) -> bool {
    let diff = rates.p_i() - rates.p_z();
    let disc = diff * diff - (rates.p_i() + rates.p_z()) * rates.bit_error();
    disc > CONVERGENCE_GUARD
}

/// Closed-form feasibility boundary of the depolarizing channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepolarizingThreshold {
    /// Maximal tolerable bit error rate `0.5 - 0.1 sqrt(5)`.
    pub bit_error: f64,
    /// Corresponding channel error rate `0.75 - 0.15 sqrt(5)`.
    pub channel_error: f64,
    /// Minimal identity rate `0.25 + 0.15 sqrt(5)`, the positive root of
    /// `20 p^2 - 10 p - 1 = 0`.
    pub p_i_min: f64,
}

/// Threshold of the depolarizing channel from the positive root of
/// `20 p^2 - 10 p - 1 = 0`.
pub fn depolarizing_threshold() -> DepolarizingThreshold {
    // p = (10 + sqrt(180)) / 40 = 0.25 + 0.15 sqrt(5)
    let p_i_min = 0.25 + 0.15 * 5.0f64.sqrt();
    DepolarizingThreshold {
        bit_error: 2.0 / 3.0 * (1.0 - p_i_min),
        channel_error: 1.0 - p_i_min,
        p_i_min,
    }
}

/// The planning target for the PEC stage: both the caller's error target and
/// the Steane margin policy must hold.
fn pec_bound_target(error_target: f64) -> f64 {
    error_target.min(steane_threshold() - STEANE_MARGIN)
}

/// Planning bounds on the post-PEC error at width `r` (odd).
fn pec_bounds(beta: f64, q: f64, p_i_plus_p_x: f64, r: u64) -> (f64, f64) {
    let bit = r as f64 * beta;
    let pairing = 4.0 * p_i_plus_p_x * q;
    let phase = if pairing <= 0.0 {
        0.0
    } else {
        ((r as f64 / 2.0) * pairing.ln()).exp()
    };
    (bit, phase)
}

/// Smallest odd width `r >= 3` whose planning bounds land the post-PEC error
/// below `min(error_target, steane_threshold - 0.008)`, or `None`.
///
/// Because the exact post-PEC errors never exceed the bounds, any width
/// accepted here also satisfies the target on the exact values.
pub fn choose_r(rates_after_k: &PauliRates, error_target: f64) -> Option<u64> {
    choose_r_capped(rates_after_k, error_target, R_MAX)
}

/// [`choose_r`] with an explicit width cap (the planner passes the number of
/// bits left after the EP rounds, per the protocol's abort clause).
pub fn choose_r_capped(rates_after_k: &PauliRates, error_target: f64, r_cap: u64) -> Option<u64> {
    let tau = pec_bound_target(error_target);
    let beta = rates_after_k.bit_error();
    let q = rates_after_k.phase_error();
    let a = rates_after_k.p_i() + rates_after_k.p_x();
    let r_cap = r_cap.min(R_MAX);
    if r_cap < 3 {
        return None;
    }

    let pairing = 4.0 * a * q;
    let mut r = 3u64;
    for _ in 0..256 {
        let (bit, phase) = pec_bounds(beta, q, a, r);
        if bit >= tau {
            // The spin-flip bound only grows with r.
            return None;
        }
        if bit + phase < tau {
            return Some(r);
        }
        if pairing <= 0.0 {
            // Phase bound is identically zero yet the sum failed: impossible
            // unless bit >= tau, handled above.
            return None;
        }
        // Smallest width whose phase bound drops below the remaining budget:
        // [pairing]^{r/2} < tau - bit  <=>  r > 2 ln(tau - bit) / ln(pairing).
        let needed = 2.0 * (tau - bit).ln() / pairing.ln();
        if !needed.is_finite() {
            return None;
        }
        // Smallest odd integer strictly above `needed`.
        let mut next = needed.floor() as u64 + 1;
        if next.is_multiple_of(2) {
            next += 1;
        }
        r = next.max(r + 2);
        if r > r_cap {
            return None;
        }
    }
    None
}

/// Smallest concatenation depth `L` with `n_blocks * lambda_L <= epsilon`,
/// where `lambda_0 = post_pec_error` and `lambda_{j+1}` applies
/// [`steane_level_map`]. Fails when the input error is at or above the
/// Steane fixed point, where concatenation no longer contracts.
pub fn steane_levels_needed(post_pec_error: f64, epsilon: f64, n_blocks: u64) -> Result<u32, Error> {
    let root = steane_threshold();
    if post_pec_error >= root {
        return Err(Error::AboveSteaneThreshold(post_pec_error, root));
    }
    let mut lambda = post_pec_error;
    for level in 0..200 {
        if n_blocks as f64 * lambda <= epsilon {
            return Ok(level);
        }
        lambda = steane_level_map(lambda);
    }
    Err(Error::Internal(
        "Steane recursion failed to contract below epsilon".to_string(),
    ))
}

/// Search EP depths `k = 0..=max_k` for the first schedule whose PEC width
/// fits the surviving bit budget and whose Steane stage meets the fidelity
/// target. Infeasibility is a value, not a fault.
pub fn plan_schedule(rates: &PauliRates, config: &PlannerConfig) -> SchedulePlan {
    if !ep_converges(rates) {
        return SchedulePlan::placeholder(*rates);
    }
    let mut stage_rates: Vec<PauliRates> = Vec::new();
    let mut stage_survivals: Vec<f64> = Vec::new();
    let mut current = *rates;
    let mut remaining = config.n_sifted as f64;

    for k in 0..=config.max_k {
        if k > 0 {
            let (next, survival) = ep_map(&current);
            stage_rates.push(next);
            stage_survivals.push(survival);
            current = next;
            remaining *= survival / 2.0;
        }
        if remaining < 3.0 {
            break;
        }
        let Some(r) = choose_r_capped(&current, config.error_target, remaining as u64) else {
            continue;
        };
        let n_pec = (remaining / r as f64).floor() as u64;
        if n_pec == 0 {
            continue;
        }
        let prediction = pec_predict(&current, r).expect("width from choose_r is odd and >= 3");
        let post_error = prediction.exact_rates.channel_error();

        // Smallest L whose surviving block count still meets the fidelity
        // budget; the block count shrinks by 7 per level.
        let mut chosen_level = None;
        let mut lambda = post_error;
        let mut blocks = n_pec;
        for level in 0..64u32 {
            if blocks == 0 {
                break;
            }
            if blocks as f64 * lambda <= config.key_fidelity_epsilon {
                chosen_level = Some((level, blocks));
                break;
            }
            lambda = steane_level_map(lambda);
            blocks /= 7;
        }
        let Some((levels, key_blocks)) = chosen_level else {
            continue;
        };

        let ep_yield: f64 = stage_survivals.iter().map(|s| s / 2.0).product();
        let mut plan_rates = stage_rates.clone();
        plan_rates.push(prediction.exact_rates);
        return SchedulePlan {
            feasible: true,
            k,
            r,
            levels,
            input_rates: *rates,
            stage_rates: plan_rates,
            stage_survivals: stage_survivals.clone(),
            predicted_final_error: post_error,
            predicted_yield: ep_yield / r as f64 / 7f64.powi(levels as i32),
            predicted_key_length: key_blocks,
        };
    }
    SchedulePlan::placeholder(*rates)
}

/// Feasibility in the unlimited-bits limit: does some EP depth `k` admit a
/// width `r` whose planning bounds meet the target? Everything is evaluated
/// in log space so depths up to `2^64` EP rounds cost nothing.
pub fn asymptotic_feasible(rates: &PauliRates, error_target: f64) -> bool {
    if !ep_converges(rates) {
        return false;
    }
    let tau = pec_bound_target(error_target);
    let a = rates.p_i() + rates.p_z();
    let b = rates.bit_error();
    let c = (rates.p_i() - rates.p_z()).abs();
    let d = (rates.p_x() - rates.p_y()).abs();
    let (ln_a, ln_b) = (a.ln(), b.ln());
    let (ln_c, ln_d) = (c.ln(), d.ln());

    for k in 0..=64u32 {
        // After k rounds: beta = b^t / (a^t + b^t), and the phase margin is
        // delta = 0.5 - q = (c^t + d^t) / (2 (a^t + b^t)), with t = 2^k.
        let (beta, delta) = if k == 0 {
            (b, 0.5 - rates.phase_error())
        } else {
            let t = (1u128 << k) as f64;
            let (la, lb, lc, ld) = (t * ln_a, t * ln_b, t * ln_c, t * ln_d);
            let m = la.max(lb);
            let norm = m + ((la - m).exp() + (lb - m).exp()).ln();
            let beta = (lb - norm).exp();
            let delta = 0.5 * ((lc - norm).exp() + (ld - norm).exp());
            (beta, delta)
        };
        if delta.is_nan() || delta <= 0.0 {
            continue;
        }
        if beta <= 0.0 {
            return true;
        }
        // Planning bounds at width r: f(r) = r beta + exp(-r s / 2) with
        // s = -ln(1 - 4 delta^2); minimize over r.
        let s = -(-4.0 * delta * delta).ln_1p();
        if s.is_nan() || s <= 0.0 {
            continue;
        }
        let f3 = 3.0 * beta + (-1.5 * s).exp();
        if f3 < tau {
            return true;
        }
        let ratio = s / (2.0 * beta);
        if ratio > 1.0 {
            let f_min = (2.0 * beta / s) * (ratio.ln() + 1.0);
            if f_min < tau {
                return true;
            }
        }
    }
    false
}

/// Bisection on the depolarizing bit error for asymptotic feasibility.
///
/// Converges to [`depolarizing_threshold`]`().bit_error` as `tol -> 0`.
/// Errors when the bracket does not straddle the boundary (e.g. both ends
/// already infeasible).
pub fn threshold_sweep(
    lo: f64,
    hi: f64,
    tol: f64,
    config: &PlannerConfig,
) -> Result<f64, Error> {
    if lo.is_nan() || hi.is_nan() || lo >= hi || tol.is_nan() || tol <= 0.0 {
        return Err(Error::BadBracket { lo, hi });
    }
    let feasible = |b: f64| match depolarizing(b) {
        Ok(rates) => asymptotic_feasible(&rates, config.error_target),
        Err(_) => false,
    };
    if !feasible(lo) || feasible(hi) {
        return Err(Error::BadBracket { lo, hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
