//! Closed-form error-rate dynamics of the distillation pipeline.
//!
//! Three maps drive the analysis:
//!
//! - [`ep_map`] / [`ep_map_k`]: one round (resp. `k` rounds) of entanglement
//!   purification by random pairing and parity comparison. One round sends
//!   `(p_i, p_x, p_y, p_z)` to
//!   `(p_i^2 + p_z^2, p_x^2 + p_y^2, 2 p_x p_y, 2 p_i p_z) / D` with
//!   `D = (p_i + p_z)^2 + (p_x + p_y)^2`, and `D` is also the probability that
//!   a random pair survives the parity test.
//! - [`pec_predict`]: one round of `[r,1,r]` phase error correction. The
//!   surviving label per group is the XOR of the spin-flip bits paired with
//!   the majority of the phase-flip bits; this module returns both the exact
//!   output distribution and the classical tail bounds used for planning.
//! - [`steane_level_map`] / [`steane_threshold`]: per-level failure
//!   probability of the concatenated seven-qubit code and its fixed point.
//!
//! The `k`-round closed form is implemented with the denominator
//! `(p_i + p_z)^{2^k} + (p_x + p_y)^{2^k}`; the variant with `(p_i + p_x)` in
//! the first term that sometimes appears in print does not normalize the four
//! numerators (a regression test pins this down). Likewise the one-round PEC
//! phase bound uses the pairing `4 (p_i + p_x)(p_y + p_z)`, which is the one
//! consistent with a Chernoff bound on the phase-majority tail and with the
//! exponential form `exp(-2 r (1/2 - p_z - p_y)^2)`.

use std::sync::OnceLock;

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::Error;
use crate::pauli::PauliRates;

/// One round of two-way entanglement purification.
///
/// Returns the output rate vector and the survival probability of a random
/// pair (the probability its announced parities agree).
pub fn ep_map(rates: &PauliRates) -> (PauliRates, f64) {
    let (p_i, p_x, p_y, p_z) = (rates.p_i(), rates.p_x(), rates.p_y(), rates.p_z());
    let denom = (p_i + p_z).powi(2) + (p_x + p_y).powi(2);
    // For a normalized vector, denom = a^2 + b^2 with a + b = 1, so denom >= 1/2.
    assert!(denom > 0.0, "EP survival probability vanished on normalized rates");
    let out = PauliRates::new(
        (p_i * p_i + p_z * p_z) / denom,
        (p_x * p_x + p_y * p_y) / denom,
        2.0 * p_x * p_y / denom,
        2.0 * p_i * p_z / denom,
    )
    .expect("EP map preserves normalization");
    (out, denom)
}

/// `k` rounds of entanglement purification in closed form.
///
/// Works with the pair sums/differences `a = p_i + p_z`, `b = p_x + p_y`,
/// `c = p_i - p_z`, `d = p_x - p_y`, each of which simply squares (up to a
/// common normalizer) every round. The ratios are renormalized by
/// `max(a, b)` after each squaring so the computation never underflows even
/// for large `k`.
pub fn ep_map_k(rates: &PauliRates, k: u32) -> PauliRates {
    if k == 0 {
        return *rates;
    }
    let mut ra = rates.p_i() + rates.p_z();
    let mut rb = rates.p_x() + rates.p_y();
    let mut rc = rates.p_i() - rates.p_z();
    let mut rd = rates.p_x() - rates.p_y();
    for _ in 0..k {
        ra *= ra;
        rb *= rb;
        rc *= rc;
        rd *= rd;
        // |c| <= a and |d| <= b, so max(ra, rb) dominates all four.
        let m = ra.max(rb);
        ra /= m;
        rb /= m;
        rc /= m;
        rd /= m;
    }
    let denom = 2.0 * (ra + rb);
    PauliRates::new(
        (ra + rc) / denom,
        (rb + rd) / denom,
        (rb - rd) / denom,
        (ra - rc) / denom,
    )
    .expect("k-round EP map preserves normalization")
}

/// Widths up to this use the regularized incomplete beta for the binomial
/// tail; beyond it a windowed log-space summation takes over (the continued
/// fraction converges poorly for huge, near-balanced parameters).
const TAIL_BETA_MAX_N: u64 = 100_000;

/// Exact upper binomial tail `P[Bin(n, p) >= m]`.
pub(crate) fn binom_tail_geq(n: u64, m: u64, p: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if m > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    if n <= TAIL_BETA_MAX_N {
        // P[X >= m] is the regularized incomplete beta I_p(m, n - m + 1).
        return beta_reg(m as f64, (n - m + 1) as f64, p);
    }
    binom_tail_geq_windowed(n, m, p)
}

/// Upper binomial tail by direct pmf summation over a +/- 40 sigma window
/// around the mean; mass outside the window is below 1e-300.
fn binom_tail_geq_windowed(n: u64, m: u64, p: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * p;
    let sigma = (nf * p * (1.0 - p)).sqrt().max(1.0);
    if (m as f64) < mean - 40.0 * sigma {
        // Complement is negligible.
        return 1.0;
    }
    if (m as f64) > mean + 40.0 * sigma {
        return 0.0;
    }
    let hi = ((mean + 40.0 * sigma).ceil() as u64).min(n);
    let ln_pmf_m = ln_gamma(nf + 1.0) - ln_gamma(m as f64 + 1.0) - ln_gamma((n - m) as f64 + 1.0)
        + m as f64 * p.ln()
        + (n - m) as f64 * (1.0 - p).ln();
    let step = (p / (1.0 - p)).ln();
    // Two passes of the term recurrence: locate the peak, then accumulate
    // relative to it.
    let mut log_t = ln_pmf_m;
    let mut max_log = log_t;
    for c in m..hi {
        log_t += (((n - c) as f64) / ((c + 1) as f64)).ln() + step;
        max_log = max_log.max(log_t);
    }
    if max_log < -700.0 {
        return 0.0;
    }
    let mut log_t = ln_pmf_m;
    let mut acc = (log_t - max_log).exp();
    for c in m..hi {
        log_t += (((n - c) as f64) / ((c + 1) as f64)).ln() + step;
        acc += (log_t - max_log).exp();
    }
    acc * max_log.exp()
}

/// Predicted effect of one `[r,1,r]` PEC round on a Pauli channel.
///
/// `*_bound` fields are the planning bounds (the spin-flip bound `r (p_x+p_y)`
/// may exceed 1; the exponential phase bound is only a valid bound when
/// `p_y + p_z < 1/2`). `*_exact` fields and `exact_rates` are the exact
/// distribution of the surviving label.
#[derive(Debug, Clone, PartialEq)]
pub struct PecPrediction {
    pub bit_error_bound: f64,
    pub phase_error_bound: f64,
    pub phase_error_exp_bound: f64,
    pub bit_error_exact: f64,
    pub phase_error_exact: f64,
    pub exact_rates: PauliRates,
}

/// Largest width for which the joint output distribution is evaluated by the
/// dynamic program over (running spin-flip parity, running phase count).
/// Beyond this the algebraically equivalent O(r) closed form takes over.
const PEC_DP_MAX_WIDTH: u64 = 2048;

fn check_pec_width(r: u64) -> Result<(), Error> {
    if r < 3 || r.is_multiple_of(2) {
        return Err(Error::InvalidPecWidth(r));
    }
    Ok(())
}

/// `base^r` for widths far beyond `i32`, in log space with the sign carried
/// separately (`r` odd keeps a negative base negative).
fn signed_pow(base: f64, r: u64) -> f64 {
    if base == 0.0 {
        return 0.0;
    }
    if r <= i32::MAX as u64 {
        return base.powi(r as i32);
    }
    let magnitude = ((r as f64) * base.abs().ln()).exp();
    if base < 0.0 && r % 2 == 1 {
        -magnitude
    } else {
        magnitude
    }
}

/// Exact marginals of the PEC output label, all in O(r):
/// returns (spin-flip rate, phase rate, joint spin-and-phase rate).
pub(crate) fn pec_exact_marginals(rates: &PauliRates, r: u64) -> (f64, f64, f64) {
    let beta = rates.bit_error();
    let q = rates.phase_error();
    let majority = r / 2 + 1;
    // Output spin flip iff an odd number of group members flipped.
    let bit = 0.5 * (1.0 - signed_pow(1.0 - 2.0 * beta, r));
    // Output phase flip iff a strict majority of group members phase-flipped.
    let phase = binom_tail_geq(r, majority, q);
    // Joint term via the signed generating function
    //   P(odd parity, count >= m) = (T+ - T-) / 2,
    // where T+ is the plain binomial tail and T- the tail built from
    // A = p_i - p_x, B = p_z - p_y.
    let t_minus = signed_tail(rates.p_i() - rates.p_x(), rates.p_z() - rates.p_y(), r, majority);
    let p_y_out = 0.5 * (phase - t_minus);
    // Guard the algebra against rounding at extreme widths.
    let p_y_out = p_y_out
        .max(0.0)
        .max(bit + phase - 1.0)
        .min(bit)
        .min(phase);
    (bit, phase, p_y_out)
}

/// `sum_{c >= m} C(r, c) a^{r-c} b^c` for possibly negative `a`, `b`.
fn signed_tail(a: f64, b: f64, r: u64, m: u64) -> f64 {
    if m > r {
        return 0.0;
    }
    let s = a.abs() + b.abs();
    if s == 0.0 {
        return 0.0;
    }
    // The tail is bounded by s^r in magnitude; skip clearly negligible cases.
    if (r as f64) * s.ln() < -80.0 {
        return 0.0;
    }
    if b == 0.0 {
        // Only the c = r term could contribute a nonzero power of b, and
        // b^c = 0 for every c >= m >= 1.
        return 0.0;
    }
    if a == 0.0 {
        // Only c = r survives.
        return signed_pow(b, r);
    }
    if a > 0.0 && b > 0.0 {
        // Scaled binomial tail: s^r * P[Bin(r, b/s) >= m].
        let log_scale = (r as f64) * s.ln();
        if log_scale < -700.0 {
            return 0.0;
        }
        return log_scale.exp() * binom_tail_geq(r, m, b / s);
    }
    // Mixed signs: two passes of the term recurrence in log space.
    let ln_abs_term = |c: u64| {
        ln_gamma(r as f64 + 1.0) - ln_gamma(c as f64 + 1.0) - ln_gamma((r - c) as f64 + 1.0)
            + (r - c) as f64 * a.abs().ln()
            + c as f64 * b.abs().ln()
    };
    let sign = |c: u64| {
        let neg = (if a < 0.0 { (r - c) % 2 } else { 0 }) + (if b < 0.0 { c % 2 } else { 0 });
        if neg % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    };
    let step = (b / a).abs().ln();
    let mut log_t = ln_abs_term(m);
    let mut max_log = log_t;
    for c in m..r {
        log_t += (((r - c) as f64) / ((c + 1) as f64)).ln() + step;
        max_log = max_log.max(log_t);
    }
    if max_log < -700.0 {
        return 0.0;
    }
    let mut log_t = ln_abs_term(m);
    let mut acc = sign(m) * (log_t - max_log).exp();
    for c in m..r {
        log_t += (((r - c) as f64) / ((c + 1) as f64)).ln() + step;
        acc += sign(c + 1) * (log_t - max_log).exp();
    }
    acc * max_log.exp()
}

/// Joint output distribution of one PEC group by dynamic programming over
/// (running spin-flip parity, running phase-flip count).
fn pec_joint_by_dp(rates: &PauliRates, r: u64) -> PauliRates {
    let r = r as usize;
    let majority = r / 2 + 1;
    let width = r + 1;
    // dp[parity * width + count]
    let mut dp = vec![0.0f64; 2 * width];
    let mut next = vec![0.0f64; 2 * width];
    dp[0] = 1.0;
    let (p_i, p_x, p_y, p_z) = (rates.p_i(), rates.p_x(), rates.p_y(), rates.p_z());
    for step in 0..r {
        for cell in next.iter_mut() {
            *cell = 0.0;
        }
        for parity in 0..2 {
            for count in 0..=step {
                let w = dp[parity * width + count];
                if w == 0.0 {
                    continue;
                }
                next[parity * width + count] += w * p_i; // I: no change
                next[(1 - parity) * width + count] += w * p_x; // X: flips parity
                next[(1 - parity) * width + count + 1] += w * p_y; // Y: both
                next[parity * width + count + 1] += w * p_z; // Z: counts phase
            }
        }
        std::mem::swap(&mut dp, &mut next);
    }
    let mut out = [0.0f64; 4]; // (I, X, Y, Z)
    for parity in 0..2 {
        for count in 0..width {
            let w = dp[parity * width + count];
            let phase_fail = count >= majority;
            match (parity == 1, phase_fail) {
                (false, false) => out[0] += w,
                (true, false) => out[1] += w,
                (true, true) => out[2] += w,
                (false, true) => out[3] += w,
            }
        }
    }
    PauliRates::normalized(out[0], out[1], out[2], out[3])
        .expect("PEC DP distribution is normalized")
}

/// Predict the effect of one `[r,1,r]` PEC round (`r` odd, `r >= 3`).
pub fn pec_predict(rates: &PauliRates, r: u64) -> Result<PecPrediction, Error> {
    check_pec_width(r)?;
    let beta = rates.bit_error();
    let q = rates.phase_error();

    let bit_error_bound = r as f64 * beta;
    // [4 (p_i + p_x)(p_y + p_z)]^{r/2}, evaluated in log space.
    let pairing = 4.0 * (rates.p_i() + rates.p_x()) * q;
    let phase_error_bound = if pairing <= 0.0 {
        0.0
    } else {
        ((r as f64 / 2.0) * pairing.ln()).exp()
    };
    let phase_error_exp_bound = (-2.0 * r as f64 * (0.5 - q).powi(2)).exp();

    let (bit_error_exact, phase_error_exact, p_y_out) = pec_exact_marginals(rates, r);
    let exact_rates = if r <= PEC_DP_MAX_WIDTH {
        pec_joint_by_dp(rates, r)
    } else {
        PauliRates::normalized(
            1.0 - bit_error_exact - phase_error_exact + p_y_out,
            bit_error_exact - p_y_out,
            p_y_out,
            phase_error_exact - p_y_out,
        )
        .expect("PEC closed-form distribution is normalized")
    };

    Ok(PecPrediction {
        bit_error_bound,
        phase_error_bound,
        phase_error_exp_bound,
        bit_error_exact,
        phase_error_exact,
        exact_rates,
    })
}

/// Classical Chernoff-style bound on the lower binomial tail
/// `sum_{k <= lambda n} C(n, k) p^k (1-p)^{n-k}` for `0 < lambda < p < 1`:
/// `lambda^{-lambda n} (1-lambda)^{-(1-lambda) n} p^{lambda n} (1-p)^{(1-lambda) n}`.
pub fn binomial_tail_bound(n: u64, lambda: f64, p: f64) -> Result<f64, Error> {
    if !(lambda > 0.0 && lambda < p && p < 1.0) {
        return Err(Error::TailBoundOrdering { lambda, p });
    }
    let exponent = n as f64
        * (-lambda * lambda.ln() - (1.0 - lambda) * (1.0 - lambda).ln()
            + lambda * p.ln()
            + (1.0 - lambda) * (1.0 - p).ln());
    Ok(exponent.exp())
}

/// Failure probability of one seven-qubit block when each input fails
/// independently with probability `lambda`: the probability of two or more
/// errors among seven, `1 - (1-l)^7 - 7 (1-l)^6 l`. Evaluated as the
/// complementary sum over 2..=7 errors, which stays exact down to
/// subnormal `lambda` where the direct form cancels catastrophically.
pub fn steane_level_map(lambda: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&lambda));
    let keep = 1.0 - lambda;
    let mut sum = 0.0;
    let coefficients = [21.0, 35.0, 35.0, 21.0, 7.0, 1.0]; // C(7, 2..=7)
    for (i, c) in coefficients.iter().enumerate() {
        let errors = (i + 2) as i32;
        sum += c * lambda.powi(errors) * keep.powi(7 - errors);
    }
    sum.min(1.0)
}

/// Smallest positive fixed point of [`steane_level_map`], i.e. the error rate
/// tolerated by unbounded concatenation of the seven-qubit code (about 5.8%).
pub fn steane_threshold() -> f64 {
    static ROOT: OnceLock<f64> = OnceLock::new();
    *ROOT.get_or_init(|| {
        let f = |l: f64| steane_level_map(l) - l;
        let (mut lo, mut hi) = (1e-9, 0.5);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}
