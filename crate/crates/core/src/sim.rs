//! Monte Carlo simulation of the full six-state scheme on Pauli frames.
//!
//! The quantum transmission is reduced to a classical record: each surviving
//! sifted position carries the Pauli error that afflicted it, and every
//! post-processing step (parity-test purification, repetition-code phase
//! correction, concatenated Steane decoding) acts on those labels exactly as
//! it would act on the real error operators. Sifting is simulated
//! statistically — each sent position survives basis matching with
//! probability 1/3 — which is equivalent in distribution to tracking six
//! literal states.
//!
//! Alice and Bob never appear here; [`run_protocol`] is the referee's view.
//! The [`crate::session`] module runs the same pipeline as an explicit
//! two-party message exchange and must produce identical reports.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::Error;
use crate::pauli::{sample_label, ErrorFrame, PauliLabel, PauliRates};
use crate::planner::{depolarizing_threshold, plan_schedule, PlannerConfig, SchedulePlan};
use crate::seed::{derive_seed, stage_rng, Stage};

/// Measurement bases of the six-state scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z = 0,
    X = 1,
    Y = 2,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];

    /// Whether a position with this error label reads back flipped when
    /// compared in this basis (the label anticommutes with the basis
    /// observable).
    #[inline]
    pub fn mismatches(self, label: PauliLabel) -> bool {
        match self {
            Basis::Z => label.x(),
            Basis::X => label.z(),
            Basis::Y => label.x() != label.z(),
        }
    }
}

/// Per-basis test sample counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BasisStats {
    pub tested: [u64; 3],
    pub mismatched: [u64; 3],
}

impl BasisStats {
    pub fn tested_in(&self, basis: Basis) -> u64 {
        self.tested[basis as usize]
    }
    pub fn mismatched_in(&self, basis: Basis) -> u64 {
        self.mismatched[basis as usize]
    }
    /// Observed mismatch rate in one basis (0 when nothing was tested).
    pub fn rate(&self, basis: Basis) -> f64 {
        let t = self.tested[basis as usize];
        if t == 0 {
            0.0
        } else {
            self.mismatched[basis as usize] as f64 / t as f64
        }
    }
}

/// Why a run ended without a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// Estimated bit error too close to (or above) the feasibility threshold.
    Threshold,
    /// The planner found no workable (k, r, L) schedule.
    PlanInfeasible,
    /// The bit budget ran out mid-pipeline (r exceeded the remaining bits, or
    /// no full Steane block survived).
    BitsExhausted,
}

impl AbortReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            AbortReason::Threshold => "threshold",
            AbortReason::PlanInfeasible => "plan_infeasible",
            AbortReason::BitsExhausted => "bits_exhausted",
        }
    }
}

/// Simulation inputs.
///
/// `planner.n_sifted` is ignored: the simulator plans against the bit count
/// that actually survives sifting and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_sent: u64,
    pub rates: PauliRates,
    pub test_bits_per_basis: u64,
    pub planner: PlannerConfig,
    pub seed: u64,
    pub trials: u32,
    /// Plan against the true channel rates instead of the estimate
    /// (for analytic-vs-Monte-Carlo comparisons).
    pub plan_on_true_rates: bool,
    /// Replace the tomographic estimate by its symmetrized (depolarizing)
    /// form before planning.
    pub symmetrize_estimate: bool,
}

impl SimConfig {
    pub fn new(n_sent: u64, rates: PauliRates, seed: u64) -> Self {
        Self {
            n_sent,
            rates,
            test_bits_per_basis: 10_000,
            planner: PlannerConfig::default(),
            seed,
            trials: 1,
            plan_on_true_rates: false,
            symmetrize_estimate: false,
        }
    }
}

/// Everything measured in one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub sifted_count: u64,
    pub tested_count: u64,
    pub estimated_rates: PauliRates,
    pub basis_stats: BasisStats,
    pub plan: SchedulePlan,
    /// Surviving count after each EP round.
    pub post_ep_counts: Vec<u64>,
    pub post_pec_count: u64,
    pub final_key_length: u64,
    /// Number of key positions where Bob's corrected bit differs from
    /// Alice's (surviving logical spin flips).
    pub key_mismatch_count: u64,
    /// Fraction of key positions carrying a surviving logical phase flip
    /// (security proxy; reported, not used).
    pub residual_phase_error_rate: f64,
    pub aborted: Option<AbortReason>,
}

impl SimReport {
    fn aborted(
        reason: AbortReason,
        sifted_count: u64,
        tested_count: u64,
        estimated_rates: PauliRates,
        basis_stats: BasisStats,
        plan: SchedulePlan,
        post_ep_counts: Vec<u64>,
    ) -> Self {
        Self {
            sifted_count,
            tested_count,
            estimated_rates,
            basis_stats,
            plan,
            post_ep_counts,
            post_pec_count: 0,
            final_key_length: 0,
            key_mismatch_count: 0,
            residual_phase_error_rate: 0.0,
            aborted: Some(reason),
        }
    }
}

/// Transmit `n_sent` positions and keep the basis-matched ones.
///
/// Each position survives independently with probability 1/3 and surviving
/// positions carry i.i.d. labels from `rates`; the survivor count is drawn
/// first (binomially), which has the same joint distribution.
pub fn sift(n_sent: u64, rates: &PauliRates, seed: u64) -> ErrorFrame {
    let mut rng = stage_rng(seed, Stage::Sift, 0);
    let kept = Binomial::new(n_sent, 1.0 / 3.0)
        .expect("valid binomial parameters")
        .sample(&mut rng);
    let mut frame = ErrorFrame::with_capacity(kept as usize, seed);
    for _ in 0..kept {
        frame.push(sample_label(rates, &mut rng));
    }
    frame
}

/// Invert the three per-basis mismatch rates `e_Z = p_x + p_y`,
/// `e_X = p_y + p_z`, `e_Y = p_x + p_z` into a rate vector, clamping to
/// `[0, 1]` and renormalizing.
pub(crate) fn invert_basis_stats(stats: &BasisStats) -> PauliRates {
    let (e_z, e_x, e_y) = (stats.rate(Basis::Z), stats.rate(Basis::X), stats.rate(Basis::Y));
    let p_x = ((e_z + e_y - e_x) / 2.0).clamp(0.0, 1.0);
    let p_y = ((e_z + e_x - e_y) / 2.0).clamp(0.0, 1.0);
    let p_z = ((e_x + e_y - e_z) / 2.0).clamp(0.0, 1.0);
    let p_i = (1.0 - p_x - p_y - p_z).clamp(0.0, 1.0);
    PauliRates::normalized(p_i, p_x, p_y, p_z)
        .expect("clamped mismatch rates always renormalize")
}

/// Sacrifice `3 * m_per_basis` random positions to estimate the channel.
///
/// Each sampled position gets a uniformly random basis tag; a mismatch is
/// observed exactly when its label anticommutes with that basis. The three
/// observed mismatch rates `e_Z = p_x + p_y`, `e_X = p_y + p_z`,
/// `e_Y = p_x + p_z` are inverted, clamped to `[0, 1]`, and renormalized.
/// Returns the estimate, the per-basis statistics, and the frame with the
/// tested positions removed.
pub fn estimate_rates(
    frame: &ErrorFrame,
    m_per_basis: u64,
    seed: u64,
) -> Result<(PauliRates, BasisStats, ErrorFrame), Error> {
    let total = (3 * m_per_basis) as usize;
    if total > frame.len() {
        return Err(Error::FrameTooShort { len: frame.len(), needed: total });
    }
    assert!(frame.len() < u32::MAX as usize, "frame too large for u32 indices");

    // Partial Fisher-Yates: the first `total` entries become the sample.
    let mut select_rng = stage_rng(seed, Stage::TestSelect, 0);
    let mut indices: Vec<u32> = (0..frame.len() as u32).collect();
    for i in 0..total {
        let j = select_rng.random_range(i..indices.len());
        indices.swap(i, j);
    }

    let mut basis_rng = stage_rng(seed, Stage::TestBasis, 0);
    let mut stats = BasisStats::default();
    let mut tested = vec![false; frame.len()];
    for &pos in &indices[..total] {
        let basis = Basis::ALL[basis_rng.random_range(0..3usize)];
        let label = frame.get(pos as usize);
        stats.tested[basis as usize] += 1;
        if basis.mismatches(label) {
            stats.mismatched[basis as usize] += 1;
        }
        tested[pos as usize] = true;
    }

    let estimate = invert_basis_stats(&stats);

    let mut rest = ErrorFrame::with_capacity(frame.len() - total, frame.origin_seed());
    for (i, tested) in tested.iter().enumerate() {
        if !tested {
            rest.push(frame.get(i));
        }
    }
    rest.set_generation(frame.generation());
    Ok((estimate, stats, rest))
}

/// One round of entanglement purification on the frame: random perfect
/// matching, keep the control of each pair whose announced parities agree
/// (equal spin-flip components), with the control inheriting the target's
/// phase component. An odd leftover position is discarded.
pub fn ep_round(frame: &ErrorFrame, seed: u64) -> (ErrorFrame, u64) {
    let mut rng = stage_rng(seed, Stage::Pairing, 0);
    let mut shuffled = frame.clone();
    shuffled.shuffle(&mut rng);
    let pairs = shuffled.len() / 2;
    let mut out = ErrorFrame::with_capacity(pairs, frame.origin_seed());
    for p in 0..pairs {
        let control = shuffled.get(2 * p);
        let target = shuffled.get(2 * p + 1);
        if control.x() == target.x() {
            out.push(PauliLabel::from_bits(control.x(), control.z() ^ target.z()));
        }
    }
    let survivors = out.len() as u64;
    out.set_generation(frame.generation() + 1);
    (out, survivors)
}

/// One `[r,1,r]` PEC round: random groups of `r`, each replaced by one
/// position whose spin-flip bit is the XOR of the group and whose phase bit
/// is the strict majority of the group. Leftovers (< r) are discarded.
pub fn pec_round(frame: &ErrorFrame, r: u64, seed: u64) -> Result<ErrorFrame, Error> {
    if r < 3 || r.is_multiple_of(2) {
        return Err(Error::InvalidPecWidth(r));
    }
    let mut rng = stage_rng(seed, Stage::PecGroup, 0);
    let mut shuffled = frame.clone();
    shuffled.shuffle(&mut rng);
    let r = r as usize;
    let groups = shuffled.len() / r;
    let majority = r / 2 + 1;
    let mut out = ErrorFrame::with_capacity(groups, frame.origin_seed());
    for g in 0..groups {
        let mut x = false;
        let mut z_count = 0usize;
        for i in 0..r {
            let label = shuffled.get(g * r + i);
            x ^= label.x();
            z_count += label.z() as usize;
        }
        out.push(PauliLabel::from_bits(x, z_count >= majority));
    }
    out.set_generation(frame.generation() + 1);
    Ok(out)
}

// Hamming [7,4] single-error correction on a 7-bit vector (bit j of the mask
// is position j, whose parity-check column is the binary expansion of j+1).
// Returns the weight parity of the corrected codeword, which is the logical
// bit: Hamming codewords have weight 0, 3, 4, or 7, and the odd-weight ones
// act as logical operators.
pub(crate) fn hamming_correct_logical(mut bits: u8) -> bool {
    let mut syndrome = 0u8;
    for j in 0..7u8 {
        if bits & (1 << j) != 0 {
            syndrome ^= j + 1;
        }
    }
    if syndrome != 0 {
        bits ^= 1 << (syndrome - 1);
    }
    bits.count_ones() % 2 == 1
}

/// Decode one seven-position block of the Steane code: the spin-flip and
/// phase-flip vectors are corrected independently with the Hamming [7,4]
/// syndrome, and the block collapses to one logical label.
pub fn steane_decode_block(block: &[PauliLabel; 7]) -> PauliLabel {
    let mut x_bits = 0u8;
    let mut z_bits = 0u8;
    for (j, label) in block.iter().enumerate() {
        x_bits |= (label.x() as u8) << j;
        z_bits |= (label.z() as u8) << j;
    }
    PauliLabel::from_bits(hamming_correct_logical(x_bits), hamming_correct_logical(z_bits))
}

/// `levels` recursive applications of [`steane_decode_block`] on consecutive
/// seven-position blocks; partial blocks are discarded.
pub fn steane_concat_decode(frame: &ErrorFrame, levels: u32) -> ErrorFrame {
    let mut current = frame.clone();
    for _ in 0..levels {
        let blocks = current.len() / 7;
        let mut next = ErrorFrame::with_capacity(blocks, current.origin_seed());
        for b in 0..blocks {
            let mut block = [PauliLabel::I; 7];
            for (j, slot) in block.iter_mut().enumerate() {
                *slot = current.get(7 * b + j);
            }
            next.push(steane_decode_block(&block));
        }
        next.set_generation(current.generation() + 1);
        current = next;
    }
    current
}

/// Random permutation, `levels` of Steane decoding, then key accounting:
/// each surviving logical position yields one key bit; a logical spin flip
/// is an Alice/Bob mismatch, a logical phase flip feeds the residual phase
/// rate.
pub fn finalize_key(frame: &ErrorFrame, levels: u32, seed: u64) -> (u64, u64, f64) {
    let mut rng = stage_rng(seed, Stage::SteanePermute, 0);
    let mut permuted = frame.clone();
    permuted.shuffle(&mut rng);
    let decoded = steane_concat_decode(&permuted, levels);
    let key_length = decoded.len() as u64;
    let mismatches = decoded.iter().filter(|l| l.x()).count() as u64;
    let phase_flips = decoded.iter().filter(|l| l.z()).count() as u64;
    let residual = if key_length == 0 {
        0.0
    } else {
        phase_flips as f64 / key_length as f64
    };
    (key_length, mismatches, residual)
}

/// Shared randomness for pairings, groupings, and permutations, derived the
/// same way the two-party session derives it (XOR of both parties'
/// contributions) so that [`run_protocol`] and the session agree bit for bit.
pub fn shared_seed(seed: u64) -> u64 {
    derive_seed(seed, Stage::AliceContrib, 0) ^ derive_seed(seed, Stage::BobContrib, 0)
}

/// Execute the full scheme once: sift, estimate, plan, `k` EP rounds, one
/// PEC round, concatenated Steane decoding, key accounting. Aborts are
/// reported as values, never as errors.
pub fn run_protocol(config: &SimConfig) -> SimReport {
    let shared = shared_seed(config.seed);
    let sifted = sift(config.n_sent, &config.rates, config.seed);
    let sifted_count = sifted.len() as u64;
    let tested_count = 3 * config.test_bits_per_basis;

    let (estimate, stats, mut frame) =
        match estimate_rates(&sifted, config.test_bits_per_basis, shared) {
            Ok(parts) => parts,
            Err(_) => {
                return SimReport::aborted(
                    AbortReason::BitsExhausted,
                    sifted_count,
                    tested_count,
                    PauliRates::noiseless(),
                    BasisStats::default(),
                    SchedulePlan::placeholder(config.rates),
                    Vec::new(),
                );
            }
        };

    // Abort when the estimated bit error is too close to the threshold to
    // trust: within twice its own standard error.
    let tested_z = stats.tested_in(Basis::Z);
    if tested_z > 0 {
        let e = stats.rate(Basis::Z);
        let std_err = (e * (1.0 - e) / tested_z as f64).sqrt();
        if estimate.bit_error() >= depolarizing_threshold().bit_error - 2.0 * std_err {
            return SimReport::aborted(
                AbortReason::Threshold,
                sifted_count,
                tested_count,
                estimate,
                stats,
                SchedulePlan::placeholder(estimate),
                Vec::new(),
            );
        }
    }

    let mut planning_rates = if config.plan_on_true_rates { config.rates } else { estimate };
    if config.symmetrize_estimate {
        let p = planning_rates.channel_error() / 3.0;
        planning_rates = PauliRates::normalized(1.0 - 3.0 * p, p, p, p)
            .expect("symmetrized rates are normalizable");
    }
    let planner_config = PlannerConfig {
        n_sifted: frame.len() as u64,
        ..config.planner
    };
    let plan = plan_schedule(&planning_rates, &planner_config);
    if !plan.feasible {
        return SimReport::aborted(
            AbortReason::PlanInfeasible,
            sifted_count,
            tested_count,
            estimate,
            stats,
            plan,
            Vec::new(),
        );
    }

    let mut post_ep_counts = Vec::with_capacity(plan.k as usize);
    for round in 0..plan.k {
        let (next, survivors) = ep_round(&frame, derive_seed(shared, Stage::Pairing, round as u64));
        post_ep_counts.push(survivors);
        frame = next;
    }

    if (frame.len() as u64) < plan.r {
        return SimReport::aborted(
            AbortReason::BitsExhausted,
            sifted_count,
            tested_count,
            estimate,
            stats,
            plan,
            post_ep_counts,
        );
    }
    let frame = pec_round(&frame, plan.r, derive_seed(shared, Stage::PecGroup, 0))
        .expect("plan widths are valid");
    let post_pec_count = frame.len() as u64;

    let (key_length, mismatches, residual) =
        finalize_key(&frame, plan.levels, derive_seed(shared, Stage::SteanePermute, 0));
    if key_length == 0 {
        return SimReport::aborted(
            AbortReason::BitsExhausted,
            sifted_count,
            tested_count,
            estimate,
            stats,
            plan,
            post_ep_counts,
        );
    }

    SimReport {
        sifted_count,
        tested_count,
        estimated_rates: estimate,
        basis_stats: stats,
        plan,
        post_ep_counts,
        post_pec_count,
        final_key_length: key_length,
        key_mismatch_count: mismatches,
        residual_phase_error_rate: residual,
        aborted: None,
    }
}

/// Independent repetitions with per-trial derived seeds.
///
/// Trials are embarrassingly parallel: each derives its own seed, shares no
/// state, and the reports come back in trial order regardless of scheduling.
pub fn run_trials(config: &SimConfig) -> Vec<SimReport> {
    let trial_configs: Vec<SimConfig> = (0..config.trials)
        .map(|t| SimConfig {
            seed: derive_seed(config.seed, Stage::Trial, t as u64),
            trials: 1,
            ..config.clone()
        })
        .collect();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(trial_configs.len().max(1));
    if workers <= 1 || trial_configs.len() <= 1 {
        return trial_configs.iter().map(run_protocol).collect();
    }
    let chunk_size = trial_configs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = trial_configs
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(move || chunk.iter().map(run_protocol).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("trial worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::depolarizing;

    fn frame_of(labels: &[PauliLabel]) -> ErrorFrame {
        ErrorFrame::from_labels(labels, 99)
    }

    #[test]
    fn basis_mismatch_rules() {
        use PauliLabel::*;
        assert!(!Basis::Z.mismatches(I) && !Basis::Z.mismatches(Z));
        assert!(Basis::Z.mismatches(X) && Basis::Z.mismatches(Y));
        assert!(!Basis::X.mismatches(I) && !Basis::X.mismatches(X));
        assert!(Basis::X.mismatches(Y) && Basis::X.mismatches(Z));
        assert!(!Basis::Y.mismatches(I) && !Basis::Y.mismatches(Y));
        assert!(Basis::Y.mismatches(X) && Basis::Y.mismatches(Z));
    }

    #[test]
    fn sift_noiseless_and_counts() {
        let frame = sift(30_000, &PauliRates::noiseless(), 5);
        assert!(frame.iter().all(|l| l == PauliLabel::I));
        let n = 30_000f64;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        assert!((frame.len() as f64 - n / 3.0).abs() <= 4.0 * sigma);

        // Determinism.
        let again = sift(30_000, &PauliRates::noiseless(), 5);
        assert_eq!(frame, again);
    }

    #[test]
    fn estimate_noiseless() {
        let frame = sift(30_000, &PauliRates::noiseless(), 5);
        let (estimate, stats, rest) = estimate_rates(&frame, 1_000, 7).unwrap();
        assert_eq!(estimate, PauliRates::noiseless());
        assert_eq!(stats.tested.iter().sum::<u64>(), 3_000);
        assert_eq!(stats.mismatched, [0, 0, 0]);
        assert_eq!(rest.len(), frame.len() - 3_000);
    }

    #[test]
    fn estimate_too_short() {
        let frame = frame_of(&[PauliLabel::I; 5]);
        assert!(matches!(
            estimate_rates(&frame, 2, 1),
            Err(Error::FrameTooShort { .. })
        ));
    }

    #[test]
    fn estimate_recovers_depolarizing_rates() {
        let rates = depolarizing(0.2).unwrap();
        let frame = crate::pauli::sample_frame(&rates, 1_200_000, 11);
        let (estimate, _, _) = estimate_rates(&frame, 300_000, 13).unwrap();
        // ~300k tests per basis: each component is accurate to a few 1e-3.
        let sigma = (0.1f64 * 0.9 / 300_000.0).sqrt();
        assert!(estimate.max_abs_diff(&rates) <= 4.0 * sigma + 1e-9);
    }

    #[test]
    fn ep_round_pair_outcomes() {
        use PauliLabel::*;
        // (Z, Z) is kept as I.
        let (out, survivors) = ep_round(&frame_of(&[Z, Z]), 1);
        assert_eq!(survivors, 1);
        assert_eq!(out.get(0), I);
        // (X, Y) is kept as Y (in either order).
        let (out, _) = ep_round(&frame_of(&[X, Y]), 1);
        assert_eq!(out.get(0), Y);
        // (I, X) is discarded.
        let (out, survivors) = ep_round(&frame_of(&[I, X]), 1);
        assert_eq!(survivors, 0);
        assert!(out.is_empty());
        // Odd leftover is dropped: three positions make one pair.
        let (out, _) = ep_round(&frame_of(&[I, I, I]), 1);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn pec_round_group_outcomes() {
        use PauliLabel::*;
        // Even spin-flip count and phase minority: (X, X, I) -> I.
        let out = pec_round(&frame_of(&[X, X, I]), 3, 1).unwrap();
        assert_eq!(out.get(0), I);
        // Phase majority: (Z, Z, I) -> Z.
        let out = pec_round(&frame_of(&[Z, Z, I]), 3, 1).unwrap();
        assert_eq!(out.get(0), Z);
        // All identity stays identity.
        let out = pec_round(&frame_of(&[I, I, I]), 3, 1).unwrap();
        assert_eq!(out.get(0), I);
        // Leftover below r is discarded.
        let out = pec_round(&frame_of(&[I, I, I, X]), 3, 1).unwrap();
        assert_eq!(out.len(), 1);

        assert!(pec_round(&frame_of(&[I; 4]), 4, 1).is_err());
    }

    #[test]
    fn steane_block_corrects_single_errors() {
        use PauliLabel::*;
        let clean = [I; 7];
        assert_eq!(steane_decode_block(&clean), I);
        for pos in 0..7 {
            for error in [X, Y, Z] {
                let mut block = [I; 7];
                block[pos] = error;
                assert_eq!(steane_decode_block(&block), I, "{error} at {pos}");
            }
        }
    }

    #[test]
    fn steane_block_two_spin_flips_are_logical() {
        use PauliLabel::*;
        for a in 0..7 {
            for b in (a + 1)..7 {
                let mut block = [I; 7];
                block[a] = X;
                block[b] = X;
                assert_eq!(steane_decode_block(&block), X, "X at {a},{b}");
            }
        }
    }

    #[test]
    fn steane_concat_identity_and_counts() {
        let frame = frame_of(&[PauliLabel::X; 50]);
        assert_eq!(steane_concat_decode(&frame, 0), frame);
        let once = steane_concat_decode(&frame, 1);
        assert_eq!(once.len(), 7);
        let twice = steane_concat_decode(&frame, 2);
        assert_eq!(twice.len(), 1);
    }

    #[test]
    fn finalize_key_all_z_frame() {
        let frame = frame_of(&[PauliLabel::Z; 49]);
        let (key_length, mismatches, residual) = finalize_key(&frame, 2, 3);
        assert_eq!(key_length, 1);
        assert_eq!(mismatches, 0);
        assert_eq!(residual, 1.0);
    }

    #[test]
    fn run_protocol_noiseless_completes() {
        let mut config = SimConfig::new(300_000, PauliRates::noiseless(), 17);
        config.test_bits_per_basis = 1_000;
        let report = run_protocol(&config);
        assert_eq!(report.aborted, None);
        assert!(report.final_key_length > 0);
        assert_eq!(report.key_mismatch_count, 0);
        assert_eq!(report.residual_phase_error_rate, 0.0);
        assert_eq!(report.plan.k, 0);

        // Counts never increase along the pipeline.
        let mut previous = report.sifted_count - report.tested_count;
        for &count in &report.post_ep_counts {
            assert!(count <= previous);
            previous = count;
        }
        assert!(report.post_pec_count <= previous);
        assert!(report.final_key_length <= report.post_pec_count);
    }

    #[test]
    fn run_protocol_deterministic() {
        let mut config = SimConfig::new(600_000, depolarizing(0.08).unwrap(), 23);
        config.test_bits_per_basis = 10_000;
        let a = run_protocol(&config);
        let b = run_protocol(&config);
        assert_eq!(a, b);
    }

    #[test]
    fn run_protocol_aborts_above_threshold() {
        let mut config = SimConfig::new(300_000, depolarizing(0.30).unwrap(), 29);
        config.test_bits_per_basis = 5_000;
        let report = run_protocol(&config);
        assert_eq!(report.aborted, Some(AbortReason::Threshold));
        assert_eq!(report.final_key_length, 0);
    }

    #[test]
    fn symmetric_mismatch_rates_invert_to_depolarizing() {
        // e_Z = e_X = e_Y = 2p inverts to p_x = p_y = p_z = p.
        let stats = BasisStats { tested: [1000, 1000, 1000], mismatched: [200, 200, 200] };
        let estimate = invert_basis_stats(&stats);
        assert!((estimate.p_x() - 0.1).abs() < 1e-15);
        assert!((estimate.p_y() - 0.1).abs() < 1e-15);
        assert!((estimate.p_z() - 0.1).abs() < 1e-15);
        assert!((estimate.p_i() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn trials_use_distinct_seeds() {
        let mut config = SimConfig::new(300_000, depolarizing(0.05).unwrap(), 31);
        config.test_bits_per_basis = 2_000;
        config.trials = 3;
        let reports = run_trials(&config);
        assert_eq!(reports.len(), 3);
        assert!(reports.windows(2).any(|w| w[0] != w[1]));
    }
}
