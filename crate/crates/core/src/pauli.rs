//! Pauli channel rates, symplectic error labels, and bulk error frames.

use rand::Rng;

use crate::error::Error;
use crate::seed::{stage_rng, Stage};

/// One Pauli error on one position, in symplectic `(x, z)` form.
///
/// `x` set means the position suffers a spin flip, `z` set a phase flip;
/// `Y` carries both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PauliLabel {
    I = 0b00,
    X = 0b01,
    Z = 0b10,
    Y = 0b11,
}

impl PauliLabel {
    /// All four labels in packed-code order.
    pub const ALL: [PauliLabel; 4] = [PauliLabel::I, PauliLabel::X, PauliLabel::Z, PauliLabel::Y];

    #[inline]
    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => PauliLabel::I,
            (true, false) => PauliLabel::X,
            (false, true) => PauliLabel::Z,
            (true, true) => PauliLabel::Y,
        }
    }

    #[inline]
    fn from_code(code: u8) -> Self {
        match code & 0b11 {
            0b00 => PauliLabel::I,
            0b01 => PauliLabel::X,
            0b10 => PauliLabel::Z,
            _ => PauliLabel::Y,
        }
    }

    /// Spin-flip component.
    #[inline]
    pub fn x(self) -> bool {
        (self as u8) & 0b01 != 0
    }

    /// Phase-flip component.
    #[inline]
    pub fn z(self) -> bool {
        (self as u8) & 0b10 != 0
    }
}

impl std::fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = match self {
            PauliLabel::I => 'I',
            PauliLabel::X => 'X',
            PauliLabel::Y => 'Y',
            PauliLabel::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// Probability 4-vector `(p_i, p_x, p_y, p_z)` of an i.i.d. Pauli channel.
///
/// Construction enforces non-negative components summing to 1 within `1e-12`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliRates {
    p_i: f64,
    p_x: f64,
    p_y: f64,
    p_z: f64,
}

/// Tolerance on the normalization of a rate vector.
pub const NORMALIZATION_TOL: f64 = 1e-12;

impl PauliRates {
    pub fn new(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Result<Self, Error> {
        let invalid = |reason: &str| Error::InvalidRates {
            p_i,
            p_x,
            p_y,
            p_z,
            reason: reason.to_string(),
        };
        for p in [p_i, p_x, p_y, p_z] {
            if !p.is_finite() {
                return Err(invalid("non-finite component"));
            }
            if p < 0.0 {
                return Err(invalid("negative component"));
            }
        }
        let sum = p_i + p_x + p_y + p_z;
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(invalid("components do not sum to 1"));
        }
        Ok(Self { p_i, p_x, p_y, p_z })
    }

    /// The noiseless channel `(1, 0, 0, 0)`.
    pub fn noiseless() -> Self {
        Self { p_i: 1.0, p_x: 0.0, p_y: 0.0, p_z: 0.0 }
    }

    /// Clamp negatives to zero and rescale so the components sum to 1.
    ///
    /// Used where rate vectors arise from noisy statistics (tomographic
    /// inversion) rather than exact arithmetic.
    pub fn normalized(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Result<Self, Error> {
        let c = [p_i.max(0.0), p_x.max(0.0), p_y.max(0.0), p_z.max(0.0)];
        let sum: f64 = c.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidRates {
                p_i,
                p_x,
                p_y,
                p_z,
                reason: "cannot renormalize: non-positive total".to_string(),
            });
        }
        Self::new(c[0] / sum, c[1] / sum, c[2] / sum, c[3] / sum)
    }

    #[inline]
    pub fn p_i(&self) -> f64 {
        self.p_i
    }
    #[inline]
    pub fn p_x(&self) -> f64 {
        self.p_x
    }
    #[inline]
    pub fn p_y(&self) -> f64 {
        self.p_y
    }
    #[inline]
    pub fn p_z(&self) -> f64 {
        self.p_z
    }

    /// Probability of the given label.
    #[inline]
    pub fn prob(&self, label: PauliLabel) -> f64 {
        match label {
            PauliLabel::I => self.p_i,
            PauliLabel::X => self.p_x,
            PauliLabel::Y => self.p_y,
            PauliLabel::Z => self.p_z,
        }
    }

    /// Spin-flip ("bit") error rate `p_x + p_y`.
    #[inline]
    pub fn bit_error(&self) -> f64 {
        self.p_x + self.p_y
    }

    /// Phase-flip error rate `p_y + p_z`.
    #[inline]
    pub fn phase_error(&self) -> f64 {
        self.p_y + self.p_z
    }

    /// Overall channel error rate `p_x + p_y + p_z`.
    #[inline]
    pub fn channel_error(&self) -> f64 {
        self.p_x + self.p_y + self.p_z
    }

    /// Componentwise maximum absolute difference.
    pub fn max_abs_diff(&self, other: &PauliRates) -> f64 {
        (self.p_i - other.p_i)
            .abs()
            .max((self.p_x - other.p_x).abs())
            .max((self.p_y - other.p_y).abs())
            .max((self.p_z - other.p_z).abs())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p_i, self.p_x, self.p_y, self.p_z]
    }
}

/// Depolarizing channel with the given spin-flip ("bit") error rate.
///
/// The three Pauli errors are equiprobable: each component is `bit_error/2`,
/// so `bit_error = p_x + p_y` recovers the input. Valid for
/// `0 <= bit_error <= 2/3`.
pub fn depolarizing(bit_error: f64) -> Result<PauliRates, Error> {
    if !bit_error.is_finite() || !(0.0..=2.0 / 3.0).contains(&bit_error) {
        return Err(Error::BitErrorOutOfRange(bit_error));
    }
    let p = bit_error / 2.0;
    PauliRates::new(1.0 - 3.0 * p, p, p, p)
}

/// Joint Alice–Bob error record for the surviving sifted positions.
///
/// Labels are stored packed, two bits per position, so frames of 10^7
/// positions stay small enough to shuffle in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorFrame {
    packed: Vec<u8>,
    len: usize,
    origin_seed: u64,
    generation: u32,
}

impl ErrorFrame {
    pub fn new(origin_seed: u64) -> Self {
        Self { packed: Vec::new(), len: 0, origin_seed, generation: 0 }
    }

    pub fn with_capacity(n: usize, origin_seed: u64) -> Self {
        Self {
            packed: Vec::with_capacity(n.div_ceil(4)),
            len: 0,
            origin_seed,
            generation: 0,
        }
    }

    pub fn from_labels(labels: &[PauliLabel], origin_seed: u64) -> Self {
        let mut frame = Self::with_capacity(labels.len(), origin_seed);
        for &l in labels {
            frame.push(l);
        }
        frame
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn origin_seed(&self) -> u64 {
        self.origin_seed
    }

    /// Pipeline stage counter: how many transforming passes produced this frame.
    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub(crate) fn set_generation(&mut self, generation: u32) {
        self.generation = generation;
    }

    #[inline]
    pub fn get(&self, index: usize) -> PauliLabel {
        debug_assert!(index < self.len);
        let byte = self.packed[index / 4];
        PauliLabel::from_code(byte >> ((index % 4) * 2))
    }

    #[inline]
    pub fn set(&mut self, index: usize, label: PauliLabel) {
        debug_assert!(index < self.len);
        let shift = (index % 4) * 2;
        let byte = &mut self.packed[index / 4];
        *byte = (*byte & !(0b11 << shift)) | ((label as u8) << shift);
    }

    #[inline]
    pub fn push(&mut self, label: PauliLabel) {
        if self.len.is_multiple_of(4) {
            self.packed.push(0);
        }
        self.len += 1;
        let idx = self.len - 1;
        self.set(idx, label);
    }

    pub fn iter(&self) -> impl Iterator<Item = PauliLabel> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Counts of (I, X, Y, Z) labels.
    pub fn label_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for l in self.iter() {
            match l {
                PauliLabel::I => counts[0] += 1,
                PauliLabel::X => counts[1] += 1,
                PauliLabel::Y => counts[2] += 1,
                PauliLabel::Z => counts[3] += 1,
            }
        }
        counts
    }

    /// In-place Fisher–Yates shuffle driven by the supplied RNG.
    pub(crate) fn shuffle<R: Rng>(&mut self, rng: &mut R) {
        for i in (1..self.len).rev() {
            let j = rng.random_range(0..=i);
            let a = self.get(i);
            let b = self.get(j);
            self.set(i, b);
            self.set(j, a);
        }
    }
}

/// Sample one label from `rates` using a uniform draw in `[0, 1)`.
#[inline]
pub(crate) fn sample_label<R: Rng>(rates: &PauliRates, rng: &mut R) -> PauliLabel {
    let u: f64 = rng.random();
    // Cumulative thresholds in I, X, Y, Z order.
    if u < rates.p_i() {
        PauliLabel::I
    } else if u < rates.p_i() + rates.p_x() {
        PauliLabel::X
    } else if u < rates.p_i() + rates.p_x() + rates.p_y() {
        PauliLabel::Y
    } else {
        PauliLabel::Z
    }
}

/// Draw `n` i.i.d. labels from `rates`, deterministically for a fixed seed.
pub fn sample_frame(rates: &PauliRates, n: usize, seed: u64) -> ErrorFrame {
    let mut rng = stage_rng(seed, Stage::Sample, 0);
    let mut frame = ErrorFrame::with_capacity(n, seed);
    for _ in 0..n {
        frame.push(sample_label(rates, &mut rng));
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_bit_encoding() {
        assert_eq!(PauliLabel::from_bits(false, false), PauliLabel::I);
        assert_eq!(PauliLabel::from_bits(true, false), PauliLabel::X);
        assert_eq!(PauliLabel::from_bits(true, true), PauliLabel::Y);
        assert_eq!(PauliLabel::from_bits(false, true), PauliLabel::Z);
        assert!(PauliLabel::Y.x() && PauliLabel::Y.z());
        assert!(!PauliLabel::I.x() && !PauliLabel::I.z());
    }

    #[test]
    fn rates_validation() {
        assert!(PauliRates::new(0.7, 0.1, 0.1, 0.1).is_ok());
        assert!(PauliRates::new(0.7, 0.1, 0.1, 0.2).is_err());
        assert!(PauliRates::new(1.1, -0.1, 0.0, 0.0).is_err());
        assert!(PauliRates::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn depolarizing_examples() {
        // Noiseless channel.
        let r = depolarizing(0.0).unwrap();
        assert_eq!(r.as_array(), [1.0, 0.0, 0.0, 0.0]);

        // Direct substitution at 10% bit error.
        let r = depolarizing(0.10).unwrap();
        assert!((r.p_i() - 0.85).abs() < 1e-15);
        assert!((r.p_x() - 0.05).abs() < 1e-15);
        assert!((r.bit_error() - 0.10).abs() < 1e-15);

        // At the six-state threshold bit error 0.5 - 0.1*sqrt(5).
        let b = 0.5 - 0.1 * 5.0f64.sqrt();
        let r = depolarizing(b).unwrap();
        assert!((r.p_i() - (0.25 + 0.15 * 5.0f64.sqrt())).abs() < 1e-12);

        assert!(depolarizing(0.7).is_err());
        assert!(depolarizing(-0.01).is_err());
    }

    #[test]
    fn frame_pack_roundtrip() {
        let labels = [
            PauliLabel::I,
            PauliLabel::X,
            PauliLabel::Y,
            PauliLabel::Z,
            PauliLabel::Z,
            PauliLabel::I,
            PauliLabel::Y,
        ];
        let frame = ErrorFrame::from_labels(&labels, 3);
        assert_eq!(frame.len(), labels.len());
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(frame.get(i), l);
        }
        let collected: Vec<_> = frame.iter().collect();
        assert_eq!(collected, labels);
    }

    #[test]
    fn sample_frame_degenerate_rates() {
        let frame = sample_frame(&PauliRates::noiseless(), 5, 1);
        assert!(frame.iter().all(|l| l == PauliLabel::I));

        let pure_x = PauliRates::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let frame = sample_frame(&pure_x, 3, 1);
        assert!(frame.iter().all(|l| l == PauliLabel::X));
    }

    #[test]
    fn sample_frame_deterministic() {
        let rates = depolarizing(0.2).unwrap();
        let a = sample_frame(&rates, 1000, 42);
        let b = sample_frame(&rates, 1000, 42);
        assert_eq!(a, b);
        let c = sample_frame(&rates, 1000, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_frame_frequencies_within_4_sigma() {
        let rates = PauliRates::new(0.7, 0.1, 0.1, 0.1).unwrap();
        let n = 1_000_000usize;
        let frame = sample_frame(&rates, n, 7);
        let counts = frame.label_counts();
        for (count, p) in counts
            .iter()
            .zip([rates.p_i(), rates.p_x(), rates.p_y(), rates.p_z()])
        {
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (*count as f64 - mean).abs() <= 4.0 * sigma,
                "count {count} vs mean {mean} (sigma {sigma})"
            );
        }
    }
}
