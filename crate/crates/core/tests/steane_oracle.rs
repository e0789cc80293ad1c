//! Nearest-codeword oracle for the Steane block decoder.
//!
//! The Hamming [7,4] code is perfect: every 7-bit vector lies within
//! distance one of exactly one codeword. The oracle decodes by exhaustive
//! nearest-codeword search over the 16 codewords and extracts the logical
//! bit as the corrected word's weight parity; the syndrome decoder must
//! agree on every one of the 128 x 128 label patterns.

use sixstate::sim::steane_decode_block;
use sixstate::PauliLabel;

/// All 16 Hamming codewords, found by filtering every 7-bit vector on a
/// zero syndrome (position j checks column j+1).
fn codewords() -> Vec<u8> {
    (0u8..128)
        .filter(|v| {
            let mut syndrome = 0u8;
            for j in 0..7u8 {
                if v & (1 << j) != 0 {
                    syndrome ^= j + 1;
                }
            }
            syndrome == 0
        })
        .collect()
}

fn nearest_codeword_logical(v: u8, codewords: &[u8]) -> bool {
    let (mut best, mut best_distance) = (0u8, u32::MAX);
    let mut ties = 0;
    for &c in codewords {
        let distance = (v ^ c).count_ones();
        if distance < best_distance {
            best = c;
            best_distance = distance;
            ties = 1;
        } else if distance == best_distance {
            ties += 1;
        }
    }
    assert!(
        best_distance <= 1 && ties == 1,
        "perfect code property violated at {v:#09b}"
    );
    best.count_ones() % 2 == 1
}

fn block_from_bits(x_bits: u8, z_bits: u8) -> [PauliLabel; 7] {
    let mut block = [PauliLabel::I; 7];
    for (j, slot) in block.iter_mut().enumerate() {
        *slot = PauliLabel::from_bits(x_bits & (1 << j) != 0, z_bits & (1 << j) != 0);
    }
    block
}

#[test]
fn code_has_sixteen_codewords_with_hamming_weights() {
    let codewords = codewords();
    assert_eq!(codewords.len(), 16);
    let mut weight_counts = [0usize; 8];
    for c in &codewords {
        weight_counts[c.count_ones() as usize] += 1;
    }
    // Weight enumerator 1 + 7 z^3 + 7 z^4 + z^7.
    assert_eq!(weight_counts, [1, 0, 0, 7, 7, 0, 0, 1]);
}

#[test]
fn decoder_matches_nearest_codeword_on_all_patterns() {
    let codewords = codewords();
    for x_bits in 0u8..128 {
        for z_bits in 0u8..128 {
            let decoded = steane_decode_block(&block_from_bits(x_bits, z_bits));
            assert_eq!(
                decoded.x(),
                nearest_codeword_logical(x_bits, &codewords),
                "x side at x={x_bits:#09b}"
            );
            assert_eq!(
                decoded.z(),
                nearest_codeword_logical(z_bits, &codewords),
                "z side at z={z_bits:#09b}"
            );
        }
    }
}

#[test]
fn single_errors_decode_to_identity_and_double_x_to_logical_x() {
    // Redundant with the exhaustive sweep, but pins the two worked cases:
    // every single error corrects away; every two-X pattern miscorrects to
    // a weight-3 codeword, i.e. logical X.
    for pos in 0..7 {
        for error in [PauliLabel::X, PauliLabel::Y, PauliLabel::Z] {
            let mut block = [PauliLabel::I; 7];
            block[pos] = error;
            assert_eq!(steane_decode_block(&block), PauliLabel::I);
        }
    }
    for a in 0..7 {
        for b in (a + 1)..7 {
            let mut block = [PauliLabel::I; 7];
            block[a] = PauliLabel::X;
            block[b] = PauliLabel::X;
            assert_eq!(steane_decode_block(&block), PauliLabel::X);
        }
    }
}
