//! Monte Carlo cross-validation of the analytic maps at reduced size.
//! (The acceptance suite repeats these at full size and tolerance.)

use sixstate::maps::{ep_map, pec_predict};
use sixstate::sim::{ep_round, pec_round, sift};
use sixstate::{depolarizing, sample_frame, ErrorFrame, PauliRates};

fn assert_counts_within_4_sigma(counts: [usize; 4], n: usize, expected: &PauliRates, what: &str) {
    for (count, p) in counts.iter().zip(expected.as_array()) {
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (*count as f64 - mean).abs() <= 4.0 * sigma.max(1.0),
            "{what}: count {count} vs mean {mean:.1} (sigma {sigma:.1})"
        );
    }
}

#[test]
fn ep_round_statistics_match_map() {
    let n = 100_000;
    let rates = depolarizing(0.10).unwrap();
    let frame = sample_frame(&rates, n, 101);
    let (out, survivors) = ep_round(&frame, 102);

    let (expected, survival) = ep_map(&rates);
    let pairs = (n / 2) as f64;
    let sigma = (pairs * survival * (1.0 - survival)).sqrt();
    assert!((survivors as f64 - pairs * survival).abs() <= 4.0 * sigma);
    assert_counts_within_4_sigma(out.label_counts(), out.len(), &expected, "EP output");
}

#[test]
fn pec_round_statistics_match_prediction() {
    let n = 100_000;
    let rates = depolarizing(0.15).unwrap();
    for r in [3u64, 5] {
        let frame = sample_frame(&rates, n, 200 + r);
        let out = pec_round(&frame, r, 300 + r).unwrap();
        assert_eq!(out.len(), n / r as usize);
        let predicted = pec_predict(&rates, r).unwrap();
        assert_counts_within_4_sigma(
            out.label_counts(),
            out.len(),
            &predicted.exact_rates,
            &format!("PEC r={r}"),
        );
    }
}

/// Pairwise correlation of adjacent output labels should vanish: the rounds
/// produce exchangeable, independent groups.
fn adjacent_correlation(frame: &ErrorFrame, component: fn(sixstate::PauliLabel) -> bool) -> f64 {
    let n = frame.len() - 1;
    let values: Vec<f64> = frame.iter().map(|l| component(l) as u8 as f64).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    if variance == 0.0 {
        return 0.0;
    }
    let covariance = (0..n)
        .map(|i| (values[i] - mean) * (values[i + 1] - mean))
        .sum::<f64>()
        / n as f64;
    covariance / variance
}

#[test]
fn round_outputs_are_uncorrelated() {
    let rates = depolarizing(0.12).unwrap();
    let frame = sample_frame(&rates, 200_000, 400);
    let (ep_out, _) = ep_round(&frame, 401);
    let bound = 4.0 / (ep_out.len() as f64).sqrt();
    assert!(adjacent_correlation(&ep_out, |l| l.x()).abs() <= bound);
    assert!(adjacent_correlation(&ep_out, |l| l.z()).abs() <= bound);

    let pec_out = pec_round(&frame, 3, 402).unwrap();
    let bound = 4.0 / (pec_out.len() as f64).sqrt();
    assert!(adjacent_correlation(&pec_out, |l| l.x()).abs() <= bound);
    assert!(adjacent_correlation(&pec_out, |l| l.z()).abs() <= bound);
}

#[test]
fn pipeline_counts_shrink_as_specified() {
    let rates = depolarizing(0.08).unwrap();
    let frame = sift(90_000, &rates, 500);
    let n = frame.len();
    assert_eq!(frame.generation(), 0);
    let (after_ep, _) = ep_round(&frame, 501);
    assert!(after_ep.len() <= n / 2);
    assert_eq!(after_ep.generation(), 1);
    let after_pec = pec_round(&after_ep, 5, 502).unwrap();
    assert_eq!(after_pec.len(), after_ep.len() / 5);
    assert_eq!(after_pec.generation(), 2);
    let decoded = sixstate::sim::steane_concat_decode(&after_pec, 2);
    assert_eq!(decoded.len(), after_pec.len() / 49);
    assert_eq!(decoded.generation(), 4);
}
