//! Monte-Carlo checks of the directory Bloom filter against the analytic
//! false-positive rate `(1 - e^{-kn/m})^k`.

use dentrykv_core::bloom::{probe_positions, BloomFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn analytic_fp(n: f64, m: f64, k: f64) -> f64 {
    (1.0 - (-k * n / m).exp()).powf(k)
}

#[test]
fn analytic_rate_for_default_parameters() {
    let fp = analytic_fp(10_000.0, 100_000.0, 7.0);
    assert!((fp - 0.0082).abs() < 0.0001, "{fp}");
}

#[test]
fn random_keys_fp_rate_in_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let inserted: Vec<[u8; 16]> = (0..10_000).map(|_| rng.random()).collect();
    let f = BloomFilter::build(inserted.iter().map(|k| &k[..]), 10, 7);
    assert_eq!(f.bit_len(), 100_000);
    let inserted_set: std::collections::HashSet<_> = inserted.iter().collect();
    let mut fp = 0;
    let mut probes = 0;
    while probes < 100_000 {
        let k: [u8; 16] = rng.random();
        if inserted_set.contains(&k) {
            continue;
        }
        probes += 1;
        fp += f.may_contain(&k) as usize;
    }
    let rate = fp as f64 / probes as f64;
    assert!((0.004..=0.016).contains(&rate), "fp rate {rate}");
}

#[test]
fn may_contain_matches_recomputed_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let keys: Vec<Vec<u8>> = (0..300).map(|i| format!("{i:016}").into_bytes()).collect();
    let f = BloomFilter::build(keys.iter().map(Vec::as_slice), 10, 7);
    // Independent bit bookkeeping from the documented probe formula.
    let m = f.bit_len();
    let mut set = vec![false; m as usize];
    for k in &keys {
        for p in probe_positions(k, m, 7) {
            set[p as usize] = true;
        }
    }
    for _ in 0..1000 {
        let probe: Vec<u8> = (0..rng.random_range(1..24)).map(|_| rng.random()).collect();
        let expected = probe_positions(&probe, m, 7).all(|p| set[p as usize]);
        assert_eq!(f.may_contain(&probe), expected);
    }
}

#[test]
fn no_false_negatives() {
    let keys: Vec<Vec<u8>> = (0..5000).map(|i| format!("key-{i}").into_bytes()).collect();
    let f = BloomFilter::build(keys.iter().map(Vec::as_slice), 10, 7);
    assert!(keys.iter().all(|k| f.may_contain(k)));
}
