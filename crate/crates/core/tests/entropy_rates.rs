//! Coder output against model cross-entropy on synthetic streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sit_core::entropy::{decode_symbols, encode_symbols, SymbolModel, MIN_SCALE};

/// Draws `n` symbols from the model's own distribution over its direct range.
fn sample(model: &SymbolModel, n: usize, seed: u64) -> Vec<i32> {
    let (lo, hi) = model.direct_range();
    let table: Vec<(i32, f64)> = (lo..=hi).map(|s| (s, model.probability(s).unwrap())).collect();
    let mass: f64 = table.iter().map(|t| t.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * mass;
            for &(s, p) in &table {
                if u < p {
                    return s;
                }
                u -= p;
            }
            hi
        })
        .collect()
}

#[test]
fn iid_stream_rate_tracks_entropy() {
    for (i, scale) in [0.3, 1.0, 4.0, 20.0].into_iter().enumerate() {
        let model = SymbolModel::laplacian(scale).unwrap();
        let symbols = sample(&model, 100_000, i as u64);
        let payload = encode_symbols(&symbols, &model).unwrap();
        let expected = model.entropy_bits() * symbols.len() as f64;
        let rel = (payload.exact_bits as f64 - expected).abs() / expected;
        assert!(rel <= 0.02, "scale {scale}: {} bits vs {expected:.0}", payload.exact_bits);
        assert_eq!(decode_symbols(&payload, &model, symbols.len()).unwrap(), symbols);
    }
}

#[test]
fn constant_stream_is_nearly_free() {
    let model = SymbolModel::laplacian_with_radius(MIN_SCALE, 4).unwrap();
    let symbols = vec![0; 100_000];
    let payload = encode_symbols(&symbols, &model).unwrap();
    assert!((payload.exact_bits as f64) / (symbols.len() as f64) < 0.01);
}

#[test]
fn million_symbol_round_trip() {
    let model = SymbolModel::laplacian(6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let symbols: Vec<i32> = (0..1_000_000).map(|_| rng.random_range(-400..=400)).collect();
    let payload = encode_symbols(&symbols, &model).unwrap();
    assert_eq!(decode_symbols(&payload, &model, symbols.len()).unwrap(), symbols);
}
