//! Exact search against a full-scan oracle, and HNSW recall against exact.

use hybrid_spec_core::hnsw::HnswParams;
use hybrid_spec_core::retrieval::{l2_normalize, Collection, Payload};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn payload(i: usize) -> Payload {
    Payload {
        dataset_name: "synthetic".into(),
        episode_idx: (i / 50) as u64,
        step_idx: (i % 50) as u64,
        current_action: [i as f64 * 1e-3; 7],
        next_actions: [[0.0; 7]; 3],
        language_instruction: "reach".into(),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    l2_normalize(&v).unwrap()
}

fn collection(vectors: &[Vec<f64>]) -> Collection {
    let mut c = Collection::new("synthetic", vectors[0].len()).unwrap();
    for (i, v) in vectors.iter().enumerate() {
        assert_eq!(c.insert(v.clone(), payload(i), None).unwrap(), i);
    }
    c
}

/// Full scan, full sort: score descending, id ascending.
fn brute_force(vectors: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> =
        vectors.iter().enumerate().map(|(i, v)| (i, v.iter().zip(q).map(|(a, b)| a * b).sum())).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn exact_top_k_equals_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vectors: Vec<Vec<f64>> = (0..1000).map(|_| random_unit(&mut rng, 32)).collect();
    let c = collection(&vectors);
    for _ in 0..100 {
        let q = random_unit(&mut rng, 32);
        for k in [1, 3, 5, 10] {
            let got: Vec<(usize, f64)> = c.search_exact(&q, k).unwrap().iter().map(|h| (h.record_id, h.score)).collect();
            assert_eq!(got, brute_force(&vectors, &q, k));
        }
    }
}

#[test]
fn duplicate_scores_break_ties_by_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<Vec<f64>> = (0..20).map(|_| random_unit(&mut rng, 8)).collect();
    // Every vector three times: equal scores everywhere.
    let vectors: Vec<Vec<f64>> = base.iter().cycle().take(60).cloned().collect();
    let c = collection(&vectors);
    let q = random_unit(&mut rng, 8);
    let got: Vec<(usize, f64)> = c.search_exact(&q, 10).unwrap().iter().map(|h| (h.record_id, h.score)).collect();
    assert_eq!(got, brute_force(&vectors, &q, 10));
}

#[test]
fn hnsw_recall_at_5() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let vectors: Vec<Vec<f64>> = (0..1000).map(|_| random_unit(&mut rng, 32)).collect();
    let mut c = collection(&vectors);
    c.build_hnsw(HnswParams::default()).unwrap();
    let mut found = 0usize;
    for _ in 0..100 {
        let q = random_unit(&mut rng, 32);
        let truth: Vec<usize> = brute_force(&vectors, &q, 5).iter().map(|h| h.0).collect();
        let hits = c.search(&q, 5).unwrap();
        assert!(hits.iter().all(|h| h.record_id < vectors.len() && std::ptr::eq(h.payload, &c.records()[h.record_id].payload)));
        found += hits.iter().filter(|h| truth.contains(&h.record_id)).count();
    }
    let recall = found as f64 / 500.0;
    assert!(recall >= 0.95, "recall@5 = {recall}");
}

#[test]
fn hnsw_single_record_and_self_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let one = vec![random_unit(&mut rng, 16)];
    let mut c = collection(&one);
    c.build_hnsw(HnswParams::default()).unwrap();
    let q = random_unit(&mut rng, 16);
    assert_eq!(c.search(&q, 3).unwrap()[0].record_id, 0);

    let vectors: Vec<Vec<f64>> = (0..300).map(|_| random_unit(&mut rng, 16)).collect();
    let mut c = collection(&vectors);
    c.build_hnsw(HnswParams::default()).unwrap();
    for (i, v) in vectors.iter().enumerate() {
        let top = c.search(v, 1).unwrap()[0];
        assert_eq!(top.record_id, i);
        assert!((top.score - 1.0).abs() < 1e-6);
    }
}

#[test]
fn wrong_dimension_is_a_schema_error() {
    let mut c = Collection::new("s", 4).unwrap();
    let err = c.insert(vec![1.0, 0.0, 0.0], payload(0), None).unwrap_err();
    assert!(matches!(err, hybrid_spec_core::Error::Schema(_)));
}

proptest! {
    #[test]
    fn exact_search_is_the_oracle(seed in any::<u64>(), n in 1usize..80, k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 6)).collect();
        let c = collection(&vectors);
        let q = random_unit(&mut rng, 6);
        let hits = c.search_exact(&q, k).unwrap();
        let got: Vec<(usize, f64)> = hits.iter().map(|h| (h.record_id, h.score)).collect();
        prop_assert_eq!(got, brute_force(&vectors, &q, k));
        prop_assert!(hits.iter().all(|h| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&h.score)));
    }
}
