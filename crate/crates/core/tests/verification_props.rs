//! Relaxed acceptance and tree verification properties.

use hybrid_spec_core::actions::{Quantizer, Token};
use hybrid_spec_core::drafting::{build_sequence_tree, split_groups, Draft, GroupKind, Source};
use hybrid_spec_core::harness::{oracle_rollout, EnvConfig, OracleVerifier, World};
use hybrid_spec_core::models::VerifierModel;
use hybrid_spec_core::verification::{accept_sequence, generate_autoregressive, verify_tree, RelaxedAcceptance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The acceptance rule written out directly.
fn rule(kind: GroupKind, bias: &[u32], p: &RelaxedAcceptance) -> bool {
    if kind == GroupKind::Gripper || !p.enabled {
        return bias.iter().all(|&b| b == 0);
    }
    bias.iter().sum::<u32>() <= p.bias_seq_max && bias.iter().all(|&b| b <= p.bias_token_max)
}

/// Draft/verify tokens realizing a bias vector, with random signs.
fn realize(rng: &mut ChaCha8Rng, bias: &[u32]) -> (Vec<Token>, Vec<Token>) {
    let mut d = Vec::new();
    let mut v = Vec::new();
    for &b in bias {
        let base: u32 = rng.random_range(0..=255 - b);
        let (x, y) = if rng.random() { (base, base + b) } else { (base + b, base) };
        d.push(x as Token);
        v.push(y as Token);
    }
    (d, v)
}

#[test]
fn ten_thousand_bias_vectors_follow_the_rule() {
    let p = RelaxedAcceptance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10_000 {
        let bias: Vec<u32> = (0..3).map(|_| rng.random_range(0..=24)).collect();
        let (d, v) = realize(&mut rng, &bias);
        for kind in [GroupKind::Position, GroupKind::Rotation] {
            assert_eq!(accept_sequence(kind, &d, &v, &p).unwrap(), rule(kind, &bias, &p), "{bias:?}");
            assert_eq!(accept_sequence(kind, &d, &v, &RelaxedAcceptance::strict()).unwrap(), bias == [0, 0, 0]);
        }
        // Lowering any component of an accepted vector keeps it accepted.
        if rule(GroupKind::Position, &bias, &p) {
            let i = rng.random_range(0..3);
            let mut lower = bias.clone();
            lower[i] = rng.random_range(0..=bias[i]);
            let (d, v) = realize(&mut rng, &lower);
            assert!(accept_sequence(GroupKind::Position, &d, &v, &p).unwrap());
        }
        let g: u32 = rng.random_range(0..3);
        let (d, v) = realize(&mut rng, &[g]);
        assert_eq!(accept_sequence(GroupKind::Gripper, &d, &v, &p).unwrap(), g == 0);
    }
}

proptest! {
    #[test]
    fn acceptance_is_monotone(a in prop::array::uniform3(0u32..40), cut in prop::array::uniform3(0u32..40), seed in any::<u64>()) {
        let p = RelaxedAcceptance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<u32> = a.iter().zip(&cut).map(|(x, c)| x.saturating_sub(*c)).collect();
        let (da, va) = realize(&mut rng, &a);
        let (db, vb) = realize(&mut rng, &b);
        if accept_sequence(GroupKind::Rotation, &da, &va, &p).unwrap() {
            prop_assert!(accept_sequence(GroupKind::Rotation, &db, &vb, &p).unwrap());
        }
    }
}

fn world() -> World {
    let cfg = EnvConfig::default();
    World::new(cfg.world, Quantizer::default(), cfg.demo_instance(3, 1), 64).unwrap()
}

#[test]
fn strict_tree_verification_emits_the_greedy_stream() {
    let w = world();
    let (states, _) = oracle_rollout(&w, 150);
    let verifier = OracleVerifier::new(w);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in states.iter().step_by(5) {
        let truth = generate_autoregressive(&verifier, s, &[], 21).unwrap();
        // Three drafts: noisy copies of the greedy continuation.
        let drafts: Vec<Draft> = (0..3)
            .map(|r| {
                let toks: Vec<Token> =
                    truth.iter().map(|&t| if rng.random_bool(0.1) { t.wrapping_add(1) % 256 } else { t }).collect();
                Draft { groups: split_groups(&toks, 0, Source::Rank(r)).unwrap(), score: None }
            })
            .collect();
        let tree = build_sequence_tree(&drafts).unwrap();
        let out = verify_tree(&tree, &verifier, s, &[], &RelaxedAcceptance::strict(), 64).unwrap();
        let emitted = out.emitted();
        assert!(!emitted.is_empty());
        assert_eq!(emitted[..], truth[..emitted.len()]);
        assert!(out.verifier_calls >= 1);
        let again = verifier.greedy(s, &[], &emitted[..emitted.len() - 1]).unwrap();
        assert_eq!(again, emitted);
    }
}
