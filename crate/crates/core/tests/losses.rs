mod common;

use common::*;
use proptest::prelude::*;

use weatherclass::losses::*;
use weatherclass::pipeline::build_pair_set;
use weatherclass::tensor::{Graph, Tensor};
use weatherclass::WeatherClass::{self, *};

#[test]
fn classification_gradients() {
    suites::classification_gradients();
}

#[test]
fn contrastive_gradients() {
    suites::contrastive_gradients();
}

#[test]
fn adversarial_gradients() {
    suites::adversarial_gradients();
}

#[test]
fn cycle_gradients() {
    suites::cycle_gradients();
}

#[test]
fn identity_gradients() {
    suites::identity_gradients();
}

#[test]
fn weather_gradients() {
    suites::weather_gradients();
}

#[test]
fn cyclegan_total_gradients() {
    suites::cyclegan_total_gradients();
}

#[test]
fn total_loss_gradients() {
    suites::total_loss_gradients();
}

#[test]
fn classification_matches_reference() {
    suites::classification_matches_reference();
}

#[test]
fn classification_hand_example() {
    suites::classification_hand_example();
}

#[test]
fn uniform_predictions_give_ln3() {
    suites::uniform_predictions_give_ln3();
}

#[test]
fn contrastive_matches_reference() {
    suites::contrastive_matches_reference();
}

#[test]
fn contrastive_hand_examples() {
    suites::contrastive_hand_examples();
}

#[test]
fn adversarial_matches_reference() {
    suites::adversarial_matches_reference();
}

#[test]
fn adversarial_with_indifferent_discriminator() {
    suites::adversarial_with_indifferent_discriminator();
}

#[test]
fn cycle_and_identity_match_reference() {
    suites::cycle_and_identity_match_reference();
}

#[test]
fn cycle_with_zero_generators() {
    suites::cycle_with_zero_generators();
}

#[test]
fn weather_matches_reference() {
    suites::weather_matches_reference();
}

#[test]
fn weather_with_stub_classifier() {
    suites::weather_with_stub_classifier();
}

#[test]
fn cyclegan_total_recomposes_from_references() {
    suites::cyclegan_total_recomposes_from_references();
}

#[test]
fn cyclegan_total_is_linear_in_cycle_weight() {
    suites::cyclegan_total_is_linear_in_cycle_weight();
}

#[test]
fn total_loss_arithmetic() {
    suites::total_loss_arithmetic();
}

#[test]
fn pair_set_matches_enumeration() {
    suites::pair_set_matches_enumeration();
}

// ── properties ──────────────────────────────────────────────────────────

fn class_strategy() -> impl Strategy<Value = WeatherClass> {
    (0..3usize).prop_map(|i| WeatherClass::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_is_nonnegative(
        raw in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..6),
        eps in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let rows: Vec<[f64; 3]> = raw.iter().map(|w| {
            let s: f64 = w.iter().sum::<f64>() + 1e-9;
            w.map(|x| (x + 1e-9 / 3.0) / s)
        }).collect();
        let ys = labels(&mut rng(seed), rows.len());
        let mut g = Graph::new();
        let p = g.constant(Tensor::new(&[rows.len(), 3], rows.concat()).unwrap());
        let l = classification_loss(&mut g, p, &ys, eps).unwrap();
        prop_assert!(g.scalar(l) >= -1e-12);
    }

    #[test]
    fn contrastive_is_nonnegative_and_matches_reference(
        ys in prop::collection::vec(class_strategy(), 2..7),
        seed in any::<u64>(),
        tau in 0.05f64..2.0,
    ) {
        let pairs = build_pair_set(&ys, &[]);
        let emb = unit_rows(&mut rng(seed), ys.len(), 3);
        let mut g = Graph::new();
        let e = g.constant(rows_tensor(&emb));
        let l_var = contrastive_loss(&mut g, e, &ys, &pairs, tau).unwrap().loss;
        let l = g.scalar(l_var);
        prop_assert!(l >= 0.0);
        prop_assert!((l - contrastive_ref(&emb, &ys, &pairs, tau)).abs() < ORACLE_TOL);
    }

    #[test]
    fn positive_term_is_orientation_free(seed in any::<u64>(), tau in 0.05f64..2.0) {
        // all labels equal: no negatives, so only the positive term remains
        let ys = [Rain, Rain];
        let emb = unit_rows(&mut rng(seed), 2, 4);
        let forward = PairSet { positive_pairs: vec![PositivePair { anchor: 0, positive: 1, kind: PairKind::SameClass }] };
        let backward = PairSet { positive_pairs: vec![PositivePair { anchor: 1, positive: 0, kind: PairKind::SameClass }] };
        let value = |pairs: &PairSet| {
            let mut g = Graph::new();
            let e = g.constant(rows_tensor(&emb));
            let l = contrastive_loss(&mut g, e, &ys, pairs, tau).unwrap().loss;
            g.scalar(l)
        };
        prop_assert!((value(&forward) - value(&backward)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_linear_in_weights(con in 0.0f64..10.0, cls in 0.0f64..10.0, a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let w = LossWeights { lambda_con: a, lambda_cls: b, ..LossWeights::default() };
        let bumped = LossWeights { lambda_con: a + 1.0, ..w.clone() };
        let base = total_loss_value(con, cls, &w).unwrap();
        prop_assert!((total_loss_value(con, cls, &bumped).unwrap() - base - con).abs() < 1e-9);
        let bumped = LossWeights { lambda_cls: b + 1.0, ..w.clone() };
        prop_assert!((total_loss_value(con, cls, &bumped).unwrap() - base - cls).abs() < 1e-9);
    }
}
