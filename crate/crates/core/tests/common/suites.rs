//! Loss checks shared by `tests/losses.rs` and the acceptance runner.
//! Each public function panics on the first violated check.

use rand::Rng;

use weatherclass::losses::*;
use weatherclass::models::{Direction, Linear, ModelBundle, ParamGroup};
use weatherclass::pipeline::build_pair_set;
use weatherclass::tensor::{Graph, Tensor};
use weatherclass::WeatherClass::{self, *};

use super::*;

fn assert_grad(err: f64, what: &str) {
    assert!(err < GRAD_TOL, "{what}: relative gradient error {err:e}");
}

/// Labels for `[batch, translations of members]`.
fn contrastive_instance(seed: u64) -> (Vec<WeatherClass>, PairSet) {
    let mut r = rng(seed);
    let batch = labels(&mut r, 4);
    let members = vec![r.random_range(0..4)];
    let pairs = build_pair_set(&batch, &members);
    let mut all = batch.clone();
    all.extend(members.iter().map(|&m| batch[m]));
    (all, pairs)
}

// ── gradient suite ──────────────────────────────────────────────────────

pub fn classification_gradients() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let ys = labels(&mut r, 4);
        let logits = Tensor::uniform(&[4, 3], -2.0, 2.0, &mut r);
        let err = check_input(
            |g, x| {
                let p = g.softmax_rows(x)?;
                classification_loss(g, p, &ys, 0.1)
            },
            &logits,
        );
        assert_grad(err, "classification");
    }
}

pub fn contrastive_gradients() {
    for seed in SEEDS {
        let (ys, pairs) = contrastive_instance(seed);
        let x = Tensor::uniform(&[ys.len(), 4], -1.0, 1.0, &mut rng(seed + 1));
        let err = check_input(
            |g, x| {
                let e = g.l2_normalize_rows(x)?;
                Ok(contrastive_loss(g, e, &ys, &pairs, 0.1)?.loss)
            },
            &x,
        );
        assert_grad(err, "contrastive");
    }
}

pub fn adversarial_gradients() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let other = image(&mut r);
        let x = image(&mut r);
        let gen = check_input(|g, x| generator_adversarial(g, &b.disc_day, &[x]), &x);
        assert_grad(gen, "generator adversarial");
        let dis = check_input(
            |g, x| {
                let fake = g.constant(other.clone());
                discriminator_adversarial(g, &b.disc_day, &[x], &[fake])
            },
            &x,
        );
        assert_grad(dis, "discriminator adversarial");
        let params = check_params(&b, ParamGroup::Discriminators, 4, |g, b| {
            let real = g.constant(x.clone());
            let fake = g.constant(other.clone());
            adversarial_loss(g, &b.disc_night, &[real], &[fake]).map(|(_, d)| d)
        });
        assert_grad(params, "discriminator parameters");
    }
}

pub fn cycle_gradients() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let y = image(&mut r);
        let x = image(&mut r);
        let err = check_input(
            |g, x| {
                let yv = g.constant(y.clone());
                cycle_loss(g, &b.gen_night_to_day, &b.gen_day_to_night, &[x], &[yv])
            },
            &x,
        );
        assert_grad(err, "cycle");
        let params = check_params(&b, ParamGroup::Generators, 3, |g, b| {
            let xs = bind(g, std::slice::from_ref(&x));
            let ys = bind(g, std::slice::from_ref(&y));
            cycle_loss(g, &b.gen_night_to_day, &b.gen_day_to_night, &xs, &ys)
        });
        assert_grad(params, "cycle parameters");
    }
}

pub fn identity_gradients() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let y = image(&mut r);
        let x = image(&mut r);
        let err = check_input(
            |g, x| {
                let yv = g.constant(y.clone());
                identity_loss(g, &b.gen_night_to_day, &b.gen_day_to_night, &[x], &[yv])
            },
            &x,
        );
        assert_grad(err, "identity");
    }
}

pub fn weather_gradients() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let x = image(&mut r);
        let y = labels(&mut r, 1);
        let err = check_input(|g, x| weather_loss(g, &b, &[x], &y), &x);
        assert_grad(err, "weather");
        let params = check_params(&b, ParamGroup::Encoders, 3, |g, b| {
            let xs = bind(g, std::slice::from_ref(&x));
            weather_loss(g, b, &xs, &y)
        });
        assert_grad(params, "weather parameters");
    }
}

pub fn cyclegan_total_gradients() {
    let w = LossWeights::default();
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let night2 = image(&mut r);
        let day = images(&mut r, 2);
        let x = image(&mut r);
        let members = [(0, Rain), (1, Snow)];
        let gen = check_input(
            |g, x| {
                let n2 = g.constant(night2.clone());
                let days = bind(g, &day);
                let batch = CycleGanBatch {
                    night: &[x, n2],
                    day: &days,
                    error_members: &members,
                    identity: IdentityForm::Literal,
                };
                Ok(cyclegan_total(g, &b, &batch, &w)?.generator_objective)
            },
            &x,
        );
        assert_grad(gen, "generator objective");
        // Fakes are detached in this objective, so only the discriminator
        // parameters give a like-for-like finite difference.
        let dis = check_params(&b, ParamGroup::Discriminators, 4, |g, b| {
            let nights = bind(g, &[x.clone(), night2.clone()]);
            let days = bind(g, &day);
            let batch = CycleGanBatch {
                night: &nights,
                day: &days,
                error_members: &members,
                identity: IdentityForm::Literal,
            };
            Ok(cyclegan_total(g, b, &batch, &w)?.discriminator_objective)
        });
        assert_grad(dis, "discriminator objective");
    }
}

pub fn total_loss_gradients() {
    let w = LossWeights::default();
    for seed in SEEDS {
        let (ys, pairs) = contrastive_instance(seed);
        let x = Tensor::uniform(&[ys.len(), 4], -1.0, 1.0, &mut rng(seed + 7));
        let n = ys.len();
        let err = check_input(
            |g, x| {
                let e = g.l2_normalize_rows(x)?;
                let con = contrastive_loss(g, e, &ys, &pairs, w.tau)?.loss;
                let logits = g.slice2d(x, 0..n, 0..3)?;
                let p = g.softmax_rows(logits)?;
                let cls = classification_loss(g, p, &ys, w.epsilon)?;
                total_loss(g, con, cls, &w)
            },
            &x,
        );
        assert_grad(err, "total");
    }
}

// ── loop-based oracles ──────────────────────────────────────────────────

pub fn classification_matches_reference() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let rows = simplex_rows(&mut r, 7);
        let ys = labels(&mut r, 7);
        for eps in [0.0, 0.1, 0.5] {
            let mut g = Graph::new();
            let p = g.constant(Tensor::new(&[7, 3], rows.concat()).unwrap());
            let l = classification_loss(&mut g, p, &ys, eps).unwrap();
            assert!((g.scalar(l) - classification_ref(&rows, &ys, eps)).abs() < ORACLE_TOL);
        }
    }
}

pub fn classification_hand_example() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[1, 3], vec![0.7, 0.2, 0.1]).unwrap());
    let l_var = classification_loss(&mut g, p, &[NoPrecipitation], 0.1).unwrap();
    let l = g.scalar(l_var);
    assert!(
        (l - classification_ref(&[[0.7, 0.2, 0.1]], &[NoPrecipitation], 0.1)).abs() < ORACLE_TOL
    );
    assert!((l - 0.4633).abs() < 5e-4);
}

pub fn uniform_predictions_give_ln3() {
    for eps in [0.0, 0.1, 0.5] {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[3, 3], 1.0 / 3.0));
        let l = classification_loss(&mut g, p, &[NoPrecipitation, Rain, Snow], eps).unwrap();
        assert!((g.scalar(l) - 3f64.ln()).abs() < 1e-12);
    }
}

pub fn contrastive_matches_reference() {
    for seed in SEEDS {
        let (ys, pairs) = contrastive_instance(seed);
        let emb = unit_rows(&mut rng(seed + 3), ys.len(), 5);
        for tau in [0.1, 0.5, 1.0] {
            let mut g = Graph::new();
            let e = g.constant(rows_tensor(&emb));
            let l = contrastive_loss(&mut g, e, &ys, &pairs, tau).unwrap().loss;
            assert!((g.scalar(l) - contrastive_ref(&emb, &ys, &pairs, tau)).abs() < ORACLE_TOL);
        }
    }
}

pub fn contrastive_hand_examples() {
    let e = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
    let pairs = build_pair_set(&[Rain, Rain], &[]);
    let mut g = Graph::new();
    let v = g.constant(rows_tensor(&e));
    let l_var = contrastive_loss(&mut g, v, &[Rain, Rain], &pairs, 0.1)
        .unwrap()
        .loss;
    let l = g.scalar(l_var);
    assert!((l - 4.54e-5).abs() < 1e-6);
    assert!((l - contrastive_ref(&e, &[Rain, Rain], &pairs, 0.1)).abs() < ORACLE_TOL);

    let e = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let ys = [Rain, Rain, Snow];
    let pairs = build_pair_set(&ys, &[]);
    let mut g = Graph::new();
    let v = g.constant(rows_tensor(&e));
    let with_negative_var = contrastive_loss(&mut g, v, &ys, &pairs, 0.1).unwrap().loss;
    let with_negative = g.scalar(with_negative_var);
    assert!((with_negative - l - std::f64::consts::LN_2).abs() < 1e-12);
}

pub fn adversarial_matches_reference() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let real = images(&mut r, 2);
        let fake = images(&mut r, 2);
        let mut g = Graph::new();
        let rv = bind(&mut g, &real);
        let fv = bind(&mut g, &fake);
        let (gen, dis) = adversarial_loss(&mut g, &b.disc_day, &rv, &fv).unwrap();
        let score = |xs: &[Tensor]| -> Vec<Tensor> {
            xs.iter()
                .map(|x| b.discriminate(&b.disc_day, x).unwrap())
                .collect()
        };
        let (rs, fs) = (score(&real), score(&fake));
        assert!((g.scalar(gen) - score_ref(&fs, false)).abs() < ORACLE_TOL);
        assert!((g.scalar(dis) - score_ref(&rs, false) - score_ref(&fs, true)).abs() < ORACLE_TOL);
    }
}

pub fn adversarial_with_indifferent_discriminator() {
    let mut b = tiny_bundle(1);
    b.disc_day.zero_final_layer();
    let mut r = rng(1);
    let (real, fake) = (images(&mut r, 2), images(&mut r, 3));
    let mut g = Graph::new();
    let rv = bind(&mut g, &real);
    let fv = bind(&mut g, &fake);
    let (gen, dis) = adversarial_loss(&mut g, &b.disc_day, &rv, &fv).unwrap();
    assert!((g.scalar(dis) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((g.scalar(gen) - std::f64::consts::LN_2).abs() < 1e-12);
}

pub fn cycle_and_identity_match_reference() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let xs = images(&mut r, 2);
        let ys = images(&mut r, 3);
        let mut g = Graph::new();
        let xv = bind(&mut g, &xs);
        let yv = bind(&mut g, &ys);
        let cyc = cycle_loss(&mut g, &b.gen_night_to_day, &b.gen_day_to_night, &xv, &yv).unwrap();
        let id = identity_loss(&mut g, &b.gen_night_to_day, &b.gen_day_to_night, &xv, &yv).unwrap();

        let gx = translate_all(&b, Direction::NightToDay, &xs);
        let fy = translate_all(&b, Direction::DayToNight, &ys);
        let fgx = translate_all(&b, Direction::DayToNight, &gx);
        let gfy = translate_all(&b, Direction::NightToDay, &fy);
        assert!((g.scalar(cyc) - l1_ref(&fgx, &xs) - l1_ref(&gfy, &ys)).abs() < ORACLE_TOL);
        assert!((g.scalar(id) - l1_ref(&gx, &xs) - l1_ref(&fy, &ys)).abs() < ORACLE_TOL);
    }
}

pub fn cycle_with_zero_generators() {
    let mut b = tiny_bundle(2);
    for (_, p) in b.group_params_mut(ParamGroup::Generators) {
        p.data_mut().fill(0.0);
    }
    let x = Tensor::new(
        &[3, 8, 8],
        (0..192)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect(),
    )
    .unwrap();
    let mut g = Graph::new();
    let xv = bind(&mut g, &[x.clone(), x.clone()]);
    let yv = bind(&mut g, &[x]);
    let cyc = cycle_loss(&mut g, &b.gen_night_to_day, &b.gen_day_to_night, &xv, &yv).unwrap();
    assert!((g.scalar(cyc) - 1.0).abs() < 1e-12);
}

pub fn weather_matches_reference() {
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let xs = images(&mut r, 3);
        let ys = labels(&mut r, 3);
        let mut g = Graph::new();
        let xv = bind(&mut g, &xs);
        let l = weather_loss(&mut g, &b, &xv, &ys).unwrap();
        assert!((g.scalar(l) - weather_ref(&b, &xs, &ys)).abs() < ORACLE_TOL);
    }
}

pub fn weather_with_stub_classifier() {
    let mut b = tiny_bundle(3);
    let bias = Tensor::from_vec(vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]);
    b.classifier.linear =
        Linear::from_weights(Tensor::zeros(b.classifier.linear.weight.shape()), bias);
    let xs = images(&mut rng(3), 2);
    let mut g = Graph::new();
    let xv = bind(&mut g, &xs);
    let l = weather_loss(&mut g, &b, &xv, &[NoPrecipitation, Rain]).unwrap();
    assert!((g.scalar(l) - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
    assert!((g.scalar(l) - 1.0397).abs() < 5e-4);

    let mut g = Graph::new();
    let empty = weather_loss(&mut g, &b, &[], &[]).unwrap();
    assert_eq!(g.scalar(empty), 0.0);
}

fn total_from_parts(
    b: &ModelBundle,
    night: &[Tensor],
    day: &[Tensor],
    members: &[(usize, WeatherClass)],
    w: &LossWeights,
) -> (f64, f64) {
    let gx = translate_all(b, Direction::NightToDay, night);
    let fy = translate_all(b, Direction::DayToNight, day);
    let fgx = translate_all(b, Direction::DayToNight, &gx);
    let gfy = translate_all(b, Direction::NightToDay, &fy);
    let scores = |d, xs: &[Tensor]| -> Vec<Tensor> {
        xs.iter().map(|x| b.discriminate(d, x).unwrap()).collect()
    };
    let adv =
        score_ref(&scores(&b.disc_day, &gx), false) + score_ref(&scores(&b.disc_night, &fy), false);
    let cyc = l1_ref(&fgx, night) + l1_ref(&gfy, day);
    let id = l1_ref(&gx, night) + l1_ref(&fy, day);
    let member_images: Vec<Tensor> = members.iter().map(|&(i, _)| night[i].clone()).collect();
    let member_labels: Vec<WeatherClass> = members.iter().map(|&(_, y)| y).collect();
    let weather = weather_ref(b, &member_images, &member_labels);
    let generator = adv + w.lambda_cyc * cyc + w.lambda_id * id + w.lambda_weather * weather;
    let discriminator = score_ref(&scores(&b.disc_day, day), false)
        + score_ref(&scores(&b.disc_day, &gx), true)
        + score_ref(&scores(&b.disc_night, night), false)
        + score_ref(&scores(&b.disc_night, &fy), true);
    (generator, discriminator)
}

pub fn cyclegan_total_recomposes_from_references() {
    let w = LossWeights::default();
    for seed in SEEDS {
        let b = tiny_bundle(seed);
        let mut r = rng(seed);
        let night = images(&mut r, 3);
        let day = images(&mut r, 2);
        let members = [(0, Snow), (2, NoPrecipitation)];
        let mut g = Graph::new();
        let nv = bind(&mut g, &night);
        let dv = bind(&mut g, &day);
        let batch = CycleGanBatch {
            night: &nv,
            day: &dv,
            error_members: &members,
            identity: IdentityForm::Literal,
        };
        let t = cyclegan_total(&mut g, &b, &batch, &w).unwrap();
        let (gen, dis) = total_from_parts(&b, &night, &day, &members, &w);
        assert!((g.scalar(t.generator_objective) - gen).abs() < ORACLE_TOL);
        assert!((g.scalar(t.discriminator_objective) - dis).abs() < ORACLE_TOL);
    }
}

pub fn cyclegan_total_is_linear_in_cycle_weight() {
    let b = tiny_bundle(4);
    let mut r = rng(4);
    let night = images(&mut r, 2);
    let day = images(&mut r, 2);
    let objective = |w: &LossWeights| {
        let mut g = Graph::new();
        let nv = bind(&mut g, &night);
        let dv = bind(&mut g, &day);
        let batch = CycleGanBatch {
            night: &nv,
            day: &dv,
            error_members: &[],
            identity: IdentityForm::Literal,
        };
        let t = cyclegan_total(&mut g, &b, &batch, w).unwrap();
        (g.scalar(t.generator_objective), g.scalar(t.cycle))
    };
    let w = LossWeights::default();
    let doubled = LossWeights {
        lambda_cyc: 2.0 * w.lambda_cyc,
        ..w.clone()
    };
    let (base, cyc) = objective(&w);
    let (twice, _) = objective(&doubled);
    assert!((twice - base - w.lambda_cyc * cyc).abs() < 1e-9);
}

#[allow(clippy::approx_constant)]
pub fn total_loss_arithmetic() {
    let w = LossWeights::default();
    let mut g = Graph::new();
    let con = g.constant(Tensor::scalar(0.4633));
    let cls = g.constant(Tensor::scalar(0.6931));
    let t = total_loss(&mut g, con, cls, &w).unwrap();
    assert!((g.scalar(t) - 0.80985).abs() < 1e-12);
    assert!((total_loss_value(1.0, 2.0, &w).unwrap() - 2.0).abs() < 1e-15);
}

// ── pair sets ───────────────────────────────────────────────────────────

pub fn pair_set_matches_enumeration() {
    for n in 1..=6usize {
        for code in 0..3usize.pow(n as u32) {
            let ys: Vec<WeatherClass> = (0..n)
                .map(|i| WeatherClass::ALL[(code / 3usize.pow(i as u32)) % 3])
                .collect();
            for mask in 0..(1usize << n) {
                let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let got = build_pair_set(&ys, &members);
                let pairs: Vec<(usize, usize)> = got
                    .positive_pairs
                    .iter()
                    .map(|p| (p.anchor, p.positive))
                    .collect();
                assert_eq!(
                    pairs,
                    brute_pairs(&ys, &members),
                    "labels {ys:?}, members {members:?}"
                );
                for p in &got.positive_pairs {
                    match p.kind {
                        PairKind::SameClass => assert_eq!(ys[p.anchor], ys[p.positive]),
                        PairKind::Translated => {
                            assert!(members.contains(&p.anchor) && p.positive >= n)
                        }
                    }
                }
            }
        }
    }
}

pub type Check = (&'static str, fn());

pub const GRADIENT_CHECKS: &[Check] = &[
    ("classification", classification_gradients),
    ("contrastive", contrastive_gradients),
    ("adversarial", adversarial_gradients),
    ("cycle", cycle_gradients),
    ("identity", identity_gradients),
    ("weather", weather_gradients),
    ("cyclegan total", cyclegan_total_gradients),
    ("total", total_loss_gradients),
];

pub const ORACLE_CHECKS: &[Check] = &[
    ("classification", classification_matches_reference),
    ("classification example", classification_hand_example),
    ("contrastive", contrastive_matches_reference),
    ("contrastive examples", contrastive_hand_examples),
    ("adversarial", adversarial_matches_reference),
    (
        "adversarial, indifferent D",
        adversarial_with_indifferent_discriminator,
    ),
    ("cycle and identity", cycle_and_identity_match_reference),
    ("cycle, zero generators", cycle_with_zero_generators),
    ("weather", weather_matches_reference),
    ("weather, stub classifier", weather_with_stub_classifier),
    ("cyclegan total", cyclegan_total_recomposes_from_references),
    (
        "cyclegan total linearity",
        cyclegan_total_is_linear_in_cycle_weight,
    ),
    ("total", total_loss_arithmetic),
];
