//! Training objectives: smoothed classification, pairwise sigmoid
//! contrastive, the CycleGAN terms with the weather-preserving penalty, and
//! the weighted totals.
//!
//! Every function records onto a [`Graph`] so gradients come from the tape.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::classes::{WeatherClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, ModelBundle};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_weather: f64,
    pub lambda_con: f64,
    pub lambda_cls: f64,
    /// Label smoothing.
    pub epsilon: f64,
    /// Contrastive temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_id: 5.0,
            lambda_weather: 1.0,
            lambda_con: 1.0,
            lambda_cls: 0.5,
            epsilon: 0.1,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
            ("lambda_weather", self.lambda_weather),
            ("lambda_con", self.lambda_con),
            ("lambda_cls", self.lambda_cls),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) {
                return Err(Error::contract(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::contract(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::contract(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Training images the initial classifier got wrong.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSet {
    /// `(dataset index, true label)`
    pub members: Vec<(usize, WeatherClass)>,
    /// Snapshot of the bundle whose predictions were mined.
    pub snapshot_id: u64,
}

impl ErrorSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.members.binary_search_by_key(&index, |m| m.0).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    SameClass,
    /// `(original, translated original)` for an error-set member.
    Translated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositivePair {
    pub anchor: usize,
    pub positive: usize,
    pub kind: PairKind,
}

/// Positive pairs over the rows of a contrastive batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub positive_pairs: Vec<PositivePair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.positive_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive_pairs.is_empty()
    }
}

fn one_hot_smoothed(labels: &[WeatherClass], epsilon: f64) -> Tensor {
    let mut w = Vec::with_capacity(labels.len() * NUM_CLASSES);
    for y in labels {
        for c in 0..NUM_CLASSES {
            let hit = if y.index() == c { 1.0 - epsilon } else { 0.0 };
            w.push(hit + epsilon / NUM_CLASSES as f64);
        }
    }
    Tensor::new(&[labels.len(), NUM_CLASSES], w).expect("label matrix shape")
}

/// `−(1/B) Σ_x Σ_c [(1−ε)·1(y_x=c) + ε/3] · log p_c(x)` on `[B×3]` probabilities.
pub fn classification_loss(
    g: &mut Graph<'_>,
    probs: Var,
    labels: &[WeatherClass],
    epsilon: f64,
) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::contract("classification_loss: empty batch"));
    }
    if g.shape(probs) != [labels.len(), NUM_CLASSES] {
        return Err(Error::shape(format!(
            "classification_loss: probabilities {:?} for {} labels",
            g.shape(probs),
            labels.len()
        )));
    }
    let targets = g.constant(one_hot_smoothed(labels, epsilon));
    let logp = g.log_clamped(probs);
    let weighted = g.mul(logp, targets)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0 / labels.len() as f64))
}

pub struct ContrastiveOutput {
    pub loss: Var,
    /// Set when the pair set was empty and the loss defaulted to zero.
    pub empty_pairs: bool,
}

/// Pairwise sigmoid contrastive loss over unit-norm rows `[N×P]`.
///
/// For each positive pair `(i, j)`: `−log σ(e_i·e_j/τ)` plus
/// `−Σ_k log(1 − σ(e_i·e_k/τ))` over every row `k` whose label differs from
/// the anchor's. The sum is divided by `|P|`.
pub fn contrastive_loss(
    g: &mut Graph<'_>,
    embeddings: Var,
    labels: &[WeatherClass],
    pairs: &PairSet,
    tau: f64,
) -> Result<ContrastiveOutput> {
    let n = match g.shape(embeddings) {
        [n, _] => *n,
        s => {
            return Err(Error::shape(format!(
                "contrastive_loss: expected [N×P], got {s:?}"
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::shape(format!(
            "contrastive_loss: {n} embeddings but {} labels",
            labels.len()
        )));
    }
    if let Some(p) = pairs
        .positive_pairs
        .iter()
        .find(|p| p.anchor >= n || p.positive >= n)
    {
        return Err(Error::contract(format!(
            "contrastive_loss: pair ({}, {}) outside batch of {n}",
            p.anchor, p.positive
        )));
    }
    if pairs.is_empty() {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(ContrastiveOutput {
            loss: zero,
            empty_pairs: true,
        });
    }

    let et = g.transpose(embeddings)?;
    let gram = g.matmul(embeddings, et)?;
    let logits = g.scale(gram, 1.0 / tau);

    let pos_idx: Vec<usize> = pairs
        .positive_pairs
        .iter()
        .map(|p| p.anchor * n + p.positive)
        .collect();
    let neg_idx: Vec<usize> = pairs
        .positive_pairs
        .iter()
        .flat_map(|p| {
            let i = p.anchor;
            (0..n)
                .filter(move |&k| labels[k] != labels[i])
                .map(move |k| i * n + k)
        })
        .collect();

    let pos_len = pos_idx.len();
    let pos = g.gather(logits, Rc::new(pos_idx), &[pos_len])?;
    let pos = g.sigmoid(pos);
    let pos = g.log_clamped(pos);
    let mut total = g.sum(pos);

    if !neg_idx.is_empty() {
        let neg_len = neg_idx.len();
        let neg = g.gather(logits, Rc::new(neg_idx), &[neg_len])?;
        let neg = g.sigmoid(neg);
        let neg = g.affine(neg, -1.0, 1.0);
        let neg = g.log_clamped(neg);
        let neg = g.sum(neg);
        total = g.add(total, neg)?;
    }
    let loss = g.scale(total, -1.0 / pairs.len() as f64);
    Ok(ContrastiveOutput {
        loss,
        empty_pairs: false,
    })
}

/// `−mean(log D(x))` over images and score cells.
fn neg_mean_log(g: &mut Graph<'_>, scores: &[Var], complement: bool) -> Result<Var> {
    let mut terms = Vec::with_capacity(scores.len());
    for &s in scores {
        let s = if complement {
            g.affine(s, -1.0, 1.0)
        } else {
            s
        };
        let l = g.log_clamped(s);
        let m = g.mean(l);
        terms.push(g.reshape(m, &[1, 1])?);
    }
    let stacked = g.concat_rows(&terms)?;
    let m = g.mean(stacked);
    Ok(g.scale(m, -1.0))
}

/// Non-saturating generator term `−mean log D(fake)`.
pub fn generator_adversarial<'a>(
    g: &mut Graph<'a>,
    disc: &'a Discriminator,
    fake: &[Var],
) -> Result<Var> {
    if fake.is_empty() {
        return Err(Error::contract("adversarial_loss: empty fake batch"));
    }
    let scores = fake
        .iter()
        .map(|&f| disc.forward(g, f))
        .collect::<Result<Vec<_>>>()?;
    neg_mean_log(g, &scores, false)
}

/// `−mean log D(real) − mean log(1 − D(fake))` with the fakes detached.
pub fn discriminator_adversarial<'a>(
    g: &mut Graph<'a>,
    disc: &'a Discriminator,
    real: &[Var],
    fake: &[Var],
) -> Result<Var> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::contract("adversarial_loss: empty batch"));
    }
    let real_scores = real
        .iter()
        .map(|&r| disc.forward(g, r))
        .collect::<Result<Vec<_>>>()?;
    let mut fake_scores = Vec::with_capacity(fake.len());
    for &f in fake {
        let detached = g.constant(g.tensor(f));
        fake_scores.push(disc.forward(g, detached)?);
    }
    let real_term = neg_mean_log(g, &real_scores, false)?;
    let fake_term = neg_mean_log(g, &fake_scores, true)?;
    g.add(real_term, fake_term)
}

/// `(generator loss, discriminator loss)` for one discriminator.
pub fn adversarial_loss<'a>(
    g: &mut Graph<'a>,
    disc: &'a Discriminator,
    real: &[Var],
    fake: &[Var],
) -> Result<(Var, Var)> {
    let gen = generator_adversarial(g, disc, fake)?;
    let dis = discriminator_adversarial(g, disc, real, fake)?;
    Ok((gen, dis))
}

/// Mean over pairs of the element-mean absolute difference.
pub fn mean_l1(g: &mut Graph<'_>, a: &[Var], b: &[Var]) -> Result<Var> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::contract(
            "mean_l1: batches empty or of different sizes",
        ));
    }
    let mut terms = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let d = g.sub(x, y)?;
        let d = g.abs(d);
        let m = g.mean(d);
        terms.push(g.reshape(m, &[1, 1])?);
    }
    let stacked = g.concat_rows(&terms)?;
    Ok(g.mean(stacked))
}

fn apply<'a>(g: &mut Graph<'a>, gen: &'a Generator, batch: &[Var]) -> Result<Vec<Var>> {
    batch.iter().map(|&x| gen.forward(g, x)).collect()
}

/// `mean‖F(G(x)) − x‖₁ + mean‖G(F(y)) − y‖₁`, element-averaged per image.
pub fn cycle_loss<'a>(
    g: &mut Graph<'a>,
    gen: &'a Generator,
    inv: &'a Generator,
    batch_x: &[Var],
    batch_y: &[Var],
) -> Result<Var> {
    let gx = apply(g, gen, batch_x)?;
    let fgx = apply(g, inv, &gx)?;
    let fy = apply(g, inv, batch_y)?;
    let gfy = apply(g, gen, &fy)?;
    let a = mean_l1(g, &fgx, batch_x)?;
    let b = mean_l1(g, &gfy, batch_y)?;
    g.add(a, b)
}

/// `mean‖G(x) − x‖₁ + mean‖F(y) − y‖₁`.
pub fn identity_loss<'a>(
    g: &mut Graph<'a>,
    gen: &'a Generator,
    inv: &'a Generator,
    batch_x: &[Var],
    batch_y: &[Var],
) -> Result<Var> {
    let gx = apply(g, gen, batch_x)?;
    let fy = apply(g, inv, batch_y)?;
    let a = mean_l1(g, &gx, batch_x)?;
    let b = mean_l1(g, &fy, batch_y)?;
    g.add(a, b)
}

/// `(1/|M|) Σ −log p_{y_i}(x̃_i)` where `x̃_i` are already translated images.
/// Returns zero for an empty set.
pub fn weather_loss_translated<'a>(
    g: &mut Graph<'a>,
    bundle: &'a ModelBundle,
    translated: &[Var],
    labels: &[WeatherClass],
) -> Result<Var> {
    if translated.len() != labels.len() {
        return Err(Error::contract(
            "weather_loss: images and labels differ in length",
        ));
    }
    if translated.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let e = bundle.image_encoder.forward(g, translated)?;
    let p = bundle.classifier.forward(g, e)?;
    classification_loss(g, p, labels, 0.0)
}

/// Weather-preserving loss on error-set members: classify `G(x_i)` and take
/// the cross-entropy against the true label.
pub fn weather_loss<'a>(
    g: &mut Graph<'a>,
    bundle: &'a ModelBundle,
    members: &[Var],
    labels: &[WeatherClass],
) -> Result<Var> {
    let translated = apply(g, &bundle.gen_night_to_day, members)?;
    weather_loss_translated(g, bundle, &translated, labels)
}

/// Which images the identity term of the composite objective compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityForm {
    /// `‖G(x) − x‖₁ + ‖F(y) − y‖₁`, each generator on its source domain.
    #[default]
    Literal,
    /// `‖G(y) − y‖₁ + ‖F(x) − x‖₁`, each generator on its target domain.
    TargetDomain,
}

/// Inputs to the composite CycleGAN objective.
pub struct CycleGanBatch<'v> {
    /// Night images (domain X).
    pub night: &'v [Var],
    /// Day images (domain Y).
    pub day: &'v [Var],
    /// Indices into `night` that belong to the error set, with true labels.
    pub error_members: &'v [(usize, WeatherClass)],
    pub identity: IdentityForm,
}

/// Every term of the composite objective, recorded on one graph.
pub struct CycleGanTerms {
    pub gen_adv_day: Var,
    pub gen_adv_night: Var,
    pub cycle: Var,
    pub identity: Var,
    pub weather: Var,
    pub disc_day: Var,
    pub disc_night: Var,
    pub generator_objective: Var,
    pub discriminator_objective: Var,
    /// `G(x)` per night image.
    pub fake_day: Vec<Var>,
}

/// Generator objective `adv(G, D_Y) + adv(F, D_X) + λ_cyc·cyc + λ_id·id +
/// λ_weather·weather` and discriminator objective `disc(D_Y) + disc(D_X)`.
/// Each translation is computed once and shared between the terms.
pub fn cyclegan_total<'a>(
    g: &mut Graph<'a>,
    bundle: &'a ModelBundle,
    batch: &CycleGanBatch<'_>,
    weights: &LossWeights,
) -> Result<CycleGanTerms> {
    if batch.night.is_empty() || batch.day.is_empty() {
        return Err(Error::contract("cyclegan_total: empty domain batch"));
    }
    let gen = &bundle.gen_night_to_day;
    let inv = &bundle.gen_day_to_night;
    let fake_day = apply(g, gen, batch.night)?;
    let fake_night = apply(g, inv, batch.day)?;
    let rec_night = apply(g, inv, &fake_day)?;
    let rec_day = apply(g, gen, &fake_night)?;

    let gen_adv_day = generator_adversarial(g, &bundle.disc_day, &fake_day)?;
    let gen_adv_night = generator_adversarial(g, &bundle.disc_night, &fake_night)?;
    let cyc_a = mean_l1(g, &rec_night, batch.night)?;
    let cyc_b = mean_l1(g, &rec_day, batch.day)?;
    let cycle = g.add(cyc_a, cyc_b)?;
    let identity = match batch.identity {
        IdentityForm::Literal => {
            let a = mean_l1(g, &fake_day, batch.night)?;
            let b = mean_l1(g, &fake_night, batch.day)?;
            g.add(a, b)?
        }
        IdentityForm::TargetDomain => identity_loss(g, gen, inv, batch.day, batch.night)?,
    };

    let mut translated = Vec::with_capacity(batch.error_members.len());
    let mut labels = Vec::with_capacity(batch.error_members.len());
    for &(i, y) in batch.error_members {
        let x = *fake_day.get(i).ok_or_else(|| {
            Error::contract(format!(
                "cyclegan_total: error member {i} outside night batch"
            ))
        })?;
        translated.push(x);
        labels.push(y);
    }
    let weather = weather_loss_translated(g, bundle, &translated, &labels)?;

    let mut objective = g.add(gen_adv_day, gen_adv_night)?;
    for (term, w) in [
        (cycle, weights.lambda_cyc),
        (identity, weights.lambda_id),
        (weather, weights.lambda_weather),
    ] {
        let scaled = g.scale(term, w);
        objective = g.add(objective, scaled)?;
    }

    let disc_day = discriminator_adversarial(g, &bundle.disc_day, batch.day, &fake_day)?;
    let disc_night = discriminator_adversarial(g, &bundle.disc_night, batch.night, &fake_night)?;
    let discriminator_objective = g.add(disc_day, disc_night)?;

    Ok(CycleGanTerms {
        gen_adv_day,
        gen_adv_night,
        cycle,
        identity,
        weather,
        disc_day,
        disc_night,
        generator_objective: objective,
        discriminator_objective,
        fake_day,
    })
}

/// `λ_con·con + λ_cls·cls`
pub fn total_loss(g: &mut Graph<'_>, con: Var, cls: Var, weights: &LossWeights) -> Result<Var> {
    let a = g.scale(con, weights.lambda_con);
    let b = g.scale(cls, weights.lambda_cls);
    g.add(a, b)
}

pub fn total_loss_value(con: f64, cls: f64, weights: &LossWeights) -> Result<f64> {
    if !con.is_finite() || !cls.is_finite() {
        return Err(Error::contract("total_loss: inputs must be finite"));
    }
    Ok(weights.lambda_con * con + weights.lambda_cls * cls)
}
