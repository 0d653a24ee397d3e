use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batching::{build_pair_set, stratified_batches};
use super::config::PipelineConfig;
use crate::classes::{Domain, WeatherClass};
use crate::data::{augment, LabeledImage, Strength};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss, contrastive_loss, cyclegan_total, total_loss, CycleGanBatch, ErrorSet,
    LossWeights,
};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::models::{Direction, ModelBundle, ParamGroup};
use crate::tensor::{Adam, Gradients, Graph, Tensor, Var};

/// Named per-epoch series.
pub type LossCurves = BTreeMap<String, Vec<f64>>;

const STREAM_PRETRAIN: u64 = 1;
const STREAM_CYCLEGAN: u64 = 2;
const STREAM_FINETUNE: u64 = 3;

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Number of batches [`stratified_batches`] yields for `n` samples.
pub fn batch_count(n: usize, batch_size: usize) -> usize {
    let k = n.div_ceil(batch_size);
    if k > 1 && n % batch_size == 1 {
        k - 1
    } else {
        k
    }
}

/// Running per-epoch means.
#[derive(Default)]
struct EpochMeans {
    sums: BTreeMap<&'static str, f64>,
    count: usize,
}

impl EpochMeans {
    fn add(&mut self, values: &[(&'static str, f64)]) {
        for (k, v) in values {
            *self.sums.entry(k).or_insert(0.0) += v;
        }
        self.count += 1;
    }

    fn flush(self, curves: &mut LossCurves) -> Result<()> {
        for (k, sum) in self.sums {
            let mean = sum / self.count.max(1) as f64;
            if !mean.is_finite() {
                return Err(Error::Training {
                    param: k.to_string(),
                    message: "epoch-mean loss is not finite".into(),
                });
            }
            curves.entry(k.to_string()).or_default().push(mean);
        }
        Ok(())
    }
}

fn apply_update(
    bundle: &mut ModelBundle,
    group: ParamGroup,
    adam: &mut Adam,
    grads: &Gradients,
) -> Result<()> {
    grads.accumulate_into(bundle.group_params_mut(group).into_iter().map(|(_, t)| t));
    adam.step(bundle.group_params_mut(group))
}

fn new_adam(bundle: &ModelBundle, group: ParamGroup, config: crate::tensor::AdamConfig) -> Adam {
    Adam::new(
        config,
        bundle.group_params(group).into_iter().map(|(_, t)| t),
    )
}

/// Rows for one encoder update.
pub struct EncoderBatch {
    pub views: Vec<Tensor>,
    pub view_labels: Vec<WeatherClass>,
    /// Translated error-set members.
    pub translated: Vec<Tensor>,
    /// Row in `views` that each translation came from.
    pub translated_anchors: Vec<usize>,
}

pub struct EncoderLoss {
    pub total: Var,
    pub contrastive: Var,
    pub classification: Var,
    pub empty_pairs: bool,
}

/// Classification loss over views and translations; contrastive loss over
/// rows `[views, class prompts, translations]`, so same-class pairs include
/// image–prompt pairs and each translation pairs with its source.
pub fn encoder_objective<'a>(
    g: &mut Graph<'a>,
    bundle: &'a ModelBundle,
    batch: &'a EncoderBatch,
    weights: &LossWeights,
) -> Result<EncoderLoss> {
    let v = batch.views.len();
    let r = batch.translated.len();
    if batch.view_labels.len() != v || batch.translated_anchors.len() != r {
        return Err(Error::contract(
            "encoder batch: rows and labels differ in length",
        ));
    }
    let images: Vec<Var> = batch
        .views
        .iter()
        .chain(&batch.translated)
        .map(|t| g.param(t))
        .collect();
    let labels: Vec<WeatherClass> = batch
        .view_labels
        .iter()
        .copied()
        .chain(
            batch
                .translated_anchors
                .iter()
                .map(|&a| batch.view_labels[a]),
        )
        .collect();

    let e = bundle.image_encoder.forward(g, &images)?;
    let probs = bundle.classifier.forward(g, e)?;
    let cls = classification_loss(g, probs, &labels, weights.epsilon)?;

    let z_img = bundle.projection.forward(g, e)?;
    let t = bundle.text_encoder.forward(g, &bundle.prompts)?;
    let z_txt = bundle.projection.forward(g, t)?;
    let p = bundle.config.proj_dim;
    let mut parts = vec![g.slice2d(z_img, 0..v, 0..p)?, z_txt];
    if r > 0 {
        parts.push(g.slice2d(z_img, v..v + r, 0..p)?);
    }
    let z = g.concat_rows(&parts)?;

    let mut pair_labels = batch.view_labels.clone();
    pair_labels.extend(bundle.prompts.iter().map(|p| p.class));
    let pairs = build_pair_set(&pair_labels, &batch.translated_anchors);
    let mut row_labels = pair_labels;
    row_labels.extend(
        batch
            .translated_anchors
            .iter()
            .map(|&a| batch.view_labels[a]),
    );
    let con = contrastive_loss(g, z, &row_labels, &pairs, weights.tau)?;

    let total = total_loss(g, con.loss, cls, weights)?;
    Ok(EncoderLoss {
        total,
        contrastive: con.loss,
        classification: cls,
        empty_pairs: con.empty_pairs,
    })
}

fn encoder_step(
    bundle: &mut ModelBundle,
    adam: &mut Adam,
    batch: &EncoderBatch,
    weights: &LossWeights,
) -> Result<[(&'static str, f64); 3]> {
    let (grads, values) = {
        let mut g = Graph::new();
        let loss = encoder_objective(&mut g, bundle, batch, weights)?;
        if loss.empty_pairs {
            debug!("encoder batch has no positive pairs; contrastive term is zero");
        }
        let values = [
            ("total", g.scalar(loss.total)),
            ("contrastive", g.scalar(loss.contrastive)),
            ("classification", g.scalar(loss.classification)),
        ];
        (g.backward(loss.total)?, values)
    };
    apply_update(bundle, ParamGroup::Encoders, adam, &grads)?;
    Ok(values)
}

fn require_all_classes(images: &[&LabeledImage], what: &str) -> Result<()> {
    for c in WeatherClass::ALL {
        if !images.iter().any(|x| x.class == c) {
            return Err(Error::Data(format!("{what} has no `{c}` images")));
        }
    }
    Ok(())
}

/// Strong views of the batch followed by weak views, in batch order.
fn two_views(
    images: &[&LabeledImage],
    batch: &[usize],
    config: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    let mut views = Vec::with_capacity(2 * batch.len());
    for strength in [Strength::Strong, Strength::Weak] {
        let params = config.augmentation.params(strength);
        for &i in batch {
            views.push(augment(&images[i].image, params, rng)?);
        }
    }
    Ok(views)
}

/// Trains encoders and heads with the total loss on day-domain images, one
/// strong and one weak view per image.
pub fn pretrain(
    bundle: &mut ModelBundle,
    day_train: &[&LabeledImage],
    config: &PipelineConfig,
) -> Result<LossCurves> {
    require_all_classes(day_train, "pretraining set")?;
    let mut rng = stage_rng(config.seed, STREAM_PRETRAIN);
    let labels: Vec<WeatherClass> = day_train.iter().map(|x| x.class).collect();
    let steps = config.pretrain_epochs * batch_count(labels.len(), config.batch_size);
    let mut adam = new_adam(
        bundle,
        ParamGroup::Encoders,
        config.optimizers.pretrain.adam(steps),
    );

    let mut curves = LossCurves::new();
    for epoch in 0..config.pretrain_epochs {
        let mut means = EpochMeans::default();
        for batch in stratified_batches(&labels, config.batch_size, &mut rng) {
            let views = two_views(day_train, &batch, config, &mut rng)?;
            let mut view_labels: Vec<WeatherClass> = batch.iter().map(|&i| labels[i]).collect();
            view_labels.extend_from_within(..);
            let eb = EncoderBatch {
                views,
                view_labels,
                translated: Vec::new(),
                translated_anchors: Vec::new(),
            };
            means.add(&encoder_step(bundle, &mut adam, &eb, &config.loss_weights)?);
        }
        means.flush(&mut curves)?;
        info!(
            "pretrain epoch {}: total loss {:.4}",
            epoch + 1,
            curves["total"][epoch]
        );
    }
    Ok(curves)
}

/// Zero-shot predictions and stratified metrics.
pub fn initial_classification(
    bundle: &ModelBundle,
    eval_set: &[&LabeledImage],
) -> Result<(Vec<WeatherClass>, MetricsReport)> {
    let images: Vec<&Tensor> = eval_set.iter().map(|x| &x.image).collect();
    classify(bundle, eval_set, &images)
}

/// Zero-shot classification of `images`, labelled and stratified by `eval_set`.
pub fn classify(
    bundle: &ModelBundle,
    eval_set: &[&LabeledImage],
    images: &[&Tensor],
) -> Result<(Vec<WeatherClass>, MetricsReport)> {
    if eval_set.is_empty() {
        return Err(Error::contract("classification: empty evaluation set"));
    }
    if images.len() != eval_set.len() {
        return Err(Error::contract(
            "classification: images and records differ in length",
        ));
    }
    let predictions = bundle.zero_shot_classify(images)?;
    let labels: Vec<WeatherClass> = eval_set.iter().map(|x| x.class).collect();
    let domains: Vec<Domain> = eval_set.iter().map(|x| x.domain).collect();
    let report = compute_metrics(&predictions, &labels, &domains)?;
    Ok((predictions, report))
}

/// Indices where the prediction differs from the label.
pub fn mine_error_set(
    predictions: &[WeatherClass],
    labels: &[WeatherClass],
    snapshot_id: u64,
) -> Result<ErrorSet> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "mine_error_set: {} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(ErrorSet {
        members: predictions
            .iter()
            .zip(labels)
            .enumerate()
            .filter(|(_, (p, y))| p != y)
            .map(|(i, (_, y))| (i, *y))
            .collect(),
        snapshot_id,
    })
}

/// Night images with their error-set labels, if any.
pub struct NightSample<'d> {
    pub image: &'d Tensor,
    pub error_label: Option<WeatherClass>,
}

struct GanState {
    gen_adam: Adam,
    disc_adam: Adam,
}

impl GanState {
    fn new(bundle: &ModelBundle, config: &PipelineConfig, steps: usize) -> Self {
        Self {
            gen_adam: new_adam(
                bundle,
                ParamGroup::Generators,
                config.optimizers.generators.adam(steps),
            ),
            disc_adam: new_adam(
                bundle,
                ParamGroup::Discriminators,
                config.optimizers.discriminators.adam(steps),
            ),
        }
    }
}

/// One generator update and one discriminator update from a shared forward
/// pass. The discriminator objective sees detached fakes.
fn cyclegan_step(
    bundle: &mut ModelBundle,
    state: &mut GanState,
    night: &[&NightSample<'_>],
    day: &[&Tensor],
    config: &PipelineConfig,
) -> Result<Vec<(&'static str, f64)>> {
    let (gen_grads, disc_grads, values) = {
        let mut g = Graph::new();
        let x: Vec<Var> = night.iter().map(|s| g.param(s.image)).collect();
        let y: Vec<Var> = day.iter().map(|t| g.param(t)).collect();
        let members: Vec<(usize, WeatherClass)> = night
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.error_label.map(|y| (i, y)))
            .collect();
        let terms = cyclegan_total(
            &mut g,
            bundle,
            &CycleGanBatch {
                night: &x,
                day: &y,
                error_members: &members,
                identity: config.identity_form,
            },
            &config.loss_weights,
        )?;
        let gen = g.scalar(terms.generator_objective);
        let disc = g.scalar(terms.discriminator_objective);
        let values = vec![
            ("generator", gen),
            ("discriminator", disc),
            ("combined", gen + disc),
            (
                "adversarial",
                g.scalar(terms.gen_adv_day) + g.scalar(terms.gen_adv_night),
            ),
            ("cycle", g.scalar(terms.cycle)),
            ("identity", g.scalar(terms.identity)),
            ("weather", g.scalar(terms.weather)),
        ];
        (
            g.backward(terms.generator_objective)?,
            g.backward(terms.discriminator_objective)?,
            values,
        )
    };
    apply_update(
        bundle,
        ParamGroup::Generators,
        &mut state.gen_adam,
        &gen_grads,
    )?;
    apply_update(
        bundle,
        ParamGroup::Discriminators,
        &mut state.disc_adam,
        &disc_grads,
    )?;
    Ok(values)
}

/// Alternating generator and discriminator updates over unpaired night and
/// day sets. The encoders and heads are frozen; they only supply the
/// weather-preserving term.
pub fn train_cyclegan(
    bundle: &mut ModelBundle,
    night: &[NightSample<'_>],
    day: &[&Tensor],
    config: &PipelineConfig,
) -> Result<LossCurves> {
    if night.is_empty() || day.is_empty() {
        return Err(Error::Data(
            "train_cyclegan: both domain sets must be nonempty".into(),
        ));
    }
    let bs = config.cyclegan_batch_size;
    let per_epoch = night.len().div_ceil(bs);
    let mut state = GanState::new(bundle, config, config.cyclegan_epochs * per_epoch);
    let mut rng = stage_rng(config.seed, STREAM_CYCLEGAN);

    bundle.set_group_trainable(ParamGroup::Encoders, false);
    let result = (|| {
        let mut curves = LossCurves::new();
        for epoch in 0..config.cyclegan_epochs {
            let mut night_order: Vec<usize> = (0..night.len()).collect();
            let mut day_order: Vec<usize> = (0..day.len()).collect();
            night_order.shuffle(&mut rng);
            day_order.shuffle(&mut rng);
            let mut means = EpochMeans::default();
            for (k, chunk) in night_order.chunks(bs).enumerate() {
                let xs: Vec<&NightSample<'_>> = chunk.iter().map(|&i| &night[i]).collect();
                let ys: Vec<&Tensor> = (0..chunk.len())
                    .map(|j| day[day_order[(k * bs + j) % day.len()]])
                    .collect();
                means.add(&cyclegan_step(bundle, &mut state, &xs, &ys, config)?);
            }
            means.flush(&mut curves)?;
            info!(
                "cyclegan epoch {}: generator {:.4}, discriminator {:.4}, cycle {:.4}",
                epoch + 1,
                curves["generator"][epoch],
                curves["discriminator"][epoch],
                curves["cycle"][epoch]
            );
        }
        Ok(curves)
    })();
    bundle.set_group_trainable(ParamGroup::Encoders, true);
    result
}

/// Strong and weak view of every image plus the translation of each night
/// error-set member, trained with the total loss. Generators stay frozen
/// unless `finetune_generators` is set.
pub fn finetune(
    bundle: &mut ModelBundle,
    train: &[&LabeledImage],
    error_set: &ErrorSet,
    config: &PipelineConfig,
) -> Result<LossCurves> {
    let mut rng = stage_rng(config.seed, STREAM_FINETUNE);
    let labels: Vec<WeatherClass> = train.iter().map(|x| x.class).collect();
    let per_epoch = batch_count(labels.len(), config.batch_size);
    let steps = config.finetune_epochs * per_epoch;
    let mut adam = new_adam(
        bundle,
        ParamGroup::Encoders,
        config.optimizers.finetune.adam(steps),
    );
    let errors: BTreeMap<usize, WeatherClass> = error_set.members.iter().copied().collect();

    let night_idx: Vec<usize> = (0..train.len())
        .filter(|&i| train[i].domain == Domain::Night)
        .collect();
    let day_idx: Vec<usize> = (0..train.len())
        .filter(|&i| train[i].domain == Domain::Day)
        .collect();
    let mut gan = (config.finetune_generators && !night_idx.is_empty() && !day_idx.is_empty())
        .then(|| GanState::new(bundle, config, steps));

    let mut curves = LossCurves::new();
    for epoch in 0..config.finetune_epochs {
        let mut means = EpochMeans::default();
        for (k, batch) in stratified_batches(&labels, config.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let views = two_views(train, &batch, config, &mut rng)?;
            let mut view_labels: Vec<WeatherClass> = batch.iter().map(|&i| labels[i]).collect();
            view_labels.extend_from_within(..);

            let mut translated = Vec::new();
            let mut translated_anchors = Vec::new();
            for (row, &i) in batch.iter().enumerate() {
                if errors.contains_key(&i) && train[i].domain == Domain::Night {
                    translated.push(bundle.translate(Direction::NightToDay, &train[i].image)?);
                    translated_anchors.push(row);
                }
            }
            let eb = EncoderBatch {
                views,
                view_labels,
                translated,
                translated_anchors,
            };
            let mut values = encoder_step(bundle, &mut adam, &eb, &config.loss_weights)?.to_vec();

            if let Some(state) = gan.as_mut() {
                bundle.set_group_trainable(ParamGroup::Encoders, false);
                let samples: Vec<NightSample<'_>> = (0..config.batch_size)
                    .map(|j| {
                        let i = night_idx[(k * config.batch_size + j) % night_idx.len()];
                        NightSample {
                            image: &train[i].image,
                            error_label: errors.get(&i).copied(),
                        }
                    })
                    .collect();
                let xs: Vec<&NightSample<'_>> = samples.iter().collect();
                let ys: Vec<&Tensor> = (0..config.batch_size)
                    .map(|j| &train[day_idx[(k * config.batch_size + j) % day_idx.len()]].image)
                    .collect();
                let step = cyclegan_step(bundle, state, &xs, &ys, config);
                bundle.set_group_trainable(ParamGroup::Encoders, true);
                values.extend(step?.into_iter().map(|(name, v)| match name {
                    "generator" => ("gan_generator", v),
                    "discriminator" => ("gan_discriminator", v),
                    other => (other, v),
                }));
            }
            means.add(&values);
        }
        means.flush(&mut curves)?;
        info!(
            "finetune epoch {}: total loss {:.4}",
            epoch + 1,
            curves["total"][epoch]
        );
    }
    Ok(curves)
}

/// Applies the night-to-day generator to night images; day images pass
/// through unchanged.
pub fn enhance(bundle: &ModelBundle, images: &[&LabeledImage]) -> Result<Vec<Tensor>> {
    images
        .iter()
        .map(|x| match x.domain {
            Domain::Night => bundle.translate(Direction::NightToDay, &x.image),
            Domain::Day => Ok(x.image.clone()),
        })
        .collect()
}
