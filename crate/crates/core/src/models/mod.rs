//! Toy-scale dual encoder, heads and CycleGAN networks.

mod cyclegan;
mod heads;
mod layers;
mod prompts;
mod transformer;

pub use cyclegan::{Discriminator, GanConfig, Generator};
pub use heads::{ClassificationHead, ProjectionHead};
pub use layers::{Conv, ConvTranspose, LayerNorm, Linear};
pub use prompts::{ClassPrompt, PROMPT_LEN, PROMPT_TEXT, VOCABULARY};
pub use transformer::{Block, ImageEncoder, TextEncoder, TransformerStack};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classes::{WeatherClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{decode_checkpoint, encode_checkpoint, Graph, Tensor};

/// Anything that owns trainable tensors. Both methods list parameters in the
/// same order.
pub trait Module {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn set_trainable(&mut self, trainable: bool) {
        for (_, p) in self.params_mut() {
            p.requires_grad = trainable;
        }
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn nest<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 4,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            proj_dim: 16,
            num_classes: NUM_CLASSES,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("proj_dim", self.proj_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!(
                "encoder config: {name} must be positive"
            )));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::contract(format!(
                "encoder config: image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::contract(format!(
                "encoder config: embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::contract(format!(
                "encoder config: num_classes is fixed at {NUM_CLASSES}"
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }
}

/// Parameters optimized together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Image and text encoders with both heads.
    Encoders,
    Generators,
    Discriminators,
}

impl ParamGroup {
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            ParamGroup::Encoders => &[
                "image_encoder.",
                "text_encoder.",
                "projection.",
                "classifier.",
            ],
            ParamGroup::Generators => &["gen_night_to_day.", "gen_day_to_night."],
            ParamGroup::Discriminators => &["disc_night.", "disc_day."],
        }
    }

    fn contains(self, name: &str) -> bool {
        self.prefixes().iter().any(|p| name.starts_with(p))
    }
}

/// Which generator to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    NightToDay,
    DayToNight,
}

/// Per-image inference outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub zero_shot: WeatherClass,
    /// Cosine similarity to each class prompt.
    pub similarities: [f64; NUM_CLASSES],
    /// Classification-head probabilities.
    pub probs: [f64; NUM_CLASSES],
}

impl Prediction {
    pub fn head_class(&self) -> WeatherClass {
        argmax_lowest(&self.probs)
    }
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64; NUM_CLASSES]) -> WeatherClass {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    WeatherClass::from_index(best).expect("index < NUM_CLASSES")
}

const EVAL_CHUNK: usize = 32;

/// All networks of the system.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: EncoderConfig,
    pub gan_config: GanConfig,
    pub image_encoder: ImageEncoder,
    pub text_encoder: TextEncoder,
    pub projection: ProjectionHead,
    pub classifier: ClassificationHead,
    pub gen_night_to_day: Generator,
    pub gen_day_to_night: Generator,
    pub disc_night: Discriminator,
    pub disc_day: Discriminator,
    pub prompts: Vec<ClassPrompt>,
}

impl ModelBundle {
    pub fn new(config: &EncoderConfig, gan_config: &GanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if gan_config.base_channels == 0 {
            return Err(Error::contract(
                "gan config: base_channels must be positive",
            ));
        }
        if config.image_size % 8 != 0 {
            return Err(Error::contract(
                "image_size must be a multiple of 8 for the CycleGAN networks",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            gan_config: gan_config.clone(),
            image_encoder: ImageEncoder::new(config, &mut rng),
            text_encoder: TextEncoder::new(config, PROMPT_LEN, &mut rng),
            projection: ProjectionHead::new(config.embed_dim, config.proj_dim, &mut rng),
            classifier: ClassificationHead::new(config.embed_dim, &mut rng),
            gen_night_to_day: Generator::new(gan_config, &mut rng),
            gen_day_to_night: Generator::new(gan_config, &mut rng),
            disc_night: Discriminator::new(gan_config, &mut rng),
            disc_day: Discriminator::new(gan_config, &mut rng),
            prompts: ClassPrompt::builtin(),
        })
    }

    pub fn generator(&self, dir: Direction) -> &Generator {
        match dir {
            Direction::NightToDay => &self.gen_night_to_day,
            Direction::DayToNight => &self.gen_day_to_night,
        }
    }

    fn modules(&self) -> Vec<(&'static str, &dyn Module)> {
        vec![
            ("image_encoder", &self.image_encoder),
            ("text_encoder", &self.text_encoder),
            ("projection", &self.projection),
            ("classifier", &self.classifier),
            ("gen_night_to_day", &self.gen_night_to_day),
            ("gen_day_to_night", &self.gen_day_to_night),
            ("disc_night", &self.disc_night),
            ("disc_day", &self.disc_day),
        ]
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.modules()
            .into_iter()
            .flat_map(|(name, m)| nest(name, m.params()))
            .collect()
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<(String, &Tensor)> {
        self.named_params()
            .into_iter()
            .filter(|(n, _)| group.contains(n))
            .collect()
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> Vec<(String, &mut Tensor)> {
        self.named_params_mut()
            .into_iter()
            .filter(|(n, _)| group.contains(n))
            .collect()
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for (_, p) in self.group_params_mut(group) {
            p.requires_grad = trainable;
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = nest("image_encoder", self.image_encoder.params_mut());
        out.extend(nest("text_encoder", self.text_encoder.params_mut()));
        out.extend(nest("projection", self.projection.params_mut()));
        out.extend(nest("classifier", self.classifier.params_mut()));
        out.extend(nest("gen_night_to_day", self.gen_night_to_day.params_mut()));
        out.extend(nest("gen_day_to_night", self.gen_day_to_night.params_mut()));
        out.extend(nest("disc_night", self.disc_night.params_mut()));
        out.extend(nest("disc_day", self.disc_day.params_mut()));
        out
    }

    /// FNV-1a over parameter names and value bits.
    pub fn snapshot_id(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in self.named_params() {
            feed(name.as_bytes());
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self.named_params())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::tensor::write_checkpoint(path, self.named_params())
    }

    /// Overwrites parameters from a checkpoint with exactly matching names and shapes.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let records = decode_checkpoint(bytes)?;
        let mut params = self.named_params_mut();
        if records.len() != params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model has {}",
                records.len(),
                params.len()
            )));
        }
        for ((name, t), (pname, p)) in records.into_iter().zip(params.iter_mut()) {
            if name != *pname || t.shape() != p.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor `{name}` {:?} does not match `{pname}` {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_bytes(&bytes)
    }

    // ── inference ───────────────────────────────────────────────────────

    /// Projected, normalized text embedding of each class prompt.
    pub fn text_projections(&self) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::inference();
        let e = self.text_encoder.forward(&mut g, &self.prompts)?;
        let z = self.projection.forward(&mut g, e)?;
        Ok(g.value(z)
            .chunks(self.config.proj_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Raw image-encoder embeddings.
    pub fn image_embeddings(&self, images: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let vars: Vec<_> = chunk.iter().map(|t| g.param(t)).collect();
            let e = self.image_encoder.forward(&mut g, &vars)?;
            out.extend(
                g.value(e)
                    .chunks(self.config.embed_dim)
                    .map(<[f64]>::to_vec),
            );
        }
        Ok(out)
    }

    pub fn predict(&self, images: &[&Tensor]) -> Result<Vec<Prediction>> {
        let text = self.text_projections()?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let mut g = Graph::inference();
            let vars: Vec<_> = chunk.iter().map(|t| g.param(t)).collect();
            let e = self.image_encoder.forward(&mut g, &vars)?;
            let z = self.projection.forward(&mut g, e)?;
            let p = self.classifier.forward(&mut g, e)?;
            for (zi, pi) in g
                .value(z)
                .chunks(self.config.proj_dim)
                .zip(g.value(p).chunks(NUM_CLASSES))
            {
                let mut similarities = [0.0; NUM_CLASSES];
                for (s, t) in similarities.iter_mut().zip(&text) {
                    *s = zi.iter().zip(t).map(|(a, b)| a * b).sum();
                }
                out.push(Prediction {
                    zero_shot: argmax_lowest(&similarities),
                    similarities,
                    probs: [pi[0], pi[1], pi[2]],
                });
            }
        }
        Ok(out)
    }

    /// Nearest class prompt in the projected space.
    pub fn zero_shot_classify(&self, images: &[&Tensor]) -> Result<Vec<WeatherClass>> {
        Ok(self
            .predict(images)?
            .into_iter()
            .map(|p| p.zero_shot)
            .collect())
    }

    pub fn translate(&self, dir: Direction, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let x = g.param(image);
        let y = self.generator(dir).forward(&mut g, x)?;
        Ok(g.tensor(y))
    }

    pub fn discriminate(&self, disc: &Discriminator, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let x = g.param(image);
        let y = disc.forward(&mut g, x)?;
        Ok(g.tensor(y))
    }
}
