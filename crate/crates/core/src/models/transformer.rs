use std::rc::Rc;

use rand::Rng;

use super::layers::{fan_in_uniform, LayerNorm, Linear};
use super::prompts::{ClassPrompt, VOCABULARY};
use super::{nest, EncoderConfig, Module};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

const MLP_RATIO: usize = 2;

/// Pre-layernorm block: `h = x + MHSA(LN(x))`, `out = h + MLP(LN(h))`.
#[derive(Clone, Debug)]
pub struct Block {
    ln_attn: LayerNorm,
    qkv: Linear,
    attn_out: Linear,
    ln_mlp: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
    num_heads: usize,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(dim: usize, num_heads: usize, rng: &mut R) -> Self {
        Self {
            ln_attn: LayerNorm::new(dim),
            qkv: Linear::new(dim, 3 * dim, rng),
            attn_out: Linear::new(dim, dim, rng),
            ln_mlp: LayerNorm::new(dim),
            mlp_in: Linear::new(dim, MLP_RATIO * dim, rng),
            mlp_out: Linear::new(MLP_RATIO * dim, dim, rng),
            num_heads,
        }
    }

    /// `x` stacks `batch` sequences of `seq_len` tokens: `[(batch·seq_len)×D]`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var, seq_len: usize) -> Result<Var> {
        let rows = g.shape(x)[0];
        let dim = g.shape(x)[1];
        let head_dim = dim / self.num_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let normed = self.ln_attn.forward(g, x)?;
        let qkv = self.qkv.forward(g, normed)?;
        let mut sequences = Vec::with_capacity(rows / seq_len);
        for start in (0..rows).step_by(seq_len) {
            let r = start..start + seq_len;
            let mut heads = Vec::with_capacity(self.num_heads);
            for h in 0..self.num_heads {
                let c = h * head_dim;
                let q = g.slice2d(qkv, r.clone(), c..c + head_dim)?;
                let k = g.slice2d(qkv, r.clone(), dim + c..dim + c + head_dim)?;
                let v = g.slice2d(qkv, r.clone(), 2 * dim + c..2 * dim + c + head_dim)?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, scale);
                let attn = g.softmax_rows(scores)?;
                heads.push(g.matmul(attn, v)?);
            }
            sequences.push(g.concat_cols(&heads)?);
        }
        let mixed = g.concat_rows(&sequences)?;
        let attended = self.attn_out.forward(g, mixed)?;
        let h = g.add(x, attended)?;

        let normed = self.ln_mlp.forward(g, h)?;
        let hidden = self.mlp_in.forward(g, normed)?;
        let hidden = g.gelu(hidden);
        let out = self.mlp_out.forward(g, hidden)?;
        g.add(h, out)
    }
}

impl Module for Block {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = nest("ln_attn", self.ln_attn.params());
        out.extend(nest("qkv", self.qkv.params()));
        out.extend(nest("attn_out", self.attn_out.params()));
        out.extend(nest("ln_mlp", self.ln_mlp.params()));
        out.extend(nest("mlp_in", self.mlp_in.params()));
        out.extend(nest("mlp_out", self.mlp_out.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = nest("ln_attn", self.ln_attn.params_mut());
        out.extend(nest("qkv", self.qkv.params_mut()));
        out.extend(nest("attn_out", self.attn_out.params_mut()));
        out.extend(nest("ln_mlp", self.ln_mlp.params_mut()));
        out.extend(nest("mlp_in", self.mlp_in.params_mut()));
        out.extend(nest("mlp_out", self.mlp_out.params_mut()));
        out
    }
}

/// Blocks followed by a final layernorm and mean pooling over tokens.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl TransformerStack {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            blocks: (0..config.num_layers)
                .map(|_| Block::new(config.embed_dim, config.num_heads, rng))
                .collect(),
            ln_final: LayerNorm::new(config.embed_dim),
        }
    }

    /// `[(B·T)×D] → [B×D]`
    pub fn forward_pooled<'a>(
        &'a self,
        g: &mut Graph<'a>,
        mut x: Var,
        seq_len: usize,
    ) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, x, seq_len)?;
        }
        let x = self.ln_final.forward(g, x)?;
        g.segment_mean_rows(x, seq_len)
    }
}

impl Module for TransformerStack {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(nest(&format!("blocks.{i}"), b.params()));
        }
        out.extend(nest("ln_final", self.ln_final.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(nest(&format!("blocks.{i}"), b.params_mut()));
        }
        out.extend(nest("ln_final", self.ln_final.params_mut()));
        out
    }
}

/// Patch-embedding vision transformer.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    config: EncoderConfig,
    patch_embed: Linear,
    pos_embed: Tensor,
    stack: TransformerStack,
    patch_index: Rc<Vec<usize>>,
}

impl ImageEncoder {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let patch_dim = 3 * config.patch_size * config.patch_size;
        let tokens = config.num_patches();
        Self {
            config: config.clone(),
            patch_embed: Linear::new(patch_dim, config.embed_dim, rng),
            pos_embed: fan_in_uniform(&[tokens, config.embed_dim], config.embed_dim, rng),
            stack: TransformerStack::new(config, rng),
            patch_index: Rc::new(patch_indices(config.image_size, config.patch_size)),
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `[3×H×W]` images → `[B×embed_dim]` embeddings.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, images: &[Var]) -> Result<Var> {
        if images.is_empty() {
            return Err(Error::contract("encode_image: empty batch"));
        }
        let s = self.config.image_size;
        let p = self.config.patch_size;
        let tokens = self.config.num_patches();
        let mut patches = Vec::with_capacity(images.len());
        for &img in images {
            if g.shape(img) != [3, s, s] {
                return Err(Error::shape(format!(
                    "encode_image: expected [3, {s}, {s}], got {:?}",
                    g.shape(img)
                )));
            }
            patches.push(g.gather(img, self.patch_index.clone(), &[tokens, 3 * p * p])?);
        }
        let x = g.concat_rows(&patches)?;
        let x = self.patch_embed.forward(g, x)?;
        let pos = g.param(&self.pos_embed);
        let pos = g.tile_rows(pos, images.len())?;
        let x = g.add(x, pos)?;
        self.stack.forward_pooled(g, x, tokens)
    }
}

/// Flat indices turning a `[3×S×S]` image into `[T × 3·p·p]` patch rows,
/// patches in raster order, each row laid out channel-major.
fn patch_indices(size: usize, patch: usize) -> Vec<usize> {
    let per_side = size / patch;
    let mut idx = Vec::with_capacity(3 * size * size);
    for py in 0..per_side {
        for px in 0..per_side {
            for c in 0..3 {
                for dy in 0..patch {
                    for dx in 0..patch {
                        idx.push((c * size + py * patch + dy) * size + px * patch + dx);
                    }
                }
            }
        }
    }
    idx
}

impl Module for ImageEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = nest("patch_embed", self.patch_embed.params());
        out.push(("pos_embed".into(), &self.pos_embed));
        out.extend(nest("stack", self.stack.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = nest("patch_embed", self.patch_embed.params_mut());
        out.push(("pos_embed".into(), &mut self.pos_embed));
        out.extend(nest("stack", self.stack.params_mut()));
        out
    }
}

/// Token-sequence transformer over the built-in prompt vocabulary.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    token_embed: Tensor,
    pos_embed: Tensor,
    stack: TransformerStack,
    max_len: usize,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(config: &EncoderConfig, max_len: usize, rng: &mut R) -> Self {
        let d = config.embed_dim;
        Self {
            token_embed: Tensor::uniform(&[VOCABULARY.len(), d], -1.0, 1.0, rng).param(),
            pos_embed: fan_in_uniform(&[max_len, d], d, rng),
            stack: TransformerStack::new(config, rng),
            max_len,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, prompts: &[ClassPrompt]) -> Result<Var> {
        if prompts.is_empty() {
            return Err(Error::contract("encode_text: no prompts"));
        }
        let d = self.token_embed.shape()[1];
        let mut idx = Vec::with_capacity(prompts.len() * self.max_len * d);
        for p in prompts {
            if p.token_ids.len() != self.max_len {
                return Err(Error::Input(format!(
                    "prompt has {} tokens, encoder expects exactly {}",
                    p.token_ids.len(),
                    self.max_len
                )));
            }
            for &t in &p.token_ids {
                if t >= VOCABULARY.len() {
                    return Err(Error::Input(format!("token id {t} outside vocabulary")));
                }
                idx.extend((0..d).map(|j| t * d + j));
            }
        }
        let table = g.param(&self.token_embed);
        let rows = prompts.len() * self.max_len;
        let x = g.gather(table, Rc::new(idx), &[rows, d])?;
        let pos = g.param(&self.pos_embed);
        let pos = g.tile_rows(pos, prompts.len())?;
        let x = g.add(x, pos)?;
        self.stack.forward_pooled(g, x, self.max_len)
    }
}

impl Module for TextEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embed".to_string(), &self.token_embed),
            ("pos_embed".to_string(), &self.pos_embed),
        ];
        out.extend(nest("stack", self.stack.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("token_embed".to_string(), &mut self.token_embed),
            ("pos_embed".to_string(), &mut self.pos_embed),
        ];
        out.extend(nest("stack", self.stack.params_mut()));
        out
    }
}
