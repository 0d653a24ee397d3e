//! Reduced-depth CycleGAN networks: a residual encoder/decoder generator and
//! a patch discriminator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, ConvTranspose};
use super::{nest, Module};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    /// Channel width after the first downsampling conv; doubles after the second.
    pub base_channels: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self { base_channels: 8 }
    }
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResidualBlock {
    fn new<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Self {
            conv1: Conv::new(c, c, 3, 1, 1, rng),
            conv2: Conv::new(c, c, 3, 1, 1, rng),
        }
    }

    fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.instance_norm(h)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, h)?;
        let h = g.instance_norm(h)?;
        g.add(x, h)
    }

    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = nest("conv1", self.conv1.params());
        out.extend(nest("conv2", self.conv2.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = nest("conv1", self.conv1.params_mut());
        out.extend(nest("conv2", self.conv2.params_mut()));
        out
    }
}

/// Two stride-2 convs, two residual blocks, two stride-2 transposed convs and
/// a tanh. A 1×1 conv of the input is added before the tanh so fine texture
/// (streaks, speckle) does not have to pass through the 4× bottleneck.
///
/// The skip starts as the identity and the last transposed conv at zero, so an
/// untrained generator computes `tanh(x)`.
#[derive(Clone, Debug)]
pub struct Generator {
    down1: Conv,
    down2: Conv,
    res: [ResidualBlock; 2],
    up1: ConvTranspose,
    up2: ConvTranspose,
    skip: Conv,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Self {
        let c = config.base_channels;
        let mut up2 = ConvTranspose::new(c, 3, 4, 2, 1, rng);
        up2.weight.data_mut().fill(0.0);
        up2.bias.data_mut().fill(0.0);
        let mut skip = Conv::new(3, 3, 1, 1, 0, rng);
        skip.weight.data_mut().fill(0.0);
        for ch in 0..3 {
            skip.weight.data_mut()[ch * 3 + ch] = 1.0;
        }
        skip.bias.data_mut().fill(0.0);
        Self {
            down1: Conv::new(3, c, 3, 2, 1, rng),
            down2: Conv::new(c, 2 * c, 3, 2, 1, rng),
            res: [
                ResidualBlock::new(2 * c, rng),
                ResidualBlock::new(2 * c, rng),
            ],
            up1: ConvTranspose::new(2 * c, c, 4, 2, 1, rng),
            up2,
            skip,
        }
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        match g.shape(x) {
            [3, h, w] if h % 4 == 0 && w % 4 == 0 && *h >= 8 && *w >= 8 => {}
            s => {
                return Err(Error::shape(format!(
                    "generate: expected [3×H×W] with H, W multiples of 4 and ≥ 8, got {s:?}"
                )))
            }
        }
        let h = self.down1.forward(g, x)?;
        let h = g.instance_norm(h)?;
        let h = g.relu(h);
        let h = self.down2.forward(g, h)?;
        let h = g.instance_norm(h)?;
        let mut h = g.relu(h);
        for block in &self.res {
            h = block.forward(g, h)?;
        }
        let h = self.up1.forward(g, h)?;
        let h = g.instance_norm(h)?;
        let h = g.relu(h);
        let h = self.up2.forward(g, h)?;
        let s = self.skip.forward(g, x)?;
        let h = g.add(h, s)?;
        Ok(g.tanh(h))
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = nest("down1", self.down1.params());
        out.extend(nest("down2", self.down2.params()));
        out.extend(nest("res.0", self.res[0].params()));
        out.extend(nest("res.1", self.res[1].params()));
        out.extend(nest("up1", self.up1.params()));
        out.extend(nest("up2", self.up2.params()));
        out.extend(nest("skip", self.skip.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let [r0, r1] = &mut self.res;
        let mut out = nest("down1", self.down1.params_mut());
        out.extend(nest("down2", self.down2.params_mut()));
        out.extend(nest("res.0", r0.params_mut()));
        out.extend(nest("res.1", r1.params_mut()));
        out.extend(nest("up1", self.up1.params_mut()));
        out.extend(nest("up2", self.up2.params_mut()));
        out.extend(nest("skip", self.skip.params_mut()));
        out
    }
}

/// Patch discriminator: three stride-2 conv blocks, a one-channel conv and a
/// per-cell sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    blocks: [Conv; 3],
    head: Conv,
}

const LEAK: f64 = 0.2;

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: &GanConfig, rng: &mut R) -> Self {
        let c = config.base_channels;
        Self {
            blocks: [
                Conv::new(3, c, 3, 2, 1, rng),
                Conv::new(c, 2 * c, 3, 2, 1, rng),
                Conv::new(2 * c, 4 * c, 3, 2, 1, rng),
            ],
            head: Conv::new(4 * c, 1, 3, 1, 1, rng),
        }
    }

    /// Zeroes the final conv so every cell scores exactly 0.5.
    pub fn zero_final_layer(&mut self) {
        self.head.weight.data_mut().fill(0.0);
        self.head.bias.data_mut().fill(0.0);
    }

    /// `[3×H×W] → [1×H/8×W/8]` scores in (0, 1).
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<Var> {
        match g.shape(x) {
            [3, h, w] if *h >= 8 && *w >= 8 => {}
            s => {
                return Err(Error::shape(format!(
                    "discriminate: expected [3×H×W] with H, W ≥ 8, got {s:?}"
                )))
            }
        }
        let mut h = x;
        for conv in &self.blocks {
            h = conv.forward(g, h)?;
            h = g.leaky_relu(h, LEAK);
        }
        let logits = self.head.forward(g, h)?;
        Ok(g.sigmoid(logits))
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(nest(&format!("blocks.{i}"), b.params()));
        }
        out.extend(nest("head", self.head.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(nest(&format!("blocks.{i}"), b.params_mut()));
        }
        out.extend(nest("head", self.head.params_mut()));
        out
    }
}
