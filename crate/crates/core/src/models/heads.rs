use rand::Rng;

use super::layers::Linear;
use super::{nest, Module};
use crate::classes::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Linear map into the shared embedding space followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub linear: Linear,
}

impl ProjectionHead {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, proj_dim: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(embed_dim, proj_dim, rng),
        }
    }

    pub fn from_linear(linear: Linear) -> Self {
        Self { linear }
    }

    /// `[B×embed_dim] → [B×proj_dim]`, unit rows.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, e: Var) -> Result<Var> {
        check_width("project", g, e, self.linear.in_dim())?;
        let z = self.linear.forward(g, e)?;
        g.l2_normalize_rows(z)
    }
}

impl Module for ProjectionHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        nest("linear", self.linear.params())
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        nest("linear", self.linear.params_mut())
    }
}

/// Linear layer over the three weather classes followed by softmax.
#[derive(Clone, Debug)]
pub struct ClassificationHead {
    pub linear: Linear,
}

impl ClassificationHead {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(embed_dim, NUM_CLASSES, rng),
        }
    }

    pub fn from_linear(linear: Linear) -> Self {
        Self { linear }
    }

    /// `[B×embed_dim] → [B×3]` probabilities.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, e: Var) -> Result<Var> {
        check_width("classify", g, e, self.linear.in_dim())?;
        let logits = self.linear.forward(g, e)?;
        g.softmax_rows(logits)
    }
}

impl Module for ClassificationHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        nest("linear", self.linear.params())
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        nest("linear", self.linear.params_mut())
    }
}

fn check_width(op: &str, g: &Graph<'_>, e: Var, expected: usize) -> Result<()> {
    match g.shape(e) {
        [_, w] if *w == expected => Ok(()),
        s => Err(Error::shape(format!(
            "{op}: expected rows of width {expected}, got {s:?}"
        ))),
    }
}
