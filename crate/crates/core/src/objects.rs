//! Multi-head self-attentive pooling.
//!
//! `A = softmax_rows(W4 · σ(W3 · Xᵀ))` gives one distribution over tokens
//! per head; the objects are `O = A·X`. The orthogonality penalty
//! `α‖A·Aᵀ − I‖` pushes heads toward different tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, v: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(v),
            Activation::Relu => g.relu(v),
            Activation::Identity => v,
        }
    }
}

/// Norm used by the orthogonality penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyNorm {
    #[default]
    Frobenius,
    SquaredFrobenius,
}

#[derive(Clone, Debug)]
pub struct ExtractorParams {
    pub heads: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// `h × h`.
    pub w3: ParamId,
    /// `n × h`.
    pub w4: ParamId,
}

/// Values of one extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectSet {
    /// `n × L`.
    pub attention: Tensor,
    /// `n × h`.
    pub objects: Tensor,
}

impl ExtractorParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: &str,
        heads: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config(format!("{group}: need at least one head")));
        }
        Ok(ExtractorParams {
            heads,
            hidden,
            activation,
            w3: store.add_glorot(group, &format!("{group}.w3"), &[hidden, hidden], rng),
            w4: store.add_glorot(group, &format!("{group}.w4"), &[heads, hidden], rng),
        })
    }

    /// `n × L` attention over the unmasked tokens of `x` (`L × h`).
    pub fn attention_matrix(&self, g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.hidden || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "attention_matrix",
                detail: format!("expected L×{} with L ≥ 1, got {:?}", self.hidden, shape),
            });
        }
        if mask.len() != shape[0] {
            return Err(Error::InvalidShape {
                op: "attention_matrix",
                detail: format!("mask of length {} for {} tokens", mask.len(), shape[0]),
            });
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::FullyMasked { row: 0 });
        }
        let w3 = g.param(self.w3);
        let w4 = g.param(self.w4);
        let xt = g.transpose(x)?;
        let proj = g.matmul(w3, xt)?;
        let act = self.activation.apply(g, proj);
        let scores = g.matmul(w4, act)?;
        g.softmax_rows(scores, Some(mask))
    }

    /// `(A, O)`.
    pub fn run(&self, g: &mut Graph<'_>, x: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let a = self.attention_matrix(g, x, mask)?;
        let o = extract(g, a, x)?;
        Ok((a, o))
    }
}

/// `O = A·X`.
pub fn extract(g: &mut Graph<'_>, a: Var, x: Var) -> Result<Var> {
    g.matmul(a, x)
}

/// `α‖A·Aᵀ − I‖` (Frobenius, or its square).
pub fn orthogonality_penalty(g: &mut Graph<'_>, a: Var, alpha: f64, norm: PenaltyNorm) -> Result<Var> {
    let n = g.shape(a)[0];
    let at = g.transpose(a)?;
    let gram = g.matmul(a, at)?;
    let eye = g.input(Tensor::identity(n));
    let diff = g.sub(gram, eye)?;
    let f = g.frobenius(diff);
    let f = match norm {
        PenaltyNorm::Frobenius => f,
        PenaltyNorm::SquaredFrobenius => g.mul(f, f)?,
    };
    Ok(g.scale(f, alpha))
}
