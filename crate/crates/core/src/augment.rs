//! Plausible-answer hidden layers and context augmentation.
//!
//! `S = tanh(C·W1 + b1)` and `E = tanh(C·W2 + b2)` are trained, through
//! separate h→1 projections, to point at the start and end of the plausible
//! (or true) answer. The augmented context is `X = [C; S; E]·W`.

use rand::Rng;

use crate::data::Span;
use crate::error::{Error, Result};
use crate::substrate::{Graph, ParamId, ParamStore, Var};

pub const GROUP: &str = "augment";

#[derive(Clone, Debug)]
pub struct AugmentParams {
    pub hidden: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// `3h × h` projection of `[C; S; E]`.
    pub w: ParamId,
    pub bias: Option<ParamId>,
    pub s_proj: ParamId,
    pub e_proj: ParamId,
}

impl AugmentParams {
    pub fn new<R: Rng>(store: &mut ParamStore, hidden: usize, with_bias: bool, rng: &mut R) -> Self {
        AugmentParams {
            hidden,
            w1: store.add_glorot(GROUP, "augment.w1", &[hidden, hidden], rng),
            b1: store.add_zeros(GROUP, "augment.b1", &[hidden]),
            w2: store.add_glorot(GROUP, "augment.w2", &[hidden, hidden], rng),
            b2: store.add_zeros(GROUP, "augment.b2", &[hidden]),
            w: store.add_glorot(GROUP, "augment.w", &[3 * hidden, hidden], rng),
            bias: with_bias.then(|| store.add_zeros(GROUP, "augment.bias", &[hidden])),
            s_proj: store.add_glorot(GROUP, "augment.s_proj", &[hidden, 1], rng),
            e_proj: store.add_glorot(GROUP, "augment.e_proj", &[hidden, 1], rng),
        }
    }

    fn check_hidden(&self, g: &Graph<'_>, v: Var) -> Result<()> {
        let shape = g.shape(v);
        if shape.len() != 2 || shape[1] != self.hidden {
            return Err(Error::InvalidShape {
                op: "augment",
                detail: format!("expected L×{}, got {:?}", self.hidden, shape),
            });
        }
        Ok(())
    }

    /// `(S, E)`, both `L × h` with entries in (−1, 1).
    pub fn plausible_hidden(&self, g: &mut Graph<'_>, context: Var) -> Result<(Var, Var)> {
        self.check_hidden(g, context)?;
        let mut layer = |w: ParamId, b: ParamId| -> Result<Var> {
            let wv = g.param(w);
            let bv = g.param(b);
            let lin = g.matmul(context, wv)?;
            let pre = g.add_bias(lin, bv)?;
            Ok(g.tanh(pre))
        };
        let s = layer(self.w1, self.b1)?;
        let e = layer(self.w2, self.b2)?;
        Ok((s, e))
    }

    /// `X = [C; S; E]·W` (plus a bias when configured), `L × h`.
    pub fn augment_context(&self, g: &mut Graph<'_>, context: Var, s: Var, e: Var) -> Result<Var> {
        for v in [context, s, e] {
            self.check_hidden(g, v)?;
        }
        if g.shape(context)[0] != g.shape(s)[0] || g.shape(s)[0] != g.shape(e)[0] {
            return Err(Error::ShapeMismatch {
                op: "augment_context",
                lhs: g.shape(context).to_vec(),
                rhs: g.shape(s).to_vec(),
            });
        }
        let stacked = g.concat_cols(&[context, s, e])?;
        let w = g.param(self.w);
        let x = g.matmul(stacked, w)?;
        match self.bias {
            Some(b) => {
                let bv = g.param(b);
                g.add_bias(x, bv)
            }
            None => Ok(x),
        }
    }

    /// Cross-entropy of the projected start and end logits against `target`
    /// over the unmasked positions; `None` when the example has no span.
    pub fn plausible_span_loss(
        &self,
        g: &mut Graph<'_>,
        s: Var,
        e: Var,
        mask: &[bool],
        target: Option<Span>,
    ) -> Result<Option<Var>> {
        let Some((start, end)) = target else {
            return Ok(None);
        };
        let len = mask.len();
        if start > end || end >= len || !mask[start] || !mask[end] {
            return Err(Error::SpanOutOfRange {
                start,
                end,
                len: mask.iter().filter(|m| **m).count(),
            });
        }
        let mut term = |hidden: Var, proj: ParamId, index: usize| -> Result<Var> {
            let p = g.param(proj);
            let col = g.matmul(hidden, p)?;
            let row = g.transpose(col)?;
            let masked = g.mask_fill(row, mask)?;
            g.cross_entropy(masked, index)
        };
        let ls = term(s, self.s_proj, start)?;
        let le = term(e, self.e_proj, end)?;
        Ok(Some(g.add(ls, le)?))
    }
}

/// Sum of per-example auxiliary losses; examples without a span contribute
/// nothing. `None` when no example has a span.
pub fn batch_plausible_loss(g: &mut Graph<'_>, terms: &[Option<Var>]) -> Result<Option<Var>> {
    let present: Vec<Var> = terms.iter().flatten().copied().collect();
    let Some((&first, rest)) = present.split_first() else {
        return Ok(None);
    };
    let mut total = first;
    for &t in rest {
        total = g.add(total, t)?;
    }
    Ok(Some(total))
}
