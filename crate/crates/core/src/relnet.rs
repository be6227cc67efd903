//! Pairwise relation network over context objects, guided by two question
//! objects, and the scalar no-answer head.
//!
//! For every ordered pair of context objects (diagonal included)
//! `G[i,j] = g_θ([o_i; o_j; q0; q1])`. Row weights `Ω_i = softmax_j(G[i,j]·w_g)`
//! give relation vectors `r_i = Σ_j Ω[i,j]·G[i,j]`; with `F_i = f_φ(r_i)` and
//! `Γ = softmax(F·w_f)` the summary is `z = Σ_i Γ_i·F_i`, and the no-answer
//! logit is a linear projection of `z` (optionally concatenated with a pooled
//! context vector).
//!
//! The first layer of `g_θ` is linear in the concatenation, so it is split
//! into per-slot blocks: `[o_i; o_j; q0; q1]·W = o_i·W_a + o_j·W_b + [q0; q1]·W_q`.
//! The `n²` pair inputs are never materialised.

use rand::Rng;

use crate::error::{Error, Result};
use crate::substrate::{Graph, ParamId, ParamStore, Tensor, Var};

pub const GROUP: &str = "relnet";
pub const NA_GROUP: &str = "na_head";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelNetDims {
    pub hidden: usize,
    pub g_hidden: usize,
    pub relation: usize,
    pub f_hidden: usize,
    pub summary: usize,
}

impl RelNetDims {
    /// Every internal width equal to `hidden`.
    pub fn uniform(hidden: usize) -> Self {
        RelNetDims {
            hidden,
            g_hidden: hidden,
            relation: hidden,
            f_hidden: hidden,
            summary: hidden,
        }
    }
}

/// Two tanh layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Mlp {
            w1: store.add_glorot(GROUP, &format!("{prefix}.w1"), &[dims[0], dims[1]], rng),
            b1: store.add_zeros(GROUP, &format!("{prefix}.b1"), &[dims[1]]),
            w2: store.add_glorot(GROUP, &format!("{prefix}.w2"), &[dims[1], dims[2]], rng),
            b2: store.add_zeros(GROUP, &format!("{prefix}.b2"), &[dims[2]]),
        }
    }

    fn second_layer(&self, g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let lin = g.matmul(hidden, w2)?;
        let pre = g.add_bias(lin, b2)?;
        Ok(g.tanh(pre))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let lin = g.matmul(x, w1)?;
        let pre = g.add_bias(lin, b1)?;
        let hidden = g.tanh(pre);
        self.second_layer(g, hidden)
    }
}

#[derive(Clone, Debug)]
pub struct RelNetParams {
    pub dims: RelNetDims,
    pub use_pooled_summary: bool,
    /// `g_θ`: `4h → d_g → d_r`.
    pub g_theta: Mlp,
    /// `f_φ`: `d_r → d_f → d_z`.
    pub f_phi: Mlp,
    pub w_g: ParamId,
    pub w_f: ParamId,
    pub na_w: ParamId,
    pub na_b: ParamId,
}

/// Graph handles of one relation-network pass.
#[derive(Clone, Copy, Debug)]
pub struct RelationVars {
    pub n: usize,
    /// `n² × d_r`, row `i·n + j` is `G[i, j]`.
    pub pairs: Var,
    /// `n × n`.
    pub omega: Var,
    /// `n × d_r`.
    pub relations: Var,
    /// `n × d_z`.
    pub summaries: Var,
    /// `1 × n`.
    pub gamma: Var,
    /// `1 × d_z`.
    pub z: Var,
    /// `1 × 1`.
    pub na: Var,
}

/// Values of one relation-network pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationOutput {
    /// `n × n × d_r`.
    pub pairs: Tensor,
    pub omega: Tensor,
    pub relations: Tensor,
    pub summaries: Tensor,
    /// Length `n`.
    pub gamma: Vec<f64>,
    pub z: Vec<f64>,
    pub na: f64,
}

impl RelationVars {
    pub fn values(&self, g: &Graph<'_>) -> RelationOutput {
        let pairs = g.value(self.pairs);
        let d_r = pairs.shape()[1];
        RelationOutput {
            pairs: pairs.clone().reshaped(vec![self.n, self.n, d_r]).expect("n² rows"),
            omega: g.value(self.omega).clone(),
            relations: g.value(self.relations).clone(),
            summaries: g.value(self.summaries).clone(),
            gamma: g.value(self.gamma).data().to_vec(),
            z: g.value(self.z).data().to_vec(),
            na: g.value(self.na).item(),
        }
    }
}

impl RelNetParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        dims: RelNetDims,
        use_pooled_summary: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let d = dims;
        if [d.hidden, d.g_hidden, d.relation, d.f_hidden, d.summary].contains(&0) {
            return Err(Error::Config(format!("relation network widths must be ≥ 1: {dims:?}")));
        }
        let na_in = d.summary + if use_pooled_summary { d.hidden } else { 0 };
        Ok(RelNetParams {
            dims,
            use_pooled_summary,
            g_theta: Mlp::new(store, "relnet.g_theta", [4 * d.hidden, d.g_hidden, d.relation], rng),
            f_phi: Mlp::new(store, "relnet.f_phi", [d.relation, d.f_hidden, d.summary], rng),
            w_g: store.add_glorot(GROUP, "relnet.w_g", &[d.relation, 1], rng),
            w_f: store.add_glorot(GROUP, "relnet.w_f", &[d.summary, 1], rng),
            na_w: store.add_glorot(NA_GROUP, "na_head.w", &[na_in, 1], rng),
            na_b: store.add_zeros(NA_GROUP, "na_head.b", &[1]),
        })
    }

    /// `G`, as an `n² × d_r` matrix, for context objects `o` (`n × h`) and
    /// question objects `q` (`2 × h`).
    pub fn pair_scores(&self, g: &mut Graph<'_>, o: Var, q: Var) -> Result<Var> {
        let h = self.dims.hidden;
        let q_shape = g.shape(q).to_vec();
        if q_shape.len() != 2 || q_shape[0] != 2 {
            return Err(Error::QuestionObjectCount(q_shape.first().copied().unwrap_or(0)));
        }
        let o_shape = g.shape(o).to_vec();
        if o_shape.len() != 2 || o_shape[1] != h || q_shape[1] != h {
            return Err(Error::ShapeMismatch {
                op: "pair_scores",
                lhs: o_shape,
                rhs: q_shape,
            });
        }
        let w1 = g.param(self.g_theta.w1);
        let b1 = g.param(self.g_theta.b1);
        let w_left = g.slice_rows(w1, 0, h)?;
        let w_right = g.slice_rows(w1, h, h)?;
        let w_question = g.slice_rows(w1, 2 * h, 2 * h)?;
        let q_flat = g.reshape(q, &[1, 2 * h])?;
        let q_lin = g.matmul(q_flat, w_question)?;
        let q_term = g.add_bias(q_lin, b1)?;
        let left_lin = g.matmul(o, w_left)?;
        let left = g.add_bias(left_lin, q_term)?;
        let right = g.matmul(o, w_right)?;
        let pre = g.pair_sum(left, right)?;
        let hidden = g.tanh(pre);
        self.g_theta.second_layer(g, hidden)
    }

    /// `(Ω, r)` from the pair scores of `n` objects.
    pub fn relate(&self, g: &mut Graph<'_>, pairs: Var, n: usize) -> Result<(Var, Var)> {
        let w_g = g.param(self.w_g);
        let scores = g.matmul(pairs, w_g)?;
        let grid = g.reshape(scores, &[n, n])?;
        let omega = g.softmax_rows(grid, None)?;
        let relations = g.grouped_weighted_sum(omega, pairs)?;
        Ok((omega, relations))
    }

    /// `(F, Γ, z)` from the relation vectors.
    pub fn summarize(&self, g: &mut Graph<'_>, relations: Var) -> Result<(Var, Var, Var)> {
        let summaries = self.f_phi.forward(g, relations)?;
        let w_f = g.param(self.w_f);
        let col = g.matmul(summaries, w_f)?;
        let row = g.transpose(col)?;
        let gamma = g.softmax_rows(row, None)?;
        let z = g.matmul(gamma, summaries)?;
        Ok((summaries, gamma, z))
    }

    /// Scalar no-answer logit. `pooled` must be given exactly when the
    /// pooled-summary input is enabled.
    pub fn na_logit(&self, g: &mut Graph<'_>, z: Var, pooled: Option<Var>) -> Result<Var> {
        let input = match (self.use_pooled_summary, pooled) {
            (true, Some(p)) => g.concat_cols(&[z, p])?,
            (false, None) => z,
            (flag, _) => {
                return Err(Error::Config(format!(
                    "na_logit: use_pooled_summary is {flag} but pooled context was {}",
                    if flag { "not given" } else { "given" }
                )))
            }
        };
        let w = g.param(self.na_w);
        let b = g.param(self.na_b);
        let lin = g.matmul(input, w)?;
        g.add_bias(lin, b)
    }

    pub fn run(&self, g: &mut Graph<'_>, o: Var, q: Var, pooled: Option<Var>) -> Result<RelationVars> {
        let n = g.shape(o)[0];
        let pairs = self.pair_scores(g, o, q)?;
        let (omega, relations) = self.relate(g, pairs, n)?;
        let (summaries, gamma, z) = self.summarize(g, relations)?;
        let na = self.na_logit(g, z, pooled)?;
        Ok(RelationVars {
            n,
            pairs,
            omega,
            relations,
            summaries,
            gamma,
            z,
            na,
        })
    }
}
