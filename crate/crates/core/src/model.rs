//! Full model: reader, plausible-answer augmentation, object extractors,
//! relation network and the joint loss, with the ablation variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentParams;
use crate::data::EncodedBatch;
use crate::error::{Error, Result};
use crate::objects::{orthogonality_penalty, Activation, ExtractorParams, PenaltyNorm};
use crate::reader::{predict_span, ReaderParams, SpanDecision};
use crate::relnet::{RelNetDims, RelNetParams, RelationVars, NA_GROUP};
use crate::substrate::{Graph, ParamId, ParamStore, Tensor, Var};

pub const CONTEXT_EXTRACTOR: &str = "context_extractor";
pub const QUESTION_EXTRACTOR: &str = "question_extractor";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Augmentation, both extractors and the relation network.
    #[default]
    RelationModule,
    /// No-answer logit from one linear layer over the pooled context.
    BaselineFcNa,
    /// The baseline plus the plausible-answer auxiliary loss.
    PlausibleOnly,
    /// Relation module with the extractor reading the reader output directly.
    NoAugmentation,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::RelationModule,
        Variant::BaselineFcNa,
        Variant::PlausibleOnly,
        Variant::NoAugmentation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RelationModule => "relation_module",
            Variant::BaselineFcNa => "baseline_fc_na",
            Variant::PlausibleOnly => "plausible_only",
            Variant::NoAugmentation => "no_augmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn uses_augment(self) -> bool {
        matches!(self, Variant::RelationModule | Variant::PlausibleOnly)
    }

    pub fn uses_relnet(self) -> bool {
        matches!(self, Variant::RelationModule | Variant::NoAugmentation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub context_heads: usize,
    pub question_heads: usize,
    /// Relation-network widths; `None` means `hidden`.
    pub g_hidden: Option<usize>,
    pub relation_dim: Option<usize>,
    pub f_hidden: Option<usize>,
    pub summary_dim: Option<usize>,
    pub alpha: f64,
    pub penalty_norm: PenaltyNorm,
    pub aux_weight: f64,
    pub augment_bias: bool,
    pub use_pooled_summary: bool,
    pub activation: Activation,
    pub variant: Variant,
    pub max_span_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            embed: 32,
            context_heads: 16,
            question_heads: 2,
            g_hidden: None,
            relation_dim: None,
            f_hidden: None,
            summary_dim: None,
            alpha: 0.0005,
            penalty_norm: PenaltyNorm::Frobenius,
            aux_weight: 1.0,
            augment_bias: false,
            use_pooled_summary: false,
            activation: Activation::Tanh,
            variant: Variant::RelationModule,
            max_span_len: 15,
        }
    }
}

impl ModelConfig {
    pub fn relnet_dims(&self) -> RelNetDims {
        RelNetDims {
            hidden: self.hidden,
            g_hidden: self.g_hidden.unwrap_or(self.hidden),
            relation: self.relation_dim.unwrap_or(self.hidden),
            f_hidden: self.f_hidden.unwrap_or(self.hidden),
            summary: self.summary_dim.unwrap_or(self.hidden),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.uses_relnet() && self.question_heads != 2 {
            return Err(Error::Config(format!(
                "the relation network takes exactly 2 question heads, got {}",
                self.question_heads
            )));
        }
        if self.context_heads == 0 {
            return Err(Error::Config("context_heads must be ≥ 1".into()));
        }
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Graph handles produced by one example's forward pass.
#[derive(Clone, Debug)]
pub struct ExampleForward {
    pub question: Var,
    pub context: Var,
    /// Plausible-answer hidden layers `(S, E)`.
    pub plausible: Option<(Var, Var)>,
    pub augmented: Option<Var>,
    pub context_attention: Option<Var>,
    pub question_attention: Option<Var>,
    pub relation: Option<RelationVars>,
    pub na: Var,
    /// `1 × (Lc + 1)`, last entry is the virtual no-answer slot.
    pub start: Var,
    pub end: Var,
}

/// Scalar loss components of one example.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub start: Var,
    pub end: Var,
    pub aux: Option<Var>,
    pub context_penalty: Option<Var>,
    pub question_penalty: Option<Var>,
}

/// `start + end + λ_aux·aux + penalties`; absent terms contribute nothing.
pub fn joint_loss(g: &mut Graph<'_>, terms: &LossTerms, aux_weight: f64) -> Result<Var> {
    let mut total = g.add(terms.start, terms.end)?;
    if let Some(aux) = terms.aux {
        let weighted = g.scale(aux, aux_weight);
        total = g.add(total, weighted)?;
    }
    for p in [terms.context_penalty, terms.question_penalty].into_iter().flatten() {
        total = g.add(total, p)?;
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub reader: ReaderParams,
    pub augment: Option<AugmentParams>,
    pub context_extractor: Option<ExtractorParams>,
    pub question_extractor: Option<ExtractorParams>,
    pub relnet: Option<RelNetParams>,
    /// `(w, b)` of the single-layer no-answer head of the baselines.
    pub fc_na: Option<(ParamId, ParamId)>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let reader = ReaderParams::new(&mut store, vocab_size, config.embed, h, &mut rng)?;
        let variant = config.variant;
        let augment = variant
            .uses_augment()
            .then(|| AugmentParams::new(&mut store, h, config.augment_bias, &mut rng));
        let (context_extractor, question_extractor, relnet, fc_na) = if variant.uses_relnet() {
            let ce = ExtractorParams::new(
                &mut store,
                CONTEXT_EXTRACTOR,
                config.context_heads,
                h,
                config.activation,
                &mut rng,
            )?;
            let qe = ExtractorParams::new(
                &mut store,
                QUESTION_EXTRACTOR,
                config.question_heads,
                h,
                config.activation,
                &mut rng,
            )?;
            let rn = RelNetParams::new(&mut store, config.relnet_dims(), config.use_pooled_summary, &mut rng)?;
            (Some(ce), Some(qe), Some(rn), None)
        } else {
            let w = store.add_glorot(NA_GROUP, "na_head.fc_w", &[h, 1], &mut rng);
            let b = store.add_zeros(NA_GROUP, "na_head.fc_b", &[1]);
            (None, None, None, Some((w, b)))
        };
        Ok(Model {
            config,
            store,
            reader,
            augment,
            context_extractor,
            question_extractor,
            relnet,
            fc_na,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.reader.vocab_size
    }

    /// Masked mean of the context rows, `1 × h`.
    fn pooled_context(g: &mut Graph<'_>, context: Var, mask: &[bool]) -> Result<Var> {
        let count = mask.iter().filter(|m| **m).count().max(1) as f64;
        let weights = mask.iter().map(|m| if *m { 1.0 / count } else { 0.0 }).collect();
        let w = g.input(Tensor::row_vector(weights));
        g.matmul(w, context)
    }

    pub fn forward(&self, g: &mut Graph<'_>, batch: &EncodedBatch, b: usize) -> Result<ExampleForward> {
        let enc = self.reader.encode_example(g, batch, b)?;
        let cmask = &batch.context_mask[b];
        let qmask = &batch.question_mask[b];

        let (plausible, augmented) = match &self.augment {
            Some(aug) => {
                let (s, e) = aug.plausible_hidden(g, enc.context)?;
                let x = match self.config.variant {
                    Variant::RelationModule => Some(aug.augment_context(g, enc.context, s, e)?),
                    _ => None,
                };
                (Some((s, e)), x)
            }
            None => (None, None),
        };

        let mut context_attention = None;
        let mut question_attention = None;
        let mut relation = None;
        let na = match (&self.relnet, &self.fc_na) {
            (Some(rn), _) => {
                let ce = self.context_extractor.as_ref().expect("relnet implies extractors");
                let qe = self.question_extractor.as_ref().expect("relnet implies extractors");
                let x = augmented.unwrap_or(enc.context);
                let (ac, objects) = ce.run(g, x, cmask)?;
                let (aq, q_objects) = qe.run(g, enc.question, qmask)?;
                let pooled = if rn.use_pooled_summary {
                    Some(Self::pooled_context(g, enc.context, cmask)?)
                } else {
                    None
                };
                let vars = rn.run(g, objects, q_objects, pooled)?;
                context_attention = Some(ac);
                question_attention = Some(aq);
                relation = Some(vars);
                vars.na
            }
            (None, Some((w, bias))) => {
                let pooled = Self::pooled_context(g, enc.context, cmask)?;
                let wv = g.param(*w);
                let bv = g.param(*bias);
                let lin = g.matmul(pooled, wv)?;
                g.add_bias(lin, bv)?
            }
            (None, None) => unreachable!("every variant has a no-answer head"),
        };

        let (start, end) = self.reader.span_logits(g, enc.context, cmask, Some(na))?;
        Ok(ExampleForward {
            question: enc.question,
            context: enc.context,
            plausible,
            augmented,
            context_attention,
            question_attention,
            relation,
            na,
            start,
            end,
        })
    }

    pub fn loss_terms(
        &self,
        g: &mut Graph<'_>,
        batch: &EncodedBatch,
        b: usize,
        fwd: &ExampleForward,
    ) -> Result<LossTerms> {
        let width = batch.context_mask[b].len();
        let (ts, te) = batch.answer_spans[b].unwrap_or((width, width));
        let start = g.cross_entropy(fwd.start, ts)?;
        let end = g.cross_entropy(fwd.end, te)?;
        let aux = match (&self.augment, fwd.plausible) {
            (Some(aug), Some((s, e))) => {
                aug.plausible_span_loss(g, s, e, &batch.context_mask[b], batch.auxiliary_span(b))?
            }
            _ => None,
        };
        let (alpha, norm) = (self.config.alpha, self.config.penalty_norm);
        let context_penalty = fwd
            .context_attention
            .map(|a| orthogonality_penalty(g, a, alpha, norm))
            .transpose()?;
        let question_penalty = fwd
            .question_attention
            .map(|a| orthogonality_penalty(g, a, alpha, norm))
            .transpose()?;
        Ok(LossTerms {
            start,
            end,
            aux,
            context_penalty,
            question_penalty,
        })
    }

    /// Forward pass and joint loss of one example.
    pub fn example_loss(&self, g: &mut Graph<'_>, batch: &EncodedBatch, b: usize) -> Result<(ExampleForward, Var)> {
        let fwd = self.forward(g, batch, b)?;
        let terms = self.loss_terms(g, batch, b, &fwd)?;
        let loss = joint_loss(g, &terms, self.config.aux_weight)?;
        Ok((fwd, loss))
    }

    /// Span decision for every example of `batch`.
    pub fn predict(&self, batch: &EncodedBatch, tau: f64) -> Result<Vec<SpanDecision>> {
        (0..batch.len())
            .map(|b| {
                let mut g = Graph::new(&self.store);
                let fwd = self.forward(&mut g, batch, b)?;
                Ok(predict_span(
                    g.value(fwd.start).data(),
                    g.value(fwd.end).data(),
                    &batch.context_mask[b],
                    self.config.max_span_len,
                    tau,
                ))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{batchify, generate_synthetic, SyntheticConfig, Vocab};

    fn tiny(variant: Variant) -> (Model, Vec<EncodedBatch>) {
        let data = generate_synthetic(&SyntheticConfig {
            num_examples: 4,
            facts_per_example: 2,
            ..Default::default()
        })
        .unwrap();
        let vocab = Vocab::build(&data);
        let config = ModelConfig {
            hidden: 6,
            embed: 4,
            context_heads: 3,
            variant,
            ..Default::default()
        };
        (Model::new(config, vocab.len(), 1).unwrap(), batchify(&data, 4, &vocab))
    }

    #[test]
    fn baseline_has_no_relnet_parameters() {
        let (model, _) = tiny(Variant::BaselineFcNa);
        let groups = model.store.groups();
        assert_eq!(groups, ["reader", "na_head"]);
        assert!(model.relnet.is_none());
    }

    #[test]
    fn all_variants_produce_finite_losses() {
        for v in Variant::ALL {
            let (model, batches) = tiny(v);
            let mut g = Graph::new(&model.store);
            for b in 0..batches[0].len() {
                let (_, loss) = model.example_loss(&mut g, &batches[0], b).unwrap();
                assert!(g.value(loss).item().is_finite(), "{v:?}");
            }
        }
    }

    #[test]
    fn joint_loss_is_sum_of_terms() {
        let mut g = Graph::detached();
        let vals = [0.5, 1.25, 0.75, 0.001, 0.002];
        let vars: Vec<Var> = vals.iter().map(|v| g.input(Tensor::scalar(*v))).collect();
        let terms = LossTerms {
            start: vars[0],
            end: vars[1],
            aux: Some(vars[2]),
            context_penalty: Some(vars[3]),
            question_penalty: Some(vars[4]),
        };
        let total = joint_loss(&mut g, &terms, 2.0).unwrap();
        let expected = 0.5 + 1.25 + 2.0 * 0.75 + 0.001 + 0.002;
        assert!((g.value(total).item() - expected).abs() < 1e-12);

        let zero = g.input(Tensor::scalar(0.0));
        let zeros = LossTerms {
            start: zero,
            end: zero,
            aux: Some(zero),
            context_penalty: Some(zero),
            question_penalty: None,
        };
        let total = joint_loss(&mut g, &zeros, 1.0).unwrap();
        assert_eq!(g.value(total).item(), 0.0);
    }

    #[test]
    fn relnet_requires_two_question_heads() {
        let config = ModelConfig {
            question_heads: 3,
            ..Default::default()
        };
        assert!(Model::new(config, 10, 0).is_err());
    }
}
