//! End-to-end model: embeddings, encoders, referent modeling, classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{referent_feature, AttentionMode, AttentionParams, AttentionTrace};
use crate::autodiff::{Gradients, NodeId, ParamId, ParamSet, Tape};
use crate::classifier::{sequence_loss, ClassifierParams};
use crate::data::Example;
use crate::encoder::{encode_context, encode_sentence, EncoderMode, GruCell};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderMode,
    pub attention: AttentionMode,
    /// Word embedding width E.
    pub embed_dim: usize,
    /// GRU hidden width d; token states are 2d.
    pub hidden_dim: usize,
    /// Width of the classifier's hidden layer.
    pub classifier_hidden: usize,
    /// Dropout rate on the fully connected layers at train time.
    pub dropout: f64,
    /// Uniform init half-range for weight matrices; biases start at zero.
    pub init_range: f64,
    /// Encode context with its own GRU weights instead of sharing the
    /// sentence encoder's.
    pub separate_context_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderMode::BiGru,
            attention: AttentionMode::Full,
            embed_dim: 300,
            hidden_dim: 150,
            classifier_hidden: 300,
            dropout: 0.2,
            init_range: 0.08,
            separate_context_encoder: false,
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub tag_count: usize,
    pub embedding: ParamId,
    pub fwd: GruCell,
    pub bwd: GruCell,
    pub ctx_fwd: Option<GruCell>,
    pub ctx_bwd: Option<GruCell>,
    pub attn: AttentionParams,
    pub cls: ClassifierParams,
}

impl Model {
    /// Register all parameters in a deterministic order.
    pub fn new<R: Rng>(
        config: ModelConfig,
        vocab_size: usize,
        tag_count: usize,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        assert!(config.embed_dim > 0 && config.hidden_dim > 0 && config.classifier_hidden > 0);
        assert!((0.0..1.0).contains(&config.dropout));
        let e = config.embed_dim;
        let d = config.hidden_dim;
        let embedding = params.add_uniform("embed", &[vocab_size, e], config.init_range, rng);
        let fwd = GruCell::new(params, "enc.fwd", e, d, config.init_range, rng);
        let bwd = GruCell::new(params, "enc.bwd", e, d, config.init_range, rng);
        let (ctx_fwd, ctx_bwd) = if config.separate_context_encoder {
            (
                Some(GruCell::new(params, "ctx.fwd", e, d, config.init_range, rng)),
                Some(GruCell::new(params, "ctx.bwd", e, d, config.init_range, rng)),
            )
        } else {
            (None, None)
        };
        let attn = AttentionParams::new(params, d, config.init_range, rng);
        let cls = ClassifierParams::new(
            params,
            4 * d,
            config.classifier_hidden,
            tag_count,
            config.init_range,
            rng,
        );
        Model { config, vocab_size, tag_count, embedding, fwd, bwd, ctx_fwd, ctx_bwd, attn, cls }
    }

    /// Run one example, recording ops for a later backward pass.
    /// `rng` only drives dropout masks and is untouched unless `train`.
    pub fn forward<'p, R: Rng>(
        &self,
        params: &'p ParamSet,
        example: &Example,
        train: bool,
        rng: &mut R,
    ) -> ModelOutput<'p> {
        assert!(!example.tokens.is_empty(), "empty sentence");
        let mut tape = Tape::new(params);

        let embed = |tape: &mut Tape, ids: &[u32]| -> Vec<NodeId> {
            ids.iter().map(|&id| tape.embed_row(self.embedding, id as usize)).collect()
        };

        let x_embeds = embed(&mut tape, &example.tokens);
        let enc = encode_sentence(&mut tape, &self.fwd, &self.bwd, &x_embeds, self.config.encoder);

        let ctx_embeds: Vec<Vec<NodeId>> =
            example.context.iter().map(|u| embed(&mut tape, u)).collect();
        let (cf, cb) = match (&self.ctx_fwd, &self.ctx_bwd) {
            (Some(f), Some(b)) => (f, b),
            _ => (&self.fwd, &self.bwd),
        };
        let memory = encode_context(&mut tape, cf, cb, &ctx_embeds);

        let mut token_logits = Vec::with_capacity(enc.len());
        let mut token_probs = Vec::with_capacity(enc.len());
        let mut traces = Vec::with_capacity(enc.len());
        for &h in &enc.states {
            let (feature, trace) =
                referent_feature(&mut tape, &self.attn, self.config.attention, h, &memory);
            let logits =
                self.cls.logits(&mut tape, h, feature, self.config.dropout, train, rng);
            token_probs.push(tape.softmax(logits));
            token_logits.push(logits);
            traces.push(trace);
        }
        let loss = sequence_loss(&mut tape, &token_logits, &example.tags);
        ModelOutput { tape, loss, token_probs, traces }
    }

    /// Argmax tag per token in eval mode, with the attention traces.
    pub fn predict(&self, params: &ParamSet, example: &Example) -> (Vec<usize>, Vec<AttentionTrace>) {
        // Dropout is off outside training, so this rng is never consumed.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(params, example, false, &mut rng);
        (out.predictions(), out.traces)
    }
}

use rand::SeedableRng;

/// One recorded forward pass over an example.
pub struct ModelOutput<'p> {
    tape: Tape<'p>,
    pub loss: NodeId,
    token_probs: Vec<NodeId>,
    pub traces: Vec<AttentionTrace>,
}

impl ModelOutput<'_> {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn probs(&self, token: usize) -> &[f64] {
        self.tape.value(self.token_probs[token]).data()
    }

    /// Argmax per token; ties break toward the lower tag id.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.token_probs.len())
            .map(|n| {
                let p = self.probs(n);
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn backward(&self) -> Gradients {
        self.tape.backward(self.loss).expect("loss is scalar")
    }
}
