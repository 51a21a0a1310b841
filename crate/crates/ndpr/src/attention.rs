//! Referent modeling: sentence-level attention over context utterances,
//! a drop-state update, word-level attention within each utterance, and the
//! final referent representation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape, Tensor};
use crate::encoder::ContextMemory;

/// Which attention pathways feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Sentence attention, state update, word attention (the full pipeline).
    Full,
    /// Sentence attention only; the classifier sees the raw utterance summary.
    Sentence,
    /// Word attention only: the drop state queries words directly and
    /// utterances are mixed uniformly.
    Word,
    /// No context at all; the classifier sees a zero context feature.
    None,
}

impl std::str::FromStr for AttentionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(AttentionMode::Full),
            "sentence" => Ok(AttentionMode::Sentence),
            "word" => Ok(AttentionMode::Word),
            "none" => Ok(AttentionMode::None),
            other => Err(format!(
                "unknown attention mode {other:?} (expected full, sentence, word or none)"
            )),
        }
    }
}

/// Trainable weights of the referent modeling layer.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    /// 2d x 4d update applied to [h_n; s_n].
    pub w_update: ParamId,
    pub b_update: ParamId,
    /// Length-2d relevance weights applied to hs_n ⊙ cw_{i,j}.
    pub w_rel: ParamId,
    pub b_rel: ParamId,
}

impl AttentionParams {
    pub fn new<R: rand::Rng>(
        params: &mut ParamSet,
        hidden_dim: usize,
        init_range: f64,
        rng: &mut R,
    ) -> Self {
        let two_d = 2 * hidden_dim;
        AttentionParams {
            w_update: params.add_uniform("attn.w_update", &[two_d, 2 * two_d], init_range, rng),
            b_update: params.add_zeros("attn.b_update", &[two_d]),
            w_rel: params.add_uniform("attn.w_rel", &[two_d], init_range, rng),
            b_rel: params.add_zeros("attn.b_rel", &[1]),
        }
    }
}

/// Attention internals for one token, recorded for inspection.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Raw utterance relevance scores rs_{n,i} (empty when unused or m = 0).
    pub sentence_scores: Vec<f64>,
    /// Distribution over context utterances actually mixed into the feature.
    /// Uniform in word-only mode.
    pub sentence_weights: Vec<f64>,
    /// Raw word relevance scores rw_{n,i,j} per utterance.
    pub word_scores: Vec<Vec<f64>>,
    /// Per-utterance distributions aw_{n,i,.} (empty in sentence-only mode).
    pub word_weights: Vec<Vec<f64>>,
}

/// rs_{n,i} = h_n . cs_i, as = softmax(rs), s_n = sum_i as_i cs_i.
/// With an empty memory this degenerates to no distribution and a zero s_n.
pub fn sentence_attention(
    tape: &mut Tape,
    h: NodeId,
    memory: &ContextMemory,
) -> (Option<(NodeId, NodeId)>, NodeId) {
    match memory.utterance_matrix {
        None => {
            let dim = tape.value(h).len();
            (None, tape.zeros(&[dim]))
        }
        Some(cs) => {
            let scores = tape.matmul(cs, h);
            let dist = tape.softmax(scores);
            let summary = tape.weighted_sum(dist, cs);
            (Some((scores, dist)), summary)
        }
    }
}

/// hs_n = W [h_n; s_n] + b.
pub fn update_dp_state(
    tape: &mut Tape,
    params: &AttentionParams,
    h: NodeId,
    s: NodeId,
) -> NodeId {
    let joint = tape.concat(h, s);
    let w = tape.param(params.w_update);
    let b = tape.param(params.b_update);
    let wh = tape.matmul(w, joint);
    tape.add(wh, b)
}

/// Per-utterance word attention. rw_{n,i,j} = w_rel . (query ⊙ cw_{i,j}) + b_rel,
/// normalized within each utterance; tw_{n,i} = sum_j aw_{n,i,j} cw_{i,j}.
///
/// Returns (scores, distributions, summaries), one entry per utterance.
pub fn word_attention(
    tape: &mut Tape,
    params: &AttentionParams,
    query: NodeId,
    memory: &ContextMemory,
) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
    let w_rel = tape.param(params.w_rel);
    let b_rel = tape.param(params.b_rel);
    // w_rel . (q ⊙ cw) == cw . (w_rel ⊙ q), so one keyed query serves all words.
    let key = tape.mul(w_rel, query);
    let mut scores = Vec::with_capacity(memory.len());
    let mut dists = Vec::with_capacity(memory.len());
    let mut summaries = Vec::with_capacity(memory.len());
    for &cw in &memory.word_matrices {
        let raw = tape.matmul(cw, key);
        let rw = tape.add_scalar(raw, b_rel);
        let aw = tape.softmax(rw);
        let tw = tape.weighted_sum(aw, cw);
        scores.push(rw);
        dists.push(aw);
        summaries.push(tw);
    }
    (scores, dists, summaries)
}

/// w_n = sum_i weights_i tw_{n,i}.
pub fn referent_representation(
    tape: &mut Tape,
    weights: NodeId,
    utterance_summaries: &[NodeId],
) -> NodeId {
    let stacked = tape.stack_rows(utterance_summaries);
    tape.weighted_sum(weights, stacked)
}

/// Context feature for the classifier under the selected attention mode,
/// plus the recorded trace. With m = 0 the feature is the zero vector.
pub fn referent_feature(
    tape: &mut Tape,
    params: &AttentionParams,
    mode: AttentionMode,
    h: NodeId,
    memory: &ContextMemory,
) -> (NodeId, AttentionTrace) {
    let dim = tape.value(h).len();
    let mut trace = AttentionTrace::default();
    if mode == AttentionMode::None || memory.is_empty() {
        return (tape.zeros(&[dim]), trace);
    }
    let m = memory.len();
    match mode {
        AttentionMode::Full => {
            let (sent, s) = sentence_attention(tape, h, memory);
            let (scores, dist) = sent.expect("nonempty memory");
            let hs = update_dp_state(tape, params, h, s);
            let (rw, aw, tw) = word_attention(tape, params, hs, memory);
            let w = referent_representation(tape, dist, &tw);
            trace.sentence_scores = tape.value(scores).data().to_vec();
            trace.sentence_weights = tape.value(dist).data().to_vec();
            record_word_trace(tape, &mut trace, &rw, &aw);
            (w, trace)
        }
        AttentionMode::Sentence => {
            let (sent, s) = sentence_attention(tape, h, memory);
            let (scores, dist) = sent.expect("nonempty memory");
            trace.sentence_scores = tape.value(scores).data().to_vec();
            trace.sentence_weights = tape.value(dist).data().to_vec();
            (s, trace)
        }
        AttentionMode::Word => {
            let (rw, aw, tw) = word_attention(tape, params, h, memory);
            let uniform = tape.constant(Tensor::vector(vec![1.0 / m as f64; m]));
            let w = referent_representation(tape, uniform, &tw);
            trace.sentence_weights = vec![1.0 / m as f64; m];
            record_word_trace(tape, &mut trace, &rw, &aw);
            (w, trace)
        }
        AttentionMode::None => unreachable!(),
    }
}

fn record_word_trace(tape: &Tape, trace: &mut AttentionTrace, rw: &[NodeId], aw: &[NodeId]) {
    trace.word_scores = rw.iter().map(|&n| tape.value(n).data().to_vec()).collect();
    trace.word_weights = aw.iter().map(|&n| tape.value(n).data().to_vec()).collect();
}
