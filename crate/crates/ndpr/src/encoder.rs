//! GRU cells composed into bidirectional sentence encoders and the
//! context memories used by the attention layers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};

/// How the per-token state `h_n` is assembled from the two directions.
///
/// * `BiGru`: `h_n = [bwd_n, fwd_n]` — the token after the candidate drop
///   site seen from both directions.
/// * `PcBiGru`: `h_n = [bwd_n, fwd_{n-1}]` — the last word before the drop
///   site (forward) and the first word after it (backward). `fwd_0` is the
///   zero vector at the start of the sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    BiGru,
    PcBiGru,
}

impl std::str::FromStr for EncoderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bigru" => Ok(EncoderMode::BiGru),
            "pc-bigru" => Ok(EncoderMode::PcBiGru),
            other => Err(format!("unknown encoder mode {other:?} (expected bigru or pc-bigru)")),
        }
    }
}

/// One GRU cell: update gate z, reset gate r, candidate state.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruCell {
    pub fn new<R: rand::Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        init_range: f64,
        rng: &mut R,
    ) -> Self {
        let mat = |params: &mut ParamSet, rng: &mut R, name: &str, rows, cols| {
            params.add_uniform(&format!("{prefix}.{name}"), &[rows, cols], init_range, rng)
        };
        GruCell {
            input_dim,
            hidden_dim,
            w_z: mat(params, rng, "w_z", hidden_dim, input_dim),
            u_z: mat(params, rng, "u_z", hidden_dim, hidden_dim),
            b_z: params.add_zeros(&format!("{prefix}.b_z"), &[hidden_dim]),
            w_r: mat(params, rng, "w_r", hidden_dim, input_dim),
            u_r: mat(params, rng, "u_r", hidden_dim, hidden_dim),
            b_r: params.add_zeros(&format!("{prefix}.b_r"), &[hidden_dim]),
            w_h: mat(params, rng, "w_h", hidden_dim, input_dim),
            u_h: mat(params, rng, "u_h", hidden_dim, hidden_dim),
            b_h: params.add_zeros(&format!("{prefix}.b_h"), &[hidden_dim]),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h]
    }

    /// One step: h_t = (1-z) ⊙ h_prev + z ⊙ tanh(W_h x + U_h (r ⊙ h_prev) + b_h).
    pub fn step(&self, tape: &mut Tape, x: NodeId, h_prev: NodeId) -> NodeId {
        let gate = |tape: &mut Tape, w, u, b, x, h| {
            let wx = {
                let wn = tape.param(w);
                tape.matmul(wn, x)
            };
            let uh = {
                let un = tape.param(u);
                tape.matmul(un, h)
            };
            let s = tape.add(wx, uh);
            let bn = tape.param(b);
            tape.add(s, bn)
        };
        let z_pre = gate(tape, self.w_z, self.u_z, self.b_z, x, h_prev);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.w_r, self.u_r, self.b_r, x, h_prev);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev);
        let cand_pre = gate(tape, self.w_h, self.u_h, self.b_h, x, rh);
        let cand = tape.tanh(cand_pre);
        let one_minus_z = tape.scalar_affine(z, -1.0, 1.0);
        let keep = tape.mul(one_minus_z, h_prev);
        let update = tape.mul(z, cand);
        tape.add(keep, update)
    }
}

/// Per-token states of one encoded sentence.
pub struct EncodedSentence {
    pub mode: EncoderMode,
    /// Forward states, fwd[n] after consuming token n.
    pub fwd: Vec<NodeId>,
    /// Backward states, bwd[n] after consuming tokens s-1..=n.
    pub bwd: Vec<NodeId>,
    /// Combined per-token states h_n (2d), per the encoder mode.
    pub states: Vec<NodeId>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Run both directions over an embedded sentence and combine per token.
pub fn encode_sentence(
    tape: &mut Tape,
    fwd_cell: &GruCell,
    bwd_cell: &GruCell,
    embeds: &[NodeId],
    mode: EncoderMode,
) -> EncodedSentence {
    assert!(!embeds.is_empty(), "encode_sentence: empty sentence");
    let n = embeds.len();
    let d = fwd_cell.hidden_dim;

    let mut fwd = Vec::with_capacity(n);
    let mut h = tape.zeros(&[d]);
    for &x in embeds {
        h = fwd_cell.step(tape, x, h);
        fwd.push(h);
    }

    let mut bwd = Vec::with_capacity(n);
    let mut h = tape.zeros(&[d]);
    for i in (0..n).rev() {
        h = bwd_cell.step(tape, embeds[i], h);
        bwd.push(h);
    }
    bwd.reverse();

    let states = match mode {
        EncoderMode::BiGru => (0..n).map(|i| tape.concat(bwd[i], fwd[i])).collect(),
        EncoderMode::PcBiGru => {
            let zero = tape.zeros(&[d]);
            (0..n)
                .map(|i| {
                    let prev_fwd = if i == 0 { zero } else { fwd[i - 1] };
                    tape.concat(bwd[i], prev_fwd)
                })
                .collect()
        }
    };
    EncodedSentence { mode, fwd, bwd, states }
}

/// Sentence- and word-level memories over the context utterances.
pub struct ContextMemory {
    /// cs_i: final forward/backward states of utterance i, concatenated (2d).
    pub utterance_states: Vec<NodeId>,
    /// cw_{i,j}: per-word combined states of utterance i (BiGru combination).
    pub word_states: Vec<Vec<NodeId>>,
    /// The cs_i stacked as rows of an m x 2d matrix; None when m = 0.
    pub utterance_matrix: Option<NodeId>,
    /// Per-utterance k_i x 2d matrices of word states.
    pub word_matrices: Vec<NodeId>,
}

impl ContextMemory {
    pub fn len(&self) -> usize {
        self.utterance_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterance_states.is_empty()
    }
}

/// Encode each context utterance with the BiGru combination rule. An empty
/// context yields an empty memory (the degenerate no-context path).
pub fn encode_context(
    tape: &mut Tape,
    fwd_cell: &GruCell,
    bwd_cell: &GruCell,
    utterances: &[Vec<NodeId>],
) -> ContextMemory {
    let mut utterance_states = Vec::with_capacity(utterances.len());
    let mut word_states = Vec::with_capacity(utterances.len());
    let mut word_matrices = Vec::with_capacity(utterances.len());
    for embeds in utterances {
        let enc = encode_sentence(tape, fwd_cell, bwd_cell, embeds, EncoderMode::BiGru);
        let last = enc.fwd.len() - 1;
        let cs = tape.concat(enc.bwd[0], enc.fwd[last]);
        utterance_states.push(cs);
        word_matrices.push(tape.stack_rows(&enc.states));
        word_states.push(enc.states);
    }
    let utterance_matrix = if utterance_states.is_empty() {
        None
    } else {
        Some(tape.stack_rows(&utterance_states))
    };
    ContextMemory { utterance_states, word_states, utterance_matrix, word_matrices }
}
