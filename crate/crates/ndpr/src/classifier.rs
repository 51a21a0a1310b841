//! Two-layer softmax output head and the summed cross-entropy objective.

use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamSet, Tape};

#[derive(Clone, Debug)]
pub struct ClassifierParams {
    /// Hidden layer over [h_n; w_n].
    pub w1: ParamId,
    pub b1: ParamId,
    /// Output layer over the hidden activation.
    pub w2: ParamId,
    pub b2: ParamId,
    pub hidden: usize,
    pub tags: usize,
}

impl ClassifierParams {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        input_dim: usize,
        hidden: usize,
        tags: usize,
        init_range: f64,
        rng: &mut R,
    ) -> Self {
        assert!(hidden > 0 && tags > 0);
        ClassifierParams {
            w1: params.add_uniform("cls.w1", &[hidden, input_dim], init_range, rng),
            b1: params.add_zeros("cls.b1", &[hidden]),
            w2: params.add_uniform("cls.w2", &[tags, hidden], init_range, rng),
            b2: params.add_zeros("cls.b2", &[tags]),
            hidden,
            tags,
        }
    }

    /// Logits for one token: W2 tanh(W1 [h; feature] + b1) + b2. Dropout is
    /// applied to both fully connected layers' inputs only when training.
    pub fn logits<R: Rng>(
        &self,
        tape: &mut Tape,
        h: NodeId,
        feature: NodeId,
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> NodeId {
        let joint = tape.concat(h, feature);
        let joint = tape.dropout(joint, dropout, train, rng);
        let w1 = tape.param(self.w1);
        let b1 = tape.param(self.b1);
        let pre = tape.matmul(w1, joint);
        let pre = tape.add(pre, b1);
        let hidden = tape.tanh(pre);
        let hidden = tape.dropout(hidden, dropout, train, rng);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let out = tape.matmul(w2, hidden);
        tape.add(out, b2)
    }

    /// Per-tag probabilities for one token.
    pub fn predict<R: Rng>(
        &self,
        tape: &mut Tape,
        h: NodeId,
        feature: NodeId,
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> NodeId {
        let logits = self.logits(tape, h, feature, dropout, train, rng);
        tape.softmax(logits)
    }
}

/// Summed cross-entropy over all token positions: -sum_n log p(gold_n).
/// Every position contributes, including "None"-tagged tokens.
pub fn sequence_loss(tape: &mut Tape, token_logits: &[NodeId], gold: &[usize]) -> NodeId {
    assert_eq!(token_logits.len(), gold.len(), "one gold tag per token required");
    assert!(!gold.is_empty(), "sequence_loss: empty sentence");
    let mut total = None;
    for (&logits, &g) in token_logits.iter().zip(gold) {
        let nll = tape.softmax_cross_entropy(logits, g);
        total = Some(match total {
            None => nll,
            Some(t) => tape.add(t, nll),
        });
    }
    total.unwrap()
}
