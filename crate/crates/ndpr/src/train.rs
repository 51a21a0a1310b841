//! Training loop, checkpointing, and pretrained-embedding loading.
//!
//! One Adam step per sentence, shuffled each epoch with a seeded rng. After
//! every epoch the model is scored on a held-out dev split; the best-dev-F
//! weights (earliest epoch on ties) are what training returns.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, ParamSet, Tensor};
use crate::data::{
    make_examples, parse_embedding_file, Conversation, DataError, TagSet, Vocabulary,
};
use crate::eval::{evaluate, EvalReport};
use crate::model::{Model, ModelConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found} not supported (expected {CHECKPOINT_VERSION})")]
    BadVersion { found: u32 },
    #[error("checkpoint tag set hash {found:#x} does not match its tag names ({expected:#x})")]
    TagHashMismatch { found: u64, expected: u64 },
    #[error("checkpoint parameter {name:?} {problem}")]
    BadParam { name: String, problem: String },
    #[error("checkpoint has {found} parameters, model expects {expected}")]
    ParamCountMismatch { found: usize, expected: usize },
    #[error(
        "non-finite loss ({loss}) at epoch {epoch}, sentence {sentence} of conversation \
         {conversation:?}; try a lower learning rate or gradient clipping"
    )]
    NonFiniteLoss { epoch: usize, conversation: String, sentence: usize, loss: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Tokens seen fewer times than this in the training split map to UNK.
    pub min_count: usize,
    pub grad_clip: Option<f64>,
    /// Fraction of conversations (from the end) held out as the dev split.
    pub dev_fraction: f64,
    /// Optional pretrained embeddings: token followed by embed_dim reals per line.
    pub embedding_file: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 3e-4,
            epochs: 8,
            seed: 0,
            min_count: 1,
            grad_clip: None,
            dev_fraction: 1.0 / 6.0,
            embedding_file: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

pub struct Trained {
    pub model: Model,
    /// Weights from the best-dev-F epoch.
    pub params: ParamSet,
    pub vocab: Vocabulary,
    pub tags: TagSet,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub dev_report: Option<EvalReport>,
}

/// Deterministic split: the last `ceil(n * fraction)` conversations become dev.
pub fn split_dev(
    conversations: &[Conversation],
    fraction: f64,
) -> (&[Conversation], &[Conversation]) {
    assert!((0.0..1.0).contains(&fraction));
    let n = conversations.len();
    let dev = (((n as f64) * fraction).ceil() as usize).min(n.saturating_sub(1));
    conversations.split_at(n - dev)
}

pub fn train(
    cfg: &TrainConfig,
    conversations: &[Conversation],
    tags: &TagSet,
) -> Result<Trained, TrainError> {
    if conversations.is_empty() {
        return Err(DataError::EmptyCorpus.into());
    }
    let (train_convs, dev_convs) = split_dev(conversations, cfg.dev_fraction);
    let vocab = Vocabulary::build(train_convs, cfg.min_count);
    let train_examples = make_examples(train_convs, &vocab, tags);
    let dev_examples = make_examples(dev_convs, &vocab, tags);

    let mut params = ParamSet::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = Model::new(cfg.model.clone(), vocab.len(), tags.len(), &mut params, &mut init_rng);
    if let Some(path) = &cfg.embedding_file {
        load_pretrained_embeddings(&model, &mut params, &vocab, path)?;
    }

    // Independent streams so adding dropout draws never perturbs the shuffle.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5875_11e5));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xd409));
    let opt = Adam { lr: cfg.lr, clip_norm: cfg.grad_clip, ..Adam::default() };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        for &i in &order {
            let ex = &train_examples[i];
            let out = model.forward(&params, ex, true, &mut dropout_rng);
            let loss = out.loss_value();
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    conversation: ex.conversation_id.clone(),
                    sentence: ex.sentence_index,
                    loss,
                });
            }
            total_loss += loss;
            let grads = out.backward();
            drop(out);
            params.accumulate(&grads);
            opt.step(&mut params);
        }
        let scored = if dev_examples.is_empty() { &train_examples } else { &dev_examples };
        let report = evaluate(&model, &params, scored, tags);
        log::info!(
            "epoch {epoch}: train loss {total_loss:.4}, dev F {:.4} (P {:.4} R {:.4})",
            report.f1,
            report.precision,
            report.recall
        );
        history.push(EpochStats { epoch, train_loss: total_loss, dev_f1: report.f1 });
        let improved = match &best {
            None => true,
            Some((_, f, _)) => report.f1 > *f,
        };
        if improved {
            let snapshot = params.iter().map(|(_, p)| p.value.clone()).collect();
            best = Some((epoch, report.f1, snapshot));
        }
    }

    let (best_epoch, best_dev_f1) = match best {
        Some((epoch, f1, snapshot)) => {
            for (p, v) in params.iter_mut().zip(snapshot) {
                p.value = v;
            }
            (epoch, f1)
        }
        None => (0, 0.0),
    };
    let dev_report = if dev_examples.is_empty() {
        None
    } else {
        Some(evaluate(&model, &params, &dev_examples, tags))
    };
    Ok(Trained {
        model,
        params,
        vocab,
        tags: tags.clone(),
        history,
        best_epoch,
        best_dev_f1,
        dev_report,
    })
}

/// Overwrite embedding rows for vocabulary tokens present in the file.
pub fn load_pretrained_embeddings(
    model: &Model,
    params: &mut ParamSet,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<usize, TrainError> {
    let dim = model.config.embed_dim;
    let rows = parse_embedding_file(File::open(path)?, dim)?;
    let mut loaded = 0;
    for (token, values) in rows {
        let id = vocab.id(&token);
        if id == crate::data::UNK_ID && token != "<unk>" {
            continue;
        }
        let table = &mut params.get_mut(model.embedding).value;
        let start = id as usize * dim;
        table.data_mut()[start..start + dim].copy_from_slice(&values);
        loaded += 1;
    }
    log::info!("loaded {loaded} pretrained embedding rows from {}", path.display());
    Ok(loaded)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model state. JSON keeps every f64 bit-exact, so a checkpoint
/// round trip reproduces predictions exactly.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    /// Vocabulary tokens in id order.
    pub vocab: Vec<String>,
    pub tag_names: Vec<String>,
    pub tag_hash: u64,
    pub best_epoch: usize,
    pub dev_f1: f64,
    /// (name, value) in registration order.
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_trained(t: &Trained) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: t.model.config.clone(),
            vocab: t.vocab.tokens().to_vec(),
            tag_names: t.tags.names().to_vec(),
            tag_hash: t.tags.hash(),
            best_epoch: t.best_epoch,
            dev_f1: t.best_dev_f1,
            params: t.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, TrainError> {
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(TrainError::BadVersion { found: ckpt.version });
        }
        let tags = TagSet::from_names(ckpt.tag_names.clone());
        if tags.hash() != ckpt.tag_hash {
            return Err(TrainError::TagHashMismatch {
                found: ckpt.tag_hash,
                expected: tags.hash(),
            });
        }
        Ok(ckpt)
    }

    /// Rebuild the model and weights this checkpoint was saved from.
    pub fn restore(&self) -> Result<(Model, ParamSet, Vocabulary, TagSet), TrainError> {
        let tags = TagSet::from_names(self.tag_names.clone());
        let vocab = Vocabulary::from_tokens(self.vocab.clone());
        let mut params = ParamSet::new();
        // Weights are overwritten below; the init rng only fixes shapes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model =
            Model::new(self.config.clone(), vocab.len(), tags.len(), &mut params, &mut rng);
        if self.params.len() != params.len() {
            return Err(TrainError::ParamCountMismatch {
                found: self.params.len(),
                expected: params.len(),
            });
        }
        for (name, value) in &self.params {
            let id = params.lookup(name).ok_or_else(|| TrainError::BadParam {
                name: name.clone(),
                problem: "does not exist in this configuration".into(),
            })?;
            let p = params.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(TrainError::BadParam {
                    name: name.clone(),
                    problem: format!(
                        "has shape {:?}, expected {:?}",
                        value.shape(),
                        p.value.shape()
                    ),
                });
            }
            p.value = value.clone();
        }
        Ok((model, params, vocab, tags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                embed_dim: 8,
                hidden_dim: 5,
                classifier_hidden: 10,
                ..ModelConfig::default()
            },
            epochs: 2,
            seed,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus() -> (Vec<Conversation>, TagSet) {
        generate(&SynthConfig {
            conversations: 12,
            utterances_per_conversation: 5,
            entities: 4,
            pronoun_types: 3,
            topics: 8,
            ..SynthConfig::default()
        })
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let (convs, tags) = tiny_corpus();
        let run = |seed| {
            let t = train(&tiny_config(seed), &convs, &tags).unwrap();
            let losses: Vec<u64> =
                t.history.iter().map(|e| e.train_loss.to_bits()).collect();
            let w: Vec<u64> = t
                .params
                .value(t.model.attn.w_update)
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect();
            (losses, w)
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3).0, run(4).0);
    }

    #[test]
    fn loss_decreases_over_epochs_on_a_tiny_corpus() {
        let (convs, tags) = tiny_corpus();
        let cfg = TrainConfig { epochs: 4, ..tiny_config(1) };
        let t = train(&cfg, &convs, &tags).unwrap();
        assert_eq!(t.history.len(), 4);
        assert!(t.history.last().unwrap().train_loss < t.history[0].train_loss);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let tags = TagSet::default_conversational();
        assert!(matches!(
            train(&tiny_config(0), &[], &tags),
            Err(TrainError::Data(DataError::EmptyCorpus))
        ));
    }

    #[test]
    fn dev_split_takes_trailing_conversations() {
        let (convs, _) = tiny_corpus();
        let (tr, dev) = split_dev(&convs, 1.0 / 6.0);
        assert_eq!(tr.len(), 10);
        assert_eq!(dev.len(), 2);
        assert_eq!(dev[0].id, convs[10].id);
        let one = &convs[..1];
        let (tr, dev) = split_dev(one, 0.5);
        assert_eq!((tr.len(), dev.len()), (1, 0));
    }

    #[test]
    fn checkpoint_round_trip_reproduces_predictions_exactly() {
        let (convs, tags) = tiny_corpus();
        let t = train(&tiny_config(5), &convs, &tags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_trained(&t).save(&path).unwrap();

        let (model, params, vocab, tags2) = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(tags2, tags);
        let examples = make_examples(&convs, &vocab, &tags);
        for ex in examples.iter().take(10) {
            assert_eq!(model.predict(&params, ex).0, t.model.predict(&t.params, ex).0);
        }
        // Bit-exact weights, not just equal predictions.
        for ((_, a), b) in t.params.iter().zip(params.iter().map(|(_, p)| p)) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn checkpoint_with_wrong_hash_is_rejected() {
        let (convs, tags) = tiny_corpus();
        let t = train(&tiny_config(6), &convs, &tags).unwrap();
        let mut ckpt = Checkpoint::from_trained(&t);
        ckpt.tag_hash ^= 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::TagHashMismatch { .. })));
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let (convs, tags) = tiny_corpus();
        let t = train(&tiny_config(7), &convs, &tags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        Checkpoint::from_trained(&t).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::Json(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (convs, tags) = tiny_corpus();
        let t = train(&tiny_config(8), &convs, &tags).unwrap();
        let mut ckpt = Checkpoint::from_trained(&t);
        ckpt.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::BadVersion { found: 99 })));
    }

    #[test]
    fn pretrained_embeddings_overwrite_matching_rows() {
        let (convs, tags) = tiny_corpus();
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("emb.txt");
        // T0 is guaranteed in-vocab for the topic pool; "zzz" is not.
        let dim = 8;
        let mut text = String::from("T0");
        for i in 0..dim {
            text.push_str(&format!(" {}", i as f64 / 10.0));
        }
        text.push_str("\nzzz");
        for _ in 0..dim {
            text.push_str(" 9.0");
        }
        text.push('\n');
        std::fs::write(&emb, text).unwrap();

        let cfg = TrainConfig {
            embedding_file: Some(emb),
            epochs: 0,
            ..tiny_config(9)
        };
        let t = train(&cfg, &convs, &tags).unwrap();
        let vid = t.vocab.id("T0") as usize;
        assert_ne!(t.vocab.id("T0"), crate::data::UNK_ID);
        let table = t.params.value(t.model.embedding);
        let expected: Vec<f64> = (0..dim).map(|i| i as f64 / 10.0).collect();
        assert_eq!(table.row(vid), &expected[..]);
    }
}
