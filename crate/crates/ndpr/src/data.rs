//! Corpus ingestion, tag inventory, vocabulary, and example assembly.
//!
//! Corpora are JSON-lines, one conversation per line:
//!
//! ```text
//! {"id": "conv-1", "utterances": [{"tokens": ["a", "b"], "tags": ["None", "他"]}]}
//! ```
//!
//! A tag on token `n` means a pronoun of that type was dropped immediately
//! before token `n`; `"None"` means no pronoun was dropped there. A pronoun
//! dropped after the last token of an utterance cannot be represented in
//! this scheme.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed conversation: {source}")]
    Malformed { line: usize, source: serde_json::Error },
    #[error("conversation {conv:?}, utterance {utterance}: {tokens} tokens but {tags} tags")]
    LengthMismatch { conv: String, utterance: usize, tokens: usize, tags: usize },
    #[error("unknown tag {tag:?} in conversation {conv:?} and tag set has no \"other\" tag")]
    UnknownTag { conv: String, tag: String },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("embedding file line {line}: {msg}")]
    BadEmbedding { line: usize, msg: String },
}

/// Integer id of a tag within a [`TagSet`]. Id 0 is always "None".
pub type TagId = usize;

pub const NONE_TAG: &str = "None";
pub const OTHER_TAG: &str = "other";

/// Closed label inventory: "None" at index 0 plus pronoun-type tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    names: Vec<String>,
}

impl TagSet {
    /// The default 17-tag inventory: None, 10 concrete Chinese pronouns,
    /// 5 abstract types, and a catch-all "other".
    pub fn default_conversational() -> Self {
        let names = [
            NONE_TAG, "我", "我们", "你", "你们", "他", "她", "它", "他们", "她们", "它们",
            "event", "previous utterance", "generic", "existential", "pleonastic", OTHER_TAG,
        ];
        TagSet { names: names.iter().map(|s| s.to_string()).collect() }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        assert!(!names.is_empty() && names[0] == NONE_TAG, "tag set must start with \"None\"");
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            assert!(seen.insert(n.clone()), "duplicate tag name {n:?}");
        }
        TagSet { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id_of(&self, name: &str) -> Option<TagId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: TagId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Stable content hash used to validate checkpoints against corpora.
    pub fn hash(&self) -> u64 {
        // djb2 over tag names with a separator.
        let mut h: u64 = 5381;
        for name in &self.names {
            for b in name.as_bytes() {
                h = h.wrapping_mul(33) ^ u64::from(*b);
            }
            h = h.wrapping_mul(33) ^ 0x1f;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub tags: Vec<TagId>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Number of non-None tags.
    pub fn dropped_pronoun_count(&self) -> usize {
        self.utterances.iter().flat_map(|u| &u.tags).filter(|&&t| t != 0).count()
    }
}

#[derive(Serialize, Deserialize)]
struct RawUtterance {
    tokens: Vec<String>,
    tags: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawConversation {
    id: String,
    utterances: Vec<RawUtterance>,
}

/// Parse a JSON-lines corpus. Empty utterances are dropped with a warning;
/// tags outside `tags` map to "other" with a warning. Token/tag length
/// mismatches are errors.
pub fn read_corpus<R: Read>(reader: R, tags: &TagSet) -> Result<Vec<Conversation>, DataError> {
    let other = tags.id_of(OTHER_TAG);
    let mut conversations = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawConversation = serde_json::from_str(&line)
            .map_err(|source| DataError::Malformed { line: lineno + 1, source })?;
        let mut utterances = Vec::new();
        for (ui, u) in raw.utterances.into_iter().enumerate() {
            if u.tokens.is_empty() {
                log::warn!("conversation {:?}: dropping empty utterance {ui}", raw.id);
                continue;
            }
            if u.tokens.len() != u.tags.len() {
                return Err(DataError::LengthMismatch {
                    conv: raw.id,
                    utterance: ui,
                    tokens: u.tokens.len(),
                    tags: u.tags.len(),
                });
            }
            let mut tag_ids = Vec::with_capacity(u.tags.len());
            for t in &u.tags {
                match tags.id_of(t) {
                    Some(id) => tag_ids.push(id),
                    None => match other {
                        Some(id) => {
                            log::warn!(
                                "conversation {:?}: unknown tag {t:?} mapped to \"other\"",
                                raw.id
                            );
                            tag_ids.push(id);
                        }
                        None => {
                            return Err(DataError::UnknownTag { conv: raw.id, tag: t.clone() })
                        }
                    },
                }
            }
            utterances.push(Utterance { tokens: u.tokens, tags: tag_ids });
        }
        conversations.push(Conversation { id: raw.id, utterances });
    }
    Ok(conversations)
}

pub fn load_corpus(path: &Path, tags: &TagSet) -> Result<Vec<Conversation>, DataError> {
    read_corpus(File::open(path)?, tags)
}

pub fn write_corpus<W: Write>(
    writer: W,
    conversations: &[Conversation],
    tags: &TagSet,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(writer);
    for c in conversations {
        let raw = RawConversation {
            id: c.id.clone(),
            utterances: c
                .utterances
                .iter()
                .map(|u| RawUtterance {
                    tokens: u.tokens.clone(),
                    tags: u.tags.iter().map(|&t| tags.name(t).to_string()).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(
    path: &Path,
    conversations: &[Conversation],
    tags: &TagSet,
) -> Result<(), DataError> {
    write_corpus(File::create(path)?, conversations, tags)
}

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Token ids built from the training split only. Id 0 is PAD, id 1 is UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Count tokens over the training conversations; tokens seen at least
    /// `min_count` times get ids, everything else maps to UNK at lookup.
    pub fn build(train: &[Conversation], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for c in train {
            for u in &c.utterances {
                for t in &u.tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|(_, n)| *n >= min_count.max(1)).collect();
        // Deterministic id assignment: by count descending, then token.
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Vocabulary::from_tokens(tokens)
    }

    /// Rebuild from the id-ordered token list (checkpoint load path).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        assert!(tokens.len() >= 2 && tokens[0] == "<pad>" && tokens[1] == "<unk>");
        let index =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Restore the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index =
            self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }
}

/// Number of utterances of context taken before and after the target sentence.
pub const CONTEXT_BEFORE: usize = 5;
pub const CONTEXT_AFTER: usize = 2;

/// One training/evaluation unit: a target sentence with its context window.
#[derive(Clone, Debug)]
pub struct Example {
    pub conversation_id: String,
    pub sentence_index: usize,
    pub tokens: Vec<u32>,
    pub tags: Vec<TagId>,
    /// Up to 5 preceding and 2 following utterances, in conversation order,
    /// excluding the target sentence. Shrinks at conversation boundaries.
    pub context: Vec<Vec<u32>>,
}

/// Context window indices for sentence `t` in a conversation of length `len`:
/// `[max(0, t-5), t)` followed by `(t, min(len, t+3))`.
pub fn context_window(t: usize, len: usize) -> Vec<usize> {
    let start = t.saturating_sub(CONTEXT_BEFORE);
    let end = (t + 1 + CONTEXT_AFTER).min(len);
    (start..t).chain(t + 1..end).collect()
}

pub fn make_examples(
    conversations: &[Conversation],
    vocab: &Vocabulary,
    _tags: &TagSet,
) -> Vec<Example> {
    let mut examples = Vec::new();
    for c in conversations {
        let encode =
            |u: &Utterance| u.tokens.iter().map(|t| vocab.id(t)).collect::<Vec<u32>>();
        for (t, u) in c.utterances.iter().enumerate() {
            let context = context_window(t, c.utterances.len())
                .into_iter()
                .map(|i| encode(&c.utterances[i]))
                .collect();
            examples.push(Example {
                conversation_id: c.id.clone(),
                sentence_index: t,
                tokens: encode(u),
                tags: u.tags.clone(),
                context,
            });
        }
    }
    examples
}

/// Parse a pretrained embedding file: one token per line followed by
/// whitespace-separated reals. Returns rows keyed by token.
pub fn parse_embedding_file<R: Read>(
    reader: R,
    dim: usize,
) -> Result<Vec<(String, Vec<f64>)>, DataError> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| DataError::BadEmbedding { line: lineno + 1, msg: "empty line".into() })?
            .to_string();
        let values: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let values = values.map_err(|e| DataError::BadEmbedding {
            line: lineno + 1,
            msg: format!("bad number: {e}"),
        })?;
        if values.len() != dim {
            return Err(DataError::BadEmbedding {
                line: lineno + 1,
                msg: format!("expected {dim} values, got {}", values.len()),
            });
        }
        rows.push((token, values));
    }
    Ok(rows)
}
