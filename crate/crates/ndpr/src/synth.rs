//! Synthetic pro-drop conversation generator.
//!
//! Each conversation is a sequence of utterances over a private set of
//! topics. An *intro* utterance announces a topic together with an entity:
//!
//! ```text
//! T7 E3 V2 F5 F1        (all tags "None")
//! ```
//!
//! A *drop* utterance picks the topic of an earlier intro and continues it
//! with the subject pronoun dropped; the tag on the verb names the pronoun
//! for that intro's entity:
//!
//! ```text
//! T7 X4 F0              (tags: None, 她, None)
//! ```
//!
//! The topic-to-entity pairing is sampled per conversation, so recovering
//! the pronoun type requires reading the context window; the target
//! sentence alone only reveals *where* a pronoun was dropped.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Conversation, TagSet, Utterance, CONTEXT_BEFORE};

/// Concrete pronouns an entity can map to, in a fixed order.
pub const PRONOUNS: [&str; 10] =
    ["我", "我们", "你", "你们", "他", "她", "它", "他们", "她们", "它们"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub conversations: usize,
    pub utterances_per_conversation: usize,
    /// Entity inventory size; entity k always drops as PRONOUNS[k % pronoun_types].
    pub entities: usize,
    /// How many distinct pronoun tags appear (1..=10).
    pub pronoun_types: usize,
    /// Global topic pool; each conversation samples its own distinct topics.
    pub topics: usize,
    pub verbs: usize,
    pub fillers: usize,
    /// Chance that an utterance continues an earlier topic with a dropped
    /// pronoun instead of introducing a new one.
    pub drop_prob: f64,
    /// Referent distance range in utterances (inclusive).
    pub min_distance: usize,
    pub max_distance: usize,
    /// Fraction of drops whose referent lies beyond the 5-utterance
    /// lookbehind, making them unrecoverable from the context window.
    pub out_of_window_fraction: f64,
    /// Chance an intro reuses an entity already mentioned in the conversation.
    pub shared_entity_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            conversations: 100,
            utterances_per_conversation: 8,
            entities: 12,
            pronoun_types: 6,
            topics: 50,
            verbs: 6,
            fillers: 10,
            drop_prob: 0.6,
            min_distance: 1,
            max_distance: 4,
            out_of_window_fraction: 0.0,
            shared_entity_rate: 0.2,
        }
    }
}

/// Pronoun tag name for an entity index.
pub fn entity_pronoun(entity: usize, pronoun_types: usize) -> &'static str {
    PRONOUNS[entity % pronoun_types]
}

/// What each generated utterance did, for oracle checks.
#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Intro,
    Drop { referent: usize },
}

pub fn generate(cfg: &SynthConfig) -> (Vec<Conversation>, TagSet) {
    assert!(cfg.conversations > 0 && cfg.utterances_per_conversation > 0);
    assert!(cfg.entities > 0 && cfg.verbs > 0 && cfg.fillers > 0);
    assert!((1..=PRONOUNS.len()).contains(&cfg.pronoun_types));
    assert!(
        cfg.topics >= cfg.utterances_per_conversation,
        "need at least one distinct topic per utterance"
    );
    assert!(cfg.min_distance >= 1 && cfg.min_distance <= cfg.max_distance);
    assert!(cfg.max_distance <= CONTEXT_BEFORE, "in-window referents only reach back 5 utterances");
    assert!((0.0..=1.0).contains(&cfg.drop_prob));
    assert!((0.0..=1.0).contains(&cfg.out_of_window_fraction));
    assert!((0.0..=1.0).contains(&cfg.shared_entity_rate));

    let tags = TagSet::default_conversational();
    let none = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut conversations = Vec::with_capacity(cfg.conversations);
    for ci in 0..cfg.conversations {
        let n = cfg.utterances_per_conversation;
        let mut topic_pool: Vec<usize> = (0..cfg.topics).collect();
        topic_pool.shuffle(&mut rng);
        let fresh_topics = &topic_pool[..n];

        let mut kinds: Vec<Kind> = Vec::with_capacity(n);
        let mut topics: Vec<usize> = Vec::with_capacity(n);
        let mut entities: Vec<usize> = Vec::with_capacity(n);
        let mut utterances = Vec::with_capacity(n);
        for i in 0..n {
            let mut referent = None;
            if i > 0 && rng.gen_bool(cfg.drop_prob) {
                let far = cfg.out_of_window_fraction > 0.0
                    && rng.gen_bool(cfg.out_of_window_fraction)
                    && i > CONTEXT_BEFORE;
                let delta = if far {
                    rng.gen_range(CONTEXT_BEFORE + 1..=i)
                } else {
                    rng.gen_range(cfg.min_distance..=cfg.max_distance)
                };
                if delta <= i && kinds[i - delta] == Kind::Intro {
                    referent = Some(i - delta);
                }
            }
            match referent {
                Some(j) => {
                    kinds.push(Kind::Drop { referent: j });
                    topics.push(topics[j]);
                    entities.push(entities[j]);
                    let tokens = vec![
                        format!("T{}", topics[j]),
                        format!("X{}", rng.gen_range(0..cfg.verbs)),
                        format!("F{}", rng.gen_range(0..cfg.fillers)),
                    ];
                    let pron = entity_pronoun(entities[j], cfg.pronoun_types);
                    let tag = tags.id_of(pron).expect("pronoun tag in default set");
                    utterances.push(Utterance { tokens, tags: vec![none, tag, none] });
                }
                None => {
                    let entity = if !entities.is_empty() && rng.gen_bool(cfg.shared_entity_rate)
                    {
                        entities[rng.gen_range(0..entities.len())]
                    } else {
                        rng.gen_range(0..cfg.entities)
                    };
                    kinds.push(Kind::Intro);
                    topics.push(fresh_topics[i]);
                    entities.push(entity);
                    let mut tokens = vec![
                        format!("T{}", fresh_topics[i]),
                        format!("E{entity}"),
                        format!("V{}", rng.gen_range(0..cfg.verbs)),
                    ];
                    for _ in 0..rng.gen_range(0..=2) {
                        tokens.push(format!("F{}", rng.gen_range(0..cfg.fillers)));
                    }
                    let len = tokens.len();
                    utterances.push(Utterance { tokens, tags: vec![none; len] });
                }
            }
        }
        conversations.push(Conversation { id: format!("synth-{ci}"), utterances });
    }
    (conversations, tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_corpus;

    #[test]
    fn zero_drop_probability_yields_all_none_tags() {
        let cfg = SynthConfig { drop_prob: 0.0, conversations: 10, ..SynthConfig::default() };
        let (convs, _) = generate(&cfg);
        for c in &convs {
            assert_eq!(c.dropped_pronoun_count(), 0);
        }
    }

    #[test]
    fn distance_one_referents_sit_in_the_previous_utterance() {
        let cfg = SynthConfig {
            min_distance: 1,
            max_distance: 1,
            drop_prob: 1.0,
            conversations: 20,
            ..SynthConfig::default()
        };
        let (convs, tags) = generate(&cfg);
        let mut drops = 0;
        for c in &convs {
            for (i, u) in c.utterances.iter().enumerate() {
                if u.tags.iter().all(|&t| t == 0) {
                    continue;
                }
                drops += 1;
                // Topic token must match the previous utterance's intro topic,
                // and the tag must be that intro's entity pronoun.
                let prev = &c.utterances[i - 1];
                assert_eq!(u.tokens[0], prev.tokens[0], "topic continues utterance i-1");
                let entity: usize = prev.tokens[1][1..].parse().unwrap();
                let expected = tags.id_of(entity_pronoun(entity, cfg.pronoun_types)).unwrap();
                assert_eq!(u.tags[1], expected);
            }
        }
        assert!(drops > 50, "drop_prob 1.0 should drop nearly every non-initial utterance");
    }

    #[test]
    fn referent_topic_is_unique_within_the_lookbehind_window() {
        let cfg = SynthConfig { conversations: 50, drop_prob: 0.8, ..SynthConfig::default() };
        let (convs, _) = generate(&cfg);
        for c in &convs {
            for (i, u) in c.utterances.iter().enumerate() {
                if u.tags.iter().all(|&t| t == 0) {
                    continue;
                }
                let lo = i.saturating_sub(CONTEXT_BEFORE);
                let intros_with_topic = (lo..i)
                    .filter(|&j| {
                        c.utterances[j].tokens[0] == u.tokens[0]
                            && c.utterances[j].tokens[1].starts_with('E')
                    })
                    .count();
                assert_eq!(intros_with_topic, 1, "exactly one in-window intro per drop topic");
            }
        }
    }

    #[test]
    fn generation_is_byte_identical_for_a_fixed_seed() {
        let cfg = SynthConfig { conversations: 15, ..SynthConfig::default() };
        let render = || {
            let (convs, tags) = generate(&cfg);
            let mut buf = Vec::new();
            crate::data::write_corpus(&mut buf, &convs, &tags).unwrap();
            buf
        };
        assert_eq!(render(), render());
        let other = SynthConfig { seed: 1, ..cfg };
        let (convs_b, tags) = generate(&other);
        let mut buf_b = Vec::new();
        crate::data::write_corpus(&mut buf_b, &convs_b, &tags).unwrap();
        assert_ne!(render(), buf_b, "different seeds should differ");
    }

    #[test]
    fn generated_corpus_round_trips_through_the_loader() {
        let (convs, tags) = generate(&SynthConfig { conversations: 10, ..SynthConfig::default() });
        let mut buf = Vec::new();
        crate::data::write_corpus(&mut buf, &convs, &tags).unwrap();
        let reloaded = read_corpus(buf.as_slice(), &tags).unwrap();
        assert_eq!(reloaded, convs);
        for c in &reloaded {
            assert!(c.utterances.iter().all(|u| !u.tokens.is_empty()));
        }
    }

    #[test]
    fn pronoun_tags_are_roughly_balanced() {
        let cfg = SynthConfig {
            conversations: 200,
            drop_prob: 0.8,
            shared_entity_rate: 0.0,
            entities: 12,
            pronoun_types: 6,
            ..SynthConfig::default()
        };
        let (convs, _) = generate(&cfg);
        let mut counts = std::collections::HashMap::new();
        for c in &convs {
            for u in &c.utterances {
                for &t in &u.tags {
                    if t != 0 {
                        *counts.entry(t).or_insert(0usize) += 1;
                    }
                }
            }
        }
        assert_eq!(counts.len(), cfg.pronoun_types);
        let total: usize = counts.values().sum();
        let expected = total as f64 / cfg.pronoun_types as f64;
        for &n in counts.values() {
            assert!(
                (n as f64) > 0.5 * expected && (n as f64) < 1.5 * expected,
                "tag counts should be near uniform: {counts:?}"
            );
        }
    }

    #[test]
    fn topic_lookup_oracle_recovers_every_in_window_drop() {
        // With no out-of-window referents, a rule that finds the in-window
        // intro sharing the drop's topic and reads off its entity's pronoun
        // scores a perfect F. This is the signal the attention model learns.
        let cfg = SynthConfig {
            conversations: 50,
            out_of_window_fraction: 0.0,
            ..SynthConfig::default()
        };
        let (convs, tags) = generate(&cfg);
        let mut gold = 0;
        for c in &convs {
            for (i, u) in c.utterances.iter().enumerate() {
                for (k, &t) in u.tags.iter().enumerate() {
                    if t == 0 {
                        continue;
                    }
                    gold += 1;
                    assert_eq!(k, 1, "drops sit on the verb token");
                    let lo = i.saturating_sub(CONTEXT_BEFORE);
                    let intro = (lo..i)
                        .find(|&j| {
                            c.utterances[j].tokens[0] == u.tokens[0]
                                && c.utterances[j].tokens[1].starts_with('E')
                        })
                        .expect("in-window intro exists");
                    let entity: usize =
                        c.utterances[intro].tokens[1][1..].parse().unwrap();
                    let guess =
                        tags.id_of(entity_pronoun(entity, cfg.pronoun_types)).unwrap();
                    assert_eq!(guess, t, "oracle prediction matches the gold tag");
                }
            }
        }
        assert!(gold > 100);
    }
}
