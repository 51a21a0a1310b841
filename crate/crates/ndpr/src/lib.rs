//! Dropped pronoun recovery for pro-drop conversational text.
//!
//! A pronoun dropped immediately before a token is recovered by tagging that
//! token with the pronoun type. The model encodes the target sentence with a
//! bidirectional GRU (or a pronoun-centered variant), builds sentence- and
//! word-level memories over a window of surrounding utterances, and locates
//! the referent with two-level attention before a softmax classifier predicts
//! the tag for every token position.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod attention;
pub mod classifier;
pub mod model;
pub mod train;
pub mod eval;
pub mod synth;
