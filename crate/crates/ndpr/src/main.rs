//! Command-line entry point: train, eval, predict, inspect-attention, gen-synth.
//!
//! Configuration is a flat dotted-key JSON file (`{"train.lr": 0.001,
//! "model.encoder": "pc-bigru"}`); flags use the same keys and override the
//! file. Unknown keys are rejected. Set `NDPR_LOG=info` (or `debug`) for
//! progress logging.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ndpr::data::{load_corpus, make_examples, save_corpus, Conversation, TagSet, Utterance};
use ndpr::eval::{evaluate, format_report};
use ndpr::synth::{generate, SynthConfig};
use ndpr::train::{train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "ndpr", version, about = "Dropped pronoun recovery for pro-drop conversations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint against a tagged corpus.
    Eval(EvalArgs),
    /// Tag a corpus, writing it back out with predicted tags.
    Predict(IoArgs),
    /// Dump per-token attention traces as JSON lines.
    InspectAttention(IoArgs),
    /// Generate a synthetic pro-drop corpus.
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
struct CommonOverrides {
    /// Flat dotted-key JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
    /// Sentence encoder: bigru | pc-bigru.
    #[arg(long)]
    encoder: Option<ndpr::encoder::EncoderMode>,
    /// Referent modeling: full | sentence | word | none.
    #[arg(long)]
    attention: Option<ndpr::attention::AttentionMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Optional JSON report output; the text report always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Corpus output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
}

type CliError = Box<dyn std::error::Error>;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("NDPR_LOG")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Predict(args) => cmd_predict(args),
        Cmd::InspectAttention(args) => cmd_inspect(args),
        Cmd::GenSynth(args) => cmd_gensynth(args),
    }
}

/// Everything the config file can set, under one flat key space.
#[derive(Default)]
struct FullConfig {
    train: TrainConfig,
    synth: SynthConfig,
}

fn typed<T: DeserializeOwned>(key: &str, v: &serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(v.clone())
        .map_err(|e| format!("config key {key:?}: {e}").into())
}

fn set_key(full: &mut FullConfig, key: &str, v: &serde_json::Value) -> Result<(), CliError> {
    let t = &mut full.train;
    let m = &mut t.model;
    let s = &mut full.synth;
    match key {
        "train.lr" => t.lr = typed(key, v)?,
        "train.epochs" => t.epochs = typed(key, v)?,
        "train.seed" => t.seed = typed(key, v)?,
        "train.min_count" => t.min_count = typed(key, v)?,
        "train.grad_clip" => t.grad_clip = typed(key, v)?,
        "train.dev_fraction" => t.dev_fraction = typed(key, v)?,
        "train.embedding_file" => t.embedding_file = typed(key, v)?,
        "model.encoder" => m.encoder = typed(key, v)?,
        "model.attention" => m.attention = typed(key, v)?,
        "model.embed_dim" => m.embed_dim = typed(key, v)?,
        "model.hidden_dim" => m.hidden_dim = typed(key, v)?,
        "model.classifier_hidden" => m.classifier_hidden = typed(key, v)?,
        "model.dropout" => m.dropout = typed(key, v)?,
        "model.init_range" => m.init_range = typed(key, v)?,
        "model.separate_context_encoder" => m.separate_context_encoder = typed(key, v)?,
        "synth.seed" => s.seed = typed(key, v)?,
        "synth.conversations" => s.conversations = typed(key, v)?,
        "synth.utterances_per_conversation" => s.utterances_per_conversation = typed(key, v)?,
        "synth.entities" => s.entities = typed(key, v)?,
        "synth.pronoun_types" => s.pronoun_types = typed(key, v)?,
        "synth.topics" => s.topics = typed(key, v)?,
        "synth.verbs" => s.verbs = typed(key, v)?,
        "synth.fillers" => s.fillers = typed(key, v)?,
        "synth.drop_prob" => s.drop_prob = typed(key, v)?,
        "synth.min_distance" => s.min_distance = typed(key, v)?,
        "synth.max_distance" => s.max_distance = typed(key, v)?,
        "synth.out_of_window_fraction" => s.out_of_window_fraction = typed(key, v)?,
        "synth.shared_entity_rate" => s.shared_entity_rate = typed(key, v)?,
        _ => return Err(format!("unknown config key {key:?}").into()),
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<FullConfig, CliError> {
    let mut full = FullConfig::default();
    let Some(path) = path else { return Ok(full) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("config {}: {e}", path.display()))?;
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| format!("config {}: expected a flat JSON object: {e}", path.display()))?;
    for (key, value) in &map {
        set_key(&mut full, key, value)?;
    }
    Ok(full)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer(&mut w, value)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut full = load_config(args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        full.train.seed = seed;
    }
    if let Some(encoder) = args.encoder {
        full.train.model.encoder = encoder;
    }
    if let Some(attention) = args.attention {
        full.train.model.attention = attention;
    }
    if let Some(epochs) = args.epochs {
        full.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        full.train.lr = lr;
    }
    let tags = TagSet::default_conversational();
    let conversations = load_corpus(&args.data, &tags)?;
    let trained = train(&full.train, &conversations, &tags)?;
    Checkpoint::from_trained(&trained).save(&args.out)?;
    println!(
        "trained {} epochs; best epoch {} with dev F {:.4}; checkpoint: {}",
        trained.history.len(),
        trained.best_epoch,
        trained.best_dev_f1,
        args.out.display()
    );
    Ok(())
}

fn restore(path: &Path) -> Result<RestoredModel, CliError> {
    let (model, params, vocab, tags) = Checkpoint::load(path)?.restore()?;
    Ok(RestoredModel { model, params, vocab, tags })
}

struct RestoredModel {
    model: ndpr::model::Model,
    params: ndpr::autodiff::ParamSet,
    vocab: ndpr::data::Vocabulary,
    tags: TagSet,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let rm = restore(&args.model)?;
    let conversations = load_corpus(&args.data, &rm.tags)?;
    let examples = make_examples(&conversations, &rm.vocab, &rm.tags);
    let report = evaluate(&rm.model, &rm.params, &examples, &rm.tags);
    print!("{}", format_report(&report));
    if args.out.is_some() {
        write_json(&report, args.out.as_deref())?;
    }
    Ok(())
}

fn cmd_predict(args: IoArgs) -> Result<(), CliError> {
    let rm = restore(&args.model)?;
    let conversations = load_corpus(&args.data, &rm.tags)?;
    let mut tagged = Vec::with_capacity(conversations.len());
    for conv in &conversations {
        let examples = make_examples(std::slice::from_ref(conv), &rm.vocab, &rm.tags);
        let utterances = conv
            .utterances
            .iter()
            .zip(&examples)
            .map(|(u, ex)| Utterance {
                tokens: u.tokens.clone(),
                tags: rm.model.predict(&rm.params, ex).0,
            })
            .collect();
        tagged.push(Conversation { id: conv.id.clone(), utterances });
    }
    match &args.out {
        Some(path) => save_corpus(path, &tagged, &rm.tags)?,
        None => {
            let stdout = std::io::stdout();
            ndpr::data::write_corpus(stdout.lock(), &tagged, &rm.tags)?;
        }
    }
    Ok(())
}

/// One inspect-attention output line.
#[derive(Serialize)]
struct InspectLine<'a> {
    conversation: &'a str,
    sentence: usize,
    tokens: &'a [String],
    predicted: Vec<&'a str>,
    traces: Vec<ndpr::attention::AttentionTrace>,
}

fn cmd_inspect(args: IoArgs) -> Result<(), CliError> {
    let rm = restore(&args.model)?;
    let conversations = load_corpus(&args.data, &rm.tags)?;
    let mut lines = Vec::new();
    for conv in &conversations {
        let examples = make_examples(std::slice::from_ref(conv), &rm.vocab, &rm.tags);
        for (u, ex) in conv.utterances.iter().zip(&examples) {
            let (preds, traces) = rm.model.predict(&rm.params, ex);
            lines.push(serde_json::to_string(&InspectLine {
                conversation: &conv.id,
                sentence: ex.sentence_index,
                tokens: &u.tokens,
                predicted: preds.iter().map(|&t| rm.tags.name(t)).collect(),
                traces,
            })?);
        }
    }
    let body = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_gensynth(args: GenSynthArgs) -> Result<(), CliError> {
    let mut full = load_config(args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        full.synth.seed = seed;
    }
    let (conversations, tags) = generate(&full.synth);
    save_corpus(&args.out, &conversations, &tags)?;
    let drops: usize = conversations.iter().map(|c| c.dropped_pronoun_count()).sum();
    println!(
        "wrote {} conversations ({} dropped pronouns) to {}",
        conversations.len(),
        drops,
        args.out.display()
    );
    Ok(())
}
