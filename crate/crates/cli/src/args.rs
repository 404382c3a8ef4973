//! Command-line definitions. Training and decoding flags mirror the
//! `key=value` config keys one-to-one (`d_e` becomes `--d-e`).

use std::path::PathBuf;
use std::str::FromStr;

use arnn_core::generator::GenerateConfig;
use arnn_core::models::ModelKind;
use arnn_core::topics::{InferConfig, Objective, SimilarityMetric};
use clap::{Args, Parser, Subcommand, ValueEnum};

fn parse_with<T: FromStr<Err = arnn_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: arnn_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    parse_with(s)
}

fn parse_metric(s: &str) -> Result<SimilarityMetric, String> {
    parse_with(s)
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    parse_with(s)
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated ratios".to_string())
}

#[derive(Debug, Parser)]
#[command(name = "arnn", version, about = "Attention RNN dialogue language model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with known structure.
    Synth(SynthArgs),
    /// Split a corpus and build the vocabulary from its training part.
    Prepare(PrepareArgs),
    /// Train a model, optionally after pretraining on another corpus.
    Train(TrainArgs),
    /// Beam-search continuations of dialogue histories.
    Generate(GenerateArgs),
    /// Perplexity, word error rate, recall@N, BLEU and Distinct-1.
    Eval(EvalArgs),
    /// Train LDA topic models.
    Lda(LdaArgs),
    /// Reorder generated candidates by topic similarity and likelihood.
    Rerank(RerankArgs),
    /// Grid-search topic count and lambda for reranking.
    Tune(TuneArgs),
    /// Attention trace export and grayscale heatmap.
    Attviz(AttvizArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// One hidden topic per dialogue, words follow a topic graph.
    Topic,
    /// The last turn repeats a key word from the first turn.
    Copy,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 2000)]
    pub dialogues: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Topic corpora: number of topics.
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    #[arg(long, default_value_t = 12)]
    pub words_per_topic: usize,
    #[arg(long, default_value_t = 2)]
    pub branching: usize,
    /// Copy corpora: number of distinct key words.
    #[arg(long, default_value_t = 8)]
    pub keys: usize,
    #[arg(long, default_value_t = 12)]
    pub fillers: usize,
    #[arg(long, default_value_t = 20)]
    pub min_gap: usize,
    /// Output directory; receives corpus.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary size including the reserved tokens.
    #[arg(long, default_value_t = 10003)]
    pub vocab_size: usize,
    /// Train, dev and test ratios.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub split: [f64; 3],
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory; receives vocab.txt, train.txt, dev.txt, test.txt.
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides for config keys; unset flags keep the config file or default.
#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    /// Hidden size [default: 300]
    #[arg(long)]
    pub d: Option<usize>,
    /// Embedding size [default: 300]
    #[arg(long)]
    pub d_e: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// [default: 1e-8]
    #[arg(long)]
    pub eps: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Evaluations without dev improvement before stopping [default: 5]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Gradient norm clip [default: 5]
    #[arg(long)]
    pub clip: Option<f64>,
    /// Initialisation and shuffling seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs between dev evaluations [default: 1]
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Uniform initialisation half-width [default: 0.08]
    #[arg(long)]
    pub init_scale: Option<f64>,
}

impl TrainFlags {
    /// `(config key, value)` for every flag that was given.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("d", self.d.map(|v| v.to_string()));
        push("d_e", self.d_e.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("beta1", self.beta1.map(|v| v.to_string()));
        push("beta2", self.beta2.map(|v| v.to_string()));
        push("eps", self.eps.map(|v| v.to_string()));
        push("max_epochs", self.max_epochs.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("clip", self.clip.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("eval_interval", self.eval_interval.map(|v| v.to_string()));
        push("init_scale", self.init_scale.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with vocab.txt, train.txt and dev.txt.
    #[arg(long)]
    pub data: PathBuf,
    /// rnn, a-rnn, t-a-rnn, seq2seq or attn-seq2seq
    #[arg(long, value_parser = parse_kind)]
    pub kind: ModelKind,
    /// `key=value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Topic model supplying θ̂ for t-a-rnn.
    #[arg(long)]
    pub topic_model: Option<PathBuf>,
    /// Directory with train.txt (and optionally dev.txt) to pretrain on.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Output directory; receives model.ckpt, train.log and config.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeFlags {
    #[arg(long, default_value_t = 10)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    #[arg(long, default_value_t = 10)]
    pub n_best: usize,
    /// Scores are log-likelihood / length^exponent.
    #[arg(long, default_value_t = 1.0)]
    pub length_exponent: f64,
    /// Let the decoder emit reserved tokens other than end-of-utterance.
    #[arg(long)]
    pub allow_reserved: bool,
}

impl DecodeFlags {
    pub fn config(&self) -> GenerateConfig {
        GenerateConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            n_best: self.n_best,
            length_exponent: self.length_exponent,
            forbid_reserved: !self.allow_reserved,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferFlags {
    /// Gibbs sweeps when inferring topic proportions.
    #[arg(long, default_value_t = 50)]
    pub infer_sweeps: usize,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
}

impl InferFlags {
    pub fn config(&self) -> InferConfig {
        InferConfig {
            sweeps: self.infer_sweeps,
            burn_in: self.burn_in,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus file; each line is a history.
    #[arg(long)]
    pub input: PathBuf,
    /// Use each line's last turn as the reference and decode from the rest.
    #[arg(long)]
    pub hold_out_last: bool,
    #[arg(long)]
    pub topic_model: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Output directory; receives candidates.txt and candidates.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus file to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub topic_model: Option<PathBuf>,
    /// Also compute recall@N against 9 sampled negatives per dialogue.
    #[arg(long)]
    pub recall: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also decode every last turn and compute BLEU and Distinct-1.
    #[arg(long)]
    pub bleu: bool,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Output directory; receives eval.tsv and eval.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LdaArgs {
    /// Corpus file; each dialogue is one document.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Topic counts, comma-separated; one model per value.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub topics_k: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    /// Document-topic prior per topic; defaults to 50/K.
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Words listed per topic in the summary.
    #[arg(long, default_value_t = 10)]
    pub top_words: usize,
    /// Output directory; receives topics-k<K>.bin and topics-k<K>.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// candidates.json from `generate`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub topic_model: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    pub metric: SimilarityMetric,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Output directory; receives reranked.txt and reranked.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// candidates.json from `generate --hold-out-last`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One topic model per K in the grid.
    #[arg(long, num_args = 1.., required = true)]
    pub topic_models: Vec<PathBuf>,
    /// Lambda grid is i/steps for i = 0..=steps.
    #[arg(long, default_value_t = 20)]
    pub lambda_steps: usize,
    /// `bleu` or `recall@N`.
    #[arg(long, default_value = "bleu", value_parser = parse_objective)]
    pub objective: Objective,
    #[arg(long, default_value = "cosine", value_parser = parse_metric)]
    pub metric: SimilarityMetric,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Output directory; receives grid.tsv and best.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttvizArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus file holding the history.
    #[arg(long)]
    pub history: PathBuf,
    /// 1-based dialogue index within the history file.
    #[arg(long, default_value_t = 1)]
    pub line: usize,
    /// Continuation to trace (end-of-utterance is appended); when absent the
    /// top beam-search candidate is traced.
    #[arg(long)]
    pub continuation: Option<String>,
    #[arg(long)]
    pub topic_model: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[command(flatten)]
    pub infer: InferFlags,
    /// Pixel size of one attention cell.
    #[arg(long, default_value_t = 12)]
    pub cell: usize,
    /// Output directory; receives trace.json and heatmap.pgm.
    #[arg(long)]
    pub out: PathBuf,
}
