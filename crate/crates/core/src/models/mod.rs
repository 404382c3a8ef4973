//! The model zoo behind one [`Model`] type: RNN-LM, attention RNN-LM,
//! topic-feature attention RNN-LM, and seq2seq with or without attention.

mod checkpoint;
mod lm;
mod seq2seq;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lm::{
    arnn_next_dist, attend, lm_next_dist, rnn_step, tarnn_next_dist, AttentionParams, LmDecodeState,
    LmParams, RnnLmParams, TopicFeatureParams,
};
pub use seq2seq::{EncoderParams, Seq2SeqAttention, Seq2SeqDecodeState, Seq2SeqParams};

use crate::corpus::{flatten, Dialogue, TokenId};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Parameters, Vector};

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Plain RNN language model over the flattened dialogue.
    Rnn,
    /// Attention RNN-LM with a scope that grows over the whole history.
    ARnn,
    /// Attention RNN-LM with an extra topic-proportion feature.
    TaRnn,
    Seq2Seq,
    AttnSeq2Seq,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Rnn,
        ModelKind::ARnn,
        ModelKind::TaRnn,
        ModelKind::Seq2Seq,
        ModelKind::AttnSeq2Seq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::ARnn => "a-rnn",
            ModelKind::TaRnn => "t-a-rnn",
            ModelKind::Seq2Seq => "seq2seq",
            ModelKind::AttnSeq2Seq => "attn-seq2seq",
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::ARnn | ModelKind::TaRnn | ModelKind::AttnSeq2Seq)
    }

    pub fn is_seq2seq(self) -> bool {
        matches!(self, ModelKind::Seq2Seq | ModelKind::AttnSeq2Seq)
    }

    pub fn uses_topics(self) -> bool {
        self == ModelKind::TaRnn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Hidden size `d`.
    pub hidden: usize,
    /// Embedding size `d_e`.
    pub embed: usize,
    /// Vocabulary size `V`.
    pub vocab: usize,
    /// Topic count `K`; zero unless the model takes topic features.
    pub topics: usize,
}

impl ModelDims {
    pub fn new(hidden: usize, embed: usize, vocab: usize) -> Self {
        Self {
            hidden,
            embed,
            vocab,
            topics: 0,
        }
    }

    pub fn with_topics(mut self, k: usize) -> Self {
        self.topics = k;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Lm(LmParams),
    Seq2Seq(Seq2SeqParams),
}

impl Parameters for ModelParams {
    fn arrays(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            ModelParams::Lm(p) => p.arrays(),
            ModelParams::Seq2Seq(p) => p.arrays(),
        }
    }

    fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            ModelParams::Lm(p) => p.arrays_mut(),
            ModelParams::Seq2Seq(p) => p.arrays_mut(),
        }
    }
}

/// One dialogue prepared for scoring or training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueExample {
    /// Flattened dialogue.
    pub tokens: Vec<TokenId>,
    /// Positions of the last turn's words and its end-of-utterance marker.
    pub last_span: Range<usize>,
    /// Topic proportions of the dialogue context, for topic-feature models.
    pub theta: Option<Vector>,
}

impl DialogueExample {
    pub fn new(d: &Dialogue) -> Result<Self> {
        let last = d
            .last_utterance()
            .ok_or(Error::Empty("dialogue without utterances"))?;
        let tokens = flatten(d);
        // [.., speaker, words.., EOU, EOD]
        let end = tokens.len() - 1;
        let start = end - last.tokens.len() - 1;
        Ok(Self {
            tokens,
            last_span: start..end,
            theta: None,
        })
    }

    pub fn with_theta(mut self, theta: Vector) -> Self {
        self.theta = Some(theta);
        self
    }

    /// Everything before the last turn's speaker marker.
    pub fn source(&self) -> &[TokenId] {
        &self.tokens[..self.last_span.start - 1]
    }

    /// The last turn's speaker marker.
    pub fn start_token(&self) -> TokenId {
        self.tokens[self.last_span.start - 1]
    }

    pub fn target(&self) -> &[TokenId] {
        &self.tokens[self.last_span.clone()]
    }

    /// Tokens conditioning the last turn: `source` plus the start marker.
    pub fn context(&self) -> &[TokenId] {
        &self.tokens[..self.last_span.start]
    }
}

/// Teacher-forced per-position scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleScore {
    /// Indices into the example's flattened tokens.
    pub positions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Whether the argmax prediction equals the reference at each position.
    pub hits: Vec<bool>,
}

#[derive(Clone, Debug)]
pub enum DecodeState {
    Lm(LmDecodeState),
    Seq2Seq(Seq2SeqDecodeState),
}

impl DecodeState {
    /// Number of positions the next attention query ranges over.
    pub fn scope_len(&self) -> usize {
        match self {
            DecodeState::Lm(s) => s.scope_len(),
            DecodeState::Seq2Seq(s) => s.source_len(),
        }
    }
}

/// Output of one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub probs: Vector,
    pub alpha: Option<Vector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub params: ModelParams,
}

impl Model {
    /// Uniform initialisation in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn new(kind: ModelKind, dims: ModelDims, seed: u64) -> Result<Self> {
        Self::with_scale(kind, dims, seed, INIT_SCALE)
    }

    pub fn with_scale(kind: ModelKind, dims: ModelDims, seed: u64, scale: f64) -> Result<Self> {
        let ModelDims {
            hidden: d,
            embed: de,
            vocab: v,
            topics: k,
        } = dims;
        if d == 0 || de == 0 || v == 0 {
            return Err(Error::InvalidInput(format!("degenerate dimensions {dims:?}")));
        }
        if kind.uses_topics() && k == 0 {
            return Err(Error::InvalidInput("topic-feature model needs K > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match kind {
            ModelKind::Rnn | ModelKind::ARnn | ModelKind::TaRnn => {
                let rnn = RnnLmParams::uniform(d, de, v, scale, &mut rng);
                let attention = kind
                    .has_attention()
                    .then(|| AttentionParams::uniform(d, de + d, scale, &mut rng));
                let topic = kind.uses_topics().then(|| TopicFeatureParams {
                    o_theta: Matrix::uniform(d, k, scale, &mut rng),
                });
                ModelParams::Lm(LmParams {
                    rnn,
                    attention,
                    topic,
                })
            }
            ModelKind::Seq2Seq | ModelKind::AttnSeq2Seq => ModelParams::Seq2Seq(
                Seq2SeqParams::uniform(d, de, v, kind.has_attention(), scale, &mut rng),
            ),
        };
        let dims = if kind.uses_topics() { dims } else { dims.with_topics(0) };
        Ok(Self { kind, dims, params })
    }

    /// Sets every output-embedding entry to zero, making every next-token
    /// distribution uniform.
    pub fn zero_output(&mut self) {
        match &mut self.params {
            ModelParams::Lm(p) => p.rnn.o.fill(0.0),
            ModelParams::Seq2Seq(p) => p.o.fill(0.0),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn theta<'a>(&self, ex: &'a DialogueExample) -> Option<&'a [f64]> {
        if self.kind.uses_topics() {
            ex.theta.as_deref()
        } else {
            None
        }
    }

    /// Negative log-likelihood of the example under teacher forcing; the
    /// whole dialogue for language models, the last turn for seq2seq.
    pub fn loss(&self, ex: &DialogueExample) -> Result<f64> {
        Ok(-self.score(ex)?.log_probs.iter().sum::<f64>())
    }

    /// Adds the loss gradient into `grads` and returns the loss.
    pub fn loss_and_grad(&self, ex: &DialogueExample, grads: &mut ModelParams) -> Result<f64> {
        match (&self.params, grads) {
            (ModelParams::Lm(p), ModelParams::Lm(g)) => p.loss_and_grad(&ex.tokens, self.theta(ex), g),
            (ModelParams::Seq2Seq(p), ModelParams::Seq2Seq(g)) => {
                p.loss_and_grad(ex.source(), ex.start_token(), ex.target(), g)
            }
            _ => Err(Error::Shape("gradient buffers belong to another model kind".into())),
        }
    }

    pub fn score(&self, ex: &DialogueExample) -> Result<ExampleScore> {
        match &self.params {
            ModelParams::Lm(p) => {
                let f = p.forward(&ex.tokens, self.theta(ex))?;
                Ok(ExampleScore {
                    positions: (0..ex.tokens.len()).collect(),
                    hits: f.argmax.iter().zip(&ex.tokens).map(|(a, b)| a == b).collect(),
                    log_probs: f.log_probs,
                })
            }
            ModelParams::Seq2Seq(p) => {
                let f = p.forward(ex.source(), ex.start_token(), ex.target())?;
                Ok(ExampleScore {
                    positions: ex.last_span.clone().collect(),
                    hits: f.argmax.iter().zip(ex.target()).map(|(a, b)| a == b).collect(),
                    log_probs: f.log_probs,
                })
            }
        }
    }

    /// `(Σ_t log P(w_t | w_<t), per-token values)` for a language model;
    /// the first token is scored from the zero state.
    pub fn sequence_log_likelihood(
        &self,
        tokens: &[TokenId],
        theta: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        match &self.params {
            ModelParams::Lm(p) => {
                let f = p.forward(tokens, theta)?;
                Ok((f.log_probs.iter().sum(), f.log_probs))
            }
            ModelParams::Seq2Seq(_) => Err(Error::Unsupported(
                "seq2seq models score a target given a source; use seq2seq_forward".into(),
            )),
        }
    }

    /// Per-token target log-probabilities and, with attention, the weight
    /// rows over the `M + 1` encoder states.
    pub fn seq2seq_forward(
        &self,
        source: &[TokenId],
        start: TokenId,
        target: &[TokenId],
    ) -> Result<(Vec<f64>, Vec<Vector>)> {
        match &self.params {
            ModelParams::Seq2Seq(p) => {
                let f = p.forward(source, start, target)?;
                Ok((f.log_probs, f.alphas))
            }
            ModelParams::Lm(_) => Err(Error::Unsupported(format!(
                "{} is not an encoder-decoder model",
                self.kind
            ))),
        }
    }

    /// Decoding state after consuming `context`. For seq2seq the last
    /// context token is the decoder start token and the rest is the source.
    pub fn begin(&self, context: &[TokenId], theta: Option<&[f64]>) -> Result<DecodeState> {
        if context.is_empty() {
            return Err(Error::Empty("decoding context"));
        }
        match &self.params {
            ModelParams::Lm(p) => {
                let theta = if self.kind.uses_topics() { theta } else { None };
                let mut s = p.begin(theta)?;
                for &w in context {
                    p.advance(&mut s, w)?;
                }
                Ok(DecodeState::Lm(s))
            }
            ModelParams::Seq2Seq(p) => {
                let (start, source) = context.split_last().unwrap();
                Ok(DecodeState::Seq2Seq(p.begin(source, *start)?))
            }
        }
    }

    /// Decoding state before any token, language models only.
    pub fn begin_empty(&self, theta: Option<&[f64]>) -> Result<DecodeState> {
        match &self.params {
            ModelParams::Lm(p) => Ok(DecodeState::Lm(
                p.begin(if self.kind.uses_topics() { theta } else { None })?,
            )),
            ModelParams::Seq2Seq(_) => Err(Error::Unsupported("seq2seq needs a source".into())),
        }
    }

    pub fn step(&self, s: &DecodeState) -> Result<StepOutput> {
        let (probs, alpha) = match (&self.params, s) {
            (ModelParams::Lm(p), DecodeState::Lm(s)) => p.next(s),
            (ModelParams::Seq2Seq(p), DecodeState::Seq2Seq(s)) => p.next(s),
            _ => return Err(Error::InvalidInput("decode state from another model kind".into())),
        };
        Ok(StepOutput { probs, alpha })
    }

    pub fn advance(&self, s: &mut DecodeState, w: TokenId) -> Result<()> {
        match (&self.params, s) {
            (ModelParams::Lm(p), DecodeState::Lm(s)) => p.advance(s, w),
            (ModelParams::Seq2Seq(p), DecodeState::Seq2Seq(s)) => p.advance(s, w),
            _ => Err(Error::InvalidInput("decode state from another model kind".into())),
        }
    }

    /// Log-probabilities of `continuation` given `context`, token by token.
    pub fn continuation_log_probs(
        &self,
        context: &[TokenId],
        continuation: &[TokenId],
        theta: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut s = self.begin(context, theta)?;
        let mut out = Vec::with_capacity(continuation.len());
        for &w in continuation {
            let StepOutput { probs, .. } = self.step(&s)?;
            if w >= probs.len() {
                return Err(Error::TokenOutOfRange {
                    token: w,
                    vocab: probs.len(),
                });
            }
            out.push(probs[w].ln());
            self.advance(&mut s, w)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EOU, SPEAKER_B};

    #[test]
    fn example_spans() {
        let d = Dialogue::from_turns(vec![vec![10, 11], vec![12, 13, 14]]);
        let ex = DialogueExample::new(&d).unwrap();
        assert_eq!(ex.target(), &[12, 13, 14, EOU]);
        assert_eq!(ex.start_token(), SPEAKER_B);
        assert_eq!(ex.context(), &d.prefix().context_tokens()[..]);
        assert_eq!(ex.source().len(), 4);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let dims = ModelDims::new(4, 3, 9).with_topics(2);
        for k in ModelKind::ALL {
            let a = Model::new(k, dims, 5).unwrap();
            assert_eq!(a, Model::new(k, dims, 5).unwrap());
            assert!(a
                .params
                .arrays()
                .iter()
                .all(|(_, m)| m.data().iter().all(|v| v.abs() <= INIT_SCALE)));
        }
        assert!(Model::new(ModelKind::TaRnn, ModelDims::new(4, 3, 9), 1).is_err());
    }
}
