//! Greedy and beam-search continuation decoding, plus attention traces.

use serde::{Deserialize, Serialize};

use crate::corpus::{is_reserved, Dialogue, TokenId, Vocabulary, EOU};
use crate::error::{Error, Result};
use crate::models::{DecodeState, Model};
use crate::numeric::Vector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub n_best: usize,
    /// Scores are `ℓ / len^length_exponent`; 1.0 is the per-token mean.
    pub length_exponent: f64,
    /// Never emit reserved tokens other than the end-of-utterance marker.
    pub forbid_reserved: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            beam_width: 10,
            max_len: 30,
            n_best: 10,
            length_exponent: 1.0,
            forbid_reserved: true,
        }
    }
}

impl GenerateConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            beam_width: 1,
            n_best: 1,
            max_len,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_len == 0 || self.n_best == 0 {
            return Err(Error::InvalidInput("beam_width, max_len and n_best must be positive".into()));
        }
        if self.n_best > self.beam_width {
            return Err(Error::InvalidInput(format!(
                "n_best {} exceeds beam_width {}",
                self.n_best, self.beam_width
            )));
        }
        if !self.length_exponent.is_finite() || self.length_exponent < 0.0 {
            return Err(Error::InvalidInput("length_exponent must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, log_likelihood: f64, len: usize) -> f64 {
        log_likelihood / (len as f64).powf(self.length_exponent)
    }
}

/// Attention weights recorded while producing a continuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Tokens the first row ranges over.
    pub scope: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    /// Row `t` covers `scope` plus `continuation[..t]`, unless the scope
    /// is fixed (seq2seq).
    pub rows: Vec<Vector>,
    pub fixed_scope: bool,
}

impl AttentionTrace {
    /// Tokens labelling the columns of row `t`.
    pub fn row_tokens(&self, t: usize) -> Vec<TokenId> {
        let mut out = self.scope.clone();
        if !self.fixed_scope {
            out.extend_from_slice(&self.continuation[..t]);
        }
        out
    }

    /// Token ids labelling the widest row.
    pub fn column_tokens(&self) -> Vec<TokenId> {
        self.row_tokens(self.rows.len().saturating_sub(1))
    }

    pub fn export(&self, vocab: &Vocabulary) -> TraceExport {
        TraceExport {
            columns: vocab.labels(&self.column_tokens()),
            rows: self
                .rows
                .iter()
                .zip(&self.continuation)
                .map(|(w, &t)| TraceRow {
                    token: vocab.token(t).unwrap_or("<unk>").to_string(),
                    weights: w.clone(),
                })
                .collect(),
        }
    }
}

/// Serialized attention trace: column labels plus one labelled row per
/// generated token. Rows may be shorter than `columns`; entry `j` of a
/// row weights column `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceExport {
    pub columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub token: String,
    pub weights: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<TokenId>,
    /// Conditional log-likelihood of `tokens` given the history.
    pub log_likelihood: f64,
    /// Length-normalised log-likelihood used for ranking.
    pub score: f64,
    pub trace: Option<AttentionTrace>,
}

impl Candidate {
    /// `rank score log_likelihood<TAB>text`
    pub fn dump_line(&self, rank: usize, vocab: &Vocabulary) -> String {
        format!(
            "{rank} {:.6} {:.6}\t{}",
            self.score,
            self.log_likelihood,
            vocab.detokenize(&self.tokens)
        )
    }
}

struct Hyp {
    state: DecodeState,
    tokens: Vec<TokenId>,
    ll: f64,
    rows: Vec<Vector>,
}

fn scope_of(model: &Model, context: &[TokenId]) -> (Vec<TokenId>, bool) {
    if model.kind.is_seq2seq() {
        (context[..context.len() - 1].to_vec(), true)
    } else {
        (context.to_vec(), false)
    }
}

fn finish(model: &Model, context: &[TokenId], cfg: &GenerateConfig, h: Hyp) -> Candidate {
    let trace = model.kind.has_attention().then(|| {
        let (scope, fixed_scope) = scope_of(model, context);
        AttentionTrace {
            scope,
            continuation: h.tokens.clone(),
            rows: h.rows,
            fixed_scope,
        }
    });
    Candidate {
        score: cfg.normalize(h.ll, h.tokens.len()),
        log_likelihood: h.ll,
        tokens: h.tokens,
        trace,
    }
}

fn cmp_desc(a: f64, b: f64) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}

/// Beam search from the end of `context`. A hypothesis completes when it
/// emits the end-of-utterance marker or reaches `max_len` tokens; at each
/// step the `beam_width` best expansions by normalised score survive.
pub fn generate(
    model: &Model,
    context: &[TokenId],
    theta: Option<&[f64]>,
    cfg: &GenerateConfig,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    if context.is_empty() {
        return Err(Error::Empty("history"));
    }
    let root = model.begin(context, theta)?;
    let mut live = vec![Hyp {
        state: root,
        tokens: Vec::new(),
        ll: 0.0,
        rows: Vec::new(),
    }];
    let mut done: Vec<Candidate> = Vec::new();
    let allowed = |w: TokenId| !(cfg.forbid_reserved && is_reserved(w) && w != EOU);
    while !live.is_empty() {
        // (parent, token, ll, normalised score)
        let mut expansions: Vec<(usize, TokenId, f64, f64)> = Vec::new();
        let mut steps = Vec::with_capacity(live.len());
        for (pi, h) in live.iter().enumerate() {
            let out = model.step(&h.state)?;
            let mut local: Vec<(usize, TokenId, f64, f64)> = out
                .probs
                .iter()
                .enumerate()
                .filter(|(w, p)| allowed(*w) && **p > 0.0)
                .map(|(w, p)| {
                    let ll = h.ll + p.ln();
                    (pi, w, ll, cfg.normalize(ll, h.tokens.len() + 1))
                })
                .collect();
            // Only a parent's best `beam_width` children can survive.
            local.sort_by(|a, b| cmp_desc(a.3, b.3).then(a.1.cmp(&b.1)));
            local.truncate(cfg.beam_width);
            expansions.extend(local);
            steps.push(out.alpha);
        }
        expansions.sort_by(|a, b| cmp_desc(a.3, b.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        expansions.truncate(cfg.beam_width);
        let mut next = Vec::with_capacity(expansions.len());
        for (pi, w, ll, _) in expansions {
            let parent = &live[pi];
            let mut tokens = parent.tokens.clone();
            tokens.push(w);
            let mut rows = parent.rows.clone();
            if let Some(a) = &steps[pi] {
                rows.push(a.clone());
            }
            let h = Hyp {
                state: parent.state.clone(),
                tokens,
                ll,
                rows,
            };
            if w == EOU || h.tokens.len() >= cfg.max_len {
                done.push(finish(model, context, cfg, h));
            } else {
                next.push(h);
            }
        }
        for h in next.iter_mut() {
            model.advance(&mut h.state, *h.tokens.last().unwrap())?;
        }
        live = next;
    }
    done.sort_by(|a, b| cmp_desc(a.score, b.score).then_with(|| a.tokens.cmp(&b.tokens)));
    done.truncate(cfg.n_best);
    Ok(done)
}

/// Continuations of the dialogue's next turn.
pub fn generate_reply(
    model: &Model,
    history: &Dialogue,
    theta: Option<&[f64]>,
    cfg: &GenerateConfig,
) -> Result<Vec<Candidate>> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    generate(model, &history.context_tokens(), theta, cfg)
}

/// Teacher-forces `continuation` after `context` and records the
/// attention weights at every step.
pub fn trace_attention(
    model: &Model,
    context: &[TokenId],
    continuation: &[TokenId],
    theta: Option<&[f64]>,
) -> Result<AttentionTrace> {
    if !model.kind.has_attention() {
        return Err(Error::Unsupported(format!("{} has no attention", model.kind)));
    }
    if continuation.is_empty() {
        return Err(Error::Empty("continuation"));
    }
    let mut s = model.begin(context, theta)?;
    let mut rows = Vec::with_capacity(continuation.len());
    for &w in continuation {
        let out = model.step(&s)?;
        rows.push(out.alpha.expect("attention model emits weights"));
        model.advance(&mut s, w)?;
    }
    let (scope, fixed_scope) = scope_of(model, context);
    Ok(AttentionTrace {
        scope,
        continuation: continuation.to_vec(),
        rows,
        fixed_scope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelDims, ModelKind};

    #[test]
    fn config_validation() {
        assert!(GenerateConfig::default().validate().is_ok());
        let bad = GenerateConfig {
            n_best: 11,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GenerateConfig::greedy(0).validate().is_err());
    }

    #[test]
    fn normalisation() {
        let c = GenerateConfig::default();
        assert_eq!(c.normalize(-6.0, 3), -2.0);
        let raw = GenerateConfig {
            length_exponent: 0.0,
            ..Default::default()
        };
        assert_eq!(raw.normalize(-6.0, 3), -6.0);
    }

    #[test]
    fn empty_history_is_an_error() {
        let m = Model::new(ModelKind::Rnn, ModelDims::new(3, 2, 8), 0).unwrap();
        assert!(generate(&m, &[], None, &GenerateConfig::greedy(3)).is_err());
        assert!(generate_reply(&m, &Dialogue::default(), None, &GenerateConfig::greedy(3)).is_err());
    }

    #[test]
    fn trace_needs_attention() {
        let m = Model::new(ModelKind::Rnn, ModelDims::new(3, 2, 8), 0).unwrap();
        assert!(matches!(
            trace_attention(&m, &[4, 6], &[7], None),
            Err(Error::Unsupported(_))
        ));
    }
}
