//! Evaluation metrics: PPL, PPL@L, WER, WER@L, recall@N, corpus BLEU and
//! Distinct-1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateSet, Dialogue, TokenId, CANDIDATES_PER_SET, EOU};
use crate::error::{Error, Result};
use crate::models::{DialogueExample, ExampleScore, Model};
use crate::numeric::Vector;

/// Accumulated teacher-forced statistics over a token span.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanStats {
    pub tokens: usize,
    /// Σ −log P over the span.
    pub nll: f64,
    /// Positions whose argmax prediction differs from the reference.
    pub errors: usize,
}

impl SpanStats {
    pub fn add(&mut self, log_prob: f64, hit: bool) {
        self.tokens += 1;
        self.nll -= log_prob;
        self.errors += usize::from(!hit);
    }

    pub fn perplexity(&self) -> Result<f64> {
        if self.tokens == 0 {
            return Err(Error::Empty("evaluation span"));
        }
        Ok((self.nll / self.tokens as f64).exp())
    }

    pub fn word_error_rate(&self) -> Result<f64> {
        if self.tokens == 0 {
            return Err(Error::Empty("evaluation span"));
        }
        Ok(self.errors as f64 / self.tokens as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedStats {
    pub dialogues: usize,
    /// Whole flattened dialogues; absent for seq2seq, which only models
    /// the last turn.
    pub all: Option<SpanStats>,
    /// The last turn's words and end-of-utterance marker.
    pub last: SpanStats,
}

/// Anything producing per-position teacher-forced scores.
pub trait TokenPredictor {
    fn predict(&self, ex: &DialogueExample) -> Result<ExampleScore>;

    /// Whether every position of the dialogue is scored, not just the
    /// last turn.
    fn scores_whole_dialogue(&self) -> bool;
}

impl TokenPredictor for Model {
    fn predict(&self, ex: &DialogueExample) -> Result<ExampleScore> {
        self.score(ex)
    }

    fn scores_whole_dialogue(&self) -> bool {
        !self.kind.is_seq2seq()
    }
}

/// One teacher-forced pass collecting both PPL and WER inputs.
pub fn teacher_forced(model: &dyn TokenPredictor, examples: &[DialogueExample]) -> Result<TeacherForcedStats> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut all = SpanStats::default();
    let mut last = SpanStats::default();
    for ex in examples {
        let s = model.predict(ex)?;
        for ((&pos, &lp), &hit) in s.positions.iter().zip(&s.log_probs).zip(&s.hits) {
            all.add(lp, hit);
            if ex.last_span.contains(&pos) {
                last.add(lp, hit);
            }
        }
    }
    Ok(TeacherForcedStats {
        dialogues: examples.len(),
        all: model.scores_whole_dialogue().then_some(all),
        last,
    })
}

fn span(stats: &TeacherForcedStats, last_only: bool) -> Result<&SpanStats> {
    if last_only {
        Ok(&stats.last)
    } else {
        stats
            .all
            .as_ref()
            .ok_or_else(|| Error::Unsupported("seq2seq models only score the last turn".into()))
    }
}

/// PPL over whole dialogues, or PPL@L over last turns.
pub fn perplexity(model: &dyn TokenPredictor, examples: &[DialogueExample], last_only: bool) -> Result<f64> {
    span(&teacher_forced(model, examples)?, last_only)?.perplexity()
}

/// Teacher-forced top-1 error rate (WER, or WER@L over last turns).
pub fn word_error_rate(model: &dyn TokenPredictor, examples: &[DialogueExample], last_only: bool) -> Result<f64> {
    span(&teacher_forced(model, examples)?, last_only)?.word_error_rate()
}

/// Scores a candidate continuation of a history; higher is better.
pub trait CandidateScorer {
    fn score(&self, history: &Dialogue, candidate: &[TokenId]) -> Result<f64>;
}

impl<F> CandidateScorer for F
where
    F: Fn(&Dialogue, &[TokenId]) -> Result<f64>,
{
    fn score(&self, history: &Dialogue, candidate: &[TokenId]) -> Result<f64> {
        self(history, candidate)
    }
}

pub type ThetaFn<'a> = &'a dyn Fn(&Dialogue) -> Result<Vector>;

/// Conditional log-likelihood of the candidate words plus an
/// end-of-utterance marker, divided by `len^length_exponent`.
pub struct LikelihoodScorer<'a> {
    pub model: &'a Model,
    pub length_exponent: f64,
    /// Topic proportions of a history, for topic-feature models.
    pub theta: Option<ThetaFn<'a>>,
}

impl<'a> LikelihoodScorer<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            length_exponent: 1.0,
            theta: None,
        }
    }
}

impl CandidateScorer for LikelihoodScorer<'_> {
    fn score(&self, history: &Dialogue, candidate: &[TokenId]) -> Result<f64> {
        let theta = match (&self.theta, self.model.kind.uses_topics()) {
            (Some(f), true) => Some(f(history)?),
            (None, true) => return Err(Error::InvalidInput("topic-feature model needs θ".into())),
            _ => None,
        };
        let mut cont = candidate.to_vec();
        cont.push(EOU);
        let ll: f64 = self
            .model
            .continuation_log_probs(&history.context_tokens(), &cont, theta.as_deref())?
            .iter()
            .sum();
        Ok(ll / (cont.len() as f64).powf(self.length_exponent))
    }
}

/// 1-based rank of the truth; ties go to the lower candidate index.
pub fn truth_rank(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count()
}

/// Rank of the truth in every set.
pub fn truth_ranks(scorer: &dyn CandidateScorer, sets: &[CandidateSet]) -> Result<Vec<usize>> {
    if sets.is_empty() {
        return Err(Error::Empty("candidate sets"));
    }
    sets.iter()
        .map(|set| {
            set.validate()?;
            let scores = set
                .candidates
                .iter()
                .map(|c| scorer.score(&set.history, c))
                .collect::<Result<Vec<_>>>()?;
            if scores.iter().any(|s| s.is_nan()) {
                return Err(Error::NonFinite("candidate score".into()));
            }
            Ok(truth_rank(&scores, set.truth_index))
        })
        .collect()
}

pub fn recall_from_ranks(ranks: &[usize], n: usize) -> Result<f64> {
    if !(1..=CANDIDATES_PER_SET).contains(&n) {
        return Err(Error::InvalidInput(format!("recall@{n}: N must lie in 1..=10")));
    }
    if ranks.is_empty() {
        return Err(Error::Empty("candidate sets"));
    }
    Ok(ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64)
}

/// Fraction of sets whose truth ranks in the top `n`.
pub fn recall_at_n(scorer: &dyn CandidateScorer, sets: &[CandidateSet], n: usize) -> Result<f64> {
    recall_from_ranks(&truth_ranks(scorer, sets)?, n)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Per-order clipped matches and totals, plus hypothesis and reference
/// lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<Self> {
        if hyps.len() != refs.len() {
            return Err(Error::InvalidInput(format!(
                "{} hypotheses for {} references",
                hyps.len(),
                refs.len()
            )));
        }
        if hyps.is_empty() {
            return Err(Error::Empty("BLEU corpus"));
        }
        if max_n == 0 {
            return Err(Error::InvalidInput("BLEU order must be positive".into()));
        }
        let mut s = BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        };
        for (h, r) in hyps.iter().zip(refs) {
            s.hyp_len += h.len();
            s.ref_len += r.len();
            for n in 1..=max_n {
                let rc = ngram_counts(r, n);
                for (g, c) in ngram_counts(h, n) {
                    s.matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                }
                s.totals[n - 1] += h.len().saturating_sub(n - 1);
            }
        }
        Ok(s)
    }

    /// Geometric mean of modified precisions times the brevity penalty.
    /// Orders above one with no matches use (0+1)/(total+1).
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_p = 0.0;
        for (n, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let p = if m == 0 && n > 0 {
                1.0 / (t as f64 + 1.0)
            } else {
                m as f64 / t as f64
            };
            log_p += p.ln();
        }
        let bp = if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        bp * (log_p / self.matches.len() as f64).exp()
    }
}

/// Corpus-level BLEU with one reference per hypothesis.
pub fn corpus_bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    Ok(BleuStats::collect(hyps, refs, max_n)?.score())
}

/// Distinct unigrams over total tokens.
pub fn distinct_1<T: Eq + Hash>(generations: &[Vec<T>]) -> Result<f64> {
    let total: usize = generations.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Empty("generated tokens"));
    }
    let distinct: HashSet<&T> = generations.iter().flatten().collect();
    Ok(distinct.len() as f64 / total as f64)
}

/// Named metric values with the counts behind them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn count(&mut self, name: &str, value: usize) {
        self.counts.insert(name.to_string(), value);
    }

    pub fn add_teacher_forced(&mut self, s: &TeacherForcedStats) -> Result<()> {
        self.count("dialogues", s.dialogues);
        if let Some(all) = &s.all {
            self.set("ppl", all.perplexity()?);
            self.set("wer", all.word_error_rate()?);
            self.count("tokens", all.tokens);
        }
        self.set("ppl@L", s.last.perplexity()?);
        self.set("wer@L", s.last.word_error_rate()?);
        self.count("tokens@L", s.last.tokens);
        Ok(())
    }

    /// `metric<TAB>value` lines in name order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k}\t{v:.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_closed_forms() {
        let mut s = SpanStats::default();
        s.add(0.5f64.ln(), true);
        assert!((s.perplexity().unwrap() - 2.0).abs() < 1e-12);
        s.add(0.5f64.ln(), false);
        assert_eq!(s.word_error_rate().unwrap(), 0.5);
        assert!(SpanStats::default().perplexity().is_err());
    }

    #[test]
    fn rank_ties_prefer_lower_index() {
        assert_eq!(truth_rank(&[1.0, 2.0, 2.0, 0.0], 2), 2);
        assert_eq!(truth_rank(&[1.0, 2.0, 2.0, 0.0], 3), 4);
        assert_eq!(truth_rank(&[1.0, 2.0, 2.0, 0.0], 1), 1);
        assert_eq!(truth_rank(&[5.0, 5.0], 0), 1);
        assert_eq!(truth_rank(&[5.0, 5.0], 1), 2);
    }

    #[test]
    fn recall_bounds() {
        let ranks = [1, 3, 10, 2];
        assert_eq!(recall_from_ranks(&ranks, 1).unwrap(), 0.25);
        assert_eq!(recall_from_ranks(&ranks, 3).unwrap(), 0.75);
        assert_eq!(recall_from_ranks(&ranks, 10).unwrap(), 1.0);
        assert!(recall_from_ranks(&ranks, 0).is_err());
        assert!(recall_from_ranks(&ranks, 11).is_err());
    }

    #[test]
    fn distinct_hand_counts() {
        let g = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
        assert_eq!(distinct_1(&[g("a b a"), g("c a")]).unwrap(), 0.6);
        assert_eq!(distinct_1(&[g("x x x x")]).unwrap(), 0.25);
        assert_eq!(distinct_1(&[g("p q"), g("r s")]).unwrap(), 1.0);
        assert!(distinct_1::<u32>(&[vec![], vec![]]).is_err());
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let c = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]];
        assert!((corpus_bleu(&c, &c, 4).unwrap() - 1.0).abs() < 1e-12);
        let d = vec![vec![10, 11, 12, 13, 14], vec![15, 16, 17, 18]];
        assert_eq!(corpus_bleu(&d, &c, 4).unwrap(), 0.0);
        assert!(corpus_bleu::<u32>(&[], &[], 4).is_err());
        assert!(corpus_bleu(&c, &c[..1], 4).is_err());
    }

    #[test]
    fn bleu_brevity_penalty() {
        // Perfect precision at every order, hypothesis 4 of 8 tokens.
        let h = vec![vec![1, 2, 3, 4]];
        let r = vec![vec![1, 2, 3, 4, 5, 6, 7, 8]];
        assert!((corpus_bleu(&h, &r, 4).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn report_tsv() {
        let mut r = EvalReport::default();
        r.set("ppl", 12.5);
        r.set("bleu", 0.25);
        assert_eq!(r.to_tsv(), "metric\tvalue\nbleu\t0.250000\nppl\t12.500000\n");
    }
}
