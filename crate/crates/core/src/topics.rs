//! LDA by collapsed Gibbs sampling, topic-proportion inference, topic
//! similarity, and the λ-weighted candidate reranker with its grid tuner.
//!
//! Topic model file:
//!
//! ```text
//! magic        8 bytes   "ARNNTOPC"
//! version      u32 LE    TOPIC_MODEL_VERSION
//! header_len   u32 LE
//! header       UTF-8     "key=value\n": k, vocab, eta, xi (comma-separated),
//!                        seed, sweeps
//! phi          k*vocab f64 LE, row-major (one row per topic)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_reserved, TokenId};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, recall_from_ranks, truth_rank};
use crate::numeric::{Matrix, Vector};

pub const TOPIC_MODEL_MAGIC: &[u8; 8] = b"ARNNTOPC";
pub const TOPIC_MODEL_VERSION: u32 = 1;

/// Topic counts searched by the tuner.
pub const K_GRID: [usize; 4] = [5, 10, 20, 50];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    /// Topic-word Dirichlet parameter.
    pub eta: f64,
    /// Document-topic Dirichlet parameter per topic; `None` means 50/K.
    pub xi: Option<f64>,
    pub sweeps: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            eta: 0.01,
            xi: None,
            sweeps: 200,
            seed: 1,
        }
    }

    pub fn xi_value(&self) -> f64 {
        self.xi.unwrap_or(50.0 / self.k as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocab: usize,
    pub eta: f64,
    pub xi: Vector,
    pub seed: u64,
    pub sweeps: usize,
    /// K×V topic-word distributions.
    pub phi: Matrix,
}

/// Diagnostics from a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LdaTrace {
    pub skipped_docs: usize,
    /// Training-data log-likelihood at the point estimates after each sweep.
    pub log_likelihood: Vec<f64>,
}

/// The words of a document that the topic model sees: reserved ids and
/// ids outside the vocabulary are dropped.
pub fn lda_document(tokens: &[TokenId], vocab: usize) -> Vec<TokenId> {
    tokens
        .iter()
        .copied()
        .filter(|&t| !is_reserved(t) && t < vocab)
        .collect()
}

fn sample(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampling over token-topic assignments.
pub fn lda_train(docs: &[Vec<TokenId>], vocab: usize, cfg: &LdaConfig) -> Result<(TopicModel, LdaTrace)> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidInput("topic count must be positive".into()));
    }
    let xi = cfg.xi_value();
    if !(cfg.eta > 0.0 && xi > 0.0 && cfg.eta.is_finite() && xi.is_finite()) {
        return Err(Error::InvalidInput("Dirichlet parameters must be positive".into()));
    }
    if vocab == 0 {
        return Err(Error::InvalidInput("empty vocabulary".into()));
    }
    let mut trace = LdaTrace::default();
    let docs: Vec<Vec<TokenId>> = docs
        .iter()
        .map(|d| lda_document(d, vocab))
        .filter(|d| {
            let keep = !d.is_empty();
            trace.skipped_docs += usize::from(!keep);
            keep
        })
        .collect();
    if docs.is_empty() {
        return Err(Error::Empty("topic-model corpus"));
    }
    let veta = vocab as f64 * cfg.eta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dk = vec![0usize; docs.len() * k];
    let mut n_kw = vec![0usize; k * vocab];
    let mut n_k = vec![0usize; k];
    let mut z: Vec<Vec<usize>> = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            doc.iter()
                .map(|&w| {
                    let t = rng.gen_range(0..k);
                    n_dk[d * k + t] += 1;
                    n_kw[t * vocab + w] += 1;
                    n_k[t] += 1;
                    t
                })
                .collect()
        })
        .collect();
    let mut p = vec![0.0; k];
    for _ in 0..cfg.sweeps {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_dk[d * k + old] -= 1;
                n_kw[old * vocab + w] -= 1;
                n_k[old] -= 1;
                for t in 0..k {
                    p[t] = (n_dk[d * k + t] as f64 + xi) * (n_kw[t * vocab + w] as f64 + cfg.eta)
                        / (n_k[t] as f64 + veta);
                }
                let new = sample(&mut rng, &p);
                z[d][i] = new;
                n_dk[d * k + new] += 1;
                n_kw[new * vocab + w] += 1;
                n_k[new] += 1;
            }
        }
        trace
            .log_likelihood
            .push(log_likelihood(&docs, &n_dk, &n_kw, &n_k, k, vocab, cfg.eta, xi));
    }
    let phi = phi_from_counts(&n_kw, &n_k, k, vocab, cfg.eta);
    Ok((
        TopicModel {
            k,
            vocab,
            eta: cfg.eta,
            xi: vec![xi; k],
            seed: cfg.seed,
            sweeps: cfg.sweeps,
            phi,
        },
        trace,
    ))
}

fn phi_from_counts(n_kw: &[usize], n_k: &[usize], k: usize, vocab: usize, eta: f64) -> Matrix {
    let veta = vocab as f64 * eta;
    let mut phi = Matrix::zeros(k, vocab);
    for t in 0..k {
        for w in 0..vocab {
            phi.set(t, w, (n_kw[t * vocab + w] as f64 + eta) / (n_k[t] as f64 + veta));
        }
    }
    phi
}

#[allow(clippy::too_many_arguments)]
fn log_likelihood(
    docs: &[Vec<TokenId>],
    n_dk: &[usize],
    n_kw: &[usize],
    n_k: &[usize],
    k: usize,
    vocab: usize,
    eta: f64,
    xi: f64,
) -> f64 {
    let veta = vocab as f64 * eta;
    let mut ll = 0.0;
    for (d, doc) in docs.iter().enumerate() {
        let denom = doc.len() as f64 + k as f64 * xi;
        for &w in doc {
            let mut p = 0.0;
            for t in 0..k {
                let theta = (n_dk[d * k + t] as f64 + xi) / denom;
                let phi = (n_kw[t * vocab + w] as f64 + eta) / (n_k[t] as f64 + veta);
                p += theta * phi;
            }
            ll += p.ln();
        }
    }
    ll
}

/// Inferred topic proportions.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    pub theta: Vector,
    /// True when the document had no usable words and θ̂ is the prior mean.
    pub prior_fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub sweeps: usize,
    pub burn_in: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            sweeps: 50,
            burn_in: 10,
        }
    }
}

fn doc_seed(seed: u64, doc: &[TokenId]) -> u64 {
    // FNV-1a over the token ids, so a document's estimate does not depend
    // on what else is being inferred.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &t in doc {
        for b in (t as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl TopicModel {
    pub fn prior_mean(&self) -> Vector {
        let s: f64 = self.xi.iter().sum();
        self.xi.iter().map(|x| x / s).collect()
    }

    /// Gibbs inference with φ frozen; θ̂ averages the smoothed assignment
    /// proportions over the sweeps after burn-in.
    pub fn infer_theta(&self, tokens: &[TokenId], cfg: &InferConfig) -> ThetaEstimate {
        let doc = lda_document(tokens, self.vocab);
        if doc.is_empty() || cfg.sweeps == 0 {
            return ThetaEstimate {
                theta: self.prior_mean(),
                prior_fallback: true,
            };
        }
        let k = self.k;
        let mut rng = ChaCha8Rng::seed_from_u64(doc_seed(self.seed, &doc));
        let mut n = vec![0usize; k];
        let mut p = vec![0.0; k];
        let mut z: Vec<usize> = doc
            .iter()
            .map(|&w| {
                for t in 0..k {
                    p[t] = self.xi[t] * self.phi.get(t, w);
                }
                let t = sample(&mut rng, &p);
                n[t] += 1;
                t
            })
            .collect();
        let xs: f64 = self.xi.iter().sum();
        let denom = doc.len() as f64 + xs;
        let mut acc = vec![0.0; k];
        let mut samples = 0;
        for sweep in 0..cfg.sweeps {
            for (i, &w) in doc.iter().enumerate() {
                n[z[i]] -= 1;
                for t in 0..k {
                    p[t] = (n[t] as f64 + self.xi[t]) * self.phi.get(t, w);
                }
                z[i] = sample(&mut rng, &p);
                n[z[i]] += 1;
            }
            if sweep >= cfg.burn_in.min(cfg.sweeps - 1) {
                for t in 0..k {
                    acc[t] += (n[t] as f64 + self.xi[t]) / denom;
                }
                samples += 1;
            }
        }
        let mut theta: Vector = acc.iter().map(|a| a / samples as f64).collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|v| *v /= s);
        ThetaEstimate {
            theta,
            prior_fallback: false,
        }
    }

    /// The `n` most probable words of each topic.
    pub fn top_words(&self, n: usize) -> Vec<Vec<(TokenId, f64)>> {
        (0..self.k)
            .map(|t| {
                let mut row: Vec<(TokenId, f64)> = self.phi.row(t).iter().copied().enumerate().collect();
                row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                row.truncate(n);
                row
            })
            .collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let xi: Vec<String> = self.xi.iter().map(|x| x.to_string()).collect();
        let header = format!(
            "k={}\nvocab={}\neta={}\nxi={}\nseed={}\nsweeps={}\n",
            self.k,
            self.vocab,
            self.eta,
            xi.join(","),
            self.seed,
            self.sweeps
        );
        w.write_all(TOPIC_MODEL_MAGIC)?;
        w.write_all(&TOPIC_MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for v in self.phi.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("topic model: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TOPIC_MODEL_MAGIC {
            return Err(bad("not a topic model file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != TOPIC_MODEL_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4)?;
        let mut text = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| bad("header is not UTF-8".into()))?;
        let fields: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        fn field<T: FromStr>(fields: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
            fields
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("topic model: bad or missing {key}")))
        }
        let k: usize = field(&fields, "k")?;
        let vocab: usize = field(&fields, "vocab")?;
        let xi = fields
            .get("xi")
            .ok_or_else(|| bad("missing xi".into()))?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad xi entry {s:?}"))))
            .collect::<Result<Vector>>()?;
        if k == 0 || vocab == 0 || xi.len() != k {
            return Err(bad(format!("inconsistent shape k={k} vocab={vocab} xi={}", xi.len())));
        }
        let mut data = vec![0.0; k * vocab];
        let mut b8 = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(Self {
            k,
            vocab,
            eta: field(&fields, "eta")?,
            xi,
            seed: field(&fields, "seed")?,
            sweeps: field(&fields, "sweeps")?,
            phi: Matrix::from_vec(k, vocab, data)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    /// Negative Jensen-Shannon divergence (natural log).
    NegJs,
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "neg-js" => Ok(Self::NegJs),
            _ => Err(Error::InvalidInput(format!("unknown similarity metric {s:?}"))),
        }
    }
}

pub fn topic_similarity(a: &[f64], b: &[f64], metric: SimilarityMetric) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("topic vectors of length {} and {}", a.len(), b.len())));
    }
    match metric {
        SimilarityMetric::Cosine => {
            let na = crate::numeric::norm(a);
            let nb = crate::numeric::norm(b);
            if na == 0.0 || nb == 0.0 {
                return Err(Error::InvalidInput("zero topic vector".into()));
            }
            Ok(crate::numeric::dot(a, b) / (na * nb))
        }
        SimilarityMetric::NegJs => {
            let kl = |p: &[f64], q: &[f64]| -> f64 {
                p.iter()
                    .zip(q)
                    .filter(|(x, _)| **x > 0.0)
                    .map(|(x, y)| x * (x / y).ln())
                    .sum()
            };
            let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
            Ok(-(0.5 * kl(a, &m) + 0.5 * kl(b, &m)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub lambda: f64,
    pub metric: SimilarityMetric,
    pub infer: InferConfig,
}

impl RerankConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self {
            lambda,
            metric: SimilarityMetric::Cosine,
            infer: InferConfig::default(),
        })
    }
}

/// A candidate's position after reranking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    /// Index in the input order.
    pub index: usize,
    pub similarity: f64,
    /// Standardised likelihood score.
    pub likelihood_z: f64,
    /// `λ·similarity + (1−λ)·likelihood_z`
    pub score: f64,
}

/// Zero-mean, unit-variance rescaling; all zeros when the values do not
/// vary.
pub fn z_scores(x: &[f64]) -> Vector {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// Mixes similarities with standardised likelihoods and sorts descending;
/// ties keep the input order.
pub fn rerank_scores(similarities: &[f64], likelihoods: &[f64], lambda: f64) -> Result<Vec<Reranked>> {
    if similarities.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    if similarities.len() != likelihoods.len() {
        return Err(Error::Shape("one similarity per likelihood".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    if likelihoods.iter().chain(similarities).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rerank input".into()));
    }
    let z = z_scores(likelihoods);
    let mut out: Vec<Reranked> = (0..z.len())
        .map(|i| Reranked {
            index: i,
            similarity: similarities[i],
            likelihood_z: z[i],
            score: lambda * similarities[i] + (1.0 - lambda) * z[i],
        })
        .collect();
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.index.cmp(&b.index)));
    Ok(out)
}

/// Reranks candidate continuations of a history. `likelihoods` are the
/// candidates' length-normalised log-likelihoods.
pub fn rerank(
    model: &TopicModel,
    history: &[TokenId],
    candidates: &[Vec<TokenId>],
    likelihoods: &[f64],
    cfg: &RerankConfig,
) -> Result<Vec<Reranked>> {
    let h = model.infer_theta(history, &cfg.infer).theta;
    let sims = candidates
        .iter()
        .map(|c| topic_similarity(&h, &model.infer_theta(c, &cfg.infer).theta, cfg.metric))
        .collect::<Result<Vec<_>>>()?;
    rerank_scores(&sims, likelihoods, cfg.lambda)
}

/// `{0, step, 2·step, …, 1}` computed as `i/n` to keep grid values exact.
pub fn lambda_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// One dev history with its generated candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneItem {
    pub history: Vec<TokenId>,
    pub candidates: Vec<Vec<TokenId>>,
    pub likelihoods: Vec<f64>,
    /// Reference continuation, for BLEU.
    pub reference: Vec<TokenId>,
    /// Index of the true continuation among the candidates, for recall.
    pub truth: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Bleu,
    RecallAt(usize),
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "bleu" {
            return Ok(Self::Bleu);
        }
        s.strip_prefix("recall@")
            .and_then(|n| n.parse().ok())
            .map(Self::RecallAt)
            .ok_or_else(|| Error::InvalidInput(format!("unknown objective {s:?}")))
    }
}

fn objective_value(items: &[TuneItem], orders: &[Vec<Reranked>], objective: Objective) -> Result<f64> {
    match objective {
        Objective::Bleu => {
            let hyps: Vec<Vec<TokenId>> = items
                .iter()
                .zip(orders)
                .map(|(it, o)| it.candidates[o[0].index].clone())
                .collect();
            let refs: Vec<Vec<TokenId>> = items.iter().map(|it| it.reference.clone()).collect();
            corpus_bleu(&hyps, &refs, 4)
        }
        Objective::RecallAt(n) => {
            let ranks = items
                .iter()
                .zip(orders)
                .map(|(it, o)| {
                    let t = it
                        .truth
                        .ok_or_else(|| Error::InvalidInput("recall objective needs truth indices".into()))?;
                    let mut score = vec![0.0; o.len()];
                    for r in o {
                        score[r.index] = r.score;
                    }
                    Ok(truth_rank(&score, t))
                })
                .collect::<Result<Vec<_>>>()?;
            recall_from_ranks(&ranks, n)
        }
    }
}

/// Objective at one grid point, reranking every item from scratch.
pub fn evaluate_point(
    items: &[TuneItem],
    model: &TopicModel,
    cfg: &RerankConfig,
    objective: Objective,
) -> Result<f64> {
    let orders = items
        .iter()
        .map(|it| rerank(model, &it.history, &it.candidates, &it.likelihoods, cfg))
        .collect::<Result<Vec<_>>>()?;
    objective_value(items, &orders, objective)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub table: Vec<GridRow>,
    pub best: GridRow,
}

impl TuneResult {
    /// `K<TAB>lambda<TAB>objective` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("K\tlambda\tobjective\n");
        for r in &self.table {
            out.push_str(&format!("{}\t{:.2}\t{:.6}\n", r.k, r.lambda, r.objective));
        }
        out
    }
}

/// Exhaustive search over topic models (one per K) and λ values. Ties go to
/// the smaller K, then the smaller λ.
pub fn tune_rerank(
    items: &[TuneItem],
    models: &[TopicModel],
    lambdas: &[f64],
    objective: Objective,
    metric: SimilarityMetric,
    infer: &InferConfig,
) -> Result<TuneResult> {
    if items.is_empty() || models.is_empty() || lambdas.is_empty() {
        return Err(Error::Empty("tuning grid or dev set"));
    }
    let mut table = Vec::new();
    for model in models {
        let sims = items
            .iter()
            .map(|it| {
                let h = model.infer_theta(&it.history, infer).theta;
                it.candidates
                    .iter()
                    .map(|c| topic_similarity(&h, &model.infer_theta(c, infer).theta, metric))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for &lambda in lambdas {
            let orders = items
                .iter()
                .zip(&sims)
                .map(|(it, s)| rerank_scores(s, &it.likelihoods, lambda))
                .collect::<Result<Vec<_>>>()?;
            table.push(GridRow {
                k: model.k,
                lambda,
                objective: objective_value(items, &orders, objective)?,
            });
        }
    }
    let mut best = table[0];
    for r in &table[1..] {
        let better = r.objective > best.objective
            || (r.objective == best.objective && (r.k, r.lambda) < (best.k, best.lambda));
        if better {
            best = *r;
        }
    }
    Ok(TuneResult { table, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_hand_values() {
        let c = SimilarityMetric::Cosine;
        assert!((topic_similarity(&[0.5, 0.5], &[1.0, 0.0], c).unwrap() - 0.707_106_781_186_547_5).abs() < 1e-12);
        assert!((topic_similarity(&[0.2, 0.8], &[0.2, 0.8], c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(topic_similarity(&[1.0, 0.0], &[0.0, 1.0], c).unwrap(), 0.0);
        assert!(topic_similarity(&[0.0, 0.0], &[0.0, 1.0], c).is_err());
        assert!(topic_similarity(&[1.0], &[0.0, 1.0], c).is_err());
    }

    #[test]
    fn neg_js_bounds() {
        let m = SimilarityMetric::NegJs;
        assert!(topic_similarity(&[0.3, 0.7], &[0.3, 0.7], m).unwrap().abs() < 1e-15);
        let d = topic_similarity(&[1.0, 0.0], &[0.0, 1.0], m).unwrap();
        assert!((d + std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!("neg-js".parse::<SimilarityMetric>().unwrap(), m);
    }

    #[test]
    fn z_scores_are_standardised() {
        let z = z_scores(&[1.0, 2.0, 3.0]);
        let s = (2.0f64 / 3.0).sqrt();
        assert!((z[0] + 1.0 / s).abs() < 1e-12 && z[1].abs() < 1e-12);
        assert_eq!(z_scores(&[4.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(z_scores(&[-3.0]), vec![0.0]);
    }

    #[test]
    fn hand_computed_three_candidate_mix() {
        // ℓ = (-1, -2, -3) → z = (1.2247, 0, -1.2247); S = (0.1, 0.9, 0.95).
        // λ = 0.6: S̄ = 0.5499, 0.54, 0.0801 → order 0, 1, 2.
        // λ = 0.7: S̄ = 0.4374, 0.63, 0.2976 → order 1, 0, 2.
        let ll = [-1.0, -2.0, -3.0];
        let s = [0.1, 0.9, 0.95];
        let order = |l| rerank_scores(&s, &ll, l).unwrap().iter().map(|r| r.index).collect::<Vec<_>>();
        assert_eq!(order(0.6), vec![0, 1, 2]);
        assert_eq!(order(0.7), vec![1, 0, 2]);
        let r = rerank_scores(&s, &ll, 0.6).unwrap();
        let z0 = 1.5f64.sqrt();
        assert!((r[0].score - (0.06 + 0.4 * z0)).abs() < 1e-12);
        assert!(rerank_scores(&[], &[], 0.5).is_err());
        assert!(rerank_scores(&s, &ll, 1.5).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        let r = rerank_scores(&[0.5, 0.5, 0.5], &[-1.0, -1.0, -1.0], 0.3).unwrap();
        assert_eq!(r.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn lambda_grid_values() {
        let g = lambda_grid(20);
        assert_eq!(g.len(), 21);
        assert_eq!(g[9], 0.45);
        assert_eq!(g[20], 1.0);
        assert!(RerankConfig::new(0.45).is_ok());
        assert!(RerankConfig::new(-0.1).is_err());
    }

    #[test]
    fn objective_names() {
        assert_eq!("bleu".parse::<Objective>().unwrap(), Objective::Bleu);
        assert_eq!("recall@3".parse::<Objective>().unwrap(), Objective::RecallAt(3));
        assert!("recall".parse::<Objective>().is_err());
    }
}
