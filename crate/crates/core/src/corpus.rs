//! Dialogue corpora: the text format, vocabulary construction, the flattened
//! single-sequence view used by the language models, data splits and
//! negative-candidate sampling for recall@N.
//!
//! Corpus file: UTF-8, one dialogue per line. Utterances are separated by
//! the three bytes `" | "`; tokens inside an utterance are separated by
//! whitespace. Speakers alternate A, B, A, ... starting with A. Blank lines
//! are ignored.
//!
//! Vocabulary file: UTF-8, one token per line, no reserved tokens. The token
//! on line `n` (0-based) has id `NUM_RESERVED + n`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const UNK: TokenId = 0;
pub const PAD: TokenId = 1;
pub const EOU: TokenId = 2;
pub const EOD: TokenId = 3;
pub const SPEAKER_A: TokenId = 4;
pub const SPEAKER_B: TokenId = 5;
pub const NUM_RESERVED: usize = 6;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<unk>", "<pad>", "</u>", "</d>", "<A>", "<B>"];

pub const UTTERANCE_SEPARATOR: &str = " | ";

pub fn is_reserved(id: TokenId) -> bool {
    id < NUM_RESERVED
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn marker(self) -> TokenId {
        match self {
            Speaker::A => SPEAKER_A,
            Speaker::B => SPEAKER_B,
        }
    }

    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }

    fn from_marker(id: TokenId) -> Option<Speaker> {
        match id {
            SPEAKER_A => Some(Speaker::A),
            SPEAKER_B => Some(Speaker::B),
            _ => None,
        }
    }

    /// Speaker of turn `i` under implicit alternation.
    pub fn for_turn(i: usize) -> Speaker {
        if i.is_multiple_of(2) {
            Speaker::A
        } else {
            Speaker::B
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<TokenId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dialogue {
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    /// Builds a dialogue with alternating speakers starting from A.
    pub fn from_turns(turns: Vec<Vec<TokenId>>) -> Self {
        Self {
            utterances: turns
                .into_iter()
                .enumerate()
                .map(|(i, tokens)| Utterance {
                    speaker: Speaker::for_turn(i),
                    tokens,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn next_speaker(&self) -> Speaker {
        self.utterances
            .last()
            .map_or(Speaker::A, |u| u.speaker.other())
    }

    /// All turns except the last.
    pub fn prefix(&self) -> Dialogue {
        let n = self.utterances.len().saturating_sub(1);
        Dialogue {
            utterances: self.utterances[..n].to_vec(),
        }
    }

    pub fn last_utterance(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        for u in &self.utterances {
            if let Some(&t) = u.tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab: vocab_size,
                });
            }
        }
        Ok(())
    }

    /// The conditioning prefix for generating the next turn: every turn
    /// flattened, without the end-of-dialogue marker, followed by the next
    /// speaker's marker.
    pub fn context_tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::new();
        for u in &self.utterances {
            push_turn(&mut out, u);
        }
        out.push(self.next_speaker().marker());
        out
    }

    /// Content tokens of the whole dialogue, reserved ids removed.
    pub fn content_tokens(&self) -> Vec<TokenId> {
        self.utterances
            .iter()
            .flat_map(|u| u.tokens.iter().copied())
            .filter(|&t| !is_reserved(t))
            .collect()
    }
}

fn push_turn(out: &mut Vec<TokenId>, u: &Utterance) {
    out.push(u.speaker.marker());
    out.extend_from_slice(&u.tokens);
    out.push(EOU);
}

/// `[speaker, tokens.., EOU]` per turn, then `EOD`.
pub fn flatten(d: &Dialogue) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(
        d.utterances.iter().map(|u| u.tokens.len() + 2).sum::<usize>() + 1,
    );
    for u in &d.utterances {
        push_turn(&mut out, u);
    }
    out.push(EOD);
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(seq: &[TokenId]) -> Result<Dialogue> {
    let bad = |msg: &str| Error::InvalidInput(format!("not a flattened dialogue: {msg}"));
    let (&last, body) = seq.split_last().ok_or_else(|| bad("empty sequence"))?;
    if last != EOD {
        return Err(bad("missing end-of-dialogue marker"));
    }
    let mut utterances = Vec::new();
    let mut i = 0;
    while i < body.len() {
        let speaker = Speaker::from_marker(body[i]).ok_or_else(|| bad("expected speaker marker"))?;
        i += 1;
        let start = i;
        while i < body.len() && body[i] != EOU {
            if Speaker::from_marker(body[i]).is_some() || body[i] == EOD {
                return Err(bad("marker inside utterance"));
            }
            i += 1;
        }
        if i == body.len() {
            return Err(bad("unterminated utterance"));
        }
        utterances.push(Utterance {
            speaker,
            tokens: body[start..i].to_vec(),
        });
        i += 1;
    }
    Ok(Dialogue { utterances })
}

/// Bidirectional token map. Reserved tokens occupy ids `0..NUM_RESERVED`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Vocabulary holding the reserved block followed by `words` in order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut ids: HashMap<String, TokenId> =
            tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::InvalidInput(format!("invalid vocabulary token {w:?}")));
            }
            if ids.contains_key(&w) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {w:?}")));
            }
            ids.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, raw: &RawDialogue) -> Dialogue {
        Dialogue::from_turns(raw.iter().map(|u| self.encode_tokens(u)).collect())
    }

    /// Space-joined tokens with markers dropped.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&t| !matches!(t, EOU | EOD | SPEAKER_A | SPEAKER_B | PAD))
            .map(|&t| self.token(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Labels for every id, markers included.
    pub fn labels(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&t| self.token(t).unwrap_or("<unk>").to_string())
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let w = line.trim_end_matches('\r');
            if w.is_empty() {
                return Err(Error::Format {
                    line: i + 1,
                    msg: "empty vocabulary entry".into(),
                });
            }
            if RESERVED_TOKENS.contains(&w) {
                return Err(Error::Format {
                    line: i + 1,
                    msg: format!("reserved token {w} in vocabulary file"),
                });
            }
            words.push(w.to_string());
        }
        Self::from_words(words).map_err(|e| Error::Format {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Hex SHA-256 over the vocabulary file bytes; binds checkpoints to the
    /// vocabulary they were trained with.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Keeps the `max_size - NUM_RESERVED` most frequent tokens; ties go to the
/// token seen first.
pub fn build_vocab<'a, I, S>(streams: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if max_size <= NUM_RESERVED {
        return Err(Error::InvalidInput(format!(
            "max vocabulary size {max_size} leaves no room beyond {NUM_RESERVED} reserved tokens"
        )));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for stream in streams {
        for tok in stream {
            let t = tok.as_ref();
            if RESERVED_TOKENS.contains(&t) {
                continue;
            }
            let e = counts.entry(t).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocabulary::from_words(ranked.into_iter().map(|(t, _, _)| t.to_string()))
}

/// Utterances as raw token strings.
pub type RawDialogue = Vec<Vec<String>>;

pub fn parse_dialogue_line(line: &str) -> std::result::Result<RawDialogue, String> {
    let line = line.trim_end_matches(['\n', '\r']);
    let mut out = Vec::new();
    for utt in line.split(UTTERANCE_SEPARATOR) {
        let toks: Vec<String> = utt.split_whitespace().map(str::to_string).collect();
        for t in &toks {
            if t.contains('|') {
                return Err(format!("stray separator in token {t:?}"));
            }
            if RESERVED_TOKENS.contains(&t.as_str()) {
                return Err(format!("reserved token {t} in corpus text"));
            }
        }
        out.push(toks);
    }
    Ok(out)
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<RawDialogue>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_dialogue_line(&line).map_err(|msg| Error::Format { line: i + 1, msg })?);
    }
    Ok(out)
}

pub fn format_dialogue_line(d: &RawDialogue) -> String {
    d.iter()
        .map(|u| u.join(" "))
        .collect::<Vec<_>>()
        .join(UTTERANCE_SEPARATOR)
}

pub fn write_corpus(dialogues: &[RawDialogue]) -> String {
    let mut s = String::new();
    for d in dialogues {
        s.push_str(&format_dialogue_line(d));
        s.push('\n');
    }
    s
}

pub fn decode_dialogue(vocab: &Vocabulary, d: &Dialogue) -> RawDialogue {
    d.utterances
        .iter()
        .map(|u| {
            u.tokens
                .iter()
                .map(|&t| vocab.token(t).unwrap_or("<unk>").to_string())
                .collect()
        })
        .collect()
}

/// Out-of-vocabulary statistics for a raw split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnkStats {
    pub tokens: usize,
    pub unknown: usize,
}

impl UnkStats {
    pub fn rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.unknown as f64 / self.tokens as f64
        }
    }
}

pub fn unk_stats(vocab: &Vocabulary, dialogues: &[RawDialogue]) -> UnkStats {
    let mut s = UnkStats::default();
    for d in dialogues {
        for u in d {
            for t in u {
                s.tokens += 1;
                if vocab.get(t).is_none() {
                    s.unknown += 1;
                }
            }
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle then contiguous split. Train and dev sizes are rounded,
/// test takes the remainder.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<Splits<T>> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidInput(format!("bad split ratios {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("split ratios sum to zero".into()));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((n as f64) * ratios[0] / total).round() as usize;
    let n_dev = (((n as f64) * ratios[1] / total).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok(Splits {
        train: pick(&idx[..n_train]),
        dev: pick(&idx[n_train..n_train + n_dev]),
        test: pick(&idx[n_train + n_dev..]),
    })
}

pub const CANDIDATES_PER_SET: usize = 10;

/// Ten continuations of one history: the true last turn plus nine
/// negatives drawn from other dialogues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub history: Dialogue,
    pub candidates: Vec<Vec<TokenId>>,
    pub truth_index: usize,
}

impl CandidateSet {
    pub fn truth(&self) -> &[TokenId] {
        &self.candidates[self.truth_index]
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Vec<TokenId>> {
        self.candidates
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.truth_index)
            .map(|(_, c)| c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() != CANDIDATES_PER_SET || self.truth_index >= CANDIDATES_PER_SET {
            return Err(Error::InvalidInput(format!(
                "candidate set with {} candidates and truth index {}",
                self.candidates.len(),
                self.truth_index
            )));
        }
        Ok(())
    }
}

/// Samples nine negatives for the last turn of `corpus[target]` uniformly
/// without replacement from the distinct utterances of the other dialogues,
/// excluding any utterance identical to the truth.
pub fn sample_candidates(corpus: &[Dialogue], target: usize, seed: u64) -> Result<CandidateSet> {
    let d = corpus
        .get(target)
        .ok_or_else(|| Error::InvalidInput(format!("dialogue index {target} out of range")))?;
    if d.len() < 2 {
        return Err(Error::InvalidInput("dialogue needs at least two turns".into()));
    }
    let truth = d.last_utterance().map(|u| u.tokens.clone()).unwrap_or_default();
    let pool = negative_pool(corpus, target, &truth);
    let needed = CANDIDATES_PER_SET - 1;
    if pool.len() < needed {
        let distinct: HashSet<&[TokenId]> = corpus
            .iter()
            .flat_map(|d| d.utterances.iter().map(|u| u.tokens.as_slice()))
            .collect();
        return Err(Error::CorpusTooSmall {
            needed: CANDIDATES_PER_SET,
            found: distinct.len().min(pool.len() + 1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, pool.len(), needed);
    let truth_index = rng.gen_range(0..CANDIDATES_PER_SET);
    let mut candidates: Vec<Vec<TokenId>> = chosen.iter().map(|i| pool[i].to_vec()).collect();
    candidates.insert(truth_index, truth);
    Ok(CandidateSet {
        history: d.prefix(),
        candidates,
        truth_index,
    })
}

fn negative_pool<'a>(corpus: &'a [Dialogue], target: usize, truth: &[TokenId]) -> Vec<&'a [TokenId]> {
    let mut seen: HashSet<&[TokenId]> = HashSet::new();
    let mut pool = Vec::new();
    for (i, d) in corpus.iter().enumerate() {
        if i == target {
            continue;
        }
        for u in &d.utterances {
            let t = u.tokens.as_slice();
            if t != truth && seen.insert(t) {
                pool.push(t);
            }
        }
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn frequency_cutoff_maps_rest_to_unk() {
        let c = [raw("a a b")];
        let v = build_vocab(c.iter().map(|s| s.as_slice()), NUM_RESERVED + 1).unwrap();
        assert_eq!(v.len(), NUM_RESERVED + 1);
        assert_eq!(v.id("a"), NUM_RESERVED);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn no_truncation_keeps_everything() {
        let c = [raw("p q r s t")];
        let v = build_vocab(c.iter().map(|s| s.as_slice()), 100).unwrap();
        assert_eq!(v.len(), NUM_RESERVED + 5);
        for t in ["p", "q", "r", "s", "t"] {
            assert_ne!(v.id(t), UNK);
        }
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let c = [raw("z y x y z x w")];
        let v = build_vocab(c.iter().map(|s| s.as_slice()), NUM_RESERVED + 2).unwrap();
        assert_eq!(v.words(), &["z".to_string(), "y".to_string()]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c: [Vec<String>; 1] = [vec![]];
        assert!(matches!(
            build_vocab(c.iter().map(|s| s.as_slice()), 10),
            Err(Error::Empty(_))
        ));
        assert!(build_vocab(c.iter().map(|s| s.as_slice()), NUM_RESERVED).is_err());
    }

    #[test]
    fn zipf_corpus_keeps_top_k() {
        use rand::distributions::{Distribution, WeightedIndex};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_types = 200;
        let weights: Vec<f64> = (1..=n_types).map(|r| 1.0 / r as f64).collect();
        let dist = WeightedIndex::new(&weights).unwrap();
        let streams: Vec<Vec<String>> = (0..50)
            .map(|_| (0..40).map(|_| format!("w{}", dist.sample(&mut rng))).collect())
            .collect();
        let k = 30;
        let v = build_vocab(streams.iter().map(|s| s.as_slice()), NUM_RESERVED + k).unwrap();

        // Oracle: plain counting with first-occurrence tie-break.
        let mut counts: Vec<(String, usize, usize)> = Vec::new();
        for t in streams.iter().flatten() {
            match counts.iter_mut().find(|(w, _, _)| w == t) {
                Some(e) => e.1 += 1,
                None => {
                    let o = counts.len();
                    counts.push((t.clone(), 1, o));
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let expected: HashSet<String> = counts.iter().take(k).map(|c| c.0.clone()).collect();
        let got: HashSet<String> = v.words().iter().cloned().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn flatten_layout() {
        let d = Dialogue::from_turns(vec![vec![10, 11, 12], vec![13, 14]]);
        let f = flatten(&d);
        assert_eq!(f.len(), 3 + 2 + 2 * 2 + 1);
        assert_eq!(
            f,
            vec![SPEAKER_A, 10, 11, 12, EOU, SPEAKER_B, 13, 14, EOU, EOD]
        );
    }

    #[test]
    fn empty_turn_is_marker_pair() {
        let d = Dialogue::from_turns(vec![vec![], vec![7]]);
        assert_eq!(flatten(&d)[..2], [SPEAKER_A, EOU]);
    }

    #[test]
    fn context_ends_with_next_speaker() {
        let d = Dialogue::from_turns(vec![vec![9], vec![8]]);
        assert_eq!(
            d.context_tokens(),
            vec![SPEAKER_A, 9, EOU, SPEAKER_B, 8, EOU, SPEAKER_A]
        );
    }

    #[test]
    fn unflatten_rejects_garbage() {
        assert!(unflatten(&[]).is_err());
        assert!(unflatten(&[SPEAKER_A, 9]).is_err());
        assert!(unflatten(&[9, EOU, EOD]).is_err());
        assert!(unflatten(&[SPEAKER_A, 9, EOD]).is_err());
    }

    fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
        prop::collection::vec(
            (any::<bool>(), prop::collection::vec(NUM_RESERVED..60usize, 0..8)),
            0..6,
        )
        .prop_map(|turns| Dialogue {
            utterances: turns
                .into_iter()
                .map(|(a, tokens)| Utterance {
                    speaker: if a { Speaker::A } else { Speaker::B },
                    tokens,
                })
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn flatten_round_trips(d in arb_dialogue()) {
            prop_assert_eq!(unflatten(&flatten(&d)).unwrap(), d);
        }

        #[test]
        fn flatten_is_injective(a in arb_dialogue(), b in arb_dialogue()) {
            prop_assume!(a != b);
            prop_assert_ne!(flatten(&a), flatten(&b));
        }
    }

    #[test]
    fn corpus_text_round_trip() {
        let text = "hi there | hello\n\nhow are you | fine | ok then\n";
        let c = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].len(), 3);
        assert_eq!(c[1][2], raw("ok then"));
        assert_eq!(write_corpus(&c), "hi there | hello\nhow are you | fine | ok then\n");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "a b | c\nbad |token\n";
        match read_corpus(text.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "fine\n<A> sneaky\n";
        assert!(matches!(read_corpus(text.as_bytes()), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn vocab_file_round_trip_and_hash() {
        let v = Vocabulary::from_words(["x", "y", "z"]).unwrap();
        let s = v.to_file_string();
        assert_eq!(s, "x\ny\nz\n");
        let w = Vocabulary::from_file_str(&s).unwrap();
        assert_eq!(v, w);
        assert_eq!(w.id("y"), NUM_RESERVED + 1);
        assert_eq!(v.hash(), w.hash());
        let u = Vocabulary::from_words(["x", "z", "y"]).unwrap();
        assert_ne!(u.hash(), v.hash());
        assert!(Vocabulary::from_file_str("a\n<unk>\n").is_err());
    }

    #[test]
    fn unk_rate_is_reported() {
        let v = Vocabulary::from_words(["a"]).unwrap();
        let s = unk_stats(&v, &[vec![raw("a b c a")]]);
        assert_eq!(s.tokens, 4);
        assert_eq!(s.unknown, 2);
        assert!((s.rate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_arithmetic() {
        let items: Vec<usize> = (0..103).collect();
        let s = split(&items, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train.len(), 103);
        assert!(s.dev.is_empty() && s.test.is_empty());
        let s = split(&items, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(s.train.len(), 82);
        assert_eq!(s.dev.len(), 10);
        assert_eq!(s.test.len(), 11);
        let again = split(&items, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(s, again);
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
    }

    fn small_corpus() -> Vec<Dialogue> {
        // Ten distinct utterances overall; the target's first turn also
        // appears elsewhere so the other dialogues hold nine non-truth ones.
        let mut c = vec![Dialogue::from_turns(vec![vec![10], vec![99]])];
        c.push(Dialogue::from_turns(vec![vec![10], vec![11], vec![12]]));
        c.push(Dialogue::from_turns(vec![vec![13], vec![14], vec![15]]));
        c.push(Dialogue::from_turns(vec![vec![16], vec![17], vec![18]]));
        c
    }

    #[test]
    fn forced_negative_set() {
        let c = small_corpus();
        let s = sample_candidates(&c, 0, 5).unwrap();
        s.validate().unwrap();
        assert_eq!(s.truth(), &[99]);
        let mut negs: Vec<Vec<TokenId>> = s.negatives().cloned().collect();
        negs.sort();
        let expected: Vec<Vec<TokenId>> = (10..=18).map(|t| vec![t]).collect();
        assert_eq!(negs, expected);
        assert_eq!(s.history, Dialogue::from_turns(vec![vec![10]]));
    }

    #[test]
    fn sampling_is_deterministic_and_checks_size() {
        let c = small_corpus();
        assert_eq!(sample_candidates(&c, 0, 42).unwrap(), sample_candidates(&c, 0, 42).unwrap());
        let tiny = &c[..3];
        assert!(matches!(
            sample_candidates(tiny, 0, 1),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn negatives_are_uniform() {
        // 30 distinct negatives available; each should be drawn with
        // probability 9/30 per sampling.
        let mut c = vec![Dialogue::from_turns(vec![vec![6], vec![7]])];
        for i in 0..10 {
            let b = 100 + 3 * i;
            c.push(Dialogue::from_turns(vec![vec![b], vec![b + 1], vec![b + 2]]));
        }
        let trials = 1000;
        let mut freq: HashMap<Vec<TokenId>, usize> = HashMap::new();
        for seed in 0..trials {
            let s = sample_candidates(&c, 0, seed).unwrap();
            assert!(s.negatives().all(|n| n.as_slice() != [7]));
            for n in s.negatives() {
                *freq.entry(n.clone()).or_default() += 1;
            }
        }
        assert_eq!(freq.len(), 30);
        let p = 9.0 / 30.0;
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        for (k, f) in freq {
            assert!(((f as f64) - mean).abs() < 3.0 * sd, "{k:?} drawn {f} times");
        }
    }
}
