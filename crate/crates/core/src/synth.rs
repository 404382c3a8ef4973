//! Seeded synthetic dialogue corpora with known structure.
//!
//! * [`topic_corpus`]: every dialogue has one hidden topic; each turn is a
//!   walk on that topic's sparse word-transition graph, so later turns are
//!   predictable from earlier ones and every turn is drawn from the same
//!   process.
//! * [`copy_corpus`]: the first turn names a key word, filler turns
//!   follow, and the last turn repeats the key far from where it appeared.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dialogue, RawDialogue, Vocabulary};
use crate::error::{Error, Result};

/// A generated corpus with its vocabulary and ground truth.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub raw: Vec<RawDialogue>,
    pub vocab: Vocabulary,
    /// Hidden topic of each dialogue (topic corpora only).
    pub topics: Vec<usize>,
    /// Position of the key word in each flattened dialogue (copy corpora only).
    pub key_positions: Vec<usize>,
}

impl SynthCorpus {
    pub fn dialogues(&self) -> Vec<Dialogue> {
        self.raw.iter().map(|d| self.vocab.encode(d)).collect()
    }

    /// Words of topic `t` in a topic corpus.
    pub fn topic_word(t: usize, i: usize) -> String {
        format!("t{t}w{i}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicCorpusConfig {
    pub dialogues: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    /// Successors per word in each topic's transition graph.
    pub branching: usize,
    pub turns: (usize, usize),
    pub turn_len: (usize, usize),
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            dialogues: 2000,
            topics: 4,
            words_per_topic: 12,
            branching: 2,
            turns: (3, 5),
            turn_len: (3, 6),
            seed: 1,
        }
    }
}

pub fn topic_corpus(cfg: &TopicCorpusConfig) -> Result<SynthCorpus> {
    if cfg.topics == 0 || cfg.words_per_topic < 2 || cfg.branching == 0 || cfg.branching > cfg.words_per_topic {
        return Err(Error::InvalidInput(format!("degenerate topic corpus config {cfg:?}")));
    }
    if cfg.turns.0 < 2 || cfg.turns.0 > cfg.turns.1 || cfg.turn_len.0 == 0 || cfg.turn_len.0 > cfg.turn_len.1 {
        return Err(Error::InvalidInput("turn ranges must be non-empty, at least two turns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.words_per_topic;
    let graphs: Vec<Vec<Vec<usize>>> = (0..cfg.topics)
        .map(|_| {
            (0..n)
                .map(|_| rand::seq::index::sample(&mut rng, n, cfg.branching).into_vec())
                .collect()
        })
        .collect();
    let words = (0..cfg.topics).flat_map(|t| (0..n).map(move |i| SynthCorpus::topic_word(t, i)));
    let vocab = Vocabulary::from_words(words)?;
    let mut raw = Vec::with_capacity(cfg.dialogues);
    let mut topics = Vec::with_capacity(cfg.dialogues);
    for _ in 0..cfg.dialogues {
        let t = rng.gen_range(0..cfg.topics);
        let turns = rng.gen_range(cfg.turns.0..=cfg.turns.1);
        let mut w = rng.gen_range(0..n);
        let d: RawDialogue = (0..turns)
            .map(|_| {
                let len = rng.gen_range(cfg.turn_len.0..=cfg.turn_len.1);
                (0..len)
                    .map(|_| {
                        let word = SynthCorpus::topic_word(t, w);
                        w = *graphs[t][w].choose(&mut rng).unwrap();
                        word
                    })
                    .collect()
            })
            .collect();
        raw.push(d);
        topics.push(t);
    }
    Ok(SynthCorpus {
        raw,
        vocab,
        topics,
        key_positions: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopyCorpusConfig {
    pub dialogues: usize,
    pub keys: usize,
    pub fillers: usize,
    /// Minimum number of tokens between the key and its recall.
    pub min_gap: usize,
    pub filler_turn_len: (usize, usize),
    pub seed: u64,
}

impl Default for CopyCorpusConfig {
    fn default() -> Self {
        Self {
            dialogues: 2000,
            keys: 8,
            fillers: 12,
            min_gap: 20,
            filler_turn_len: (4, 7),
            seed: 1,
        }
    }
}

pub const REMEMBER: &str = "remember";
pub const RECALL: &str = "recall";
pub const THE: &str = "the";

/// Dialogues of the form
/// `remember KEY f f .. | f f .. | .. | recall the KEY`,
/// with at least `min_gap` flattened tokens between the key and its recall.
pub fn copy_corpus(cfg: &CopyCorpusConfig) -> Result<SynthCorpus> {
    if cfg.keys == 0 || cfg.fillers == 0 || cfg.filler_turn_len.0 == 0 || cfg.filler_turn_len.0 > cfg.filler_turn_len.1 {
        return Err(Error::InvalidInput(format!("degenerate copy corpus config {cfg:?}")));
    }
    let key = |i: usize| format!("key{i}");
    let filler = |i: usize| format!("f{i}");
    let words = [REMEMBER, RECALL, THE]
        .into_iter()
        .map(str::to_string)
        .chain((0..cfg.keys).map(key))
        .chain((0..cfg.fillers).map(filler));
    let vocab = Vocabulary::from_words(words)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = Vec::with_capacity(cfg.dialogues);
    let mut key_positions = Vec::with_capacity(cfg.dialogues);
    let turn = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(cfg.filler_turn_len.0..=cfg.filler_turn_len.1);
        (0..len).map(|_| filler(rng.gen_range(0..cfg.fillers))).collect()
    };
    for _ in 0..cfg.dialogues {
        let k = key(rng.gen_range(0..cfg.keys));
        let mut first = vec![REMEMBER.to_string(), k.clone()];
        first.extend(turn(&mut rng));
        let mut d = vec![first];
        // Flattened: [<A>, remember, KEY, ..] puts the key at position 2;
        // the recalled key sits after the turns so far plus [spk, recall, the].
        let key_pos = 2;
        let recall_pos = |d: &RawDialogue| d.iter().map(|t| t.len() + 2).sum::<usize>() + 3;
        while recall_pos(&d) - key_pos < cfg.min_gap || d.len() % 2 == 0 {
            d.push(turn(&mut rng));
        }
        d.push(vec![RECALL.to_string(), THE.to_string(), k]);
        raw.push(d);
        key_positions.push(key_pos);
    }
    Ok(SynthCorpus {
        raw,
        vocab,
        topics: Vec::new(),
        key_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::flatten;

    #[test]
    fn topic_corpus_respects_ranges() {
        let cfg = TopicCorpusConfig {
            dialogues: 50,
            ..Default::default()
        };
        let c = topic_corpus(&cfg).unwrap();
        assert_eq!(c.raw.len(), 50);
        assert_eq!(c.vocab.len(), 6 + 48);
        for (d, &t) in c.raw.iter().zip(&c.topics) {
            assert!((3..=5).contains(&d.len()));
            for turn in d {
                assert!((3..=6).contains(&turn.len()));
                assert!(turn.iter().all(|w| w.starts_with(&format!("t{t}w"))));
            }
        }
        let again = topic_corpus(&cfg).unwrap();
        assert_eq!(again.raw, c.raw);
    }

    #[test]
    fn copy_corpus_layout() {
        let cfg = CopyCorpusConfig {
            dialogues: 40,
            ..Default::default()
        };
        let c = copy_corpus(&cfg).unwrap();
        for (d, &p) in c.dialogues().iter().zip(&c.key_positions) {
            let flat = flatten(d);
            let n = flat.len();
            // [.., speaker, recall, the, KEY, </u>, </d>]
            assert_eq!(flat[n - 3], flat[p]);
            assert_eq!(c.vocab.token(flat[p - 1]), Some(REMEMBER));
            assert_eq!(c.vocab.token(flat[n - 5]), Some(RECALL));
            assert!(n - 3 - p >= cfg.min_gap, "gap {}", n - 3 - p);
            assert_eq!(d.len() % 2, 0);
        }
    }
}
