use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use arnn_core::corpus::{
    build_vocab, format_dialogue_line, parse_dialogue_line, sample_candidates, split, unk_stats, write_corpus,
    Dialogue, RawDialogue, TokenId, Vocabulary, EOU,
};
use arnn_core::generator::{generate_reply, trace_attention, GenerateConfig};
use arnn_core::metrics::{corpus_bleu, distinct_1, recall_at_n, teacher_forced, EvalReport, LikelihoodScorer};
use arnn_core::models::{write_checkpoint, DialogueExample, Model, ModelKind};
use arnn_core::synth::{copy_corpus, topic_corpus, CopyCorpusConfig, TopicCorpusConfig};
use arnn_core::topics::{
    lambda_grid, lda_train, rerank, tune_rerank, InferConfig, LdaConfig, Objective, RerankConfig, TopicModel,
    TuneItem,
};
use arnn_core::trainer::{pretrain_finetune, LogEntry, TrainConfig, LOG_HEADER};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::files::{load_corpus, load_model, load_topic_model, load_vocab, read_text, write_atomic};
use crate::heatmap::render_pgm;
use crate::manifest::Run;

/// `candidates.json`: everything `rerank` and `tune` need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub vocab_hash: String,
    pub model_kind: String,
    pub decode: GenerateConfig,
    pub items: Vec<CandidateItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    /// History in corpus-line format.
    pub history: String,
    /// Held-out last turn, when generated with `--hold-out-last`.
    pub reference: Option<String>,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    /// Token ids without the closing end-of-utterance marker.
    pub tokens: Vec<TokenId>,
    pub log_likelihood: f64,
    /// Length-normalised log-likelihood; the reranker's likelihood term.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankedItem {
    pub history: String,
    pub order: Vec<RerankedRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankedRecord {
    /// 1-based rank in the generation order.
    pub original_rank: usize,
    pub text: String,
    pub score: f64,
    pub similarity: f64,
    pub likelihood_z: f64,
}

fn usage(e: arnn_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn encode_all(vocab: &Vocabulary, raw: &[RawDialogue]) -> Vec<Dialogue> {
    raw.iter().map(|d| vocab.encode(d)).collect()
}

fn read_dialogues(run: &mut Run, role: &str, path: &Path, vocab: &Vocabulary) -> CliResult<Vec<Dialogue>> {
    run.input(role, path)?;
    Ok(encode_all(vocab, &load_corpus(path)?))
}

/// Loads the topic model a topic-feature model needs, and rejects one
/// given to any other kind.
fn topic_model_for(
    kind: ModelKind,
    path: Option<&PathBuf>,
    vocab: &Vocabulary,
    run: &mut Run,
) -> CliResult<Option<TopicModel>> {
    match (kind.uses_topics(), path) {
        (true, None) => Err(CliError::Usage(format!("{kind} needs --topic-model"))),
        (false, Some(_)) => Err(CliError::Usage(format!("--topic-model only applies to t-a-rnn, not {kind}"))),
        (false, None) => Ok(None),
        (true, Some(p)) => {
            run.input("topic_model", p)?;
            Ok(Some(load_topic_model(p, vocab)?))
        }
    }
}

fn check_topics(model: &Model, tm: Option<&TopicModel>, path: &Path) -> CliResult<()> {
    if let Some(tm) = tm {
        if model.dims.topics != tm.k {
            return Err(CliError::Data(format!(
                "{}: model expects {} topics, topic model has {}",
                path.display(),
                model.dims.topics,
                tm.k
            )));
        }
    }
    Ok(())
}

fn theta_of(tm: Option<&TopicModel>, context: &[TokenId], infer: &InferConfig) -> Option<Vec<f64>> {
    tm.map(|m| m.infer_theta(context, infer).theta)
}

/// Examples for dialogues with at least two turns; returns the number
/// skipped.
fn examples(dialogues: &[Dialogue], tm: Option<&TopicModel>, infer: &InferConfig) -> CliResult<(Vec<DialogueExample>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for d in dialogues {
        if d.len() < 2 {
            skipped += 1;
            continue;
        }
        let ex = DialogueExample::new(d)?;
        out.push(match theta_of(tm, ex.context(), infer) {
            Some(t) => ex.with_theta(t),
            None => ex,
        });
    }
    Ok((out, skipped))
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("synth", argv, &a.out);
    let corpus = match a.kind {
        SynthKind::Topic => topic_corpus(&TopicCorpusConfig {
            dialogues: a.dialogues,
            topics: a.topics,
            words_per_topic: a.words_per_topic,
            branching: a.branching,
            seed: a.seed,
            ..Default::default()
        }),
        SynthKind::Copy => copy_corpus(&CopyCorpusConfig {
            dialogues: a.dialogues,
            keys: a.keys,
            fillers: a.fillers,
            min_gap: a.min_gap,
            seed: a.seed,
            ..Default::default()
        }),
    }
    .map_err(usage)?;
    run.output("corpus.txt", write_corpus(&corpus.raw).as_bytes())?;
    run.seed(a.seed);
    run.config(json!({
        "kind": format!("{:?}", a.kind).to_lowercase(),
        "dialogues": a.dialogues,
        "topics": a.topics,
        "words_per_topic": a.words_per_topic,
        "branching": a.branching,
        "keys": a.keys,
        "fillers": a.fillers,
        "min_gap": a.min_gap,
    }));
    run.finish()?;
    Ok(())
}

pub fn prepare(a: &PrepareArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("prepare", argv, &a.out);
    run.input("corpus", &a.corpus)?;
    let raw = load_corpus(&a.corpus)?;
    if raw.is_empty() {
        return Err(CliError::Data(format!("{}: no dialogues", a.corpus.display())));
    }
    let sp = split(&raw, a.split, a.seed).map_err(usage)?;
    let streams = sp.train.iter().flatten().map(Vec::as_slice);
    let vocab = build_vocab(streams, a.vocab_size).map_err(|e| match e {
        arnn_core::Error::Empty(_) => CliError::Data("training split has no tokens".into()),
        e => usage(e),
    })?;
    run.output("vocab.txt", vocab.to_file_string().as_bytes())?;
    let mut stats = serde_json::Map::new();
    for (name, part) in [("train", &sp.train), ("dev", &sp.dev), ("test", &sp.test)] {
        run.output(&format!("{name}.txt"), write_corpus(part).as_bytes())?;
        let unk = unk_stats(&vocab, part);
        eprintln!(
            "{name}: {} dialogues, {} tokens, unk rate {:.4}",
            part.len(),
            unk.tokens,
            unk.rate()
        );
        stats.insert(
            name.into(),
            json!({"dialogues": part.len(), "tokens": unk.tokens, "unknown": unk.unknown, "unk_rate": unk.rate()}),
        );
    }
    run.seed(a.seed);
    run.config(json!({"vocab_size": a.vocab_size, "split": a.split}));
    run.summary(json!({"vocabulary": vocab.len(), "vocab_hash": vocab.hash(), "splits": stats}));
    run.finish()?;
    Ok(())
}

/// Streams log lines to a hidden partial file, renamed into place when
/// training ends.
struct LogFile {
    partial: PathBuf,
    file: BufWriter<File>,
}

impl LogFile {
    fn create(dir: &Path, name: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::from(e).at(dir))?;
        let partial = dir.join(format!(".{name}.partial"));
        let mut file = BufWriter::new(File::create(&partial).map_err(|e| CliError::from(e).at(&partial))?);
        writeln!(file, "{LOG_HEADER}")?;
        file.flush()?;
        Ok(Self { partial, file })
    }

    fn line(&mut self, e: &LogEntry) -> std::io::Result<()> {
        writeln!(self.file, "{e}")?;
        self.file.flush()
    }

    fn commit(mut self, run: &mut Run, name: &str) -> CliResult<()> {
        self.file.flush()?;
        self.file.get_ref().sync_all()?;
        let target = run.out_path(name);
        fs::rename(&self.partial, &target)?;
        let bytes = fs::read(&target)?;
        run.record_output(name, &target, &bytes);
        Ok(())
    }
}

pub fn train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("train", argv, &a.out);
    let vocab_path = a.data.join("vocab.txt");
    run.input("vocab", &vocab_path)?;
    let vocab = load_vocab(&vocab_path)?;
    let mut cfg = match &a.config {
        Some(p) => {
            run.input("config", p)?;
            TrainConfig::from_text(&read_text(p)?).map_err(|e| CliError::from(e).at(p))?
        }
        None => TrainConfig::default(),
    };
    for (k, v) in a.flags.overrides() {
        cfg.set(k, &v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    let tm = topic_model_for(a.kind, a.topic_model.as_ref(), &vocab, &mut run)?;
    let infer = a.infer.config();
    let load = |run: &mut Run, role: &str, path: &Path| -> CliResult<(Vec<DialogueExample>, usize)> {
        examples(&read_dialogues(run, role, path, &vocab)?, tm.as_ref(), &infer)
    };
    let (train_set, skip_train) = load(&mut run, "train", &a.data.join("train.txt"))?;
    let (dev_set, skip_dev) = load(&mut run, "dev", &a.data.join("dev.txt"))?;
    let (pre_train, pre_dev) = match &a.pretrain {
        Some(dir) => {
            let (t, _) = load(&mut run, "pretrain_train", &dir.join("train.txt"))?;
            let dev_path = dir.join("dev.txt");
            let d = if dev_path.exists() {
                load(&mut run, "pretrain_dev", &dev_path)?.0
            } else {
                Vec::new()
            };
            (t, d)
        }
        None => (Vec::new(), Vec::new()),
    };
    if skip_train + skip_dev > 0 {
        eprintln!("warning: skipped {} dialogues with fewer than two turns", skip_train + skip_dev);
    }
    let two_phase = !pre_train.is_empty();
    let mut logs = vec![LogFile::create(&a.out, "train.log")?];
    if two_phase {
        logs.insert(0, LogFile::create(&a.out, "pretrain.log")?);
    }
    let mut phase = 0;
    let mut last_epoch = 0;
    let mut io_err = None;
    let mut on_eval = |e: &LogEntry| {
        if e.epoch <= last_epoch {
            phase = (phase + 1).min(logs.len() - 1);
        }
        last_epoch = e.epoch;
        eprintln!("{}{e}", if two_phase && phase == 0 { "pretrain\t" } else { "" });
        if let Err(err) = logs[phase].line(e) {
            io_err.get_or_insert(err);
        }
    };
    let topics = tm.as_ref().map_or(0, |m| m.k);
    let (outcome, phase1) = pretrain_finetune(
        a.kind,
        vocab.len(),
        topics,
        (&pre_train, &pre_dev),
        (&train_set, &dev_set),
        &cfg,
        &mut on_eval,
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let hash = vocab.hash();
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &outcome.model, &hash)?;
    run.output("model.ckpt", &ckpt)?;
    let mut summary = json!({"best_dev_ppl": outcome.best_dev_ppl, "evaluations": outcome.log.len()});
    if let Some(p1) = &phase1 {
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p1.model, &hash)?;
        run.output("pretrain.ckpt", &bytes)?;
        summary["pretrain_best_dev_ppl"] = json!(p1.best_dev_ppl);
    }
    let names = if two_phase { vec!["pretrain.log", "train.log"] } else { vec!["train.log"] };
    for (log, name) in logs.into_iter().zip(names) {
        log.commit(&mut run, name)?;
    }
    run.output("config.txt", cfg.to_text().as_bytes())?;
    run.seed(cfg.seed);
    run.config(json!({"kind": a.kind.as_str(), "train": cfg, "infer": infer}));
    summary["skipped_dialogues"] = json!(skip_train + skip_dev);
    run.summary(summary);
    run.finish()?;
    Ok(())
}

fn check_decode(cfg: &GenerateConfig) -> CliResult<()> {
    cfg.validate().map_err(usage)
}

pub fn generate(a: &GenerateArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("generate", argv, &a.out);
    let decode = a.decode.config();
    check_decode(&decode)?;
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    run.input("model", &a.model)?;
    let model = load_model(&a.model, &vocab)?;
    let tm = topic_model_for(model.kind, a.topic_model.as_ref(), &vocab, &mut run)?;
    check_topics(&model, tm.as_ref(), &a.model)?;
    let infer = a.infer.config();
    run.input("input", &a.input)?;
    let raw = load_corpus(&a.input)?;
    let mut items = Vec::with_capacity(raw.len());
    let mut text = String::new();
    for (i, r) in raw.iter().enumerate() {
        let (hist_raw, reference) = if a.hold_out_last {
            if r.len() < 2 {
                return Err(CliError::Data(format!(
                    "{}: dialogue {} needs two turns to hold one out",
                    a.input.display(),
                    i + 1
                )));
            }
            (r[..r.len() - 1].to_vec(), Some(r[r.len() - 1].join(" ")))
        } else {
            (r.clone(), None)
        };
        let history = vocab.encode(&hist_raw);
        let theta = theta_of(tm.as_ref(), &history.context_tokens(), &infer);
        let cands = generate_reply(&model, &history, theta.as_deref(), &decode)?;
        let line = format_dialogue_line(&hist_raw);
        text.push_str(&format!("# {}\t{line}\n", i + 1));
        let mut records = Vec::with_capacity(cands.len());
        for (rank, c) in cands.iter().enumerate() {
            text.push_str(&c.dump_line(rank + 1, &vocab));
            text.push('\n');
            let mut tokens = c.tokens.clone();
            if tokens.last() == Some(&EOU) {
                tokens.pop();
            }
            records.push(CandidateRecord {
                text: vocab.detokenize(&tokens),
                tokens,
                log_likelihood: c.log_likelihood,
                score: c.score,
            });
        }
        text.push('\n');
        items.push(CandidateItem {
            history: line,
            reference,
            candidates: records,
        });
    }
    let file = CandidateFile {
        vocab_hash: vocab.hash(),
        model_kind: model.kind.to_string(),
        decode: decode.clone(),
        items,
    };
    run.output("candidates.txt", text.as_bytes())?;
    run.output("candidates.json", &to_json(&file)?)?;
    run.config(json!({"decode": decode, "hold_out_last": a.hold_out_last, "infer": infer}));
    run.summary(json!({"histories": file.items.len()}));
    run.finish()?;
    Ok(())
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("eval", argv, &a.out);
    let decode = a.decode.config();
    if a.bleu {
        check_decode(&decode)?;
    }
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    run.input("model", &a.model)?;
    let model = load_model(&a.model, &vocab)?;
    let tm = topic_model_for(model.kind, a.topic_model.as_ref(), &vocab, &mut run)?;
    check_topics(&model, tm.as_ref(), &a.model)?;
    let infer = a.infer.config();
    let dialogues = read_dialogues(&mut run, "data", &a.data, &vocab)?;
    let (exs, skipped) = examples(&dialogues, tm.as_ref(), &infer)?;
    let mut report = EvalReport::default();
    report.add_teacher_forced(&teacher_forced(&model, &exs)?)?;
    let usable: Vec<Dialogue> = dialogues.iter().filter(|d| d.len() >= 2).cloned().collect();
    if a.recall {
        let sets = (0..usable.len())
            .map(|i| sample_candidates(&usable, i, a.seed.wrapping_add(i as u64)))
            .collect::<arnn_core::Result<Vec<_>>>()?;
        let theta = |h: &Dialogue| -> arnn_core::Result<Vec<f64>> {
            Ok(theta_of(tm.as_ref(), &h.context_tokens(), &infer).unwrap_or_default())
        };
        let scorer = LikelihoodScorer {
            model: &model,
            length_exponent: a.decode.length_exponent,
            theta: Some(&theta),
        };
        for n in [1, 2, 5, 10] {
            report.set(&format!("recall@{n}"), recall_at_n(&scorer, &sets, n)?);
        }
        report.count("candidate_sets", sets.len());
    }
    if a.bleu {
        let mut hyps = Vec::with_capacity(usable.len());
        let mut refs = Vec::with_capacity(usable.len());
        for d in &usable {
            let history = d.prefix();
            let theta = theta_of(tm.as_ref(), &history.context_tokens(), &infer);
            let best = generate_reply(&model, &history, theta.as_deref(), &decode)?;
            let mut tokens = best.first().map(|c| c.tokens.clone()).unwrap_or_default();
            if tokens.last() == Some(&EOU) {
                tokens.pop();
            }
            hyps.push(tokens);
            refs.push(d.last_utterance().map(|u| u.tokens.clone()).unwrap_or_default());
        }
        report.set("bleu", corpus_bleu(&hyps, &refs, 4)?);
        let generated: usize = hyps.iter().map(Vec::len).sum();
        if generated > 0 {
            report.set("distinct-1", distinct_1(&hyps)?);
        }
        report.count("generated_tokens", generated);
    }
    report.count("skipped_dialogues", skipped);
    print!("{}", report.to_tsv());
    run.output("eval.tsv", report.to_tsv().as_bytes())?;
    run.output("eval.json", &to_json(&report)?)?;
    run.seed(a.seed);
    run.config(json!({"recall": a.recall, "bleu": a.bleu, "decode": decode, "infer": infer}));
    run.summary(serde_json::to_value(&report.metrics)?);
    run.finish()?;
    Ok(())
}

pub fn lda(a: &LdaArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("lda", argv, &a.out);
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    let dialogues = read_dialogues(&mut run, "data", &a.data, &vocab)?;
    let docs: Vec<Vec<TokenId>> = dialogues.iter().map(Dialogue::content_tokens).collect();
    let mut summary = serde_json::Map::new();
    for &k in &a.topics_k {
        let cfg = LdaConfig {
            k,
            eta: a.eta,
            xi: a.xi,
            sweeps: a.sweeps,
            seed: a.seed,
        };
        let (model, trace) = lda_train(&docs, vocab.len(), &cfg).map_err(|e| match e {
            arnn_core::Error::InvalidInput(m) => CliError::Usage(m),
            e => e.into(),
        })?;
        if trace.skipped_docs > 0 {
            eprintln!("warning: K={k}: skipped {} empty documents", trace.skipped_docs);
        }
        let mut bytes = Vec::new();
        model.write(&mut bytes)?;
        run.output(&format!("topics-k{k}.bin"), &bytes)?;
        let mut text = String::new();
        for (t, words) in model.top_words(a.top_words).iter().enumerate() {
            let ws: Vec<String> = words
                .iter()
                .map(|(w, p)| format!("{}:{p:.4}", vocab.token(*w).unwrap_or("<unk>")))
                .collect();
            text.push_str(&format!("{t}\t{}\n", ws.join(" ")));
        }
        run.output(&format!("topics-k{k}.txt"), text.as_bytes())?;
        summary.insert(
            format!("k{k}"),
            json!({"skipped_docs": trace.skipped_docs, "final_log_likelihood": trace.log_likelihood.last()}),
        );
    }
    run.seed(a.seed);
    run.config(json!({"topics_k": a.topics_k, "eta": a.eta, "xi": a.xi, "sweeps": a.sweeps}));
    run.summary(summary.into());
    run.finish()?;
    Ok(())
}

fn load_candidates(run: &mut Run, path: &Path, vocab: &Vocabulary) -> CliResult<CandidateFile> {
    run.input("candidates", path)?;
    let file: CandidateFile =
        serde_json::from_str(&read_text(path)?).map_err(|e| CliError::from(e).at(path))?;
    if file.vocab_hash != vocab.hash() {
        return Err(CliError::Data(format!(
            "{}: vocabulary hash mismatch (candidates {}, vocabulary {}); refusing to run",
            path.display(),
            file.vocab_hash,
            vocab.hash()
        )));
    }
    Ok(file)
}

fn history_tokens(item: &CandidateItem, vocab: &Vocabulary) -> CliResult<Vec<TokenId>> {
    let raw = parse_dialogue_line(&item.history).map_err(CliError::Data)?;
    Ok(vocab.encode(&raw).content_tokens())
}

fn candidate_lists(item: &CandidateItem) -> CliResult<(Vec<Vec<TokenId>>, Vec<f64>)> {
    if item.candidates.is_empty() {
        return Err(CliError::Data(format!("history {:?} has no candidates", item.history)));
    }
    Ok((
        item.candidates.iter().map(|c| c.tokens.clone()).collect(),
        item.candidates.iter().map(|c| c.score).collect(),
    ))
}

pub fn rerank_cmd(a: &RerankArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("rerank", argv, &a.out);
    let mut cfg = RerankConfig::new(a.lambda).map_err(usage)?;
    cfg.metric = a.metric;
    cfg.infer = a.infer.config();
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    let file = load_candidates(&mut run, &a.candidates, &vocab)?;
    run.input("topic_model", &a.topic_model)?;
    let tm = load_topic_model(&a.topic_model, &vocab)?;
    let mut text = String::new();
    let mut out = Vec::with_capacity(file.items.len());
    for (i, item) in file.items.iter().enumerate() {
        let history = history_tokens(item, &vocab)?;
        let (cands, lls) = candidate_lists(item)?;
        let order = rerank(&tm, &history, &cands, &lls, &cfg)?;
        text.push_str(&format!("# {}\t{}\n", i + 1, item.history));
        let mut records = Vec::with_capacity(order.len());
        for (rank, r) in order.iter().enumerate() {
            let c = &item.candidates[r.index];
            text.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {}\t{}\n",
                rank + 1,
                r.score,
                r.similarity,
                r.likelihood_z,
                r.index + 1,
                c.text
            ));
            records.push(RerankedRecord {
                original_rank: r.index + 1,
                text: c.text.clone(),
                score: r.score,
                similarity: r.similarity,
                likelihood_z: r.likelihood_z,
            });
        }
        text.push('\n');
        out.push(RerankedItem {
            history: item.history.clone(),
            order: records,
        });
    }
    run.output("reranked.txt", text.as_bytes())?;
    run.output("reranked.json", &to_json(&out)?)?;
    run.config(serde_json::to_value(&cfg)?);
    let moved = out.iter().filter(|it| it.order[0].original_rank != 1).count();
    run.summary(json!({"histories": out.len(), "top1_changed": moved}));
    run.finish()?;
    Ok(())
}

pub fn tune(a: &TuneArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("tune", argv, &a.out);
    if a.lambda_steps == 0 {
        return Err(CliError::Usage("--lambda-steps must be positive".into()));
    }
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    let file = load_candidates(&mut run, &a.candidates, &vocab)?;
    let mut models = Vec::with_capacity(a.topic_models.len());
    for (i, p) in a.topic_models.iter().enumerate() {
        run.input(&format!("topic_model_{i}"), p)?;
        models.push(load_topic_model(p, &vocab)?);
    }
    let mut items = Vec::with_capacity(file.items.len());
    for item in &file.items {
        let reference_text = item.reference.as_deref().ok_or_else(|| {
            CliError::Data("candidates have no references; generate them with --hold-out-last".into())
        })?;
        let reference: Vec<TokenId> = vocab.encode_tokens(&reference_text.split_whitespace().collect::<Vec<_>>());
        let (candidates, likelihoods) = candidate_lists(item)?;
        let truth = candidates.iter().position(|c| *c == reference);
        if matches!(a.objective, Objective::RecallAt(_)) && truth.is_none() {
            return Err(CliError::Data(format!(
                "recall objective: reference {reference_text:?} is not among the candidates of {:?}",
                item.history
            )));
        }
        items.push(TuneItem {
            history: history_tokens(item, &vocab)?,
            candidates,
            likelihoods,
            reference,
            truth,
        });
    }
    let infer = a.infer.config();
    let res = tune_rerank(&items, &models, &lambda_grid(a.lambda_steps), a.objective, a.metric, &infer)?;
    let best_path = models
        .iter()
        .position(|m| m.k == res.best.k)
        .map(|i| a.topic_models[i].display().to_string());
    eprintln!(
        "best K={} lambda={:.2} objective={:.6}",
        res.best.k, res.best.lambda, res.best.objective
    );
    run.output("grid.tsv", res.to_tsv().as_bytes())?;
    run.output(
        "best.json",
        &to_json(&json!({
            "k": res.best.k,
            "lambda": res.best.lambda,
            "objective": res.best.objective,
            "topic_model": best_path,
        }))?,
    )?;
    run.config(json!({
        "lambda_steps": a.lambda_steps,
        "objective": format!("{:?}", a.objective),
        "metric": a.metric,
        "infer": infer,
    }));
    run.summary(serde_json::to_value(res.best)?);
    run.finish()?;
    Ok(())
}

pub fn attviz(a: &AttvizArgs, argv: &[String]) -> CliResult<()> {
    let mut run = Run::start("attviz", argv, &a.out);
    run.input("vocab", &a.vocab)?;
    let vocab = load_vocab(&a.vocab)?;
    run.input("model", &a.model)?;
    let model = load_model(&a.model, &vocab)?;
    if !model.kind.has_attention() {
        return Err(CliError::Data(format!(
            "{}: {} has no attention to visualize",
            a.model.display(),
            model.kind
        )));
    }
    let tm = topic_model_for(model.kind, a.topic_model.as_ref(), &vocab, &mut run)?;
    check_topics(&model, tm.as_ref(), &a.model)?;
    let infer = a.infer.config();
    let dialogues = read_dialogues(&mut run, "history", &a.history, &vocab)?;
    let history = a
        .line
        .checked_sub(1)
        .and_then(|i| dialogues.get(i))
        .ok_or_else(|| CliError::Usage(format!("--line {} outside 1..={}", a.line, dialogues.len())))?;
    let context = history.context_tokens();
    let theta = theta_of(tm.as_ref(), &context, &infer);
    let continuation = match &a.continuation {
        Some(text) => {
            let mut ids = vocab.encode_tokens(&text.split_whitespace().collect::<Vec<_>>());
            ids.push(EOU);
            ids
        }
        None => {
            let decode = a.decode.config();
            check_decode(&decode)?;
            generate_reply(&model, history, theta.as_deref(), &decode)?
                .into_iter()
                .next()
                .map(|c| c.tokens)
                .ok_or_else(|| CliError::Data("decoder produced no candidate".into()))?
        }
    };
    let trace = trace_attention(&model, &context, &continuation, theta.as_deref())?;
    let export = trace.export(&vocab);
    run.output("trace.json", &to_json(&export)?)?;
    run.output("heatmap.pgm", &render_pgm(&export, a.cell))?;
    run.config(json!({"line": a.line, "continuation": a.continuation, "cell": a.cell, "decode": a.decode.config()}));
    run.summary(json!({"rows": export.rows.len(), "columns": export.columns.len()}));
    run.finish()?;
    Ok(())
}

/// Writes a file outside any run (used by tests and tools).
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes)
}
