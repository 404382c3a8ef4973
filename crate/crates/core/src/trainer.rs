//! Maximum-likelihood training with Adam, early stopping on dev
//! perplexity, and optional pretrain-then-finetune.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DialogueExample, Model, ModelDims, ModelKind, INIT_SCALE};
use crate::numeric::{GradientTape, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<P: Parameters> {
    pub config: AdamConfig,
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: Parameters> AdamState<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Nothing is modified when the gradient is
/// not finite or its shapes disagree with the parameters.
pub fn adam_update<P: Parameters>(state: &mut AdamState<P>, params: &mut P, grads: &P) -> Result<()> {
    let g_arrays = grads.arrays();
    {
        let p_arrays = params.arrays();
        if p_arrays.len() != g_arrays.len()
            || p_arrays
                .iter()
                .zip(&g_arrays)
                .any(|((_, a), (_, b))| a.shape() != b.shape())
        {
            return Err(Error::Shape("gradient shapes differ from parameters".into()));
        }
    }
    if let Some((name, _)) = g_arrays.iter().find(|(_, m)| !m.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let mut ms = state.m.arrays_mut();
    let mut vs = state.v.arrays_mut();
    for (k, (_, p)) in params.arrays_mut().into_iter().enumerate() {
        let g = g_arrays[k].1.data();
        let m = ms[k].1.data_mut();
        let v = vs[k].1.data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub embed: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm threshold.
    pub clip: f64,
    pub seed: u64,
    /// Epochs between dev evaluations.
    pub eval_interval: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 300,
            embed: 300,
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 5,
            clip: 5.0,
            seed: 1,
            eval_interval: 1,
            init_scale: INIT_SCALE,
        }
    }
}

/// Hidden sizes searched by default.
pub const HIDDEN_GRID: [usize; 4] = [200, 300, 400, 500];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("train config: {m}")));
        if self.hidden == 0 || self.embed == 0 {
            return bad("d and d_e must be positive");
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.eval_interval == 0 {
            return bad("max_epochs, patience and eval_interval must be positive");
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad("clip must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        Ok(())
    }

    pub fn dims(&self, vocab: usize, topics: usize) -> ModelDims {
        ModelDims::new(self.hidden, self.embed, vocab).with_topics(topics)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidInput(format!("config key {key}: cannot parse {v:?}")))
        }
        match key {
            "d" => self.hidden = parse(key, value)?,
            "d_e" => self.embed = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            _ => return Err(Error::InvalidInput(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            c.set(k.trim(), v.trim()).map_err(|e| Error::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "d={}\nd_e={}\nlr={}\nbeta1={}\nbeta2={}\neps={}\nmax_epochs={}\npatience={}\nclip={}\nseed={}\neval_interval={}\ninit_scale={}\n",
            self.hidden,
            self.embed,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.max_epochs,
            self.patience,
            self.clip,
            self.seed,
            self.eval_interval,
            self.init_scale
        )
    }
}

/// One dev evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub seen: usize,
    /// Mean per-dialogue loss over the epoch just finished.
    pub train_loss: f64,
    pub dev_ppl: f64,
    pub best: bool,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.6}\t{:.6}\t{}",
            self.epoch, self.seen, self.train_loss, self.dev_ppl, self.best as u8
        )
    }
}

pub const LOG_HEADER: &str = "epoch\tseen\ttrain_loss\tdev_ppl\tbest";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev evaluation.
    pub model: Model,
    pub log: Vec<LogEntry>,
    pub best_dev_ppl: f64,
}

impl TrainOutcome {
    /// Lowest dev perplexity seen up to each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.log
            .iter()
            .map(|e| {
                best = best.min(e.dev_ppl);
                best
            })
            .collect()
    }
}

/// Perplexity over each example's native span: the whole dialogue for
/// language models, the last turn for seq2seq.
pub fn dev_perplexity(model: &Model, dev: &[DialogueExample]) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for ex in dev {
        let s = model.score(ex)?;
        nll -= s.log_probs.iter().sum::<f64>();
        n += s.log_probs.len();
    }
    if n == 0 {
        return Err(Error::Empty("dev split"));
    }
    let ppl = (nll / n as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::NonFinite(format!("dev perplexity {ppl}")));
    }
    Ok(ppl)
}

pub fn train(
    kind: ModelKind,
    vocab: usize,
    topics: usize,
    train_set: &[DialogueExample],
    dev: &[DialogueExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = Model::with_scale(kind, config.dims(vocab, topics), config.seed, config.init_scale)?;
    train_from(model, train_set, dev, config, &mut |_| {})
}

/// Continues training `model` with a fresh optimizer. `on_eval` sees every
/// log entry as it is produced.
pub fn train_from(
    mut model: Model,
    train_set: &[DialogueExample],
    dev: &[DialogueExample],
    config: &TrainConfig,
    on_eval: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    if model.dims.hidden != config.hidden || model.dims.embed != config.embed {
        return Err(Error::Shape(format!(
            "model is d={} d_e={}, config asks for d={} d_e={}",
            model.dims.hidden, model.dims.embed, config.hidden, config.embed
        )));
    }
    let mut adam = AdamState::new(&model.params, config.adam);
    let mut tape = GradientTape::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_ppl = f64::INFINITY;
    let mut log = Vec::new();
    let mut stale = 0;
    let mut seen = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            tape.reset();
            let loss = model.loss_and_grad(&train_set[i], tape.grads_mut())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { sequence: i, epoch });
            }
            tape.clip_global_norm(config.clip);
            adam_update(&mut adam, &mut model.params, tape.grads()).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { sequence: i, epoch },
                e => e,
            })?;
            total += loss;
            seen += 1;
        }
        if epoch % config.eval_interval != 0 && epoch != config.max_epochs {
            continue;
        }
        let dev_ppl = dev_perplexity(&model, dev)?;
        let improved = dev_ppl < best_ppl;
        if improved {
            best_ppl = dev_ppl;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let entry = LogEntry {
            epoch,
            seen,
            train_loss: total / train_set.len() as f64,
            dev_ppl,
            best: improved,
        };
        on_eval(&entry);
        log.push(entry);
        if stale >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_dev_ppl: best_ppl,
    })
}

/// Trains on `pretrain` (skipped when its train split is empty), then
/// continues on the target splits with a fresh optimizer. Both corpora
/// must already be encoded with the target vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_finetune(
    kind: ModelKind,
    vocab: usize,
    topics: usize,
    pretrain: (&[DialogueExample], &[DialogueExample]),
    target: (&[DialogueExample], &[DialogueExample]),
    config: &TrainConfig,
    on_eval: &mut dyn FnMut(&LogEntry),
) -> Result<(TrainOutcome, Option<TrainOutcome>)> {
    config.validate()?;
    let init = Model::with_scale(kind, config.dims(vocab, topics), config.seed, config.init_scale)?;
    let (start, phase1) = if pretrain.0.is_empty() {
        (init, None)
    } else {
        let dev = if pretrain.1.is_empty() { target.1 } else { pretrain.1 };
        let out = train_from(init, pretrain.0, dev, config, on_eval)?;
        (out.model.clone(), Some(out))
    };
    let phase2 = train_from(start, target.0, target.1, config, on_eval)?;
    Ok((phase2, phase1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;

    #[derive(Clone, Debug, PartialEq)]
    struct One(Matrix);

    impl Parameters for One {
        fn arrays(&self) -> Vec<(&'static str, &Matrix)> {
            vec![("x", &self.0)]
        }
        fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
            vec![("x", &mut self.0)]
        }
    }

    fn one(v: &[f64]) -> One {
        One(Matrix::from_vec(1, v.len(), v.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut p = one(&[1.0, -2.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_update(&mut s, &mut p, &one(&[0.4, 0.4])).unwrap();
        let before = p.clone();
        let m1 = s.m.0.data().to_vec();
        let v1 = s.v.0.data().to_vec();
        adam_update(&mut s, &mut p, &one(&[0.0, 0.0])).unwrap();
        // The decayed first moment still moves parameters; the moments decay exactly.
        assert_eq!(s.m.0.data()[0], 0.9 * m1[0]);
        assert_eq!(s.v.0.data()[0], 0.999 * v1[0]);
        assert_eq!(s.step, 2);
        let mut fresh = before.clone();
        let mut s2 = AdamState::new(&fresh, AdamConfig::default());
        adam_update(&mut s2, &mut fresh, &one(&[0.0, 0.0])).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn single_step_hand_trace() {
        // m = 0.1 g, v = 0.001 g^2, m^ = g, v^ = g^2, step = lr g/(|g|+eps).
        let mut p = one(&[0.5, 0.5, 0.5]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_update(&mut s, &mut p, &one(&[2.0, -0.25, 1e-9])).unwrap();
        assert!((p.0.data()[0] - (0.5 - 1e-3 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((p.0.data()[1] - (0.5 + 1e-3 * 0.25 / (0.25 + 1e-8))).abs() < 1e-15);
        let tiny = 1e-3 * 1e-9 / (1e-9 + 1e-8);
        assert!((p.0.data()[2] - (0.5 - tiny)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut p = one(&[0.0, 0.0]);
        let mut s = AdamState::new(&p, cfg);
        let g = one(&[3.0, -0.02]);
        let mut prev = p.clone();
        for step in 1..=2000u64 {
            adam_update(&mut s, &mut p, &g).unwrap();
            let d0 = prev.0.data()[0] - p.0.data()[0];
            let d1 = prev.0.data()[1] - p.0.data()[1];
            // Closed form: bias-corrected moments of a constant are exact.
            let want = 0.01 * 3.0 / (3.0 + 1e-8);
            assert!((d0 - want).abs() < 1e-12, "step {step}");
            assert!((d1 + 0.01).abs() < 1e-6);
            prev = p.clone();
        }
        assert_eq!(s.step, 2000);
    }

    #[test]
    fn bad_gradients_are_rejected_without_side_effects() {
        let mut p = one(&[1.0]);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut nan = one(&[0.0]);
        nan.0.data_mut()[0] = f64::NAN;
        assert!(matches!(
            adam_update(&mut s, &mut p, &nan),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            adam_update(&mut s, &mut p, &one(&[1.0, 2.0])),
            Err(Error::Shape(_))
        ));
        assert_eq!(s.step, 0);
        assert_eq!(p, one(&[1.0]));
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig {
            hidden: 16,
            seed: 99,
            ..TrainConfig::default()
        };
        c.adam.lr = 0.0125;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let parsed = TrainConfig::from_text("# comment\nd = 8\n\npatience=2 # trailing\n").unwrap();
        assert_eq!(parsed.hidden, 8);
        assert_eq!(parsed.patience, 2);
        assert!(matches!(
            TrainConfig::from_text("d=8\nbogus=1"),
            Err(Error::Format { line: 2, .. })
        ));
        assert!(TrainConfig::from_text("patience=0").is_err());
        assert!(TrainConfig::from_text("lr=-1").is_err());
    }

    #[test]
    fn log_line_layout() {
        let e = LogEntry {
            epoch: 3,
            seen: 30,
            train_loss: 1.5,
            dev_ppl: 4.25,
            best: true,
        };
        assert_eq!(e.to_string(), "3\t30\t1.500000\t4.250000\t1");
        assert_eq!(LOG_HEADER.split('\t').count(), e.to_string().split('\t').count());
    }
}
