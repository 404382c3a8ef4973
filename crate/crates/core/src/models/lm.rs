//! RNN language model, its attention extension with a growing scope over
//! the whole history, and the topic-feature variant.
//!
//! Indexing: `states[t]` is the hidden state that predicts token `w_t`.
//! `states[0]` is the zero vector and `states[t] = tanh(H states[t-1] +
//! P E[w_{t-1}])`. Token `i` is represented for attention by
//! `r_i = (E[w_i]; states[i])`. At step `t >= 1` the query is
//! `states[t-1]` and the scope is `r_0 .. r_{t-1}`; step 0 has no scope and
//! uses a zero context.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numeric::{dot, softmax_in_place, Matrix, Parameters, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnLmParams {
    /// Recurrence, d×d.
    pub h: Matrix,
    /// Embedding projection, d×d_e.
    pub p: Matrix,
    /// Input embeddings, d_e×V (one column per token).
    pub e: Matrix,
    /// Output embeddings, d×V.
    pub o: Matrix,
}

impl RnnLmParams {
    pub fn zeros(d: usize, de: usize, v: usize) -> Self {
        Self {
            h: Matrix::zeros(d, d),
            p: Matrix::zeros(d, de),
            e: Matrix::zeros(de, v),
            o: Matrix::zeros(d, v),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(d: usize, de: usize, v: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            h: Matrix::uniform(d, d, scale, rng),
            p: Matrix::uniform(d, de, scale, rng),
            e: Matrix::uniform(de, v, scale, rng),
            o: Matrix::uniform(d, v, scale, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.h.rows()
    }

    pub fn embed(&self) -> usize {
        self.e.rows()
    }

    pub fn vocab(&self) -> usize {
        self.e.cols()
    }

    fn check_token(&self, w: TokenId) -> Result<()> {
        if w >= self.vocab() {
            return Err(Error::TokenOutOfRange {
                token: w,
                vocab: self.vocab(),
            });
        }
        Ok(())
    }
}

/// Attention over token representations `r_i` of width `d_e + d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Query projection, d×d.
    pub w: Matrix,
    /// Key projection, d×d_r.
    pub u: Matrix,
    /// Score vector, d×1.
    pub b: Matrix,
    /// Output projection of the hidden state, d×d.
    pub o_h: Matrix,
    /// Output projection of the context, d×d_z.
    pub o_z: Matrix,
}

impl AttentionParams {
    pub fn zeros(d: usize, dr: usize) -> Self {
        Self {
            w: Matrix::zeros(d, d),
            u: Matrix::zeros(d, dr),
            b: Matrix::zeros(d, 1),
            o_h: Matrix::zeros(d, d),
            o_z: Matrix::zeros(d, dr),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(d: usize, dr: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w: Matrix::uniform(d, d, scale, rng),
            u: Matrix::uniform(d, dr, scale, rng),
            b: Matrix::uniform(d, 1, scale, rng),
            o_h: Matrix::uniform(d, d, scale, rng),
            o_z: Matrix::uniform(d, dr, scale, rng),
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.u.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicFeatureParams {
    /// Topic-proportion projection, d×K.
    pub o_theta: Matrix,
}

impl TopicFeatureParams {
    pub fn topics(&self) -> usize {
        self.o_theta.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub rnn: RnnLmParams,
    pub attention: Option<AttentionParams>,
    pub topic: Option<TopicFeatureParams>,
}

impl Parameters for LmParams {
    fn arrays(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![
            ("H", &self.rnn.h),
            ("P", &self.rnn.p),
            ("E", &self.rnn.e),
            ("O", &self.rnn.o),
        ];
        if let Some(a) = &self.attention {
            v.extend([("W", &a.w), ("U", &a.u), ("b", &a.b), ("O_h", &a.o_h), ("O_z", &a.o_z)]);
        }
        if let Some(t) = &self.topic {
            v.push(("O_theta", &t.o_theta));
        }
        v
    }

    fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = vec![
            ("H", &mut self.rnn.h),
            ("P", &mut self.rnn.p),
            ("E", &mut self.rnn.e),
            ("O", &mut self.rnn.o),
        ];
        if let Some(a) = &mut self.attention {
            v.extend([
                ("W", &mut a.w),
                ("U", &mut a.u),
                ("b", &mut a.b),
                ("O_h", &mut a.o_h),
                ("O_z", &mut a.o_z),
            ]);
        }
        if let Some(t) = &mut self.topic {
            v.push(("O_theta", &mut t.o_theta));
        }
        v
    }
}

/// One recurrence step: `tanh(H h_prev + P E[w_prev])`.
pub fn rnn_step(params: &RnnLmParams, h_prev: &[f64], w_prev: TokenId) -> Result<Vector> {
    params.check_token(w_prev)?;
    if h_prev.len() != params.hidden() {
        return Err(Error::Shape(format!(
            "hidden state of length {} for d={}",
            h_prev.len(),
            params.hidden()
        )));
    }
    Ok(step_unchecked(params, h_prev, w_prev))
}

fn step_unchecked(params: &RnnLmParams, h_prev: &[f64], w_prev: TokenId) -> Vector {
    let mut emb = vec![0.0; params.embed()];
    params.e.col_into(w_prev, &mut emb);
    let mut out = vec![0.0; params.hidden()];
    params.h.matvec_acc(h_prev, &mut out);
    params.p.matvec_acc(&emb, &mut out);
    out.iter_mut().for_each(|v| *v = v.tanh());
    out
}

/// `softmax_j(O_jᵀ h)`.
pub fn lm_next_dist(params: &RnnLmParams, h: &[f64]) -> Result<Vector> {
    if h.len() != params.hidden() {
        return Err(Error::Shape(format!("hidden state of length {}", h.len())));
    }
    let mut logits = params.o.matvec_t(h)?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Context over the representations `reps` for query `h_prev`. Returns the
/// context vector and the attention weights (one per representation).
pub fn attend(params: &AttentionParams, h_prev: &[f64], reps: &[Vector]) -> Result<(Vector, Vector)> {
    if reps.is_empty() {
        return Err(Error::Empty("attention scope"));
    }
    let d = params.w.rows();
    if h_prev.len() != d {
        return Err(Error::Shape(format!("query of length {} for d={d}", h_prev.len())));
    }
    if let Some(r) = reps.iter().find(|r| r.len() != params.rep_dim()) {
        return Err(Error::Shape(format!(
            "representation of length {} for d_r={}",
            r.len(),
            params.rep_dim()
        )));
    }
    let wq = params.w.matvec(h_prev)?;
    let keys: Vec<Vector> = reps.iter().map(|r| params.u.matvec(r)).collect::<Result<_>>()?;
    let a = attend_cached(params.b.data(), &wq, &keys, reps);
    Ok((a.z, a.alpha))
}

struct Attended {
    alpha: Vector,
    act: Vec<Vector>,
    z: Vector,
}

fn attend_cached(b: &[f64], wq: &[f64], keys: &[Vector], reps: &[Vector]) -> Attended {
    let mut act = Vec::with_capacity(keys.len());
    let mut alpha = Vec::with_capacity(keys.len());
    for k in keys {
        let a: Vector = wq.iter().zip(k).map(|(x, y)| (x + y).tanh()).collect();
        alpha.push(dot(b, &a));
        act.push(a);
    }
    softmax_in_place(&mut alpha);
    let mut z = vec![0.0; reps[0].len()];
    for (w, r) in alpha.iter().zip(reps) {
        crate::numeric::axpy(*w, r, &mut z);
    }
    Attended { alpha, act, z }
}

/// `softmax_j(O_jᵀ (O_h h + O_z z))`.
pub fn arnn_next_dist(
    rnn: &RnnLmParams,
    attention: &AttentionParams,
    h: &[f64],
    z: &[f64],
) -> Result<Vector> {
    tarnn_next_dist_inner(rnn, attention, None, h, z)
}

/// `softmax_j(O_jᵀ (O_h h + O_z z + O_θ θ))`. `theta` must be a
/// probability vector.
pub fn tarnn_next_dist(
    rnn: &RnnLmParams,
    attention: &AttentionParams,
    topic: &TopicFeatureParams,
    h: &[f64],
    z: &[f64],
    theta: &[f64],
) -> Result<Vector> {
    check_theta(theta, topic.topics())?;
    tarnn_next_dist_inner(rnn, attention, Some((topic, theta)), h, z)
}

fn tarnn_next_dist_inner(
    rnn: &RnnLmParams,
    attention: &AttentionParams,
    topic: Option<(&TopicFeatureParams, &[f64])>,
    h: &[f64],
    z: &[f64],
) -> Result<Vector> {
    let d = rnn.hidden();
    if h.len() != d || z.len() != attention.rep_dim() {
        return Err(Error::Shape(format!(
            "h of length {} and z of length {}",
            h.len(),
            z.len()
        )));
    }
    let mut out = attention.o_h.matvec(h)?;
    attention.o_z.matvec_acc(z, &mut out);
    if let Some((t, theta)) = topic {
        t.o_theta.matvec_acc(theta, &mut out);
    }
    let mut logits = rnn.o.matvec_t(&out)?;
    softmax_in_place(&mut logits);
    Ok(logits)
}

pub(crate) fn check_theta(theta: &[f64], k: usize) -> Result<()> {
    if theta.len() != k {
        return Err(Error::Shape(format!("theta of length {} for K={k}", theta.len())));
    }
    let sum: f64 = theta.iter().sum();
    if theta.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "topic proportions must be a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

/// Cached forward pass over one token sequence.
pub(crate) struct LmForward {
    states: Vec<Vector>,
    outs: Vec<Vector>,
    probs: Vec<Vector>,
    reps: Vec<Vector>,
    keys: Vec<Vector>,
    attn: Vec<Option<Attended>>,
    pub(crate) log_probs: Vec<f64>,
    pub(crate) argmax: Vec<TokenId>,
}

impl LmParams {
    pub fn hidden(&self) -> usize {
        self.rnn.hidden()
    }

    pub fn vocab(&self) -> usize {
        self.rnn.vocab()
    }

    fn validate_input(&self, tokens: &[TokenId], theta: Option<&[f64]>) -> Result<()> {
        for &w in tokens {
            self.rnn.check_token(w)?;
        }
        match (&self.topic, theta) {
            (Some(t), Some(th)) => check_theta(th, t.topics()),
            (Some(_), None) => Err(Error::InvalidInput(
                "topic-feature model requires topic proportions".into(),
            )),
            (None, _) => Ok(()),
        }
    }

    fn representation(&self, w: TokenId, state: &[f64]) -> Vector {
        let de = self.rnn.embed();
        let mut r = vec![0.0; de + state.len()];
        self.rnn.e.col_into(w, &mut r[..de]);
        r[de..].copy_from_slice(state);
        r
    }

    /// Projection input for the output layer at one step.
    fn output_input(&self, state: &[f64], z: Option<&[f64]>, theta: Option<&[f64]>) -> Vector {
        match &self.attention {
            None => state.to_vec(),
            Some(a) => {
                let mut out = vec![0.0; state.len()];
                a.o_h.matvec_acc(state, &mut out);
                if let Some(z) = z {
                    a.o_z.matvec_acc(z, &mut out);
                }
                if let (Some(t), Some(th)) = (&self.topic, theta) {
                    t.o_theta.matvec_acc(th, &mut out);
                }
                out
            }
        }
    }

    fn distribution(&self, out: &[f64]) -> (Vector, f64) {
        let mut logits = vec![0.0; self.vocab()];
        self.rnn.o.matvec_t_acc(out, &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let probs: Vector = logits.iter().map(|v| (v - lse).exp()).collect();
        (probs, lse)
    }

    pub(crate) fn forward(&self, tokens: &[TokenId], theta: Option<&[f64]>) -> Result<LmForward> {
        self.validate_input(tokens, theta)?;
        let d = self.hidden();
        let n = tokens.len();
        let mut f = LmForward {
            states: Vec::with_capacity(n),
            outs: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            reps: Vec::new(),
            keys: Vec::new(),
            attn: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
        };
        for t in 0..n {
            let state = if t == 0 {
                vec![0.0; d]
            } else {
                step_unchecked(&self.rnn, &f.states[t - 1], tokens[t - 1])
            };
            let att = match &self.attention {
                Some(a) if t >= 1 => {
                    let wq = a.w.matvec(&f.states[t - 1])?;
                    Some(attend_cached(a.b.data(), &wq, &f.keys[..t], &f.reps[..t]))
                }
                _ => None,
            };
            let out = self.output_input(&state, att.as_ref().map(|a| a.z.as_slice()), theta);
            let (probs, lse) = self.distribution(&out);
            let mut logit = 0.0;
            for (k, o) in out.iter().enumerate() {
                logit += self.rnn.o.get(k, tokens[t]) * o;
            }
            f.log_probs.push(logit - lse);
            f.argmax.push(crate::numeric::argmax(&probs));
            if let Some(a) = &self.attention {
                let r = self.representation(tokens[t], &state);
                f.keys.push(a.u.matvec(&r)?);
                f.reps.push(r);
            }
            f.states.push(state);
            f.outs.push(out);
            f.probs.push(probs);
            f.attn.push(att);
        }
        Ok(f)
    }

    /// Accumulates the gradient of `-Σ_t log P(w_t | w_<t)` into `g` and
    /// returns the loss.
    pub(crate) fn loss_and_grad(
        &self,
        tokens: &[TokenId],
        theta: Option<&[f64]>,
        g: &mut LmParams,
    ) -> Result<f64> {
        let f = self.forward(tokens, theta)?;
        let loss = -f.log_probs.iter().sum::<f64>();
        let n = tokens.len();
        let d = self.hidden();
        let de = self.rnn.embed();
        let mut dstate = vec![vec![0.0; d]; n];
        let dr_width = self.attention.as_ref().map_or(0, |a| a.rep_dim());
        let mut dr_direct = vec![vec![0.0; dr_width]; if self.attention.is_some() { n } else { 0 }];
        let mut dkeys = vec![vec![0.0; d]; if self.attention.is_some() { n } else { 0 }];

        for t in (0..n).rev() {
            let mut dlogits = f.probs[t].clone();
            dlogits[tokens[t]] -= 1.0;
            g.rnn.o.add_outer(&f.outs[t], &dlogits);
            let mut dout = vec![0.0; d];
            self.rnn.o.matvec_acc(&dlogits, &mut dout);

            match (&self.attention, &mut g.attention) {
                (Some(a), Some(ga)) => {
                    ga.o_h.add_outer(&dout, &f.states[t]);
                    a.o_h.matvec_t_acc(&dout, &mut dstate[t]);
                    if let (Some(gt), Some(th)) = (&mut g.topic, theta) {
                        gt.o_theta.add_outer(&dout, th);
                    }
                    if let Some(att) = &f.attn[t] {
                        ga.o_z.add_outer(&dout, &att.z);
                        let mut dz = vec![0.0; dr_width];
                        a.o_z.matvec_t_acc(&dout, &mut dz);
                        let dalpha: Vector = f.reps[..t].iter().map(|r| dot(r, &dz)).collect();
                        for (i, w) in att.alpha.iter().enumerate() {
                            crate::numeric::axpy(*w, &dz, &mut dr_direct[i]);
                        }
                        let s: f64 = att.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                        let mut dpre_sum = vec![0.0; d];
                        let b = a.b.data();
                        for i in 0..t {
                            let dbeta = att.alpha[i] * (dalpha[i] - s);
                            if dbeta == 0.0 {
                                continue;
                            }
                            let act = &att.act[i];
                            let gb = ga.b.data_mut();
                            for k in 0..d {
                                gb[k] += dbeta * act[k];
                                let dpre = dbeta * b[k] * (1.0 - act[k] * act[k]);
                                dkeys[i][k] += dpre;
                                dpre_sum[k] += dpre;
                            }
                        }
                        ga.w.add_outer(&dpre_sum, &f.states[t - 1]);
                        let (head, _) = dstate.split_at_mut(t);
                        a.w.matvec_t_acc(&dpre_sum, &mut head[t - 1]);
                    }
                    // r_t is only attended to by later steps, all processed.
                    if t + 1 < n {
                        let mut dr = std::mem::take(&mut dr_direct[t]);
                        a.u.matvec_t_acc(&dkeys[t], &mut dr);
                        ga.u.add_outer(&dkeys[t], &f.reps[t]);
                        g.rnn.e.add_to_col(tokens[t], &dr[..de]);
                        crate::numeric::axpy(1.0, &dr[de..], &mut dstate[t]);
                    }
                }
                _ => crate::numeric::axpy(1.0, &dout, &mut dstate[t]),
            }

            if t >= 1 {
                let s = &f.states[t];
                let dpre: Vector = dstate[t]
                    .iter()
                    .zip(s)
                    .map(|(g, h)| g * (1.0 - h * h))
                    .collect();
                g.rnn.h.add_outer(&dpre, &f.states[t - 1]);
                let (head, _) = dstate.split_at_mut(t);
                self.rnn.h.matvec_t_acc(&dpre, &mut head[t - 1]);
                let mut emb = vec![0.0; de];
                self.rnn.e.col_into(tokens[t - 1], &mut emb);
                g.rnn.p.add_outer(&dpre, &emb);
                let mut de_grad = vec![0.0; de];
                self.rnn.p.matvec_t_acc(&dpre, &mut de_grad);
                g.rnn.e.add_to_col(tokens[t - 1], &de_grad);
            }
        }
        Ok(loss)
    }
}

/// Incremental decoding state for the language-model family.
#[derive(Clone, Debug)]
pub struct LmDecodeState {
    pub(crate) tokens: Vec<TokenId>,
    /// State predicting the next token.
    pub(crate) h: Vector,
    /// Query for the next step (state before `h`).
    pub(crate) prev_h: Vector,
    pub(crate) reps: Vec<Vector>,
    pub(crate) keys: Vec<Vector>,
    pub(crate) theta: Option<Vector>,
}

impl LmDecodeState {
    pub fn consumed(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn hidden(&self) -> &[f64] {
        &self.h
    }

    pub fn scope_len(&self) -> usize {
        self.reps.len()
    }
}

impl LmParams {
    pub(crate) fn begin(&self, theta: Option<&[f64]>) -> Result<LmDecodeState> {
        self.validate_input(&[], theta)?;
        let d = self.hidden();
        Ok(LmDecodeState {
            tokens: Vec::new(),
            h: vec![0.0; d],
            prev_h: vec![0.0; d],
            reps: Vec::new(),
            keys: Vec::new(),
            theta: theta.map(<[f64]>::to_vec),
        })
    }

    /// Next-token distribution and, for attention models past the first
    /// token, the weights over the consumed history.
    pub(crate) fn next(&self, s: &LmDecodeState) -> (Vector, Option<Vector>) {
        let att = match &self.attention {
            Some(a) if !s.reps.is_empty() => {
                let mut wq = vec![0.0; self.hidden()];
                a.w.matvec_acc(&s.prev_h, &mut wq);
                Some(attend_cached(a.b.data(), &wq, &s.keys, &s.reps))
            }
            _ => None,
        };
        let out = self.output_input(&s.h, att.as_ref().map(|a| a.z.as_slice()), s.theta.as_deref());
        let (probs, _) = self.distribution(&out);
        (probs, att.map(|a| a.alpha))
    }

    pub(crate) fn advance(&self, s: &mut LmDecodeState, w: TokenId) -> Result<()> {
        self.rnn.check_token(w)?;
        if let Some(a) = &self.attention {
            let r = self.representation(w, &s.h);
            s.keys.push(a.u.matvec(&r)?);
            s.reps.push(r);
        }
        let next = step_unchecked(&self.rnn, &s.h, w);
        s.prev_h = std::mem::replace(&mut s.h, next);
        s.tokens.push(w);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let p = RnnLmParams::zeros(3, 2, 5);
        assert_eq!(rnn_step(&p, &[0.3, -0.2, 0.9], 4).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_set_two_dim_step() {
        let mut p = RnnLmParams::zeros(2, 1, 2);
        p.h = Matrix::from_rows(&[&[0.5, -1.0], &[0.25, 2.0]]).unwrap();
        p.p = Matrix::from_rows(&[&[1.0], &[-0.5]]).unwrap();
        p.e = Matrix::from_rows(&[&[0.2, 0.8]]).unwrap();
        let h = rnn_step(&p, &[0.4, -0.1], 1).unwrap();
        // 0.5*0.4 + -1*-0.1 + 0.8 = 1.1 ; 0.25*0.4 + 2*-0.1 - 0.4 = -0.5
        assert!((h[0] - 1.1f64.tanh()).abs() < 1e-15);
        assert!((h[1] - (-0.5f64).tanh()).abs() < 1e-15);
        assert!(matches!(
            rnn_step(&p, &[0.0, 0.0], 2),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn step_stays_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RnnLmParams::uniform(6, 4, 9, 3.0, &mut rng);
        let mut h = vec![0.0; 6];
        for w in 0..9 {
            h = rnn_step(&p, &h, w).unwrap();
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn zero_output_is_uniform() {
        let p = RnnLmParams::zeros(3, 2, 7);
        let dist = lm_next_dist(&p, &[0.5, 0.1, -0.3]).unwrap();
        assert!(dist.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn three_word_distribution_brute_force() {
        let mut p = RnnLmParams::zeros(2, 1, 3);
        p.o = Matrix::from_rows(&[&[1.0, 0.0, -1.0], &[0.5, 2.0, 0.0]]).unwrap();
        let h = [0.3, -0.6];
        let logits = [0.3 - 0.3, -1.2, -0.3];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let got = lm_next_dist(&p, &h).unwrap();
        for j in 0..3 {
            assert!((got[j] - logits[j].exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn random_states_give_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = RnnLmParams::uniform(5, 3, 11, 1.0, &mut rng);
        for _ in 0..100 {
            let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dist = lm_next_dist(&p, &h).unwrap();
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_scope_returns_its_representation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = AttentionParams::uniform(4, 7, 1.0, &mut rng);
        let r: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let (z, alpha) = attend(&a, &[0.1, 0.2, 0.3, 0.4], std::slice::from_ref(&r)).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(z, r);
    }

    #[test]
    fn identical_representations_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = AttentionParams::uniform(4, 7, 1.0, &mut rng);
        let r: Vec<f64> = (0..7).map(|i| 0.3 - i as f64 * 0.1).collect();
        let reps = vec![r.clone(); 5];
        let (z, alpha) = attend(&a, &[0.5; 4], &reps).unwrap();
        assert!(alpha.iter().all(|v| (v - 0.2).abs() < 1e-15));
        for (x, y) in z.iter().zip(&r) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_scope_is_an_error() {
        let a = AttentionParams::zeros(2, 3);
        assert!(matches!(attend(&a, &[0.0; 2], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn attention_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, dr) = (3, 5);
        let a = AttentionParams::uniform(d, dr, 1.0, &mut rng);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let reps: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dr).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (z, alpha) = attend(&a, &q, &reps).unwrap();
        let mut beta = Vec::new();
        for r in &reps {
            let mut s = 0.0;
            for k in 0..d {
                let mut pre = 0.0;
                for j in 0..d {
                    pre += a.w.get(k, j) * q[j];
                }
                for j in 0..dr {
                    pre += a.u.get(k, j) * r[j];
                }
                s += a.b.get(k, 0) * pre.tanh();
            }
            beta.push(s);
        }
        let want = softmax(&beta).unwrap();
        for i in 0..3 {
            assert!((alpha[i] - want[i]).abs() < 1e-12);
        }
        for j in 0..dr {
            let zj: f64 = (0..3).map(|i| want[i] * reps[i][j]).sum();
            assert!((z[j] - zj).abs() < 1e-12);
        }
    }

    fn random_attention_model(seed: u64, d: usize, de: usize, v: usize, k: Option<usize>) -> LmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LmParams {
            rnn: RnnLmParams::uniform(d, de, v, 0.5, &mut rng),
            attention: Some(AttentionParams::uniform(d, de + d, 0.5, &mut rng)),
            topic: k.map(|k| TopicFeatureParams {
                o_theta: Matrix::uniform(d, k, 0.5, &mut rng),
            }),
        }
    }

    #[test]
    fn arnn_with_disabled_context_matches_composed_output() {
        let mut m = random_attention_model(6, 4, 3, 9, None);
        let a = m.attention.as_mut().unwrap();
        a.o_z.fill(0.0);
        let h = [0.1, -0.4, 0.7, 0.2];
        let z = vec![0.3; 7];
        let got = arnn_next_dist(&m.rnn, a, &h, &z).unwrap();
        // O' = O_hᵀ O, so O'_jᵀ h = O_jᵀ O_h h.
        let composed = RnnLmParams {
            o: a.o_h.transpose().matmul(&m.rnn.o).unwrap(),
            ..m.rnn.clone()
        };
        let want = lm_next_dist(&composed, &h).unwrap();
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn arnn_distribution_brute_force() {
        let m = random_attention_model(7, 3, 2, 6, None);
        let a = m.attention.as_ref().unwrap();
        let h = [0.2, -0.1, 0.5];
        let z = [0.1, 0.4, -0.3, 0.2, 0.0];
        let got = arnn_next_dist(&m.rnn, a, &h, &z).unwrap();
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut logits = vec![0.0; 6];
        for j in 0..6 {
            for k in 0..3 {
                let mut proj = 0.0;
                for i in 0..3 {
                    proj += a.o_h.get(k, i) * h[i];
                }
                for i in 0..5 {
                    proj += a.o_z.get(k, i) * z[i];
                }
                logits[j] += m.rnn.o.get(k, j) * proj;
            }
        }
        let want = softmax(&logits).unwrap();
        for j in 0..6 {
            assert!((got[j] - want[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn topic_feature_behaviour() {
        let mut m = random_attention_model(8, 3, 2, 6, Some(4));
        let h = [0.2, -0.1, 0.5];
        let z = [0.1, 0.4, -0.3, 0.2, 0.0];
        let uniform = [0.25; 4];
        let one_hot = [0.0, 1.0, 0.0, 0.0];
        {
            let a = m.attention.as_ref().unwrap();
            let t = m.topic.as_ref().unwrap();
            let p1 = tarnn_next_dist(&m.rnn, a, t, &h, &z, &uniform).unwrap();
            let p2 = tarnn_next_dist(&m.rnn, a, t, &h, &z, &one_hot).unwrap();
            assert!(p1.iter().zip(&p2).any(|(x, y)| (x - y).abs() > 1e-6));
            // Brute force with the theta term folded in.
            let mut logits = vec![0.0; 6];
            for j in 0..6 {
                for k in 0..3 {
                    let mut proj = 0.0;
                    for i in 0..3 {
                        proj += a.o_h.get(k, i) * h[i];
                    }
                    for i in 0..5 {
                        proj += a.o_z.get(k, i) * z[i];
                    }
                    for i in 0..4 {
                        proj += t.o_theta.get(k, i) * one_hot[i];
                    }
                    logits[j] += m.rnn.o.get(k, j) * proj;
                }
            }
            let want = softmax(&logits).unwrap();
            for j in 0..6 {
                assert!((p2[j] - want[j]).abs() < 1e-12);
            }
            assert!(tarnn_next_dist(&m.rnn, a, t, &h, &z, &[0.5, 0.5, 0.5, 0.0]).is_err());
        }
        m.topic.as_mut().unwrap().o_theta.fill(0.0);
        let a = m.attention.as_ref().unwrap();
        let t = m.topic.as_ref().unwrap();
        assert_eq!(
            tarnn_next_dist(&m.rnn, a, t, &h, &z, &one_hot).unwrap(),
            arnn_next_dist(&m.rnn, a, &h, &z).unwrap()
        );
    }

    #[test]
    fn forward_matches_stepwise_decoding() {
        let m = random_attention_model(9, 4, 3, 10, Some(3));
        let theta = [0.2, 0.5, 0.3];
        let tokens = [4, 7, 1, 9, 9, 2, 5];
        let f = m.forward(&tokens, Some(&theta)).unwrap();
        let mut s = m.begin(Some(&theta)).unwrap();
        for (t, &w) in tokens.iter().enumerate() {
            let (probs, alpha) = m.next(&s);
            assert_eq!(probs, f.probs[t]);
            match (&alpha, &f.attn[t]) {
                (None, None) => assert_eq!(t, 0),
                (Some(a), Some(b)) => {
                    assert_eq!(a.len(), t);
                    assert_eq!(a, &b.alpha);
                }
                _ => panic!("attention presence differs at {t}"),
            }
            m.advance(&mut s, w).unwrap();
        }
    }
}
