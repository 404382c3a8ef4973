//! Encoder-decoder baseline, with optional attention over the encoder
//! states (fixed scope of `M + 1` positions).
//!
//! The encoder reads `s_0 .. s_M` with `enc[m] = tanh(He enc[m-1] + Pe Ee[s_m])`,
//! `enc[-1] = 0`. The decoder starts from `enc[M]`, consumes a start token
//! and then the target prefix: `dec[l] = tanh(Hd dec[l-1] + Pd Ed[x_l])`
//! with `x_0 = start`, `x_l = y_{l-1}`. Attention at step `l` queries with
//! `dec[l-1]` (`enc[M]` at `l = 0`). Encoder and decoder keep separate
//! embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::numeric::{argmax, axpy, dot, softmax_in_place, Matrix, Parameters, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub h: Matrix,
    pub p: Matrix,
    pub e: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqAttention {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Matrix,
    pub o_h: Matrix,
    pub o_z: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqParams {
    pub encoder: EncoderParams,
    pub dec_h: Matrix,
    pub dec_p: Matrix,
    pub dec_e: Matrix,
    pub o: Matrix,
    pub attention: Option<Seq2SeqAttention>,
}

impl Parameters for Seq2SeqParams {
    fn arrays(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![
            ("enc.H", &self.encoder.h),
            ("enc.P", &self.encoder.p),
            ("enc.E", &self.encoder.e),
            ("dec.H", &self.dec_h),
            ("dec.P", &self.dec_p),
            ("dec.E", &self.dec_e),
            ("O", &self.o),
        ];
        if let Some(a) = &self.attention {
            v.extend([("W", &a.w), ("U", &a.u), ("b", &a.b), ("O_h", &a.o_h), ("O_z", &a.o_z)]);
        }
        v
    }

    fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut v = vec![
            ("enc.H", &mut self.encoder.h),
            ("enc.P", &mut self.encoder.p),
            ("enc.E", &mut self.encoder.e),
            ("dec.H", &mut self.dec_h),
            ("dec.P", &mut self.dec_p),
            ("dec.E", &mut self.dec_e),
            ("O", &mut self.o),
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
        v
    }
}

fn recur(h: &Matrix, p: &Matrix, e: &Matrix, prev: &[f64], w: TokenId) -> Vector {
    let mut emb = vec![0.0; e.rows()];
    e.col_into(w, &mut emb);
    let mut out = vec![0.0; h.rows()];
    h.matvec_acc(prev, &mut out);
    p.matvec_acc(&emb, &mut out);
    out.iter_mut().for_each(|v| *v = v.tanh());
    out
}

struct Attended {
    alpha: Vector,
    act: Vec<Vector>,
    z: Vector,
}

pub(crate) struct Seq2SeqForward {
    enc: Vec<Vector>,
    keys: Vec<Vector>,
    dec: Vec<Vector>,
    outs: Vec<Vector>,
    probs: Vec<Vector>,
    attn: Vec<Option<Attended>>,
    pub(crate) log_probs: Vec<f64>,
    pub(crate) argmax: Vec<TokenId>,
    pub(crate) alphas: Vec<Vector>,
}

impl Seq2SeqParams {
    pub fn uniform<R: Rng + ?Sized>(
        d: usize,
        de: usize,
        v: usize,
        attention: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            encoder: EncoderParams {
                h: Matrix::uniform(d, d, scale, rng),
                p: Matrix::uniform(d, de, scale, rng),
                e: Matrix::uniform(de, v, scale, rng),
            },
            dec_h: Matrix::uniform(d, d, scale, rng),
            dec_p: Matrix::uniform(d, de, scale, rng),
            dec_e: Matrix::uniform(de, v, scale, rng),
            o: Matrix::uniform(d, v, scale, rng),
            attention: attention.then(|| Seq2SeqAttention {
                w: Matrix::uniform(d, d, scale, rng),
                u: Matrix::uniform(d, d, scale, rng),
                b: Matrix::uniform(d, 1, scale, rng),
                o_h: Matrix::uniform(d, d, scale, rng),
                o_z: Matrix::uniform(d, d, scale, rng),
            }),
        }
    }

    pub fn hidden(&self) -> usize {
        self.dec_h.rows()
    }

    pub fn vocab(&self) -> usize {
        self.o.cols()
    }

    fn check(&self, tokens: &[TokenId]) -> Result<()> {
        let v = self.vocab();
        match tokens.iter().find(|&&t| t >= v) {
            Some(&t) => Err(Error::TokenOutOfRange { token: t, vocab: v }),
            None => Ok(()),
        }
    }

    fn encode(&self, source: &[TokenId]) -> (Vec<Vector>, Vec<Vector>) {
        let d = self.hidden();
        let mut enc: Vec<Vector> = Vec::with_capacity(source.len());
        for &s in source {
            let prev = enc.last().cloned().unwrap_or_else(|| vec![0.0; d]);
            enc.push(recur(&self.encoder.h, &self.encoder.p, &self.encoder.e, &prev, s));
        }
        let keys = match &self.attention {
            Some(a) => enc
                .iter()
                .map(|h| {
                    let mut k = vec![0.0; d];
                    a.u.matvec_acc(h, &mut k);
                    k
                })
                .collect(),
            None => Vec::new(),
        };
        (enc, keys)
    }

    fn attend(&self, query: &[f64], enc: &[Vector], keys: &[Vector]) -> Option<Attended> {
        let a = self.attention.as_ref()?;
        let d = self.hidden();
        let mut wq = vec![0.0; d];
        a.w.matvec_acc(query, &mut wq);
        let mut act = Vec::with_capacity(enc.len());
        let mut alpha = Vec::with_capacity(enc.len());
        for k in keys {
            let x: Vector = wq.iter().zip(k).map(|(p, q)| (p + q).tanh()).collect();
            alpha.push(dot(a.b.data(), &x));
            act.push(x);
        }
        softmax_in_place(&mut alpha);
        let mut z = vec![0.0; d];
        for (w, h) in alpha.iter().zip(enc) {
            axpy(*w, h, &mut z);
        }
        Some(Attended { alpha, act, z })
    }

    fn output_input(&self, dec: &[f64], att: Option<&Attended>) -> Vector {
        match (&self.attention, att) {
            (Some(a), Some(att)) => {
                let mut out = vec![0.0; dec.len()];
                a.o_h.matvec_acc(dec, &mut out);
                a.o_z.matvec_acc(&att.z, &mut out);
                out
            }
            _ => dec.to_vec(),
        }
    }

    /// Teacher-forced pass. `target` tokens are all scored.
    pub(crate) fn forward(
        &self,
        source: &[TokenId],
        start: TokenId,
        target: &[TokenId],
    ) -> Result<Seq2SeqForward> {
        if source.is_empty() {
            return Err(Error::Empty("seq2seq source"));
        }
        if target.is_empty() {
            return Err(Error::Empty("seq2seq target"));
        }
        self.check(source)?;
        self.check(target)?;
        self.check(&[start])?;
        let (enc, keys) = self.encode(source);
        let n = target.len();
        let mut f = Seq2SeqForward {
            enc,
            keys,
            dec: Vec::with_capacity(n),
            outs: Vec::with_capacity(n),
            probs: Vec::with_capacity(n),
            attn: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
            alphas: Vec::new(),
        };
        for l in 0..n {
            let (prev, input) = if l == 0 {
                (f.enc.last().unwrap().clone(), start)
            } else {
                (f.dec[l - 1].clone(), target[l - 1])
            };
            let dec = recur(&self.dec_h, &self.dec_p, &self.dec_e, &prev, input);
            let att = self.attend(&prev, &f.enc, &f.keys);
            let out = self.output_input(&dec, att.as_ref());
            let mut logits = vec![0.0; self.vocab()];
            self.o.matvec_t_acc(&out, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            f.log_probs.push(logits[target[l]] - lse);
            let probs: Vector = logits.iter().map(|v| (v - lse).exp()).collect();
            f.argmax.push(argmax(&probs));
            if let Some(a) = &att {
                f.alphas.push(a.alpha.clone());
            }
            f.dec.push(dec);
            f.outs.push(out);
            f.probs.push(probs);
            f.attn.push(att);
        }
        Ok(f)
    }

    pub(crate) fn loss_and_grad(
        &self,
        source: &[TokenId],
        start: TokenId,
        target: &[TokenId],
        g: &mut Seq2SeqParams,
    ) -> Result<f64> {
        let f = self.forward(source, start, target)?;
        let loss = -f.log_probs.iter().sum::<f64>();
        let d = self.hidden();
        let de = self.dec_e.rows();
        let m_last = source.len() - 1;
        let n = target.len();
        let mut ddec = vec![vec![0.0; d]; n];
        let mut denc = vec![vec![0.0; d]; source.len()];
        let mut dkeys = vec![vec![0.0; d]; source.len()];

        for l in (0..n).rev() {
            let mut dlogits = f.probs[l].clone();
            dlogits[target[l]] -= 1.0;
            g.o.add_outer(&f.outs[l], &dlogits);
            let mut dout = vec![0.0; d];
            self.o.matvec_acc(&dlogits, &mut dout);
            let prev: &[f64] = if l == 0 { &f.enc[m_last] } else { &f.dec[l - 1] };

            match (&self.attention, &mut g.attention, &f.attn[l]) {
                (Some(a), Some(ga), Some(att)) => {
                    ga.o_h.add_outer(&dout, &f.dec[l]);
                    a.o_h.matvec_t_acc(&dout, &mut ddec[l]);
                    ga.o_z.add_outer(&dout, &att.z);
                    let mut dz = vec![0.0; d];
                    a.o_z.matvec_t_acc(&dout, &mut dz);
                    let dalpha: Vector = f.enc.iter().map(|h| dot(h, &dz)).collect();
                    for (m, w) in att.alpha.iter().enumerate() {
                        axpy(*w, &dz, &mut denc[m]);
                    }
                    let s: f64 = att.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                    let mut dpre_sum = vec![0.0; d];
                    let b = a.b.data();
                    for m in 0..f.enc.len() {
                        let dbeta = att.alpha[m] * (dalpha[m] - s);
                        let act = &att.act[m];
                        let gb = ga.b.data_mut();
                        for k in 0..d {
                            gb[k] += dbeta * act[k];
                            let dpre = dbeta * b[k] * (1.0 - act[k] * act[k]);
                            dkeys[m][k] += dpre;
                            dpre_sum[k] += dpre;
                        }
                    }
                    ga.w.add_outer(&dpre_sum, prev);
                    let dq = if l == 0 {
                        &mut denc[m_last]
                    } else {
                        &mut ddec[l - 1]
                    };
                    a.w.matvec_t_acc(&dpre_sum, dq);
                }
                _ => axpy(1.0, &dout, &mut ddec[l]),
            }

            let dpre: Vector = ddec[l]
                .iter()
                .zip(&f.dec[l])
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            g.dec_h.add_outer(&dpre, prev);
            let input = if l == 0 { start } else { target[l - 1] };
            let mut emb = vec![0.0; de];
            self.dec_e.col_into(input, &mut emb);
            g.dec_p.add_outer(&dpre, &emb);
            let mut demb = vec![0.0; de];
            self.dec_p.matvec_t_acc(&dpre, &mut demb);
            g.dec_e.add_to_col(input, &demb);
            let dprev = if l == 0 {
                &mut denc[m_last]
            } else {
                &mut ddec[l - 1]
            };
            self.dec_h.matvec_t_acc(&dpre, dprev);
        }

        if let (Some(a), Some(ga)) = (&self.attention, &mut g.attention) {
            for m in 0..f.enc.len() {
                ga.u.add_outer(&dkeys[m], &f.enc[m]);
                a.u.matvec_t_acc(&dkeys[m], &mut denc[m]);
            }
        }

        let de_enc = self.encoder.e.rows();
        for m in (0..source.len()).rev() {
            let dpre: Vector = denc[m]
                .iter()
                .zip(&f.enc[m])
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            if m >= 1 {
                g.encoder.h.add_outer(&dpre, &f.enc[m - 1]);
                let (head, _) = denc.split_at_mut(m);
                self.encoder.h.matvec_t_acc(&dpre, &mut head[m - 1]);
            }
            let mut emb = vec![0.0; de_enc];
            self.encoder.e.col_into(source[m], &mut emb);
            g.encoder.p.add_outer(&dpre, &emb);
            let mut demb = vec![0.0; de_enc];
            self.encoder.p.matvec_t_acc(&dpre, &mut demb);
            g.encoder.e.add_to_col(source[m], &demb);
        }
        Ok(loss)
    }
}

/// Incremental decoding state: encoder outputs plus the running decoder.
#[derive(Clone, Debug)]
pub struct Seq2SeqDecodeState {
    enc: Vec<Vector>,
    keys: Vec<Vector>,
    /// State predicting the next token.
    h: Vector,
    /// Query for the next step.
    prev_h: Vector,
}

impl Seq2SeqDecodeState {
    pub fn source_len(&self) -> usize {
        self.enc.len()
    }
}

impl Seq2SeqParams {
    pub(crate) fn begin(&self, source: &[TokenId], start: TokenId) -> Result<Seq2SeqDecodeState> {
        if source.is_empty() {
            return Err(Error::Empty("seq2seq source"));
        }
        self.check(source)?;
        self.check(&[start])?;
        let (enc, keys) = self.encode(source);
        let prev_h = enc.last().unwrap().clone();
        let h = recur(&self.dec_h, &self.dec_p, &self.dec_e, &prev_h, start);
        Ok(Seq2SeqDecodeState {
            enc,
            keys,
            h,
            prev_h,
        })
    }

    pub(crate) fn next(&self, s: &Seq2SeqDecodeState) -> (Vector, Option<Vector>) {
        let att = self.attend(&s.prev_h, &s.enc, &s.keys);
        let out = self.output_input(&s.h, att.as_ref());
        let mut logits = vec![0.0; self.vocab()];
        self.o.matvec_t_acc(&out, &mut logits);
        softmax_in_place(&mut logits);
        (logits, att.map(|a| a.alpha))
    }

    pub(crate) fn advance(&self, s: &mut Seq2SeqDecodeState, w: TokenId) -> Result<()> {
        self.check(&[w])?;
        let next = recur(&self.dec_h, &self.dec_p, &self.dec_e, &s.h, w);
        s.prev_h = std::mem::replace(&mut s.h, next);
        Ok(())
    }
}
