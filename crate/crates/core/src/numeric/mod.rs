//! Dense numeric kernel shared by every model: matrices, softmax, the
//! tanh recurrence, gradient buffers and a finite-difference checker.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::{axpy, dot, norm, Matrix, Vector};
pub use tape::{GradientTape, Parameters};

use crate::error::{Error, Result};

/// Numerically stable softmax. Rejects empty and non-finite input.
pub fn softmax(scores: &[f64]) -> Result<Vector> {
    if scores.is_empty() {
        return Err(Error::Empty("softmax scores"));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax score {v}")));
    }
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-subtracted softmax over a non-empty finite slice.
#[inline]
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    x.iter_mut().for_each(|v| *v *= inv);
}

/// `log softmax(x)[j]` without materialising the distribution.
pub fn log_softmax_at(x: &[f64], j: usize) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x[j] - lse
}

/// Index of the first maximal entry.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// `tanh(hm·h + pm·e)`.
pub fn affine_tanh(hm: &Matrix, h: &[f64], pm: &Matrix, e: &[f64]) -> Result<Vector> {
    if hm.rows() != hm.cols() || hm.cols() != h.len() || pm.rows() != hm.rows() || pm.cols() != e.len()
    {
        return Err(Error::Shape(format!(
            "affine_tanh with H {:?}, h {}, P {:?}, e {}",
            hm.shape(),
            h.len(),
            pm.shape(),
            e.len()
        )));
    }
    let mut out = hm.matvec(h)?;
    pm.matvec_acc(e, &mut out);
    out.iter_mut().for_each(|v| *v = v.tanh());
    Ok(out)
}
