use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per parameter array; arrays smaller than this are
    /// checked exhaustively.
    pub coords_per_array: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_array: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Array holding the worst coordinate, with its flat index.
    pub worst: Option<(&'static str, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `loss`.
///
/// Relative error per coordinate is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<P, F>(
    params: &P,
    analytic: &P,
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: Fn(&P) -> Result<f64>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::InvalidInput(format!("eps must be positive, got {}", opts.eps)));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss {base}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let analytic_arrays = analytic.arrays();
    let shapes: Vec<(&'static str, usize)> = params
        .arrays()
        .iter()
        .map(|(n, m)| (*n, m.data().len()))
        .collect();
    for (k, (name, len)) in shapes.into_iter().enumerate() {
        let (aname, agrad) = analytic_arrays[k];
        if aname != name || agrad.data().len() != len {
            return Err(Error::Shape(format!(
                "analytic gradient array {aname} does not match parameter {name}"
            )));
        }
        let coords: Vec<usize> = if len <= opts.coords_per_array {
            (0..len).collect()
        } else {
            sample(&mut rng, len, opts.coords_per_array).into_vec()
        };
        for idx in coords {
            let orig = params.arrays()[k].1.data()[idx];
            probe.arrays_mut()[k].1.data_mut()[idx] = orig + opts.eps;
            let plus = loss(&probe)?;
            probe.arrays_mut()[k].1.data_mut()[idx] = orig - opts.eps;
            let minus = loss(&probe)?;
            probe.arrays_mut()[k].1.data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while probing {name}[{idx}]")));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = agrad.data()[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name, idx));
            }
        }
    }
    Ok(report)
}
