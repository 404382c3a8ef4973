use super::Matrix;

/// A fixed, named collection of learnable arrays.
///
/// The gradient of a parameter set is stored in a value of the same type,
/// so shapes line up by construction.
pub trait Parameters: Clone {
    fn arrays(&self) -> Vec<(&'static str, &Matrix)>;

    fn arrays_mut(&mut self) -> Vec<(&'static str, &mut Matrix)>;

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.arrays_mut().into_iter().for_each(|(_, m)| m.fill(0.0));
        out
    }

    fn num_params(&self) -> usize {
        self.arrays().iter().map(|(_, m)| m.data().len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, m)| m.is_finite())
    }
}

/// Gradient accumulation buffers, one per parameter array.
#[derive(Clone, Debug)]
pub struct GradientTape<P: Parameters> {
    grads: P,
}

impl<P: Parameters> GradientTape<P> {
    pub fn new(params: &P) -> Self {
        Self {
            grads: params.zeros_like(),
        }
    }

    pub fn reset(&mut self) {
        self.grads
            .arrays_mut()
            .into_iter()
            .for_each(|(_, m)| m.fill(0.0));
    }

    pub fn grads(&self) -> &P {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut P {
        &mut self.grads
    }

    pub fn into_grads(self) -> P {
        self.grads
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .arrays()
            .iter()
            .map(|(_, m)| m.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all buffers so the global L2 norm is at most `threshold`.
    /// Returns the factor applied (1.0 when no clipping happened).
    pub fn clip_global_norm(&mut self, threshold: f64) -> f64 {
        let n = self.global_norm();
        if n > threshold && n > 0.0 {
            let s = threshold / n;
            self.grads
                .arrays_mut()
                .into_iter()
                .for_each(|(_, m)| m.scale(s));
            s
        } else {
            1.0
        }
    }
}
