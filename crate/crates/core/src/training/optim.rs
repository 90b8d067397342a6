//! Adam and gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::{all_finite, norm2, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T = f64> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
        }
    }

    /// One bias-corrected update of `theta`. A non-finite gradient leaves both
    /// the parameters and the moments untouched.
    pub fn update(&mut self, theta: &mut [T], grad: &[T], lr: T) -> Result<()> {
        check_len("parameters", self.m.len(), theta.len())?;
        check_len("gradient", self.m.len(), grad.len())?;
        if !all_finite(grad) {
            return Err(Error::NonFiniteGradient);
        }
        let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
        self.step += 1;
        let k = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(k);
        let c2 = T::one() - b2.powi(k);
        for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

/// Rescales `grad` to norm `r` when its norm exceeds `r`. Returns whether it was clipped.
pub fn clip_gradient<T: Scalar>(grad: &mut [T], r: T) -> bool {
    let norm = norm2(grad);
    if norm > r {
        let f = r / norm;
        grad.iter_mut().for_each(|g| *g *= f);
        true
    } else {
        false
    }
}
