//! Log-domain helpers.

use crate::scalar::Scalar;

/// `log(e^a + e^b)` without overflow.
pub fn log_add_exp<F: Scalar>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ e^{x_i}`; `-inf` for an empty input.
pub fn log_sum_exp<F: Scalar>(values: impl IntoIterator<Item = F>) -> F {
    let mut acc = LogSumExp::new();
    for v in values {
        acc.push(v);
    }
    acc.value()
}

/// Streaming log-sum-exp that rescales against the running maximum.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp<F> {
    max: F,
    scaled: F,
}

impl<F: Scalar> LogSumExp<F> {
    pub fn new() -> Self {
        Self { max: F::neg_infinity(), scaled: F::zero() }
    }

    pub fn push(&mut self, v: F) {
        if v == F::neg_infinity() {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + F::one();
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    pub fn value(&self) -> F {
        if self.scaled == F::zero() {
            F::neg_infinity()
        } else {
            self.max + self.scaled.ln()
        }
    }
}

impl<F: Scalar> Default for LogSumExp<F> {
    fn default() -> Self {
        Self::new()
    }
}
