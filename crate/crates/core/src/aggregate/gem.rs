use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap};

/// Per-channel generalized-mean exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemParams<T> {
    pub p: Vec<T>,
}

impl<T: Real> GemParams<T> {
    pub fn uniform(k: usize, p: T) -> Self {
        Self { p: vec![p; k] }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.p.len() != k {
            return Err(invalid(format!("GeM needs {k} exponents, got {}", self.p.len())));
        }
        if let Some(bad) = self.p.iter().find(|p| !(**p > T::zero()) || !p.is_finite()) {
            return Err(invalid(format!("GeM exponent must be positive and finite, got {bad}")));
        }
        Ok(())
    }
}

fn integer_exponent<T: Real>(p: T) -> Option<i32> {
    if p.fract() == T::zero() && p <= T::of(i32::MAX as f64) {
        p.to_i32()
    } else {
        None
    }
}

/// Generalized mean of one channel, `((1/N) Σ x^p)^(1/p)`.
///
/// Evaluated as `m · ((1/N) Σ (x/m)^p)^(1/p)` with `m = max |x|` so large
/// exponents do not overflow.
pub(crate) fn gem_channel<T: Real>(values: impl Iterator<Item = T> + Clone, p: T) -> Result<T> {
    let mut n = 0usize;
    let mut scale = T::zero();
    let mut negative = false;
    for v in values.clone() {
        n += 1;
        scale = scale.max(v.abs());
        negative |= v < T::zero();
    }
    if n == 0 {
        return Err(invalid("GeM needs at least one spatial location"));
    }
    if scale == T::zero() {
        return Ok(T::zero());
    }
    let int_p = integer_exponent(p);
    if negative && int_p.is_none() {
        return Err(invalid(format!("GeM with non-integer p = {p} needs nonnegative activations")));
    }
    let inv_n = T::usize(n).recip();
    let mean = match int_p {
        Some(ip) => values.map(|v| (v / scale).powi(ip)).sum::<T>() * inv_n,
        None => values.map(|v| (v / scale).powf(p)).sum::<T>() * inv_n,
    };
    let root = if mean < T::zero() {
        // Odd integer exponent over mixed-sign values: real root keeps the sign.
        -(-mean).powf(p.recip())
    } else {
        mean.powf(p.recip())
    };
    Ok(scale * root)
}

/// Generalized-mean pooling with one exponent per channel.
pub fn gem<T: Real>(x: &FeatureMap<T>, params: &GemParams<T>) -> Result<Descriptor<T>> {
    params.validate(x.k())?;
    let k = x.k();
    let data = x.data();
    (0..k)
        .map(|c| gem_channel(data.iter().skip(c).step_by(k).copied(), params.p[c]))
        .collect::<Result<Vec<_>>>()
        .map(Descriptor::new)
}
