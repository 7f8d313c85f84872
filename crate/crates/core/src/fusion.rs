//! Weighted concatenation of visual and structural descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Descriptor;

/// Scalar weights applied to the visual and structural halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights<T> {
    pub w_v: T,
    pub w_s: T,
}

impl<T: Real> Default for FusionWeights<T> {
    fn default() -> Self {
        Self { w_v: T::one(), w_s: T::one() }
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize<T: Real>(v: &Descriptor<T>) -> Result<Descriptor<T>> {
    let n = v.norm();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize a vector of norm {n}")));
    }
    Ok(v.scaled(n.recip()))
}

/// `concat(w_v · f_v, w_s · f_s)`, optionally scaled to unit norm.
pub fn fuse<T: Real>(
    f_v: &Descriptor<T>,
    f_s: &Descriptor<T>,
    weights: FusionWeights<T>,
    normalize: bool,
) -> Result<Descriptor<T>> {
    if !f_v.is_finite() || !f_s.is_finite() || !weights.w_v.is_finite() || !weights.w_s.is_finite() {
        return Err(Error::InvalidInput("fusion inputs must be finite".into()));
    }
    if normalize && weights.w_v == T::zero() && weights.w_s == T::zero() {
        return Err(Error::Degenerate("both fusion weights are zero".into()));
    }
    let mut out = Vec::with_capacity(f_v.dim() + f_s.dim());
    out.extend(f_v.as_slice().iter().map(|&x| weights.w_v * x));
    out.extend(f_s.as_slice().iter().map(|&x| weights.w_s * x));
    let fused = Descriptor::new(out);
    if normalize {
        l2_normalize(&fused)
    } else {
        Ok(fused)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Descriptor<f64> {
        Descriptor::new(v.to_vec())
    }

    #[test]
    fn unit_weights_concatenate() {
        let out = fuse(&d(&[1.0, 2.0]), &d(&[3.0]), FusionWeights::default(), false).unwrap();
        assert_eq!(out.0, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_structural_weight() {
        let out = fuse(&d(&[1.0, 2.0]), &d(&[3.0, 4.0]), FusionWeights { w_v: 1.0, w_s: 0.0 }, false).unwrap();
        assert_eq!(&out.0[2..], &[0.0, 0.0]);
    }

    #[test]
    fn three_four_five() {
        let out = fuse(&d(&[3.0, 0.0]), &d(&[0.0, 4.0]), FusionWeights::default(), true).unwrap();
        let expected = [0.6, 0.0, 0.0, 0.8];
        for (a, b) in out.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_cases() {
        let zero = FusionWeights { w_v: 0.0, w_s: 0.0 };
        assert!(matches!(fuse(&d(&[1.0]), &d(&[1.0]), zero, true), Err(Error::Degenerate(_))));
        assert!(fuse(&d(&[1.0]), &d(&[1.0]), zero, false).is_ok());
        assert!(fuse(&d(&[f64::NAN]), &d(&[1.0]), FusionWeights::default(), false).is_err());
    }
}
