//! Triplet margin loss and its three-head combination.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{euclidean, Real};
use crate::tensor::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig<T> {
    pub margin: T,
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl<T: Real> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            margin: T::of(0.5),
            alpha: T::one(),
            beta: T::one(),
            gamma: T::one(),
            n_pos: 1,
            n_neg: 6,
        }
    }
}

impl<T: Real> LossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > T::zero()) {
            return Err(invalid(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(invalid("n_pos and n_neg must be >= 1"));
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !w.is_finite()) {
            return Err(invalid("head weights must be finite"));
        }
        Ok(())
    }

    pub fn head_weight(&self, head: Head) -> T {
        match head {
            Head::Fused => self.alpha,
            Head::Visual => self.beta,
            Head::Structural => self.gamma,
        }
    }
}

/// The three descriptors trained jointly: fused (F), visual (R) and
/// structural (B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Fused,
    Visual,
    Structural,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Fused, Head::Visual, Head::Structural];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Fused => "F",
            Head::Visual => "R",
            Head::Structural => "B",
        })
    }
}

/// Anchor, positives and negatives of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBatch<T> {
    pub anchor: Descriptor<T>,
    pub positives: Vec<Descriptor<T>>,
    pub negatives: Vec<Descriptor<T>>,
}

impl<T: Real> HeadBatch<T> {
    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }
}

/// One mini-batch `(q, P_q, N_q)` across all three heads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MiniBatch<T> {
    pub heads: [Option<HeadBatch<T>>; 3],
}

impl<T: Real> MiniBatch<T> {
    pub fn new(fused: HeadBatch<T>, visual: HeadBatch<T>, structural: HeadBatch<T>) -> Self {
        Self { heads: [Some(fused), Some(visual), Some(structural)] }
    }

    pub fn head(&self, head: Head) -> Option<&HeadBatch<T>> {
        self.heads[head.index()].as_ref()
    }
}

/// `max(d(q, p) - d(q, n) + margin, 0)` with Euclidean `d`.
pub fn triplet_loss<T: Real>(q: &Descriptor<T>, p: &Descriptor<T>, n: &Descriptor<T>, margin: T) -> Result<T> {
    if q.dim() != p.dim() || q.dim() != n.dim() {
        return Err(invalid(format!(
            "triplet dimensions differ: {}, {}, {}",
            q.dim(),
            p.dim(),
            n.dim()
        )));
    }
    let dp = euclidean(q.as_slice(), p.as_slice());
    let dn = euclidean(q.as_slice(), n.as_slice());
    Ok((dp - dn + margin).max(T::zero()))
}

/// Mean triplet loss over the `n_pos × n_neg` grid of one head.
pub fn head_loss<T: Real>(batch: &MiniBatch<T>, head: Head, cfg: &LossConfig<T>) -> Result<T> {
    let hb = batch
        .head(head)
        .ok_or_else(|| invalid(format!("mini-batch is missing head {head}")))?;
    if hb.positives.is_empty() || hb.negatives.is_empty() {
        return Err(invalid(format!("head {head} needs at least one positive and one negative")));
    }
    if hb.positives.len() != cfg.n_pos || hb.negatives.len() != cfg.n_neg {
        return Err(invalid(format!(
            "head {head} has {} positives and {} negatives, config expects {} and {}",
            hb.positives.len(),
            hb.negatives.len(),
            cfg.n_pos,
            cfg.n_neg
        )));
    }
    let mut total = T::zero();
    for p in &hb.positives {
        for n in &hb.negatives {
            total += triplet_loss(&hb.anchor, p, n, cfg.margin)?;
        }
    }
    Ok(total / T::usize(hb.positives.len() * hb.negatives.len()))
}

/// `alpha · L_F + beta · L_R + gamma · L_B`.
pub fn multi_head_loss<T: Real>(batch: &MiniBatch<T>, cfg: &LossConfig<T>) -> Result<T> {
    let mut total = T::zero();
    for head in Head::ALL {
        total += cfg.head_weight(head) * head_loss(batch, head, cfg)?;
    }
    Ok(total)
}

/// Per-head losses `[L_F, L_R, L_B]`.
pub fn head_losses<T: Real>(batch: &MiniBatch<T>, cfg: &LossConfig<T>) -> Result<[T; 3]> {
    Ok([
        head_loss(batch, Head::Fused, cfg)?,
        head_loss(batch, Head::Visual, cfg)?,
        head_loss(batch, Head::Structural, cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(v: &[f64]) -> Descriptor<f64> {
        Descriptor::new(v.to_vec())
    }

    #[test]
    fn hinge_examples() {
        let q = d(&[0.0, 0.0]);
        assert_eq!(triplet_loss(&q, &d(&[0.2, 0.0]), &d(&[1.0, 0.0]), 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(triplet_loss(&q, &d(&[1.0, 0.0]), &d(&[0.0, 0.2]), 0.5).unwrap(), 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(triplet_loss(&q, &d(&[0.3, 0.4]), &d(&[0.3, 0.4]), 0.5).unwrap(), 0.5, epsilon = 1e-12);
        assert!(triplet_loss(&q, &d(&[1.0]), &d(&[1.0, 0.0]), 0.5).is_err());
    }

    fn single_head(anchor: &[f64], pos: &[&[f64]], neg: &[&[f64]]) -> HeadBatch<f64> {
        HeadBatch {
            anchor: d(anchor),
            positives: pos.iter().map(|p| d(p)).collect(),
            negatives: neg.iter().map(|n| d(n)).collect(),
        }
    }

    #[test]
    fn degenerate_grid_equals_single_triplet() {
        let hb = single_head(&[0.0], &[&[1.0]], &[&[0.2]]);
        let batch = MiniBatch::new(hb.clone(), hb.clone(), hb);
        let cfg = LossConfig { n_neg: 1, ..Default::default() };
        let expected = triplet_loss(&d(&[0.0]), &d(&[1.0]), &d(&[0.2]), 0.5).unwrap();
        assert_eq!(head_loss(&batch, Head::Visual, &cfg).unwrap(), expected);
    }

    #[test]
    fn constant_violation_averages_to_itself() {
        // Every triplet has d(q,p) = 1, d(q,n) = 0.5 -> 1.0.
        let hb = single_head(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], &[&[0.5, 0.0], &[0.0, -0.5], &[-0.5, 0.0]]);
        let batch = MiniBatch::new(hb.clone(), hb.clone(), hb);
        let cfg = LossConfig { n_pos: 2, n_neg: 3, ..Default::default() };
        assert_abs_diff_eq!(head_loss(&batch, Head::Fused, &cfg).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_head_and_size_mismatch() {
        let hb = single_head(&[0.0], &[&[1.0]], &[&[0.2]]);
        let mut batch = MiniBatch::new(hb.clone(), hb.clone(), hb);
        let cfg = LossConfig { n_neg: 1, ..Default::default() };
        assert!(head_loss(&batch, Head::Fused, &LossConfig::default()).is_err());
        batch.heads[2] = None;
        assert!(multi_head_loss(&batch, &cfg).is_err());
        let empty = single_head(&[0.0], &[], &[]);
        let batch = MiniBatch::new(empty.clone(), empty.clone(), empty);
        assert!(head_loss(&batch, Head::Fused, &cfg).is_err());
    }

    #[test]
    fn head_weighting() {
        // Positive at the anchor, negative at distance 0.5 - target.
        let head = |target: f64| single_head(&[0.0], &[&[0.0]], &[&[0.5 - target]]);
        let batch = MiniBatch::new(head(0.1), head(0.2), head(0.3));
        let cfg = |a, b, g| LossConfig { n_neg: 1, alpha: a, beta: b, gamma: g, margin: 0.5, n_pos: 1 };
        let per_head = head_losses(&batch, &cfg(1.0, 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(per_head[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(per_head[2], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(multi_head_loss(&batch, &cfg(1.0, 1.0, 1.0)).unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(multi_head_loss(&batch, &cfg(1.0, 1.0, 0.0)).unwrap(), 0.3, epsilon = 1e-12);
        let f_only = MiniBatch::new(head(0.4), head(0.2), head(0.3));
        assert_abs_diff_eq!(multi_head_loss(&f_only, &cfg(2.0, 0.0, 0.0)).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::<f64>::default().validate().is_ok());
        assert!(LossConfig { margin: 0.0, ..LossConfig::<f64>::default() }.validate().is_err());
        assert!(LossConfig { n_neg: 0, ..LossConfig::<f64>::default() }.validate().is_err());
    }
}
