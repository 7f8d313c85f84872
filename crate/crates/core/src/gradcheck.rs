//! Flat parameter vectors, central-difference gradients and comparison
//! reports.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Denominator floor for relative gradient error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat `f64` parameters with a registry of named, contiguous slices that
/// partition the vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    slots: Vec<ParamSlot>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named parameter block.
    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) -> &mut Self {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.slots.push(ParamSlot { name: name.into(), range: start..self.values.len() });
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.slot(name).map(|s| &self.values[s.range.clone()])
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Same registry, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(invalid(format!(
                "parameter vector has {} entries, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self { values, slots: self.slots.clone() })
    }

    /// True when the slots tile `0..len` in order without gaps or overlap.
    pub fn registry_is_partition(&self) -> bool {
        let mut next = 0;
        for s in &self.slots {
            if s.range.start != next || s.range.end < s.range.start {
                return false;
            }
            next = s.range.end;
        }
        next == self.values.len()
    }
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every
/// coordinate. Coordinates are evaluated in parallel; each evaluation is
/// independent so the result does not depend on scheduling.
pub fn numeric_gradient<F>(objective: F, theta: &ParamVector, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&ParamVector) -> Result<f64> + Sync,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let mut shifted = theta.clone();
            let x = theta.values[i];
            shifted.values[i] = x + h;
            let plus = objective(&shifted)?;
            shifted.values[i] = x - h;
            let minus = objective(&shifted)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "objective is not finite around coordinate {i} ({plus}, {minus})"
                )));
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub name: String,
    pub analytic: Option<Vec<f64>>,
    pub numeric: Vec<f64>,
    /// `None` when no analytic gradient exists for the parameter.
    pub max_rel_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    /// Splits flat analytic and numeric gradients along `theta`'s registry.
    pub fn compare(theta: &ParamVector, analytic: Option<&[f64]>, numeric: &[f64]) -> Result<Self> {
        if numeric.len() != theta.len() || analytic.is_some_and(|a| a.len() != theta.len()) {
            return Err(invalid("gradient length does not match the parameter vector"));
        }
        let entries = theta
            .slots()
            .iter()
            .map(|slot| {
                let n = numeric[slot.range.clone()].to_vec();
                let a = analytic.map(|a| a[slot.range.clone()].to_vec());
                let max_rel_error = a.as_ref().map(|a| {
                    a.iter()
                        .zip(&n)
                        .map(|(&x, &y)| relative_error(x, y))
                        .fold(0.0, f64::max)
                });
                GradEntry { name: slot.name.clone(), analytic: a, numeric: n, max_rel_error }
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn entry(&self, name: &str) -> Option<&GradEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20} {:>6} {:>14}", "parameter", "size", "max rel err");
        for e in &self.entries {
            let err = e.max_rel_error.map_or_else(|| "numeric only".to_string(), |v| format!("{v:.3e}"));
            let _ = writeln!(out, "{:<20} {:>6} {:>14}", e.name, e.numeric.len(), err);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> ParamVector {
        let mut p = ParamVector::new();
        p.push("x", &[x]);
        p
    }

    #[test]
    fn square_derivative() {
        let g = numeric_gradient(|t| Ok(t.values()[0].powi(2)), &scalar(3.0), DEFAULT_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut p = ParamVector::new();
        p.push("a", &[1.0, 2.0]).push("b", &[3.0]);
        let g = numeric_gradient(|_| Ok(4.2), &p, DEFAULT_STEP).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn negation_is_exact_antisymmetry() {
        let mut p = ParamVector::new();
        p.push("a", &[0.3, -1.7, 2.2]);
        let f = |t: &ParamVector| Ok(t.values().iter().map(|v| v.sin() * v.exp()).sum::<f64>());
        let g = numeric_gradient(f, &p, 1e-4).unwrap();
        let gn = numeric_gradient(|t: &ParamVector| f(t).map(|v| -v), &p, 1e-4).unwrap();
        for (a, b) in g.iter().zip(&gn) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn non_finite_objective_errors() {
        let r = numeric_gradient(|t| Ok(t.values()[0].ln()), &scalar(0.0), 1e-4);
        assert!(matches!(r, Err(Error::Evaluation(_))));
        assert!(numeric_gradient(|_| Ok(0.0), &scalar(0.0), 0.0).is_err());
    }

    #[test]
    fn registry_and_report() {
        let mut p = ParamVector::new();
        p.push("a", &[1.0, 2.0]).push("b", &[3.0]);
        assert!(p.registry_is_partition());
        assert_eq!(p.get("b"), Some(&[3.0][..]));
        let r = GradReport::compare(&p, Some(&[1.0, 2.0, 0.0]), &[1.0, 2.2, 1e-9]).unwrap();
        assert!((r.entry("a").unwrap().max_rel_error.unwrap() - 0.2 / 2.2).abs() < 1e-12);
        assert!((r.entry("b").unwrap().max_rel_error.unwrap() - 0.1).abs() < 1e-12);
        assert!(r.summary().contains("parameter"));
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
