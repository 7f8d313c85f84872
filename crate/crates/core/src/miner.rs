//! Online adaptive hard-negative mining.
//!
//! The hard ratio moves by a fixed step per epoch: down when the epoch's
//! mean loss rises beyond a tolerance (hard negatives destabilize
//! training), up when it falls beyond the tolerance, and stays put inside
//! the dead zone.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardMinerState {
    pub hard_ratio: f64,
    /// Mean loss of the previous epoch; `None` before the first update.
    pub prev_mean_loss: Option<f64>,
    pub step_delta: f64,
    pub tolerance: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for HardMinerState {
    fn default() -> Self {
        Self {
            hard_ratio: 0.5,
            prev_mean_loss: None,
            step_delta: 0.1,
            tolerance: 1e-3,
            r_min: 0.1,
            r_max: 0.9,
        }
    }
}

impl HardMinerState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_min && self.r_min <= self.r_max && self.r_max <= 1.0) {
            return Err(invalid(format!(
                "hard-ratio bounds must satisfy 0 <= r_min <= r_max <= 1, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(self.step_delta >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(invalid("step_delta and tolerance must be >= 0"));
        }
        if !(self.r_min..=self.r_max).contains(&self.hard_ratio) {
            return Err(invalid(format!(
                "hard_ratio {} outside [{}, {}]",
                self.hard_ratio, self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    /// Number of negatives taken as the hardest candidates.
    pub fn hard_count(&self, n_neg: usize) -> usize {
        // Slack absorbs accumulated step error (0.1 * 7 != 0.7 exactly).
        let hard = (self.hard_ratio * n_neg as f64 - 1e-9).ceil().max(0.0) as usize;
        hard.min(n_neg)
    }
}

/// Folds one epoch's mean loss into the miner state.
pub fn update_miner(state: &HardMinerState, epoch_mean_loss: f64) -> HardMinerState {
    let mut next = *state;
    if let Some(prev) = state.prev_mean_loss {
        if epoch_mean_loss > prev + state.tolerance {
            next.hard_ratio -= state.step_delta;
        } else if epoch_mean_loss < prev - state.tolerance {
            next.hard_ratio += state.step_delta;
        }
    }
    next.hard_ratio = next.hard_ratio.clamp(state.r_min, state.r_max);
    next.prev_mean_loss = Some(epoch_mean_loss);
    next
}

/// Picks `n_neg` negatives: the `ceil(hard_ratio · n_neg)` closest
/// candidates (ties by id), then a seeded uniform sample without
/// replacement from the remainder. Hard picks come first, ordered by
/// distance.
pub fn select_negatives<T: Real>(
    candidates: &[(String, T)],
    n_neg: usize,
    state: &HardMinerState,
    seed: u64,
) -> Result<Vec<String>> {
    if candidates.len() < n_neg {
        return Err(invalid(format!(
            "need {n_neg} negative candidates, got {}",
            candidates.len()
        )));
    }
    if let Some((id, _)) = candidates.iter().find(|(_, d)| d.is_nan()) {
        return Err(invalid(format!("candidate `{id}` has a NaN distance")));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[a]
            .1
            .partial_cmp(&candidates[b].1)
            .expect("NaN excluded above")
            .then_with(|| candidates[a].0.cmp(&candidates[b].0))
    });
    let hard = state.hard_count(n_neg);
    let mut picked: Vec<String> = order[..hard].iter().map(|&i| candidates[i].0.clone()).collect();
    let rest = &order[hard..];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    picked.extend(
        sample(&mut rng, rest.len(), n_neg - hard)
            .into_iter()
            .map(|j| candidates[rest[j]].0.clone()),
    );
    Ok(picked)
}
