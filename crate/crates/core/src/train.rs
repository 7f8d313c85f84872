//! Deterministic full-batch gradient descent on the three-head loss over a
//! small synthetic two-stream dataset.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gradcheck::{numeric_gradient, GradReport};
use crate::loss::LossConfig;
use crate::miner::{select_negatives, update_miner, HardMinerState};
use crate::model::{FusionModel, LossBreakdown, StreamPair, TrainBatch, TripletGroup};
use crate::scalar::euclidean;
use crate::tensor::FeatureMap;

/// Loss above which training is abandoned.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Smallest GeM exponent kept after a descent step.
pub const MIN_GEM_P: f64 = 0.5;

/// Activations are clamped to this floor so GeM stays well defined.
const ACTIVATION_FLOOR: f64 = 1e-3;

/// Places with Gaussian visual features and clean, place-coded structural
/// features. Night samples have their visual features multiplied by
/// `corruption` plus `night_noise · (1 - corruption)` Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDataSpec {
    pub places: usize,
    pub samples_per_place: usize,
    pub h: usize,
    pub w: usize,
    pub k_visual: usize,
    pub k_structural: usize,
    pub d_visual: usize,
    pub visual_sigma: f64,
    pub structural_sigma: f64,
    pub night_fraction: f64,
    pub corruption: f64,
    pub night_noise: f64,
    pub normalize: bool,
}

impl Default for ToyDataSpec {
    fn default() -> Self {
        Self {
            places: 2,
            samples_per_place: 8,
            h: 2,
            w: 2,
            k_visual: 8,
            k_structural: 4,
            d_visual: 8,
            visual_sigma: 0.1,
            structural_sigma: 0.05,
            night_fraction: 0.0,
            corruption: 0.1,
            night_noise: 0.5,
            normalize: true,
        }
    }
}

impl ToyDataSpec {
    pub fn validate(&self, n_neg: usize) -> Result<()> {
        if self.places < 2 || self.samples_per_place < 2 {
            return Err(invalid("toy data needs at least 2 places with 2 samples each"));
        }
        if self.h == 0 || self.w == 0 || self.k_visual == 0 || self.k_structural == 0 || self.d_visual == 0 {
            return Err(invalid("toy data dimensions must be >= 1"));
        }
        if (self.places - 1) * self.samples_per_place < n_neg {
            return Err(invalid(format!("toy data has too few cross-place samples for n_neg = {n_neg}")));
        }
        if !(0.0..=1.0).contains(&self.night_fraction) || !(0.0..=1.0).contains(&self.corruption) {
            return Err(invalid("night_fraction and corruption must lie in [0, 1]"));
        }
        if !(self.visual_sigma >= 0.0 && self.structural_sigma >= 0.0 && self.night_noise >= 0.0) {
            return Err(invalid("noise scales must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub samples: Vec<StreamPair>,
    pub place: Vec<usize>,
    pub night: Vec<bool>,
}

pub fn generate_toy(spec: &ToyDataSpec, rng: &mut impl Rng) -> Result<ToyData> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let visual_means: Vec<Vec<f64>> = (0..spec.places)
        .map(|_| (0..spec.k_visual).map(|_| rng.random_range(0.2..2.0)).collect())
        .collect();
    // Channel c is strong for place c mod places.
    let structural_mean = |place: usize, c: usize| if c % spec.places == place { 2.0 } else { 0.3 };

    let mut data = ToyData { samples: Vec::new(), place: Vec::new(), night: Vec::new() };
    for place in 0..spec.places {
        for _ in 0..spec.samples_per_place {
            let night = rng.random::<f64>() < spec.night_fraction;
            let visual = FeatureMap::from_fn(spec.h, spec.w, spec.k_visual, |_, _, c| {
                let mut v = visual_means[place][c] + spec.visual_sigma * unit.sample(rng);
                if night {
                    v = spec.corruption * v + spec.night_noise * (1.0 - spec.corruption) * unit.sample(rng);
                }
                v.max(ACTIVATION_FLOOR)
            })?;
            let structural = FeatureMap::from_fn(spec.h, spec.w, spec.k_structural, |_, _, c| {
                (structural_mean(place, c) + spec.structural_sigma * unit.sample(rng)).max(ACTIVATION_FLOOR)
            })?;
            data.samples.push(StreamPair { visual, structural });
            data.place.push(place);
            data.night.push(night);
        }
    }
    Ok(data)
}

/// One group per sample: the next same-place sample as positive and the
/// first `n_neg` samples of other places as negatives.
pub fn fixed_groups(place: &[usize], n_pos: usize, n_neg: usize) -> Result<Vec<TripletGroup>> {
    let mut groups = Vec::with_capacity(place.len());
    for (i, &pl) in place.iter().enumerate() {
        let same: Vec<usize> = (1..place.len()).map(|o| (i + o) % place.len()).filter(|&j| place[j] == pl).collect();
        let other: Vec<usize> = (0..place.len()).filter(|&j| place[j] != pl).collect();
        if same.len() < n_pos || other.len() < n_neg {
            return Err(invalid(format!("sample {i} lacks {n_pos} positives or {n_neg} negatives")));
        }
        groups.push(TripletGroup {
            anchor: i,
            positives: same[..n_pos].to_vec(),
            negatives: other[..n_neg].to_vec(),
        });
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub w_v: f64,
    pub w_s: f64,
    /// Present when negatives are re-mined each step.
    pub hard_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Loss and fusion weights before each update.
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
    pub model: FusionModel,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(self.final_loss.total, |r| r.loss.total)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOptions {
    pub loss: LossConfig<f64>,
    /// Re-select negatives every step by fused-head distance.
    pub miner: Option<HardMinerState>,
}

/// Generates the toy dataset from `seed`, initializes a model and runs
/// `steps` descent updates with step size `lr`.
pub fn toy_train(spec: &ToyDataSpec, steps: usize, lr: f64, seed: u64) -> Result<TrainOutcome> {
    toy_train_with(spec, steps, lr, seed, &TrainOptions::default())
}

pub fn toy_train_with(spec: &ToyDataSpec, steps: usize, lr: f64, seed: u64, opts: &TrainOptions) -> Result<TrainOutcome> {
    if steps == 0 {
        return Err(invalid("steps must be >= 1"));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    opts.loss.validate()?;
    spec.validate(opts.loss.n_neg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_toy(spec, &mut rng)?;
    let mut model = FusionModel::init(spec.k_visual, spec.d_visual, spec.k_structural, spec.normalize, &mut rng);
    let mut batch = TrainBatch {
        groups: fixed_groups(&data.place, opts.loss.n_pos, opts.loss.n_neg)?,
        samples: data.samples,
    };
    let mut miner = opts.miner;
    if let Some(m) = &miner {
        m.validate()?;
    }

    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        if let Some(state) = &miner {
            remine(&model, &mut batch, &data.place, opts.loss.n_neg, state, seed ^ step as u64)?;
        }
        let g = model.gradient(&batch, &opts.loss)?;
        check_divergence(step, g.loss.total)?;
        trace.push(TraceRow {
            step,
            loss: g.loss,
            w_v: model.fusion.w_v,
            w_s: model.fusion.w_s,
            hard_ratio: miner.map(|m| m.hard_ratio),
        });
        if let Some(state) = &mut miner {
            *state = update_miner(state, g.loss.total);
        }
        if lr == 0.0 {
            continue;
        }
        let mut theta = model.to_params();
        for (t, d) in theta.values_mut().iter_mut().zip(&g.gradient) {
            *t -= lr * d;
        }
        model = model.with_params(&theta)?;
        for p in model.p_visual.iter_mut().chain(model.p_structural.iter_mut()) {
            *p = p.max(MIN_GEM_P);
        }
    }
    let final_loss = model.loss(&batch, &opts.loss)?;
    check_divergence(steps, final_loss.total)?;
    Ok(TrainOutcome { trace, final_loss, model })
}

fn check_divergence(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Evaluation(format!(
            "training diverged at step {step}: loss {loss} exceeds {DIVERGENCE_LIMIT}; lower the learning rate"
        )));
    }
    Ok(())
}

fn remine(
    model: &FusionModel,
    batch: &mut TrainBatch,
    place: &[usize],
    n_neg: usize,
    state: &HardMinerState,
    seed: u64,
) -> Result<()> {
    let fused: Vec<Vec<f64>> = batch
        .samples
        .iter()
        .map(|s| model.embed(s).map(|[f, _, _]| f))
        .collect::<Result<_>>()?;
    for g in &mut batch.groups {
        let candidates: Vec<(String, f64)> = (0..place.len())
            .filter(|&j| place[j] != place[g.anchor])
            .map(|j| (format!("{j:08}"), euclidean(&fused[g.anchor], &fused[j])))
            .collect();
        g.negatives = select_negatives(&candidates, n_neg, state, seed ^ (g.anchor as u64).rotate_left(17))?
            .iter()
            .map(|id| id.parse().expect("ids are formatted indices"))
            .collect();
    }
    Ok(())
}

/// Analytic versus central-difference gradients of the total loss on a
/// freshly generated toy batch and model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGradcheck {
    pub report: GradReport,
    pub boundary_hits: usize,
    pub loss: LossBreakdown,
}

pub fn toy_gradcheck(spec: &ToyDataSpec, cfg: &LossConfig<f64>, seed: u64, h: f64) -> Result<ToyGradcheck> {
    cfg.validate()?;
    spec.validate(cfg.n_neg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_toy(spec, &mut rng)?;
    let model = FusionModel::init(spec.k_visual, spec.d_visual, spec.k_structural, spec.normalize, &mut rng);
    let batch = TrainBatch { groups: fixed_groups(&data.place, cfg.n_pos, cfg.n_neg)?, samples: data.samples };
    let theta = model.to_params();
    let analytic = model.gradient(&batch, cfg)?;
    let numeric = numeric_gradient(|t| Ok(model.with_params(t)?.loss(&batch, cfg)?.total), &theta, h)?;
    Ok(ToyGradcheck {
        report: GradReport::compare(&theta, Some(&analytic.gradient), &numeric)?,
        boundary_hits: analytic.boundary_hits,
        loss: analytic.loss,
    })
}

/// Writes `step,loss_F,loss_R,loss_B,w_v,w_s`, with a trailing
/// `hard_ratio` column when any row carries one.
pub fn write_trace_csv(trace: &[TraceRow], out: impl Write) -> Result<()> {
    let mining = trace.iter().any(|r| r.hard_ratio.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step", "loss_F", "loss_R", "loss_B", "w_v", "w_s"];
    if mining {
        header.push("hard_ratio");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in trace {
        let mut rec = vec![
            r.step.to_string(),
            r.loss.heads[0].to_string(),
            r.loss.heads[1].to_string(),
            r.loss.heads[2].to_string(),
            r.w_v.to_string(),
            r.w_s.to_string(),
        ];
        if mining {
            rec.push(r.hard_ratio.map_or_else(String::new, |h| h.to_string()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let spec = ToyDataSpec::default();
        let a = toy_train(&spec, 5, 0.0, 3).unwrap();
        let b = toy_train(&spec, 1, 0.0, 3).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.trace.iter().all(|r| r.loss == a.trace[0].loss));
    }

    #[test]
    fn separable_batch_converges() {
        let out = toy_train(&ToyDataSpec::default(), 200, 0.5, 0).unwrap();
        let init = out.initial_loss();
        assert!(init > 0.0);
        assert!(out.final_loss.total < 0.1 * init, "{} -> {}", init, out.final_loss.total);
    }

    #[test]
    fn traces_are_bit_identical() {
        let spec = ToyDataSpec { night_fraction: 0.3, ..Default::default() };
        let opts = TrainOptions { miner: Some(HardMinerState::default()), ..Default::default() };
        let a = toy_train_with(&spec, 20, 0.1, 9, &opts).unwrap();
        let b = toy_train_with(&spec, 20, 0.1, 9, &opts).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_trace_csv(&a.trace, &mut ca).unwrap();
        write_trace_csv(&b.trace, &mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().starts_with("step,loss_F,loss_R,loss_B,w_v,w_s,hard_ratio\n"));
    }

    #[test]
    fn toy_gradcheck_agrees() {
        let spec = ToyDataSpec { night_fraction: 0.5, ..Default::default() };
        let g = toy_gradcheck(&spec, &LossConfig::default(), 0, 1e-4).unwrap();
        assert!(g.loss.total > 0.0);
        assert!(g.report.max_rel_error() < 1e-4, "{}", g.report.summary());
    }

    #[test]
    fn divergence_is_reported() {
        let err = check_divergence(7, 2e6).unwrap_err();
        assert!(err.to_string().contains("diverged at step 7"), "{err}");
        assert!(check_divergence(0, f64::NAN).is_err());
        assert!(check_divergence(0, DIVERGENCE_LIMIT).is_ok());
    }
}
