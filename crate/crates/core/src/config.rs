//! TOML pipeline configuration. Unknown keys are rejected and every range
//! violation names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregatorKind;
use crate::error::{Error, Result};
use crate::fusion::FusionWeights;
use crate::geometry::MiningParams;
use crate::loss::LossConfig;
use crate::miner::HardMinerState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    pub dist_threshold_m: f64,
    pub angle_threshold_deg: f64,
    pub offset_m: f64,
    pub consec_window_us: i64,
}

impl Default for MiningSection {
    fn default() -> Self {
        Self { dist_threshold_m: 10.0, angle_threshold_deg: 45.0, offset_m: 25.0, consec_window_us: 2_000_000 }
    }
}

impl MiningSection {
    pub fn params(&self) -> MiningParams<f64> {
        MiningParams {
            offset_m: self.offset_m,
            dist_threshold_m: self.dist_threshold_m,
            angle_threshold_rad: self.angle_threshold_deg.to_radians(),
            consec_window_us: self.consec_window_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorSection {
    pub dim: usize,
    pub aggregator: AggregatorKind,
    /// JSON aggregator parameters; random initialization from `seed` when absent.
    pub params: Option<PathBuf>,
}

impl Default for DescriptorSection {
    fn default() -> Self {
        Self { dim: 640, aggregator: AggregatorKind::Gem, params: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub w_v: f64,
    pub w_s: f64,
    pub normalize: bool,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { w_v: 1.0, w_s: 1.0, normalize: true }
    }
}

impl FusionSection {
    pub fn weights(&self) -> FusionWeights<f64> {
        FusionWeights { w_v: self.w_v, w_s: self.w_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Drop same-scene frames within the consecutive window from the database.
    pub exclude_consecutive: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], exclude_consecutive: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub pose_log: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mining: MiningSection,
    pub descriptor: DescriptorSection,
    pub fusion: FusionSection,
    pub loss: LossConfig<f64>,
    pub miner: HardMinerState,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}


fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_string(), message: message.into() }
}

/// `lo < v` or `lo <= v`, and `v <= hi`, reported as the interval.
fn check_range(field: &str, v: f64, lo: f64, lo_open: bool, hi: f64) -> Result<()> {
    let above = if lo_open { v > lo } else { v >= lo };
    if above && v <= hi && !v.is_nan() {
        return Ok(());
    }
    let open = if lo_open { '(' } else { '[' };
    let close = if hi.is_infinite() { ')' } else { ']' };
    Err(field_err(field, format!("must lie in {open}{lo}, {hi}{close}, got {v}")))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(String::new, |s| text[s].trim().to_string());
            field_err(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let inf = f64::INFINITY;
        let m = &self.mining;
        check_range("mining.dist_threshold_m", m.dist_threshold_m, 0.0, true, inf)?;
        check_range("mining.angle_threshold_deg", m.angle_threshold_deg, 0.0, true, 180.0)?;
        check_range("mining.offset_m", m.offset_m, 0.0, false, inf)?;
        check_range("mining.consec_window_us", m.consec_window_us as f64, 0.0, false, inf)?;

        if self.descriptor.dim == 0 {
            return Err(field_err("descriptor.dim", "must lie in [1, inf), got 0"));
        }

        check_range("fusion.w_v", self.fusion.w_v, -inf, true, inf)?;
        check_range("fusion.w_s", self.fusion.w_s, -inf, true, inf)?;

        let l = &self.loss;
        check_range("loss.margin", l.margin, 0.0, true, inf)?;
        check_range("loss.alpha", l.alpha, 0.0, false, inf)?;
        check_range("loss.beta", l.beta, 0.0, false, inf)?;
        check_range("loss.gamma", l.gamma, 0.0, false, inf)?;
        check_range("loss.n_pos", l.n_pos as f64, 1.0, false, inf)?;
        check_range("loss.n_neg", l.n_neg as f64, 1.0, false, inf)?;

        let h = &self.miner;
        check_range("miner.r_min", h.r_min, 0.0, false, 1.0)?;
        check_range("miner.r_max", h.r_max, h.r_min, false, 1.0)?;
        check_range("miner.hard_ratio", h.hard_ratio, h.r_min, false, h.r_max)?;
        check_range("miner.step_delta", h.step_delta, 0.0, false, 1.0)?;
        check_range("miner.tolerance", h.tolerance, 0.0, false, inf)?;

        check_range("split.test_fraction", self.split.test_fraction, 0.0, true, 1.0)?;
        if self.split.test_fraction >= 1.0 {
            return Err(field_err("split.test_fraction", format!("must lie in (0, 1), got {}", self.split.test_fraction)));
        }

        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(field_err("eval.ks", "must be a nonempty list of integers >= 1"));
        }
        Ok(())
    }
}
