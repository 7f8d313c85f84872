//! Differentiable two-stream descriptor model used for gradient checks and
//! toy training.
//!
//! Visual stream: GeM pooling then an affine projection. Structural stream:
//! GeM pooling. The three heads are the visual descriptor (R), the
//! structural descriptor (B) and their weighted concatenation (F), each
//! optionally scaled to unit norm. Everything runs in `f64`.

use serde::{Deserialize, Serialize};

use crate::aggregate::{gem, GemParams};
use crate::error::{invalid, Result};
use crate::fusion::FusionWeights;
use crate::gradcheck::ParamVector;
use crate::loss::{Head, LossConfig};
use crate::scalar::euclidean;
use crate::tensor::{FeatureMap, Matrix};

pub const P_VISUAL: &str = "gem_p_visual";
pub const PROJECTION: &str = "projection";
pub const PROJECTION_BIAS: &str = "projection_bias";
pub const P_STRUCTURAL: &str = "gem_p_structural";
pub const FUSION_W_V: &str = "fusion_w_v";
pub const FUSION_W_S: &str = "fusion_w_s";

/// Feature maps of one image in both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPair {
    pub visual: FeatureMap<f64>,
    pub structural: FeatureMap<f64>,
}

/// One `(q, P_q, N_q)` group as indices into a sample pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletGroup {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// A pool of samples and the groups drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub samples: Vec<StreamPair>,
    pub groups: Vec<TripletGroup>,
}

impl TrainBatch {
    pub fn validate(&self, cfg: &LossConfig<f64>) -> Result<()> {
        if self.groups.is_empty() {
            return Err(invalid("training batch has no groups"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.positives.len() != cfg.n_pos || g.negatives.len() != cfg.n_neg {
                return Err(invalid(format!(
                    "group {i} has {} positives and {} negatives, config expects {} and {}",
                    g.positives.len(),
                    g.negatives.len(),
                    cfg.n_pos,
                    cfg.n_neg
                )));
            }
            let n = self.samples.len();
            if g.anchor >= n || g.positives.iter().chain(&g.negatives).any(|&j| j >= n) {
                return Err(invalid(format!("group {i} references a sample outside the pool")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub p_visual: Vec<f64>,
    /// `k_visual × d_visual`.
    pub projection: Matrix<f64>,
    pub bias: Vec<f64>,
    pub p_structural: Vec<f64>,
    pub fusion: FusionWeights<f64>,
    pub normalize: bool,
}

/// Per-head losses and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `[L_F, L_R, L_B]`, averaged over groups.
    pub heads: [f64; 3],
    pub total: f64,
}

/// Analytic gradient laid out like [`FusionModel::to_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGradient {
    pub loss: LossBreakdown,
    pub gradient: Vec<f64>,
    /// Triplets evaluated exactly on the hinge boundary or with a zero
    /// distance; their subgradient is taken as 0.
    pub boundary_hits: usize,
}

struct Forward {
    pooled_visual: Vec<f64>,
    visual: Vec<f64>,
    structural: Vec<f64>,
    fused_raw: Vec<f64>,
    /// Head descriptors after optional normalization, indexed by `Head`.
    heads: [Vec<f64>; 3],
    /// Norms of the pre-normalization head vectors.
    norms: [f64; 3],
}

impl FusionModel {
    /// GeM exponents 3, unit fusion weights, zero bias and a projection
    /// uniform in `±1/sqrt(k_visual)`.
    pub fn init(k_visual: usize, d_visual: usize, k_structural: usize, normalize: bool, rng: &mut impl rand::Rng) -> Self {
        Self {
            p_visual: vec![3.0; k_visual],
            projection: crate::aggregate::random_matrix(k_visual, d_visual, rng),
            bias: vec![0.0; d_visual],
            p_structural: vec![3.0; k_structural],
            fusion: FusionWeights::default(),
            normalize,
        }
    }

    pub fn to_params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        p.push(P_VISUAL, &self.p_visual)
            .push(PROJECTION, &self.projection.data)
            .push(PROJECTION_BIAS, &self.bias)
            .push(P_STRUCTURAL, &self.p_structural)
            .push(FUSION_W_V, &[self.fusion.w_v])
            .push(FUSION_W_S, &[self.fusion.w_s]);
        p
    }

    /// Model with this one's shapes and `params`' values.
    pub fn with_params(&self, params: &ParamVector) -> Result<Self> {
        let get = |name: &str, len: usize| -> Result<Vec<f64>> {
            let v = params
                .get(name)
                .ok_or_else(|| invalid(format!("parameter `{name}` missing")))?;
            if v.len() != len {
                return Err(invalid(format!("parameter `{name}` has {} entries, expected {len}", v.len())));
            }
            Ok(v.to_vec())
        };
        Ok(Self {
            p_visual: get(P_VISUAL, self.p_visual.len())?,
            projection: Matrix {
                rows: self.projection.rows,
                cols: self.projection.cols,
                data: get(PROJECTION, self.projection.data.len())?,
            },
            bias: get(PROJECTION_BIAS, self.bias.len())?,
            p_structural: get(P_STRUCTURAL, self.p_structural.len())?,
            fusion: FusionWeights { w_v: get(FUSION_W_V, 1)?[0], w_s: get(FUSION_W_S, 1)?[0] },
            normalize: self.normalize,
        })
    }

    fn forward(&self, x: &StreamPair) -> Result<Forward> {
        let pooled_visual = gem(&x.visual, &GemParams { p: self.p_visual.clone() })?.into_vec();
        let mut visual = self.projection.apply(&pooled_visual);
        for (v, b) in visual.iter_mut().zip(&self.bias) {
            *v += b;
        }
        let structural = gem(&x.structural, &GemParams { p: self.p_structural.clone() })?.into_vec();
        let fused_raw: Vec<f64> = visual
            .iter()
            .map(|v| self.fusion.w_v * v)
            .chain(structural.iter().map(|s| self.fusion.w_s * s))
            .collect();

        let mut norms = [1.0; 3];
        let mut heads: [Vec<f64>; 3] = [fused_raw.clone(), visual.clone(), structural.clone()];
        if self.normalize {
            for (h, n) in heads.iter_mut().zip(norms.iter_mut()) {
                *n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(*n > 0.0) {
                    return Err(crate::Error::Degenerate("head descriptor has zero norm".into()));
                }
                h.iter_mut().for_each(|v| *v /= *n);
            }
        }
        Ok(Forward { pooled_visual, visual, structural, fused_raw, heads, norms })
    }

    /// Head descriptors `[F, R, B]` of one sample.
    pub fn embed(&self, x: &StreamPair) -> Result<[Vec<f64>; 3]> {
        Ok(self.forward(x)?.heads)
    }

    /// Mean over groups of `alpha · L_F + beta · L_R + gamma · L_B`.
    pub fn loss(&self, batch: &TrainBatch, cfg: &LossConfig<f64>) -> Result<LossBreakdown> {
        Ok(self.evaluate(batch, cfg, false)?.loss)
    }

    /// Loss and its analytic gradient with respect to every parameter.
    pub fn gradient(&self, batch: &TrainBatch, cfg: &LossConfig<f64>) -> Result<AnalyticGradient> {
        self.evaluate(batch, cfg, true)
    }

    fn evaluate(&self, batch: &TrainBatch, cfg: &LossConfig<f64>, backward: bool) -> Result<AnalyticGradient> {
        cfg.validate()?;
        batch.validate(cfg)?;
        let fwd = batch
            .samples
            .iter()
            .map(|s| self.forward(s))
            .collect::<Result<Vec<_>>>()?;

        // d total / d head descriptor, per sample and head.
        let mut upstream: Vec<[Vec<f64>; 3]> = if backward {
            fwd.iter()
                .map(|f| [vec![0.0; f.heads[0].len()], vec![0.0; f.heads[1].len()], vec![0.0; f.heads[2].len()]])
                .collect()
        } else {
            Vec::new()
        };

        let groups = batch.groups.len() as f64;
        let mut loss = LossBreakdown::default();
        let mut boundary_hits = 0;
        for g in &batch.groups {
            let grid = (g.positives.len() * g.negatives.len()) as f64;
            for head in Head::ALL {
                let h = head.index();
                let coef = cfg.head_weight(head) / (groups * grid);
                let q = &fwd[g.anchor].heads[h];
                let mut head_sum = 0.0;
                for &pi in &g.positives {
                    let p = &fwd[pi].heads[h];
                    let dp = euclidean(q, p);
                    for &ni in &g.negatives {
                        let n = &fwd[ni].heads[h];
                        let dn = euclidean(q, n);
                        let arg = dp - dn + cfg.margin;
                        head_sum += arg.max(0.0);
                        if !backward || arg < 0.0 {
                            continue;
                        }
                        if arg == 0.0 || dp == 0.0 || dn == 0.0 {
                            boundary_hits += 1;
                            if arg == 0.0 {
                                continue;
                            }
                        }
                        for i in 0..q.len() {
                            let mut gq = 0.0;
                            if dp > 0.0 {
                                let t = coef * (q[i] - p[i]) / dp;
                                gq += t;
                                upstream[pi][h][i] -= t;
                            }
                            if dn > 0.0 {
                                let t = coef * (q[i] - n[i]) / dn;
                                gq -= t;
                                upstream[ni][h][i] += t;
                            }
                            upstream[g.anchor][h][i] += gq;
                        }
                    }
                }
                let mean = head_sum / grid;
                loss.heads[h] += mean / groups;
                loss.total += cfg.head_weight(head) * mean / groups;
            }
        }

        let mut gradient = Vec::new();
        if backward {
            let params = self.to_params();
            gradient = vec![0.0; params.len()];
            let range = |name: &str| params.slot(name).expect("registered").range.clone();
            let (r_pv, r_w, r_b, r_ps) = (range(P_VISUAL), range(PROJECTION), range(PROJECTION_BIAS), range(P_STRUCTURAL));
            let (i_wv, i_ws) = (range(FUSION_W_V).start, range(FUSION_W_S).start);
            let d_v = self.bias.len();

            for ((sample, f), up) in batch.samples.iter().zip(&fwd).zip(&upstream) {
                let raw_grad = |h: usize| -> Vec<f64> {
                    if self.normalize {
                        // y = x / |x|  =>  dx = (dy - y (y . dy)) / |x|
                        let y = &f.heads[h];
                        let dot: f64 = y.iter().zip(&up[h]).map(|(a, b)| a * b).sum();
                        y.iter().zip(&up[h]).map(|(yi, gi)| (gi - yi * dot) / f.norms[h]).collect()
                    } else {
                        up[h].clone()
                    }
                };
                let g_fused = raw_grad(Head::Fused.index());
                let mut g_visual = raw_grad(Head::Visual.index());
                let mut g_structural = raw_grad(Head::Structural.index());

                let (gf_v, gf_s) = g_fused.split_at(d_v);
                gradient[i_wv] += gf_v.iter().zip(&f.visual).map(|(a, b)| a * b).sum::<f64>();
                gradient[i_ws] += gf_s.iter().zip(&f.structural).map(|(a, b)| a * b).sum::<f64>();
                for (g, a) in g_visual.iter_mut().zip(gf_v) {
                    *g += self.fusion.w_v * a;
                }
                for (g, a) in g_structural.iter_mut().zip(gf_s) {
                    *g += self.fusion.w_s * a;
                }
                debug_assert_eq!(f.fused_raw.len(), d_v + g_structural.len());

                // visual = pooled · W + b
                let k_v = self.projection.rows;
                let mut g_pooled = vec![0.0; k_v];
                for r in 0..k_v {
                    let row = r * d_v;
                    for c in 0..d_v {
                        gradient[r_w.start + row + c] += f.pooled_visual[r] * g_visual[c];
                        g_pooled[r] += self.projection.data[row + c] * g_visual[c];
                    }
                }
                for c in 0..d_v {
                    gradient[r_b.start + c] += g_visual[c];
                }

                accumulate_gem_p(&sample.visual, &self.p_visual, &g_pooled, &mut gradient[r_pv.clone()])?;
                accumulate_gem_p(&sample.structural, &self.p_structural, &g_structural, &mut gradient[r_ps.clone()])?;
            }
        }
        Ok(AnalyticGradient { loss, gradient, boundary_hits })
    }
}

/// Adds `upstream[c] · ∂GeM_c/∂p_c` into `out[c]` for every channel.
fn accumulate_gem_p(x: &FeatureMap<f64>, p: &[f64], upstream: &[f64], out: &mut [f64]) -> Result<()> {
    let k = x.k();
    for c in 0..k {
        if upstream[c] == 0.0 {
            continue;
        }
        let (_, dg) = gem_value_and_dp(x.data().iter().skip(c).step_by(k).copied(), p[c])?;
        out[c] += upstream[c] * dg;
    }
    Ok(())
}

/// GeM of one nonnegative channel and its derivative with respect to `p`.
///
/// With `m = max x`, `S = mean((x/m)^p)` and `g = m S^(1/p)`:
/// `dg/dp = g · (-ln S / p² + mean((x/m)^p ln(x/m)) / (p S))`.
pub fn gem_value_and_dp(values: impl Iterator<Item = f64> + Clone, p: f64) -> Result<(f64, f64)> {
    let mut n = 0usize;
    let mut m = 0.0f64;
    for v in values.clone() {
        if v < 0.0 {
            return Err(invalid("GeM exponent gradient needs nonnegative activations"));
        }
        n += 1;
        m = m.max(v);
    }
    if n == 0 {
        return Err(invalid("GeM needs at least one spatial location"));
    }
    if m == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut s = 0.0;
    let mut t = 0.0;
    for v in values {
        if v > 0.0 {
            let r = v / m;
            let rp = r.powf(p);
            s += rp;
            t += rp * r.ln();
        }
    }
    let (s, t) = (s / n as f64, t / n as f64);
    let g = m * s.powf(1.0 / p);
    let dg = g * (-s.ln() / (p * p) + t / (p * s));
    Ok((g, dg))
}
