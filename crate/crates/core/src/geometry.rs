//! Pose-based ground truth: image positions, heading vectors, positive and
//! negative pairs, and per-query recall difficulty.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Capture condition of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Day,
    Night,
    DayRain,
    NightRain,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Day,
        Condition::Night,
        Condition::DayRain,
        Condition::NightRain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Day => "day",
            Condition::Night => "night",
            Condition::DayRain => "day_rain",
            Condition::NightRain => "night_rain",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_night(self) -> bool {
        matches!(self, Condition::Night | Condition::NightRain)
    }

    pub fn is_rain(self) -> bool {
        matches!(self, Condition::DayRain | Condition::NightRain)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "day" => Ok(Condition::Day),
            "night" => Ok(Condition::Night),
            "day_rain" => Ok(Condition::DayRain),
            "night_rain" => Ok(Condition::NightRain),
            other => Err(invalid(format!(
                "unknown condition `{other}` (expected day, night, day_rain or night_rain)"
            ))),
        }
    }
}

/// Recall difficulty of a query, ordered `Easy < SemiHard < Hard`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    SemiHard,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::SemiHard, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::SemiHard => "semi_hard",
            Difficulty::Hard => "hard",
        }
    }

    /// Difficulty of retrieving a positive captured under `positive` for a
    /// query captured under `query`. Rows are query conditions, columns are
    /// positive conditions, both in `Condition::ALL` order.
    pub fn between(query: Condition, positive: Condition) -> Difficulty {
        use Difficulty::{Easy as E, Hard as H, SemiHard as S};
        const TABLE: [[Difficulty; 4]; 4] = [
            [E, H, S, H],
            [H, E, H, S],
            [S, H, E, H],
            [H, S, H, E],
        ];
        TABLE[query.index()][positive.index()]
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One captured image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta<T> {
    pub sample_id: String,
    pub scene_id: String,
    /// Camera position in a planar world frame, meters.
    pub cam_pos: [T; 2],
    /// Heading of the optical axis in `[-pi, pi)`.
    pub yaw: T,
    pub condition: Condition,
    pub timestamp_us: i64,
}

impl<T: Real> SampleMeta<T> {
    /// Builds a sample, wrapping `yaw` into `[-pi, pi)`.
    pub fn new(
        sample_id: impl Into<String>,
        scene_id: impl Into<String>,
        cam_pos: [T; 2],
        yaw: T,
        condition: Condition,
        timestamp_us: i64,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if !cam_pos[0].is_finite() || !cam_pos[1].is_finite() || !yaw.is_finite() {
            return Err(invalid(format!("sample `{sample_id}` has a non-finite pose")));
        }
        Ok(Self {
            sample_id,
            scene_id: scene_id.into(),
            cam_pos,
            yaw: wrap_angle(yaw),
            condition,
            timestamp_us,
        })
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut w = (a + T::PI()) % two_pi;
    if w < T::zero() {
        w += two_pi;
    }
    let w = w - T::PI();
    // `%` can land exactly on +pi after rounding.
    if w >= T::PI() {
        w - two_pi
    } else {
        w
    }
}

/// Image position and direction vector of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry<T> {
    pub img_pos: [T; 2],
    pub dir_vec: [T; 2],
}

/// Places the image `offset_m` meters ahead of the camera along its heading.
pub fn image_position<T: Real>(meta: &SampleMeta<T>, offset_m: T) -> Result<ImageGeometry<T>> {
    if !(offset_m > T::zero()) || !offset_m.is_finite() {
        return Err(invalid(format!("offset must be positive and finite, got {offset_m}")));
    }
    let [x, y] = meta.cam_pos;
    if !x.is_finite() || !y.is_finite() || !meta.yaw.is_finite() {
        return Err(invalid(format!(
            "sample `{}` has a non-finite pose",
            meta.sample_id
        )));
    }
    let (s, c) = meta.yaw.sin_cos();
    let img_pos = [x + offset_m * c, y + offset_m * s];
    let dir_vec = [img_pos[0] - x, img_pos[1] - y];
    Ok(ImageGeometry { img_pos, dir_vec })
}

/// Unsigned angle between two planar vectors, in `[0, pi]`.
pub fn vector_angle<T: Real>(a: [T; 2], b: [T; 2]) -> Result<T> {
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if !(na > T::zero()) || !(nb > T::zero()) {
        return Err(invalid("angle between zero-length vectors is undefined"));
    }
    let cos = (a[0] * b[0] + a[1] * b[1]) / (na * nb);
    Ok(cos.max(-T::one()).min(T::one()).acos())
}

/// Thresholds for pose-based mining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningParams<T> {
    pub offset_m: T,
    pub dist_threshold_m: T,
    pub angle_threshold_rad: T,
    pub consec_window_us: i64,
}

impl<T: Real> Default for MiningParams<T> {
    fn default() -> Self {
        Self {
            offset_m: T::of(25.0),
            dist_threshold_m: T::of(10.0),
            angle_threshold_rad: T::FRAC_PI_4(),
            consec_window_us: 2_000_000,
        }
    }
}

impl<T: Real> MiningParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.offset_m > T::zero()) {
            return Err(invalid("offset_m must be > 0"));
        }
        if !(self.dist_threshold_m > T::zero()) {
            return Err(invalid("dist_threshold_m must be > 0"));
        }
        if !(self.angle_threshold_rad > T::zero() && self.angle_threshold_rad <= T::PI()) {
            return Err(invalid("angle_threshold_rad must lie in (0, pi]"));
        }
        if self.consec_window_us < 0 {
            return Err(invalid("consec_window_us must be >= 0"));
        }
        Ok(())
    }
}

/// Positives, negatives and difficulty mined for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub query_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    /// `None` when the query has no positives.
    pub difficulty: Option<Difficulty>,
}

impl PairSet {
    pub fn has_positives(&self) -> bool {
        !self.positives.is_empty()
    }
}

/// True when `a` and `b` are frames of the same drive close in time.
pub fn is_consecutive<T>(a: &SampleMeta<T>, b: &SampleMeta<T>, window_us: i64) -> bool {
    a.scene_id == b.scene_id && (a.timestamp_us - b.timestamp_us).abs() <= window_us
}

/// Mines positives and negatives for every sample.
///
/// A candidate is a positive iff its image position lies strictly closer
/// than the distance threshold, its scene differs from the query's, and the
/// angle between direction vectors is below the angle threshold (tested in
/// both directions, so the relation is symmetric). Negatives are every
/// other sample except the query's consecutive frames. Output is sorted by
/// `query_id`; id lists are sorted as well.
pub fn mine_pairs<T: Real>(samples: &[SampleMeta<T>], params: &MiningParams<T>) -> Result<Vec<PairSet>> {
    params.validate()?;
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(invalid(format!("duplicate sample_id `{}`", s.sample_id)));
        }
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].sample_id.cmp(&samples[b].sample_id));
    let sorted: Vec<&SampleMeta<T>> = order.iter().map(|&i| &samples[i]).collect();
    let geoms = sorted
        .iter()
        .map(|s| image_position(s, params.offset_m))
        .collect::<Result<Vec<_>>>()?;

    let thr_sq = params.dist_threshold_m * params.dist_threshold_m;
    let pairs = (0..sorted.len())
        .into_par_iter()
        .map(|qi| {
            let q = sorted[qi];
            let gq = &geoms[qi];
            let mut positives = Vec::new();
            let mut negatives = Vec::new();
            for (ci, c) in sorted.iter().enumerate() {
                if ci == qi {
                    continue;
                }
                let gc = &geoms[ci];
                let dx = gq.img_pos[0] - gc.img_pos[0];
                let dy = gq.img_pos[1] - gc.img_pos[1];
                let positive = dx * dx + dy * dy < thr_sq
                    && q.scene_id != c.scene_id
                    && angle_passes(gq.dir_vec, gc.dir_vec, params.angle_threshold_rad)?
                    && angle_passes(gc.dir_vec, gq.dir_vec, params.angle_threshold_rad)?;
                if positive {
                    positives.push(c.sample_id.clone());
                } else if !is_consecutive(q, c, params.consec_window_us) {
                    negatives.push(c.sample_id.clone());
                }
            }
            let difficulty = if positives.is_empty() {
                None
            } else {
                let conds = positives_conditions(&sorted, &positives);
                Some(classify_difficulty(q.condition, &conds)?)
            };
            Ok(PairSet {
                query_id: q.sample_id.clone(),
                positives,
                negatives,
                difficulty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs)
}

fn angle_passes<T: Real>(a: [T; 2], b: [T; 2], threshold: T) -> Result<bool> {
    Ok(vector_angle(a, b)? < threshold)
}

fn positives_conditions<T>(sorted: &[&SampleMeta<T>], ids: &[String]) -> Vec<Condition> {
    ids.iter()
        .map(|id| {
            let i = sorted
                .binary_search_by(|s| s.sample_id.as_str().cmp(id))
                .expect("positive ids come from the sample list");
            sorted[i].condition
        })
        .collect()
}

/// Difficulty of a query given its positives' conditions: the easiest
/// pairwise difficulty over all positives.
pub fn classify_difficulty(query: Condition, positives: &[Condition]) -> Result<Difficulty> {
    positives
        .iter()
        .map(|&p| Difficulty::between(query, p))
        .min()
        .ok_or_else(|| invalid("difficulty needs at least one positive"))
}
