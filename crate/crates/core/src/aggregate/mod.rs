//! Global-descriptor aggregation operators over dense feature maps.
//!
//! All operators are pure; summation order within a map is row-major so
//! batch evaluation is bit-identical whether run sequentially or in
//! parallel.

mod conv_ap;
mod eigenplaces;
mod gem;
mod mixvpr;
mod netvlad;
mod spoc;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv_ap::{conv_ap, even_blocks, ConvApParams};
pub use eigenplaces::{eigenplaces, EigenPlacesParams};
pub use gem::{gem, GemParams};
pub use mixvpr::{mixvpr, MixVprParams, MixerBlock};
pub use netvlad::{netvlad, NetVladParams};
pub use spoc::spoc;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap, Matrix};

/// Aggregator variant names as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Spoc,
    #[serde(rename = "netvlad")]
    NetVlad,
    Gem,
    #[serde(rename = "conv_ap")]
    ConvAp,
    #[serde(rename = "eigenplaces")]
    EigenPlaces,
    #[serde(rename = "mixvpr")]
    MixVpr,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::Spoc,
        AggregatorKind::NetVlad,
        AggregatorKind::Gem,
        AggregatorKind::ConvAp,
        AggregatorKind::EigenPlaces,
        AggregatorKind::MixVpr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Spoc => "spoc",
            AggregatorKind::NetVlad => "netvlad",
            AggregatorKind::Gem => "gem",
            AggregatorKind::ConvAp => "conv_ap",
            AggregatorKind::EigenPlaces => "eigenplaces",
            AggregatorKind::MixVpr => "mixvpr",
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "spoc" => Ok(AggregatorKind::Spoc),
            "netvlad" | "net_vlad" => Ok(AggregatorKind::NetVlad),
            "gem" => Ok(AggregatorKind::Gem),
            "conv_ap" | "convap" => Ok(AggregatorKind::ConvAp),
            "eigenplaces" | "eigen_places" => Ok(AggregatorKind::EigenPlaces),
            "mixvpr" | "mix_vpr" => Ok(AggregatorKind::MixVpr),
            _ => Err(invalid(format!(
                "unknown aggregator `{s}` (expected spoc, netvlad, gem, conv_ap, eigenplaces or mixvpr)"
            ))),
        }
    }
}

/// An aggregator together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Aggregator<T> {
    Spoc,
    #[serde(rename = "netvlad")]
    NetVlad(NetVladParams<T>),
    Gem(GemParams<T>),
    #[serde(rename = "conv_ap")]
    ConvAp(ConvApParams<T>),
    #[serde(rename = "eigenplaces")]
    EigenPlaces(EigenPlacesParams<T>),
    #[serde(rename = "mixvpr")]
    MixVpr(MixVprParams<T>),
}

impl<T: Real> Aggregator<T> {
    pub fn kind(&self) -> AggregatorKind {
        match self {
            Aggregator::Spoc => AggregatorKind::Spoc,
            Aggregator::NetVlad(_) => AggregatorKind::NetVlad,
            Aggregator::Gem(_) => AggregatorKind::Gem,
            Aggregator::ConvAp(_) => AggregatorKind::ConvAp,
            Aggregator::EigenPlaces(_) => AggregatorKind::EigenPlaces,
            Aggregator::MixVpr(_) => AggregatorKind::MixVpr,
        }
    }

    /// Checks parameter shapes against a map of the given size.
    pub fn validate(&self, h: usize, w: usize, k: usize) -> Result<()> {
        match self {
            Aggregator::Spoc => Ok(()),
            Aggregator::NetVlad(p) => p.validate(k),
            Aggregator::Gem(p) => p.validate(k),
            Aggregator::ConvAp(p) => p.validate(h, w, k),
            Aggregator::EigenPlaces(p) => p.validate(k),
            Aggregator::MixVpr(p) => p.validate(h, w, k),
        }
    }

    /// Descriptor length for a `h × w × k` input.
    pub fn output_dim(&self, h: usize, w: usize, k: usize) -> usize {
        let _ = (h, w);
        match self {
            Aggregator::Spoc => k,
            Aggregator::NetVlad(p) => p.clusters() * k,
            Aggregator::Gem(_) => k,
            Aggregator::ConvAp(p) => p.grid.0 * p.grid.1 * p.projection.cols,
            Aggregator::EigenPlaces(p) => p.projection.cols,
            Aggregator::MixVpr(p) => p.output_dim(),
        }
    }

    pub fn apply(&self, x: &FeatureMap<T>) -> Result<Descriptor<T>> {
        aggregate(self, x)
    }

    /// Seeded default parameters producing a `target_dim` descriptor from
    /// `h × w × k` maps whose values lie in `value_range`.
    ///
    /// GeM exponents start at 3; projections are uniform in
    /// `±1/sqrt(fan_in)`. SPoC and GeM always emit `k` values, so
    /// `target_dim` must equal `k` for them.
    pub fn init(
        kind: AggregatorKind,
        (h, w, k): (usize, usize, usize),
        target_dim: usize,
        value_range: (f64, f64),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mismatch = |why: &str| {
            invalid(format!(
                "{kind} cannot produce a {target_dim}-dim descriptor from a {h}x{w}x{k} map: {why}"
            ))
        };
        if target_dim == 0 {
            return Err(mismatch("dimension must be positive"));
        }
        Ok(match kind {
            AggregatorKind::Spoc if target_dim == k => Aggregator::Spoc,
            AggregatorKind::Gem if target_dim == k => Aggregator::Gem(GemParams::uniform(k, T::of(3.0))),
            AggregatorKind::Spoc | AggregatorKind::Gem => return Err(mismatch("output dimension is k")),
            AggregatorKind::NetVlad => {
                if k == 0 || !target_dim.is_multiple_of(k) {
                    return Err(mismatch("dimension must be a multiple of k"));
                }
                Aggregator::NetVlad(NetVladParams::init(k, target_dim / k, value_range.0, value_range.1, rng))
            }
            AggregatorKind::ConvAp => {
                let grid = if h >= 2 && w >= 2 && target_dim.is_multiple_of(4) { (2, 2) } else { (1, 1) };
                let cells = grid.0 * grid.1;
                if !target_dim.is_multiple_of(cells) {
                    return Err(mismatch("dimension must be divisible by the grid size"));
                }
                Aggregator::ConvAp(ConvApParams { projection: random_matrix(k, target_dim / cells, rng), grid })
            }
            AggregatorKind::EigenPlaces => Aggregator::EigenPlaces(EigenPlacesParams {
                gem: GemParams::uniform(k, T::of(3.0)),
                projection: random_matrix(k, target_dim, rng),
                bias: vec![T::zero(); target_dim],
            }),
            AggregatorKind::MixVpr => {
                let d = h * w;
                let r = [4usize, 2, 1]
                    .into_iter()
                    .find(|&r| r <= d && target_dim.is_multiple_of(r))
                    .ok_or_else(|| mismatch("no row count divides the dimension"))?;
                Aggregator::MixVpr(MixVprParams {
                    mixers: (0..2)
                        .map(|_| MixerBlock { w1: random_matrix(d, d, rng), w2: random_matrix(d, d, rng) })
                        .collect(),
                    depth_projection: random_matrix(k, target_dim / r, rng),
                    row_projection: random_matrix(d, r, rng),
                })
            }
        })
    }
}

/// `rows × cols` matrix with entries uniform in `±1/sqrt(rows)`.
pub fn random_matrix<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| T::of(rng.random_range(-bound..bound))).collect(),
    }
}

/// Dispatches to the operator matching the aggregator variant.
pub fn aggregate<T: Real>(agg: &Aggregator<T>, x: &FeatureMap<T>) -> Result<Descriptor<T>> {
    match agg {
        Aggregator::Spoc => spoc(x),
        Aggregator::NetVlad(p) => netvlad(x, p),
        Aggregator::Gem(p) => gem(x, p),
        Aggregator::ConvAp(p) => conv_ap(x, p),
        Aggregator::EigenPlaces(p) => eigenplaces(x, p),
        Aggregator::MixVpr(p) => mixvpr(x, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut impl Rng) -> FeatureMap<f64> {
        FeatureMap::from_fn(4, 4, 3, |_, _, _| rng.random_range(0.0..2.0)).unwrap()
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Conv-AP".parse::<AggregatorKind>().unwrap(), AggregatorKind::ConvAp);
        assert_eq!("netvlad".parse::<AggregatorKind>().unwrap(), AggregatorKind::NetVlad);
        assert!("vlad++".parse::<AggregatorKind>().is_err());
    }

    #[test]
    fn gem_p1_dispatch_is_spoc() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_map(&mut rng);
        let a = aggregate(&Aggregator::Gem(GemParams::uniform(3, 1.0)), &x).unwrap();
        let b = aggregate(&Aggregator::Spoc, &x).unwrap();
        for (u, v) in a.0.iter().zip(&b.0) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(b, spoc(&x).unwrap());
    }

    #[test]
    fn declared_dimensions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng);
        let expect = [
            (AggregatorKind::Spoc, 3),
            (AggregatorKind::NetVlad, 12),
            (AggregatorKind::Gem, 3),
            (AggregatorKind::ConvAp, 16),
            (AggregatorKind::EigenPlaces, 512),
            (AggregatorKind::MixVpr, 8),
        ];
        for (kind, dim) in expect {
            let agg = Aggregator::<f64>::init(kind, (4, 4, 3), dim, (0.0, 2.0), &mut rng).unwrap();
            assert_eq!(agg.kind(), kind);
            assert_eq!(agg.output_dim(4, 4, 3), dim);
            assert_eq!(agg.apply(&x).unwrap().dim(), dim, "{kind}");
        }
        assert!(Aggregator::<f64>::init(AggregatorKind::Spoc, (4, 4, 3), 640, (0.0, 1.0), &mut rng).is_err());
        assert!(Aggregator::<f64>::init(AggregatorKind::NetVlad, (4, 4, 3), 641, (0.0, 1.0), &mut rng).is_err());
    }

    #[test]
    fn params_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agg = Aggregator::<f64>::init(AggregatorKind::MixVpr, (2, 2, 3), 8, (0.0, 1.0), &mut rng).unwrap();
        let text = serde_json::to_string(&agg).unwrap();
        assert!(text.contains("\"variant\":\"mixvpr\""));
        let back: Aggregator<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, agg);
    }
}
