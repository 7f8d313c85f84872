//! Synthetic drive corpus: pose log plus paired visual and structural
//! feature maps.
//!
//! The world is a set of straight road segments (regions), each lined with
//! equally spaced locations facing +x. Every region is driven by a few
//! scenes, each under one weather/lighting condition, producing one frame
//! per location. Each location has a fixed visual and structural pattern;
//! frames observe those patterns with noise. Night frames scale the visual
//! pattern by `corruption` and add extra noise, rain frames add extra noise;
//! structural maps are unaffected by condition.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Condition, SampleMeta};
use crate::io::{binary, poselog};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub regions: usize,
    pub locations_per_region: usize,
    pub scenes_per_region: usize,
    pub spacing_m: f64,
    pub region_gap_m: f64,
    pub position_jitter_m: f64,
    pub yaw_jitter_rad: f64,
    pub frame_interval_us: i64,
    pub h: usize,
    pub w: usize,
    /// Channels of both streams.
    pub k: usize,
    pub noise_sigma: f64,
    pub corruption: f64,
    pub night_noise: f64,
    pub rain_noise: f64,
    /// Probabilities of day, night, day_rain, night_rain.
    pub condition_weights: [f64; 4],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            regions: 30,
            locations_per_region: 8,
            scenes_per_region: 2,
            spacing_m: 40.0,
            region_gap_m: 1000.0,
            position_jitter_m: 1.0,
            yaw_jitter_rad: 0.05,
            frame_interval_us: 500_000,
            h: 4,
            w: 4,
            k: 16,
            noise_sigma: 0.1,
            corruption: 0.1,
            night_noise: 0.5,
            rain_noise: 0.3,
            condition_weights: [0.55, 0.2, 0.15, 0.1],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.locations_per_region == 0 || self.scenes_per_region == 0 {
            return Err(invalid("regions, locations_per_region and scenes_per_region must be >= 1"));
        }
        if self.h == 0 || self.w == 0 || self.k == 0 {
            return Err(invalid("feature map dimensions must be >= 1"));
        }
        if !(self.spacing_m > 0.0 && self.region_gap_m > 0.0) {
            return Err(invalid("spacing_m and region_gap_m must be > 0"));
        }
        let noises = [self.position_jitter_m, self.yaw_jitter_rad, self.noise_sigma, self.night_noise, self.rain_noise];
        if noises.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("jitter and noise scales must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(invalid(format!("corruption must lie in [0, 1], got {}", self.corruption)));
        }
        if self.frame_interval_us <= 0 {
            return Err(invalid("frame_interval_us must be > 0"));
        }
        WeightedIndex::new(self.condition_weights).map_err(|e| invalid(format!("condition_weights: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub samples: Vec<SampleMeta<f64>>,
    pub visual: Vec<FeatureMap<f32>>,
    pub structural: Vec<FeatureMap<f32>>,
}

pub fn generate_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let conditions = WeightedIndex::new(spec.condition_weights).expect("validated");
    let cells = spec.h * spec.w * spec.k;

    let pattern = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let scale: Vec<f64> = (0..spec.k).map(|_| rng.random_range(0.2..1.5)).collect();
        (0..cells).map(|i| scale[i % spec.k] * rng.random_range(0.0..1.0)).collect()
    };

    let mut out = SynthCorpus { samples: Vec::new(), visual: Vec::new(), structural: Vec::new() };
    let mut scene_index = 0usize;
    for region in 0..spec.regions {
        let visual_patterns: Vec<Vec<f64>> = (0..spec.locations_per_region).map(|_| pattern(&mut rng)).collect();
        let structural_patterns: Vec<Vec<f64>> = (0..spec.locations_per_region).map(|_| pattern(&mut rng)).collect();
        for _ in 0..spec.scenes_per_region {
            let scene_id = format!("scene_{scene_index:04}");
            let condition = Condition::ALL[conditions.sample(&mut rng)];
            // Scenes are a day apart in time.
            let t0 = scene_index as i64 * 86_400_000_000;
            scene_index += 1;
            for loc in 0..spec.locations_per_region {
                let x = loc as f64 * spec.spacing_m + spec.position_jitter_m * unit.sample(&mut rng);
                let y = region as f64 * spec.region_gap_m + spec.position_jitter_m * unit.sample(&mut rng);
                let yaw = spec.yaw_jitter_rad * unit.sample(&mut rng);
                let meta = SampleMeta::new(
                    format!("{scene_id}_f{loc:03}"),
                    scene_id.clone(),
                    [x, y],
                    yaw,
                    condition,
                    t0 + loc as i64 * spec.frame_interval_us,
                )?;

                let mut noisy = |base: &[f64], extra: f64, scale: f64| -> Vec<f32> {
                    base.iter()
                        .map(|&b| {
                            let v = scale * b + spec.noise_sigma * unit.sample(&mut rng) + extra * unit.sample(&mut rng);
                            v.max(0.0) as f32
                        })
                        .collect()
                };
                let lost = 1.0 - spec.corruption;
                let (scale, extra) = match condition {
                    Condition::Day => (1.0, 0.0),
                    Condition::DayRain => (1.0, lost * spec.rain_noise),
                    Condition::Night => (spec.corruption, lost * spec.night_noise),
                    Condition::NightRain => (spec.corruption, lost * (spec.night_noise + spec.rain_noise)),
                };
                let visual = noisy(&visual_patterns[loc], extra, scale);
                let structural = noisy(&structural_patterns[loc], 0.0, 1.0);
                out.visual.push(FeatureMap::new(spec.h, spec.w, spec.k, visual)?);
                out.structural.push(FeatureMap::new(spec.h, spec.w, spec.k, structural)?);
                out.samples.push(meta);
            }
        }
    }
    Ok(out)
}

pub const POSES_FILE: &str = "poses.csv";
pub const FMAP_DIR: &str = "fmaps";

pub fn visual_fmap_name(sample_id: &str) -> String {
    format!("{sample_id}.visual.fmap")
}

pub fn structural_fmap_name(sample_id: &str) -> String {
    format!("{sample_id}.structural.fmap")
}

/// Writes `poses.csv` and `fmaps/<id>.{visual,structural}.fmap` under `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let fmaps = dir.join(FMAP_DIR);
    fs::create_dir_all(&fmaps)?;
    poselog::write_pose_log(&corpus.samples, fs::File::create(dir.join(POSES_FILE))?)?;
    for ((meta, v), s) in corpus.samples.iter().zip(&corpus.visual).zip(&corpus.structural) {
        binary::write_fmap(fmaps.join(visual_fmap_name(&meta.sample_id)), v)?;
        binary::write_fmap(fmaps.join(structural_fmap_name(&meta.sample_id)), s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec { regions: 2, locations_per_region: 3, ..Default::default() }
    }

    #[test]
    fn shape_and_ids() {
        let c = generate_corpus(&small(), 1).unwrap();
        assert_eq!(c.samples.len(), 12);
        assert_eq!(c.visual.len(), 12);
        assert_eq!(c.samples[4].sample_id, "scene_0001_f001");
        assert!(c.visual.iter().chain(&c.structural).all(|m| m.data().iter().all(|&v| v >= 0.0)));
        // One condition per scene.
        assert!(c.samples[..3].iter().all(|s| s.condition == c.samples[0].condition));
    }

    #[test]
    fn seeded_corpus_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_corpus(&generate_corpus(&small(), 7).unwrap(), a.path()).unwrap();
        write_corpus(&generate_corpus(&small(), 7).unwrap(), b.path()).unwrap();
        for name in [POSES_FILE.to_string(), format!("{FMAP_DIR}/{}", visual_fmap_name("scene_0002_f001"))] {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        }
        assert_ne!(generate_corpus(&small(), 8).unwrap(), generate_corpus(&small(), 7).unwrap());
    }

    #[test]
    fn full_corruption_factor_matches_structural_statistics() {
        // With corruption 1.0 night frames carry no extra noise, so both
        // streams deviate from their patterns by the same noise level.
        let spec = SynthSpec { corruption: 1.0, condition_weights: [0.0, 1.0, 0.0, 0.0], ..small() };
        let c = generate_corpus(&spec, 3).unwrap();
        let spread = |maps: &[FeatureMap<f32>]| -> f64 {
            let per_loc = spec.locations_per_region;
            let mut acc = 0.0;
            let mut n = 0.0;
            for r in 0..spec.regions {
                for l in 0..per_loc {
                    let a = &maps[r * 2 * per_loc + l];
                    let b = &maps[r * 2 * per_loc + per_loc + l];
                    acc += a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
                    n += a.data().len() as f64;
                }
            }
            (acc / n).sqrt()
        };
        let (v, s) = (spread(&c.visual), spread(&c.structural));
        assert!((v / s - 1.0).abs() < 0.1, "{v} vs {s}");
    }
}
