use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap, Matrix};

/// Soft-assignment clusters: `weights` and `centers` are `clusters × k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetVladParams<T> {
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
    pub centers: Matrix<T>,
}

impl<T: Real> NetVladParams<T> {
    pub fn clusters(&self) -> usize {
        self.weights.rows
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let s = self.clusters();
        if s == 0 {
            return Err(invalid("NetVLAD needs at least one cluster"));
        }
        if self.weights.cols != k || self.centers.rows != s || self.centers.cols != k || self.biases.len() != s {
            return Err(invalid(format!(
                "NetVLAD shapes inconsistent with k = {k}: weights {}x{}, centers {}x{}, {} biases",
                self.weights.rows,
                self.weights.cols,
                self.centers.rows,
                self.centers.cols,
                self.biases.len()
            )));
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            return Err(invalid("NetVLAD bias is not finite"));
        }
        Ok(())
    }

    /// Centers uniform in `[lo, hi)`, assignment weights uniform in
    /// `±1/sqrt(k)`, zero biases.
    pub fn init(k: usize, clusters: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (k.max(1) as f64).sqrt();
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let weights = (0..clusters * k).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        let centers = (0..clusters * k).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Self {
            weights: Matrix { rows: clusters, cols: k, data: weights },
            biases: vec![T::zero(); clusters],
            centers: Matrix { rows: clusters, cols: k, data: centers },
        }
    }

    /// Softmax over clusters of `w_s · x + b_s` for one local feature.
    pub fn soft_assignment(&self, feature: &[T]) -> Vec<T> {
        let s = self.clusters();
        let k = feature.len();
        let logits: Vec<T> = (0..s)
            .map(|c| {
                let row = &self.weights.data[c * k..(c + 1) * k];
                row.iter().zip(feature).map(|(&w, &x)| w * x).sum::<T>() + self.biases[c]
            })
            .collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Residuals to each cluster center, weighted by soft assignment and summed
/// over locations; the per-cluster vectors are concatenated (`clusters · k`).
pub fn netvlad<T: Real>(x: &FeatureMap<T>, params: &NetVladParams<T>) -> Result<Descriptor<T>> {
    let k = x.k();
    params.validate(k)?;
    let s = params.clusters();
    let mut out = vec![T::zero(); s * k];
    for feature in x.locations_iter() {
        let a = params.soft_assignment(feature);
        for c in 0..s {
            let center = &params.centers.data[c * k..(c + 1) * k];
            let block = &mut out[c * k..(c + 1) * k];
            for ((o, &xi), &ci) in block.iter_mut().zip(feature).zip(center) {
                *o += a[c] * (xi - ci);
            }
        }
    }
    Ok(Descriptor::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_residual_sum() {
        let x = FeatureMap::new(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let p = NetVladParams {
            weights: Matrix::new(1, 1, vec![0.7]).unwrap(),
            biases: vec![0.3],
            centers: Matrix::new(1, 1, vec![2.0]).unwrap(),
        };
        assert_eq!(netvlad(&x, &p).unwrap().0, vec![0.0]);
    }

    #[test]
    fn features_at_centers_give_zero() {
        let x = FeatureMap::filled(3, 3, 2, 0.5).unwrap();
        let p = NetVladParams {
            weights: Matrix::new(3, 2, vec![0.1, -0.4, 0.9, 0.2, -0.3, 0.5]).unwrap(),
            biases: vec![0.0, 1.0, -1.0],
            centers: Matrix::new(3, 2, vec![0.5; 6]).unwrap(),
        };
        assert!(netvlad(&x, &p).unwrap().0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assignments_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetVladParams::<f64>::init(4, 5, 0.0, 1.0, &mut rng);
        for _ in 0..50 {
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = p.soft_assignment(&f);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_clusters_and_shape_mismatch_rejected() {
        let x = FeatureMap::filled(1, 1, 2, 1.0).unwrap();
        let empty = NetVladParams { weights: Matrix::zeros(0, 2), biases: vec![], centers: Matrix::zeros(0, 2) };
        assert!(netvlad(&x, &empty).is_err());
        let wrong = NetVladParams { weights: Matrix::zeros(1, 3), biases: vec![0.0], centers: Matrix::zeros(1, 3) };
        assert!(netvlad(&x, &wrong).is_err());
    }
}
