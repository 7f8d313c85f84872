use serde::{Deserialize, Serialize};

use super::gem::{gem, GemParams};
use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap, Matrix};

/// GeM pooling followed by a fully connected layer (`k × out`, plus bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPlacesParams<T> {
    pub gem: GemParams<T>,
    pub projection: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> EigenPlacesParams<T> {
    pub fn validate(&self, k: usize) -> Result<()> {
        self.gem.validate(k)?;
        if self.projection.rows != k || self.bias.len() != self.projection.cols {
            return Err(invalid(format!(
                "EigenPlaces projection {}x{} with {} biases does not fit k = {k}",
                self.projection.rows,
                self.projection.cols,
                self.bias.len()
            )));
        }
        Ok(())
    }
}

pub fn eigenplaces<T: Real>(x: &FeatureMap<T>, params: &EigenPlacesParams<T>) -> Result<Descriptor<T>> {
    params.validate(x.k())?;
    let pooled = gem(x, &params.gem)?;
    let mut y = params.projection.apply(pooled.as_slice());
    for (v, &b) in y.iter_mut().zip(&params.bias) {
        *v += b;
    }
    Ok(Descriptor::new(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> FeatureMap<f64> {
        FeatureMap::from_fn(2, 3, 2, |i, j, c| 0.5 + (i + 2 * j + c) as f64).unwrap()
    }

    #[test]
    fn identity_projection_is_gem() {
        let p = EigenPlacesParams { gem: GemParams::uniform(2, 3.0), projection: Matrix::identity(2), bias: vec![0.0; 2] };
        assert_eq!(eigenplaces(&map(), &p).unwrap(), gem(&map(), &p.gem).unwrap());
    }

    #[test]
    fn zero_projection_is_zero() {
        let p = EigenPlacesParams { gem: GemParams::uniform(2, 3.0), projection: Matrix::zeros(2, 5), bias: vec![0.0; 5] };
        assert_eq!(eigenplaces(&map(), &p).unwrap().0, vec![0.0; 5]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = EigenPlacesParams { gem: GemParams::uniform(2, 3.0), projection: Matrix::zeros(3, 5), bias: vec![0.0; 5] };
        assert!(eigenplaces(&map(), &p).is_err());
    }
}
