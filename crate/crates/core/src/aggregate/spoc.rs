use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap};

/// Per-channel mean over all spatial locations.
pub fn spoc<T: Real>(x: &FeatureMap<T>) -> Result<Descriptor<T>> {
    let n = x.locations();
    if n == 0 {
        return Err(invalid("SPoC needs at least one spatial location"));
    }
    let mut acc = vec![T::zero(); x.k()];
    for loc in x.locations_iter() {
        for (a, &v) in acc.iter_mut().zip(loc) {
            *a += v;
        }
    }
    let n = T::usize(n);
    Ok(Descriptor::new(acc.into_iter().map(|a| a / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_four() {
        let x = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(spoc(&x).unwrap().0, vec![2.5]);
    }

    #[test]
    fn constant_map_is_fixed_point() {
        let x = FeatureMap::filled(3, 5, 4, 1.75f32).unwrap();
        assert_eq!(spoc(&x).unwrap().0, vec![1.75; 4]);
    }

    #[test]
    fn empty_map_rejected() {
        let x = FeatureMap::<f64>::new(0, 3, 2, vec![]).unwrap();
        assert!(spoc(&x).is_err());
    }
}
