use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap, Matrix};

/// One feature-mixer block acting on rows of length `D = h·w`:
/// `row ← row + relu(row · w1) · w2`, with `w1: D × hidden`, `w2: hidden × D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerBlock<T> {
    pub w1: Matrix<T>,
    pub w2: Matrix<T>,
}

impl<T: Real> MixerBlock<T> {
    pub fn apply(&self, row: &mut [T]) {
        let hidden: Vec<T> = self.w1.apply(row).into_iter().map(|v| v.max(T::zero())).collect();
        for (r, m) in row.iter_mut().zip(self.w2.apply(&hidden)) {
            *r += m;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixVprParams<T> {
    pub mixers: Vec<MixerBlock<T>>,
    /// Channel reduction, `k × d_out`.
    pub depth_projection: Matrix<T>,
    /// Spatial reduction, `h·w × r`.
    pub row_projection: Matrix<T>,
}

impl<T: Real> MixVprParams<T> {
    pub fn validate(&self, h: usize, w: usize, k: usize) -> Result<()> {
        let d = h * w;
        for (i, m) in self.mixers.iter().enumerate() {
            if m.w1.rows != d || m.w2.cols != d || m.w1.cols != m.w2.rows {
                return Err(invalid(format!(
                    "mixer {i}: w1 {}x{}, w2 {}x{} do not fit rows of length {d}",
                    m.w1.rows, m.w1.cols, m.w2.rows, m.w2.cols
                )));
            }
        }
        if self.depth_projection.rows != k {
            return Err(invalid(format!(
                "depth projection expects {} channels, map has {k}",
                self.depth_projection.rows
            )));
        }
        if self.row_projection.rows != d {
            return Err(invalid(format!(
                "row projection expects {} locations, map has {d}",
                self.row_projection.rows
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.depth_projection.cols * self.row_projection.cols
    }
}

/// Flattens to `k` rows of length `h·w`, runs the mixer cascade, then
/// reduces channels and locations. Output is the `d_out × r` matrix,
/// row-major.
pub fn mixvpr<T: Real>(x: &FeatureMap<T>, params: &MixVprParams<T>) -> Result<Descriptor<T>> {
    let (d, k) = (x.locations(), x.k());
    params.validate(x.h(), x.w(), k)?;

    let mut rows: Vec<Vec<T>> = (0..k)
        .map(|c| x.data().iter().skip(c).step_by(k).copied().collect())
        .collect();
    for block in &params.mixers {
        for row in rows.iter_mut() {
            block.apply(row);
        }
    }

    // Transpose to d × k and reduce channels: d × d_out.
    let reduced: Vec<Vec<T>> = (0..d)
        .map(|loc| {
            let column: Vec<T> = rows.iter().map(|r| r[loc]).collect();
            params.depth_projection.apply(&column)
        })
        .collect();

    // Transpose to d_out × d and reduce locations: d_out × r.
    let d_out = params.depth_projection.cols;
    let mut out = Vec::with_capacity(params.output_dim());
    for a in 0..d_out {
        let column: Vec<T> = reduced.iter().map(|r| r[a]).collect();
        out.extend(params.row_projection.apply(&column));
    }
    Ok(Descriptor::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> FeatureMap<f64> {
        FeatureMap::from_fn(2, 2, 3, |i, j, c| (1 + i * 6 + j * 3 + c) as f64).unwrap()
    }

    #[test]
    fn no_mixers_identity_projections_transposes_input() {
        let x = map();
        let p = MixVprParams { mixers: vec![], depth_projection: Matrix::identity(3), row_projection: Matrix::identity(4) };
        let out = mixvpr(&x, &p).unwrap();
        // Channel-major flattening of the input.
        let expected: Vec<f64> = (0..3).flat_map(|c| (0..4).map(move |loc| (1 + loc * 3 + c) as f64)).collect();
        assert_eq!(out.0, expected);
    }

    #[test]
    fn zero_row_projection_is_zero() {
        let p = MixVprParams { mixers: vec![], depth_projection: Matrix::identity(3), row_projection: Matrix::zeros(4, 2) };
        assert_eq!(mixvpr(&map(), &p).unwrap().0, vec![0.0; 6]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let bad = MixerBlock { w1: Matrix::zeros(3, 3), w2: Matrix::zeros(3, 3) };
        let p = MixVprParams { mixers: vec![bad], depth_projection: Matrix::identity(3), row_projection: Matrix::identity(4) };
        assert!(mixvpr(&map(), &p).is_err());
    }
}
