use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tensor::{Descriptor, FeatureMap, Matrix};

/// 1×1 channel projection (`k × k_out`) followed by adaptive average
/// pooling onto a `grid.0 × grid.1` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvApParams<T> {
    pub projection: Matrix<T>,
    pub grid: (usize, usize),
}

impl<T: Real> ConvApParams<T> {
    pub fn validate(&self, h: usize, w: usize, k: usize) -> Result<()> {
        if self.projection.rows != k {
            return Err(invalid(format!(
                "Conv-AP projection expects {} input channels, map has {k}",
                self.projection.rows
            )));
        }
        let (s1, s2) = self.grid;
        if s1 == 0 || s2 == 0 || s1 > h || s2 > w {
            return Err(invalid(format!("Conv-AP grid {s1}x{s2} does not fit a {h}x{w} map")));
        }
        Ok(())
    }
}

/// Splits `n` items into `parts` contiguous blocks, larger blocks first.
/// Returns `(start, len)` per block.
pub fn even_blocks(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let rem = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|b| {
            let len = base + usize::from(b < rem);
            let block = (start, len);
            start += len;
            block
        })
        .collect()
}

/// Output layout is channel-last over the grid: `(a * s2 + b) * k_out + c`.
pub fn conv_ap<T: Real>(x: &FeatureMap<T>, params: &ConvApParams<T>) -> Result<Descriptor<T>> {
    let (h, w) = (x.h(), x.w());
    params.validate(h, w, x.k())?;
    let k_out = params.projection.cols;
    let projected: Vec<Vec<T>> = x.locations_iter().map(|f| params.projection.apply(f)).collect();

    let (s1, s2) = params.grid;
    let rows = even_blocks(h, s1);
    let cols = even_blocks(w, s2);
    let mut out = Vec::with_capacity(s1 * s2 * k_out);
    for &(r0, rl) in &rows {
        for &(c0, cl) in &cols {
            let mut acc = vec![T::zero(); k_out];
            for i in r0..r0 + rl {
                for j in c0..c0 + cl {
                    for (a, &v) in acc.iter_mut().zip(&projected[i * w + j]) {
                        *a += v;
                    }
                }
            }
            let n = T::usize(rl * cl);
            out.extend(acc.into_iter().map(|a| a / n));
        }
    }
    Ok(Descriptor::new(out))
}
