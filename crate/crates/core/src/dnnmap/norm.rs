//! Per-dimension min-max scaling into [-1, 1].

use serde::{Deserialize, Serialize};

use super::MapError;
use crate::factors::FactorMatrix;

/// `(min, max)` for each latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub ranges: Vec<(f64, f64)>,
}

impl NormParams {
    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    fn check(&self, dim: usize) -> Result<(), MapError> {
        if dim != self.dim() {
            return Err(MapError::DimensionMismatch {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(())
    }

    /// Maps one vector. A degenerate dimension becomes 0; values outside the
    /// fitted range extrapolate linearly.
    pub fn normalize_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| {
                if hi > lo {
                    2.0 * (v - lo) / (hi - lo) - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn denormalize_vec(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.ranges)
            .map(|(&v, &(lo, hi))| {
                if hi > lo {
                    (v + 1.0) * (hi - lo) / 2.0 + lo
                } else {
                    lo
                }
            })
            .collect()
    }
}

pub fn fit_norm(m: &FactorMatrix) -> Result<NormParams, MapError> {
    if m.is_empty() {
        return Err(MapError::Empty);
    }
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); m.dim()];
    for (_, v) in m.iter() {
        for (r, &x) in ranges.iter_mut().zip(v) {
            r.0 = r.0.min(x);
            r.1 = r.1.max(x);
        }
    }
    Ok(NormParams { ranges })
}

fn map_rows(
    m: &FactorMatrix,
    p: &NormParams,
    f: impl Fn(&NormParams, &[f64]) -> Vec<f64>,
) -> Result<FactorMatrix, MapError> {
    p.check(m.dim())?;
    let mut out = FactorMatrix::new(m.dim())?;
    for (id, v) in m.iter() {
        out.insert(id, &f(p, v))?;
    }
    Ok(out)
}

pub fn normalize(m: &FactorMatrix, p: &NormParams) -> Result<FactorMatrix, MapError> {
    map_rows(m, p, NormParams::normalize_vec)
}

pub fn denormalize(m: &FactorMatrix, p: &NormParams) -> Result<FactorMatrix, MapError> {
    map_rows(m, p, NormParams::denormalize_vec)
}
