//! Nonlinear mapping from target factors onto benchmark factors.
//!
//! Both sides are min-max scaled into [-1, 1], a tansig network is trained on
//! the scaled pairs, and its outputs are scaled back with the benchmark's
//! ranges.

mod network;
mod norm;
mod train;

use thiserror::Error;

pub use network::{hidden_width, init_network, layer_widths, tansig, Gradient, Layer, MappingNetwork};
pub use norm::{denormalize, fit_norm, normalize, NormParams};
pub use train::{paired_rows, train_mapping, train_mapping_with, MapTrainConfig, MapTraining, Optimizer, Sgd};

use crate::factors::{FactorError, FactorMatrix};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("empty factor matrix")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inputs and targets differ: {0}")]
    KeyMismatch(String),
    #[error("mapping loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid mapping config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Scales each vector of `u` with `norm_in`, runs it through `net` and scales
/// the result back with `norm_out`.
pub fn apply_mapping(
    net: &MappingNetwork,
    u: &FactorMatrix,
    norm_in: &NormParams,
    norm_out: &NormParams,
) -> Result<FactorMatrix, MapError> {
    for (expected, got) in [
        (net.input_dim(), u.dim()),
        (net.input_dim(), norm_in.dim()),
        (net.output_dim(), norm_out.dim()),
    ] {
        if expected != got {
            return Err(MapError::DimensionMismatch { expected, got });
        }
    }
    let mut out = FactorMatrix::new(net.output_dim())?;
    for (id, v) in u.iter() {
        let y = net.forward(&norm_in.normalize_vec(v))?;
        out.insert(id, &norm_out.denormalize_vec(&y))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_preserves_keys() {
        let u = FactorMatrix::from_rows(2, ["b", "a", "c"], vec![0.1, 0.2, -0.3, 0.5, 0.9, -0.9]).unwrap();
        let net = init_network(2, 2, 3).unwrap();
        let p = fit_norm(&u).unwrap();
        let out = apply_mapping(&net, &u, &p, &p).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), vec!["b", "a", "c"]);
        assert!(out.as_slice().iter().all(|x| x.is_finite()));

        let wrong = NormParams {
            ranges: vec![(0.0, 1.0)],
        };
        assert!(apply_mapping(&net, &u, &wrong, &p).is_err());
    }
}
