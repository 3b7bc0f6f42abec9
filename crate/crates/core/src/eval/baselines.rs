//! Comparison methods. Each returns a fitted target-domain model.
//!
//! All of them start from the same per-seed source and target factorizations
//! as the transfer pipeline, so a comparison differs only in how the shared
//! side is formed.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::dnnmap::{fit_norm, hidden_width, train_mapping, MappingNetwork};
use crate::factors::FactorMatrix;
use crate::mf::{self, MfModel};
use crate::pipeline::{train_domain_models, PipelineConfig, PipelineError};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmcdrMode {
    #[serde(rename = "LIN")]
    Lin,
    #[serde(rename = "MLP")]
    Mlp,
}

impl fmt::Display for EmcdrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmcdrMode::Lin => "LIN",
            EmcdrMode::Mlp => "MLP",
        })
    }
}

/// MF on the target ratings alone; identical to the pipeline's target model.
pub fn baseline_target_only(target_train: &RatingDataset, cfg: &PipelineConfig) -> Result<MfModel, PipelineError> {
    mf::train(target_train, &cfg.mf_config("mf-target")).map_err(|source| PipelineError::Mf {
        stage: "mf-target",
        source,
    })
}

fn common_ids(source: &FactorMatrix, target: &FactorMatrix, cfg: &PipelineConfig) -> Result<Vec<String>, PipelineError> {
    let ids = crate::bridge::common_entities(source, target);
    if ids.is_empty() {
        return Err(PipelineError::NoCommonEntities { task: cfg.task });
    }
    Ok(ids)
}

fn refit_other_side(
    target_model: &MfModel,
    replaced: FactorMatrix,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<MfModel, PipelineError> {
    crate::pipeline::finetune_stage(target_model, replaced, target_train, cfg)
}

/// Overwrites the shared entities' target vectors with their source vectors,
/// then refits the other side with the replaced side fixed.
pub fn direct_replace_from_models(
    source_model: &MfModel,
    target_model: &MfModel,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<MfModel, PipelineError> {
    let kind = cfg.task.mapped_kind();
    let (s, t) = (source_model.factors(kind), target_model.factors(kind));
    let mut replaced = t.clone();
    for id in common_ids(s, t, cfg)? {
        replaced.set(&id, s.get(&id).unwrap())?;
    }
    refit_other_side(target_model, replaced, target_train, cfg)
}

pub fn baseline_direct_replace(
    source: &RatingDataset,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<MfModel, PipelineError> {
    let (s, t) = train_domain_models(source, target_train, cfg)?;
    direct_replace_from_models(&s, &t, target_train, cfg)
}

/// Affine least-squares map `y = W^T [x; 1]`, minimum-norm when the
/// system is underdetermined.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `(in + 1) x out`; the last row is the bias.
    pub weights: DMatrix<f64>,
}

impl LinearMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let k = self.weights.nrows() - 1;
        (0..self.weights.ncols())
            .map(|j| (0..k).map(|i| x[i] * self.weights[(i, j)]).sum::<f64>() + self.weights[(k, j)])
            .collect()
    }
}

pub fn fit_linear_map(xs: &[&[f64]], ys: &[&[f64]]) -> Result<LinearMap, PipelineError> {
    let n = xs.len();
    let (kin, kout) = (xs[0].len(), ys[0].len());
    let x = DMatrix::from_fn(n, kin + 1, |r, c| if c < kin { xs[r][c] } else { 1.0 });
    let y = DMatrix::from_fn(n, kout, |r, c| ys[r][c]);
    let svd = x.svd(true, true);
    let tol = svd.singular_values.max() * (n.max(kin + 1) as f64) * f64::EPSILON;
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| PipelineError::Map(crate::dnnmap::MapError::InvalidConfig(e.to_string())))?;
    Ok(LinearMap { weights: pinv * y })
}

/// Learns a map from the shared entities' source vectors to their target
/// vectors, replaces those target vectors by the mapped source vectors and
/// refits the other side. MLP mode uses one hidden tansig layer and the
/// mapping trainer's settings.
pub fn emcdr_from_models(
    source_model: &MfModel,
    target_model: &MfModel,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
    mode: EmcdrMode,
) -> Result<MfModel, PipelineError> {
    let kind = cfg.task.mapped_kind();
    let (s, t) = (source_model.factors(kind), target_model.factors(kind));
    let ids = common_ids(s, t, cfg)?;
    let mut xs_m = FactorMatrix::new(s.dim())?;
    let mut ys_m = FactorMatrix::new(t.dim())?;
    for id in &ids {
        xs_m.insert(id.as_str(), s.get(id).unwrap())?;
        ys_m.insert(id.as_str(), t.get(id).unwrap())?;
    }
    let mapped: FactorMatrix = match mode {
        EmcdrMode::Lin => {
            let xs: Vec<&[f64]> = xs_m.iter().map(|(_, v)| v).collect();
            let ys: Vec<&[f64]> = ys_m.iter().map(|(_, v)| v).collect();
            let lin = fit_linear_map(&xs, &ys)?;
            let mut out = FactorMatrix::new(t.dim())?;
            for (id, v) in xs_m.iter() {
                out.insert(id, &lin.apply(v))?;
            }
            out
        }
        EmcdrMode::Mlp => {
            let norm_in = fit_norm(&xs_m)?;
            let norm_out = fit_norm(&ys_m)?;
            let k = s.dim();
            let net = MappingNetwork::random(
                &[k, hidden_width(k), t.dim()],
                1.0 / ((2 * k) as f64).sqrt(),
                derive_seed(cfg.seed, "emcdr-init"),
            )?;
            let train_cfg = crate::dnnmap::MapTrainConfig {
                seed: derive_seed(cfg.seed, "emcdr-shuffle"),
                ..cfg.map.clone()
            };
            let x = crate::dnnmap::normalize(&xs_m, &norm_in)?;
            let y = crate::dnnmap::normalize(&ys_m, &norm_out)?;
            let trained = train_mapping(net, &x, &y, &train_cfg)?;
            crate::dnnmap::apply_mapping(&trained.network, &xs_m, &norm_in, &norm_out)?
        }
    };
    let mut replaced = t.clone();
    for (id, v) in mapped.iter() {
        replaced.set(id, v)?;
    }
    refit_other_side(target_model, replaced, target_train, cfg)
}

pub fn baseline_emcdr(
    source: &RatingDataset,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
    mode: EmcdrMode,
) -> Result<MfModel, PipelineError> {
    let (s, t) = train_domain_models(source, target_train, cfg)?;
    emcdr_from_models(&s, &t, target_train, cfg, mode)
}
