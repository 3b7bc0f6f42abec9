//! Rating-prediction metrics, comparison baselines and multi-seed experiments.

mod baselines;
mod experiment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baselines::{
    baseline_direct_replace, baseline_emcdr, baseline_target_only, fit_linear_map, EmcdrMode, LinearMap,
};
pub use experiment::{
    format_cell, run_experiment, run_experiment_prefit, ExperimentConfig, ExperimentReport, Method, Prefit, SeedOutcome, SummaryRow,
};

use crate::data::RatingDataset;
use crate::mf::RatingPredictor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTest,
    #[error("{0}")]
    Method(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

/// MAE and RMSE of `predictor` over every triple of `test`.
pub fn score<P: RatingPredictor + ?Sized>(predictor: &P, test: &RatingDataset) -> Result<MetricPair, EvalError> {
    score_pairs(
        test.triples()
            .iter()
            .map(|t| (predictor.predict(&t.user, &t.item), t.rating)),
    )
}

/// Metrics from `(prediction, truth)` pairs.
pub fn score_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<MetricPair, EvalError> {
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for (p, r) in pairs {
        let e = p - r;
        abs += e.abs();
        sq += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::EmptyTest);
    }
    let mae = abs / n as f64;
    // guard the power-mean inequality against last-bit rounding
    let rmse = (sq / n as f64).sqrt().max(mae);
    Ok(MetricPair { mae, rmse, count: n })
}

/// Predicts the mean training rating for every pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalMean(pub f64);

impl GlobalMean {
    pub fn fit(train: &RatingDataset) -> Result<Self, EvalError> {
        train.mean_rating().map(GlobalMean).ok_or(EvalError::EmptyTest)
    }
}

impl RatingPredictor for GlobalMean {
    fn predict(&self, _: &str, _: &str) -> f64 {
        self.0
    }
}
