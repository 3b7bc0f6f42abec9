use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::baselines::{direct_replace_from_models, emcdr_from_models, EmcdrMode};
use super::{score, EvalError, GlobalMean, MetricPair};
use crate::data::RatingDataset;
use crate::mf::{self, MfKind, MfModel, RatingPredictor};
use crate::pipeline::{self, PipelineConfig, PipelineError};

/// A method compared in an experiment, named as in the report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// `<MF>_DCDCSR`: the full transfer pipeline.
    Dcdcsr(MfKind),
    /// `<MF>`: factorization of the target ratings alone.
    TargetOnly(MfKind),
    /// `<MF>_TL`: shared entities take their source vectors verbatim.
    DirectReplace(MfKind),
    /// `<MF>_EMCDR_LIN` / `<MF>_EMCDR_MLP`.
    Emcdr(MfKind, EmcdrMode),
    /// `GLOBAL_MEAN`: the mean training rating.
    GlobalMean,
}

impl Method {
    pub fn mf_kind(self) -> Option<MfKind> {
        match self {
            Method::Dcdcsr(k) | Method::TargetOnly(k) | Method::DirectReplace(k) | Method::Emcdr(k, _) => Some(k),
            Method::GlobalMean => None,
        }
    }

    pub fn needs_source(self) -> bool {
        matches!(self, Method::Dcdcsr(_) | Method::DirectReplace(_) | Method::Emcdr(..))
    }

    pub fn note(self) -> Option<&'static str> {
        match self {
            Method::Emcdr(..) => Some("simplified reconstruction of the EMCDR mapping baseline"),
            _ => None,
        }
    }

    /// Default comparison set for one factorization model.
    pub fn standard(kind: MfKind) -> Vec<Method> {
        vec![
            Method::Dcdcsr(kind),
            Method::TargetOnly(kind),
            Method::DirectReplace(kind),
            Method::Emcdr(kind, EmcdrMode::Lin),
            Method::Emcdr(kind, EmcdrMode::Mlp),
        ]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dcdcsr(k) => write!(f, "{k}_DCDCSR"),
            Method::TargetOnly(k) => write!(f, "{k}"),
            Method::DirectReplace(k) => write!(f, "{k}_TL"),
            Method::Emcdr(k, m) => write!(f, "{k}_EMCDR_{m}"),
            Method::GlobalMean => f.write_str("GLOBAL_MEAN"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        if up == "GLOBAL_MEAN" {
            return Ok(Method::GlobalMean);
        }
        let (head, tail) = match up.split_once('_') {
            Some((h, t)) => (h, Some(t)),
            None => (up.as_str(), None),
        };
        let kind: MfKind = head.parse().map_err(|_| format!("unknown method {s:?}"))?;
        match tail {
            None => Ok(Method::TargetOnly(kind)),
            Some("DCDCSR") => Ok(Method::Dcdcsr(kind)),
            Some("TL") => Ok(Method::DirectReplace(kind)),
            Some("EMCDR_LIN") => Ok(Method::Emcdr(kind, EmcdrMode::Lin)),
            Some("EMCDR_MLP") => Ok(Method::Emcdr(kind, EmcdrMode::Mlp)),
            Some(_) => Err(format!("unknown method {s:?}")),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Template for every run; its `seed` is replaced by each entry of `seeds`
    /// and its factorization model by each method's.
    pub pipeline: PipelineConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn new(pipeline: PipelineConfig) -> Self {
        let methods = Method::standard(pipeline.mf.model);
        Self {
            pipeline,
            methods,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<MetricPair, String>,
}

/// Per-seed metrics of one method and their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub method: Method,
    pub outcomes: Vec<SeedOutcome>,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub seeds: usize,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `value (± std)` with four decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    if mean.is_nan() {
        return "n/a".to_string();
    }
    format!("{mean:.4} (± {std:.4})")
}

impl ExperimentReport {
    pub fn successes(&self) -> Vec<MetricPair> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok().copied()).collect()
    }

    /// Mean and sample standard deviation over successful seeds; a single
    /// seed reports a standard deviation of zero.
    pub fn summary(&self) -> SummaryRow {
        let ok = self.successes();
        let (mae_mean, mae_std) = mean_std(&ok.iter().map(|m| m.mae).collect::<Vec<_>>());
        let (rmse_mean, rmse_std) = mean_std(&ok.iter().map(|m| m.rmse).collect::<Vec<_>>());
        SummaryRow {
            method: self.method.to_string(),
            mae_mean,
            mae_std,
            rmse_mean,
            rmse_std,
            seeds: ok.len(),
            failures: self.outcomes.len() - ok.len(),
            note: self.method.note().map(str::to_string),
        }
    }

    pub fn write_seed_csv<W: Write>(reports: &[ExperimentReport], w: &mut W) -> std::io::Result<()> {
        writeln!(w, "method,seed,mae,rmse")?;
        for r in reports {
            for o in &r.outcomes {
                match &o.result {
                    Ok(m) => writeln!(w, "{},{},{},{}", r.method, o.seed, m.mae, m.rmse)?,
                    Err(_) => writeln!(w, "{},{},,", r.method, o.seed)?,
                }
            }
        }
        Ok(())
    }

    pub fn write_summary_json<W: Write>(reports: &[ExperimentReport], w: &mut W) -> std::io::Result<()> {
        let rows: Vec<SummaryRow> = reports.iter().map(ExperimentReport::summary).collect();
        serde_json::to_writer_pretty(&mut *w, &rows)?;
        writeln!(w)
    }

    /// Plain-text table with `value (± std)` cells, followed by notes and
    /// any per-seed failures.
    pub fn write_summary_text<W: Write>(reports: &[ExperimentReport], w: &mut W) -> std::io::Result<()> {
        let rows: Vec<SummaryRow> = reports.iter().map(ExperimentReport::summary).collect();
        let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        writeln!(w, "{:<width$}  {:<18}  {:<18}  seeds", "method", "MAE", "RMSE")?;
        for r in &rows {
            writeln!(
                w,
                "{:<width$}  {:<18}  {:<18}  {}",
                r.method,
                format_cell(r.mae_mean, r.mae_std),
                format_cell(r.rmse_mean, r.rmse_std),
                r.seeds
            )?;
        }
        for r in &rows {
            if let Some(n) = &r.note {
                writeln!(w, "note: {}: {n}", r.method)?;
            }
        }
        for rep in reports {
            for o in &rep.outcomes {
                if let Err(e) = &o.result {
                    writeln!(w, "failed: {} seed {}: {e}", rep.method, o.seed)?;
                }
            }
        }
        Ok(())
    }
}

type Shared = Result<MfModel, String>;

/// An error and its sources on one line.
fn describe(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        out.push_str(": ");
        out.push_str(&s.to_string());
        cur = s.source();
    }
    out
}

/// Per-seed factorizations shared by every method of that seed.
struct SeedModels<'a> {
    source: &'a RatingDataset,
    train: &'a RatingDataset,
    cfg: PipelineConfig,
    targets: HashMap<MfKind, Shared>,
    sources: HashMap<MfKind, Shared>,
    finals: HashMap<MfKind, MfModel>,
}

impl<'a> SeedModels<'a> {
    fn cfg_for(&self, kind: MfKind) -> PipelineConfig {
        let mut c = self.cfg.clone();
        c.mf.model = kind;
        c
    }

    fn target(&mut self, kind: MfKind) -> Shared {
        let c = self.cfg_for(kind);
        let train = self.train;
        self.targets
            .entry(kind)
            .or_insert_with(|| mf::train(train, &c.mf_config("mf-target")).map_err(|e| format!("mf-target: {}", describe(&e))))
            .clone()
    }

    fn source(&mut self, kind: MfKind) -> Shared {
        let c = self.cfg_for(kind);
        let src = self.source;
        self.sources
            .entry(kind)
            .or_insert_with(|| mf::train(src, &c.mf_config("mf-source")).map_err(|e| format!("mf-source: {}", describe(&e))))
            .clone()
    }

    fn fit(&mut self, method: Method) -> Result<Box<dyn RatingPredictor>, String> {
        let Some(kind) = method.mf_kind() else {
            return Ok(Box::new(GlobalMean::fit(self.train).map_err(|e| describe(&e))?));
        };
        let cfg = self.cfg_for(kind);
        if method.needs_source() {
            pipeline::check_overlap(self.source, self.train, cfg.task).map_err(|e| describe(&e))?;
        }
        let target = self.target(kind)?;
        if !method.needs_source() {
            return Ok(Box::new(target));
        }
        let source = self.source(kind)?;
        let s = |e: PipelineError| describe(&e);
        let model = match method {
            Method::Dcdcsr(kind) if self.finals.contains_key(&kind) => self.finals[&kind].clone(),
            Method::Dcdcsr(_) => {
                let b = pipeline::benchmark_stage(&source, &target, self.source, self.train, &cfg).map_err(s)?;
                let m = pipeline::mapping_stage(target.factors(cfg.task.mapped_kind()), &b.matrix, &cfg).map_err(s)?;
                pipeline::finetune_stage(&target, m.mapped, self.train, &cfg).map_err(s)?
            }
            Method::DirectReplace(_) => direct_replace_from_models(&source, &target, self.train, &cfg).map_err(s)?,
            Method::Emcdr(_, mode) => emcdr_from_models(&source, &target, self.train, &cfg, mode).map_err(s)?,
            Method::TargetOnly(_) | Method::GlobalMean => unreachable!(),
        };
        Ok(Box::new(model))
    }
}

/// Models already fitted for one (seed, factorization) cell, for example
/// loaded from a run directory. Methods reuse them instead of retraining.
#[derive(Debug, Clone)]
pub struct Prefit {
    pub source: MfModel,
    pub target: MfModel,
    /// Final model of the transfer pipeline, when it has been run.
    pub dcdcsr: Option<MfModel>,
}

/// Fits every method for every seed on `(source, train)` and scores it on
/// `test`. A failing (method, seed) cell is recorded and the rest continue.
/// Seeds run on separate threads; results do not depend on scheduling.
pub fn run_experiment(
    source: &RatingDataset,
    train: &RatingDataset,
    test: &RatingDataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<ExperimentReport>, EvalError> {
    run_experiment_prefit(source, train, test, cfg, &HashMap::new())
}

/// [`run_experiment`], reusing the models in `prefit` keyed by `(seed, kind)`.
/// Given models trained with the same configuration, the reports are
/// identical to a from-scratch run.
pub fn run_experiment_prefit(
    source: &RatingDataset,
    train: &RatingDataset,
    test: &RatingDataset,
    cfg: &ExperimentConfig,
    prefit: &HashMap<(u64, MfKind), Prefit>,
) -> Result<Vec<ExperimentReport>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(EvalError::Method("an experiment needs at least one seed and one method".into()));
    }
    let per_seed: Vec<Vec<Result<MetricPair, String>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let mut models = SeedModels {
                        source,
                        train,
                        cfg: PipelineConfig {
                            seed,
                            ..cfg.pipeline.clone()
                        },
                        targets: HashMap::new(),
                        sources: HashMap::new(),
                        finals: HashMap::new(),
                    };
                    for ((s, kind), p) in prefit {
                        if *s == seed {
                            models.sources.insert(*kind, Ok(p.source.clone()));
                            models.targets.insert(*kind, Ok(p.target.clone()));
                            if let Some(m) = &p.dcdcsr {
                                models.finals.insert(*kind, m.clone());
                            }
                        }
                    }
                    cfg.methods
                        .iter()
                        .map(|&m| {
                            let p = models.fit(m)?;
                            score(p.as_ref(), test).map_err(|e| describe(&e))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment worker panicked")).collect()
    });
    Ok(cfg
        .methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| ExperimentReport {
            method,
            outcomes: cfg
                .seeds
                .iter()
                .zip(&per_seed)
                .map(|(&seed, row)| SeedOutcome {
                    seed,
                    result: row[mi].clone(),
                })
                .collect(),
        })
        .collect())
}
