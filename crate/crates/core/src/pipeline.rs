//! End-to-end transfer: factorize both domains, build benchmark factors,
//! learn the mapping, then refit the unmapped side on the target ratings.
//!
//! Each stage is a public function so callers can persist intermediate
//! artifacts and resume; [`run`] chains them with the same seeds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{build_benchmark, Benchmark, BridgeError};
use crate::data::{EntityKind, RatingDataset};
use crate::dnnmap::{
    apply_mapping, fit_norm, init_network, normalize, train_mapping, MapError, MapTrainConfig, MapTraining,
    MappingNetwork, NormParams,
};
use crate::factors::{FactorError, FactorMatrix};
use crate::mf::{self, MfConfig, MfError, MfKind, MfModel, RatingPredictor};
use crate::seed::derive_seed;

/// Which side the domains share: users (cross-domain) or items (cross-system).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "CDR")]
    Cdr,
    #[serde(rename = "CSR")]
    Csr,
}

impl Task {
    /// The entity kind that gets mapped.
    pub fn mapped_kind(self) -> EntityKind {
        match self {
            Task::Cdr => EntityKind::User,
            Task::Csr => EntityKind::Item,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Cdr => "CDR",
            Task::Csr => "CSR",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CDR" => Ok(Task::Cdr),
            "CSR" => Ok(Task::Csr),
            _ => Err(format!("unknown task {s:?} (expected CDR or CSR)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no common entities: {task} needs at least one {} shared by source and target", .task.mapped_kind())]
    NoCommonEntities { task: Task },
    #[error("{task} maps {}s, but source and target also share {shared} {}s; mixed overlap is not supported", .task.mapped_kind(), .task.mapped_kind().other())]
    MixedOverlap { task: Task, shared: usize },
    #[error("{stage} failed")]
    Mf {
        stage: &'static str,
        #[source]
        source: MfError,
    },
    #[error("bridge stage failed")]
    Bridge(#[from] BridgeError),
    #[error("mapping stage failed")]
    Map(#[from] MapError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

impl PipelineError {
    fn mf(stage: &'static str) -> impl FnOnce(MfError) -> Self {
        move |source| PipelineError::Mf { stage, source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: Task,
    pub mf: MfConfig,
    pub k_neighbors: usize,
    pub map: MapTrainConfig,
    pub d_layers: usize,
    pub top_n: usize,
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(task: Task, model: MfKind) -> Self {
        Self {
            task,
            mf: MfConfig::new(model),
            k_neighbors: 5,
            map: MapTrainConfig::default(),
            d_layers: 5,
            top_n: 10,
            seed: 0,
        }
    }

    pub fn mf_config(&self, stage: &str) -> MfConfig {
        MfConfig {
            seed: derive_seed(self.seed, stage),
            ..self.mf.clone()
        }
    }

    pub fn map_config(&self) -> MapTrainConfig {
        MapTrainConfig {
            seed: derive_seed(self.seed, "map-shuffle"),
            ..self.map.clone()
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "map-init")
    }
}

/// Ids of `kind` present in both datasets, in target order.
pub fn shared_entities(source: &RatingDataset, target: &RatingDataset, kind: EntityKind) -> Vec<String> {
    let s = source.index(kind);
    target
        .index(kind)
        .iter()
        .filter(|id| s.contains(*id))
        .cloned()
        .collect()
}

/// Number of shared entities of the mapped kind. Fails when there are none,
/// or when the other kind is shared too.
pub fn check_overlap(source: &RatingDataset, target: &RatingDataset, task: Task) -> Result<usize, PipelineError> {
    let n = shared_entities(source, target, task.mapped_kind()).len();
    if n == 0 {
        return Err(PipelineError::NoCommonEntities { task });
    }
    let shared = shared_entities(source, target, task.mapped_kind().other()).len();
    if shared > 0 {
        return Err(PipelineError::MixedOverlap { task, shared });
    }
    Ok(n)
}

/// Stage 1: independent factorizations of the source and target ratings.
pub fn train_domain_models(
    source: &RatingDataset,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<(MfModel, MfModel), PipelineError> {
    check_overlap(source, target_train, cfg.task)?;
    let s = mf::train(source, &cfg.mf_config("mf-source")).map_err(PipelineError::mf("mf-source"))?;
    let t = mf::train(target_train, &cfg.mf_config("mf-target")).map_err(PipelineError::mf("mf-target"))?;
    Ok((s, t))
}

/// Stage 2: benchmark factors for every target entity of the mapped kind.
pub fn benchmark_stage(
    source_model: &MfModel,
    target_model: &MfModel,
    source: &RatingDataset,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<Benchmark, PipelineError> {
    let kind = cfg.task.mapped_kind();
    let b = build_benchmark(
        kind,
        source_model.factors(kind),
        target_model.factors(kind),
        source,
        target_train,
        cfg.k_neighbors,
    )?;
    if b.n_common() == 0 {
        return Err(PipelineError::NoCommonEntities { task: cfg.task });
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct MappingStage {
    pub training: MapTraining,
    pub norm_in: NormParams,
    pub norm_out: NormParams,
    /// Denormalized network output for every target entity of the mapped kind.
    pub mapped: FactorMatrix,
}

impl MappingStage {
    pub fn network(&self) -> &MappingNetwork {
        &self.training.network
    }
}

/// Stage 3: fit the network from scaled target factors onto scaled benchmark
/// factors and apply it to every target entity.
pub fn mapping_stage(
    target_factors: &FactorMatrix,
    benchmark: &FactorMatrix,
    cfg: &PipelineConfig,
) -> Result<MappingStage, PipelineError> {
    let norm_in = fit_norm(target_factors)?;
    let norm_out = fit_norm(benchmark)?;
    let x = normalize(target_factors, &norm_in)?;
    let y = normalize(benchmark, &norm_out)?;
    let net = init_network(target_factors.dim(), cfg.d_layers, cfg.init_seed())?;
    let training = train_mapping(net, &x, &y, &cfg.map_config())?;
    let mapped = apply_mapping(&training.network, target_factors, &norm_in, &norm_out)?;
    Ok(MappingStage {
        training,
        norm_in,
        norm_out,
        mapped,
    })
}

/// Stage 4: swap in the mapped side and refit the other side on the target
/// ratings, starting from the target model's vectors.
pub fn finetune_stage(
    target_model: &MfModel,
    mapped: FactorMatrix,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<MfModel, PipelineError> {
    let kind = cfg.task.mapped_kind();
    let base = target_model
        .clone()
        .with_factors(kind, mapped)
        .map_err(PipelineError::mf("finetune"))?;
    mf::retrain_one_side(&base, target_train, kind, &cfg.mf_config("phase3")).map_err(PipelineError::mf("finetune"))
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub task: Task,
    pub source_model: MfModel,
    pub target_model: MfModel,
    pub benchmark: Benchmark,
    pub mapping: MappingStage,
    /// Final target model after the one-sided refit.
    pub model: MfModel,
}

impl PipelineResult {
    pub fn network(&self) -> &MappingNetwork {
        self.mapping.network()
    }

    pub fn recommend(&self, user: &str, target_train: &RatingDataset, n: usize) -> Vec<(String, f64)> {
        recommend(&self.model, user, target_train, n)
    }
}

impl RatingPredictor for PipelineResult {
    fn predict(&self, user: &str, item: &str) -> f64 {
        self.model.predict(user, item)
    }
}

pub fn run(
    source: &RatingDataset,
    target_train: &RatingDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineResult, PipelineError> {
    let (source_model, target_model) = train_domain_models(source, target_train, cfg)?;
    let benchmark = benchmark_stage(&source_model, &target_model, source, target_train, cfg)?;
    let kind = cfg.task.mapped_kind();
    let mapping = mapping_stage(target_model.factors(kind), &benchmark.matrix, cfg)?;
    let model = finetune_stage(&target_model, mapping.mapped.clone(), target_train, cfg)?;
    Ok(PipelineResult {
        task: cfg.task,
        source_model,
        target_model,
        benchmark,
        mapping,
        model,
    })
}

/// The `n` highest-predicted items `user` has not rated in `train`, ties
/// broken by item id. Unknown users get nothing.
pub fn recommend(model: &MfModel, user: &str, train: &RatingDataset, n: usize) -> Vec<(String, f64)> {
    if !model.users().contains(user) {
        return Vec::new();
    }
    let rated: std::collections::HashSet<&str> = train
        .triples()
        .iter()
        .filter(|t| t.user == user)
        .map(|t| t.item.as_str())
        .collect();
    let mut scored: Vec<(String, f64)> = model
        .items()
        .ids()
        .filter(|i| !rated.contains(i))
        .map(|i| (i.to_string(), model.predict(user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}
