//! Benchmark factor generation.
//!
//! Common entities (present in both source and target) get a convex
//! combination of their source and target vectors, weighted by how many
//! ratings back each side. Entities only present in the target borrow from
//! their top-k most similar common entities' source vectors, weighted by the
//! neighbors' average source rating count.

use std::collections::BTreeSet;
use std::io::Write;

use indexmap::IndexMap;
use thiserror::Error;

use crate::data::{EntityKind, RatingDataset};
use crate::factors::{cosine, FactorError, FactorMatrix};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("{kind} {id} has no ratings in either dataset")]
    NoRatings { kind: EntityKind, id: String },
    #[error("{id}: factor dimension mismatch ({left} vs {right})")]
    DimensionMismatch { id: String, left: usize, right: usize },
    #[error("{id} has no factor vector in the {side} matrix")]
    MissingVector { id: String, side: &'static str },
    #[error("entity {0} appears among both common and different entities")]
    Overlap(String),
    #[error("target entity {0} has no benchmark vector")]
    MissingTarget(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Rating counts and sparsity degrees of one common entity.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityProfile {
    pub entity: String,
    pub n_source: usize,
    pub n_target: usize,
    pub alpha_source: f64,
    pub alpha_target: f64,
}

impl SparsityProfile {
    pub fn from_counts(entity: impl Into<String>, n_source: usize, n_target: usize) -> Option<Self> {
        let total = n_source + n_target;
        if total == 0 {
            return None;
        }
        let alpha_source = n_target as f64 / total as f64;
        Some(Self {
            entity: entity.into(),
            n_source,
            n_target,
            alpha_source,
            alpha_target: 1.0 - alpha_source,
        })
    }
}

/// Top-k similar common entities of one different entity, and its sparsity degree.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub entity: String,
    /// `(common entity, cosine similarity)`, similarity descending
    pub neighbors: Vec<(String, f64)>,
    pub beta: f64,
    pub sn_source: f64,
}

/// Entities with a vector in both matrices, in `target` order.
pub fn common_entities(source: &FactorMatrix, target: &FactorMatrix) -> Vec<String> {
    target
        .ids()
        .filter(|id| source.contains(id))
        .map(str::to_string)
        .collect()
}

pub fn sparsity_common(
    entity: &str,
    src: &RatingDataset,
    tgt: &RatingDataset,
    kind: EntityKind,
) -> Result<SparsityProfile, BridgeError> {
    SparsityProfile::from_counts(
        entity,
        src.rating_count(entity, kind),
        tgt.rating_count(entity, kind),
    )
    .ok_or_else(|| BridgeError::NoRatings {
        kind,
        id: entity.to_string(),
    })
}

fn lookup<'a>(m: &'a FactorMatrix, id: &str, side: &'static str) -> Result<&'a [f64], BridgeError> {
    m.get(id).ok_or_else(|| BridgeError::MissingVector {
        id: id.to_string(),
        side,
    })
}

/// `(1 - alpha_s) * source + (1 - alpha_t) * target` for a common entity.
pub fn benchmark_common(
    entity: &str,
    source: &FactorMatrix,
    target: &FactorMatrix,
    p: &SparsityProfile,
) -> Result<Vec<f64>, BridgeError> {
    let s = lookup(source, entity, "source")?;
    let t = lookup(target, entity, "target")?;
    if s.len() != t.len() {
        return Err(BridgeError::DimensionMismatch {
            id: entity.to_string(),
            left: s.len(),
            right: t.len(),
        });
    }
    let ws = 1.0 - p.alpha_source;
    let wt = 1.0 - p.alpha_target;
    Ok(s.iter().zip(t).map(|(a, b)| ws * a + wt * b).collect())
}

/// The at most `k` common entities most cosine-similar to `entity` in the
/// target factor space. Only strictly positive similarities qualify; ties are
/// broken by id. A zero vector has no neighbors.
pub fn topk_similar(
    entity: &str,
    target: &FactorMatrix,
    commons: &[String],
    k: usize,
) -> Result<Vec<(String, f64)>, BridgeError> {
    let e = lookup(target, entity, "target")?;
    let mut scored = Vec::new();
    for c in commons {
        let v = lookup(target, c, "target")?;
        if let Some(sim) = cosine(e, v) {
            if sim > 0.0 {
                scored.push((c.clone(), sim));
            }
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Fills in `sn_source` (mean source count of the neighbors) and `beta`.
pub fn sparsity_different(
    entity: &str,
    tgt: &RatingDataset,
    neighbors: Vec<(String, f64)>,
    src: &RatingDataset,
    kind: EntityKind,
) -> NeighborSet {
    let n_target = tgt.rating_count(entity, kind) as f64;
    let sn_source = if neighbors.is_empty() {
        0.0
    } else {
        neighbors
            .iter()
            .map(|(id, _)| src.rating_count(id, kind) as f64)
            .sum::<f64>()
            / neighbors.len() as f64
    };
    NeighborSet {
        entity: entity.to_string(),
        neighbors,
        beta: beta_from(n_target, sn_source),
        sn_source,
    }
}

pub fn beta_from(n_target: f64, sn_source: f64) -> f64 {
    let denom = n_target + sn_source;
    if sn_source > 0.0 && denom > 0.0 {
        sn_source / denom
    } else {
        0.0
    }
}

/// `(1 - beta) * target + beta * SU`, where `SU` is the similarity-weighted
/// average of the neighbors' source vectors.
pub fn benchmark_different(
    entity: &str,
    target: &FactorMatrix,
    source: &FactorMatrix,
    ns: &NeighborSet,
) -> Result<Vec<f64>, BridgeError> {
    let t = lookup(target, entity, "target")?;
    if ns.neighbors.is_empty() {
        return Ok(t.to_vec());
    }
    let mut su = vec![0.0; t.len()];
    let mut wsum = 0.0;
    for (id, sim) in &ns.neighbors {
        let s = lookup(source, id, "source")?;
        if s.len() != t.len() {
            return Err(BridgeError::DimensionMismatch {
                id: id.clone(),
                left: s.len(),
                right: t.len(),
            });
        }
        for (acc, x) in su.iter_mut().zip(s) {
            *acc += sim * x;
        }
        wsum += sim;
    }
    let beta = ns.beta;
    Ok(t
        .iter()
        .zip(&su)
        .map(|(a, b)| (1.0 - beta) * a + beta * (b / wsum))
        .collect())
}

/// Union of common and different benchmark vectors, ordered like `target`.
/// Every target entity must be covered exactly once.
pub fn assemble_benchmark(
    commons: &IndexMap<String, Vec<f64>>,
    differents: &IndexMap<String, Vec<f64>>,
    target: &FactorMatrix,
) -> Result<FactorMatrix, BridgeError> {
    if let Some(id) = commons.keys().find(|id| differents.contains_key(*id)) {
        return Err(BridgeError::Overlap(id.clone()));
    }
    let mut out = FactorMatrix::new(target.dim())?;
    for id in target.ids() {
        let v = commons
            .get(id)
            .or_else(|| differents.get(id))
            .ok_or_else(|| BridgeError::MissingTarget(id.to_string()))?;
        out.insert(id, v)?;
    }
    if let Some(id) = commons.keys().chain(differents.keys()).find(|id| !target.contains(id)) {
        return Err(BridgeError::MissingTarget(format!("{id} (not a target entity)")));
    }
    Ok(out)
}

/// Per-entity record of how its benchmark vector was formed.
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeRecord {
    Common(SparsityProfile),
    Different {
        n_target: usize,
        set: NeighborSet,
    },
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kind: EntityKind,
    pub matrix: FactorMatrix,
    pub records: Vec<BridgeRecord>,
}

impl Benchmark {
    pub fn n_common(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, BridgeRecord::Common(_)))
            .count()
    }

    /// CSV of `id,kind,role,n_source,n_target,degree,neighbors,similarities`.
    /// `degree` is alpha_source for common entities and beta for different ones;
    /// neighbor lists are `;`-separated.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "id,kind,role,n_source,n_target,degree,neighbors,similarities")?;
        for r in &self.records {
            match r {
                BridgeRecord::Common(p) => writeln!(
                    w,
                    "{},{},common,{},{},{:?},,",
                    p.entity, self.kind, p.n_source, p.n_target, p.alpha_source
                )?,
                BridgeRecord::Different { n_target, set } => {
                    let ids: Vec<&str> = set.neighbors.iter().map(|(id, _)| id.as_str()).collect();
                    let sims: Vec<String> = set.neighbors.iter().map(|(_, s)| format!("{s:?}")).collect();
                    writeln!(
                        w,
                        "{},{},different,{:?},{},{:?},{},{}",
                        set.entity,
                        self.kind,
                        set.sn_source,
                        n_target,
                        set.beta,
                        ids.join(";"),
                        sims.join(";")
                    )?
                }
            }
        }
        Ok(())
    }
}

/// Builds the benchmark matrix for every target entity of `kind`.
pub fn build_benchmark(
    kind: EntityKind,
    source_factors: &FactorMatrix,
    target_factors: &FactorMatrix,
    source_data: &RatingDataset,
    target_data: &RatingDataset,
    k: usize,
) -> Result<Benchmark, BridgeError> {
    let commons = common_entities(source_factors, target_factors);
    let common_set: BTreeSet<&str> = commons.iter().map(String::as_str).collect();
    let mut common_vecs = IndexMap::new();
    let mut different_vecs = IndexMap::new();
    let mut records = Vec::with_capacity(target_factors.len());
    for id in target_factors.ids() {
        if common_set.contains(id) {
            let p = sparsity_common(id, source_data, target_data, kind)?;
            common_vecs.insert(id.to_string(), benchmark_common(id, source_factors, target_factors, &p)?);
            records.push(BridgeRecord::Common(p));
        } else {
            let neighbors = topk_similar(id, target_factors, &commons, k)?;
            let set = sparsity_different(id, target_data, neighbors, source_data, kind);
            different_vecs.insert(
                id.to_string(),
                benchmark_different(id, target_factors, source_factors, &set)?,
            );
            records.push(BridgeRecord::Different {
                n_target: target_data.rating_count(id, kind),
                set,
            });
        }
    }
    let matrix = assemble_benchmark(&common_vecs, &different_vecs, target_factors)?;
    Ok(Benchmark {
        kind,
        matrix,
        records,
    })
}
