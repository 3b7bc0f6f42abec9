//! Planted-factor domain pairs with a known shared side.
//!
//! Shared entities carry one latent vector used in both domains, so
//! information about them genuinely transfers. Ratings are
//! `clamp(offset + u.v + noise)` with `u.v` of roughly unit variance.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, RatingDataset, RatingScale, RatingTriple};
use crate::pipeline::Task;
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Users per domain (items per system for CSR).
    pub n_shared_side: usize,
    pub common_fraction: f64,
    pub source_items: usize,
    pub target_items: usize,
    pub source_per_entity: usize,
    pub target_per_entity: usize,
    pub rank: usize,
    pub noise_std: f64,
    pub offset: f64,
    pub scale: RatingScale,
    pub task: Task,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_shared_side: 1000,
            common_fraction: 0.6,
            source_items: 400,
            target_items: 200,
            source_per_entity: 50,
            target_per_entity: 5,
            rank: 5,
            noise_std: 0.3,
            offset: 3.0,
            scale: RatingScale::default(),
            task: Task::Cdr,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub source: RatingDataset,
    pub target: RatingDataset,
    /// Ids of the shared entities.
    pub common: Vec<String>,
}

fn latent(rng: &mut impl Rng, normal: &Normal<f64>, rank: usize) -> Vec<f64> {
    (0..rank).map(|_| normal.sample(rng)).collect()
}

/// Builds a source and target domain sharing `common_fraction` of their
/// users (CDR) or items (CSR). For CSR the roles of users and items are
/// swapped in the output triples.
pub fn generate(cfg: &SynthConfig) -> Result<SynthPair, SynthError> {
    let bad = |m| Err(SynthError::InvalidConfig(m));
    if cfg.rank == 0 || cfg.n_shared_side == 0 {
        return bad("rank and entity count must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.common_fraction) {
        return bad("common_fraction must lie in [0, 1]");
    }
    if cfg.source_per_entity > cfg.source_items || cfg.target_per_entity > cfg.target_items {
        return bad("more ratings per entity than items");
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return bad("noise_std must be non-negative");
    }
    let mut rng = rng_for(cfg.seed, "synth");
    // per-component std s with rank * s^4 = 1 keeps Var(u.v) near 1
    let s = (1.0 / cfg.rank as f64).powf(0.25);
    let normal = Normal::new(0.0, s).expect("finite std");
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
    let n_common = (cfg.common_fraction * cfg.n_shared_side as f64).round() as usize;

    let common: Vec<(String, Vec<f64>)> = (0..n_common)
        .map(|i| (format!("c{i}"), latent(&mut rng, &normal, cfg.rank)))
        .collect();
    let own = |prefix: &str, rng: &mut _| -> Vec<(String, Vec<f64>)> {
        (0..cfg.n_shared_side - n_common)
            .map(|i| (format!("{prefix}{i}"), latent(rng, &normal, cfg.rank)))
            .collect()
    };
    let source_only = own("s", &mut rng);
    let target_only = own("t", &mut rng);
    let source_items: Vec<Vec<f64>> = (0..cfg.source_items)
        .map(|_| latent(&mut rng, &normal, cfg.rank))
        .collect();
    let target_items: Vec<Vec<f64>> = (0..cfg.target_items)
        .map(|_| latent(&mut rng, &normal, cfg.rank))
        .collect();

    let mut domain = |entities: &[&(String, Vec<f64>)], items: &[Vec<f64>], prefix: &str, per: usize| {
        let mut triples = Vec::with_capacity(entities.len() * per);
        for (id, u) in entities {
            for j in sample(&mut rng, items.len(), per) {
                let v = &items[j];
                let z: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let r = cfg.scale.clamp(cfg.offset + z + noise.sample(&mut rng));
                let ts = rng.random_range(0..1_000_000_000i64);
                let item = format!("{prefix}{j}");
                triples.push(match cfg.task {
                    Task::Cdr => RatingTriple::new(id.clone(), item, r, ts),
                    Task::Csr => RatingTriple::new(item, id.clone(), r, ts),
                });
            }
        }
        RatingDataset::from_triples(triples, cfg.scale).map_err(SynthError::from)
    };
    let src_entities: Vec<_> = common.iter().chain(&source_only).collect();
    let tgt_entities: Vec<_> = common.iter().chain(&target_only).collect();
    let source = domain(&src_entities, &source_items, "a", cfg.source_per_entity)?;
    let target = domain(&tgt_entities, &target_items, "b", cfg.target_per_entity)?;
    Ok(SynthPair {
        source,
        target,
        common: common.into_iter().map(|(id, _)| id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EntityKind;

    fn small(task: Task) -> SynthConfig {
        SynthConfig {
            n_shared_side: 50,
            source_items: 40,
            target_items: 30,
            source_per_entity: 10,
            target_per_entity: 3,
            task,
            ..Default::default()
        }
    }

    #[test]
    fn shape_and_overlap() {
        let p = generate(&small(Task::Cdr)).unwrap();
        assert_eq!(p.source.len(), 500);
        assert_eq!(p.target.len(), 150);
        assert_eq!(p.common.len(), 30);
        assert_eq!(p.source.n_users(), 50);
        let shared = crate::pipeline::shared_entities(&p.source, &p.target, EntityKind::User);
        assert_eq!(shared.len(), 30);
        assert_eq!(crate::pipeline::shared_entities(&p.source, &p.target, EntityKind::Item).len(), 0);
        assert!(p.target.triples().iter().all(|t| (1.0..=5.0).contains(&t.rating)));
    }

    #[test]
    fn csr_shares_items() {
        let p = generate(&small(Task::Csr)).unwrap();
        assert_eq!(crate::pipeline::shared_entities(&p.source, &p.target, EntityKind::Item).len(), 30);
        assert_eq!(crate::pipeline::shared_entities(&p.source, &p.target, EntityKind::User).len(), 0);
    }

    #[test]
    fn seeded() {
        let a = generate(&small(Task::Cdr)).unwrap();
        let b = generate(&small(Task::Cdr)).unwrap();
        assert_eq!(a.target.triples(), b.target.triples());
        let c = generate(&SynthConfig { seed: 1, ..small(Task::Cdr) }).unwrap();
        assert_ne!(a.target.triples(), c.target.triples());
        assert!(generate(&SynthConfig { target_per_entity: 99, ..small(Task::Cdr) }).is_err());
    }
}
