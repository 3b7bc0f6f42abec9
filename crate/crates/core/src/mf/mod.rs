//! Matrix-factorization trainers: PMF, MMMF and BPR.
//!
//! All three learn a user matrix `U` and an item matrix `V` of the same
//! dimension from explicit ratings:
//!
//! * PMF minimizes `sum (r - U_i.V_j)^2 + lambda (|U|^2 + |V|^2)`.
//! * MMMF uses a low-rank factorization with per-user ordinal thresholds and
//!   the all-thresholds smooth hinge; predictions are the rating level the
//!   score falls into.
//! * BPR minimizes `-ln sigma(U_u.(V_i - V_j))` over pairs the user rated
//!   `r_ui > r_uj`; an affine map fit on training ratings turns scores back
//!   into ratings.
//!
//! Training is deterministic for a given [`MfConfig::seed`]. Each model kind
//! draws initialization and shuffling from its own labeled RNG stream.

pub mod objective;

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EntityKind, RatingDataset, RatingScale};
use crate::factors::{dot, FactorError, FactorHeader, FactorMatrix};
use crate::seed::rng_for;
use objective::*;

#[derive(Debug, Error)]
pub enum MfError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("invalid factorization config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (non-finite objective); lower the learning rate")]
    Diverged { epoch: usize },
    #[error("no rankable pairs: no user rated two items differently")]
    NoRankablePairs,
    #[error("fixed {kind} {id} has no factor vector")]
    MissingFixedEntity { kind: EntityKind, id: String },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("model file")]
    Io(#[from] std::io::Error),
    #[error("model metadata")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MfKind {
    #[serde(rename = "PMF")]
    Pmf,
    #[serde(rename = "MMMF")]
    Mmmf,
    #[serde(rename = "BPR")]
    Bpr,
}

impl MfKind {
    pub const ALL: [MfKind; 3] = [MfKind::Pmf, MfKind::Mmmf, MfKind::Bpr];

    pub fn name(self) -> &'static str {
        match self {
            MfKind::Pmf => "PMF",
            MfKind::Mmmf => "MMMF",
            MfKind::Bpr => "BPR",
        }
    }
}

impl fmt::Display for MfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PMF" | "MF" => Ok(MfKind::Pmf),
            "MMMF" => Ok(MfKind::Mmmf),
            "BPR" => Ok(MfKind::Bpr),
            other => Err(format!("unknown factorization model {other:?}")),
        }
    }
}

/// How each epoch walks the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// One stochastic step per (shuffled) rating or sampled pair.
    Sgd,
    /// One exact gradient step on the whole objective.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub model: MfKind,
    pub dim: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub schedule: Schedule,
    /// Number of ordinal levels for MMMF; derived from the scale when unset.
    pub levels: Option<usize>,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self::new(MfKind::Pmf)
    }
}

impl MfConfig {
    pub fn new(model: MfKind) -> Self {
        Self {
            model,
            dim: 10,
            learning_rate: 0.01,
            regularization: 0.01,
            epochs: 100,
            seed: 0,
            init_scale: 0.1,
            schedule: Schedule::Sgd,
            levels: None,
        }
    }

    fn validate(&self, allow_zero_epochs: bool) -> Result<(), MfError> {
        let bad = |m: &str| Err(MfError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.epochs == 0 && !allow_zero_epochs {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return bad("regularization must be non-negative");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        if matches!(self.levels, Some(l) if l < 2) {
            return bad("levels must be at least 2");
        }
        Ok(())
    }

    fn levels_for(&self, scale: RatingScale) -> usize {
        self.levels
            .unwrap_or_else(|| ((scale.max - scale.min).round() as usize + 1).max(2))
    }
}

/// Affine map from BPR scores to ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

/// A trained factorization model.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    users: FactorMatrix,
    items: FactorMatrix,
    config: MfConfig,
    scale: RatingScale,
    global_mean: f64,
    thresholds: IndexMap<String, Vec<f64>>,
    calibration: Option<Calibration>,
}

/// Anything that turns a (user, item) pair into a rating.
pub trait RatingPredictor {
    fn predict(&self, user: &str, item: &str) -> f64;
}

impl MfModel {
    pub fn users(&self) -> &FactorMatrix {
        &self.users
    }

    pub fn items(&self) -> &FactorMatrix {
        &self.items
    }

    pub fn factors(&self, kind: EntityKind) -> &FactorMatrix {
        match kind {
            EntityKind::User => &self.users,
            EntityKind::Item => &self.items,
        }
    }

    pub fn config(&self) -> &MfConfig {
        &self.config
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    /// Per-user ordinal thresholds (MMMF only; empty otherwise).
    pub fn thresholds(&self) -> &IndexMap<String, Vec<f64>> {
        &self.thresholds
    }

    /// Replaces one factor side wholesale. The matrix must keep the model's dimension.
    pub fn with_factors(mut self, kind: EntityKind, m: FactorMatrix) -> Result<Self, MfError> {
        if m.dim() != self.config.dim {
            return Err(MfError::InvalidConfig(format!(
                "replacement {kind} matrix has dim {}, model has {}",
                m.dim(),
                self.config.dim
            )));
        }
        match kind {
            EntityKind::User => self.users = m,
            EntityKind::Item => self.items = m,
        }
        Ok(self)
    }

    /// Raw model score `U_i . V_j`, if both entities are known.
    pub fn score(&self, user: &str, item: &str) -> Option<f64> {
        Some(dot(self.users.get(user)?, self.items.get(item)?))
    }

    fn score_to_rating(&self, user: &str, z: f64) -> f64 {
        let r = match self.config.model {
            MfKind::Pmf => z,
            MfKind::Bpr => {
                let c = self.calibration.unwrap_or(Calibration {
                    a: 0.0,
                    b: self.global_mean,
                });
                c.a * z + c.b
            }
            MfKind::Mmmf => {
                let levels = self.config.levels_for(self.scale);
                let level = match self.thresholds.get(user) {
                    Some(th) => th.iter().filter(|&&t| z > t).count(),
                    None => initial_thresholds(levels).iter().filter(|&&t| z > t).count(),
                };
                level_to_rating(level, levels, self.scale)
            }
        };
        self.scale.clamp(r)
    }

    /// Training objective of this model on `d` (see the module docs).
    pub fn objective(&self, d: &RatingDataset) -> Result<f64, MfError> {
        let ws = Workspace::from_model(self, d, None, &mut rng_for(0, "objective"))?;
        Ok(ws.objective(&Problem::new(d, &self.config, self.scale)?))
    }

    /// Fraction of training pairs with `r_ui > r_uj` that the model scores in
    /// the same order (ties count half).
    pub fn pair_accuracy(&self, d: &RatingDataset) -> Option<f64> {
        pair_accuracy_with(d, |u, i| self.score(u, i))
    }

    pub fn save(&self, dir: &Path, prefix: &str) -> Result<(), MfError> {
        let header = FactorHeader::new(self.config.model.name(), self.config.seed);
        for (kind, m) in [("users", &self.users), ("items", &self.items)] {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{prefix}_{kind}.factors")))?);
            m.write_text(&mut w, &header)?;
            w.flush()?;
        }
        let meta = ModelMeta {
            config: self.config.clone(),
            scale: self.scale,
            global_mean: self.global_mean,
            calibration: self.calibration,
            thresholds: self.thresholds.clone(),
        };
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{prefix}_model.json")))?);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Files written by [`MfModel::save`] for `prefix`.
    pub fn artifact_names(prefix: &str) -> [String; 3] {
        [
            format!("{prefix}_users.factors"),
            format!("{prefix}_items.factors"),
            format!("{prefix}_model.json"),
        ]
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self, MfError> {
        let read = |name: String| -> Result<FactorMatrix, MfError> {
            let f = fs::File::open(dir.join(name))?;
            Ok(FactorMatrix::read_text(BufReader::new(f))?.0)
        };
        let users = read(format!("{prefix}_users.factors"))?;
        let items = read(format!("{prefix}_items.factors"))?;
        let meta: ModelMeta = serde_json::from_reader(BufReader::new(fs::File::open(
            dir.join(format!("{prefix}_model.json")),
        )?))?;
        if users.dim() != meta.config.dim || items.dim() != meta.config.dim {
            return Err(MfError::InvalidConfig("factor files disagree with model dim".into()));
        }
        Ok(Self {
            users,
            items,
            config: meta.config,
            scale: meta.scale,
            global_mean: meta.global_mean,
            thresholds: meta.thresholds,
            calibration: meta.calibration,
        })
    }
}

impl RatingPredictor for MfModel {
    /// `U_i . V_j` mapped onto the rating scale, or the global training mean
    /// when either entity is unknown.
    fn predict(&self, user: &str, item: &str) -> f64 {
        match self.score(user, item) {
            Some(z) => self.score_to_rating(user, z),
            None => self.global_mean,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: MfConfig,
    scale: RatingScale,
    global_mean: f64,
    calibration: Option<Calibration>,
    thresholds: IndexMap<String, Vec<f64>>,
}

/// Pair ordering accuracy for an arbitrary scorer.
pub fn pair_accuracy_with(
    d: &RatingDataset,
    score: impl Fn(&str, &str) -> Option<f64>,
) -> Option<f64> {
    let by_user = ratings_by_user(d);
    let mut good = 0.0;
    let mut total = 0usize;
    for (u, list) in by_user.iter().enumerate() {
        let uid = &d.users()[u];
        let scores: Vec<Option<f64>> = list.iter().map(|&(_, i)| score(uid, &d.items()[i])).collect();
        for a in 0..list.len() {
            for b in 0..list.len() {
                if list[a].0 > list[b].0 {
                    total += 1;
                    if let (Some(sa), Some(sb)) = (scores[a], scores[b]) {
                        if sa > sb {
                            good += 1.0;
                        } else if sa == sb {
                            good += 0.5;
                        }
                    }
                }
            }
        }
    }
    (total > 0).then(|| good / total as f64)
}

fn ratings_by_user(d: &RatingDataset) -> Vec<Vec<(f64, usize)>> {
    let mut by_user = vec![Vec::new(); d.n_users()];
    for &(u, i, r) in d.indexed() {
        by_user[u].push((r, i));
    }
    for list in &mut by_user {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    by_user
}

fn initial_thresholds(levels: usize) -> Vec<f64> {
    let center = (levels as f64 - 2.0) / 2.0;
    (0..levels - 1).map(|l| l as f64 - center).collect()
}

fn rating_level(r: f64, levels: usize, scale: RatingScale) -> usize {
    let t = (r - scale.min) / (scale.max - scale.min);
    ((t * (levels - 1) as f64).round().max(0.0) as usize).min(levels - 1)
}

fn level_to_rating(level: usize, levels: usize, scale: RatingScale) -> f64 {
    scale.min + level as f64 * (scale.max - scale.min) / (levels - 1) as f64
}

/// Trains a model of kind `cfg.model` on all ratings in `d`.
pub fn train(d: &RatingDataset, cfg: &MfConfig) -> Result<MfModel, MfError> {
    cfg.validate(false)?;
    if d.is_empty() {
        return Err(MfError::EmptyDataset);
    }
    let problem = Problem::new(d, cfg, d.scale())?;
    let mut init_rng = rng_for(cfg.seed, &format!("{}/init", cfg.model));
    let mut ws = Workspace::fresh(d, cfg, problem.levels, &mut init_rng)?;
    let mut shuffle_rng = rng_for(cfg.seed, &format!("{}/shuffle", cfg.model));
    ws.run(&problem, cfg, Free::Both, &mut shuffle_rng)?;
    ws.into_model(d, cfg, None, None)
}

/// Re-optimizes one factor side on `d` while the `fixed` side stays exactly as
/// it is in `model`. The free side starts from the model's vectors; entities
/// the model has not seen start from fresh random vectors. MMMF thresholds are
/// always free and BPR calibration is refit afterwards.
pub fn retrain_one_side(
    model: &MfModel,
    d: &RatingDataset,
    fixed: EntityKind,
    cfg: &MfConfig,
) -> Result<MfModel, MfError> {
    cfg.validate(true)?;
    if cfg.model != model.config.model || cfg.dim != model.config.dim {
        return Err(MfError::InvalidConfig(format!(
            "retrain config ({} K={}) does not match model ({} K={})",
            cfg.model, cfg.dim, model.config.model, model.config.dim
        )));
    }
    if d.is_empty() {
        return Err(MfError::EmptyDataset);
    }
    let problem = Problem::new(d, cfg, model.scale)?;
    let mut init_rng = rng_for(cfg.seed, &format!("{}/retrain-init", cfg.model));
    let mut ws = Workspace::from_model(model, d, Some(fixed), &mut init_rng)?;
    let mut shuffle_rng = rng_for(cfg.seed, &format!("{}/retrain-shuffle", cfg.model));
    let free = match fixed {
        EntityKind::User => Free::Items,
        EntityKind::Item => Free::Users,
    };
    ws.run(&problem, cfg, free, &mut shuffle_rng)?;
    ws.into_model(d, cfg, Some(model), Some(fixed))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Free {
    Both,
    Users,
    Items,
}

impl Free {
    fn users(self) -> bool {
        matches!(self, Free::Both | Free::Users)
    }
    fn items(self) -> bool {
        matches!(self, Free::Both | Free::Items)
    }
}

/// Dataset-derived structures shared by all epochs.
struct Problem<'a> {
    model: MfKind,
    lambda: f64,
    levels: usize,
    triples: &'a [(usize, usize, f64)],
    rating_levels: Vec<usize>,
    /// per user, (rating, item) ascending
    by_user: Vec<Vec<(f64, usize)>>,
    /// triples that have at least one lower-rated item of the same user
    positives: Vec<usize>,
    n_pairs: usize,
}

impl<'a> Problem<'a> {
    fn new(d: &'a RatingDataset, cfg: &MfConfig, scale: RatingScale) -> Result<Self, MfError> {
        let levels = cfg.levels_for(scale);
        let rating_levels = d
            .indexed()
            .iter()
            .map(|&(_, _, r)| rating_level(r, levels, scale))
            .collect();
        let mut by_user = Vec::new();
        let mut positives = Vec::new();
        let mut n_pairs = 0;
        if cfg.model == MfKind::Bpr {
            by_user = ratings_by_user(d);
            for (t, &(u, _, r)) in d.indexed().iter().enumerate() {
                let lower = by_user[u].partition_point(|&(x, _)| x < r);
                if lower > 0 {
                    positives.push(t);
                    n_pairs += lower;
                }
            }
            if positives.is_empty() {
                return Err(MfError::NoRankablePairs);
            }
        }
        Ok(Self {
            model: cfg.model,
            lambda: cfg.regularization,
            levels,
            triples: d.indexed(),
            rating_levels,
            by_user,
            positives,
            n_pairs,
        })
    }

    fn for_each_pair(&self, mut f: impl FnMut(usize, usize, usize)) {
        for &t in &self.positives {
            let (u, i, r) = self.triples[t];
            let lower = self.by_user[u].partition_point(|&(x, _)| x < r);
            for &(_, j) in &self.by_user[u][..lower] {
                f(u, i, j);
            }
        }
    }
}

/// Dense parameter buffers indexed by the dataset's entity indices.
struct Workspace {
    k: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    /// `levels - 1` thresholds per user (MMMF only)
    theta: Vec<f64>,
    nt: usize,
    user_active: Vec<bool>,
    item_active: Vec<bool>,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).expect("positive init scale");
    (0..n * k).map(|_| normal.sample(rng)).collect()
}

impl Workspace {
    fn fresh(d: &RatingDataset, cfg: &MfConfig, levels: usize, rng: &mut ChaCha8Rng) -> Result<Self, MfError> {
        let k = cfg.dim;
        let u = gaussian_rows(rng, d.n_users(), k, cfg.init_scale);
        let v = gaussian_rows(rng, d.n_items(), k, cfg.init_scale);
        let nt = if cfg.model == MfKind::Mmmf { levels - 1 } else { 0 };
        let theta = initial_thresholds(levels)
            .into_iter()
            .cycle()
            .take(nt * d.n_users())
            .collect();
        Ok(Self {
            k,
            u,
            v,
            theta,
            nt,
            user_active: d.counts(EntityKind::User).iter().map(|&c| c > 0).collect(),
            item_active: d.counts(EntityKind::Item).iter().map(|&c| c > 0).collect(),
        })
    }

    /// Loads the model's parameters for the dataset's active entities. When
    /// `fixed` is set, every active entity of that side must exist in the model.
    fn from_model(
        model: &MfModel,
        d: &RatingDataset,
        fixed: Option<EntityKind>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, MfError> {
        let cfg = &model.config;
        let levels = cfg.levels_for(model.scale);
        let mut ws = Self::fresh(d, cfg, levels, rng)?;
        for kind in [EntityKind::User, EntityKind::Item] {
            let (buf, active, m) = match kind {
                EntityKind::User => (&mut ws.u, &ws.user_active, &model.users),
                EntityKind::Item => (&mut ws.v, &ws.item_active, &model.items),
            };
            for (idx, id) in d.index(kind).iter().enumerate() {
                if !active[idx] {
                    continue;
                }
                match m.get(id) {
                    Some(vec) => buf[idx * ws.k..(idx + 1) * ws.k].copy_from_slice(vec),
                    None if fixed == Some(kind) => {
                        return Err(MfError::MissingFixedEntity {
                            kind,
                            id: id.clone(),
                        })
                    }
                    None => {}
                }
            }
        }
        if ws.nt > 0 {
            for (idx, id) in d.users().iter().enumerate() {
                if let Some(th) = model.thresholds.get(id) {
                    if th.len() == ws.nt {
                        ws.theta[idx * ws.nt..(idx + 1) * ws.nt].copy_from_slice(th);
                    }
                }
            }
        }
        Ok(ws)
    }

    fn urow(&self, u: usize) -> &[f64] {
        &self.u[u * self.k..(u + 1) * self.k]
    }

    fn vrow(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    fn reg_total(&self) -> f64 {
        let side = |buf: &[f64], active: &[bool]| -> f64 {
            buf.chunks_exact(self.k)
                .zip(active)
                .filter(|(_, &a)| a)
                .map(|(r, _)| dot(r, r))
                .sum()
        };
        side(&self.u, &self.user_active) + side(&self.v, &self.item_active)
    }

    /// Full objective over all ratings (PMF, MMMF) or all rankable pairs (BPR).
    fn objective(&self, p: &Problem) -> f64 {
        let data: f64 = match p.model {
            MfKind::Pmf => p
                .triples
                .iter()
                .map(|&(u, i, r)| {
                    let e = r - dot(self.urow(u), self.vrow(i));
                    e * e
                })
                .sum(),
            MfKind::Mmmf => p
                .triples
                .iter()
                .zip(&p.rating_levels)
                .map(|(&(u, i, _), &lvl)| {
                    let z = dot(self.urow(u), self.vrow(i));
                    mmmf_threshold_loss(z, lvl, &self.theta[u * self.nt..(u + 1) * self.nt])
                })
                .sum(),
            MfKind::Bpr => {
                let mut s = 0.0;
                p.for_each_pair(|u, i, j| s += bpr_pair_loss(self.urow(u), self.vrow(i), self.vrow(j)));
                s
            }
        };
        data + p.lambda * self.reg_total()
    }

    fn run(&mut self, p: &Problem, cfg: &MfConfig, free: Free, rng: &mut ChaCha8Rng) -> Result<(), MfError> {
        let mut order: Vec<usize> = (0..p.triples.len()).collect();
        for epoch in 1..=cfg.epochs {
            let loss = match cfg.schedule {
                Schedule::Sgd => match p.model {
                    MfKind::Pmf | MfKind::Mmmf => {
                        order.shuffle(rng);
                        self.sgd_ratings(p, &order, cfg.learning_rate, free)
                    }
                    MfKind::Bpr => self.sgd_pairs(p, cfg.learning_rate, free, rng),
                },
                Schedule::FullBatch => self.full_batch_step(p, cfg.learning_rate, free),
            };
            if !loss.is_finite() || self.u.iter().chain(&self.v).any(|x| !x.is_finite()) {
                return Err(MfError::Diverged { epoch });
            }
        }
        Ok(())
    }

    fn sgd_ratings(&mut self, p: &Problem, order: &[usize], lr: f64, free: Free) -> f64 {
        let k = self.k;
        let lambda = p.lambda;
        let mut loss = 0.0;
        let mut dtheta = vec![0.0; self.nt];
        for &t in order {
            let (u, i, r) = p.triples[t];
            let (ur, vr) = (u * k..(u + 1) * k, i * k..(i + 1) * k);
            let z = dot(&self.u[ur.clone()], &self.v[vr.clone()]);
            // dL/dz for the data term
            let dz = match p.model {
                MfKind::Pmf => {
                    let e = r - z;
                    loss += e * e;
                    -2.0 * e
                }
                _ => {
                    let th = &mut self.theta[u * self.nt..(u + 1) * self.nt];
                    loss += mmmf_threshold_loss(z, p.rating_levels[t], th);
                    let dz = mmmf_threshold_grad(z, p.rating_levels[t], th, &mut dtheta);
                    for (x, g) in th.iter_mut().zip(&dtheta) {
                        *x -= lr * g;
                    }
                    project_sorted(th);
                    dz
                }
            };
            for c in 0..k {
                let uc = self.u[u * k + c];
                let vc = self.v[i * k + c];
                if free.users() {
                    self.u[u * k + c] -= lr * (dz * vc + 2.0 * lambda * uc);
                }
                if free.items() {
                    self.v[i * k + c] -= lr * (dz * uc + 2.0 * lambda * vc);
                }
            }
        }
        loss
    }

    fn sgd_pairs(&mut self, p: &Problem, lr: f64, free: Free, rng: &mut ChaCha8Rng) -> f64 {
        let k = self.k;
        let lambda = p.lambda;
        let mut loss = 0.0;
        for _ in 0..p.triples.len() {
            let t = p.positives[rng.random_range(0..p.positives.len())];
            let (u, i, r) = p.triples[t];
            let lower = p.by_user[u].partition_point(|&(x, _)| x < r);
            let j = p.by_user[u][rng.random_range(0..lower)].1;
            let x = dot(self.urow(u), self.vrow(i)) - dot(self.urow(u), self.vrow(j));
            loss += softplus(-x);
            // d(-ln sigma(x))/dx
            let g = -sigmoid(-x);
            for c in 0..k {
                let uc = self.u[u * k + c];
                let vic = self.v[i * k + c];
                let vjc = self.v[j * k + c];
                if free.users() {
                    self.u[u * k + c] -= lr * (g * (vic - vjc) + 2.0 * lambda * uc);
                }
                if free.items() {
                    self.v[i * k + c] -= lr * (g * uc + 2.0 * lambda * vic);
                    self.v[j * k + c] -= lr * (-g * uc + 2.0 * lambda * vjc);
                }
            }
        }
        loss
    }

    /// One exact gradient step; returns the objective before the step.
    fn full_batch_step(&mut self, p: &Problem, lr: f64, free: Free) -> f64 {
        let k = self.k;
        let mut gu = vec![0.0; self.u.len()];
        let mut gv = vec![0.0; self.v.len()];
        let mut gt = vec![0.0; self.theta.len()];
        let mut dtheta = vec![0.0; self.nt];
        let acc = |u: usize, a: usize, b: Option<usize>, dz: f64, gu: &mut [f64], gv: &mut [f64]| {
            for c in 0..k {
                let uc = self.u[u * k + c];
                let diff = self.v[a * k + c] - b.map_or(0.0, |b| self.v[b * k + c]);
                gu[u * k + c] += dz * diff;
                gv[a * k + c] += dz * uc;
                if let Some(b) = b {
                    gv[b * k + c] -= dz * uc;
                }
            }
        };
        match p.model {
            MfKind::Pmf => {
                for &(u, i, r) in p.triples {
                    let e = r - dot(self.urow(u), self.vrow(i));
                    acc(u, i, None, -2.0 * e, &mut gu, &mut gv);
                }
            }
            MfKind::Mmmf => {
                for (&(u, i, _), &lvl) in p.triples.iter().zip(&p.rating_levels) {
                    let z = dot(self.urow(u), self.vrow(i));
                    let th = &self.theta[u * self.nt..(u + 1) * self.nt];
                    let dz = mmmf_threshold_grad(z, lvl, th, &mut dtheta);
                    for (g, d) in gt[u * self.nt..(u + 1) * self.nt].iter_mut().zip(&dtheta) {
                        *g += d;
                    }
                    acc(u, i, None, dz, &mut gu, &mut gv);
                }
            }
            MfKind::Bpr => {
                let mut pairs = Vec::with_capacity(p.n_pairs);
                p.for_each_pair(|u, i, j| pairs.push((u, i, j)));
                for (u, i, j) in pairs {
                    let x = dot(self.urow(u), self.vrow(i)) - dot(self.urow(u), self.vrow(j));
                    acc(u, i, Some(j), -sigmoid(-x), &mut gu, &mut gv);
                }
            }
        }
        let before = self.objective(p);
        let lambda = p.lambda;
        if free.users() {
            for (idx, active) in self.user_active.iter().enumerate() {
                if *active {
                    let r = idx * k..(idx + 1) * k;
                    for (x, g) in self.u[r.clone()].iter_mut().zip(&gu[r]) {
                        *x -= lr * (g + 2.0 * lambda * *x);
                    }
                }
            }
        }
        if free.items() {
            for (idx, active) in self.item_active.iter().enumerate() {
                if *active {
                    let r = idx * k..(idx + 1) * k;
                    for (x, g) in self.v[r.clone()].iter_mut().zip(&gv[r]) {
                        *x -= lr * (g + 2.0 * lambda * *x);
                    }
                }
            }
        }
        if self.nt > 0 {
            for (x, g) in self.theta.iter_mut().zip(&gt) {
                *x -= lr * g;
            }
            for th in self.theta.chunks_exact_mut(self.nt) {
                project_sorted(th);
            }
        }
        before
    }

    fn into_model(
        self,
        d: &RatingDataset,
        cfg: &MfConfig,
        base: Option<&MfModel>,
        fixed: Option<EntityKind>,
    ) -> Result<MfModel, MfError> {
        let mut sides = Vec::with_capacity(2);
        for kind in [EntityKind::User, EntityKind::Item] {
            if fixed == Some(kind) {
                sides.push(base.expect("fixed side needs a base model").factors(kind).clone());
                continue;
            }
            let (buf, active) = match kind {
                EntityKind::User => (&self.u, &self.user_active),
                EntityKind::Item => (&self.v, &self.item_active),
            };
            // keep the base model's entity order, then append newcomers
            let mut m = match base {
                Some(b) => b.factors(kind).clone(),
                None => FactorMatrix::new(self.k)?,
            };
            for (idx, id) in d.index(kind).iter().enumerate() {
                if active[idx] {
                    m.set(id, &buf[idx * self.k..(idx + 1) * self.k])?;
                }
            }
            sides.push(m);
        }
        let items = sides.pop().expect("items");
        let users = sides.pop().expect("users");

        let mut thresholds = base.map(|b| b.thresholds.clone()).unwrap_or_default();
        if self.nt > 0 {
            for (idx, id) in d.users().iter().enumerate() {
                if self.user_active[idx] {
                    thresholds.insert(id.clone(), self.theta[idx * self.nt..(idx + 1) * self.nt].to_vec());
                }
            }
        }
        let global_mean = d.mean_rating().ok_or(MfError::EmptyDataset)?;
        let mut model = MfModel {
            users,
            items,
            config: cfg.clone(),
            scale: base.map_or(d.scale(), |b| b.scale),
            global_mean,
            thresholds,
            calibration: None,
        };
        if cfg.model == MfKind::Bpr {
            model.calibration = Some(fit_calibration(&model, d));
        }
        Ok(model)
    }
}

/// Least-squares fit of ratings against raw scores.
fn fit_calibration(model: &MfModel, d: &RatingDataset) -> Calibration {
    let pairs: Vec<(f64, f64)> = d
        .triples()
        .iter()
        .filter_map(|t| model.score(&t.user, &t.item).map(|s| (s, t.rating)))
        .collect();
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return Calibration {
            a: 0.0,
            b: model.global_mean,
        };
    }
    let ms = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - ms).powi(2)).sum::<f64>();
    let cov = pairs.iter().map(|p| (p.0 - ms) * (p.1 - mr)).sum::<f64>();
    if var <= 1e-12 * n {
        Calibration { a: 0.0, b: mr }
    } else {
        let a = cov / var;
        Calibration { a, b: mr - a * ms }
    }
}
