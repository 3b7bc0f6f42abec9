use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Gradient, MappingNetwork};
use super::MapError;
use crate::factors::FactorMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without an improvement of at least
    /// `min_improvement`; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for MapTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.005,
            max_epochs: 200,
            early_stop_patience: 10,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

impl MapTrainConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.batch_size == 0 {
            return Err(MapError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MapError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(MapError::InvalidConfig("min_improvement must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parameter update rule applied after each minibatch.
pub trait Optimizer {
    fn step(&mut self, net: &mut MappingNetwork, grad: &Gradient);
}

#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut MappingNetwork, grad: &Gradient) {
        net.descend(grad, self.learning_rate);
    }
}

#[derive(Debug, Clone)]
pub struct MapTraining {
    pub network: MappingNetwork,
    /// Training loss after each epoch; entry 0 is the initial loss.
    pub losses: Vec<f64>,
    pub best_epoch: usize,
}

impl MapTraining {
    pub fn best_loss(&self) -> f64 {
        self.losses[self.best_epoch]
    }

    pub fn write_curve<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_mse")?;
        for (e, l) in self.losses.iter().enumerate() {
            writeln!(w, "{e},{l:?}")?;
        }
        Ok(())
    }
}

/// Aligns `targets` to the key order of `inputs`; both must hold the same keys.
pub fn paired_rows<'a>(
    inputs: &'a FactorMatrix,
    targets: &'a FactorMatrix,
) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>), MapError> {
    if inputs.len() != targets.len() {
        return Err(MapError::KeyMismatch(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut xs = Vec::with_capacity(inputs.len());
    let mut ys = Vec::with_capacity(inputs.len());
    for (id, x) in inputs.iter() {
        let y = targets
            .get(id)
            .ok_or_else(|| MapError::KeyMismatch(format!("{id} has no target vector")))?;
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

pub fn train_mapping(
    net: MappingNetwork,
    inputs: &FactorMatrix,
    targets: &FactorMatrix,
    cfg: &MapTrainConfig,
) -> Result<MapTraining, MapError> {
    let mut opt = Sgd {
        learning_rate: cfg.learning_rate,
    };
    train_mapping_with(net, inputs, targets, cfg, &mut opt)
}

/// Minibatch training on the mean squared mapping loss. Returns the
/// parameters with the lowest training loss seen, which is never worse than
/// the initial network.
pub fn train_mapping_with(
    net: MappingNetwork,
    inputs: &FactorMatrix,
    targets: &FactorMatrix,
    cfg: &MapTrainConfig,
    opt: &mut dyn Optimizer,
) -> Result<MapTraining, MapError> {
    cfg.validate()?;
    let (xs, ys) = paired_rows(inputs, targets)?;
    let initial = net.loss(&xs, &ys)?;
    if !initial.is_finite() {
        return Err(MapError::Diverged { epoch: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut losses = vec![initial];
    let mut best = (initial, 0usize, net.clone());
    let mut reference = initial;
    let mut stale = 0;
    let mut cur = net;
    let mut bx = Vec::with_capacity(cfg.batch_size);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| xs[i]));
            by.extend(chunk.iter().map(|&i| ys[i]));
            let (_, g) = cur.loss_and_gradient(&bx, &by)?;
            opt.step(&mut cur, &g);
        }
        let loss = cur.loss(&xs, &ys)?;
        if !loss.is_finite() || !cur.is_finite() {
            return Err(MapError::Diverged { epoch });
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, cur.clone());
        }
        if loss <= reference - cfg.min_improvement {
            reference = loss;
            stale = 0;
        } else {
            stale += 1;
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok(MapTraining {
        network: best.2,
        losses,
        best_epoch: best.1,
    })
}
