//! Fully connected tansig network with explicit backpropagation.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MapError;

/// `2 / (1 + e^(-2x)) - 1`, which is `tanh(x)`; the library form is used for
/// its accuracy near zero.
pub fn tansig(x: f64) -> f64 {
    x.tanh()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// row-major, `outputs x inputs`
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            out.push(tansig(z));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    layers: Vec<Layer>,
    seed: u64,
}

/// Same shape as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    out
}

/// Hidden width for latent dimension `k`: `ceil(1.5 k)`.
pub fn hidden_width(k: usize) -> usize {
    (3 * k).div_ceil(2)
}

/// Widths `[k, w, .., w, k]` with `d` weight layers.
pub fn layer_widths(k: usize, d: usize) -> Vec<usize> {
    let mut w = vec![k];
    w.extend(std::iter::repeat_n(hidden_width(k), d.saturating_sub(1)));
    w.push(k);
    w
}

/// Network with `d` weight layers over latent dimension `k`, weights uniform on
/// `[-1/sqrt(2k), 1/sqrt(2k)]` and zero biases.
pub fn init_network(k: usize, d: usize, seed: u64) -> Result<MappingNetwork, MapError> {
    if k == 0 || d == 0 {
        return Err(MapError::InvalidConfig("network needs k >= 1 and d >= 1".into()));
    }
    let bound = 1.0 / ((2 * k) as f64).sqrt();
    MappingNetwork::random(&layer_widths(k, d), bound, seed)
}

impl MappingNetwork {
    /// Uniform weights on `[-bound, bound]`, zero biases.
    pub fn random(widths: &[usize], bound: f64, seed: u64) -> Result<Self, MapError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(MapError::InvalidConfig(format!("bad layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let mut l = Layer::zeros(w[0], w[1]);
                for x in &mut l.weights {
                    *x = rng.random_range(-bound..=bound);
                }
                l
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self, MapError> {
        if layers.is_empty() {
            return Err(MapError::InvalidConfig("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(MapError::InvalidConfig(format!("layer {} has inconsistent sizes", i + 1)));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(MapError::InvalidConfig(format!(
                    "layer {} expects {} inputs but layer {} has {} outputs",
                    i + 1,
                    l.inputs,
                    i,
                    layers[i - 1].outputs
                )));
            }
            if !l.weights.iter().chain(&l.biases).all(|x| x.is_finite()) {
                return Err(MapError::InvalidConfig(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Parameters in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, p: &[f64]) -> Result<(), MapError> {
        if p.len() != self.param_count() {
            return Err(MapError::DimensionMismatch {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *x = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        if x.len() != self.input_dim() {
            return Err(MapError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.affine(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Activations of every layer, input first.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut out = Vec::with_capacity(l.outputs);
            l.affine(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Squared error averaged over pairs and output components.
    pub fn loss(&self, xs: &[&[f64]], ys: &[&[f64]]) -> Result<f64, MapError> {
        check_batch(self, xs, ys)?;
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let h = self.forward(x)?;
            total += h.iter().zip(*y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / (xs.len() * self.output_dim()) as f64)
    }

    /// [`MappingNetwork::loss`] and its exact gradient by backpropagation.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[&[f64]]) -> Result<(f64, Gradient), MapError> {
        check_batch(self, xs, ys)?;
        let n = (xs.len() * self.output_dim()) as f64;
        let mut grad = Gradient {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        };
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.trace(x);
            let out = acts.last().unwrap();
            // delta = dL/dz at the current layer
            let mut delta: Vec<f64> = out
                .iter()
                .zip(*y)
                .map(|(a, t)| {
                    total += (a - t) * (a - t);
                    2.0 * (a - t) / n * (1.0 - a * a)
                })
                .collect();
            for j in (0..self.layers.len()).rev() {
                let l = &self.layers[j];
                let g = &mut grad.layers[j];
                let input = &acts[j];
                for (o, d) in delta.iter().enumerate() {
                    g.biases[o] += d;
                    let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                    for (w, xi) in row.iter_mut().zip(input) {
                        *w += d * xi;
                    }
                }
                if j > 0 {
                    let mut prev = vec![0.0; l.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(input) {
                        *p *= 1.0 - a * a;
                    }
                    delta = prev;
                }
            }
        }
        Ok((total / n, grad))
    }

    /// Subtracts `lr * grad` from every parameter.
    pub fn descend(&mut self, grad: &Gradient, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in l.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in l.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }

    /// Text checkpoint: a header with dimensions, widths and seed, then each
    /// layer's weight rows and bias row.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# dcdcsr-network v1")?;
        let widths: Vec<String> = self.widths().iter().map(usize::to_string).collect();
        writeln!(
            w,
            "k={} depth={} seed={} widths={}",
            self.input_dim(),
            self.depth(),
            self.seed,
            widths.join(",")
        )?;
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join("\t");
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(w, "layer {} {}x{}", i + 1, l.outputs, l.inputs)?;
            for row in l.weights.chunks_exact(l.inputs) {
                writeln!(w, "w\t{}", join(row))?;
            }
            writeln!(w, "b\t{}", join(&l.biases))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self, MapError> {
        let bad = |m: &str| MapError::Checkpoint(m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String, MapError> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of checkpoint"))?
                .map_err(MapError::Io)
        };
        if next()? != "# dcdcsr-network v1" {
            return Err(bad("not a network checkpoint"));
        }
        let header = next()?;
        let mut seed = None;
        let mut widths = None;
        for kv in header.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("widths", v)) => {
                    widths = v
                        .split(',')
                        .map(|s| s.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .ok()
                }
                Some(("k" | "depth", _)) => {}
                _ => return Err(bad(&format!("unknown header field {kv:?}"))),
            }
        }
        let seed = seed.ok_or_else(|| bad("missing seed"))?;
        let widths = widths.ok_or_else(|| bad("missing widths"))?;
        if widths.len() < 2 {
            return Err(bad("need at least two widths"));
        }
        let parse_row = |line: &str, tag: &str, len: usize| -> Result<Vec<f64>, MapError> {
            let mut parts = line.split('\t');
            if parts.next() != Some(tag) {
                return Err(bad(&format!("expected a {tag} row, got {line:?}")));
            }
            let vals = parts
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if vals.len() != len {
                return Err(bad(&format!("{tag} row has {} values, expected {len}", vals.len())));
            }
            Ok(vals)
        };
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let head = next()?;
            if !head.starts_with("layer ") {
                return Err(bad(&format!("expected layer header, got {head:?}")));
            }
            let mut l = Layer::zeros(inputs, outputs);
            l.weights.clear();
            for _ in 0..outputs {
                l.weights.extend(parse_row(&next()?, "w", inputs)?);
            }
            l.biases = parse_row(&next()?, "b", outputs)?;
            layers.push(l);
        }
        Self::from_layers(layers, seed)
    }
}

fn check_batch(net: &MappingNetwork, xs: &[&[f64]], ys: &[&[f64]]) -> Result<(), MapError> {
    if xs.is_empty() {
        return Err(MapError::Empty);
    }
    if xs.len() != ys.len() {
        return Err(MapError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != net.input_dim() {
            return Err(MapError::DimensionMismatch {
                expected: net.input_dim(),
                got: x.len(),
            });
        }
        if y.len() != net.output_dim() {
            return Err(MapError::DimensionMismatch {
                expected: net.output_dim(),
                got: y.len(),
            });
        }
    }
    Ok(())
}
