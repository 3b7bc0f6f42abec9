//! Per-sample losses and gradients for the three factorization objectives.
//!
//! Every loss here is written so that its gradient is exact; the trainers use
//! these functions both for stochastic updates and for full-batch descent.

use crate::factors::dot;

/// Squared-error PMF loss for one rating, with the per-sample L2 term:
/// `(r - u.v)^2 + lambda * (|u|^2 + |v|^2)`.
pub fn pmf_sample_loss(u: &[f64], v: &[f64], rating: f64, lambda: f64) -> f64 {
    let e = rating - dot(u, v);
    e * e + lambda * (dot(u, u) + dot(v, v))
}

/// Gradient of [`pmf_sample_loss`] with respect to `u` and `v`.
pub fn pmf_sample_grad(u: &[f64], v: &[f64], rating: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let e = rating - dot(u, v);
    let gu = u.iter().zip(v).map(|(&a, &b)| -2.0 * e * b + 2.0 * lambda * a).collect();
    let gv = u.iter().zip(v).map(|(&a, &b)| -2.0 * e * a + 2.0 * lambda * b).collect();
    (gu, gv)
}

/// Smooth hinge `h(z) = (1 - z)^2 / 2` for `z < 1`, else 0.
pub fn smooth_hinge(z: f64) -> f64 {
    if z < 1.0 {
        0.5 * (1.0 - z) * (1.0 - z)
    } else {
        0.0
    }
}

pub fn smooth_hinge_deriv(z: f64) -> f64 {
    if z < 1.0 {
        z - 1.0
    } else {
        0.0
    }
}

/// All-thresholds loss for a score `z` observed at ordinal `level`.
///
/// Thresholds below the level want `z` above them by a margin of one; the
/// rest want `z` below them.
pub fn mmmf_threshold_loss(z: f64, level: usize, thresholds: &[f64]) -> f64 {
    thresholds
        .iter()
        .enumerate()
        .map(|(l, &t)| {
            if l < level {
                smooth_hinge(z - t)
            } else {
                smooth_hinge(t - z)
            }
        })
        .sum()
}

/// Derivative of [`mmmf_threshold_loss`] with respect to `z`, writing the
/// per-threshold derivatives into `dtheta`.
pub fn mmmf_threshold_grad(z: f64, level: usize, thresholds: &[f64], dtheta: &mut [f64]) -> f64 {
    let mut dz = 0.0;
    for (l, (&t, dt)) in thresholds.iter().zip(dtheta.iter_mut()).enumerate() {
        if l < level {
            let g = smooth_hinge_deriv(z - t);
            dz += g;
            *dt = -g;
        } else {
            let g = smooth_hinge_deriv(t - z);
            dz -= g;
            *dt = g;
        }
    }
    dz
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise ranking loss `-ln sigma(u.(v_i - v_j))` for one preferred/less
/// preferred pair, without regularization.
pub fn bpr_pair_loss(u: &[f64], vi: &[f64], vj: &[f64]) -> f64 {
    softplus(-(dot(u, vi) - dot(u, vj)))
}

/// Isotonic (pool-adjacent-violators) projection making `x` non-decreasing.
pub fn project_sorted(x: &mut [f64]) {
    if x.windows(2).all(|w| w[0] <= w[1]) {
        return;
    }
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for &v in x.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s2 / c2 as f64 {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = (s1 + s2, c1 + c2);
            } else {
                break;
            }
        }
    }
    let mut pos = 0;
    for (s, c) in blocks {
        let mean = s / c as f64;
        for v in &mut x[pos..pos + c] {
            *v = mean;
        }
        pos += c;
    }
}
