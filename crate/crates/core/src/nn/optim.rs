//! Adam with bias-corrected moments.

use super::model::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step on a flat array. `t` is the 1-based step number.
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, p: &AdamParams) -> Result<()> {
    if g.len() != w.len() || m.len() != w.len() || v.len() != w.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} weights, {} grads, {}/{} moments",
            w.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    let c1 = 1.0 - p.beta1.powi(t as i32);
    let c2 = 1.0 - p.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= p.lr * mh / (vh.sqrt() + p.eps);
    }
    Ok(())
}

/// Optimizer state for every trainable parameter of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Self {
            params,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies the accumulated gradients of `net`.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        self.t += 1;
        let mut i = 0;
        let mut result = Ok(());
        let (m, v, t, p) = (&mut self.m, &mut self.v, self.t, &self.params);
        net.visit(&mut |param| {
            if !param.trainable || result.is_err() {
                return;
            }
            if m.len() == i {
                m.push(vec![0.0; param.value.len()]);
                v.push(vec![0.0; param.value.len()]);
            }
            result = adam_update(&mut param.value, &param.grad, &mut m[i], &mut v[i], t, p);
            i += 1;
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let p = AdamParams::with_lr(1e-3);
        let mut w = vec![0.5, -1.0];
        let (mut m, mut v) = (vec![0.1, 0.2], vec![0.01, 0.02]);
        adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 3, &p).unwrap();
        let expect =
            0.5 - 1e-3 * (0.09 / (1.0 - 0.9f64.powi(3))) / ((0.00999 / (1.0 - 0.999f64.powi(3))).sqrt() + 1e-8);
        assert!((w[0] - expect).abs() < 1e-15);
        assert!((m[0] - 0.09).abs() < 1e-15 && (v[1] - 0.01998).abs() < 1e-15);
    }

    #[test]
    fn fresh_state_zero_gradient_is_noop() {
        let p = AdamParams::with_lr(1e-3);
        let mut w = vec![0.5, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..10 {
            adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, t, &p).unwrap();
        }
        assert_eq!(w, vec![0.5, -1.0]);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let p = AdamParams::with_lr(1e-3);
        let (mut w, mut m, mut v) = (vec![0.0], vec![0.0], vec![0.0]);
        let mut prev = 0.0;
        for t in 1..=500 {
            adam_update(&mut w, &[2.5], &mut m, &mut v, t, &p).unwrap();
            let step = prev - w[0];
            assert!((step - 1e-3).abs() < 1e-9, "step {step} at t={t}");
            prev = w[0];
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        let p = AdamParams::with_lr(1e-3);
        let (mut w, mut m, mut v) = (vec![0.7], vec![0.0], vec![0.0]);
        for t in 1..=2000 {
            let g = 2.0 * (w[0] - 0.3);
            adam_update(&mut w, &[g], &mut m, &mut v, t, &p).unwrap();
        }
        assert!((w[0] - 0.3).abs() < 1e-4, "w = {}", w[0]);
    }

    #[test]
    fn mismatched_lengths_fail() {
        let p = AdamParams::with_lr(1e-3);
        let (mut w, mut m, mut v) = (vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
        assert!(adam_update(&mut w, &[1.0], &mut m, &mut v, 1, &p).is_err());
    }
}
