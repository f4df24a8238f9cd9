//! Central finite-difference checks of the reverse-mode gradients.
//!
//! Layers are checked through the scalar `sum(r * y)` for a fixed random
//! `r`; networks through their configured loss. Coordinates whose
//! perturbation flips a ReLU sign or a pooling winner sit on a kink, where
//! the derivative is undefined, and are reported as skipped.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, TrainCtx};
use super::loss::{loss, loss_and_grad};
use super::model::{LossKind, Network};
use super::tensor::{Param, Tensor};

pub const FD_STEP: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_rel_err: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x);
    x[i] = orig - FD_STEP;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// A differentiable scalar function of an input tensor and trainable parameters.
trait Probe {
    /// Value at the current state and a hash of its branch choices.
    fn eval(&mut self, x: &Tensor) -> (f64, u64);
    /// Input gradient and flattened trainable-parameter gradients.
    fn grads(&mut self, x: &Tensor) -> (Tensor, Vec<f64>);
    fn nudge(&mut self, k: usize, delta: f64);
    fn param_len(&mut self) -> usize;
}

fn trainable_grads(visit: impl FnOnce(&mut dyn FnMut(&mut Param))) -> Vec<f64> {
    let mut out = Vec::new();
    visit(&mut |p| {
        if p.trainable {
            out.extend_from_slice(&p.grad)
        }
    });
    out
}

fn nudge_flat(k: usize, delta: f64, visit: impl FnOnce(&mut dyn FnMut(&mut Param))) {
    let mut offset = 0;
    visit(&mut |p| {
        if !p.trainable {
            return;
        }
        if (offset..offset + p.value.len()).contains(&k) {
            p.value[k - offset] += delta;
        }
        offset += p.value.len();
    });
}

struct LayerProbe<'a, F: Fn() -> TrainCtx> {
    layer: &'a mut dyn Layer,
    r: Tensor,
    ctx: F,
}

impl<F: Fn() -> TrainCtx> Probe for LayerProbe<'_, F> {
    fn eval(&mut self, x: &Tensor) -> (f64, u64) {
        let y = self.layer.forward(x, &mut (self.ctx)());
        let mut h = DefaultHasher::new();
        self.layer.pattern(&mut h);
        (y.data.iter().zip(&self.r.data).map(|(a, b)| a * b).sum(), h.finish())
    }

    fn grads(&mut self, x: &Tensor) -> (Tensor, Vec<f64>) {
        self.layer.visit(&mut |p| p.zero_grad());
        self.layer.forward(x, &mut (self.ctx)());
        let gx = self.layer.backward(&self.r);
        (gx, trainable_grads(|f| self.layer.visit(f)))
    }

    fn nudge(&mut self, k: usize, delta: f64) {
        nudge_flat(k, delta, |f| self.layer.visit(f));
    }

    fn param_len(&mut self) -> usize {
        trainable_grads(|f| self.layer.visit(f)).len()
    }
}

struct NetProbe<'a> {
    net: &'a mut Network,
    target: Tensor,
}

impl Probe for NetProbe<'_> {
    fn eval(&mut self, x: &Tensor) -> (f64, u64) {
        let y = self.net.forward_train(x, &mut TrainCtx::frozen()).expect("valid input");
        let mut h = DefaultHasher::new();
        self.net.pattern(&mut h);
        (
            loss(self.net.config().loss, &y, &self.target).expect("shapes"),
            h.finish(),
        )
    }

    fn grads(&mut self, x: &Tensor) -> (Tensor, Vec<f64>) {
        self.net.zero_grad();
        let y = self.net.forward_train(x, &mut TrainCtx::frozen()).expect("valid input");
        let (_, gy) = loss_and_grad(self.net.config().loss, &y, &self.target).expect("shapes");
        let gx = self.net.backward(&gy);
        (gx, trainable_grads(|f| self.net.visit(f)))
    }

    fn nudge(&mut self, k: usize, delta: f64) {
        nudge_flat(k, delta, |f| self.net.visit(f));
    }

    fn param_len(&mut self) -> usize {
        trainable_grads(|f| self.net.visit(f)).len()
    }
}

fn sample_coords(rng: &mut ChaCha8Rng, len: usize, samples: usize) -> Vec<usize> {
    if len <= samples {
        (0..len).collect()
    } else {
        (0..samples).map(|_| rng.random_range(0..len)).collect()
    }
}

fn run(probe: &mut dyn Probe, x: &Tensor, samples: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, base_pattern) = probe.eval(x);
    let (gx, gp) = probe.grads(x);
    let mut out = GradCheck::new();

    let mut xp = x.clone();
    for i in sample_coords(&mut rng, x.data.len(), samples) {
        let orig = xp.data[i];
        xp.data[i] = orig + FD_STEP;
        let (plus, pp) = probe.eval(&xp);
        xp.data[i] = orig - FD_STEP;
        let (minus, pm) = probe.eval(&xp);
        xp.data[i] = orig;
        if pp != base_pattern || pm != base_pattern {
            out.skipped += 1;
            continue;
        }
        out.record(gx.data[i], (plus - minus) / (2.0 * FD_STEP));
    }

    let n_params = probe.param_len();
    for k in sample_coords(&mut rng, n_params, samples) {
        probe.nudge(k, FD_STEP);
        let (plus, pp) = probe.eval(x);
        probe.nudge(k, -2.0 * FD_STEP);
        let (minus, pm) = probe.eval(x);
        probe.nudge(k, FD_STEP);
        if pp != base_pattern || pm != base_pattern {
            out.skipped += 1;
            continue;
        }
        out.record(gp[k], (plus - minus) / (2.0 * FD_STEP));
    }
    out
}

/// Checks input and parameter gradients of a layer on up to `samples`
/// coordinates each. `ctx` supplies the forward-pass mode for every evaluation.
pub fn check_layer(
    layer: &mut dyn Layer,
    x: &Tensor,
    ctx: impl Fn() -> TrainCtx,
    samples: usize,
    seed: u64,
) -> GradCheck {
    let y = layer.infer(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let r_data = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = Tensor::from_vec(y.n, y.h, y.w, y.c, r_data).expect("shape");
    let mut probe = LayerProbe { layer, r, ctx };
    run(&mut probe, x, samples, seed)
}

/// Checks a network under its loss with eval-mode batch norm and no dropout.
pub fn check_network(net: &mut Network, x: &Tensor, target: &Tensor, samples: usize, seed: u64) -> GradCheck {
    let mut probe = NetProbe {
        net,
        target: target.clone(),
    };
    run(&mut probe, x, samples, seed)
}

/// Checks the gradient of a loss with respect to its prediction argument.
pub fn check_loss(kind: LossKind, pred: &Tensor, target: &Tensor) -> GradCheck {
    let (_, g) = loss_and_grad(kind, pred, target).expect("shapes");
    let mut out = GradCheck::new();
    let mut p = pred.clone();
    for i in 0..pred.data.len() {
        let numeric = central_difference(&mut p.data, i, |d| {
            let t = Tensor::from_vec(pred.n, pred.h, pred.w, pred.c, d.to_vec()).expect("shape");
            loss(kind, &t, target).expect("shapes")
        });
        out.record(g.data[i], numeric);
    }
    out
}
