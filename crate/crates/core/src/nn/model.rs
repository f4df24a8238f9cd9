//! The U-shaped segmentation networks and their configurations.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{double_conv, inception_block, orig_inception, INCEPTION_KERNELS};
use super::layers::{
    upsample2, upsample2_backward, Conv2d, ConvTranspose2, Dropout, Layer, MaxPool2, Sequential, Sigmoid, TrainCtx,
};
use super::tensor::{concat_channels, split_channels, Param, Tensor};
use crate::crossings::ThresholdRule;
use crate::error::{Error, Result};
use crate::imgproc::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    IncDice,
    UnetTh,
    UnetDice,
    OrigIncDice,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::IncDice,
        Variant::UnetTh,
        Variant::UnetDice,
        Variant::OrigIncDice,
    ];

    fn is_unet(self) -> bool {
        matches!(self, Variant::UnetTh | Variant::UnetDice)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::IncDice => "inc-dice",
            Variant::UnetTh => "unet-th",
            Variant::UnetDice => "unet-dice",
            Variant::OrigIncDice => "orig-inc-dice",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    Bce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Dice => "dice",
            LossKind::Bce => "bce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::InvalidParam(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub variant: Variant,
    /// Per-level encoder filter counts; the depth is their number.
    pub filters: Vec<usize>,
    /// Per-level decoder filter counts, deepest level first.
    pub decoder_filters: Vec<usize>,
    /// Inception kernel sizes, or `[first, rest]` for the plain U-Nets.
    pub kernel_sizes: Vec<usize>,
    pub dropout_p: f64,
    pub loss: LossKind,
    pub threshold_rule: ThresholdRule,
    /// Learning rate used by `train` when not overridden.
    pub lr: f64,
    /// Training patch side; inference accepts any size of at least `min_input()`.
    pub input_size: usize,
}

impl NetConfig {
    /// Full-size configuration of a variant.
    pub fn paper(variant: Variant) -> Self {
        match variant {
            Variant::IncDice | Variant::OrigIncDice => Self {
                variant,
                filters: vec![16, 32, 64, 64, 128],
                decoder_filters: vec![64, 32, 16, 8],
                kernel_sizes: INCEPTION_KERNELS.to_vec(),
                dropout_p: 0.1,
                loss: LossKind::Dice,
                threshold_rule: ThresholdRule::Fixed,
                lr: 1e-3,
                input_size: 200,
            },
            Variant::UnetTh | Variant::UnetDice => {
                let th = variant == Variant::UnetTh;
                Self {
                    variant,
                    filters: vec![14, 28, 56, 112, 224],
                    decoder_filters: vec![112, 56, 28, 14],
                    kernel_sizes: vec![7, 3],
                    dropout_p: 0.25,
                    loss: if th { LossKind::Bce } else { LossKind::Dice },
                    threshold_rule: if th { ThresholdRule::Otsu } else { ThresholdRule::Fixed },
                    lr: if th { 1e-4 } else { 1e-3 },
                    input_size: 200,
                }
            }
        }
    }

    /// Small configuration: `depth` levels with `n0 * 2^i` encoder filters
    /// and halving decoder filters.
    pub fn toy(variant: Variant, depth: usize, n0: usize, input_size: usize) -> Self {
        let filters: Vec<usize> = (0..depth).map(|i| n0 << i).collect();
        let decoder_filters = (0..depth.saturating_sub(1)).map(|j| filters[depth - 2 - j]).collect();
        Self {
            filters,
            decoder_filters,
            input_size,
            ..Self::paper(variant)
        }
    }

    pub fn depth(&self) -> usize {
        self.filters.len()
    }

    /// Smallest spatial side that survives all poolings.
    pub fn min_input(&self) -> usize {
        1 << self.depth().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::InvalidParam("at least one level required".into()));
        }
        if self.filters.iter().chain(&self.decoder_filters).any(|&f| f == 0) {
            return Err(Error::InvalidParam("filter counts must be positive".into()));
        }
        if self.decoder_filters.len() + 1 != self.filters.len() {
            return Err(Error::InvalidParam(format!(
                "{} decoder levels for {} encoder levels",
                self.decoder_filters.len(),
                self.filters.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidParam(format!(
                "dropout {} outside [0, 1)",
                self.dropout_p
            )));
        }
        let kernels_ok = if self.variant.is_unet() {
            self.kernel_sizes.len() == 2
        } else {
            !self.kernel_sizes.is_empty()
        };
        if !kernels_ok || self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidParam(format!("bad kernel sizes {:?}", self.kernel_sizes)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        if self.input_size < self.min_input() {
            return Err(Error::InvalidParam(format!(
                "input {} too small for depth {}",
                self.input_size,
                self.depth()
            )));
        }
        Ok(())
    }

    /// One-line `key:value;...` encoding used in weight files.
    pub fn encode(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "variant:{};filters:{};decoder:{};kernels:{};dropout:{};loss:{};threshold:{};lr:{};input:{}",
            self.variant,
            list(&self.filters),
            list(&self.decoder_filters),
            list(&self.kernel_sizes),
            self.dropout_p,
            self.loss,
            self.threshold_rule,
            self.lr,
            self.input_size
        )
    }

    pub fn decode(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("bad config field {what:?}"));
        let list = |v: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| x.parse().map_err(|_| bad(v))).collect()
        };
        let mut cfg = NetConfig::paper(Variant::IncDice);
        let mut seen = 0;
        for field in s.split(';') {
            let (k, v) = field.split_once(':').ok_or_else(|| bad(field))?;
            match k {
                "variant" => cfg.variant = v.parse()?,
                "filters" => cfg.filters = list(v)?,
                "decoder" => cfg.decoder_filters = list(v)?,
                "kernels" => cfg.kernel_sizes = list(v)?,
                "dropout" => cfg.dropout_p = v.parse().map_err(|_| bad(field))?,
                "loss" => cfg.loss = v.parse()?,
                "threshold" => cfg.threshold_rule = v.parse()?,
                "lr" => cfg.lr = v.parse().map_err(|_| bad(field))?,
                "input" => cfg.input_size = v.parse().map_err(|_| bad(field))?,
                _ => return Err(bad(field)),
            }
            seen += 1;
        }
        if seen != 9 {
            return Err(Error::Format(format!("config has {seen} of 9 fields")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a 64 of `encode()`.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.encode().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

enum Up {
    Nearest { in_hw: (usize, usize) },
    Learned(Box<ConvTranspose2>),
}

struct EncLevel {
    block: Box<dyn Layer>,
    pool: Option<MaxPool2>,
    dropout: Dropout,
    out_c: usize,
}

struct DecLevel {
    up: Up,
    block: Box<dyn Layer>,
    dropout: Dropout,
    block_c: usize,
}

/// A U-shaped encoder/decoder network with a sigmoid head.
pub struct Network {
    config: NetConfig,
    enc: Vec<EncLevel>,
    dec: Vec<DecLevel>,
    head: Sequential,
    skip_c: Vec<usize>,
}

fn level_block(
    cfg: &NetConfig,
    name: &str,
    level: usize,
    cin: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Box<dyn Layer> {
    match cfg.variant {
        Variant::IncDice => Box::new(inception_block(name, cin, n, &cfg.kernel_sizes, rng)),
        Variant::OrigIncDice => Box::new(orig_inception(name, cin, n, rng)),
        Variant::UnetTh | Variant::UnetDice => {
            let k = if level == 0 {
                cfg.kernel_sizes[0]
            } else {
                cfg.kernel_sizes[1]
            };
            Box::new(double_conv(name, cin, n, k, rng))
        }
    }
}

impl Network {
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = config.depth();
        let mut enc = Vec::with_capacity(depth);
        let mut cin = 1;
        for (i, &n) in config.filters.iter().enumerate() {
            let block = level_block(&config, &format!("enc{i}"), i, cin, n, &mut rng);
            let out_c = block.out_channels(cin);
            enc.push(EncLevel {
                block,
                pool: (i + 1 < depth).then(MaxPool2::new),
                dropout: Dropout::new(config.dropout_p),
                out_c,
            });
            cin = out_c;
        }
        let skip_c: Vec<usize> = enc.iter().map(|l| l.out_c).collect();
        let mut dec = Vec::with_capacity(depth - 1);
        for (j, &n) in config.decoder_filters.iter().enumerate() {
            let skip = skip_c[depth - 2 - j];
            let (up, block_in) = if config.variant.is_unet() {
                let ct = ConvTranspose2::new(&format!("dec{j}.up"), cin, n, &mut rng);
                (Up::Learned(Box::new(ct)), n)
            } else {
                (Up::Nearest { in_hw: (0, 0) }, cin)
            };
            let block = level_block(&config, &format!("dec{j}"), usize::MAX, block_in, n, &mut rng);
            let block_c = block.out_channels(block_in);
            dec.push(DecLevel {
                up,
                block,
                dropout: Dropout::new(config.dropout_p),
                block_c,
            });
            cin = block_c + skip;
        }
        let head = Sequential::new(vec![
            Box::new(Conv2d::new("head", 1, cin, 1, &mut rng)),
            Box::new(Sigmoid::new()),
        ]);
        Ok(Self {
            config,
            enc,
            dec,
            head,
            skip_c,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Encoder level outputs `(h, w, c)` for an `h x w` input, after pooling.
    pub fn encoder_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (h, w);
        self.enc
            .iter()
            .map(|l| {
                if l.pool.is_some() {
                    h /= 2;
                    w /= 2;
                }
                (h, w, l.out_c)
            })
            .collect()
    }

    /// Decoder level outputs `(h, w, c)` (after the skip concatenation).
    pub fn decoder_shapes(&self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        let mut sizes = vec![(h, w)];
        for _ in 1..self.enc.len() {
            let &(ph, pw) = sizes.last().expect("nonempty");
            sizes.push((ph / 2, pw / 2));
        }
        let depth = self.enc.len();
        self.dec
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let (sh, sw) = sizes[depth - 2 - j];
                (sh, sw, l.block_c + self.skip_c[depth - 2 - j])
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_ref(&mut |p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.enc {
            l.block.visit(f);
        }
        for l in &mut self.dec {
            if let Up::Learned(ct) = &mut l.up {
                ct.visit(f);
            }
            l.block.visit(f);
        }
        self.head.visit(f);
    }

    pub fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        for l in &self.enc {
            l.block.visit_ref(f);
        }
        for l in &self.dec {
            if let Up::Learned(ct) = &l.up {
                ct.visit_ref(f);
            }
            l.block.visit_ref(f);
        }
        self.head.visit_ref(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |p| p.zero_grad());
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let min = self.config.min_input();
        if x.c != 1 || x.h < min || x.w < min || x.n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "network input {:?}; need (n >= 1, h >= {min}, w >= {min}, 1)",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass: running statistics, no dropout.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut cur = x.clone();
        for l in &self.enc {
            let y = l.block.infer(&cur);
            cur = match &l.pool {
                Some(p) => p.infer(&y),
                None => y.clone(),
            };
            skips.push(y);
        }
        let depth = self.enc.len();
        for (j, l) in self.dec.iter().enumerate() {
            let skip = &skips[depth - 2 - j];
            let up = match &l.up {
                Up::Nearest { .. } => upsample2(&cur, skip.h, skip.w),
                Up::Learned(ct) => ct.infer_to(&cur, skip.h, skip.w),
            };
            let y = l.block.infer(&up);
            cur = concat_channels(&y, skip)?;
        }
        Ok(self.head.infer(&cur))
    }

    /// Training-path forward pass that caches activations for `backward`.
    pub fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        self.check_input(x)?;
        let mut skip_hw = Vec::with_capacity(self.enc.len());
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut cur = x.clone();
        for l in &mut self.enc {
            let y = l.block.forward(&cur, ctx);
            let pooled = match &mut l.pool {
                Some(p) => p.forward(&y, ctx),
                None => y.clone(),
            };
            cur = l.dropout.forward(&pooled, ctx);
            skip_hw.push((y.h, y.w));
            skips.push(y);
        }
        let depth = self.enc.len();
        for (j, l) in self.dec.iter_mut().enumerate() {
            let skip = &skips[depth - 2 - j];
            let up = match &mut l.up {
                Up::Nearest { in_hw } => {
                    *in_hw = (cur.h, cur.w);
                    upsample2(&cur, skip.h, skip.w)
                }
                Up::Learned(ct) => ct.forward_to(&cur, skip.h, skip.w),
            };
            let y = l.block.forward(&up, ctx);
            let cat = concat_channels(&y, skip)?;
            cur = l.dropout.forward(&cat, ctx);
        }
        Ok(self.head.forward(&cur, ctx))
    }

    /// Backpropagates `gy` (gradient w.r.t. the output map) through the last
    /// `forward_train`, accumulating parameter gradients; returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let depth = self.enc.len();
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        let mut g = self.head.backward(gy);
        for (j, l) in self.dec.iter_mut().enumerate().rev() {
            let g_cat = l.dropout.backward(&g);
            let parts = split_channels(&g_cat, &[l.block_c, self.skip_c[depth - 2 - j]]);
            skip_grads[depth - 2 - j] = Some(parts[1].clone());
            let g_up = l.block.backward(&parts[0]);
            g = match &mut l.up {
                Up::Nearest { in_hw } => upsample2_backward(&g_up, in_hw.0, in_hw.1),
                Up::Learned(ct) => ct.backward(&g_up),
            };
        }
        for (i, l) in self.enc.iter_mut().enumerate().rev() {
            let g_pooled = l.dropout.backward(&g);
            let mut g_y = match &mut l.pool {
                Some(p) => p.backward(&g_pooled),
                None => g_pooled,
            };
            if let Some(s) = skip_grads[i].take() {
                g_y.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += b);
            }
            g = l.block.backward(&g_y);
        }
        g
    }

    /// Hash of the ReLU/pooling branch choices made by the last `forward_train`.
    pub fn pattern(&self, h: &mut dyn Hasher) {
        for l in &self.enc {
            l.block.pattern(h);
            if let Some(p) = &l.pool {
                p.pattern(h);
            }
        }
        for l in &self.dec {
            l.block.pattern(h);
        }
    }

    /// Probability map of a single image.
    pub fn predict(&self, img: &GrayImage) -> Result<GrayImage> {
        let x = Tensor::from_images(&[img])?;
        Ok(self.infer(&x)?.to_image(0, 0, img.ppc()))
    }

    /// Copy of all parameters (trainable and running statistics).
    pub fn weights(&self) -> Weights {
        let mut params = Vec::new();
        self.visit_ref(&mut |p| params.push((p.name.clone(), p.shape.clone(), p.value.clone())));
        Weights {
            config: self.config.clone(),
            params,
        }
    }

    pub fn set_weights(&mut self, w: &Weights) -> Result<()> {
        if w.config != self.config {
            return Err(Error::ShapeMismatch(
                "weights belong to a different configuration".into(),
            ));
        }
        let mut i = 0;
        let mut err = None;
        self.visit(&mut |p| {
            match w.params.get(i) {
                Some((name, shape, values)) if *name == p.name && *shape == p.shape => p.value.copy_from_slice(values),
                _ => {
                    err.get_or_insert_with(|| {
                        Error::ShapeMismatch(format!("weights do not match parameter {}", p.name))
                    });
                }
            }
            i += 1;
        });
        if i != w.params.len() {
            err.get_or_insert_with(|| {
                Error::ShapeMismatch(format!("{} weight arrays for {i} parameters", w.params.len()))
            });
        }
        err.map_or(Ok(()), Err)
    }

    /// Builds the network described by `w.config` and loads `w`.
    pub fn from_weights(w: &Weights) -> Result<Self> {
        let mut net = Network::build(w.config.clone(), 0)?;
        net.set_weights(w)?;
        Ok(net)
    }
}

/// Parameter snapshot in declaration order: `(name, shape, values)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: NetConfig,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        for (name, shape, values) in &self.params {
            if shape.iter().product::<usize>() != values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: shape {shape:?} vs {} values",
                    values.len()
                )));
            }
            if name.ends_with("running_var") && values.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Format(format!("{name}: negative running variance")));
            }
        }
        Ok(())
    }
}
