use crate::error::{Error, Result};
use crate::imgproc::GrayImage;

/// Batch of feature maps in NHWC layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape ({n}, {h}, {w}, {c})",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.h, self.w, self.c)
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn idx(&self, b: usize, y: usize, x: usize, ch: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.idx(b, y, x, ch)]
    }

    /// Single-channel batch from equally sized images.
    pub fn from_images(images: &[&GrayImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("no images for a batch".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(images.len() * w * h);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(Error::ShapeMismatch(format!(
                    "batch mixes {}x{} with {w}x{h}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Tensor::from_vec(images.len(), h, w, 1, data)
    }

    /// Channel `ch` of batch item `b` as an image.
    pub fn to_image(&self, b: usize, ch: usize, ppc: f64) -> GrayImage {
        let mut data = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                data.push(self.at(b, y, x, ch));
            }
        }
        GrayImage::new(self.w, self.h, ppc, data).expect("valid geometry")
    }

    /// Values of batch item `b`.
    pub fn item(&self, b: usize) -> &[f64] {
        let len = self.h * self.w * self.c;
        &self.data[b * len..(b + 1) * len]
    }
}

/// Channel-wise concatenation `[a | b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(Error::ShapeMismatch(format!(
            "concat of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let c = a.c + b.c;
    let mut data = Vec::with_capacity(a.n * a.h * a.w * c);
    for (pa, pb) in a.data.chunks_exact(a.c).zip(b.data.chunks_exact(b.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::from_vec(a.n, a.h, a.w, c, data)
}

/// Concatenation of several tensors along channels.
pub fn concat_many(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
    let mut out = first.clone();
    for p in &parts[1..] {
        out = concat_channels(&out, p)?;
    }
    Ok(out)
}

/// Splits channels into consecutive groups of the given widths.
pub fn split_channels(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    debug_assert_eq!(widths.iter().sum::<usize>(), t.c);
    let mut outs: Vec<Tensor> = widths
        .iter()
        .map(|&c| Tensor {
            n: t.n,
            h: t.h,
            w: t.w,
            c,
            data: Vec::with_capacity(t.n * t.h * t.w * c),
        })
        .collect();
    for px in t.data.chunks_exact(t.c) {
        let mut off = 0;
        for (o, &c) in outs.iter_mut().zip(widths) {
            o.data.extend_from_slice(&px[off..off + c]);
            off += c;
        }
    }
    outs
}

pub(crate) fn add_assign(a: &mut Tensor, b: &Tensor) {
    debug_assert!(a.same_shape(b));
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
}

/// A named parameter array. Non-trainable entries hold running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>, trainable: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = if trainable { vec![0.0; value.len()] } else { Vec::new() };
        Self {
            name: name.into(),
            shape,
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
