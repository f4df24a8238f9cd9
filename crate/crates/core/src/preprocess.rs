//! Three-stage enhancement applied to X-ray plates before segmentation:
//! local mean removal, local standard-deviation normalization, and
//! histogram-based clipping followed by a rescale to [0, 1].
//!
//! Both windowed stages use edge-replicated padding so the output keeps the
//! input geometry. Window sums come from a summed-area table.

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    /// Window side in pixels, odd.
    pub w: usize,
    pub epsilon: f64,
    /// Per-bin probability below which extreme bins are clipped.
    pub gamma: f64,
    pub bins: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            w: 13,
            epsilon: 1e-6,
            gamma: 1e-3,
            bins: 256,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if self.w < 3 || self.w.is_multiple_of(2) {
            return Err(Error::InvalidParam(format!(
                "window must be odd and >= 3, got {}",
                self.w
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam("epsilon must be > 0".into()));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::InvalidParam(format!(
                "gamma must be in [0, 0.5), got {}",
                self.gamma
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidParam("bins must be >= 2".into()));
        }
        Ok(())
    }
}

fn check_window(img: &GrayImage, w: usize) -> Result<()> {
    if w.is_multiple_of(2) || w == 0 {
        return Err(Error::InvalidParam(format!("window must be odd, got {w}")));
    }
    if w > img.width().min(img.height()) {
        return Err(Error::InvalidParam(format!(
            "window {w} larger than image {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Mean over the `w`x`w` window centered at every pixel, borders replicated.
pub(crate) fn window_mean(img: &GrayImage, w: usize) -> Vec<f64> {
    let s = w / 2;
    let (iw, ih) = (img.width(), img.height());
    let pw = iw + 2 * s;
    let ph = ih + 2 * s;
    // summed-area table over the padded image, one extra zero row/col
    let stride = pw + 1;
    // offsetting by one pixel value keeps sums small and constant input exact
    let offset = img.data()[0];
    let mut sat = vec![0.0; (ph + 1) * stride];
    for py in 0..ph {
        let mut row_sum = 0.0;
        let sy = py as isize - s as isize;
        for px in 0..pw {
            let sx = px as isize - s as isize;
            row_sum += img.get_clamped(sx, sy) - offset;
            sat[(py + 1) * stride + px + 1] = sat[py * stride + px + 1] + row_sum;
        }
    }
    let area = (w * w) as f64;
    let mut out = Vec::with_capacity(iw * ih);
    for y in 0..ih {
        for x in 0..iw {
            // padded window spans [x, x + w) x [y, y + w)
            let a = sat[y * stride + x];
            let b = sat[y * stride + x + w];
            let c = sat[(y + w) * stride + x];
            let d = sat[(y + w) * stride + x + w];
            out.push(offset + (d - b - c + a) / area);
        }
    }
    out
}

/// `Y = X - local mean` over a `w`x`w` window.
pub fn local_mean_filter(img: &GrayImage, w: usize) -> Result<GrayImage> {
    check_window(img, w)?;
    let mean = window_mean(img, w);
    Ok(img.with_data(img.data().iter().zip(&mean).map(|(&x, &m)| x - m).collect()))
}

/// `Z = Y / max(sigma, eps)` where `sigma^2` is the windowed mean of `Y^2`.
pub fn local_std_normalize(img: &GrayImage, w: usize, epsilon: f64) -> Result<GrayImage> {
    check_window(img, w)?;
    let sq = img.map(|v| v * v);
    let var = window_mean(&sq, w);
    Ok(img.with_data(
        img.data()
            .iter()
            .zip(&var)
            .map(|(&y, &v)| y / v.max(0.0).sqrt().max(epsilon))
            .collect(),
    ))
}

/// Clip bounds from the inward histogram scan: the lower bound is the lower
/// edge of the first bin (from the bottom) holding at least `gamma` of the
/// pixels, the upper bound the upper edge of the first such bin from the top.
pub fn clip_bounds(img: &GrayImage, gamma: f64, bins: usize) -> Result<(f64, f64)> {
    if bins < 2 {
        return Err(Error::InvalidParam("bins must be >= 2".into()));
    }
    let (min, max) = img.min_max();
    if !(max > min) {
        return Err(Error::NoDynamicRange);
    }
    let width = (max - min) / bins as f64;
    let mut hist = vec![0usize; bins];
    for &v in img.data() {
        let b = (((v - min) / width) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let n = img.data().len() as f64;
    let lo_bin = hist.iter().position(|&c| c as f64 / n >= gamma).unwrap_or(0);
    let hi_bin = hist.iter().rposition(|&c| c as f64 / n >= gamma).unwrap_or(bins - 1);
    let lo = min + lo_bin as f64 * width;
    let hi = if hi_bin == bins - 1 {
        max
    } else {
        min + (hi_bin + 1) as f64 * width
    };
    if !(hi > lo) {
        return Err(Error::NoDynamicRange);
    }
    Ok((lo, hi))
}

/// Clips to the histogram bounds and maps `[lo, hi]` onto `[0, 1]`.
pub fn clip_scale(img: &GrayImage, gamma: f64, bins: usize) -> Result<GrayImage> {
    let (lo, hi) = clip_bounds(img, gamma, bins)?;
    let span = hi - lo;
    Ok(img.map(|v| (v.clamp(lo, hi) - lo) / span))
}

pub fn preprocess(img: &GrayImage, p: &PreprocessParams) -> Result<GrayImage> {
    p.validate()?;
    let y = local_mean_filter(img, p.w)?;
    let z = local_std_normalize(&y, p.w, p.epsilon)?;
    clip_scale(&z, p.gamma, p.bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_mean_filter_is_zero() {
        let img = GrayImage::filled(20, 20, 200.0, 0.7);
        let y = local_mean_filter(&img, 5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn impulse_center() {
        let mut img = GrayImage::filled(9, 9, 200.0, 0.0);
        img.set(4, 4, 1.0);
        let y = local_mean_filter(&img, 3).unwrap();
        assert!((y.get(4, 4) - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn bad_windows() {
        let img = GrayImage::filled(10, 10, 200.0, 0.0);
        assert!(local_mean_filter(&img, 4).is_err());
        assert!(local_mean_filter(&img, 11).is_err());
    }

    #[test]
    fn zero_input_std_normalize() {
        let img = GrayImage::filled(10, 10, 200.0, 0.0);
        let z = local_std_normalize(&img, 3, 1e-6).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_normalizes_to_sign() {
        // a 4x4 window is not odd, so use w=3 on a +/-c board: the 3x3 window
        // always holds squares of magnitude c, so sigma = c everywhere
        let c = 2.5;
        let img = GrayImage::from_fn(16, 16, 200.0, |x, y| if (x + y) % 2 == 0 { c } else { -c });
        let z = local_std_normalize(&img, 3, 1e-6).unwrap();
        for y in 1..15 {
            for x in 1..15 {
                let expect = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                assert!((z.get(x, y) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_scale_without_clipping_is_min_max() {
        let img = GrayImage::from_fn(16, 16, 200.0, |x, _| x as f64 / 15.0);
        let out = clip_scale(&img, 1e-3, 256).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_scale_outlier() {
        let mut data = vec![0.5; 1000];
        data.push(100.0);
        let img = GrayImage::new(1001, 1, 200.0, data).unwrap();
        let (lo, hi) = clip_bounds(&img, 1e-3, 256).unwrap();
        // the outlier sits alone in the top bin at probability 1/1001 < 1e-3
        assert_eq!(lo, 0.5);
        assert!(hi < 100.0 - 99.5 / 256.0);
        let out = clip_scale(&img, 1e-3, 256).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.data()[1000], 1.0);
    }

    #[test]
    fn constant_image_has_no_range() {
        let img = GrayImage::filled(24, 24, 200.0, 0.3);
        assert!(matches!(clip_scale(&img, 1e-3, 256), Err(Error::NoDynamicRange)));
        assert!(matches!(
            preprocess(&img, &PreprocessParams::default()),
            Err(Error::NoDynamicRange)
        ));
    }
}
