//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use weavecount::crossings::CentroidSet;
use weavecount::imgproc::GrayImage;

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    let data = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
    GrayImage::new(w, h, 200.0, data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn clamped(img: &GrayImage, x: isize, y: isize) -> f64 {
    let cx = x.clamp(0, img.width() as isize - 1) as usize;
    let cy = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(cx, cy)
}

/// Direct windowed mean of `f(pixel)` with replicated borders.
fn brute_window(img: &GrayImage, w: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let s = (w / 2) as isize;
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() as isize {
        for x in 0..img.width() as isize {
            let mut sum = 0.0;
            for dy in -s..=s {
                for dx in -s..=s {
                    sum += f(clamped(img, x + dx, y + dy));
                }
            }
            out.push(sum / (w * w) as f64);
        }
    }
    out
}

pub fn brute_local_mean(img: &GrayImage, w: usize) -> Vec<f64> {
    let m = brute_window(img, w, |v| v);
    img.data().iter().zip(&m).map(|(x, m)| x - m).collect()
}

pub fn brute_local_std(img: &GrayImage, w: usize, eps: f64) -> Vec<f64> {
    let v = brute_window(img, w, |v| v * v);
    img.data().iter().zip(&v).map(|(x, v)| x / v.sqrt().max(eps)).collect()
}

/// Histogram clip by direct interval membership counts, then rescale.
pub fn brute_clip_scale(data: &[f64], gamma: f64, bins: usize) -> Vec<f64> {
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let n = data.len() as f64;
    let count = |b: usize| {
        let lo = min + b as f64 * width;
        let hi = min + (b + 1) as f64 * width;
        data.iter()
            .filter(|&&v| v >= lo && (v < hi || (b == bins - 1 && v <= max)))
            .count() as f64
    };
    let lo_bin = (0..bins).find(|&b| count(b) / n >= gamma).unwrap_or(0);
    let hi_bin = (0..bins).rev().find(|&b| count(b) / n >= gamma).unwrap_or(bins - 1);
    let lo = min + lo_bin as f64 * width;
    let hi = if hi_bin == bins - 1 {
        max
    } else {
        min + (hi_bin + 1) as f64 * width
    };
    data.iter().map(|&v| (v.clamp(lo, hi) - lo) / (hi - lo)).collect()
}

/// Perfect crossing grid at `h`, `v` thr/cm (200 ppc) rotated counter-clockwise
/// by `phi` degrees about the center of a `size` px square.
pub fn rotated_grid(h: f64, v: f64, phi: f64, size: f64) -> CentroidSet {
    let (sx, sy) = (200.0 / h, 200.0 / v);
    let c = size / 2.0;
    let (s, co) = phi.to_radians().sin_cos();
    let reach = (size * std::f64::consts::SQRT_2 / 2.0 / sx.min(sy)).ceil() as i64 + 1;
    let mut pts = Vec::new();
    for j in -reach..=reach {
        for i in -reach..=reach {
            let (u, w) = (i as f64 * sx + 0.37, j as f64 * sy - 0.21);
            let x = c + u * co + w * s;
            let y = c - u * s + w * co;
            if (0.0..size).contains(&x) && (0.0..size).contains(&y) {
                pts.push((x, y));
            }
        }
    }
    CentroidSet::new(pts, size as usize, size as usize, 200.0)
}
