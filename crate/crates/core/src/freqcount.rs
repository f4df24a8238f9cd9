//! Fourier baseline: density from the dominant spatial frequency of a
//! patch, either of the X-ray image itself or of a segmentation output.
//!
//! The patch is mean-removed, tapered, zero-padded to `n_fft` and
//! transformed. Inside a wedge around each frequency axis the strongest
//! in-band magnitude is located, refined by three-point parabolas along
//! both frequency axes, and its radius gives the density along that axis.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;

/// A wedge peak must exceed this multiple of the wedge's in-band median.
pub const NOISE_FLOOR_RATIO: f64 = 3.0;
/// ... and this fraction of the strongest peak over both axes.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taper {
    Hann,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtParams {
    pub n_fft: usize,
    /// Search band in thr/cm.
    pub band: (f64, f64),
    pub wedge_deg: f64,
    pub taper: Taper,
}

impl Default for FtParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            band: (4.0, 30.0),
            wedge_deg: 15.0,
            taper: Taper::Hann,
        }
    }
}

impl FtParams {
    fn validate(&self, patch: usize) -> Result<()> {
        if self.n_fft < patch {
            return Err(Error::InvalidParam(format!(
                "n_fft {} smaller than patch {patch}",
                self.n_fft
            )));
        }
        if !(self.band.0 > 0.0 && self.band.0 < self.band.1) {
            return Err(Error::InvalidParam(format!("bad band {:?}", self.band)));
        }
        if !(self.wedge_deg > 0.0 && self.wedge_deg < 45.0) {
            return Err(Error::InvalidParam("wedge must be in (0, 45) degrees".into()));
        }
        Ok(())
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Per-axis densities; an axis without a dominant peak is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FtEstimate {
    pub h: Option<f64>,
    pub v: Option<f64>,
}

/// Magnitude spectrum on the square of frequency bins `[-reach, reach]^2`.
struct Spectrum {
    reach: isize,
    mag: Vec<f64>,
}

impl Spectrum {
    fn at(&self, kx: isize, ky: isize) -> f64 {
        let side = 2 * self.reach + 1;
        self.mag[((ky + self.reach) * side + kx + self.reach) as usize]
    }
}

fn spectrum(patch: &GrayImage, p: &FtParams, reach: isize) -> Result<Spectrum> {
    let n = patch.width();
    let nf = p.n_fft;
    let mean = patch.data().iter().sum::<f64>() / patch.data().len() as f64;
    let win = match p.taper {
        Taper::Hann => hann(n),
        Taper::None => vec![1.0; n],
    };
    let centered: Vec<f64> = patch.data().iter().map(|v| v - mean).collect();
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy <= 1e-20 * n as f64 * n as f64 {
        return Err(Error::NoDominantFrequency);
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nf);
    // rows: only the first n rows of the padded raster are non-zero
    let mut rows = vec![Complex::new(0.0, 0.0); n * nf];
    for y in 0..n {
        let row = &mut rows[y * nf..(y + 1) * nf];
        for x in 0..n {
            row[x] = Complex::new(centered[y * n + x] * win[x] * win[y], 0.0);
        }
        fft.process(row);
    }
    let side = (2 * reach + 1) as usize;
    let mut mag = vec![0.0; side * side];
    let mut col = vec![Complex::new(0.0, 0.0); nf];
    for kx in -reach..=reach {
        let cx = kx.rem_euclid(nf as isize) as usize;
        col.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for y in 0..n {
            col[y] = rows[y * nf + cx];
        }
        fft.process(&mut col);
        for ky in -reach..=reach {
            let m = col[ky.rem_euclid(nf as isize) as usize].norm();
            mag[((ky + reach) as usize) * side + (kx + reach) as usize] = m;
        }
    }
    Ok(Spectrum { reach, mag })
}

/// Strongest spectral point of one axis wedge inside the radial band.
#[derive(Debug, Clone, Copy)]
struct WedgePeak {
    kx: isize,
    ky: isize,
    value: f64,
    median: f64,
}

fn wedge_peak(s: &Spectrum, along_x: bool, lo: f64, hi: f64, tan_w: f64) -> Option<WedgePeak> {
    let r = hi.ceil() as isize;
    let mut vals = Vec::new();
    let mut best: Option<(isize, isize, f64)> = None;
    for ky in -r..=r {
        for kx in -r..=r {
            let (a, b) = if along_x { (kx, ky) } else { (ky, kx) };
            // half-plane a > 0: the spectrum of a real patch is symmetric
            if a <= 0 || (b.abs() as f64) > a as f64 * tan_w {
                continue;
            }
            let rad = ((kx * kx + ky * ky) as f64).sqrt();
            if rad < lo || rad > hi {
                continue;
            }
            let m = s.at(kx, ky);
            vals.push(m);
            if best.is_none_or(|(_, _, v)| m > v) {
                best = Some((kx, ky, m));
            }
        }
    }
    let (kx, ky, value) = best?;
    vals.sort_by(f64::total_cmp);
    Some(WedgePeak {
        kx,
        ky,
        value,
        median: vals[vals.len() / 2],
    })
}

fn parabola_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() > 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Interpolated radial frequency (in bins) of a peak that clears the floors.
fn refine(s: &Spectrum, pk: &WedgePeak, floor: f64) -> Option<f64> {
    if !(pk.value > floor) || pk.value < NOISE_FLOOR_RATIO * pk.median {
        return None;
    }
    let (x, y) = (pk.kx, pk.ky);
    // a wedge maximum on the band edge can be the flank of an out-of-band tone
    let local_max = (-1..=1).all(|j| (-1..=1).all(|i| s.at(x + i, y + j) <= pk.value));
    if !local_max {
        return None;
    }
    let dx = parabola_offset(s.at(x - 1, y), pk.value, s.at(x + 1, y));
    let dy = parabola_offset(s.at(x, y - 1), pk.value, s.at(x, y + 1));
    Some((x as f64 + dx).hypot(y as f64 + dy))
}

/// Densities in thr/cm from the dominant frequency along the x axis (`h`)
/// and the y axis (`v`).
///
/// Fails with `NoDominantFrequency` when neither axis has a peak.
pub fn ft_density(patch: &GrayImage, p: &FtParams) -> Result<FtEstimate> {
    if patch.width() != patch.height() {
        return Err(Error::ShapeMismatch(format!(
            "patch must be square, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    p.validate(patch.width())?;
    let ppc = patch.ppc();
    let to_bin = |d: f64| d * p.n_fft as f64 / ppc;
    let (lo, hi) = (to_bin(p.band.0), to_bin(p.band.1));
    if lo < 1.0 || hi + 2.0 >= (p.n_fft / 2) as f64 {
        return Err(Error::InvalidParam("band does not fit the transform".into()));
    }
    let spec = spectrum(patch, p, hi.ceil() as isize + 1)?;
    let tan_w = p.wedge_deg.to_radians().tan();
    let px = wedge_peak(&spec, true, lo, hi, tan_w);
    let py = wedge_peak(&spec, false, lo, hi, tan_w);
    // an axis peak must also be a visible fraction of the strongest one
    let strongest = px.map_or(0.0, |k| k.value).max(py.map_or(0.0, |k| k.value));
    let floor = RELATIVE_FLOOR * strongest;
    let scale = ppc / p.n_fft as f64;
    let est = FtEstimate {
        h: px.and_then(|k| refine(&spec, &k, floor)).map(|f| f * scale),
        v: py.and_then(|k| refine(&spec, &k, floor)).map(|f| f * scale),
    };
    if est.h.is_none() && est.v.is_none() {
        return Err(Error::NoDominantFrequency);
    }
    Ok(est)
}

/// The Fourier pipeline applied to a segmentation mask or probability map.
pub fn fa_on_mask(mask: &GrayImage, p: &FtParams) -> Result<FtEstimate> {
    ft_density(mask, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine_x(cycles_per_cm: f64) -> GrayImage {
        GrayImage::from_fn(200, 200, 200.0, |x, _| {
            (2.0 * std::f64::consts::PI * cycles_per_cm * x as f64 / 200.0).cos()
        })
    }

    #[test]
    fn constant_patch_has_no_peak() {
        let img = GrayImage::filled(200, 200, 200.0, 0.4);
        assert!(matches!(
            ft_density(&img, &FtParams::default()),
            Err(Error::NoDominantFrequency)
        ));
    }

    #[test]
    fn x_cosine_is_found_on_h_axis_only() {
        let est = ft_density(&cosine_x(10.0), &FtParams::default()).unwrap();
        let h = est.h.unwrap();
        assert!((h - 10.0).abs() < 0.1, "h = {h}");
        assert_eq!(est.v, None);
    }

    #[test]
    fn rejects_non_square_and_small_nfft() {
        let img = GrayImage::filled(20, 10, 200.0, 0.0);
        assert!(ft_density(&img, &FtParams::default()).is_err());
        let img = cosine_x(10.0);
        let p = FtParams {
            n_fft: 128,
            ..FtParams::default()
        };
        assert!(matches!(ft_density(&img, &p), Err(Error::InvalidParam(_))));
    }
}
