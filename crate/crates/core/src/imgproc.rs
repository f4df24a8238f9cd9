//! Grayscale raster container and the geometric primitives shared by the pipeline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Real-valued single-channel raster with a physical resolution.
///
/// Pixels are stored row-major; `(x, y)` addresses column `x` of row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    ppc: f64,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, ppc: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        if !(ppc > 0.0) || !ppc.is_finite() {
            return Err(Error::InvalidParam(format!("ppc must be > 0, got {ppc}")));
        }
        Ok(Self {
            width,
            height,
            ppc,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, ppc: f64, value: f64) -> Self {
        Self::new(width, height, ppc, vec![value; width * height]).expect("valid ppc")
    }

    pub fn from_fn(width: usize, height: usize, ppc: f64, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, ppc, data).expect("valid ppc")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ppc(&self) -> f64 {
        self.ppc
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel value with coordinates clamped into the raster (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn with_data(&self, data: Vec<f64>) -> Self {
        Self::new(self.width, self.height, self.ppc, data).expect("same geometry")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Bilinear sample at real coordinates with edge replication outside the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let v00 = self.get_clamped(xi, yi);
        if fx == 0.0 && fy == 0.0 {
            return v00;
        }
        let v10 = self.get_clamped(xi + 1, yi);
        let v01 = self.get_clamped(xi, yi + 1);
        let v11 = self.get_clamped(xi + 1, yi + 1);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        top + (bottom - top) * fy
    }
}

/// Binary raster, 1 marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} mask pixels for {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParam("mask values must be 0 or 1".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Pixels with value >= `threshold` become foreground.
    pub fn from_image(img: &GrayImage, threshold: f64) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.data().iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }

    pub fn to_image(&self, ppc: f64) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            ppc,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("valid geometry")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// The six dihedral orientations used for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Identity,
    FlipLr,
    FlipUd,
    Rot90,
    Rot90FlipLr,
    Rot90FlipUd,
}

impl Orientation {
    pub const ALL: [Orientation; 6] = [
        Orientation::Identity,
        Orientation::FlipLr,
        Orientation::FlipUd,
        Orientation::Rot90,
        Orientation::Rot90FlipLr,
        Orientation::Rot90FlipUd,
    ];

    /// Source pixel `(x, y)` in a `w`x`h` input for output pixel `(ox, oy)`.
    #[inline]
    fn source(self, ox: usize, oy: usize, w: usize, h: usize) -> (usize, usize) {
        // rot90 output is h wide and w tall: out[i][j] = in[h-1-j][i]
        let rot = |ox: usize, oy: usize| (oy, h - 1 - ox);
        match self {
            Orientation::Identity => (ox, oy),
            Orientation::FlipLr => (w - 1 - ox, oy),
            Orientation::FlipUd => (ox, h - 1 - oy),
            Orientation::Rot90 => rot(ox, oy),
            Orientation::Rot90FlipLr => rot(h - 1 - ox, oy),
            Orientation::Rot90FlipUd => rot(ox, w - 1 - oy),
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(
            self,
            Orientation::Rot90 | Orientation::Rot90FlipLr | Orientation::Rot90FlipUd
        )
    }

    /// Output dimensions for a `w`x`h` input.
    pub fn output_dims(self, w: usize, h: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (h, w)
        } else {
            (w, h)
        }
    }

    /// Image of the rectangle `(x0, y0, w, h)` of a `img_w`x`img_h` raster.
    pub fn map_rect(
        self,
        (x0, y0, w, h): (usize, usize, usize, usize),
        img_w: usize,
        img_h: usize,
    ) -> (usize, usize, usize, usize) {
        let (ow, oh) = self.output_dims(img_w, img_h);
        let (rw, rh) = self.output_dims(w, h);
        // find the output-space corner whose source is a corner of the rect
        let mut best = (usize::MAX, usize::MAX);
        for &(cx, cy) in &[(x0, y0), (x0 + w - 1, y0), (x0, y0 + h - 1), (x0 + w - 1, y0 + h - 1)] {
            let (ox, oy) = self.forward_point(cx, cy, img_w, img_h);
            debug_assert!(ox < ow && oy < oh);
            best = (best.0.min(ox), best.1.min(oy));
        }
        (best.0, best.1, rw, rh)
    }

    fn forward_point(self, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
        match self {
            Orientation::Identity => (x, y),
            Orientation::FlipLr => (w - 1 - x, y),
            Orientation::FlipUd => (x, h - 1 - y),
            Orientation::Rot90 => (h - 1 - y, x),
            Orientation::Rot90FlipLr => (y, x),
            Orientation::Rot90FlipUd => (h - 1 - y, w - 1 - x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Orientation::Identity => "identity",
            Orientation::FlipLr => "flip_lr",
            Orientation::FlipUd => "flip_ud",
            Orientation::Rot90 => "rot90",
            Orientation::Rot90FlipLr => "rot90+flip_lr",
            Orientation::Rot90FlipUd => "rot90+flip_ud",
        }
    }
}

fn permute<T: Copy>(src: &[T], w: usize, h: usize, t: Orientation) -> (usize, usize, Vec<T>) {
    let (ow, oh) = t.output_dims(w, h);
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let (sx, sy) = t.source(ox, oy, w, h);
            out.push(src[sy * w + sx]);
        }
    }
    (ow, oh, out)
}

/// Exact pixel permutation by one of the dihedral orientations.
///
/// `Rot90` maps `[[a, b], [c, d]]` to `[[c, a], [d, b]]` (counter-clockwise with
/// the row axis pointing up).
pub fn orient(img: &GrayImage, t: Orientation) -> GrayImage {
    let (ow, oh, data) = permute(img.data(), img.width(), img.height(), t);
    GrayImage::new(ow, oh, img.ppc(), data).expect("valid geometry")
}

pub fn orient_mask(mask: &BinaryMask, t: Orientation) -> BinaryMask {
    let (ow, oh, data) = permute(mask.data(), mask.width(), mask.height(), t);
    BinaryMask::new(ow, oh, data).expect("valid geometry")
}

pub fn crop(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
    check_rect(img.width(), img.height(), x0, y0, w, h)?;
    let mut data = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        let row = &img.data()[y * img.width() + x0..y * img.width() + x0 + w];
        data.extend_from_slice(row);
    }
    GrayImage::new(w, h, img.ppc(), data)
}

pub fn crop_mask(mask: &BinaryMask, x0: usize, y0: usize, w: usize, h: usize) -> Result<BinaryMask> {
    check_rect(mask.width(), mask.height(), x0, y0, w, h)?;
    let mut data = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        data.extend_from_slice(&mask.data()[y * mask.width() + x0..y * mask.width() + x0 + w]);
    }
    BinaryMask::new(w, h, data)
}

fn check_rect(iw: usize, ih: usize, x0: usize, y0: usize, w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || x0 + w > iw || y0 + h > ih {
        return Err(Error::OutOfBounds(format!("({x0}, {y0}, {w}x{h}) inside {iw}x{ih}")));
    }
    Ok(())
}

/// Bilinear resampling to a new resolution; dimensions scale by `target_ppc / ppc`.
pub fn resample(img: &GrayImage, target_ppc: f64) -> Result<GrayImage> {
    if !(target_ppc > 0.0) || !target_ppc.is_finite() {
        return Err(Error::InvalidParam(format!("target ppc must be > 0, got {target_ppc}")));
    }
    let scale = target_ppc / img.ppc();
    let ow = (img.width() as f64 * scale).round() as usize;
    let oh = (img.height() as f64 * scale).round() as usize;
    if ow == 0 || oh == 0 {
        return Err(Error::InvalidParam(format!(
            "resampling {}x{} to {target_ppc} ppc gives an empty image",
            img.width(),
            img.height()
        )));
    }
    if ow == img.width() && oh == img.height() {
        return GrayImage::new(ow, oh, target_ppc, img.data().to_vec());
    }
    let sx = img.width() as f64 / ow as f64;
    let sy = img.height() as f64 / oh as f64;
    let out = GrayImage::from_fn(ow, oh, target_ppc, |x, y| {
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        img.sample_bilinear(src_x, src_y)
    });
    Ok(out)
}

/// Rotation about the image center, positive angles counter-clockwise on screen.
pub fn rotate(img: &GrayImage, angle_deg: f64) -> GrayImage {
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    rotate_about(img, angle_deg, cx, cy)
}

/// Rotation about `(cx, cy)` with bilinear sampling and edge replication.
pub fn rotate_about(img: &GrayImage, angle_deg: f64, cx: f64, cy: f64) -> GrayImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    GrayImage::from_fn(img.width(), img.height(), img.ppc(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let src_x = cx + dx * c - dy * s;
        let src_y = cy + dx * s + dy * c;
        img.sample_bilinear(src_x, src_y)
    })
}

// ---------------------------------------------------------------------------
// File I/O

/// Sidecar metadata path: `<image>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Reads `ppc=<real>` from a sidecar file.
pub fn read_sidecar_ppc(path: &Path) -> Result<Option<f64>> {
    let meta = sidecar_path(path);
    if !meta.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    parse_ppc(&text).map_err(|m| Error::Format(format!("{}: {m}", meta.display())))
}

pub(crate) fn parse_ppc(text: &str) -> std::result::Result<Option<f64>, String> {
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "ppc" {
                let ppc: f64 = v.trim().parse().map_err(|_| format!("bad ppc value {v:?}"))?;
                return Ok(Some(ppc));
            }
        }
    }
    Ok(None)
}

/// Loads an 8- or 16-bit grayscale PGM or PNG, scaling values to [0, 1].
///
/// The resolution comes from `ppc` when given, otherwise from the `<image>.meta` sidecar.
pub fn load_image(path: &Path, ppc: Option<f64>) -> Result<GrayImage> {
    let ppc = match ppc {
        Some(p) => p,
        None => read_sidecar_ppc(path)?.ok_or_else(|| Error::MissingPpc(path.to_path_buf()))?,
    };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        other => {
            return Err(Error::MultiChannel(format!(
                "{} has color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, ppc, data)
}

/// Bit depth for saved rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Saves values clamped to [0, 1] as PGM (`.pgm`) or PNG (anything else).
pub fn save_image(img: &GrayImage, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let is_pgm = path.extension().map(|e| e.eq_ignore_ascii_case("pgm")).unwrap_or(false);
    match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            if is_pgm {
                write_pgm(path, w, h, 255, &raw)
            } else {
                image::GrayImage::from_raw(w as u32, h as u32, raw)
                    .expect("buffer size")
                    .save(path)
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
            }
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect();
            if is_pgm {
                let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_be_bytes()).collect();
                write_pgm(path, w, h, 65535, &bytes)
            } else {
                image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, raw)
                    .expect("buffer size")
                    .save(path)
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
            }
        }
    }
}

fn write_pgm(path: &Path, w: usize, h: usize, maxval: u32, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P5\n{w} {h}\n{maxval}\n").map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_sidecar(path: &Path, ppc: f64) -> Result<()> {
    let meta = sidecar_path(path);
    fs::write(&meta, format!("ppc={ppc}\n")).map_err(|e| Error::io(&meta, e))
}
