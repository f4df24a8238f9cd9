//! Whole-canvas density maps: 1 cm patches on a grid of shift `s`, one
//! estimate per patch, false-color renders and a pairing score between
//! two canvases.
//!
//! Patch `(p, q)` has its top-left corner at row `p * s`, column `q * s`.
//! Right and bottom remainders narrower than a patch are skipped.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::crossings::{binarize, extract_centroids, ThresholdRule, DEFAULT_MIN_AREA};
use crate::error::{Error, Result};
use crate::freqcount::{fa_on_mask, ft_density, FtParams};
use crate::imgproc::{crop, crop_mask, BinaryMask, GrayImage};
use crate::nn::Network;
use crate::spatialcount::{estimate, ScParams};

/// Patch side in pixels (1 cm at 200 ppc).
pub const PATCH_PX: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Segmentation, centroids, spatial counting.
    Dlsc,
    /// Segmentation, Fourier analysis of the mask.
    Dlfa,
    /// Fourier analysis of the image patch.
    Ft,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dlsc => "dlsc",
            Method::Dlfa => "dlfa",
            Method::Ft => "ft",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlsc" => Ok(Method::Dlsc),
            "dlfa" => Ok(Method::Dlfa),
            "ft" => Ok(Method::Ft),
            other => Err(Error::InvalidParam(format!("unknown method {other:?}"))),
        }
    }
}

/// Source of crossing-point probability maps for canvas windows.
pub trait Segmenter: Sync {
    /// Probability map of the `size`x`size` window at `(x0, y0)`.
    fn probability(&self, canvas: &GrayImage, x0: usize, y0: usize, size: usize) -> Result<GrayImage>;
    fn threshold_rule(&self) -> ThresholdRule;
}

impl Segmenter for Network {
    fn probability(&self, canvas: &GrayImage, x0: usize, y0: usize, size: usize) -> Result<GrayImage> {
        self.predict(&crop(canvas, x0, y0, size, size)?)
    }

    fn threshold_rule(&self) -> ThresholdRule {
        self.config().threshold_rule
    }
}

/// Ground-truth masks standing in for a network.
#[derive(Debug, Clone)]
pub struct OracleMask {
    pub mask: BinaryMask,
}

impl Segmenter for OracleMask {
    fn probability(&self, canvas: &GrayImage, x0: usize, y0: usize, size: usize) -> Result<GrayImage> {
        Ok(crop_mask(&self.mask, x0, y0, size, size)?.to_image(canvas.ppc()))
    }

    fn threshold_rule(&self) -> ThresholdRule {
        ThresholdRule::Fixed
    }
}

/// Grid of optional values, row-major; `None` marks a missing estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub rows: usize,
    pub cols: usize,
    pub shift_px: usize,
    pub patch_px: usize,
    pub cells: Vec<Option<f64>>,
}

/// `(rows, cols)` of the patch grid for a `width`x`height` canvas.
pub fn grid_dims(width: usize, height: usize, shift: usize, patch: usize) -> Result<(usize, usize)> {
    if shift == 0 {
        return Err(Error::InvalidParam("shift must be positive".into()));
    }
    if width < patch || height < patch {
        return Err(Error::InvalidParam(format!(
            "canvas {width}x{height} smaller than one {patch} px patch"
        )));
    }
    Ok(((height - patch) / shift + 1, (width - patch) / shift + 1))
}

impl DensityMap {
    pub fn new(rows: usize, cols: usize, shift_px: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            shift_px,
            patch_px: PATCH_PX,
            cells,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }

    /// Top-left pixel `(x, y)` of a cell's patch.
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (col * self.shift_px, row * self.shift_px)
    }

    /// Range of the present values.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let mut vals = self.cells.iter().flatten();
        let first = *vals.next()?;
        Some(vals.fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    pub fn flip_h(&self) -> Self {
        let mut cells = Vec::with_capacity(self.cells.len());
        for r in 0..self.rows {
            for c in (0..self.cols).rev() {
                cells.push(self.get(r, c));
            }
        }
        Self { cells, ..self.clone() }
    }

    pub fn rot180(&self) -> Self {
        let mut cells = self.cells.clone();
        cells.reverse();
        Self { cells, ..self.clone() }
    }

    /// Grid CSV: one line per row, missing cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for r in 0..self.rows {
            let rec: Vec<String> = (0..self.cols)
                .map(|c| self.get(r, c).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R, shift_px: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut cells = Vec::new();
        let mut rows = 0;
        let mut cols = None;
        for rec in r.records() {
            let rec = rec?;
            if *cols.get_or_insert(rec.len()) != rec.len() {
                return Err(Error::Format("ragged grid CSV".into()));
            }
            for field in rec.iter() {
                let field = field.trim();
                cells.push(if field.is_empty() {
                    None
                } else {
                    Some(
                        field
                            .parse()
                            .map_err(|_| Error::Format(format!("bad cell {field:?}")))?,
                    )
                });
            }
            rows += 1;
        }
        DensityMap::new(rows, cols.unwrap_or(0), shift_px, cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub method: Method,
    pub shift: usize,
    pub sc: ScParams,
    pub ft: FtParams,
    pub min_area: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            method: Method::Dlsc,
            shift: 100,
            sc: ScParams::default(),
            ft: FtParams::default(),
            min_area: DEFAULT_MIN_AREA,
        }
    }
}

/// Maps produced by one sweep. Angle maps exist for spatial counting only.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMaps {
    pub h: DensityMap,
    pub v: DensityMap,
    pub h_angle: Option<DensityMap>,
    pub v_angle: Option<DensityMap>,
}

impl SweepMaps {
    /// Writes `<stem>.h.csv`, `<stem>.v.csv` and, when present,
    /// `<stem>.hang.csv`, `<stem>.vang.csv`.
    pub fn write_csvs(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        let maps = [
            ("h", Some(&self.h)),
            ("v", Some(&self.v)),
            ("hang", self.h_angle.as_ref()),
            ("vang", self.v_angle.as_ref()),
        ];
        for (suffix, map) in maps {
            let Some(map) = map else { continue };
            let path = dir.join(format!("{stem}.{suffix}.csv"));
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            map.write_csv(std::io::BufWriter::new(f))?;
            written.push(path);
        }
        Ok(written)
    }
}

type PatchResult = [Option<f64>; 4];

fn patch_estimate(
    canvas: &GrayImage,
    x0: usize,
    y0: usize,
    p: &SweepParams,
    seg: Option<&dyn Segmenter>,
) -> Result<PatchResult> {
    match p.method {
        Method::Ft => {
            let est = ft_density(&crop(canvas, x0, y0, PATCH_PX, PATCH_PX)?, &p.ft)?;
            Ok([est.h, est.v, None, None])
        }
        Method::Dlsc | Method::Dlfa => {
            let seg = seg.ok_or_else(|| Error::InvalidParam(format!("method {} needs a segmenter", p.method)))?;
            let prob = seg.probability(canvas, x0, y0, PATCH_PX)?;
            let mask = binarize(&prob, seg.threshold_rule());
            if p.method == Method::Dlfa {
                let est = fa_on_mask(&mask.to_image(canvas.ppc()), &p.ft)?;
                return Ok([est.h, est.v, None, None]);
            }
            let centroids = extract_centroids(&mask, p.min_area, canvas.ppc());
            let est = estimate(&centroids, &p.sc)?;
            Ok([est.h_density, est.v_density, est.h_angle_dev, est.v_angle_dev])
        }
    }
}

/// Runs the configured method on every patch. Patch failures become
/// missing cells; configuration errors abort the sweep.
pub fn sweep(canvas: &GrayImage, p: &SweepParams, seg: Option<&dyn Segmenter>) -> Result<SweepMaps> {
    let (rows, cols) = grid_dims(canvas.width(), canvas.height(), p.shift, PATCH_PX)?;
    p.sc.validate()?;
    if p.method != Method::Ft && seg.is_none() {
        return Err(Error::InvalidParam(format!("method {} needs weights", p.method)));
    }
    let results: Vec<Result<PatchResult>> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            match patch_estimate(canvas, c * p.shift, r * p.shift, p, seg) {
                Ok(v) => Ok(v),
                Err(e @ (Error::InvalidParam(_) | Error::ShapeMismatch(_))) => Err(e),
                Err(e) => {
                    log::debug!("patch ({r}, {c}) missing: {e}");
                    Ok([None; 4])
                }
            }
        })
        .collect();
    let mut cells: [Vec<Option<f64>>; 4] = Default::default();
    for res in results {
        let v = res?;
        for (k, cell) in v.into_iter().enumerate() {
            cells[k].push(cell);
        }
    }
    let [h, v, ha, va] = cells;
    let mk = |cells| DensityMap::new(rows, cols, p.shift, cells);
    let with_angles = p.method == Method::Dlsc;
    Ok(SweepMaps {
        h: mk(h)?,
        v: mk(v)?,
        h_angle: if with_angles { Some(mk(ha)?) } else { None },
        v_angle: if with_angles { Some(mk(va)?) } else { None },
    })
}

// ---------------------------------------------------------------------------
// Rendering

pub const MISSING_COLOR: [u8; 3] = [255, 0, 255];
const LUT_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    Viridis,
    Jet,
    Gray,
}

impl FromStr for Palette {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viridis" => Ok(Palette::Viridis),
            "jet" => Ok(Palette::Jet),
            "gray" => Ok(Palette::Gray),
            other => Err(Error::InvalidParam(format!("unknown palette {other:?}"))),
        }
    }
}

impl fmt::Display for Palette {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Palette::Viridis => "viridis",
            Palette::Jet => "jet",
            Palette::Gray => "gray",
        })
    }
}

const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

const JET: [[u8; 3]; 9] = [
    [0, 0, 143],
    [0, 0, 255],
    [0, 127, 255],
    [0, 255, 255],
    [127, 255, 127],
    [255, 255, 0],
    [255, 127, 0],
    [255, 0, 0],
    [127, 0, 0],
];

impl Palette {
    /// Color of lookup-table entry `i` in `0..256`.
    pub fn entry(self, i: usize) -> [u8; 3] {
        let t = i.min(LUT_SIZE - 1) as f64 / (LUT_SIZE - 1) as f64;
        let stops: &[[u8; 3]] = match self {
            Palette::Gray => return [(t * 255.0).round() as u8; 3],
            Palette::Viridis => &VIRIDIS,
            Palette::Jet => &JET,
        };
        let pos = t * (stops.len() - 1) as f64;
        let k = (pos.floor() as usize).min(stops.len() - 2);
        let f = pos - k as f64;
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let a = stops[k][ch] as f64;
            let b = stops[k + 1][ch] as f64;
            out[ch] = (a + (b - a) * f).round() as u8;
        }
        out
    }

    /// Entry index of `v` over `[lo, hi]`, values outside clamped to the ends.
    pub fn index(lo: f64, hi: f64, v: f64) -> usize {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        (t * (LUT_SIZE - 1) as f64).round() as usize
    }
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.data[y * self.width + x] = c;
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.set(x, y, c);
            }
        }
    }

    fn blit(&mut self, src: &RgbRaster, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.set(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw: Vec<u8> = self.data.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub palette: Palette,
    pub range: (f64, f64),
    /// Side of one cell in output pixels.
    pub cell_px: usize,
    pub colorbar_px: usize,
    pub gap_px: usize,
}

impl RenderOptions {
    pub fn new(palette: Palette, range: (f64, f64)) -> Self {
        Self {
            palette,
            range,
            cell_px: 8,
            colorbar_px: 16,
            gap_px: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.range.0 < self.range.1) {
            return Err(Error::InvalidParam(format!(
                "render range {:?} needs lo < hi",
                self.range
            )));
        }
        if self.cell_px == 0 || self.colorbar_px == 0 {
            return Err(Error::InvalidParam("cell and colorbar sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The map body without colorbar.
fn render_cells(map: &DensityMap, o: &RenderOptions) -> RgbRaster {
    let (lo, hi) = o.range;
    let mut img = RgbRaster::new(map.cols * o.cell_px, map.rows * o.cell_px, MISSING_COLOR);
    for r in 0..map.rows {
        for c in 0..map.cols {
            let color = match map.get(r, c) {
                Some(v) => o.palette.entry(Palette::index(lo, hi, v)),
                None => MISSING_COLOR,
            };
            img.fill_rect(c * o.cell_px, r * o.cell_px, o.cell_px, o.cell_px, color);
        }
    }
    img
}

/// Vertical colorbar: top row is `hi`, bottom row `lo`.
fn colorbar(height: usize, o: &RenderOptions) -> RgbRaster {
    let mut bar = RgbRaster::new(o.colorbar_px, height, [0, 0, 0]);
    for y in 0..height {
        let t = if height > 1 {
            1.0 - y as f64 / (height - 1) as f64
        } else {
            1.0
        };
        let c = o.palette.entry((t * (LUT_SIZE - 1) as f64).round() as usize);
        bar.fill_rect(0, y, o.colorbar_px, 1, c);
    }
    bar
}

/// Row of the colorbar showing value `v` in a render of the given height.
pub fn colorbar_row(height: usize, lo: f64, hi: f64, v: f64) -> usize {
    let i = Palette::index(lo, hi, v) as f64 / (LUT_SIZE - 1) as f64;
    ((1.0 - i) * (height - 1) as f64).round() as usize
}

/// False-color map with a colorbar on the right edge.
pub fn render(map: &DensityMap, o: &RenderOptions) -> Result<RgbRaster> {
    o.validate()?;
    let body = render_cells(map, o);
    let mut out = RgbRaster::new(body.width + o.gap_px + o.colorbar_px, body.height, [255, 255, 255]);
    out.blit(&body, 0, 0);
    out.blit(&colorbar(body.height, o), body.width + o.gap_px, 0);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pairing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipH,
    Rot180,
}

impl Transform {
    pub fn apply(self, map: &DensityMap) -> DensityMap {
        match self {
            Transform::Identity => map.clone(),
            Transform::FlipH => map.flip_h(),
            Transform::Rot180 => map.rot180(),
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Transform::Identity),
            "flip_h" | "flip-h" => Ok(Transform::FlipH),
            "rot180" => Ok(Transform::Rot180),
            other => Err(Error::InvalidParam(format!("unknown transform {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Compare per-row means, lag in rows.
    Rows,
    /// Compare per-column means, lag in columns.
    Cols,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rows" => Ok(Axis::Rows),
            "cols" => Ok(Axis::Cols),
            other => Err(Error::InvalidParam(format!("unknown axis {other:?}"))),
        }
    }
}

pub const MAX_LAG: isize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PairReport {
    /// `b` profile index minus `a` profile index at the best alignment.
    pub lag: isize,
    pub correlation: f64,
    /// `(lag, correlation)` for every lag with enough overlap.
    pub scores: Vec<(isize, f64)>,
    pub profile_a: Vec<Option<f64>>,
    pub profile_b: Vec<Option<f64>>,
}

/// Mean of the present cells of every row (or column).
pub fn profile(map: &DensityMap, axis: Axis) -> Vec<Option<f64>> {
    let (outer, inner) = match axis {
        Axis::Rows => (map.rows, map.cols),
        Axis::Cols => (map.cols, map.rows),
    };
    (0..outer)
        .map(|i| {
            let vals: Vec<f64> = (0..inner)
                .filter_map(|j| match axis {
                    Axis::Rows => map.get(i, j),
                    Axis::Cols => map.get(j, i),
                })
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    let den = (saa * sbb).sqrt();
    (den > 0.0).then(|| sab / den)
}

/// Best normalized cross-correlation of the row (or column) mean profiles
/// of `a` and `t(b)` over lags within `MAX_LAG`. A lag needs an overlap of
/// at least half the shorter profile (and three points).
pub fn pair_compare(a: &DensityMap, b: &DensityMap, t: Transform, axis: Axis) -> Result<PairReport> {
    if a.shift_px != b.shift_px {
        return Err(Error::InvalidParam(format!(
            "maps have different pitch ({} vs {} px)",
            a.shift_px, b.shift_px
        )));
    }
    let bt = t.apply(b);
    let pa = profile(a, axis);
    let pb = profile(&bt, axis);
    let min_overlap = (pa.len().min(pb.len()) / 2).max(3);
    let mut scores = Vec::new();
    for lag in -MAX_LAG..=MAX_LAG {
        let pairs: Vec<(f64, f64)> = (0..pa.len() as isize)
            .filter_map(|i| {
                let j = i + lag;
                if j < 0 || j >= pb.len() as isize {
                    return None;
                }
                Some((pa[i as usize]?, pb[j as usize]?))
            })
            .collect();
        if pairs.len() < min_overlap {
            continue;
        }
        if let Some(r) = pearson(&pairs) {
            scores.push((lag, r));
        }
    }
    let &(lag, correlation) = scores
        .iter()
        .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.abs().cmp(&x.0.abs())))
        .ok_or_else(|| Error::Empty("maps have no overlapping extent".into()))?;
    Ok(PairReport {
        lag,
        correlation,
        scores,
        profile_a: pa,
        profile_b: pb,
    })
}

/// `a` and `t(b)` side by side, separated by a dashed vertical line, with
/// one shared colorbar.
pub fn render_pair(a: &DensityMap, b: &DensityMap, t: Transform, o: &RenderOptions) -> Result<RgbRaster> {
    o.validate()?;
    let left = render_cells(a, o);
    let right = render_cells(&t.apply(b), o);
    let sep = 2 * o.gap_px + 1;
    let height = left.height.max(right.height);
    let width = left.width + sep + right.width + o.gap_px + o.colorbar_px;
    let mut out = RgbRaster::new(width, height, [255, 255, 255]);
    out.blit(&left, 0, 0);
    let line_x = left.width + o.gap_px;
    for y in 0..height {
        if (y / 4) % 2 == 0 {
            out.set(line_x, y, [0, 0, 0]);
        }
    }
    out.blit(&right, left.width + sep, 0);
    out.blit(&colorbar(height, o), left.width + sep + right.width + o.gap_px, 0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Option<f64>) -> DensityMap {
        let cells = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        DensityMap::new(rows, cols, 100, cells).unwrap()
    }

    #[test]
    fn grid_formula() {
        assert_eq!(grid_dims(400, 400, 100, 200).unwrap(), (3, 3));
        assert_eq!(grid_dims(450, 399, 100, 200).unwrap(), (2, 3));
        assert_eq!(grid_dims(200, 200, 7, 200).unwrap(), (1, 1));
        assert!(grid_dims(199, 400, 100, 200).is_err());
    }

    #[test]
    fn flips_are_involutions() {
        let m = map(3, 4, |r, c| Some((r * 4 + c) as f64));
        assert_eq!(m.flip_h().flip_h(), m);
        assert_eq!(m.rot180().rot180(), m);
        assert_eq!(m.flip_h().get(0, 0), Some(3.0));
        assert_eq!(m.rot180().get(0, 0), Some(11.0));
    }

    #[test]
    fn csv_roundtrip_keeps_missing() {
        let m = map(2, 3, |r, c| {
            if (r, c) == (1, 1) {
                None
            } else {
                Some(r as f64 + c as f64 * 0.5)
            }
        });
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().nth(1).unwrap(), "1,,2");
        assert_eq!(DensityMap::read_csv(buf.as_slice(), 100).unwrap(), m);
    }

    #[test]
    fn render_inclusive_clamp_and_missing() {
        let m = map(1, 3, |_, c| [Some(25.0), None, Some(5.0)][c]);
        let o = RenderOptions::new(Palette::Viridis, (5.0, 25.0));
        let img = render(&m, &o).unwrap();
        assert_eq!(img.get(0, 0), Palette::Viridis.entry(255));
        assert_eq!(img.get(8, 0), MISSING_COLOR);
        assert_eq!(img.get(16, 0), Palette::Viridis.entry(0));
        assert_eq!(img.width, 24 + 4 + 16);
        assert!(render(&m, &RenderOptions::new(Palette::Jet, (3.0, 3.0))).is_err());
    }

    #[test]
    fn palettes_avoid_sentinel() {
        for p in [Palette::Viridis, Palette::Jet, Palette::Gray] {
            assert!((0..256).all(|i| p.entry(i) != MISSING_COLOR));
        }
    }

    #[test]
    fn pearson_of_affine_copy_is_one() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        assert!((pearson(&pairs).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[(1.0, 2.0), (1.0, 3.0)]), None);
    }
}
