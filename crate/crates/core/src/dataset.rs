//! Labeled samples, training-view generation, painting-level splits, and a
//! synthetic plain-weave generator with ground-truth crossing points.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgproc::{
    crop, crop_mask, load_image, orient, orient_mask, rotate_about, save_image, BinaryMask, BitDepth, GrayImage,
    Orientation,
};
use crate::preprocess::{preprocess, PreprocessParams};

pub const SAMPLE_SIZE: usize = 300;
pub const VIEW_SIZE: usize = 200;
pub const VIEWS_PER_SAMPLE: usize = 10;
pub const EXAMPLES_PER_SAMPLE: usize = VIEWS_PER_SAMPLE * Orientation::ALL.len();
/// Synthetic intensities are `BASE + SCALE * (contrast * weave + ramp + noise)`,
/// which keeps the full parameter range inside [0, 1] for 16-bit storage.
const INTENSITY_BASE: f64 = 0.1;
const INTENSITY_SCALE: f64 = 0.3;
/// Radius of the crossing-point disks drawn into label masks, in pixels.
pub const CROSSING_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// A labeled crop (normally 300x300 at 200 ppc) with its crossing-point mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub source_id: String,
    pub split: Split,
}

impl LabeledSample {
    pub fn new(image: GrayImage, mask: BinaryMask, source_id: impl Into<String>) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} vs mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Self {
            image,
            mask,
            source_id: source_id.into(),
            split: Split::Train,
        })
    }
}

/// A network-sized (image, mask) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub image: GrayImage,
    pub mask: BinaryMask,
}

impl TrainingExample {
    fn from_window(sample_img: &GrayImage, sample_mask: &BinaryMask, x0: usize, y0: usize) -> Result<Self> {
        Ok(Self {
            image: crop(sample_img, x0, y0, VIEW_SIZE, VIEW_SIZE)?,
            mask: crop_mask(sample_mask, x0, y0, VIEW_SIZE, VIEW_SIZE)?,
        })
    }
}

const ANGLE_SMALL: (f64, f64) = (2.0, 7.0);
const ANGLE_LARGE: (f64, f64) = (8.0, 12.0);

fn rotated_view<R: Rng + ?Sized>(
    img: &GrayImage,
    mask: &BinaryMask,
    offset: usize,
    range: (f64, f64),
    sign: f64,
    rng: &mut R,
) -> Result<TrainingExample> {
    let angle = sign * rng.random_range(range.0..=range.1);
    // rotate the full sample about the window center so the corners of the
    // window are filled with real content
    let c = offset as f64 + (VIEW_SIZE as f64 - 1.0) / 2.0;
    let rimg = rotate_about(img, angle, c, c);
    let rmask = rotate_about(&mask.to_image(img.ppc()), angle, c, c);
    let rmask = BinaryMask::from_image(&rmask, 0.5);
    TrainingExample::from_window(&rimg, &rmask, offset, offset)
}

fn check_sample_size(img: &GrayImage) -> Result<()> {
    if img.width() != SAMPLE_SIZE || img.height() != SAMPLE_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "sample must be {SAMPLE_SIZE}x{SAMPLE_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn views_of<R: Rng + ?Sized>(img: &GrayImage, mask: &BinaryMask, rng: &mut R) -> Result<Vec<TrainingExample>> {
    check_sample_size(img)?;
    let far = SAMPLE_SIZE - VIEW_SIZE;
    let mut out = Vec::with_capacity(VIEWS_PER_SAMPLE);
    for &(x0, y0) in &[(0, 0), (far, 0), (0, far), (far, far)] {
        out.push(TrainingExample::from_window(img, mask, x0, y0)?);
    }
    out.push(rotated_view(img, mask, 50, ANGLE_SMALL, 1.0, rng)?);
    out.push(rotated_view(img, mask, 50, ANGLE_SMALL, -1.0, rng)?);
    out.push(rotated_view(img, mask, 65, ANGLE_LARGE, 1.0, rng)?);
    out.push(rotated_view(img, mask, 65, ANGLE_LARGE, -1.0, rng)?);
    out.push(rotated_view(img, mask, 65, ANGLE_SMALL, 1.0, rng)?);
    out.push(rotated_view(img, mask, 65, ANGLE_SMALL, -1.0, rng)?);
    Ok(out)
}

/// The ten 200x200 views of a 300x300 sample: four corners, four rotated
/// central windows and two more rotations of the (65:265) window.
pub fn generate_views<R: Rng + ?Sized>(sample: &LabeledSample, rng: &mut R) -> Result<Vec<TrainingExample>> {
    views_of(&sample.image, &sample.mask, rng)
}

/// `generate_views` repeated under each of the six orientations: 60 examples.
pub fn augment_full<R: Rng + ?Sized>(sample: &LabeledSample, rng: &mut R) -> Result<Vec<TrainingExample>> {
    check_sample_size(&sample.image)?;
    let mut out = Vec::with_capacity(EXAMPLES_PER_SAMPLE);
    for t in Orientation::ALL {
        let img = orient(&sample.image, t);
        let mask = orient_mask(&sample.mask, t);
        out.extend(views_of(&img, &mask, rng)?);
    }
    Ok(out)
}

/// Augments every sample `multiplicity` times (skew correction for
/// under-represented fabrics). Samples missing from the map count once.
pub fn augment_dataset<R: Rng + ?Sized>(
    samples: &[LabeledSample],
    multiplicity: &HashMap<String, usize>,
    rng: &mut R,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for s in samples {
        let times = multiplicity.get(&s.source_id).copied().unwrap_or(1);
        for _ in 0..times {
            out.extend(augment_full(s, rng)?);
        }
    }
    Ok(out)
}

/// Number of examples `augment_dataset` yields for the given per-sample multiplicities.
pub fn augmented_count(multiplicities: impl IntoIterator<Item = usize>) -> usize {
    multiplicities.into_iter().sum::<usize>() * EXAMPLES_PER_SAMPLE
}

/// Tags samples by their painting and partitions them into (train, val, test).
pub fn split_by_painting(
    samples: Vec<LabeledSample>,
    assignment: &HashMap<String, Split>,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>, Vec<LabeledSample>)> {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut s in samples {
        let split = *assignment
            .get(&s.source_id)
            .ok_or_else(|| Error::Unassigned(s.source_id.clone()))?;
        s.split = split;
        match split {
            Split::Train => train.push(s),
            Split::Val => val.push(s),
            Split::Test => test.push(s),
        }
    }
    Ok((train, val, test))
}

// ---------------------------------------------------------------------------
// Synthetic weave

#[derive(Debug, Clone, PartialEq)]
pub struct WeaveParams {
    /// Crossings per cm along the horizontal axis.
    pub h_density: f64,
    /// Crossings per cm along the vertical axis.
    pub v_density: f64,
    /// Counter-clockwise rotation of the weave, degrees.
    pub tilt_deg: f64,
    /// Per-thread position jitter as a fraction of the spacing.
    pub spacing_jitter: f64,
    /// Thread width as a fraction of the spacing.
    pub thread_width_ratio: f64,
    pub noise_sigma: f64,
    /// Additive illumination ramp amplitude across the image.
    pub illumination_gradient: f64,
    pub contrast: f64,
    pub ppc: f64,
    pub seed: u64,
}

impl Default for WeaveParams {
    fn default() -> Self {
        Self {
            h_density: 12.0,
            v_density: 12.0,
            tilt_deg: 0.0,
            spacing_jitter: 0.0,
            thread_width_ratio: 0.7,
            noise_sigma: 0.0,
            illumination_gradient: 0.0,
            contrast: 1.0,
            ppc: 200.0,
            seed: 0,
        }
    }
}

impl WeaveParams {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("h_density", self.h_density), ("v_density", self.v_density)] {
            if !(4.0..=30.0).contains(&d) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be in [4, 30] thr/cm, got {d}"
                )));
            }
        }
        if !(0.0..=0.3).contains(&self.spacing_jitter) {
            return Err(Error::InvalidParam(format!(
                "jitter must be in [0, 0.3], got {}",
                self.spacing_jitter
            )));
        }
        if !(self.thread_width_ratio > 0.0 && self.thread_width_ratio <= 1.0) {
            return Err(Error::InvalidParam("thread width ratio must be in (0, 1]".into()));
        }
        if self.tilt_deg.abs() > 45.0 {
            return Err(Error::InvalidParam("tilt must be within +/-45 degrees".into()));
        }
        if self.noise_sigma < 0.0 || !(self.ppc > 0.0) || !(self.contrast > 0.0) {
            return Err(Error::InvalidParam("noise must be >= 0, ppc and contrast > 0".into()));
        }
        Ok(())
    }

    pub fn h_spacing(&self) -> f64 {
        self.ppc / self.h_density
    }

    pub fn v_spacing(&self) -> f64 {
        self.ppc / self.v_density
    }
}

/// Generator output: the sample plus the exact crossing coordinates.
#[derive(Debug, Clone)]
pub struct SynthFabric {
    pub sample: LabeledSample,
    pub crossings: Vec<(f64, f64)>,
    /// Thread center offsets along the untilted horizontal axis.
    pub column_positions: Vec<f64>,
    /// Thread center offsets along the untilted vertical axis.
    pub row_positions: Vec<f64>,
}

fn thread_positions(rng: &mut ChaCha8Rng, spacing: f64, jitter: f64, lo: f64, hi: f64) -> Vec<f64> {
    let phase = (rng.random::<f64>() * spacing).floor();
    let first = ((lo - phase) / spacing).floor() as i64 - 1;
    let last = ((hi - phase) / spacing).ceil() as i64 + 1;
    (first..=last)
        .map(|j| {
            let offset = if jitter > 0.0 {
                rng.random_range(-0.5..=0.5) * jitter * spacing
            } else {
                0.0
            };
            phase + j as f64 * spacing + offset
        })
        .collect()
}

fn nearest_distance(positions: &[f64], first: f64, spacing: f64, v: f64) -> f64 {
    let guess = ((v - first) / spacing).round() as isize;
    let mut best = f64::INFINITY;
    for i in guess - 2..=guess + 2 {
        if i >= 0 && (i as usize) < positions.len() {
            best = best.min((positions[i as usize] - v).abs());
        }
    }
    best
}

fn raised_cosine(d: f64, half_width: f64) -> f64 {
    if d >= half_width {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos())
    }
}

/// Draws disks of `CROSSING_RADIUS` around each point.
pub fn draw_crossing_mask(points: &[(f64, f64)], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    let r = CROSSING_RADIUS;
    for &(cx, cy) in points {
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width.saturating_sub(1));
        let y1 = ((cy + r).ceil() as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r * r + 1e-9 {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Renders a `width`x`height` plain-weave-like intensity field and its
/// crossing-point labels.
///
/// Thread center lines of the vertical family are spaced `ppc / h_density`
/// apart horizontally, those of the horizontal family `ppc / v_density`
/// apart vertically, so crossings repeat at exactly those pitches.
pub fn synth_fabric_rect(p: &WeaveParams, width: usize, height: usize) -> Result<SynthFabric> {
    p.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParam("empty synthetic fabric".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let reach = ((width * width + height * height) as f64).sqrt() / 2.0 + 2.0;
    let (sx, sy) = (p.h_spacing(), p.v_spacing());
    // positions in the untilted frame, measured from the image center
    let cols = thread_positions(&mut rng, sx, p.spacing_jitter, -reach + cx, reach + cx)
        .into_iter()
        .map(|v| v - cx)
        .collect::<Vec<_>>();
    let rows = thread_positions(&mut rng, sy, p.spacing_jitter, -reach + cy, reach + cy)
        .into_iter()
        .map(|v| v - cy)
        .collect::<Vec<_>>();
    let (col_base, row_first) = (cols[0], rows[0]);
    let (s, c) = p.tilt_deg.to_radians().sin_cos();
    let hw_x = p.thread_width_ratio * sx / 2.0;
    let hw_y = p.thread_width_ratio * sy / 2.0;
    let noise = Normal::new(0.0, p.noise_sigma.max(0.0)).expect("finite sigma");

    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // untilted frame coordinates
            let u = dx * c - dy * s;
            let w = dx * s + dy * c;
            let fv = raised_cosine(nearest_distance(&cols, col_base, sx, u), hw_x);
            let fh = raised_cosine(nearest_distance(&rows, row_first, sy, w), hw_y);
            let weave = 0.5 * (fv + fh) * (1.0 + fv * fh);
            let ramp = p.illumination_gradient * (x as f64 / width as f64 + 0.5 * y as f64 / height as f64);
            let mut v = p.contrast * weave + ramp;
            if p.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            data.push(INTENSITY_BASE + INTENSITY_SCALE * v);
        }
    }
    let image = GrayImage::new(width, height, p.ppc, data)?;

    let mut crossings = Vec::new();
    for &w in &rows {
        for &u in &cols {
            // screen-space counter-clockwise rotation of (u, w)
            let px = cx + u * c + w * s;
            let py = cy - u * s + w * c;
            if px >= 0.0 && px <= (width - 1) as f64 && py >= 0.0 && py <= (height - 1) as f64 {
                crossings.push((px, py));
            }
        }
    }
    let mask = draw_crossing_mask(&crossings, width, height);
    let sample = LabeledSample::new(image, mask, format!("synth-{}", p.seed))?;
    Ok(SynthFabric {
        sample,
        crossings,
        column_positions: cols,
        row_positions: rows,
    })
}

/// Square synthetic fabric of side `size`.
pub fn synth_fabric(p: &WeaveParams, size: usize) -> Result<LabeledSample> {
    Ok(synth_fabric_rect(p, size, size)?.sample)
}

/// Canvas whose left half follows `left` and right half follows `right`,
/// split at `width / 2`.
pub fn synth_step_canvas(left: &WeaveParams, right: &WeaveParams, width: usize, height: usize) -> Result<SynthFabric> {
    let a = synth_fabric_rect(left, width, height)?;
    let b = synth_fabric_rect(right, width, height)?;
    let seam = width / 2;
    let mut img = a.sample.image.clone();
    let mut crossings: Vec<(f64, f64)> = a
        .crossings
        .iter()
        .copied()
        .filter(|&(x, _)| x < seam as f64 - 0.5)
        .collect();
    crossings.extend(b.crossings.iter().copied().filter(|&(x, _)| x >= seam as f64 - 0.5));
    for y in 0..height {
        for x in seam..width {
            img.set(x, y, b.sample.image.get(x, y));
        }
    }
    let mask = draw_crossing_mask(&crossings, width, height);
    let sample = LabeledSample::new(img, mask, format!("synth-step-{}-{}", left.seed, right.seed))?;
    Ok(SynthFabric {
        sample,
        crossings,
        column_positions: a.column_positions,
        row_positions: a.row_positions,
    })
}

/// Randomized weave parameters for synthetic training data: densities in
/// `density_range`, small tilts, mild jitter, noise and illumination ramps.
pub fn random_weave<R: Rng + ?Sized>(rng: &mut R, density_range: (f64, f64)) -> WeaveParams {
    WeaveParams {
        h_density: rng.random_range(density_range.0..=density_range.1),
        v_density: rng.random_range(density_range.0..=density_range.1),
        tilt_deg: rng.random_range(-5.0..=5.0),
        spacing_jitter: rng.random_range(0.0..=0.1),
        thread_width_ratio: rng.random_range(0.6..=0.8),
        noise_sigma: rng.random_range(0.0..=0.05),
        illumination_gradient: rng.random_range(0.0..=0.3),
        contrast: rng.random_range(0.7..=1.2),
        ppc: 200.0,
        seed: rng.random(),
    }
}

/// `count` preprocessed synthetic `size`x`size` training examples.
pub fn synth_examples(count: usize, size: usize, density_range: (f64, f64), seed: u64) -> Result<Vec<TrainingExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pp = PreprocessParams::default();
    (0..count)
        .map(|_| {
            let s = synth_fabric(&random_weave(&mut rng, density_range), size)?;
            Ok(TrainingExample {
                image: preprocess(&s.image, &pp)?,
                mask: s.mask,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// On-disk layout: <root>/manifest.csv plus one directory per sample holding
// image.pgm, mask.pgm and meta.

pub fn save_sample(dir: &Path, sample: &LabeledSample, extra: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_image(&sample.image, &dir.join("image.pgm"), BitDepth::Sixteen)?;
    save_image(
        &sample.mask.to_image(sample.image.ppc()),
        &dir.join("mask.pgm"),
        BitDepth::Eight,
    )?;
    let mut meta = format!(
        "source_id={}\nsplit={}\nppc={}\n",
        sample.source_id,
        sample.split,
        sample.image.ppc()
    );
    for (k, v) in extra {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join("meta");
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join("meta");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

pub fn load_sample(dir: &Path) -> Result<LabeledSample> {
    let meta = read_meta(dir)?;
    let ppc: f64 = meta
        .get("ppc")
        .ok_or_else(|| Error::MissingPpc(dir.join("meta")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad ppc in {}", dir.display())))?;
    let image = load_image(&dir.join("image.pgm"), Some(ppc))?;
    let mask = BinaryMask::from_image(&load_image(&dir.join("mask.pgm"), Some(ppc))?, 0.5);
    let mut s = LabeledSample::new(image, mask, meta.get("source_id").cloned().unwrap_or_default())?;
    if let Some(split) = meta.get("split") {
        s.split = split.parse()?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub source_id: String,
    pub split: Split,
}

pub fn write_manifest(root: &Path, rows: &[ManifestRow]) -> Result<()> {
    let path = root.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["sample_id", "source_id", "split"])?;
    for r in rows {
        w.write_record([r.sample_id.as_str(), r.source_id.as_str(), &r.split.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join("manifest.csv");
    let mut r = csv::Reader::from_path(&path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Format(format!("short manifest row in {}", path.display())));
        }
        rows.push(ManifestRow {
            sample_id: rec[0].to_string(),
            source_id: rec[1].to_string(),
            split: rec[2].parse()?,
        });
    }
    Ok(rows)
}

/// Loads every sample listed in `<root>/manifest.csv`.
pub fn load_dataset(root: &Path) -> Result<Vec<LabeledSample>> {
    read_manifest(root)?
        .iter()
        .map(|row| {
            let mut s = load_sample(&root.join(&row.sample_id))?;
            s.source_id = row.source_id.clone();
            s.split = row.split;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(h: f64, v: f64) -> WeaveParams {
        WeaveParams {
            h_density: h,
            v_density: v,
            ..WeaveParams::default()
        }
    }

    #[test]
    fn exact_grid_for_clean_fabric() {
        let f = synth_fabric_rect(&clean(10.0, 10.0), 200, 200).unwrap();
        let mut xs: Vec<f64> = f.crossings.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for pair in xs.windows(2) {
            assert!((pair[1] - pair[0] - 20.0).abs() < 1e-9);
        }
        assert_eq!(f.sample.image.width(), 200);
    }

    #[test]
    fn anisotropic_gaps() {
        let p = clean(23.0, 6.0);
        let f = synth_fabric_rect(&p, 300, 300).unwrap();
        let gap = |v: &[f64]| (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
        assert!((gap(&f.column_positions) - 200.0 / 23.0).abs() < 1e-9);
        assert!((gap(&f.row_positions) - 200.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_by_seed() {
        let p = WeaveParams {
            spacing_jitter: 0.1,
            noise_sigma: 0.05,
            seed: 42,
            ..clean(12.0, 9.0)
        };
        let a = synth_fabric(&p, 120).unwrap();
        let b = synth_fabric(&p, 120).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(synth_fabric(&clean(2.0, 10.0), 50).is_err());
        let p = WeaveParams {
            spacing_jitter: 0.5,
            ..clean(10.0, 10.0)
        };
        assert!(synth_fabric(&p, 50).is_err());
    }

    #[test]
    fn views_and_augmentation_counts() {
        let s = synth_fabric(&clean(14.0, 11.0), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let views = generate_views(&s, &mut rng).unwrap();
        assert_eq!(views.len(), 10);
        assert!(views.iter().all(|v| v.image.width() == 200 && v.mask.height() == 200));
        let all = augment_full(&s, &mut rng).unwrap();
        assert_eq!(all.len(), 60);
        let mut mult = HashMap::new();
        mult.insert(s.source_id.clone(), 2);
        assert_eq!(augment_dataset(&[s], &mult, &mut rng).unwrap().len(), 120);
        assert_eq!(augmented_count(std::iter::repeat_n(1, 239)), 14340);
    }

    #[test]
    fn zero_mask_stays_zero() {
        let img = GrayImage::filled(300, 300, 200.0, 0.5);
        let s = LabeledSample::new(img, BinaryMask::zeros(300, 300), "z").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for ex in generate_views(&s, &mut rng).unwrap() {
            assert_eq!(ex.mask.count_ones(), 0);
        }
    }

    #[test]
    fn wrong_sample_size() {
        let s = synth_fabric(&clean(10.0, 10.0), 250).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_views(&s, &mut rng).is_err());
    }

    #[test]
    fn split_assigns_and_rejects_unknown() {
        let mk =
            |id: &str| LabeledSample::new(GrayImage::filled(4, 4, 200.0, 0.0), BinaryMask::zeros(4, 4), id).unwrap();
        let samples = vec![mk("a"), mk("b"), mk("c"), mk("a")];
        let mut asg = HashMap::new();
        asg.insert("a".to_string(), Split::Train);
        asg.insert("b".to_string(), Split::Val);
        asg.insert("c".to_string(), Split::Test);
        let (tr, va, te) = split_by_painting(samples.clone(), &asg).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (2, 1, 1));
        assert!(va.iter().all(|s| s.split == Split::Val));
        asg.remove("c");
        match split_by_painting(samples, &asg) {
            Err(Error::Unassigned(id)) => assert_eq!(id, "c"),
            other => panic!("expected unassigned error, got {other:?}"),
        }
    }
}
