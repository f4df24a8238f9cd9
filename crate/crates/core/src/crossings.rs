//! Probability map to crossing-point centroids: thresholding, 8-connected
//! component labeling, small-component rejection and centroid computation.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imgproc::{BinaryMask, GrayImage};

pub const OTSU_BINS: usize = 256;
/// Components smaller than this (pixels) are dropped at 200 ppc.
pub const DEFAULT_MIN_AREA: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    Fixed,
    Otsu,
}

impl fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdRule::Fixed => "fixed-0.5",
            ThresholdRule::Otsu => "otsu",
        })
    }
}

impl FromStr for ThresholdRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-0.5" | "fixed" => Ok(ThresholdRule::Fixed),
            "otsu" => Ok(ThresholdRule::Otsu),
            other => Err(Error::InvalidParam(format!("unknown threshold rule {other:?}"))),
        }
    }
}

/// Otsu threshold over a histogram of values in [0, 1].
///
/// Returns `None` when no split separates two non-empty classes.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Option<f64> {
    let mut hist = vec![0u64; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| (i as f64 + 0.5) * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    // split k: class 0 = bins [0, k), class 1 = bins [k, bins)
    for k in 1..bins {
        w0 += hist[k - 1] as f64;
        sum0 += (k as f64 - 0.5) * hist[k - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, k));
        }
    }
    best.filter(|&(b, _)| b > 0.0).map(|(_, k)| k as f64 / bins as f64)
}

/// Foreground where `map >= threshold`; the Otsu rule falls back to 0.5 on
/// degenerate (single-valued) maps.
pub fn binarize(map: &GrayImage, rule: ThresholdRule) -> BinaryMask {
    let t = match rule {
        ThresholdRule::Fixed => 0.5,
        ThresholdRule::Otsu => otsu_threshold(map.data(), OTSU_BINS).unwrap_or_else(|| {
            log::warn!("degenerate map for Otsu threshold, using 0.5");
            0.5
        }),
    };
    BinaryMask::from_image(map, t)
}

/// Crossing-point centroids in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub points: Vec<(f64, f64)>,
    pub width: usize,
    pub height: usize,
    pub ppc: f64,
}

impl CentroidSet {
    pub fn new(points: Vec<(f64, f64)>, width: usize, height: usize, ppc: f64) -> Self {
        Self {
            points,
            width,
            height,
            ppc,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with a `#width=..;height=..;ppc=..` comment line, then `x,y` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#width={};height={};ppc={}", self.width, self.height, self.ppc)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y"])?;
        for &(x, y) in &self.points {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::Format(e.to_string()))?;
        let header = first
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("centroid CSV must start with a #width=..;height=..;ppc=.. line".into()))?;
        let (mut width, mut height, mut ppc) = (None, None, None);
        for kv in header.split(';') {
            if let Some((k, v)) = kv.split_once('=') {
                let bad = || Error::Format(format!("bad header value {kv:?}"));
                match k.trim() {
                    "width" => width = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                    "height" => height = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                    "ppc" => ppc = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
                    _ => {}
                }
            }
        }
        let (width, height, ppc) = match (width, height, ppc) {
            (Some(w), Some(h), Some(p)) => (w, h, p),
            _ => return Err(Error::Format("centroid CSV header needs width, height and ppc".into())),
        };
        let mut r = csv::Reader::from_reader(reader);
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad centroid row {rec:?}")))
            };
            points.push((parse(0)?, parse(1)?));
        }
        Ok(Self::new(points, width, height, ppc))
    }
}

/// Component areas and centroids under 8-connectivity, in label order
/// (row-major order of each component's first pixel).
pub fn label_components(mask: &BinaryMask) -> Vec<(usize, (f64, f64))> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            n += 1;
            sx += x as f64;
            sy += y as f64;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.data()[j] != 0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push((n, (sx / n as f64, sy / n as f64)));
    }
    out
}

/// Centroids of 8-connected components with at least `min_area` pixels.
pub fn extract_centroids(mask: &BinaryMask, min_area: usize, ppc: f64) -> CentroidSet {
    let points = label_components(mask)
        .into_iter()
        .filter(|&(area, _)| area >= min_area)
        .map(|(_, c)| c)
        .collect();
    CentroidSet::new(points, mask.width(), mask.height(), ppc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_threshold_selects_high_region() {
        let map = GrayImage::from_fn(10, 4, 200.0, |x, _| if x < 5 { 0.4 } else { 0.6 });
        let m = binarize(&map, ThresholdRule::Fixed);
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(m.get(x, y), x >= 5);
            }
        }
    }

    #[test]
    fn otsu_between_modes() {
        let vals: Vec<f64> = (0..400)
            .map(|i| {
                if i % 3 == 0 {
                    0.8 + (i % 7) as f64 * 0.005
                } else {
                    0.2 - (i % 5) as f64 * 0.004
                }
            })
            .collect();
        let t = otsu_threshold(&vals, 256).unwrap();
        assert!(t > 0.2 && t < 0.8, "threshold {t}");
    }

    #[test]
    fn otsu_degenerate_falls_back() {
        let map = GrayImage::filled(8, 8, 200.0, 0.7);
        assert_eq!(otsu_threshold(map.data(), 256), None);
        assert_eq!(binarize(&map, ThresholdRule::Otsu).count_ones(), 64);
        let map = GrayImage::filled(8, 8, 200.0, 0.3);
        assert_eq!(binarize(&map, ThresholdRule::Otsu).count_ones(), 0);
    }

    #[test]
    fn block_centroid() {
        let mut m = BinaryMask::zeros(20, 20);
        for y in 10..=12 {
            for x in 10..=12 {
                m.set(x, y, true);
            }
        }
        let c = extract_centroids(&m, 4, 200.0);
        assert_eq!(c.points, vec![(11.0, 11.0)]);
    }

    #[test]
    fn diagonal_touch_is_one_component() {
        let mut m = BinaryMask::zeros(10, 10);
        for (x, y) in [(2, 2), (3, 2), (2, 3), (3, 3), (4, 4), (5, 4), (4, 5), (5, 5)] {
            m.set(x, y, true);
        }
        assert_eq!(extract_centroids(&m, 1, 200.0).len(), 1);
    }

    #[test]
    fn small_components_dropped() {
        let mut m = BinaryMask::zeros(10, 10);
        m.set(1, 1, true);
        m.set(7, 7, true);
        m.set(7, 8, true);
        assert!(extract_centroids(&m, 4, 200.0).is_empty());
        assert_eq!(extract_centroids(&m, 1, 200.0).len(), 2);
    }

    #[test]
    fn csv_roundtrip() {
        let c = CentroidSet::new(vec![(1.5, 2.0), (10.25, 3.0)], 30, 40, 200.0);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = CentroidSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }
}
