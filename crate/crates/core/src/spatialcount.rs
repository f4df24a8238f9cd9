//! Spatial counting: thread densities and angle deviations from the
//! geometry of crossing-point centroids.
//!
//! Every centroid looks at its `m` nearest neighbors and, for each of four
//! direction bins (right, up, left, down, half-width `alpha`), keeps the
//! closest neighbor falling in the bin. Right/left distances feed the `h`
//! vector, up/down distances the `v` vector. After percentile trimming,
//! `h = ppc / mean(h)` and `v = ppc / mean(v)`.
//!
//! Naming follows the left/right vs up/down split literally: `h` is the
//! number of crossings per cm met walking horizontally, i.e. the pitch of
//! the vertically running threads. Angles use the image y axis pointing up.

use std::fmt;

use crate::crossings::CentroidSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScParams {
    pub m: usize,
    pub alpha_deg: f64,
    /// Trim percentile in [0, 50).
    pub q: f64,
    pub ppc: f64,
}

impl Default for ScParams {
    fn default() -> Self {
        Self {
            m: 9,
            alpha_deg: 25.0,
            q: 10.0,
            ppc: 200.0,
        }
    }
}

impl ScParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidParam("m must be >= 1".into()));
        }
        if !(self.alpha_deg > 0.0 && self.alpha_deg <= 45.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be in (0, 45], got {}",
                self.alpha_deg
            )));
        }
        if !(0.0..50.0).contains(&self.q) {
            return Err(Error::InvalidParam(format!("q must be in [0, 50), got {}", self.q)));
        }
        if !(self.ppc > 0.0) {
            return Err(Error::InvalidParam("ppc must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityEstimate {
    pub h_density: Option<f64>,
    pub v_density: Option<f64>,
    pub h_angle_dev: Option<f64>,
    pub v_angle_dev: Option<f64>,
    pub n_h: usize,
    pub n_v: usize,
}

impl DensityEstimate {
    pub const CSV_HEADER: [&'static str; 6] = ["h_density", "v_density", "h_angle_dev", "v_angle_dev", "n_h", "n_v"];

    pub fn csv_fields(&self) -> [String; 6] {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            f(self.h_density),
            f(self.v_density),
            f(self.h_angle_dev),
            f(self.v_angle_dev),
            self.n_h.to_string(),
            self.n_v.to_string(),
        ]
    }
}

impl fmt::Display for DensityEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.csv_fields().join(","))
    }
}

/// Distances (px) and angles (degrees, (-180, 180], y up) from each centroid
/// to its nearest neighbors, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    pub distances: Vec<Vec<f64>>,
    pub angles: Vec<Vec<f64>>,
}

/// Angle of the displacement `(dx, dy)` in image coordinates, y axis up.
pub fn screen_angle_deg(dx: f64, dy: f64) -> f64 {
    let a = (-dy).atan2(dx).to_degrees();
    if a <= -180.0 {
        a + 360.0
    } else {
        a
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r <= -180.0 {
        r += 360.0;
    } else if r > 180.0 {
        r -= 360.0;
    }
    r
}

/// Exact m-nearest-neighbor table; ties are broken by point index.
pub fn knn_table(c: &CentroidSet, m: usize) -> Result<KnnTable> {
    let pts = &c.points;
    if pts.len() < 2 {
        return Err(Error::TooFewPoints(format!(
            "need at least 2 centroids, got {}",
            pts.len()
        )));
    }
    let k = m.min(pts.len() - 1);
    let mut distances = Vec::with_capacity(pts.len());
    let mut angles = Vec::with_capacity(pts.len());
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(pts.len());
    for (i, &(x, y)) in pts.iter().enumerate() {
        cand.clear();
        cand.extend(
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &(xj, yj))| ((xj - x).hypot(yj - y), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        distances.push(cand.iter().map(|&(d, _)| d).collect());
        angles.push(
            cand.iter()
                .map(|&(_, j)| screen_angle_deg(pts[j].0 - x, pts[j].1 - y))
                .collect(),
        );
    }
    Ok(KnnTable { distances, angles })
}

/// One directional sample: the distance and the signed deviation of its
/// direction from the bin axis, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirSample {
    pub distance: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gathered {
    pub h: Vec<DirSample>,
    pub v: Vec<DirSample>,
}

/// For every centroid and each of the four direction bins, the closest
/// neighbor inside the bin (if any).
pub fn direction_gather(table: &KnnTable, alpha_deg: f64) -> Gathered {
    // bin axes: up, down feed v; right, left feed h
    const AXES: [(f64, bool); 4] = [(90.0, false), (-90.0, false), (0.0, true), (180.0, true)];
    let mut out = Gathered::default();
    for (dists, angs) in table.distances.iter().zip(&table.angles) {
        for &(axis, horizontal) in &AXES {
            let best = dists
                .iter()
                .zip(angs)
                .map(|(&d, &a)| (d, wrap_deg(a - axis)))
                .filter(|&(_, dev)| dev.abs() <= alpha_deg)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((distance, deviation)) = best {
                let s = DirSample { distance, deviation };
                if horizontal {
                    out.h.push(s);
                } else {
                    out.v.push(s);
                }
            }
        }
    }
    out
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// `[P_q, P_{100-q}]` bounds of `xs`.
pub fn trim_bounds(xs: &[f64], q: f64) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Empty("percentile trim of an empty vector".into()));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((percentile_sorted(&sorted, q), percentile_sorted(&sorted, 100.0 - q)))
}

/// Keeps the values between the q-th and (100-q)-th percentiles, in input order.
pub fn percentile_trim(xs: &[f64], q: f64) -> Result<Vec<f64>> {
    let (lo, hi) = trim_bounds(xs, q)?;
    Ok(xs.iter().copied().filter(|&x| x >= lo && x <= hi).collect())
}

fn summarize(samples: &[DirSample], q: f64, ppc: f64) -> Result<(Option<f64>, Option<f64>, usize)> {
    if samples.is_empty() {
        return Ok((None, None, 0));
    }
    let d: Vec<f64> = samples.iter().map(|s| s.distance).collect();
    let (lo, hi) = trim_bounds(&d, q)?;
    let kept: Vec<&DirSample> = samples
        .iter()
        .filter(|s| s.distance >= lo && s.distance <= hi)
        .collect();
    let n = kept.len() as f64;
    let mean_d = kept.iter().map(|s| s.distance).sum::<f64>() / n;
    let mean_dev = kept.iter().map(|s| s.deviation).sum::<f64>() / n;
    Ok((Some(ppc / mean_d), Some(mean_dev), kept.len()))
}

/// Densities (thr/cm) and mean angle deviations from a centroid set.
/// A direction with no samples is reported as missing.
pub fn estimate(c: &CentroidSet, p: &ScParams) -> Result<DensityEstimate> {
    p.validate()?;
    let table = knn_table(c, p.m)?;
    let g = direction_gather(&table, p.alpha_deg);
    let (h_density, h_angle_dev, n_h) = summarize(&g.h, p.q, p.ppc)?;
    let (v_density, v_angle_dev, n_v) = summarize(&g.v, p.q, p.ppc)?;
    Ok(DensityEstimate {
        h_density,
        v_density,
        h_angle_dev,
        v_angle_dev,
        n_h,
        n_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, sx: f64, sy: f64) -> CentroidSet {
        let mut pts = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                pts.push((10.0 + i as f64 * sx, 10.0 + j as f64 * sy));
            }
        }
        CentroidSet::new(pts, 400, 400, 200.0)
    }

    #[test]
    fn collinear_distances() {
        let c = CentroidSet::new(vec![(0.0, 0.0), (10.0, 0.0), (20.0, 0.0)], 30, 30, 200.0);
        let t = knn_table(&c, 1).unwrap();
        let d: Vec<f64> = t.distances.iter().map(|r| r[0]).collect();
        assert_eq!(d, vec![10.0, 10.0, 10.0]);
    }

    #[test]
    fn unit_square_axis_aligned() {
        let c = CentroidSet::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 2, 2, 200.0);
        let t = knn_table(&c, 2).unwrap();
        for (d, a) in t.distances.iter().zip(&t.angles) {
            assert_eq!(d, &vec![1.0, 1.0]);
            for ang in a {
                assert!([0.0, 90.0, -90.0, 180.0].contains(ang), "angle {ang}");
            }
        }
    }

    #[test]
    fn too_few_points() {
        let c = CentroidSet::new(vec![(0.0, 0.0)], 2, 2, 200.0);
        assert!(knn_table(&c, 3).is_err());
    }

    #[test]
    fn interior_point_gets_four_entries() {
        let c = grid(3, 3, 20.0, 20.0);
        let t = knn_table(&c, 9).unwrap();
        let center = KnnTable {
            distances: vec![t.distances[4].clone()],
            angles: vec![t.angles[4].clone()],
        };
        let g = direction_gather(&center, 25.0);
        assert_eq!(g.h.iter().map(|s| s.distance).collect::<Vec<_>>(), vec![20.0, 20.0]);
        assert_eq!(g.v.iter().map(|s| s.distance).collect::<Vec<_>>(), vec![20.0, 20.0]);
    }

    #[test]
    fn neighbor_at_twenty_degrees_is_horizontal() {
        let t = KnnTable {
            distances: vec![vec![5.0]],
            angles: vec![vec![20.0]],
        };
        let g = direction_gather(&t, 25.0);
        assert_eq!(g.h.len(), 1);
        assert!(g.v.is_empty());
        assert_eq!(g.h[0].deviation, 20.0);
    }

    #[test]
    fn left_bin_wraps_through_180() {
        let t = KnnTable {
            distances: vec![vec![5.0, 6.0]],
            angles: vec![vec![-170.0, 170.0]],
        };
        let g = direction_gather(&t, 25.0);
        assert_eq!(g.h.len(), 1);
        assert_eq!(g.h[0].distance, 5.0);
        assert!((g.h[0].deviation - 10.0).abs() < 1e-12);
    }

    #[test]
    fn trim_examples() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_trim(&xs, 0.0).unwrap(), xs);
        let (lo, hi) = trim_bounds(&xs, 10.0).unwrap();
        assert!((lo - 1.9).abs() < 1e-12 && (hi - 9.1).abs() < 1e-12);
        assert_eq!(
            percentile_trim(&xs, 10.0).unwrap(),
            (2..=9).map(f64::from).collect::<Vec<_>>()
        );
        assert_eq!(percentile_trim(&[3.0; 7], 25.0).unwrap(), vec![3.0; 7]);
        assert!(percentile_trim(&[], 10.0).is_err());
    }

    #[test]
    fn perfect_and_anisotropic_grids() {
        let e = estimate(&grid(10, 10, 20.0, 20.0), &ScParams::default()).unwrap();
        assert!((e.h_density.unwrap() - 10.0).abs() < 1e-12);
        assert!((e.v_density.unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(e.h_angle_dev.unwrap(), 0.0);
        assert_eq!(e.v_angle_dev.unwrap(), 0.0);
        let e = estimate(&grid(20, 8, 10.0, 25.0), &ScParams::default()).unwrap();
        assert!((e.h_density.unwrap() - 20.0).abs() < 1e-12);
        assert!((e.v_density.unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_has_missing_vertical() {
        let e = estimate(&grid(10, 1, 20.0, 20.0), &ScParams::default()).unwrap();
        assert!(e.h_density.is_some());
        assert_eq!(e.v_density, None);
        assert_eq!(e.n_v, 0);
    }
}
