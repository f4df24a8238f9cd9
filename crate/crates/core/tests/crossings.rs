use proptest::prelude::*;

use weavecount::crossings::{
    binarize, extract_centroids, label_components, otsu_threshold, CentroidSet, ThresholdRule,
};
use weavecount::imgproc::{BinaryMask, GrayImage};

/// Union-find labeling over 8-neighbours, independent of the flood fill.
fn union_find_components(mask: &BinaryMask) -> Vec<(usize, (f64, f64))> {
    let (w, h) = (mask.width(), mask.height());
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for (dx, dy) in [(-1i64, -1i64), (0, -1), (1, -1), (-1, 0)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < w as i64 && mask.get(nx as usize, ny as usize) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut acc: std::collections::BTreeMap<usize, (usize, f64, f64, usize)> = Default::default();
    for i in 0..w * h {
        if mask.data()[i] != 0 {
            let r = find(&mut parent, i);
            let e = acc.entry(r).or_insert((0, 0.0, 0.0, i));
            e.0 += 1;
            e.1 += (i % w) as f64;
            e.2 += (i / w) as f64;
        }
    }
    let mut out: Vec<_> = acc.into_values().collect();
    out.sort_by_key(|e| e.3);
    out.into_iter()
        .map(|(n, sx, sy, _)| (n, (sx / n as f64, sy / n as f64)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labeling_matches_union_find(w in 1usize..24, h in 1usize..24, bits in prop::collection::vec(0u8..3, 576)) {
        let data: Vec<u8> = bits[..w * h].iter().map(|&b| (b == 0) as u8).collect();
        let mask = BinaryMask::new(w, h, data).unwrap();
        let mine = label_components(&mask);
        let oracle = union_find_components(&mask);
        prop_assert_eq!(mine.len(), oracle.len());
        for (a, b) in mine.iter().zip(&oracle) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 .0 - b.1 .0).abs() < 1e-12 && (a.1 .1 - b.1 .1).abs() < 1e-12);
        }
        let total: usize = mine.iter().map(|c| c.0).sum();
        prop_assert_eq!(total, mask.count_ones());
    }

    #[test]
    fn centroid_csv_roundtrip(pts in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0), 0..50)) {
        let c = CentroidSet::new(pts, 500, 400, 200.0);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        prop_assert_eq!(CentroidSet::read_csv(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn otsu_maximizes_between_class_variance(vals in prop::collection::vec(0.0f64..1.0, 2..200)) {
        let bins = 32;
        let hist = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
        let score = |k: usize| {
            let (a, b): (Vec<f64>, Vec<f64>) = vals.iter().map(|&v| hist(v) as f64 + 0.5).partition(|&c| c < k as f64);
            if a.is_empty() || b.is_empty() {
                return 0.0;
            }
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            a.len() as f64 * b.len() as f64 * (ma - mb).powi(2)
        };
        let best = (1..bins).map(score).fold(0.0, f64::max);
        match otsu_threshold(&vals, bins) {
            Some(t) => prop_assert!((score((t * bins as f64).round() as usize) - best).abs() <= 1e-9 * best.max(1.0)),
            None => prop_assert!(best == 0.0),
        }
    }
}

#[test]
fn disks_give_their_centers() {
    let mut mask = BinaryMask::zeros(60, 40);
    for &(cx, cy) in &[(10i64, 10i64), (40, 25)] {
        for y in cy - 2..=cy + 2 {
            for x in cx - 2..=cx + 2 {
                if (x - cx).pow(2) + (y - cy).pow(2) <= 4 {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
    mask.set(55, 5, true);
    let c = extract_centroids(&mask, 4, 200.0);
    assert_eq!(c.points, vec![(10.0, 10.0), (40.0, 25.0)]);
    assert_eq!(extract_centroids(&mask, 1, 200.0).len(), 3);
}

#[test]
fn otsu_rule_separates_bimodal_map() {
    let map = GrayImage::from_fn(20, 20, 200.0, |x, _| if x < 5 { 0.3 } else { 0.1 });
    assert_eq!(binarize(&map, ThresholdRule::Fixed).count_ones(), 0);
    assert_eq!(binarize(&map, ThresholdRule::Otsu).count_ones(), 100);
    let flat = GrayImage::filled(5, 5, 200.0, 0.7);
    assert_eq!(binarize(&flat, ThresholdRule::Otsu).count_ones(), 25);
}
