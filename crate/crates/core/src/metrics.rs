//! Depth accuracy, occluding-contour boundary scores and field-of-view
//! error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

pub const DELTA_BASE: f64 = 1.25;

/// Contour thresholds (percent) used when none are given.
pub const DEFAULT_BOUNDARY_THRESHOLDS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];

/// Accuracy over the jointly valid pixels. `delta*` are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub rmse: f64,
    pub mae: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

impl MetricsReport {
    /// Pixel-count weighted merge; RMSE merges through mean squared error.
    pub fn merge(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let total: usize = reports.iter().map(|r| r.pixel_count).sum();
        if total == 0 {
            return None;
        }
        let t = total as f64;
        let wmean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| r.pixel_count as f64 * f(r)).sum::<f64>() / t;
        Some(MetricsReport {
            abs_rel: wmean(|r| r.abs_rel),
            rmse: wmean(|r| r.rmse * r.rmse).sqrt(),
            mae: wmean(|r| r.mae),
            log10: wmean(|r| r.log10),
            delta1: wmean(|r| r.delta1),
            delta2: wmean(|r| r.delta2),
            delta3: wmean(|r| r.delta3),
            pixel_count: total,
        })
    }
}

pub fn depth_metrics(pred: &DepthGrid, gt: &DepthGrid) -> Result<MetricsReport> {
    pred.ensure_same_dims(gt)?;
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    let mut n = 0usize;
    let (mut abs_rel, mut sq, mut abs, mut log10) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for i in 0..pred.depth().len() {
        if !(pred.mask()[i] && gt.mask()[i]) {
            continue;
        }
        let (p, g) = (pred.depth()[i], gt.depth()[i]);
        if p <= 0.0 {
            return Err(Error::NonPositiveDepth(p));
        }
        if g <= 0.0 {
            return Err(Error::NonPositiveDepth(g));
        }
        n += 1;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq += diff * diff;
        abs += diff.abs();
        log10 += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        for (hit, &t) in hits.iter_mut().zip(&thresholds) {
            if ratio < t {
                *hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let nf = n as f64;
    let pct = |k: usize| 100.0 * hits[k] as f64 / nf;
    Ok(MetricsReport {
        abs_rel: abs_rel / nf,
        rmse: (sq / nf).sqrt(),
        mae: abs / nf,
        log10: log10 / nf,
        delta1: pct(0),
        delta2: pct(1),
        delta3: pct(2),
        pixel_count: n,
    })
}

/// Scores at one contour threshold `t` (percent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub t: f64,
    /// matched / ground-truth contours.
    pub precision: f64,
    /// matched / predicted contours.
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub gt_contours: usize,
    pub pred_contours: usize,
}

impl BoundaryRecord {
    fn from_counts(t: f64, matched: usize, gt_contours: usize, pred_contours: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, gt_contours);
        let recall = ratio(matched, pred_contours);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            t,
            precision,
            recall,
            f1,
            matched,
            gt_contours,
            pred_contours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub records: Vec<BoundaryRecord>,
    pub mean_f1: f64,
}

impl BoundaryReport {
    fn from_records(records: Vec<BoundaryRecord>) -> Self {
        let mean_f1 = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.f1).sum::<f64>() / records.len() as f64
        };
        Self { records, mean_f1 }
    }

    /// Pools contour counts per threshold across reports. All reports must
    /// share the same threshold list.
    pub fn merge(reports: &[BoundaryReport]) -> Option<BoundaryReport> {
        let first = reports.first()?;
        let mut records = Vec::with_capacity(first.records.len());
        for (k, rec) in first.records.iter().enumerate() {
            let (mut m, mut g, mut p) = (0, 0, 0);
            for r in reports {
                let other = r.records.get(k)?;
                if other.t != rec.t {
                    return None;
                }
                m += other.matched;
                g += other.gt_contours;
                p += other.pred_contours;
            }
            records.push(BoundaryRecord::from_counts(rec.t, m, g, p));
        }
        Some(Self::from_records(records))
    }
}

/// Occluding-contour precision, recall and F1.
///
/// A contour exists on the ordered neighbor pair `(i, j)` when
/// `d(j) / d(i) > 1 + t / 100`. Pairs are horizontal and vertical
/// 4-neighbors taken in both orientations; pairs touching a pixel that is
/// invalid in either map are skipped. Undefined ratios are reported as 0.
pub fn boundary_f1(pred: &DepthGrid, gt: &DepthGrid, thresholds: &[f64]) -> Result<BoundaryReport> {
    pred.ensure_same_dims(gt)?;
    let (w, h) = pred.dims();
    let valid = |i: usize| pred.mask()[i] && gt.mask()[i];
    if !(0..w * h).any(valid) {
        return Err(Error::EmptyOverlap);
    }
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !valid(i) {
                continue;
            }
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)]
                .into_iter()
                .flatten()
            {
                if valid(j) {
                    pairs.push((i, j));
                    pairs.push((j, i));
                }
            }
        }
    }
    let (pd, gd) = (pred.depth(), gt.depth());
    let records = thresholds
        .iter()
        .map(|&t| {
            let limit = 1.0 + t / 100.0;
            let (mut matched, mut gt_c, mut pred_c) = (0, 0, 0);
            for &(i, j) in &pairs {
                let cg = gd[j] / gd[i] > limit;
                let cp = pd[j] / pd[i] > limit;
                gt_c += cg as usize;
                pred_c += cp as usize;
                matched += (cg && cp) as usize;
            }
            BoundaryRecord::from_counts(t, matched, gt_c, pred_c)
        })
        .collect();
    Ok(BoundaryReport::from_records(records))
}

/// Horizontal field of view in radians.
pub fn horizontal_fov(focal: f64, width: f64) -> f64 {
    2.0 * (width / (2.0 * focal)).atan()
}

/// Absolute difference of horizontal fields of view, degrees.
pub fn fov_error(pred_focal: f64, gt_focal: f64, width: f64) -> Result<f64> {
    if !(pred_focal > 0.0 && gt_focal > 0.0 && width > 0.0) {
        return Err(Error::NonPositiveFocal);
    }
    Ok((horizontal_fov(pred_focal, width) - horizontal_fov(gt_focal, width))
        .abs()
        .to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, d: &[f64]) -> DepthGrid {
        DepthGrid::from_depths(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps() {
        let g = grid(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = depth_metrics(&g, &g).unwrap();
        assert_eq!((m.abs_rel, m.rmse, m.mae, m.log10), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.delta1, m.delta2, m.delta3), (100.0, 100.0, 100.0));
        assert_eq!(m.pixel_count, 6);
    }

    #[test]
    fn constant_ratio_cases() {
        let gt = grid(4, 1, &[1.0, 2.0, 5.0, 10.0]);
        let scaled = |k: f64| grid(4, 1, &gt.depth().iter().map(|d| d * k).collect::<Vec<_>>());
        let m = depth_metrics(&scaled(1.2), &gt).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert!((m.log10 - 1.2f64.log10()).abs() < 1e-12);
        assert_eq!(m.delta1, 100.0);
        let m = depth_metrics(&scaled(1.26), &gt).unwrap();
        assert_eq!((m.delta1, m.delta2), (0.0, 100.0));
    }

    #[test]
    fn metrics_ignore_invalid_and_error_on_empty() {
        let a = DepthGrid::new(2, 1, vec![1.0, 5.0], vec![true, false]).unwrap();
        let b = DepthGrid::new(2, 1, vec![2.0, 5.0], vec![true, true]).unwrap();
        assert_eq!(depth_metrics(&a, &b).unwrap().pixel_count, 1);
        let c = DepthGrid::new(2, 1, vec![1.0, 5.0], vec![false, true]).unwrap();
        assert_eq!(depth_metrics(&a, &c), Err(Error::EmptyOverlap));
    }

    #[test]
    fn merge_weights_by_pixel_count() {
        let a = MetricsReport {
            abs_rel: 0.1,
            rmse: 1.0,
            mae: 1.0,
            log10: 0.0,
            delta1: 100.0,
            delta2: 100.0,
            delta3: 100.0,
            pixel_count: 1,
        };
        let b = MetricsReport {
            abs_rel: 0.4,
            rmse: 2.0,
            delta1: 50.0,
            pixel_count: 3,
            ..a
        };
        let m = MetricsReport::merge(&[a, b]).unwrap();
        assert!((m.abs_rel - 0.325).abs() < 1e-15);
        assert!((m.rmse - (13.0f64 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.delta1, 62.5);
        assert_eq!(m.pixel_count, 4);
        assert!(MetricsReport::merge(&[]).is_none());
    }

    #[test]
    fn single_pair_boundary() {
        let g = grid(2, 1, &[1.0, 1.2]);
        let r = boundary_f1(&g, &g, &[10.0]).unwrap();
        let rec = r.records[0];
        assert_eq!((rec.matched, rec.gt_contours, rec.pred_contours), (1, 1, 1));
        assert_eq!((rec.precision, rec.recall, rec.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn shifted_edge_has_no_overlap() {
        let mut gt = vec![1.0; 16];
        let mut pred = vec![1.0; 16];
        for y in 0..4 {
            for x in 2..4 {
                gt[y * 4 + x] = 1.3;
            }
            pred[y * 4 + 3] = 1.3;
        }
        let r = boundary_f1(&grid(4, 4, &pred), &grid(4, 4, &gt), &[5.0]).unwrap();
        let rec = r.records[0];
        assert_eq!((rec.matched, rec.gt_contours, rec.pred_contours), (0, 4, 4));
        assert_eq!((rec.precision, rec.recall, rec.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn boundary_merge_pools_counts() {
        let g = grid(3, 1, &[1.0, 2.0, 1.0]);
        let p = grid(3, 1, &[1.0, 2.0, 2.0]);
        let a = boundary_f1(&p, &g, &[10.0]).unwrap();
        let b = boundary_f1(&g, &g, &[10.0]).unwrap();
        let m = BoundaryReport::merge(&[a.clone(), b]).unwrap();
        let rec = m.records[0];
        assert_eq!(rec.gt_contours, 2 * a.records[0].gt_contours);
        assert!(BoundaryReport::merge(&[a, boundary_f1(&g, &g, &[5.0]).unwrap()]).is_none());
    }

    #[test]
    fn fov_cases() {
        assert_eq!(fov_error(700.0, 700.0, 1280.0).unwrap(), 0.0);
        assert!((horizontal_fov(500.0, 1000.0).to_degrees() - 90.0).abs() < 1e-9);
        let e = fov_error(1000.0, 500.0, 1000.0).unwrap();
        assert!((e - 36.869_897_645_844_02).abs() < 1e-9);
        assert_eq!(e, fov_error(500.0, 1000.0, 1000.0).unwrap());
        assert_eq!(fov_error(0.0, 500.0, 1000.0), Err(Error::NonPositiveFocal));
    }
}
