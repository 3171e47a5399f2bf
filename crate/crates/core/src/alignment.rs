//! Least-squares and pixel-wise scale solvers that align a dense prior to
//! sparse metric samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DepthGrid;
use crate::prompting::SparsePrompt;

/// Anchors used by the scale-field interpolation unless told otherwise.
pub const DEFAULT_NEIGHBORS: usize = 4;

/// Global `target ≈ scale · source + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub scale: f64,
    pub shift: f64,
    pub residual_rms: f64,
    pub sample_count: usize,
}

impl AffineFit {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }
}

/// `(source, target)` pairs for prompt points on valid source pixels,
/// in row-major pixel order regardless of prompt order.
fn paired_samples(source: &DepthGrid, targets: &SparsePrompt) -> Result<Vec<(usize, f64, f64)>> {
    if targets.dims() != source.dims() {
        return Err(Error::DimensionMismatch {
            expected: source.dims(),
            actual: targets.dims(),
        });
    }
    let mut pairs: Vec<_> = targets
        .entries()
        .iter()
        .filter_map(|p| source.get(p.x, p.y).map(|s| (source.index(p.x, p.y), s, p.d)))
        .collect();
    pairs.sort_unstable_by_key(|&(i, _, _)| i);
    Ok(pairs)
}

/// Closed-form least-squares scale and shift mapping `source` onto the
/// prompt depths.
pub fn lsq_scale_shift(source: &DepthGrid, targets: &SparsePrompt) -> Result<AffineFit> {
    let pairs = paired_samples(source, targets)?;
    let n = pairs.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!(
            "{n} prompt point(s) on valid source pixels, need at least 2"
        )));
    }
    let (lo, hi) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s, _)| {
            (lo.min(s), hi.max(s))
        });
    if lo == hi {
        return Err(Error::DegenerateFit("source is constant at the prompt pixels".into()));
    }

    let nf = n as f64;
    let mean_s = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mean_d = pairs.iter().map(|p| p.2).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(_, s, d) in &pairs {
        let ds = s - mean_s;
        sxx += ds * ds;
        sxy += ds * (d - mean_d);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("zero variance in source samples".into()));
    }
    let scale = sxy / sxx;
    let shift = mean_d - scale * mean_s;
    let sse: f64 = pairs
        .iter()
        .map(|&(_, s, d)| {
            let r = scale * s + shift - d;
            r * r
        })
        .sum();
    Ok(AffineFit {
        scale,
        shift,
        residual_rms: (sse / nf).sqrt(),
        sample_count: n,
    })
}

/// Dense per-pixel multiplier field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleField {
    width: usize,
    height: usize,
    scale: Vec<f64>,
    mask: Vec<bool>,
}

impl ScaleField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.scale[i])
    }
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    x: i64,
    y: i64,
    ratio: f64,
}

/// Uniform bucket grid over anchor pixels for exact k-nearest queries.
struct AnchorIndex {
    cell: i64,
    cols: i64,
    rows: i64,
    buckets: Vec<Vec<u32>>,
}

impl AnchorIndex {
    fn new(anchors: &[Anchor], width: usize, height: usize) -> Self {
        // Roughly two anchors per occupied cell.
        let area = (width * height) as f64;
        let cell = ((2.0 * area / anchors.len() as f64).sqrt().ceil() as i64).max(1);
        let cols = (width as i64 + cell - 1) / cell;
        let rows = (height as i64 + cell - 1) / cell;
        let mut buckets = vec![Vec::new(); (cols * rows) as usize];
        for (i, a) in anchors.iter().enumerate() {
            buckets[((a.y / cell) * cols + a.x / cell) as usize].push(i as u32);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// The `k` anchors nearest to `(qx, qy)`, ordered by squared distance
    /// and then by `(y, x)`.
    fn nearest(&self, anchors: &[Anchor], qx: i64, qy: i64, k: usize, out: &mut Vec<(i64, u32)>) {
        out.clear();
        let key = |d2: i64, i: u32| (d2, anchors[i as usize].y, anchors[i as usize].x);
        let (ccx, ccy) = (qx / self.cell, qy / self.cell);
        let max_ring = self.cols.max(self.rows);
        for r in 0..=max_ring {
            for cy in (ccy - r)..=(ccy + r) {
                if cy < 0 || cy >= self.rows {
                    continue;
                }
                let on_edge_row = cy == ccy - r || cy == ccy + r;
                let mut cx = ccx - r;
                while cx <= ccx + r {
                    if cx >= 0 && cx < self.cols {
                        for &i in &self.buckets[(cy * self.cols + cx) as usize] {
                            let a = &anchors[i as usize];
                            let d2 = (a.x - qx).pow(2) + (a.y - qy).pow(2);
                            let cand = key(d2, i);
                            if out.len() == k && cand >= key(out[k - 1].0, out[k - 1].1) {
                                continue;
                            }
                            let pos = out.partition_point(|&(e2, j)| key(e2, j) < cand);
                            out.insert(pos, (d2, i));
                            out.truncate(k);
                        }
                    }
                    // Interior cells of the ring were visited at smaller radii.
                    cx += if on_edge_row || r == 0 { 1 } else { 2 * r };
                }
            }
            // Anything outside the searched square is at least this far.
            let bound = r * self.cell + 1;
            if out.len() == k && out[k - 1].0 < bound * bound {
                break;
            }
        }
    }
}

/// Per-pixel scale that carries prompt-to-source ratios across the image.
///
/// Prompt pixels take their own ratio `d / source`; every other valid
/// source pixel takes the inverse-distance weighted mean of the ratios of
/// its `k` nearest prompt pixels. Prompts on invalid source pixels are
/// ignored.
pub fn pixelwise_scale_field(source: &DepthGrid, targets: &SparsePrompt, k: usize) -> Result<ScaleField> {
    if k == 0 {
        return Err(Error::InvalidPrompt("neighbor count must be at least 1".into()));
    }
    if targets.dims() != source.dims() {
        return Err(Error::DimensionMismatch {
            expected: source.dims(),
            actual: targets.dims(),
        });
    }
    let (w, h) = source.dims();
    let mut anchors = Vec::new();
    let mut anchor_at = vec![u32::MAX; w * h];
    let mut entries: Vec<_> = targets.entries().to_vec();
    entries.sort_unstable_by_key(|p| (p.y, p.x));
    for p in entries {
        let i = source.index(p.x, p.y);
        if !source.mask()[i] {
            continue;
        }
        let s = source.depth()[i];
        if !(s > 0.0) {
            return Err(Error::NonPositiveSourceAtPrompt { x: p.x, y: p.y });
        }
        anchor_at[i] = anchors.len() as u32;
        anchors.push(Anchor {
            x: p.x as i64,
            y: p.y as i64,
            ratio: p.d / s,
        });
    }
    if anchors.is_empty() {
        return Err(Error::NoUsablePrompts);
    }

    let k = k.min(anchors.len());
    let index = AnchorIndex::new(&anchors, w, h);
    let mut scale = vec![0.0; w * h];
    let mut neighbors = Vec::with_capacity(k + 1);
    for (i, &valid) in source.mask().iter().enumerate() {
        if !valid {
            continue;
        }
        if anchor_at[i] != u32::MAX {
            scale[i] = anchors[anchor_at[i] as usize].ratio;
            continue;
        }
        let (qx, qy) = ((i % w) as i64, (i / w) as i64);
        index.nearest(&anchors, qx, qy, k, &mut neighbors);
        let (mut num, mut den) = (0.0, 0.0);
        for &(d2, j) in &neighbors {
            let wgt = 1.0 / (d2 as f64).sqrt();
            num += wgt * anchors[j as usize].ratio;
            den += wgt;
        }
        scale[i] = num / den;
    }
    Ok(ScaleField {
        width: w,
        height: h,
        scale,
        mask: source.mask().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PromptPoint;

    fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DepthGrid {
        let d = (0..w * h).map(|i| f(i % w, i / w)).collect();
        DepthGrid::from_depths(w, h, d).unwrap()
    }

    fn prompt(w: usize, h: usize, pts: &[(usize, usize, f64)]) -> SparsePrompt {
        SparsePrompt::new(w, h, pts.iter().map(|&(x, y, d)| PromptPoint { x, y, d }).collect()).unwrap()
    }

    #[test]
    fn identity_fit() {
        let src = grid(8, 8, |x, y| 1.0 + x as f64 * 0.37 + y as f64 * 1.1);
        let p = prompt(
            8,
            8,
            &[
                (0, 0, 1.0),
                (3, 2, src.get(3, 2).unwrap()),
                (7, 7, src.get(7, 7).unwrap()),
            ],
        );
        let fit = lsq_scale_shift(&src, &p).unwrap();
        assert_eq!(
            (fit.scale, fit.shift, fit.residual_rms, fit.sample_count),
            (1.0, 0.0, 0.0, 3)
        );
    }

    #[test]
    fn half_scale_fit() {
        // source = 2 · truth; normal equations give scale 0.5, shift 0
        let truth = |x: usize, y: usize| 2.0 + (x * 3 + y) as f64 * 0.25;
        let src = grid(6, 6, |x, y| 2.0 * truth(x, y));
        let pts: Vec<_> = [(0, 0), (5, 1), (2, 4), (3, 3)]
            .iter()
            .map(|&(x, y)| (x, y, truth(x, y)))
            .collect();
        let fit = lsq_scale_shift(&src, &prompt(6, 6, &pts)).unwrap();
        assert!((fit.scale - 0.5).abs() < 1e-9);
        assert!(fit.shift.abs() < 1e-9);
    }

    #[test]
    fn constant_source_is_degenerate() {
        let src = grid(4, 4, |_, _| 3.0);
        let p = prompt(4, 4, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 5.0)]);
        assert!(matches!(lsq_scale_shift(&src, &p), Err(Error::DegenerateFit(_))));
        let p = prompt(4, 4, &[(0, 0, 1.0)]);
        assert!(matches!(lsq_scale_shift(&src, &p), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn single_anchor_gives_constant_field() {
        let src = grid(10, 7, |x, y| 1.0 + (x + y) as f64);
        let d = 2.0 * src.get(4, 3).unwrap();
        let field = pixelwise_scale_field(&src, &prompt(10, 7, &[(4, 3, d)]), 4).unwrap();
        assert!(field.scale().iter().all(|&s| s == 2.0));
    }

    #[test]
    fn identity_prompts_give_unit_field() {
        let src = grid(9, 9, |x, y| 0.5 + (x * y) as f64 * 0.1);
        let pts: Vec<_> = [(0, 0), (8, 0), (4, 4), (1, 7)]
            .iter()
            .map(|&(x, y)| (x, y, src.get(x, y).unwrap()))
            .collect();
        let field = pixelwise_scale_field(&src, &prompt(9, 9, &pts), 4).unwrap();
        assert!(field.scale().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn equidistant_query_averages() {
        let src = grid(5, 1, |_, _| 1.0);
        let field = pixelwise_scale_field(&src, &prompt(5, 1, &[(0, 0, 1.0), (4, 0, 3.0)]), 2).unwrap();
        assert_eq!(field.get(2, 0), Some(2.0));
    }

    #[test]
    fn nearest_ties_break_by_row_then_column() {
        // Query (2,2) with k=1: anchors (2,0), (0,2), (4,2), (2,4) all at distance 2;
        // lowest (y, x) is (2,0).
        let src = grid(5, 5, |_, _| 1.0);
        let p = prompt(5, 5, &[(2, 4, 4.0), (4, 2, 3.0), (0, 2, 2.0), (2, 0, 5.0)]);
        let field = pixelwise_scale_field(&src, &p, 1).unwrap();
        assert_eq!(field.get(2, 2), Some(5.0));
    }

    #[test]
    fn prompts_on_invalid_pixels_are_unusable() {
        let src = DepthGrid::new(3, 1, vec![1.0, 1.0, 1.0], vec![true, false, true]).unwrap();
        let p = prompt(3, 1, &[(1, 0, 2.0)]);
        assert_eq!(pixelwise_scale_field(&src, &p, 4), Err(Error::NoUsablePrompts));
        assert!(pixelwise_scale_field(&src, &p, 0).is_err());
    }

    #[test]
    fn grid_index_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (37, 23);
        let src = grid(w, h, |x, y| 1.0 + ((x * 7 + y * 13) % 11) as f64);
        let mut pts = std::collections::BTreeMap::new();
        while pts.len() < 15 {
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            pts.insert((y, x), rng.random_range(0.5..4.0));
        }
        let list: Vec<_> = pts.iter().map(|(&(y, x), &d)| (x, y, d)).collect();
        for k in [1, 3, 4, 7] {
            let field = pixelwise_scale_field(&src, &prompt(w, h, &list), k).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let s = src.get(x, y).unwrap();
                    let mut c: Vec<_> = list
                        .iter()
                        .map(|&(px, py, d)| {
                            let d2 = (px as i64 - x as i64).pow(2) + (py as i64 - y as i64).pow(2);
                            (d2, py, px, d / src.get(px, py).unwrap())
                        })
                        .collect();
                    c.sort_by_key(|e| (e.0, e.1, e.2));
                    let expect = if c[0].0 == 0 {
                        c[0].3
                    } else {
                        let (mut n, mut dsum) = (0.0, 0.0);
                        for e in &c[..k] {
                            let wt = 1.0 / (e.0 as f64).sqrt();
                            n += wt * e.3;
                            dsum += wt;
                        }
                        n / dsum
                    };
                    assert_eq!(field.get(x, y), Some(expect), "k={k} at ({x},{y}) source {s}");
                }
            }
        }
    }
}
