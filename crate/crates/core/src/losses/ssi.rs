//! Median/MAD normalization and the multi-scale Scharr gradient loss.
//!
//! Pyramid levels are produced by a mask-normalized 3×3 binomial blur
//! followed by 2× decimation. A coarse pixel is valid iff its four fine
//! children are valid. Scharr responses use replicate padding and are only
//! evaluated where the whole 3×3 window is valid. Everything between the
//! normalized maps and the Scharr responses is linear for a fixed mask, so
//! the loss is evaluated on the difference of the normalized maps and the
//! gradient is pulled back through explicit adjoints.

use crate::error::{Error, Result};
use crate::grid::ScalarMap;

use super::{signum0, Branches, LossConfig, LossReport};

const BINOMIAL: [f64; 3] = [0.25, 0.5, 0.25];
const SCHARR_SMOOTH: [f64; 3] = [3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0];

/// Median and MAD of the values selected by `mask`, with the pixels that
/// determine them.
struct MadStats {
    median: f64,
    scale: f64,
    floored: bool,
    /// (pixel, weight) pairs whose weighted sum is the median.
    median_pix: Vec<(usize, f64)>,
    /// (pixel, weight) pairs whose weighted absolute deviation is the MAD.
    mad_pix: Vec<(usize, f64)>,
}

/// Middle element(s) under the (value, index) order: one with weight 1 or
/// two with 1/2. Reorders `items`.
fn middle(items: &mut [(f64, usize)]) -> Vec<(usize, f64)> {
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let n = items.len();
    let (lower, upper, _) = items.select_nth_unstable_by(n / 2, order);
    let upper = *upper;
    if n % 2 == 1 {
        vec![(upper.1, 1.0)]
    } else {
        let below = *lower.iter().max_by(|a, b| order(a, b)).expect("n >= 2");
        vec![(below.1, 0.5), (upper.1, 0.5)]
    }
}

fn mad_stats(values: &[f64], mask: &[bool], eps: f64) -> Result<MadStats> {
    let mut items: Vec<(f64, usize)> = values
        .iter()
        .zip(mask)
        .enumerate()
        .filter_map(|(i, (&v, &m))| m.then_some((v, i)))
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyMask);
    }
    let median_pix = middle(&mut items);
    let median: f64 = median_pix.iter().map(|&(i, w)| w * values[i]).sum();

    for item in items.iter_mut() {
        item.0 = (values[item.1] - median).abs();
    }
    let mad_pix = middle(&mut items);
    let mad: f64 = mad_pix.iter().map(|&(i, w)| w * (values[i] - median).abs()).sum();
    let floored = !(mad > eps);
    Ok(MadStats {
        median,
        scale: if floored { eps } else { mad },
        floored,
        median_pix,
        mad_pix,
    })
}

impl MadStats {
    fn normalize(&self, values: &[f64], mask: &[bool]) -> Vec<f64> {
        values
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { (v - self.median) / self.scale } else { 0.0 })
            .collect()
    }

    /// Pulls `upstream` (gradient w.r.t. the normalized map) back to the
    /// raw map.
    fn backward(&self, values: &[f64], mask: &[bool], normalized: &[f64], upstream: &[f64]) -> Vec<f64> {
        let s = self.scale;
        let mut sum_g = 0.0;
        let mut sum_gz = 0.0;
        for i in 0..values.len() {
            if mask[i] {
                sum_g += upstream[i];
                sum_gz += upstream[i] * normalized[i];
            }
        }
        let mut out: Vec<f64> = upstream
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g / s } else { 0.0 })
            .collect();
        // d median / d v
        for &(i, w) in &self.median_pix {
            out[i] -= sum_g / s * w;
        }
        if !self.floored {
            // d MAD / d v = Σ_j w_j sign_j (e_j - d median / d v)
            let mut sign_total = 0.0;
            for &(j, w) in &self.mad_pix {
                let sg = signum0(values[j] - self.median);
                out[j] -= sum_gz / s * w * sg;
                sign_total += w * sg;
            }
            for &(i, w) in &self.median_pix {
                out[i] += sum_gz / s * sign_total * w;
            }
        }
        out
    }

    fn record(&self, values: &[f64], b: &mut Branches) {
        for &(i, _) in self.median_pix.iter().chain(&self.mad_pix) {
            b.push(i as i64);
        }
        for &(j, _) in &self.mad_pix {
            b.sign(values[j] - self.median);
        }
        b.push(self.floored as i64);
    }
}

/// `(map - median) / max(MAD, mad_epsilon)` over the valid pixels.
/// Invalid pixels are set to 0 and stay invalid.
pub fn mad_normalize(map: &ScalarMap, cfg: &LossConfig) -> Result<ScalarMap> {
    let stats = mad_stats(map.values(), map.mask(), cfg.mad_epsilon)?;
    let values = stats.normalize(map.values(), map.mask());
    ScalarMap::new(map.width(), map.height(), values, map.mask().to_vec())
}

/// Compressed sparse rows mapping one level's pixels to outputs.
#[derive(Debug, Default)]
struct SparseOp {
    out: Vec<usize>,
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseOp {
    fn with_rows(n: usize) -> Self {
        Self {
            ptr: {
                let mut p = Vec::with_capacity(n + 1);
                p.push(0);
                p
            },
            ..Default::default()
        }
    }

    fn push_row(&mut self, out: usize, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, v) in entries {
            self.col.push(c);
            self.val.push(v);
        }
        self.out.push(out);
        self.ptr.push(self.col.len());
    }

    fn row(&self, r: usize, x: &[f64]) -> f64 {
        (self.ptr[r]..self.ptr[r + 1])
            .map(|k| self.val[k] * x[self.col[k]])
            .sum()
    }

    fn rows(&self) -> usize {
        self.out.len()
    }

    fn apply(&self, x: &[f64], out_len: usize) -> Vec<f64> {
        let mut y = vec![0.0; out_len];
        for r in 0..self.rows() {
            y[self.out[r]] = self.row(r, x);
        }
        y
    }

    /// `acc += Aᵀ · g` where `g[r]` is the upstream value of row `r`.
    fn adjoint_rows(&self, g: impl Fn(usize) -> f64, acc: &mut [f64]) {
        for r in 0..self.rows() {
            let gr = g(r);
            if gr == 0.0 {
                continue;
            }
            for k in self.ptr[r]..self.ptr[r + 1] {
                acc[self.col[k]] += self.val[k] * gr;
            }
        }
    }
}

struct Level {
    width: usize,
    height: usize,
    /// Scharr x and y, one row per gradient-valid pixel (same order).
    scharr_x: SparseOp,
    scharr_y: SparseOp,
    /// Blur + decimation into the next level, when there is one.
    down: Option<SparseOp>,
}

#[inline]
fn clamp(v: isize, hi: usize) -> usize {
    v.clamp(0, hi as isize - 1) as usize
}

fn build_level(width: usize, height: usize, mask: &[bool]) -> Level {
    let idx = |x: usize, y: usize| y * width + x;
    let mut sx = SparseOp::with_rows(width * height);
    let mut sy = SparseOp::with_rows(width * height);
    for y in 0..height {
        for x in 0..width {
            let window_valid = (-1..=1)
                .all(|dy| (-1..=1).all(|dx| mask[idx(clamp(x as isize + dx, width), clamp(y as isize + dy, height))]));
            if !window_valid {
                continue;
            }
            let (xm, xp) = (clamp(x as isize - 1, width), clamp(x as isize + 1, width));
            let (ym, yp) = (clamp(y as isize - 1, height), clamp(y as isize + 1, height));
            let mut rx = Vec::with_capacity(6);
            let mut ry = Vec::with_capacity(6);
            for (k, dy) in (-1..=1).enumerate() {
                let yy = clamp(y as isize + dy, height);
                rx.push((idx(xp, yy), SCHARR_SMOOTH[k]));
                rx.push((idx(xm, yy), -SCHARR_SMOOTH[k]));
            }
            for (k, dx) in (-1..=1).enumerate() {
                let xx = clamp(x as isize + dx, width);
                ry.push((idx(xx, yp), SCHARR_SMOOTH[k]));
                ry.push((idx(xx, ym), -SCHARR_SMOOTH[k]));
            }
            sx.push_row(idx(x, y), rx);
            sy.push_row(idx(x, y), ry);
        }
    }
    Level {
        width,
        height,
        scharr_x: sx,
        scharr_y: sy,
        down: None,
    }
}

/// Blur-and-decimate operator plus the coarse mask.
fn build_down(width: usize, height: usize, mask: &[bool]) -> (SparseOp, Vec<bool>, usize, usize) {
    let (cw, ch) = (width / 2, height / 2);
    let idx = |x: usize, y: usize| y * width + x;
    let mut op = SparseOp::with_rows(cw * ch);
    let mut coarse = vec![false; cw * ch];
    for cy in 0..ch {
        for cx in 0..cw {
            let (fx, fy) = (2 * cx, 2 * cy);
            if !(mask[idx(fx, fy)] && mask[idx(fx + 1, fy)] && mask[idx(fx, fy + 1)] && mask[idx(fx + 1, fy + 1)]) {
                continue;
            }
            coarse[cy * cw + cx] = true;
            let mut row = Vec::with_capacity(9);
            let mut total = 0.0;
            for (ky, dy) in (-1..=1).enumerate() {
                for (kx, dx) in (-1..=1).enumerate() {
                    let j = idx(clamp(fx as isize + dx, width), clamp(fy as isize + dy, height));
                    if mask[j] {
                        let w = BINOMIAL[ky] * BINOMIAL[kx];
                        row.push((j, w));
                        total += w;
                    }
                }
            }
            op.push_row(cy * cw + cx, row.into_iter().map(|(j, w)| (j, w / total)));
        }
    }
    (op, coarse, cw, ch)
}

/// Levels with at least 2×2 pixels, up to `scale_count` of them.
fn build_pyramid(width: usize, height: usize, mask: &[bool], scale_count: usize) -> Vec<Level> {
    let mut levels = Vec::new();
    let (mut w, mut h, mut m) = (width, height, mask.to_vec());
    while levels.len() < scale_count && w >= 2 && h >= 2 {
        let mut level = build_level(w, h, &m);
        let more = levels.len() + 1 < scale_count && w / 2 >= 2 && h / 2 >= 2;
        if more {
            let (op, cm, cw, ch) = build_down(w, h, &m);
            level.down = Some(op);
            levels.push(level);
            (w, h, m) = (cw, ch, cm);
        } else {
            levels.push(level);
            break;
        }
    }
    levels
}

/// Multi-scale gradient L1 error of a difference map and its gradient.
fn multiscale_gradient_loss(diff: &[f64], levels: &[Level], branches: &mut Branches) -> (f64, Vec<f64>) {
    // Forward: per-level difference maps.
    let mut maps = vec![diff.to_vec()];
    for (j, level) in levels.iter().enumerate() {
        if let Some(down) = &level.down {
            let next = &levels[j + 1];
            let coarse = down.apply(&maps[j], next.width * next.height);
            maps.push(coarse);
        }
    }
    let contributing: Vec<usize> = (0..levels.len()).filter(|&j| levels[j].scharr_x.rows() > 0).collect();
    if contributing.is_empty() {
        return (0.0, vec![0.0; diff.len()]);
    }
    let m = contributing.len() as f64;

    let mut value = 0.0;
    let mut upstream: Vec<Vec<f64>> = levels.iter().map(|l| vec![0.0; l.width * l.height]).collect();
    for &j in &contributing {
        let level = &levels[j];
        let n = level.scharr_x.rows();
        let nf = n as f64;
        let mut sum = 0.0;
        let mut sx = Vec::with_capacity(n);
        let mut sy = Vec::with_capacity(n);
        for r in 0..n {
            let gx = level.scharr_x.row(r, &maps[j]);
            let gy = level.scharr_y.row(r, &maps[j]);
            sum += gx.abs() + gy.abs();
            branches.sign(gx);
            branches.sign(gy);
            sx.push(signum0(gx) / (nf * m));
            sy.push(signum0(gy) / (nf * m));
        }
        value += sum / nf;
        level.scharr_x.adjoint_rows(|r| sx[r], &mut upstream[j]);
        level.scharr_y.adjoint_rows(|r| sy[r], &mut upstream[j]);
    }
    value /= m;

    // Backward through the decimation chain, coarsest first.
    for j in (0..levels.len().saturating_sub(1)).rev() {
        if let Some(down) = &levels[j].down {
            let coarse = std::mem::take(&mut upstream[j + 1]);
            let fine = &mut upstream[j];
            let out = &down.out;
            down.adjoint_rows(|r| coarse[out[r]], fine);
        }
    }
    (value, std::mem::take(&mut upstream[0]))
}

/// Scale-and-shift invariant mean absolute gradient error.
///
/// Both maps are median/MAD normalized over their joint valid pixels, then
/// compared through multi-scale Scharr gradients with an L1 penalty
/// (`|Δgx| + |Δgy|` per pixel). Levels smaller than 2×2 are not built;
/// the value is the mean over levels that have gradient-valid pixels, and
/// 0 when none do.
pub fn ssi_mage(pred: &ScalarMap, gt: &ScalarMap, cfg: &LossConfig) -> Result<LossReport> {
    ssi_mage_branches(pred, gt, cfg).map(|(r, _)| r)
}

pub(crate) fn ssi_mage_branches(pred: &ScalarMap, gt: &ScalarMap, cfg: &LossConfig) -> Result<(LossReport, Branches)> {
    pred.ensure_same_dims(gt)?;
    SsiPlan::new(pred.mask(), gt, cfg)?.eval(pred.values())
}

/// Everything in [`ssi_mage`] that does not depend on the predicted values:
/// the joint mask, the normalized target and the pyramid operators.
pub(crate) struct SsiPlan {
    joint: Vec<bool>,
    gt_norm: Vec<f64>,
    gt_branches: Branches,
    levels: Vec<Level>,
    eps: f64,
}

impl SsiPlan {
    pub(crate) fn new(pred_mask: &[bool], gt: &ScalarMap, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        debug_assert_eq!(pred_mask.len(), gt.len(), "callers check dimensions");
        let joint: Vec<bool> = pred_mask.iter().zip(gt.mask()).map(|(&a, &b)| a && b).collect();
        let gs = mad_stats(gt.values(), &joint, cfg.mad_epsilon)?;
        let gt_norm = gs.normalize(gt.values(), &joint);
        let mut gt_branches = Branches::default();
        gs.record(gt.values(), &mut gt_branches);
        let levels = build_pyramid(gt.width(), gt.height(), &joint, cfg.scale_count);
        Ok(Self {
            joint,
            gt_norm,
            gt_branches,
            levels,
            eps: cfg.mad_epsilon,
        })
    }

    pub(crate) fn eval(&self, pred: &[f64]) -> Result<(LossReport, Branches)> {
        let ps = mad_stats(pred, &self.joint, self.eps)?;
        let pn = ps.normalize(pred, &self.joint);
        let diff: Vec<f64> = pn.iter().zip(&self.gt_norm).map(|(a, b)| a - b).collect();

        let mut branches = Branches::default();
        ps.record(pred, &mut branches);
        branches.extend(self.gt_branches.clone());
        let (value, d_diff) = multiscale_gradient_loss(&diff, &self.levels, &mut branches);
        let gradient = ps.backward(pred, &self.joint, &pn, &d_diff);
        Ok((
            LossReport {
                value,
                gradient,
                active_mask: self.joint.clone(),
            },
            branches,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn mad_hand_example() {
        let m = ScalarMap::from_values(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mad_normalize(&m, &cfg()).unwrap().values(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn mad_even_count_uses_midpoint() {
        // median 2.5, deviations [1.5, 0.5, 0.5, 1.5] -> MAD 1
        let m = ScalarMap::from_values(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mad_normalize(&m, &cfg()).unwrap().values(), &[-1.5, -0.5, 0.5, 1.5]);
    }

    #[test]
    fn mad_constant_map_is_zero() {
        let m = ScalarMap::filled(4, 4, 3.7);
        assert!(mad_normalize(&m, &cfg()).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mad_ignores_invalid_and_errors_on_empty() {
        let m = ScalarMap::new(4, 1, vec![1.0, 100.0, 2.0, 3.0], vec![true, false, true, true]).unwrap();
        let n = mad_normalize(&m, &cfg()).unwrap();
        assert_eq!(n.values(), &[-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(n.mask(), m.mask());
        let e = ScalarMap::new(1, 1, vec![1.0], vec![false]).unwrap();
        assert_eq!(mad_normalize(&e, &cfg()), Err(Error::EmptyMask));
    }

    #[test]
    fn pyramid_truncates_below_two_pixels() {
        assert_eq!(build_pyramid(32, 32, &vec![true; 1024], 6).len(), 5);
        assert_eq!(build_pyramid(64, 64, &vec![true; 4096], 6).len(), 6);
        assert_eq!(build_pyramid(1, 1, &[true], 6).len(), 0);
        assert_eq!(build_pyramid(5, 3, &[true; 15], 6).len(), 1);
    }

    #[test]
    fn coarse_validity_needs_all_children() {
        let mut mask = vec![true; 16];
        mask[5] = false; // (1,1)
        let (_, coarse, cw, ch) = build_down(4, 4, &mask);
        assert_eq!((cw, ch), (2, 2));
        assert_eq!(coarse, vec![false, true, true, true]);
    }

    #[test]
    fn blur_preserves_constants() {
        let mask = vec![true; 36];
        let (op, _, cw, ch) = build_down(6, 6, &mask);
        let out = op.apply(&vec![2.5; 36], cw * ch);
        assert!(out.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn scharr_of_ramp() {
        // v = x: interior gx = (3 + 10 + 3)/16 * 2 = 2, gy = 0
        let (w, h) = (5, 4);
        let v: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
        let level = build_level(w, h, &vec![true; w * h]);
        let gx = level.scharr_x.apply(&v, w * h);
        let gy = level.scharr_y.apply(&v, w * h);
        assert_eq!(gx[w + 2], 2.0);
        assert_eq!(gx[w], 1.0); // replicate padding at the left border
        assert!(gy.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ssi_zero_for_equal_and_affine_maps() {
        let vals: Vec<f64> = (0..64).map(|i| ((i * 37 % 17) as f64).sin() + 2.0).collect();
        let gt = ScalarMap::from_values(8, 8, vals.clone()).unwrap();
        assert_eq!(ssi_mage(&gt, &gt, &cfg()).unwrap().value, 0.0);
        let pred = gt.map_valid(|v| 3.5 * v - 1.25);
        assert!(ssi_mage(&pred, &gt, &cfg()).unwrap().value < 1e-9);
    }

    #[test]
    fn ssi_single_pixel_is_zero() {
        let a = ScalarMap::filled(1, 1, 0.5);
        let b = ScalarMap::filled(1, 1, 2.0);
        let r = ssi_mage(&a, &b, &cfg()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.gradient, vec![0.0]);
    }
}
