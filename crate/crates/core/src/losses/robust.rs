use crate::error::{Error, Result};
use crate::grid::ScalarMap;

use super::{signum0, Branches, LossConfig, LossReport};

/// Number of pixels excluded out of `n`: `⌈fraction · n⌉`, capped so that
/// at least one pixel survives.
pub fn drop_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = fraction * n as f64;
    let mut k = raw.ceil();
    // 0.2 * 5 may land a few ulps above 1.0
    if k - raw > 1.0 - 1e-9 {
        k -= 1.0;
    }
    (k.max(0.0) as usize).min(n - 1)
}

/// Mean absolute error over jointly valid pixels after excluding the
/// `⌈drop_fraction · N⌉` largest errors. Ties at the cut drop the lower
/// pixel index first.
pub fn robust_mae(pred: &ScalarMap, gt: &ScalarMap, cfg: &LossConfig) -> Result<LossReport> {
    robust_mae_branches(pred, gt, cfg).map(|(r, _)| r)
}

pub(crate) fn robust_mae_branches(
    pred: &ScalarMap,
    gt: &ScalarMap,
    cfg: &LossConfig,
) -> Result<(LossReport, Branches)> {
    cfg.validate()?;
    pred.ensure_same_dims(gt)?;
    let n_pix = pred.len();
    let (pv, gv) = (pred.values(), gt.values());
    let mut joint: Vec<usize> = (0..n_pix).filter(|&i| pred.mask()[i] && gt.mask()[i]).collect();
    let n = joint.len();
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let err = |i: usize| (pv[i] - gv[i]).abs();

    let dropped = drop_count(cfg.drop_fraction, n);
    let mut active = vec![false; n_pix];
    if dropped > 0 {
        // Largest error first, lower index first among equal errors.
        joint.select_nth_unstable_by(dropped - 1, |&a, &b| err(b).total_cmp(&err(a)).then(a.cmp(&b)));
        for &i in &joint[dropped..] {
            active[i] = true;
        }
    } else {
        for &i in &joint {
            active[i] = true;
        }
    }

    let survivors = (n - dropped) as f64;
    let mut gradient = vec![0.0; n_pix];
    let mut sum = 0.0;
    let mut branches = Branches::default();
    for i in 0..n_pix {
        if active[i] {
            let r = pv[i] - gv[i];
            sum += r.abs();
            gradient[i] = signum0(r) / survivors;
            branches.sign(r);
        } else {
            branches.push(2);
        }
    }
    Ok((
        LossReport {
            value: sum / survivors,
            gradient,
            active_mask: active,
        },
        branches,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_count_rounding() {
        assert_eq!(drop_count(0.2, 5), 1);
        assert_eq!(drop_count(0.2, 10), 2);
        assert_eq!(drop_count(0.2, 11), 3);
        assert_eq!(drop_count(0.2, 1), 0);
        assert_eq!(drop_count(0.0, 7), 0);
        assert_eq!(drop_count(0.3, 10), 3);
        assert_eq!(drop_count(0.7, 10), 7);
    }

    #[test]
    fn forced_drop_example() {
        let gt = ScalarMap::from_values(5, 1, vec![0.0; 5]).unwrap();
        let pred = ScalarMap::from_values(5, 1, vec![1.0, -1.0, 1.0, 1.0, 100.0]).unwrap();
        let r = robust_mae(&pred, &gt, &LossConfig::default()).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.active_mask, vec![true, true, true, true, false]);
        assert_eq!(r.gradient, vec![0.25, -0.25, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn equal_maps_have_zero_loss() {
        let m = ScalarMap::from_values(3, 3, (0..9).map(|i| i as f64 * 0.1).collect()).unwrap();
        let r = robust_mae(&m, &m, &LossConfig::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ties_drop_lower_index_first() {
        let gt = ScalarMap::from_values(5, 1, vec![0.0; 5]).unwrap();
        let pred = ScalarMap::from_values(5, 1, vec![1.0, 3.0, 1.0, 3.0, 1.0]).unwrap();
        let r = robust_mae(&pred, &gt, &LossConfig::default()).unwrap();
        assert_eq!(r.active_mask, vec![true, false, true, true, true]);
        assert_eq!(r.value, 1.5);
    }

    #[test]
    fn empty_overlap() {
        let a = ScalarMap::new(2, 1, vec![1.0, 1.0], vec![true, false]).unwrap();
        let b = ScalarMap::new(2, 1, vec![1.0, 1.0], vec![false, true]).unwrap();
        assert_eq!(robust_mae(&a, &b, &LossConfig::default()), Err(Error::EmptyOverlap));
    }
}
