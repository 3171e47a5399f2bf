use crate::error::{Error, Result};
use crate::grid::{DepthGrid, ScalarMap};

use super::robust::robust_mae_branches;
use super::ssi::SsiPlan;
use super::{signum0, Branches, LossConfig, LossReport};

/// Per-pixel `1 / d` on valid pixels; mask preserved.
pub fn to_inverse_depth(map: &ScalarMap) -> Result<ScalarMap> {
    if let Some(&d) = map
        .values()
        .iter()
        .zip(map.mask())
        .find_map(|(v, &m)| (m && *v <= 0.0).then_some(v))
    {
        return Err(Error::NonPositiveDepth(d));
    }
    Ok(map.map_valid(|d| 1.0 / d))
}

/// Distance-balanced log-space depth `1 - ln(d) / ln(C)`.
pub fn dlog_transform(d: f64, cfg: &LossConfig) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDepth(d));
    }
    if !(cfg.balance_c > 1.0) {
        return Err(Error::InvalidConfig("balance_c must exceed 1".into()));
    }
    Ok(1.0 - d.ln() / cfg.balance_c.ln())
}

fn dlog_map(grid: &DepthGrid, cfg: &LossConfig) -> ScalarMap {
    let ln_c = cfg.balance_c.ln();
    grid.as_map().map_valid(|d| 1.0 - d.ln() / ln_c)
}

fn union(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(&x, &y)| x || y).collect()
}

/// Pre-training objective on inverse depth:
/// `alpha · robust_mae + beta · ssi_mage`, the second term only for
/// synthetic data. The gradient is with respect to the predicted depth.
pub fn teacher_loss(pred: &DepthGrid, gt: &DepthGrid, cfg: &LossConfig, synthetic: bool) -> Result<LossReport> {
    teacher_loss_branches(pred, gt, cfg, synthetic).map(|(r, _)| r)
}

pub(crate) fn teacher_loss_branches(
    pred: &DepthGrid,
    gt: &DepthGrid,
    cfg: &LossConfig,
    synthetic: bool,
) -> Result<(LossReport, Branches)> {
    pred.ensure_same_dims(gt)?;
    TeacherPlan::new(pred.mask(), gt, cfg, synthetic)?.eval(pred)
}

/// Prediction-independent part of [`teacher_loss`].
pub(crate) struct TeacherPlan {
    inv_gt: ScalarMap,
    ssi: Option<SsiPlan>,
    cfg: LossConfig,
}

impl TeacherPlan {
    pub(crate) fn new(pred_mask: &[bool], gt: &DepthGrid, cfg: &LossConfig, synthetic: bool) -> Result<Self> {
        cfg.validate()?;
        let inv_gt = to_inverse_depth(gt.as_map())?;
        let ssi = synthetic.then(|| SsiPlan::new(pred_mask, &inv_gt, cfg)).transpose()?;
        Ok(Self { inv_gt, ssi, cfg: *cfg })
    }

    pub(crate) fn eval(&self, pred: &DepthGrid) -> Result<(LossReport, Branches)> {
        let cfg = &self.cfg;
        let ip = to_inverse_depth(pred.as_map())?;
        let (mae, mut branches) = robust_mae_branches(&ip, &self.inv_gt, cfg)?;
        let mut value = cfg.alpha * mae.value;
        let mut grad_inv: Vec<f64> = mae.gradient.iter().map(|g| cfg.alpha * g).collect();
        let mut active = mae.active_mask;
        if let Some(plan) = &self.ssi {
            let (ssi, b) = plan.eval(ip.values())?;
            value += cfg.beta * ssi.value;
            for (g, s) in grad_inv.iter_mut().zip(&ssi.gradient) {
                *g += cfg.beta * s;
            }
            active = union(&active, &ssi.active_mask);
            branches.extend(b);
        }
        // d(1/d)/dd = -1/d²
        let gradient = grad_inv
            .iter()
            .zip(pred.depth())
            .zip(pred.mask())
            .map(|((&g, &d), &m)| if m && g != 0.0 { -g / (d * d) } else { 0.0 })
            .collect();
        Ok((
            LossReport {
                value,
                gradient,
                active_mask: active,
            },
            branches,
        ))
    }
}

/// Distillation objective:
/// `gamma · mean|D_log(pred) - D_log(gt)| + delta · ssi_mage(D_log(pred), D_log(gt))`.
/// The gradient is with respect to the predicted depth.
pub fn student_loss(pred: &DepthGrid, gt: &DepthGrid, cfg: &LossConfig) -> Result<LossReport> {
    student_loss_branches(pred, gt, cfg).map(|(r, _)| r)
}

pub(crate) fn student_loss_branches(
    pred: &DepthGrid,
    gt: &DepthGrid,
    cfg: &LossConfig,
) -> Result<(LossReport, Branches)> {
    pred.ensure_same_dims(gt)?;
    StudentPlan::new(pred.mask(), gt, cfg)?.eval(pred)
}

/// Prediction-independent part of [`student_loss`].
pub(crate) struct StudentPlan {
    log_gt: ScalarMap,
    joint: Vec<bool>,
    count: usize,
    ssi: SsiPlan,
    cfg: LossConfig,
}

impl StudentPlan {
    pub(crate) fn new(pred_mask: &[bool], gt: &DepthGrid, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        let log_gt = dlog_map(gt, cfg);
        let joint: Vec<bool> = pred_mask.iter().zip(gt.mask()).map(|(&a, &b)| a && b).collect();
        let count = joint.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyOverlap);
        }
        let ssi = SsiPlan::new(pred_mask, &log_gt, cfg)?;
        Ok(Self {
            log_gt,
            joint,
            count,
            ssi,
            cfg: *cfg,
        })
    }

    pub(crate) fn eval(&self, pred: &DepthGrid) -> Result<(LossReport, Branches)> {
        let cfg = &self.cfg;
        let lp = dlog_map(pred, cfg);
        let nf = self.count as f64;

        let mut branches = Branches::default();
        let mut sum = 0.0;
        let mut grad_log = vec![0.0; self.joint.len()];
        for (i, &m) in self.joint.iter().enumerate() {
            if m {
                let r = lp.values()[i] - self.log_gt.values()[i];
                sum += r.abs();
                grad_log[i] = cfg.gamma * signum0(r) / nf;
                branches.sign(r);
            }
        }
        let mut value = cfg.gamma * sum / nf;

        let (ssi, b) = self.ssi.eval(lp.values())?;
        value += cfg.delta * ssi.value;
        for (g, s) in grad_log.iter_mut().zip(&ssi.gradient) {
            *g += cfg.delta * s;
        }
        branches.extend(b);

        // d D_log / dd = -1 / (d ln C)
        let ln_c = cfg.balance_c.ln();
        let gradient = grad_log
            .iter()
            .zip(pred.depth())
            .zip(&self.joint)
            .map(|((&g, &d), &m)| if m { -g / (d * ln_c) } else { 0.0 })
            .collect();
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
    use crate::losses::{robust_mae, ssi_mage};

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn inverse_depth_basics() {
        let m = ScalarMap::new(3, 1, vec![2.0, 4.0, 0.0], vec![true, true, false]).unwrap();
        let inv = to_inverse_depth(&m).unwrap();
        assert_eq!(inv.values(), &[0.5, 0.25, 0.0]);
        assert_eq!(inv.mask(), m.mask());
        let back = to_inverse_depth(&inv).unwrap();
        assert_eq!(back.values(), m.values());
        let bad = ScalarMap::from_values(1, 1, vec![-1.0]).unwrap();
        assert_eq!(to_inverse_depth(&bad), Err(Error::NonPositiveDepth(-1.0)));
    }

    #[test]
    fn dlog_endpoints() {
        let c = cfg();
        assert_eq!(dlog_transform(1.0, &c).unwrap(), 1.0);
        assert_eq!(dlog_transform(400.0, &c).unwrap(), 0.0);
        assert!((dlog_transform(20.0, &c).unwrap() - 0.5).abs() < 1e-12);
        assert!(dlog_transform(0.0, &c).is_err());
    }

    #[test]
    fn teacher_equal_maps_is_zero() {
        let g = DepthGrid::from_depths(8, 8, (0..64).map(|i| 1.0 + i as f64 * 0.3).collect()).unwrap();
        let r = teacher_loss(&g, &g, &cfg(), true).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn teacher_real_is_weighted_robust_mae() {
        let p = DepthGrid::from_depths(6, 6, (0..36).map(|i| 1.0 + (i * 7 % 11) as f64).collect()).unwrap();
        let g = DepthGrid::from_depths(6, 6, (0..36).map(|i| 2.0 + (i * 5 % 13) as f64).collect()).unwrap();
        let c = cfg();
        let t = teacher_loss(&p, &g, &c, false).unwrap();
        let ip = to_inverse_depth(p.as_map()).unwrap();
        let ig = to_inverse_depth(g.as_map()).unwrap();
        assert_eq!(t.value, c.alpha * robust_mae(&ip, &ig, &c).unwrap().value);
        let s = teacher_loss(&p, &g, &c, true).unwrap();
        let expect = t.value + c.beta * ssi_mage(&ip, &ig, &c).unwrap().value;
        assert!((s.value - expect).abs() < 1e-12);
    }

    #[test]
    fn student_single_pixel_endpoints() {
        let p = DepthGrid::from_depths(1, 1, vec![400.0]).unwrap();
        let g = DepthGrid::from_depths(1, 1, vec![1.0]).unwrap();
        assert_eq!(student_loss(&p, &g, &cfg()).unwrap().value, 10.0);
        assert_eq!(student_loss(&g, &g, &cfg()).unwrap().value, 0.0);
    }

    #[test]
    fn student_empty_overlap() {
        let p = DepthGrid::new(2, 1, vec![1.0, 1.0], vec![true, false]).unwrap();
        let g = DepthGrid::new(2, 1, vec![1.0, 1.0], vec![false, true]).unwrap();
        assert_eq!(student_loss(&p, &g, &cfg()), Err(Error::EmptyOverlap));
    }
}
