//! Central finite-difference verification of the analytic loss gradients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthGrid, ScalarMap};

use super::objectives::{StudentPlan, TeacherPlan};
use super::robust::robust_mae_branches;
use super::ssi::SsiPlan;
use super::{Branches, LossConfig, LossReport};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative discrepancy, so that entries where
/// both gradients vanish compare as equal.
const REL_FLOOR: f64 = 1e-12;

/// Entries smaller than this fraction of the largest gradient magnitude are
/// compared against that scale instead of their own. A central difference
/// with a fixed step carries round-off of roughly ulp(f) / step, which
/// swamps tiny entries.
pub const GRAD_SCALE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    RobustMae,
    SsiMage,
    /// Teacher objective on synthetic data (both terms).
    TeacherLoss,
    /// Teacher objective on real-world data (robust MAE only).
    TeacherLossReal,
    StudentLoss,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::RobustMae,
        LossKind::SsiMage,
        LossKind::TeacherLoss,
        LossKind::TeacherLossReal,
        LossKind::StudentLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RobustMae => "robust_mae",
            Self::SsiMage => "ssi_mage",
            Self::TeacherLoss => "teacher_loss",
            Self::TeacherLossReal => "teacher_loss_real",
            Self::StudentLoss => "student_loss",
        }
    }

    /// Value range of random instances: inverse depth for the inverse-map
    /// losses, metric depth for the depth objectives.
    fn value_range(self) -> (f64, f64) {
        match self {
            Self::RobustMae | Self::SsiMage => (0.1, 2.0),
            Self::TeacherLoss | Self::TeacherLossReal => (0.5, 80.0),
            Self::StudentLoss => (0.5, 300.0),
        }
    }

    fn prepare<'a>(self, pred_mask: &[bool], gt: &'a ScalarMap, cfg: &'a LossConfig) -> Result<Objective<'a>> {
        Ok(match self {
            Self::RobustMae => Objective::Robust(gt, cfg),
            Self::SsiMage => Objective::Ssi(SsiPlan::new(pred_mask, gt, cfg)?),
            Self::TeacherLoss | Self::TeacherLossReal => {
                let g = DepthGrid::from_map(gt.clone())?;
                Objective::Teacher(TeacherPlan::new(pred_mask, &g, cfg, self == Self::TeacherLoss)?)
            }
            Self::StudentLoss => {
                let g = DepthGrid::from_map(gt.clone())?;
                Objective::Student(StudentPlan::new(pred_mask, &g, cfg)?)
            }
        })
    }
}

/// A loss with its target already bound, evaluated repeatedly on
/// perturbed predictions sharing one mask.
enum Objective<'a> {
    Robust(&'a ScalarMap, &'a LossConfig),
    Ssi(SsiPlan),
    Teacher(TeacherPlan),
    Student(StudentPlan),
}

impl Objective<'_> {
    fn eval(&self, pred: &ScalarMap) -> Result<(LossReport, Branches)> {
        match self {
            Self::Robust(gt, cfg) => robust_mae_branches(pred, gt, cfg),
            Self::Ssi(plan) => plan.eval(pred.values()),
            Self::Teacher(plan) => plan.eval(&DepthGrid::from_map(pred.clone())?),
            Self::Student(plan) => plan.eval(&DepthGrid::from_map(pred.clone())?),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownLoss(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// the checked pixels.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Pixels whose ±step perturbation crosses a kink or a drop-rank tie.
    pub skipped: usize,
}

/// Seeded random `(pred, gt)` pair with a few invalid pixels.
fn random_instance(kind: LossKind, width: usize, height: usize, seed: u64) -> (ScalarMap, ScalarMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = kind.value_range();
    let n = width * height;
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<bool>) {
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let mask: Vec<bool> = (0..n).map(|_| !rng.random_bool(0.03)).collect();
        (vals, mask)
    };
    let (pv, pm) = draw(&mut rng);
    let (gv, gm) = draw(&mut rng);
    (
        ScalarMap::new(width, height, pv, pm).expect("finite values"),
        ScalarMap::new(width, height, gv, gm).expect("finite values"),
    )
}

pub fn gradcheck(name: &str, width: usize, height: usize, seed: u64) -> Result<GradcheckReport> {
    let kind: LossKind = name.parse()?;
    gradcheck_with(kind, width, height, seed, &LossConfig::default(), FD_STEP)
}

/// Compares the analytic gradient with `(f(x + h) - f(x - h)) / 2h` at
/// every valid prediction pixel of a seeded random instance.
pub fn gradcheck_with(
    kind: LossKind,
    width: usize,
    height: usize,
    seed: u64,
    cfg: &LossConfig,
    step: f64,
) -> Result<GradcheckReport> {
    let (pred, gt) = random_instance(kind, width, height, seed);
    pred.ensure_same_dims(&gt)?;
    let objective = kind.prepare(pred.mask(), &gt, cfg)?;
    let (base, base_branches) = objective.eval(&pred)?;
    let (w, h, values, mask) = pred.clone().into_parts();

    let floor = GRAD_SCALE_FLOOR * base.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut shifted = values.clone();
    for i in 0..values.len() {
        if !mask[i] {
            continue;
        }
        let mut eval_at = |v: f64| -> Result<(f64, Branches)> {
            shifted[i] = v;
            let map = ScalarMap::new(w, h, shifted.clone(), mask.clone())?;
            let (r, b) = objective.eval(&map)?;
            Ok((r.value, b))
        };
        let (fp, bp) = eval_at(values[i] + step)?;
        let (fm, bm) = eval_at(values[i] - step)?;
        shifted[i] = values[i];
        if bp != base_branches || bm != base_branches {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let analytic = base.gradient[i];
        let denom = analytic.abs().max(numeric.abs()).max(floor).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(GradcheckReport {
        loss: kind,
        width,
        height,
        seed,
        max_rel_error: max_rel,
        checked,
        skipped,
    })
}
