//! Focal-length recovery from a camera-frame point map.
//!
//! With unit aspect ratio and a centered principal point the only unknown
//! is `f`, found by minimizing `Σ_p c_p ‖r_p - f·u_p‖` where `r_p` is the
//! pixel position relative to the image center and `u_p = (X, Y) / Z`.
//! The minimization is Weiszfeld-style IRLS: each step solves the weighted
//! least-squares problem with weights `c_p / ‖r_p - f·u_p‖`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointMap;

pub const MIN_POINTS: usize = 10;
/// Points closer than this along the optical axis are ignored, meters.
pub const Z_FLOOR: f64 = 1e-6;
/// Residual floor inside IRLS weights, pixels.
pub const WEIGHT_FLOOR: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalEstimate {
    pub focal: f64,
    pub iterations: usize,
    /// Weighted sum of residual norms at `focal`, pixels.
    pub final_objective: f64,
    pub converged: bool,
    /// Objective after initialization and after every accepted step.
    pub objective_history: Vec<f64>,
}

struct Ray {
    r: [f64; 2],
    u: [f64; 2],
    c: f64,
}

fn collect_rays(pmap: &PointMap, weights: Option<&[f64]>) -> Result<Vec<Ray>> {
    let (w, h) = (pmap.width(), pmap.height());
    if let Some(ws) = weights {
        if ws.len() != w * h {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: (ws.len(), 1),
            });
        }
    }
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut rays = Vec::new();
    for (i, (p, &m)) in pmap.coords().iter().zip(pmap.mask()).enumerate() {
        let c = weights.map_or(1.0, |ws| ws[i]);
        if !m || p.z <= Z_FLOOR || !(c > 0.0) {
            continue;
        }
        rays.push(Ray {
            r: [(i % w) as f64 - cx, (i / w) as f64 - cy],
            u: [p.x / p.z, p.y / p.z],
            c,
        });
    }
    if rays.len() < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            found: rays.len(),
            required: MIN_POINTS,
        });
    }
    if rays.iter().map(|q| q.u[0] * q.u[0] + q.u[1] * q.u[1]).sum::<f64>() < 1e-12 {
        return Err(Error::DegenerateRays);
    }
    Ok(rays)
}

fn residual(q: &Ray, f: f64) -> f64 {
    (q.r[0] - f * q.u[0]).hypot(q.r[1] - f * q.u[1])
}

fn objective(rays: &[Ray], f: f64) -> f64 {
    rays.iter().map(|q| q.c * residual(q, f)).sum()
}

/// `Σ a_p u·r / Σ a_p u·u`, the weighted least-squares focal.
fn weighted_step(rays: &[Ray], weight: impl Fn(&Ray) -> f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for q in rays {
        let a = weight(q);
        num += a * (q.u[0] * q.r[0] + q.u[1] * q.r[1]);
        den += a * (q.u[0] * q.u[0] + q.u[1] * q.u[1]);
    }
    num / den
}

pub fn estimate_focal(pmap: &PointMap, max_iters: usize, tol: f64) -> Result<FocalEstimate> {
    estimate_focal_weighted(pmap, None, max_iters, tol)
}

/// Like [`estimate_focal`] with optional non-negative per-pixel
/// confidences (row-major, one per pixel).
pub fn estimate_focal_weighted(
    pmap: &PointMap,
    weights: Option<&[f64]>,
    max_iters: usize,
    tol: f64,
) -> Result<FocalEstimate> {
    let rays = collect_rays(pmap, weights)?;
    let mut f = weighted_step(&rays, |q| q.c);
    if !(f.is_finite() && f > 0.0) {
        return Err(Error::DegenerateRays);
    }
    let mut obj = objective(&rays, f);
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let next = weighted_step(&rays, |q| q.c / residual(q, f).max(WEIGHT_FLOOR));
        if !(next.is_finite() && next > 0.0) {
            break;
        }
        let next_obj = objective(&rays, next);
        if next_obj > obj {
            // Only reachable at round-off level near an exact fit.
            converged = true;
            break;
        }
        iterations += 1;
        let change = (next - f).abs() / f;
        f = next;
        obj = next_obj;
        history.push(obj);
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(FocalEstimate {
        focal: f,
        iterations,
        final_objective: obj,
        converged,
        objective_history: history,
    })
}
