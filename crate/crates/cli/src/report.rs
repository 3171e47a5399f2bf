//! JSON run report: one entry per sample in manifest order plus an
//! aggregate over the samples that succeeded.

use std::collections::BTreeMap;

use metricforge::alignment::AffineFit;
use metricforge::calibration::FocalEstimate;
use metricforge::losses::GradcheckReport;
use metricforge::metrics::{BoundaryReport, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::config::{LossChoice, RunConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub command: String,
    pub seed: u64,
    pub strict: bool,
    pub config: RunConfig,
    pub clock: Clock,
    pub summary: Summary,
    pub samples: Vec<SampleReport>,
    /// Absent when no sample succeeded.
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Wall-clock data. With a fixed clock both fields are zero so reports of
/// identical runs compare byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub fixed: bool,
    pub started_at_unix_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub id: String,
    pub seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Files written for this sample, relative to the output directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SampleResult {
    Project {
        width: usize,
        height: usize,
        points: usize,
        valid_pixels: usize,
        /// Largest depth difference to the ground truth where both are
        /// valid, when ground truth is available.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_abs_error_vs_gt: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask_matches_gt: Option<bool>,
    },
    SamplePrompt {
        count: usize,
        valid_pixels: usize,
    },
    Prepare {
        prompt_count: usize,
        fit: AffineFit,
    },
    Loss {
        kind: LossChoice,
        value: f64,
        active_pixels: usize,
        gradient_l2: f64,
    },
    Evaluate {
        metrics: MetricsReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_error_deg: Option<f64>,
    },
    Boundary {
        boundary: BoundaryReport,
    },
    Calib {
        estimate: FocalEstimate,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference_focal: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relative_error: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fov_error_deg: Option<f64>,
    },
    Gradcheck {
        report: GradcheckReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Aggregate {
    Project {
        valid_pixels: usize,
    },
    SamplePrompt {
        count: usize,
    },
    Prepare {
        prompt_count: usize,
    },
    Loss {
        /// Active-pixel weighted mean of the per-sample values.
        mean_value: f64,
        active_pixels: usize,
    },
    Evaluate {
        metrics: MetricsReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean_fov_error_deg: Option<f64>,
    },
    Boundary {
        boundary: BoundaryReport,
    },
    Calib {
        samples: usize,
        converged: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean_relative_error: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_relative_error: Option<f64>,
    },
    Gradcheck {
        /// Worst relative discrepancy per loss.
        max_rel_error: BTreeMap<String, f64>,
        checked: usize,
        skipped: usize,
    },
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl Aggregate {
    /// Combines the results of the successful samples. Returns `None` when
    /// there are none.
    pub fn from_results(results: &[&SampleResult]) -> Option<Self> {
        let first = *results.first()?;
        Some(match first {
            SampleResult::Project { .. } => Self::Project {
                valid_pixels: results
                    .iter()
                    .filter_map(|r| match r {
                        SampleResult::Project { valid_pixels, .. } => Some(*valid_pixels),
                        _ => None,
                    })
                    .sum(),
            },
            SampleResult::SamplePrompt { .. } => Self::SamplePrompt {
                count: results
                    .iter()
                    .filter_map(|r| match r {
                        SampleResult::SamplePrompt { count, .. } => Some(*count),
                        _ => None,
                    })
                    .sum(),
            },
            SampleResult::Prepare { .. } => Self::Prepare {
                prompt_count: results
                    .iter()
                    .filter_map(|r| match r {
                        SampleResult::Prepare { prompt_count, .. } => Some(*prompt_count),
                        _ => None,
                    })
                    .sum(),
            },
            SampleResult::Loss { .. } => {
                let (mut weighted, mut pixels) = (0.0, 0usize);
                for r in results {
                    if let SampleResult::Loss {
                        value, active_pixels, ..
                    } = r
                    {
                        weighted += value * *active_pixels as f64;
                        pixels += active_pixels;
                    }
                }
                Self::Loss {
                    mean_value: if pixels > 0 { weighted / pixels as f64 } else { 0.0 },
                    active_pixels: pixels,
                }
            }
            SampleResult::Evaluate { .. } => {
                let mut reports = Vec::new();
                let mut fov = Vec::new();
                for r in results {
                    if let SampleResult::Evaluate { metrics, fov_error_deg } = r {
                        reports.push(*metrics);
                        fov.extend(*fov_error_deg);
                    }
                }
                Self::Evaluate {
                    metrics: MetricsReport::merge(&reports)?,
                    mean_fov_error_deg: mean(&fov),
                }
            }
            SampleResult::Boundary { .. } => {
                let reports: Vec<BoundaryReport> = results
                    .iter()
                    .filter_map(|r| match r {
                        SampleResult::Boundary { boundary } => Some(boundary.clone()),
                        _ => None,
                    })
                    .collect();
                Self::Boundary {
                    boundary: BoundaryReport::merge(&reports)?,
                }
            }
            SampleResult::Calib { .. } => {
                let mut rel = Vec::new();
                let mut converged = 0;
                for r in results {
                    if let SampleResult::Calib {
                        estimate,
                        relative_error,
                        ..
                    } = r
                    {
                        converged += usize::from(estimate.converged);
                        rel.extend(*relative_error);
                    }
                }
                Self::Calib {
                    samples: results.len(),
                    converged,
                    mean_relative_error: mean(&rel),
                    max_relative_error: rel.iter().cloned().reduce(f64::max),
                }
            }
            SampleResult::Gradcheck { .. } => {
                let mut worst = BTreeMap::new();
                let (mut checked, mut skipped) = (0, 0);
                for r in results {
                    if let SampleResult::Gradcheck { report } = r {
                        let e = worst.entry(report.loss.name().to_string()).or_insert(0.0f64);
                        *e = e.max(report.max_rel_error);
                        checked += report.checked;
                        skipped += report.skipped;
                    }
                }
                Self::Gradcheck {
                    max_rel_error: worst,
                    checked,
                    skipped,
                }
            }
        })
    }
}
