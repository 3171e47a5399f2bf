//! Run configuration. Values come from built-in defaults, then an optional
//! JSON file, then command-line flags; the resolved values are echoed into
//! every report.

use std::fs;
use std::path::Path;

use metricforge::calibration::{DEFAULT_MAX_ITERS, DEFAULT_TOL};
use metricforge::losses::LossConfig;
use metricforge::metrics::DEFAULT_BOUNDARY_THRESHOLDS;
use metricforge::prompting::PROMPT_COUNT_BAND;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::DepthFormat;

/// Objective evaluated by the `loss` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    /// Pre-training objective on inverse depth; its gradient term is only
    /// used for synthetic-domain samples.
    Teacher,
    /// Distillation objective in distance-balanced log space.
    Student,
    RobustMae,
    SsiMage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub loss_kind: LossChoice,
    /// Fixed prompt size; when absent each sample draws one uniformly from
    /// `prompt_band`.
    pub prompt_count: Option<usize>,
    pub prompt_band: (usize, usize),
    /// Anchors per pixel in the scale field.
    pub neighbors: usize,
    /// Contour thresholds in percent.
    pub boundary_thresholds: Vec<f64>,
    pub calib_max_iters: usize,
    pub calib_tol: f64,
    /// Encoding of depth maps written by the tool.
    pub output_format: DepthFormat,
    pub gradcheck: GradcheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub losses: Vec<String>,
    pub width: usize,
    pub height: usize,
    /// Instances per loss.
    pub instances: usize,
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            losses: ["robust_mae", "ssi_mage", "teacher_loss", "student_loss"]
                .map(String::from)
                .to_vec(),
            width: 32,
            height: 32,
            instances: 1,
            step: metricforge::losses::FD_STEP,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            loss_kind: LossChoice::Teacher,
            prompt_count: None,
            prompt_band: PROMPT_COUNT_BAND,
            neighbors: metricforge::alignment::DEFAULT_NEIGHBORS,
            boundary_thresholds: DEFAULT_BOUNDARY_THRESHOLDS.to_vec(),
            calib_max_iters: DEFAULT_MAX_ITERS,
            calib_tol: DEFAULT_TOL,
            output_format: DepthFormat::Pfm,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.prompt_count == Some(0) {
            return bad("prompt_count must be at least 1");
        }
        if self.prompt_band.0 == 0 || self.prompt_band.0 > self.prompt_band.1 {
            return bad("prompt_band must be a non-empty range of positive counts");
        }
        if self.neighbors == 0 {
            return bad("neighbors must be at least 1");
        }
        if self.boundary_thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("boundary thresholds must be finite and non-negative");
        }
        if !(self.calib_tol.is_finite() && self.calib_tol >= 0.0) {
            return bad("calib_tol must be finite and non-negative");
        }
        let g = &self.gradcheck;
        if g.width == 0 || g.height == 0 || !(g.step > 0.0 && g.step.is_finite()) {
            return bad("gradcheck needs a positive size and step");
        }
        for name in &g.losses {
            name.parse::<metricforge::losses::LossKind>()?;
        }
        Ok(())
    }
}
