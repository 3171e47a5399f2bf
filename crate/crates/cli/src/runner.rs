//! Executes one command over every sample of a manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use metricforge::calibration::estimate_focal;
use metricforge::geometry::{
    make_synthetic_scene, project_points, unproject_depth, CameraIntrinsics, PointMap, RigidTransform, SyntheticScene,
};
use metricforge::losses::{gradcheck_with, robust_mae, ssi_mage, student_loss, teacher_loss, LossKind, LossReport};
use metricforge::metrics::{boundary_f1, depth_metrics, fov_error};
use metricforge::prompting::{gmdr_correct_with_fit, pdsa_refine_with, PromptSampler, SparsePrompt};
use metricforge::DepthGrid;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{LossChoice, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{self, write_depth, write_pfm, write_prompt};
use crate::manifest::{Domain, Manifest, Sample};
use crate::report::REPORT_SCHEMA_VERSION;
use crate::report::{Aggregate, Clock, RunReport, SampleReport, SampleResult, Status, Summary, ToolInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Project sensor point clouds into depth maps.
    Project,
    /// Draw sparse metric prompts from ground-truth depth.
    SamplePrompt,
    /// Build the prompt-refined and globally corrected prior channels.
    Prepare,
    /// Evaluate a training objective between prediction and ground truth.
    Loss,
    /// Depth accuracy metrics.
    Evaluate,
    /// Occluding-contour precision, recall and F1.
    Boundary,
    /// Recover focal lengths from point maps.
    Calib,
    /// Compare analytic loss gradients with finite differences.
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Project => "project",
            Self::SamplePrompt => "sample-prompt",
            Self::Prepare => "prepare",
            Self::Loss => "loss",
            Self::Evaluate => "evaluate",
            Self::Boundary => "boundary",
            Self::Calib => "calib",
            Self::Gradcheck => "gradcheck",
        }
    }

    fn writes_artifacts(self) -> bool {
        matches!(self, Self::Project | Self::SamplePrompt | Self::Prepare)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub manifest: Option<PathBuf>,
    pub config: RunConfig,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub strict: bool,
    pub fixed_clock: bool,
    pub out: Option<PathBuf>,
}

/// Runs `command` and writes `report.json` into the output directory when
/// one is given.
///
/// Per-sample failures are recorded in the report. In strict mode the first
/// failure (in manifest order) is returned as an error instead.
pub fn run(command: Command, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let started_at = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    opts.config.validate()?;
    if command.writes_artifacts() && opts.out.is_none() {
        return Err(CliError::Config(format!(
            "`{}` writes files and needs --out",
            command.name()
        )));
    }

    let tasks: Vec<Task> = match command {
        Command::Gradcheck => gradcheck_tasks(&opts.config),
        _ => {
            let path = opts
                .manifest
                .as_deref()
                .ok_or_else(|| CliError::Config(format!("`{}` needs --manifest", command.name())))?;
            Manifest::load(path)?
                .samples
                .into_iter()
                .map(|s| Task::Sample(Box::new(s)))
                .collect()
        }
    };
    let seeds = derive_seeds(opts.seed, tasks.len());
    info!("{}: {} sample(s)", command.name(), tasks.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(Result<SampleResult>, Vec<String>)> = pool.install(|| {
        tasks
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(task, &seed)| {
                let mut ctx = SampleCtx {
                    cfg: &opts.config,
                    out: opts.out.as_deref(),
                    seed: task.seed_override().unwrap_or(seed),
                    outputs: Vec::new(),
                };
                let result = ctx.execute(command, task);
                (result, ctx.outputs)
            })
            .collect()
    });

    let mut samples = Vec::with_capacity(tasks.len());
    for (index, ((task, seed), (result, outputs))) in tasks.iter().zip(&seeds).zip(outcomes).enumerate() {
        let seed = task.seed_override().unwrap_or(*seed);
        let (status, error, result) = match result {
            Ok(r) => (Status::Ok, None, Some(r)),
            Err(e) => {
                if opts.strict {
                    return Err(e);
                }
                warn!("{e}");
                (Status::Failed, Some(e.to_string()), None)
            }
        };
        samples.push(SampleReport {
            index,
            id: task.id(),
            seed,
            status,
            error,
            outputs,
            result,
        });
    }

    let ok: Vec<&SampleResult> = samples.iter().filter_map(|s| s.result.as_ref()).collect();
    let summary = Summary {
        samples: samples.len(),
        succeeded: ok.len(),
        failed: samples.len() - ok.len(),
    };
    let aggregate = Aggregate::from_results(&ok);
    let clock = if opts.fixed_clock {
        Clock {
            fixed: true,
            started_at_unix_ms: 0,
            duration_ms: 0,
        }
    } else {
        Clock {
            fixed: false,
            started_at_unix_ms: started_at.as_millis() as u64,
            duration_ms: started.elapsed().as_millis() as u64,
        }
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: ToolInfo::current(),
        command: command.name().to_string(),
        seed: opts.seed,
        strict: opts.strict,
        config: opts.config.clone(),
        clock,
        summary,
        samples,
        aggregate,
    };
    if let Some(out) = &opts.out {
        let path = out.join("report.json");
        formats::write_bytes(&path, report_json(&report).as_bytes())?;
        info!("report written to {}", path.display());
    }
    Ok(report)
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// One independent seed per task, drawn in task order from the run seed.
fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

enum Task {
    Sample(Box<Sample>),
    Gradcheck { loss: LossKind, instance: usize },
}

impl Task {
    fn id(&self) -> String {
        match self {
            Self::Sample(s) => s.id.clone(),
            Self::Gradcheck { loss, instance } => format!("{loss}-{instance}"),
        }
    }

    fn seed_override(&self) -> Option<u64> {
        match self {
            Self::Sample(s) => s.seed,
            Self::Gradcheck { .. } => None,
        }
    }
}

fn gradcheck_tasks(cfg: &RunConfig) -> Vec<Task> {
    cfg.gradcheck
        .losses
        .iter()
        .map(|name| name.parse::<LossKind>().expect("validated with the config"))
        .flat_map(|loss| (0..cfg.gradcheck.instances).map(move |instance| Task::Gradcheck { loss, instance }))
        .collect()
}

struct SampleCtx<'a> {
    cfg: &'a RunConfig,
    out: Option<&'a Path>,
    seed: u64,
    outputs: Vec<String>,
}

/// Inputs of one manifest sample, with a generated scene when the sample
/// describes one.
struct Inputs<'s> {
    sample: &'s Sample,
    scene: Option<SyntheticScene>,
}

impl<'s> Inputs<'s> {
    fn new(sample: &'s Sample, seed: u64) -> Result<Self> {
        let scene = sample
            .synthetic
            .map(|src| make_synthetic_scene(src.seed.unwrap_or(seed), &src.scene))
            .transpose()?;
        Ok(Self { sample, scene })
    }

    fn missing(&self, what: &'static str) -> CliError {
        CliError::MissingInput {
            sample: self.sample.id.clone(),
            what,
        }
    }

    fn depth(&self, path: &Option<PathBuf>, what: &'static str) -> Result<DepthGrid> {
        let path = path.as_deref().ok_or_else(|| self.missing(what))?;
        formats::read_depth(path)
    }

    fn gt(&self) -> Result<DepthGrid> {
        match (&self.sample.gt, &self.scene) {
            (Some(p), _) => formats::read_depth(p),
            (None, Some(scene)) => Ok(scene.depth.clone()),
            (None, None) => Err(self.missing("gt")),
        }
    }

    fn has_gt(&self) -> bool {
        self.sample.gt.is_some() || self.scene.is_some()
    }

    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        self.sample
            .intrinsics
            .or(self.scene.as_ref().map(|s| s.intrinsics))
            .ok_or_else(|| self.missing("intrinsics"))
    }
}

impl SampleCtx<'_> {
    fn execute(&mut self, command: Command, task: &Task) -> Result<SampleResult> {
        let sample = match task {
            Task::Gradcheck { loss, .. } => return self.gradcheck(*loss),
            Task::Sample(s) => s,
        };
        debug!("{} {} (seed {})", command.name(), sample.id, self.seed);
        let inputs = Inputs::new(sample, self.seed)?;
        match command {
            Command::Project => self.project(&inputs),
            Command::SamplePrompt => self.sample_prompt(&inputs),
            Command::Prepare => self.prepare(&inputs),
            Command::Loss => self.loss(&inputs),
            Command::Evaluate => self.evaluate(&inputs),
            Command::Boundary => self.boundary(&inputs),
            Command::Calib => self.calib(&inputs),
            Command::Gradcheck => unreachable!("gradcheck runs without a manifest"),
        }
    }

    /// Path for an artifact of `sample`, recorded in the report.
    fn artifact(&mut self, sample: &Sample, name: &str) -> PathBuf {
        let rel = format!("{}/{name}", sample.id);
        let path = self.out.expect("checked before the run").join(&rel);
        self.outputs.push(rel);
        path
    }

    fn depth_name(&self, stem: &str) -> String {
        format!("{stem}.{}", self.cfg.output_format.extension())
    }

    fn project(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let (cloud, pose) = match (&inp.sample.cloud, &inp.scene) {
            (Some(path), _) => (formats::read_cloud(path)?, None),
            (None, Some(scene)) => (scene.cloud.clone(), Some(scene.pose)),
            (None, None) => return Err(inp.missing("cloud")),
        };
        let pose = match inp.sample.pose {
            Some(p) => p.to_transform()?,
            None => pose.unwrap_or_else(RigidTransform::identity),
        };
        let cam = inp.intrinsics()?;
        let grid = project_points(&cloud, &pose, &cam)?;
        let (mut max_err, mut mask_ok) = (None, None);
        if inp.has_gt() {
            let gt = inp.gt()?;
            if gt.dims() == grid.dims() {
                mask_ok = Some(gt.mask() == grid.mask());
                max_err = Some(
                    grid.valid_pixels()
                        .filter_map(|(x, y, d)| gt.get(x, y).map(|g| (d - g).abs()))
                        .fold(0.0, f64::max),
                );
            }
        }
        let path = self.artifact(inp.sample, &self.depth_name("depth"));
        write_depth(&path, &grid)?;
        Ok(SampleResult::Project {
            width: grid.width(),
            height: grid.height(),
            points: cloud.len(),
            valid_pixels: grid.valid_count(),
            max_abs_error_vs_gt: max_err,
            mask_matches_gt: mask_ok,
        })
    }

    /// Prompt drawn from ground truth with this sample's seed.
    fn draw_prompt(&self, gt: &DepthGrid) -> Result<SparsePrompt> {
        let sampler = PromptSampler::new(gt)?;
        Ok(match self.cfg.prompt_count {
            Some(n) => sampler.sample(n, self.seed),
            None => sampler.sample_in_band(self.cfg.prompt_band, self.seed),
        })
    }

    fn sample_prompt(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let gt = inp.gt()?;
        let prompt = self.draw_prompt(&gt)?;
        let path = self.artifact(inp.sample, "prompt.txt");
        write_prompt(&path, &prompt)?;
        Ok(SampleResult::SamplePrompt {
            count: prompt.len(),
            valid_pixels: gt.valid_count(),
        })
    }

    fn prepare(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let prior = inp.depth(&inp.sample.prior, "prior")?;
        let prompt = match &inp.sample.prompt {
            Some(path) => formats::read_prompt(path, prior.width(), prior.height())?,
            None if inp.has_gt() => self.draw_prompt(&inp.gt()?)?,
            None => return Err(inp.missing("prompt")),
        };
        let pdsa = pdsa_refine_with(&prompt, &prior, self.cfg.neighbors)?;
        let (gmdr, fit) = gmdr_correct_with_fit(&prompt, &prior)?;

        let stacked: Vec<f32> = pdsa
            .depth()
            .iter()
            .zip(gmdr.depth())
            .zip(prompt.mask())
            .flat_map(|((&a, &b), m)| [a as f32, b as f32, f32::from(m)])
            .collect();
        let path = self.artifact(inp.sample, "prepared.pfm");
        write_pfm(&path, prior.width(), prior.height(), 3, &stacked)?;
        let path = self.artifact(inp.sample, &self.depth_name("pdsa"));
        write_depth(&path, &pdsa)?;
        let path = self.artifact(inp.sample, &self.depth_name("gmdr"));
        write_depth(&path, &gmdr)?;
        let path = self.artifact(inp.sample, "prompt.txt");
        write_prompt(&path, &prompt)?;
        Ok(SampleResult::Prepare {
            prompt_count: prompt.len(),
            fit,
        })
    }

    fn pred_and_gt(&self, inp: &Inputs) -> Result<(DepthGrid, DepthGrid)> {
        Ok((inp.depth(&inp.sample.pred, "pred")?, inp.gt()?))
    }

    fn loss(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let (pred, gt) = self.pred_and_gt(inp)?;
        let cfg = &self.cfg.loss;
        let report: LossReport = match self.cfg.loss_kind {
            LossChoice::Teacher => teacher_loss(&pred, &gt, cfg, inp.sample.domain() == Domain::Synthetic)?,
            LossChoice::Student => student_loss(&pred, &gt, cfg)?,
            LossChoice::RobustMae => robust_mae(pred.as_map(), gt.as_map(), cfg)?,
            LossChoice::SsiMage => ssi_mage(pred.as_map(), gt.as_map(), cfg)?,
        };
        Ok(SampleResult::Loss {
            kind: self.cfg.loss_kind,
            value: report.value,
            active_pixels: report.active_count(),
            gradient_l2: report.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
        })
    }

    fn evaluate(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let (pred, gt) = self.pred_and_gt(inp)?;
        let metrics = depth_metrics(&pred, &gt)?;
        let fov_error_deg = match inp.sample.pred_focal {
            Some(f) => {
                let cam = inp.intrinsics()?;
                Some(fov_error(f, cam.fx, cam.width as f64)?)
            }
            None => None,
        };
        Ok(SampleResult::Evaluate { metrics, fov_error_deg })
    }

    fn boundary(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let (pred, gt) = self.pred_and_gt(inp)?;
        Ok(SampleResult::Boundary {
            boundary: boundary_f1(&pred, &gt, &self.cfg.boundary_thresholds)?,
        })
    }

    fn calib(&mut self, inp: &Inputs) -> Result<SampleResult> {
        let pmap: PointMap = match (&inp.sample.pointmap, &inp.scene) {
            (Some(path), _) => formats::read_point_map(path)?,
            (None, Some(scene)) => unproject_depth(&scene.depth, &scene.intrinsics)?,
            (None, None) if inp.sample.gt.is_some() => unproject_depth(&inp.gt()?, &inp.intrinsics()?)?,
            (None, None) => return Err(inp.missing("pointmap")),
        };
        let estimate = estimate_focal(&pmap, self.cfg.calib_max_iters, self.cfg.calib_tol)?;
        let reference = inp.intrinsics().ok();
        let reference_focal = reference.map(|c| c.fx);
        let relative_error = reference_focal.map(|f| (estimate.focal - f).abs() / f);
        let fov_error_deg = reference
            .map(|c| fov_error(estimate.focal, c.fx, pmap.width() as f64))
            .transpose()?;
        Ok(SampleResult::Calib {
            estimate,
            reference_focal,
            relative_error,
            fov_error_deg,
        })
    }

    fn gradcheck(&mut self, loss: LossKind) -> Result<SampleResult> {
        let g = &self.cfg.gradcheck;
        let report = gradcheck_with(loss, g.width, g.height, self.seed, &self.cfg.loss, g.step)?;
        Ok(SampleResult::Gradcheck { report })
    }
}
