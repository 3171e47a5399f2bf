use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use metricforge_cli::config::LossChoice;
use metricforge_cli::formats::DepthFormat;
use metricforge_cli::runner::report_json;
use metricforge_cli::{run, Command, RunConfig, RunOptions};

/// Metric depth toolkit: projection, sparse prompts, losses, evaluation
/// and focal calibration over a dataset manifest.
#[derive(Debug, Parser)]
#[command(name = "metricforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Run configuration (JSON); command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed; per-sample seeds are derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Abort on the first failing sample.
    #[arg(long, global = true)]
    strict: bool,

    /// Zero the timestamps so identical runs give identical reports.
    #[arg(long, global = true)]
    fixed_clock: bool,

    /// Output directory for artifacts and report.json; without it the
    /// report goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Objective for `loss`.
    #[arg(long, global = true, value_enum)]
    loss: Option<LossChoice>,

    /// Fixed prompt size instead of a random size from the band.
    #[arg(long, global = true)]
    prompt_count: Option<usize>,

    /// Anchors per pixel in the prompt scale field.
    #[arg(long, global = true)]
    neighbors: Option<usize>,

    /// Comma-separated contour thresholds in percent.
    #[arg(long, global = true, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,

    /// Encoding of written depth maps.
    #[arg(long, global = true, value_enum)]
    format: Option<DepthFormat>,

    /// Instances per loss for `gradcheck`.
    #[arg(long, global = true)]
    instances: Option<usize>,
}

impl Cli {
    fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.loss {
            cfg.loss_kind = v;
        }
        if let Some(v) = self.prompt_count {
            cfg.prompt_count = Some(v);
        }
        if let Some(v) = self.neighbors {
            cfg.neighbors = v;
        }
        if let Some(v) = &self.thresholds {
            cfg.boundary_thresholds = v.clone();
        }
        if let Some(v) = self.format {
            cfg.output_format = v;
        }
        if let Some(v) = self.instances {
            cfg.gradcheck.instances = v;
        }
        Ok(cfg)
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    let opts = RunOptions {
        config: cli.resolve_config()?,
        manifest: cli.manifest,
        seed: cli.seed,
        jobs: cli.jobs,
        strict: cli.strict,
        fixed_clock: cli.fixed_clock,
        out: cli.out,
    };
    let report = run(cli.command, &opts).with_context(|| format!("{} failed", cli.command.name()))?;
    if opts.out.is_none() {
        print!("{}", report_json(&report));
    }
    let s = report.summary;
    log::info!("{} of {} sample(s) succeeded", s.succeeded, s.samples);
    Ok(if s.failed > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("METRICFORGE_LOG", "warn")).init();
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
