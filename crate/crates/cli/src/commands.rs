//! Argument definitions and the four subcommands.

use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use depthfuse::confidence::{
    check_confidence_map, oracle_dense_confidence, oracle_sparse_confidence, ConfidenceParams, ConfidenceSource,
};
use depthfuse::io::{read_grid, read_points, write_grid, write_points, PointList};
use depthfuse::metrics::{rmse_depth, scale_invariant_error, EvalResult};
use depthfuse::solver::fuse_log;
use depthfuse::{
    from_log_depth, to_log_depth, DensePrediction, FusionParams, ImageGrid, SolveMode, SparseDepthMap, ValidityMask,
};

use crate::experiment::{
    argmin, load_corpus, sweep, sweep_csv, ConfidenceMode, CorpusSpec, Instance, SweepSpec, DENSE_FILE, GT_FILE,
    INTENSITY_FILE, OUTLIER_FILE, SPARSE_FILE,
};
use crate::report::{render, ReportFormat};

#[derive(Debug, Parser)]
#[command(name = "depthfuse", version, about = "Fuse sparse and dense depth maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output format for result rows on stdout.
    #[arg(long, value_enum, default_value_t = ReportFormat::Table, global = true)]
    pub report: ReportFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a sparse point list with a dense prediction.
    Fuse(FuseArgs),
    /// Score a depth map against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic scene with degraded observations.
    Synth(SynthArgs),
    /// Evaluate a grid of beta and gamma values on a corpus.
    Sweep(SweepArgs),
}

/// Solver settings shared by `fuse` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    /// Regularizer added to dense confidences.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Relative residual at which CG stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Plain CG instead of Jacobi-preconditioned CG.
    #[arg(long)]
    pub no_preconditioner: bool,
}

impl SolverArgs {
    fn params(&self, beta: f64, gamma: f64) -> FusionParams {
        FusionParams {
            alpha: self.alpha,
            beta,
            gamma,
            epsilon: self.epsilon,
            cg_tolerance: self.tol,
            cg_max_iters: self.max_iters,
            preconditioner: !self.no_preconditioner,
            mode: if self.alpha == 0.0 { SolveMode::GaugeFixed } else { SolveMode::Standard },
        }
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Sparse point list (`width height` header, then `x y depth [confidence]`).
    #[arg(long)]
    pub sparse: Option<PathBuf>,
    /// Dense depth prediction grid (.pfm or .csv).
    #[arg(long)]
    pub dense: PathBuf,
    /// `const:<v>`, `file:<grid>` or `oracle:<ground-truth depth grid>`;
    /// defaults to the point list's confidence column.
    #[arg(long)]
    pub conf_sparse: Option<ConfidenceSource>,
    /// `const:<v>`, `file:<grid>` or `oracle:<ground-truth depth grid>`;
    /// defaults to 1.
    #[arg(long)]
    pub conf_dense: Option<ConfidenceSource>,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub gamma: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Target mean log-depth for sparse oracle confidences; defaults to the
    /// ground truth's own mean over the triangulated region.
    #[arg(long)]
    pub target_mean: Option<f64>,
    /// Fused depth grid (.pfm or .csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Solver report as JSON; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted depth grid.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth depth grid.
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluation mask grid (values > 0.5 are evaluated); defaults to
    /// pixels where both depths are positive.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// TOML file with `[scene]`, `[degradation]` and `[dense]` tables and
    /// optional `count` and `base_seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the first instance; later ones add their index.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of instances.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Planes per scene.
    #[arg(long)]
    pub planes: Option<usize>,
    /// Fraction of pixels kept in the sparse map.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    /// Fraction of sparse points multiplied by a random outlier factor.
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// Standard deviation of log-depth noise on sparse points.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Factor applied to every sparse depth.
    #[arg(long)]
    pub global_scale: Option<f64>,
}

impl CorpusArgs {
    pub fn spec(&self) -> anyhow::Result<CorpusSpec> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => CorpusSpec::default(),
        };
        if let Some(v) = self.seed {
            spec.base_seed = v;
        }
        if let Some(v) = self.count {
            spec.count = v;
        }
        if let Some(v) = self.width {
            spec.scene.width = v;
        }
        if let Some(v) = self.height {
            spec.scene.height = v;
        }
        if let Some(v) = self.planes {
            spec.scene.plane_count = v;
        }
        if let Some(v) = self.keep_fraction {
            spec.degradation.keep_fraction = v;
        }
        if let Some(v) = self.outlier_fraction {
            spec.degradation.outlier_fraction = v;
        }
        if let Some(v) = self.noise {
            spec.degradation.noise_sigma_log = v;
        }
        if let Some(v) = self.global_scale {
            spec.degradation.global_scale = v;
        }
        spec.scene.validate()?;
        spec.degradation.validate()?;
        if spec.count == 0 {
            bail!("count must be at least 1");
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output directory. A single instance (the default without a config
    /// file) is written directly into it; otherwise each instance goes into
    /// an `instance_NNN` subdirectory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated beta values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub betas: Vec<f64>,
    /// Comma-separated gamma values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gammas: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Directory of instance directories written by `synth`; when absent a
    /// synthetic corpus is generated in memory.
    #[arg(long, conflicts_with = "config")]
    pub corpus_dir: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Sparse confidences: `oracle` or `const`.
    #[arg(long, default_value = "oracle")]
    pub sparse_conf: ConfidenceMode,
    /// Dense confidences: `oracle` or `const`.
    #[arg(long, default_value = "oracle")]
    pub dense_conf: ConfidenceMode,
    /// Worker threads.
    #[arg(long, default_value = "1")]
    pub jobs: NonZeroUsize,
    /// CSV destination; rows also go to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Results were written but the solver hit its iteration cap.
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 1,
        }
    }
}

/// Runs a parsed command line, writing result rows to `stdout`. Errors are
/// usage or input errors.
pub fn run(cli: &Cli, stdout: &mut impl Write) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Fuse(args) => cmd_fuse(args, cli.report, stdout),
        Command::Eval(args) => cmd_eval(args, cli.report, stdout),
        Command::Synth(args) => cmd_synth(args, cli.report, stdout),
        Command::Sweep(args) => cmd_sweep(args, cli.report, stdout),
    }
}

#[derive(Debug, Serialize)]
struct FuseReport {
    width: usize,
    height: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
    iterations: usize,
    final_relative_residual: f64,
    converged: bool,
    wall_time_ms: f64,
}

fn read_depth(path: &Path) -> anyhow::Result<ImageGrid> {
    read_grid(path).with_context(|| format!("reading {}", path.display()))
}

fn read_log_depth(path: &Path) -> anyhow::Result<ImageGrid> {
    let depth = read_depth(path)?;
    let all = ValidityMask::all(depth.width(), depth.height());
    to_log_depth(&depth, &all).with_context(|| format!("{} must hold positive depths", path.display()))
}

fn read_confidence(path: &Path, shape: (usize, usize)) -> anyhow::Result<ImageGrid> {
    let grid = read_depth(path)?;
    if grid.shape() != shape {
        bail!("{} is {:?}, expected {:?}", path.display(), grid.shape(), shape);
    }
    check_confidence_map(&grid).with_context(|| format!("confidence map {}", path.display()))?;
    Ok(grid)
}

fn cmd_fuse(args: &FuseArgs, format: ReportFormat, stdout: &mut impl Write) -> anyhow::Result<Outcome> {
    let params = args.solver.params(args.beta, args.gamma);
    let dense_log = read_log_depth(&args.dense)?;
    let shape = dense_log.shape();

    let sparse = match &args.sparse {
        Some(path) => read_points(path)
            .and_then(|p| p.to_sparse_map())
            .with_context(|| format!("reading {}", path.display()))?,
        None if params.alpha > 0.0 => bail!("--sparse is required when --alpha > 0"),
        None => SparseDepthMap::empty(shape.0, shape.1),
    };
    if sparse.shape() != shape {
        bail!("sparse map is {:?} but the dense prediction is {:?}", sparse.shape(), shape);
    }

    let sparse = match &args.conf_sparse {
        None => sparse,
        Some(ConfidenceSource::Constant(v)) => sparse.with_confidence(&ImageGrid::filled(shape.0, shape.1, *v))?,
        Some(ConfidenceSource::File(path)) => sparse.with_confidence(&read_confidence(path, shape)?)?,
        Some(ConfidenceSource::Oracle(path)) => {
            let gt = read_log_depth(path)?;
            let c = oracle_sparse_confidence(&sparse, &gt, &ConfidenceParams::sparse_default(), args.target_mean)?;
            sparse.with_confidence(&c)?
        }
    };
    let dense_confidence = match &args.conf_dense {
        None => ImageGrid::filled(shape.0, shape.1, 1.0),
        Some(ConfidenceSource::Constant(v)) => ImageGrid::filled(shape.0, shape.1, *v),
        Some(ConfidenceSource::File(path)) => read_confidence(path, shape)?,
        Some(ConfidenceSource::Oracle(path)) => {
            let gt = read_log_depth(path)?;
            let unit = DensePrediction::new(dense_log.clone(), ImageGrid::filled(shape.0, shape.1, 1.0))?;
            oracle_dense_confidence(&unit, &gt, &ConfidenceParams::dense_default())?
        }
    };
    let dense = DensePrediction::new(dense_log, dense_confidence)?;

    let solve = fuse_log(&sparse, &dense, &params)?;
    write_grid(&args.out, &from_log_depth(&solve.solution)?)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let report = FuseReport {
        width: shape.0,
        height: shape.1,
        alpha: params.alpha,
        beta: params.beta,
        gamma: params.gamma,
        iterations: solve.iterations,
        final_relative_residual: solve.final_relative_residual,
        converged: solve.converged,
        wall_time_ms: solve.wall_time.as_secs_f64() * 1e3,
    };
    let report_path = args.report_out.clone().unwrap_or_else(|| {
        let mut name = args.out.as_os_str().to_owned();
        name.push(".report.json");
        PathBuf::from(name)
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    write!(stdout, "{}", render(&[&report], format))?;
    Ok(if solve.converged { Outcome::Success } else { Outcome::NotConverged })
}

fn cmd_eval(args: &EvalArgs, format: ReportFormat, stdout: &mut impl Write) -> anyhow::Result<Outcome> {
    let pred = read_depth(&args.pred)?;
    let gt = read_depth(&args.gt)?;
    if pred.shape() != gt.shape() {
        bail!("prediction is {:?} but ground truth is {:?}", pred.shape(), gt.shape());
    }
    let (w, h) = gt.shape();
    let (mask, mask_name) = match &args.mask {
        Some(path) => {
            let grid = read_depth(path)?;
            if grid.shape() != (w, h) {
                bail!("mask {} is {:?}, expected {:?}", path.display(), grid.shape(), (w, h));
            }
            (ValidityMask::from_grid(&grid), path.display().to_string())
        }
        None => (
            ValidityMask::from_predicate(&pred, |d| d > 0.0).and(&ValidityMask::from_predicate(&gt, |d| d > 0.0))?,
            "positive".to_string(),
        ),
    };
    let log_pred = to_log_depth(&pred, &mask).context("prediction")?;
    let log_gt = to_log_depth(&gt, &mask).context("ground truth")?;
    let si = scale_invariant_error(&log_pred, &log_gt, &mask)?;
    let rmse = rmse_depth(&pred, &gt, &mask)?;
    let row = |metric: &str, value: f64| EvalResult {
        metric: metric.into(),
        value,
        pixel_count: mask.count(),
        mask: mask_name.clone(),
    };
    let rows = [row("si_error", si), row("si_error_squared", si * si), row("rmse_depth", rmse)];
    write!(stdout, "{}", render(&rows, format))?;
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct SynthRow {
    directory: String,
    scene_seed: u64,
    sparse_points: usize,
    outliers: usize,
}

fn cmd_synth(args: &SynthArgs, format: ReportFormat, stdout: &mut impl Write) -> anyhow::Result<Outcome> {
    let mut spec = args.corpus.spec()?;
    if args.corpus.count.is_none() && args.corpus.config.is_none() {
        spec.count = 1;
    }
    let mut rows = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let dir = if spec.count == 1 { args.out_dir.clone() } else { args.out_dir.join(format!("instance_{k:03}")) };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let inst = spec.instance(k)?;
        write_grid(&dir.join(GT_FILE), &inst.scene.depth)?;
        write_grid(&dir.join(INTENSITY_FILE), &inst.scene.intensity)?;
        write_grid(&dir.join(DENSE_FILE), &from_log_depth(inst.dense.log_depth())?)?;
        write_points(&dir.join(SPARSE_FILE), &PointList::from_sparse_map(&inst.sparse.map))?;
        write_grid(&dir.join(OUTLIER_FILE), &inst.sparse.outliers.to_grid())?;
        rows.push(SynthRow {
            directory: dir.display().to_string(),
            scene_seed: spec.base_seed + k as u64,
            sparse_points: inst.sparse.map.valid_count(),
            outliers: inst.sparse.outliers.count(),
        });
    }
    write!(stdout, "{}", render(&rows, format))?;
    Ok(Outcome::Success)
}

fn cmd_sweep(args: &SweepArgs, format: ReportFormat, stdout: &mut impl Write) -> anyhow::Result<Outcome> {
    let instances: Vec<Instance> = match &args.corpus_dir {
        Some(dir) => load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?,
        None => {
            let spec = args.corpus.spec()?;
            (0..spec.count)
                .map(|k| spec.instance(k).map(|s| Instance::from(&s)))
                .collect::<depthfuse::Result<_>>()?
        }
    };
    let spec = SweepSpec {
        base: args.solver.params(0.0, 0.0),
        betas: args.betas.clone(),
        gammas: args.gammas.clone(),
        sparse_mode: args.sparse_conf,
        dense_mode: args.dense_conf,
    };
    let rows = sweep(&spec, &instances, args.jobs)?;
    if let Some(path) = &args.out {
        std::fs::write(path, sweep_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    }
    write!(stdout, "{}", render(&rows, format))?;
    if let Some(best) = argmin(&rows) {
        log::info!("lowest error {:.6} at beta {} gamma {}", rows[best].error, rows[best].beta, rows[best].gamma);
    }
    Ok(if rows.iter().all(|r| r.converged) { Outcome::Success } else { Outcome::NotConverged })
}
