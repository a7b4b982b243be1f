//! Command-line front end. Every run writes its artifacts plus a
//! `manifest.json` into the output directory.

mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diffusion::{self, DEFAULT_DELTA, DEFAULT_REPS};
use crate::distributions::{self, DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::glmm::{self, ErrorVarianceMode, FitOptions, FittedGlmm, DEFAULT_NAGQ};
use crate::gof::{self, GofReport, DEFAULT_BINS};
use crate::ingest::{self, ResponseModel, SynthDesign, SynthTruth};
use crate::reconstruction;
use crate::responses::{self, MixtureModel, ResponseProbTable};

pub use manifest::{sha256_file, Manifest, MANIFEST_NAME};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub const OUT_DIR_ENV: &str = "RTGLMM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "rtglmm",
    version,
    about = "Reaction-time GLMMs and one-barrier diffusion reconstructions"
)]
pub struct Cli {
    /// Master seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory receiving artifacts and the manifest.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for Monte Carlo replicates (outputs do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Draw RTs from an IG or Gamma law, exactly or through the Euler diffusion.
    Simulate(SimulateArgs),
    /// Generate a trial-level dataset from known GLMM parameters.
    Synthesize(SynthesizeArgs),
    /// Fit the conditional GLMM for one response label.
    Fit(FitArgs),
    /// Per-level response relative frequencies.
    Probs(ProbsArgs),
    /// Diffusion implied by a fitted model at one level, with simulated check.
    Reconstruct(ReconstructArgs),
    /// Response-weighted mixture of conditional RT laws at one level.
    Mixture(MixtureArgs),
    /// Re-run the command recorded in a manifest and verify its artifacts.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Synthesize(_) => "synthesize",
            Command::Fit(_) => "fit",
            Command::Probs(_) => "probs",
            Command::Reconstruct(_) => "reconstruct",
            Command::Mixture(_) => "mixture",
            Command::Replay(_) => "replay",
        }
    }
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse()
        .map_err(|_| format!("unknown family `{s}` (expected ig or gamma)"))
}

fn parse_mode(s: &str) -> std::result::Result<ErrorVarianceMode, String> {
    s.parse().map_err(|_| {
        format!("unknown error-variance mode `{s}` (expected exact or paper_compatible)")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    /// Independent draws from the distribution.
    Exact,
    /// Euler first-hitting times of the diffusion whose hitting law is the distribution.
    Diffusion,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Gamma shape (alternative to --mu/--phi).
    #[arg(long)]
    pub shape: Option<f64>,
    /// Gamma scale (alternative to --mu/--phi).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Estimate the parameters from the `rt_seconds` column of this CSV instead.
    #[arg(long, conflicts_with_all = ["mu", "phi", "shape", "scale"])]
    pub from_sample: Option<PathBuf>,
    /// Sample size (replicates for the diffusion method).
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = SimMethod::Exact)]
    pub method: SimMethod,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthesizeArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long)]
    pub levels: usize,
    #[arg(long)]
    pub subjects: usize,
    /// Trials per subject and level.
    #[arg(long)]
    pub reps: usize,
    /// Log-means per level; a single value is used for every level.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub beta: Vec<f64>,
    #[arg(long)]
    pub tau2: f64,
    #[arg(long)]
    pub phi: f64,
    #[arg(long, value_delimiter = ',', default_value = "response")]
    pub labels: Vec<String>,
    /// Label probabilities, shared by every level; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub probs: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Trial CSV (`subject_id,level_id,block,response,rt_seconds`).
    #[arg(long)]
    pub data: PathBuf,
    /// Declared number of levels.
    #[arg(long)]
    pub levels: usize,
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long)]
    pub response: String,
    #[arg(long, default_value_t = DEFAULT_NAGQ)]
    pub nagq: usize,
    #[arg(long, value_parser = parse_mode, default_value = "exact")]
    pub error_variance: ErrorVarianceMode,
    /// Refit with this many quadrature nodes and report the log-likelihood difference.
    #[arg(long)]
    pub compare_nagq: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub levels: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// 1-based level.
    #[arg(long)]
    pub level: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MixtureArgs {
    /// Conditional model as LABEL=PATH; repeat for each response label.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Response table written by `probs`.
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long)]
    pub level: usize,
    /// Points of the quantile grid.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    /// Trial CSV to compare the mixture with the pooled empirical CDF.
    #[arg(long, requires = "levels")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::ParameterDomain(_) | Error::Domain(_) => EXIT_USAGE,
        Error::Convergence(_) | Error::ReconstructionRefused(_) | Error::Truncation { .. } => {
            EXIT_CONVERGENCE
        }
        Error::Io(_) => EXIT_IO,
        Error::Csv(e) if e.is_io_error() => EXIT_IO,
        Error::Schema(_)
        | Error::EmptySample
        | Error::DispersionUnderflow { .. }
        | Error::DesignDeficiency { .. }
        | Error::Evaluation { .. }
        | Error::UndefinedProbability { .. }
        | Error::EmptyPartition
        | Error::Csv(_)
        | Error::Json(_) => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let raw: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &raw, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command. `raw_args` are the original arguments without the
/// program name; they are recorded in the manifest.
pub fn execute(cli: Cli, raw_args: &[String], out: &mut dyn Write) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {:?} threads: {e}", cli.threads)))?;
    let mut buffer = Vec::new();
    let result = pool.install(|| dispatch(cli, raw_args, &mut buffer));
    out.write_all(&buffer)?;
    result
}

fn dispatch(cli: Cli, raw_args: &[String], out: &mut dyn Write) -> Result<()> {
    if let Command::Replay(args) = &cli.command {
        return replay(&args.manifest, &cli.out_dir, cli.threads, out);
    }
    std::fs::create_dir_all(&cli.out_dir)?;
    let mut ctx = RunContext {
        out_dir: cli.out_dir.clone(),
        seed: cli.seed,
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &mut ctx, out),
        Command::Synthesize(a) => cmd_synthesize(a, &mut ctx, out),
        Command::Fit(a) => cmd_fit(a, &mut ctx, out),
        Command::Probs(a) => cmd_probs(a, &mut ctx, out),
        Command::Reconstruct(a) => cmd_reconstruct(a, &mut ctx, out),
        Command::Mixture(a) => cmd_mixture(a, &mut ctx, out),
        Command::Replay(_) => unreachable!("handled above"),
    };
    if !ctx.outputs.is_empty() {
        let manifest = ctx.manifest(&cli.command, raw_args)?;
        let path = manifest.save(&ctx.out_dir)?;
        writeln!(out, "manifest: {}", path.display())?;
    }
    result
}

struct RunContext {
    out_dir: PathBuf,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl RunContext {
    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Path for artifact `name` (relative, `/`-separated), recorded for the manifest.
    fn output(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn gof(&mut self, report: &GofReport, dir: &str) -> Result<()> {
        let written = report.write_dir(&self.out_dir.join(dir))?;
        for p in written {
            let file = p
                .file_name()
                .expect("report files have names")
                .to_string_lossy();
            self.outputs.push(format!("{dir}/{file}"));
        }
        Ok(())
    }

    fn manifest(&self, command: &Command, raw_args: &[String]) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.out_dir.join(name))?);
        }
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.name().to_string(),
            args: manifest::strip_run_flags(raw_args),
            options: serde_json::to_value(command)?,
            seed: self.seed,
            inputs: self.inputs.clone(),
            outputs,
        })
    }
}

fn simulate_spec(a: &SimulateArgs, ctx: &mut RunContext) -> Result<DistributionSpec> {
    if let Some(path) = &a.from_sample {
        ctx.input(path)?;
        let sample = read_rt_column(path)?;
        return distributions::fit_marginal(&sample, a.family);
    }
    match (a.family, a.mu, a.phi, a.shape, a.scale) {
        (Family::InverseGaussian, Some(mu), Some(phi), None, None) => DistributionSpec::ig(mu, phi),
        (Family::Gamma, Some(mu), Some(phi), None, None) => {
            DistributionSpec::from_mean_dispersion(Family::Gamma, mu, phi)
        }
        (Family::Gamma, None, None, Some(shape), Some(scale)) => {
            DistributionSpec::gamma(shape, scale)
        }
        (Family::InverseGaussian, ..) => Err(Error::Usage("ig needs --mu and --phi".into())),
        (Family::Gamma, ..) => Err(Error::Usage(
            "gamma needs either --mu and --phi or --shape and --scale".into(),
        )),
    }
}

/// Reads the `rt_seconds` (or `hitting_time_seconds`) column of a CSV.
fn read_rt_column(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "rt_seconds" || h == "hitting_time_seconds")
        .ok_or_else(|| Error::Schema(format!("{} has no rt_seconds column", path.display())))?;
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let v: f64 = row
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| {
                Error::Schema(format!(
                    "row {} of {} has no numeric RT",
                    i + 1,
                    path.display()
                ))
            })?;
        values.push(v);
    }
    Ok(values)
}

fn cmd_simulate(a: &SimulateArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    let spec = simulate_spec(a, ctx)?;
    writeln!(out, "law: {spec}")?;
    match a.method {
        SimMethod::Exact => {
            let sample = distributions::sample(&spec, a.n, ctx.seed)?;
            let mut w = csv::Writer::from_path(ctx.output("sample.csv")?)?;
            w.write_record(["index", "rt_seconds"])?;
            for (i, y) in sample.iter().enumerate() {
                w.write_record([i.to_string(), y.to_string()])?;
            }
            w.flush()?;
            writeln!(out, "wrote {} draws", sample.len())?;
        }
        SimMethod::Diffusion => {
            let dspec = match spec {
                DistributionSpec::InverseGaussian(p) => {
                    diffusion::ig_scheme_spec(p.mu, p.phi, a.delta)?
                }
                DistributionSpec::Gamma(p) => {
                    diffusion::gamma_scheme_spec(p.shape, p.scale, a.delta)?
                }
            };
            let sample = diffusion::simulate_checked(&dspec, a.n, ctx.seed)?;
            sample.save_csv(&ctx.output("fht.csv")?)?;
            let report = GofReport::new(&sample.times, &spec, a.bins)?;
            ctx.gof(&report, "gof")?;
            writeln!(
                out,
                "wrote {} hitting times ({} truncated); {}: D = {:.4}, p = {:.4}",
                sample.len(),
                sample.truncated_count,
                report.test,
                report.ks_statistic,
                report.ks_pvalue
            )?;
        }
    }
    Ok(())
}

fn cmd_synthesize(a: &SynthesizeArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    let beta = match a.beta.len() {
        1 => vec![a.beta[0]; a.levels],
        n if n == a.levels => a.beta.clone(),
        n => {
            return Err(Error::Usage(format!(
                "--beta has {n} values for {} levels",
                a.levels
            )))
        }
    };
    let probs = if a.probs.is_empty() {
        vec![1.0 / a.labels.len() as f64; a.labels.len()]
    } else if a.probs.len() == a.labels.len() {
        a.probs.clone()
    } else {
        return Err(Error::Usage(format!(
            "--probs has {} values for {} labels",
            a.probs.len(),
            a.labels.len()
        )));
    };
    let labels: Vec<&str> = a.labels.iter().map(String::as_str).collect();
    let truth = SynthTruth {
        beta,
        tau2: a.tau2,
        family: a.family,
        dispersion: a.phi,
        responses: ResponseModel::constant(&labels, &probs, a.levels),
    };
    let design = SynthDesign {
        levels: a.levels,
        subjects: a.subjects,
        reps: a.reps,
    };
    let dataset = ingest::synthesize(design, &truth, ctx.seed)?;
    dataset.save_csv(&ctx.output("trials.csv")?)?;
    let mut text = serde_json::to_string_pretty(&truth)?;
    text.push('\n');
    std::fs::write(ctx.output("truth.json")?, text)?;
    writeln!(
        out,
        "wrote {} trials for {} subjects",
        dataset.len(),
        dataset.subject_count
    )?;
    Ok(())
}

fn load_dataset(
    path: &Path,
    levels: usize,
    ctx: &mut RunContext,
    out: &mut dyn Write,
) -> Result<ingest::TrialDataset> {
    ctx.input(path)?;
    let dataset = ingest::read_csv(path, levels)?;
    if dataset.rejected_total() > 0 {
        let reasons: Vec<String> = dataset
            .rejected
            .iter()
            .map(|(r, n)| format!("{r}={n}"))
            .collect();
        writeln!(
            out,
            "rejected {} rows: {}",
            dataset.rejected_total(),
            reasons.join(", ")
        )?;
    }
    Ok(dataset)
}

fn cmd_fit(a: &FitArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    let dataset = load_dataset(&a.data, a.levels, ctx, out)?;
    let partition = responses::partition_by_response(&dataset)?;
    if partition.label_index(&a.response).is_none() {
        return Err(Error::Usage(format!(
            "response `{}` not in data; available labels: {}",
            a.response,
            partition.labels.join(", ")
        )));
    }
    let subset = dataset.with_response(&a.response);
    let options = FitOptions {
        nagq: a.nagq,
        error_variance_mode: a.error_variance,
        seed: Some(ctx.seed),
        response: Some(a.response.clone()),
        ..FitOptions::default()
    };
    let model = glmm::fit(&subset, a.family, &options)?;
    model.save(&ctx.output("model.json")?)?;

    writeln!(
        out,
        "family: {}  response: {}  nagq: {}",
        model.family, a.response, model.nagq
    )?;
    writeln!(
        out,
        "converged: {}  iterations: {}",
        model.converged, model.iterations
    )?;
    writeln!(out, "loglik: {:.6}", model.loglik)?;
    writeln!(out, "aic: {:.6}", model.aic)?;
    writeln!(
        out,
        "tau2: {:.6}  dispersion: {:.6}",
        model.tau2, model.dispersion
    )?;
    if model.converged {
        for level in 1..=model.level_count() {
            let ci = match glmm::wald_ci(&model, level, 0.95)? {
                Some((lo, hi)) => format!("[{lo:.4}, {hi:.4}]"),
                None => "unavailable".to_string(),
            };
            writeln!(
                out,
                "beta[{level}]: {:.6}  95% CI {ci}",
                model.beta[level - 1]
            )?;
        }
    }
    if let Some(other) = a.compare_nagq {
        let alt = glmm::fit(
            &subset,
            a.family,
            &FitOptions {
                nagq: other,
                ..options
            },
        )?;
        writeln!(
            out,
            "loglik(nagq={other}): {:.6}  difference vs nagq={}: {:.6e}",
            alt.loglik,
            a.nagq,
            alt.loglik - model.loglik
        )?;
    }
    if !model.converged {
        return Err(Error::Convergence(format!(
            "optimizer stopped after {} iterations with gradient {:.3e}; model.json is marked converged=false",
            model.iterations, model.gradient_max
        )));
    }
    Ok(())
}

fn cmd_probs(a: &ProbsArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    let dataset = load_dataset(&a.data, a.levels, ctx, out)?;
    let partition = responses::partition_by_response(&dataset)?;
    let table = responses::response_probs(&partition, &dataset)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    table.save_csv(&ctx.output("probs.csv")?)?;
    writeln!(
        out,
        "labels: {}  levels: {}  missing responses: {}",
        table.labels.join(", "),
        table.level_count(),
        partition.dropped
    )?;
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    ctx.input(&a.model)?;
    let model = FittedGlmm::load(&a.model)?;
    let rec = reconstruction::glmm_to_diffusion(&model, a.level, a.delta)?;
    rec.save(&ctx.output("reconstruction.json")?)?;
    let sample = diffusion::simulate_checked(&rec.diffusion, a.reps, ctx.seed)?;
    sample.save_csv(&ctx.output("fht.csv")?)?;
    let report = GofReport::new(&sample.times, &rec.implied_marginal, a.bins)?;
    ctx.gof(&report, "gof")?;
    writeln!(
        out,
        "level {}: mean {:.6}  variance {:.6}",
        a.level, rec.mean, rec.variance
    )?;
    writeln!(
        out,
        "diffusion: start {:?}  drift {:.6}  delta {}",
        rec.diffusion.start, rec.diffusion.drift, rec.diffusion.delta
    )?;
    writeln!(
        out,
        "{}: D = {:.4}, p = {:.4}",
        report.test, report.ks_statistic, report.ks_pvalue
    )?;
    Ok(())
}

fn parse_model_arg(arg: &str, ctx: &mut RunContext) -> Result<(String, FittedGlmm)> {
    let (label, path) = match arg.split_once('=') {
        Some((l, p)) => (Some(l.to_string()), PathBuf::from(p)),
        None => (None, PathBuf::from(arg)),
    };
    ctx.input(&path)?;
    let model = FittedGlmm::load(&path)?;
    let label = label.or_else(|| model.response.clone()).ok_or_else(|| {
        Error::Usage(format!(
            "give --model LABEL={arg}; the model records no response label"
        ))
    })?;
    Ok((label, model))
}

fn cmd_mixture(a: &MixtureArgs, ctx: &mut RunContext, out: &mut dyn Write) -> Result<()> {
    if a.grid == 0 {
        return Err(Error::Usage("--grid must be at least 1".into()));
    }
    ctx.input(&a.probs)?;
    let table = ResponseProbTable::read_csv(&a.probs)?;
    let weights = table.weights(a.level).map_err(|_| {
        Error::Usage(format!(
            "{} has no weight row for level {}",
            a.probs.display(),
            a.level
        ))
    })?;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Usage(format!(
            "weight row for level {} is incomplete",
            a.level
        )));
    }
    let mut models = BTreeMap::new();
    for arg in &a.models {
        let (label, model) = parse_model_arg(arg, ctx)?;
        models.insert(label, model);
    }
    for label in models.keys() {
        if !table.labels.contains(label) {
            return Err(Error::Usage(format!(
                "model label `{label}` not in the response table ({})",
                table.labels.join(", ")
            )));
        }
    }
    let mut labels = Vec::new();
    let mut components = Vec::new();
    let mut used = Vec::new();
    for (label, &w) in table.labels.iter().zip(weights) {
        let Some(model) = models.get(label) else {
            if w > 0.0 {
                return Err(Error::Usage(format!(
                    "no model given for response `{label}` (weight {w})"
                )));
            }
            continue;
        };
        let mean = glmm::marginal_mean(model, a.level)?;
        let var = glmm::marginal_variance(model, a.level)?;
        labels.push(label.clone());
        components.push(DistributionSpec::from_moments(model.family, mean, var)?);
        used.push(w);
    }
    let total: f64 = used.iter().sum();
    let used: Vec<f64> = used.iter().map(|w| w / total).collect();
    let mixture = MixtureModel::constant(labels.clone(), components.clone(), vec![used.clone()])?;

    let mut w = csv::Writer::from_path(ctx.output("mixture.csv")?)?;
    let mut header = vec!["rt_seconds".to_string(), "mixture_cdf".to_string()];
    header.extend(labels.iter().map(|l| format!("cdf_{l}")));
    w.write_record(&header)?;
    for k in 0..a.grid {
        let p = (k as f64 + 0.5) / a.grid as f64;
        let y = responses::mixture_quantile(&mixture, 1, p)?;
        let mut row = vec![
            y.to_string(),
            responses::mixture_cdf(&mixture, 1, y)?.to_string(),
        ];
        for c in &components {
            row.push(distributions::cdf(c, y)?.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(ctx.output("weights.csv")?)?;
    w.write_record(["label", "weight"])?;
    for (l, p) in labels.iter().zip(&used) {
        w.write_record([l.clone(), p.to_string()])?;
    }
    w.flush()?;
    writeln!(out, "level {}: {} components", a.level, labels.len())?;

    if let (Some(data), Some(levels)) = (&a.data, a.levels) {
        let dataset = load_dataset(data, levels, ctx, out)?;
        let pooled: Vec<f64> = dataset
            .records
            .iter()
            .filter(|r| {
                r.level_id == a.level && r.response.as_ref().is_some_and(|l| labels.contains(l))
            })
            .map(|r| r.rt)
            .collect();
        let d = gof::ks_statistic_with(&pooled, |y| responses::mixture_cdf(&mixture, 1, y))?;
        let n = pooled.len();
        let critical = gof::ks_critical_value(n as f64, 0.05)?;
        let summary = serde_json::json!({
            "test": gof::KS_LABEL,
            "level_id": a.level,
            "n": n,
            "ks_statistic": d,
            "ks_pvalue": gof::kolmogorov_sf((n as f64).sqrt() * d),
            "critical_value_0_05": critical,
        });
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        std::fs::write(ctx.output("mixture_gof.json")?, text)?;
        writeln!(
            out,
            "pooled data: n = {n}, D = {d:.4}, 5% critical value {critical:.4}"
        )?;
    }
    Ok(())
}

fn replay(
    manifest_path: &Path,
    out_dir: &Path,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let recorded = Manifest::load(manifest_path)?;
    let mut argv = vec!["rtglmm".to_string()];
    argv.extend(recorded.args.iter().cloned());
    argv.extend(["--seed".to_string(), recorded.seed.to_string()]);
    argv.extend(["--out-dir".to_string(), out_dir.display().to_string()]);
    if let Some(t) = threads {
        argv.extend(["--threads".to_string(), t.to_string()]);
    }
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Usage("a manifest cannot record a replay".into()));
    }
    for (path, digest) in &recorded.inputs {
        if &sha256_file(Path::new(path))? != digest {
            return Err(Error::Schema(format!(
                "input {path} changed since the recorded run"
            )));
        }
    }
    dispatch(cli, &argv[1..], out)?;
    let mut mismatched = Vec::new();
    for (name, digest) in &recorded.outputs {
        if &sha256_file(&out_dir.join(name))? != digest {
            mismatched.push(name.clone());
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Schema(format!(
            "replayed artifacts differ: {}",
            mismatched.join(", ")
        )));
    }
    writeln!(out, "reproduced {} artifacts", recorded.outputs.len())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn defaults_mirror_the_reference_setup() {
        let cli = parse(&["rtglmm", "reconstruct", "--model", "m.json", "--level", "1"]);
        let Command::Reconstruct(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.delta, 0.01);
        assert_eq!(a.reps, 500);
        assert_eq!(cli.seed, 0);
    }

    #[test]
    fn negative_betas_parse() {
        let cli = parse(&[
            "rtglmm",
            "synthesize",
            "--family",
            "gamma",
            "--levels",
            "2",
            "--subjects",
            "3",
            "--reps",
            "1",
            "--beta",
            "-0.5,0.2",
            "--tau2",
            "0.1",
            "--phi",
            "0.3",
        ]);
        let Command::Synthesize(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.beta, vec![-0.5, 0.2]);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Usage(String::new())),
            exit_code(&Error::Schema(String::new())),
            exit_code(&Error::Convergence(String::new())),
            exit_code(&Error::Io(std::io::Error::other("x"))),
        ];
        assert_eq!(codes, [EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE, EXIT_IO]);
    }

    #[test]
    fn unknown_family_is_a_usage_error() {
        assert_eq!(
            run(["rtglmm", "simulate", "--family", "normal", "--n", "3"]),
            EXIT_USAGE
        );
    }
}
