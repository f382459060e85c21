use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use forcelfd_core::demo::Scenario;

use crate::config::RunConfig;
use crate::error::{io_error, CliError, EXIT_OK};
use crate::pipeline::{self, ReportTable, RunLayout};
use crate::via::ViaSpec;

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_ENV: &str = "FORCELFD_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";
const RUN_PREFIX: &str = "run-";

#[derive(Debug, Parser)]
#[command(name = "forcelfd", version, about = "Learn contact-force profiles from demonstrations and replay them on a simulated probe")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize demonstrations and split them into training and validation halves.
    Generate(StageArgs),
    /// Align the training demonstrations with Soft-DTW.
    Align(StageArgs),
    /// Fit the GMM, build the reference database and train the KMP.
    Train(StageArgs),
    /// Replay the learned force profile on the simulated phantom.
    Reproduce(StageArgs),
    /// Score the reproduction against the validation demonstrations.
    Evaluate(StageArgs),
    /// Concatenate report tables of one or more runs into a single CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Location {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to the newest run under the output root;
    /// `generate` creates a new timestamped one.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// Root for run directories [default: $FORCELFD_OUTPUT_ROOT, else ./runs].
    #[arg(long, value_name = "DIR")]
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioArg {
    Constant,
    Compression,
    Bimodal,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::Constant => Scenario::Constant,
            ScenarioArg::Compression => Scenario::Compression,
            ScenarioArg::Bimodal => Scenario::Bimodal,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, value_enum, help_heading = "Demonstrations")]
    pub scenario: Option<ScenarioArg>,
    #[arg(long, help_heading = "Demonstrations")]
    pub count: Option<usize>,
    /// Standard deviation of the force noise, N.
    #[arg(long, help_heading = "Demonstrations")]
    pub noise: Option<f64>,
    #[arg(long, help_heading = "Demonstrations")]
    pub seed: Option<u64>,
    /// Keep every n-th sample before alignment.
    #[arg(long, help_heading = "Demonstrations")]
    pub subsample: Option<usize>,

    /// Soft-DTW smoothing.
    #[arg(long, help_heading = "Alignment")]
    pub gamma: Option<f64>,
    /// `medoid` or an index into the training split.
    #[arg(long, help_heading = "Alignment")]
    pub reference: Option<String>,

    #[arg(long, help_heading = "Model")]
    pub components: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub gmm_seed: Option<u64>,
    /// Choose the component count by BIC.
    #[arg(long, help_heading = "Model")]
    pub bic: bool,
    #[arg(long, help_heading = "Model")]
    pub reference_points: Option<usize>,
    #[arg(long, help_heading = "Model")]
    pub sigma_f: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub lambda: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub lambda_c: Option<f64>,
    #[arg(long, help_heading = "Model")]
    pub via_threshold: Option<f64>,

    #[arg(long, help_heading = "Reproduction")]
    pub phantom: Option<String>,
    /// Via-point `progress:force:variance` or `from-to:force:variance`;
    /// repeatable, replaces the configured list.
    #[arg(long, value_name = "SPEC", help_heading = "Reproduction")]
    pub via: Vec<ViaSpec>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.scenario {
            cfg.scenario.scenario = s.into();
        }
        set(&mut cfg.demo_count, self.count);
        set(&mut cfg.noise_std, self.noise);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.subsample, self.subsample);
        set(&mut cfg.alignment.gamma, self.gamma);
        set(&mut cfg.alignment.reference, self.reference.clone());
        set(&mut cfg.model.components, self.components);
        set(&mut cfg.model.seed, self.gmm_seed);
        cfg.model.select_by_bic |= self.bic;
        set(&mut cfg.model.reference_points, self.reference_points);
        set(&mut cfg.kmp.sigma_f, self.sigma_f);
        set(&mut cfg.kmp.lambda, self.lambda);
        set(&mut cfg.kmp.lambda_c, self.lambda_c);
        set(&mut cfg.kmp.via_threshold, self.via_threshold);
        set(&mut cfg.phantom, self.phantom.clone());
        if !self.via.is_empty() {
            cfg.via_points = self.via.clone();
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub location: Location,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableArg {
    Summary,
    PerDemo,
    Profile,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories; defaults to every evaluated run under the output root.
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "summary")]
    pub table: TableArg,
    /// Write to this file instead of standard output.
    #[arg(long, short, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub output_root: Option<PathBuf>,
}

fn output_root(flag: Option<&Path>, file_config: Option<&RunConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| file_config.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Run directories under `root`, oldest first.
fn list_runs(root: &Path) -> Vec<PathBuf> {
    let mut runs: Vec<PathBuf> = fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(RUN_PREFIX)))
        .collect();
    runs.sort();
    runs
}

fn new_run_dir(root: &Path) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = root.join(format!("{RUN_PREFIX}{stamp}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

/// Run directory and effective configuration of a stage invocation.
pub fn resolve(args: &StageArgs, creating: bool) -> Result<(RunLayout, RunConfig), CliError> {
    let file_config = args.location.config.as_deref().map(RunConfig::load).transpose()?;
    let root = output_root(args.location.output_root.as_deref(), file_config.as_ref());
    let run_dir = match &args.location.run_dir {
        Some(d) => d.clone(),
        None if creating => new_run_dir(&root),
        None => list_runs(&root)
            .pop()
            .ok_or_else(|| CliError::usage(format!("no run directory under {}; pass --run-dir or run `generate` first", root.display())))?,
    };
    let run = RunLayout::new(run_dir);
    let mut cfg = match file_config {
        Some(c) => c,
        None if run.config().is_file() => RunConfig::load(&run.config())?,
        None => RunConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok((run, cfg))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let (run, cfg) = resolve(&args, true)?;
            let m = pipeline::generate(&cfg, &run)?;
            println!("run directory: {}", run.root.display());
            println!(
                "generated {} {} demonstrations ({} training, {} validation)",
                m.count,
                m.scenario,
                m.train.len(),
                m.validation.len()
            );
        }
        Command::Align(args) => {
            let (run, cfg) = resolve(&args, false)?;
            let r = pipeline::align(&cfg, &run)?;
            println!("aligned {} demonstrations onto {}", r.costs.len(), r.reference_id);
        }
        Command::Train(args) => {
            let (run, cfg) = resolve(&args, false)?;
            let d = pipeline::train(&cfg, &run)?;
            println!(
                "trained on {} points: {} components, {} EM iterations (monotone: {}), KL {:.4e}, Gram condition {:.3e}",
                d.data_points, d.components, d.em_iterations, d.log_likelihood_monotone, d.kl_diagnostic, d.gram_condition_number
            );
        }
        Command::Reproduce(args) => {
            let (run, cfg) = resolve(&args, false)?;
            let s = pipeline::reproduce(&cfg, &run)?;
            println!(
                "reproduced {} steps, {} frames; scan force mean {:.3} N, RMSE to target {:.4} N ({} via-points)",
                s.records,
                s.frames,
                s.scan_force_mean,
                s.scan_force_rmse,
                s.via_points.len()
            );
        }
        Command::Evaluate(args) => {
            let (run, cfg) = resolve(&args, false)?;
            let r = pipeline::evaluate(&cfg, &run)?;
            print!("{}", r.summary_csv());
        }
        Command::Report(args) => {
            let runs = if args.runs.is_empty() {
                let root = output_root(args.output_root.as_deref(), None);
                list_runs(&root)
                    .into_iter()
                    .filter(|r| RunLayout::new(r).reports().join("summary.csv").is_file())
                    .collect()
            } else {
                args.runs
            };
            let table = match args.table {
                TableArg::Summary => ReportTable::Summary,
                TableArg::PerDemo => ReportTable::PerDemo,
                TableArg::Profile => ReportTable::Profile,
            };
            let csv = pipeline::report(&runs, table)?;
            match args.output {
                Some(path) => fs::write(&path, csv).map_err(|e| io_error(&path, e))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the requested stage; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
