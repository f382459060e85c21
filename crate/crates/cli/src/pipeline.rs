//! The pipeline stages. Each stage reads its inputs from a run directory,
//! writes its outputs next to them and returns a summary. Outputs are pure
//! functions of the configuration and the inputs, byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use forcelfd_core::alignment::align_database;
use forcelfd_core::control::{run_reproduction, ScanLog};
use forcelfd_core::demo::{
    extract_features, load_demonstrations, save_demonstrations, synthesize_demonstrations, DemonstrationDatabase,
    FeatureSelector, Scenario,
};
use forcelfd_core::gmm::{build_reference_database, fit_gmm, select_components_bic, uniform_grid, GmmModel};
use forcelfd_core::kmp::{train_kmp, KernelParams, KmpModel, ViaPoint};
use forcelfd_core::metrics::{evaluate_scan, EvaluationReport, ValidationRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{io_error, CliError, EXIT_DIVERGENCE};

const SCHEMA_VERSION: u32 = 1;
/// Largest tolerated drop of the EM log-likelihood between iterations.
const EM_MONOTONE_TOLERANCE: f64 = 1e-9;
const BIC_CANDIDATES: std::ops::RangeInclusive<usize> = 2..=12;
/// Decorrelates the validation-frame stream from the reproduction stream.
const VALIDATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn demos(&self) -> PathBuf {
        self.root.join("demos")
    }
    pub fn manifest(&self) -> PathBuf {
        self.demos().join("manifest.json")
    }
    pub fn aligned(&self) -> PathBuf {
        self.demos().join("aligned")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    write_file(path, text + "\n")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Removes the `*.csv` files directly inside `dir`.
fn clear_csv_files(dir: &Path) -> Result<(), CliError> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    for entry in entries.flatten() {
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "csv") {
            fs::remove_file(&p).map_err(|e| io_error(&p, e))?;
        }
    }
    Ok(())
}

/// Split and provenance of a generated demonstration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub count: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

pub fn generate(cfg: &RunConfig, run: &RunLayout) -> Result<DemoManifest, CliError> {
    cfg.validate()?;
    let db = synthesize_demonstrations(&cfg.scenario, cfg.demo_count, cfg.noise_std, cfg.seed)?;
    let ids: Vec<String> = db.demonstrations.iter().map(|d| d.id.clone()).collect();
    let (train, validation) = ids.split_at(cfg.train_count());
    let manifest = DemoManifest {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.scenario,
        count: cfg.demo_count,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
        train: train.to_vec(),
        validation: validation.to_vec(),
    };
    let dir = run.demos();
    clear_csv_files(&dir)?;
    save_demonstrations(&db, &dir)?;
    write_json(&run.manifest(), &manifest)?;
    write_file(&run.config(), cfg.to_json())?;
    Ok(manifest)
}

fn load_manifest(run: &RunLayout) -> Result<DemoManifest, CliError> {
    let m: DemoManifest = read_json(&run.manifest())?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::data(format!("{}: unsupported schema version {}", run.manifest().display(), m.schema_version)));
    }
    if m.train.iter().any(|id| m.validation.contains(id)) {
        return Err(CliError::data(format!("{}: train and validation splits overlap", run.manifest().display())));
    }
    Ok(m)
}

fn load_split(run: &RunLayout, ids: &[String]) -> Result<DemonstrationDatabase, CliError> {
    let db = load_demonstrations(&run.demos(), &FeatureSelector::default())?;
    db.select(ids).map_err(|e| CliError::data(format!("{}: {e}", run.demos().display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoCost {
    pub id: String,
    pub cost: f64,
}

/// What the alignment stage did, so later stages can reuse its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub schema_version: u32,
    pub gamma: f64,
    pub reference: String,
    pub subsample: usize,
    pub train_ids: Vec<String>,
    pub reference_id: String,
    pub costs: Vec<DemoCost>,
}

impl AlignmentRecord {
    fn matches(&self, cfg: &RunConfig, train: &[String]) -> bool {
        self.schema_version == SCHEMA_VERSION
            && self.gamma == cfg.alignment.gamma
            && self.reference == cfg.alignment.reference
            && self.subsample == cfg.subsample
            && self.train_ids == train
    }
}

fn run_alignment(cfg: &RunConfig, run: &RunLayout, manifest: &DemoManifest) -> Result<(DemonstrationDatabase, AlignmentRecord), CliError> {
    let raw = load_split(run, &manifest.train)?.subsample(cfg.subsample);
    let result = align_database(&raw, cfg.alignment.gamma, cfg.reference_choice()?)?;
    let record = AlignmentRecord {
        schema_version: SCHEMA_VERSION,
        gamma: cfg.alignment.gamma,
        reference: cfg.alignment.reference.clone(),
        subsample: cfg.subsample,
        train_ids: manifest.train.clone(),
        reference_id: raw.demonstrations[result.reference_index].id.clone(),
        costs: raw
            .demonstrations
            .iter()
            .zip(&result.costs)
            .map(|(d, &cost)| DemoCost { id: d.id.clone(), cost })
            .collect(),
    };
    Ok((result.warped, record))
}

pub fn align(cfg: &RunConfig, run: &RunLayout) -> Result<AlignmentRecord, CliError> {
    cfg.validate()?;
    let manifest = load_manifest(run)?;
    let (warped, record) = run_alignment(cfg, run, &manifest)?;
    let dir = run.aligned();
    clear_csv_files(&dir)?;
    save_demonstrations(&warped, &dir)?;
    write_json(&dir.join("alignment.json"), &record)?;
    Ok(record)
}

/// Aligned training split: reuses the align stage output when it was
/// produced with the current settings, otherwise aligns in memory.
fn aligned_training_set(cfg: &RunConfig, run: &RunLayout, manifest: &DemoManifest) -> Result<(DemonstrationDatabase, AlignmentRecord), CliError> {
    let record_path = run.aligned().join("alignment.json");
    if record_path.is_file() {
        let record: AlignmentRecord = read_json(&record_path)?;
        if record.matches(cfg, &manifest.train) {
            let db = load_demonstrations(&run.aligned(), &FeatureSelector::default())?;
            let db = db.select(&manifest.train).map_err(|e| CliError::data(format!("{}: {e}", run.aligned().display())))?;
            return Ok((db, record));
        }
    }
    run_alignment(cfg, run, manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub components: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub schema_version: u32,
    pub training_ids: Vec<String>,
    pub alignment_reference: String,
    pub alignment_costs: Vec<DemoCost>,
    pub data_points: usize,
    pub components: usize,
    pub bic: Option<Vec<BicScore>>,
    pub em_iterations: usize,
    pub em_converged: bool,
    /// Mean log-likelihood (standardized coordinates) per EM iteration.
    pub log_likelihood: Vec<f64>,
    pub max_log_likelihood_decrease: f64,
    pub log_likelihood_monotone: bool,
    pub reference_points: usize,
    pub kernel: KernelParams,
    /// Σₙ KL(prediction ‖ reference) over the reference database.
    pub kl_diagnostic: f64,
    pub gram_condition_number: f64,
    pub gram_jittered: bool,
}

pub fn train(cfg: &RunConfig, run: &RunLayout) -> Result<TrainingDiagnostics, CliError> {
    cfg.validate()?;
    let manifest = load_manifest(run)?;
    let (aligned, record) = aligned_training_set(cfg, run, &manifest)?;
    let data = extract_features(&aligned, &FeatureSelector::default())?.joint_points();

    let (fit, bic) = if cfg.model.select_by_bic {
        let (fit, scores) = select_components_bic(&data, 1, BIC_CANDIDATES, &cfg.model.gmm())?;
        (fit, Some(scores.into_iter().map(|(components, bic)| BicScore { components, bic }).collect()))
    } else {
        (fit_gmm(&data, 1, &cfg.model.gmm())?, None)
    };
    let reference = build_reference_database(&fit.model, &uniform_grid(cfg.model.reference_points))?;
    let kmp = train_kmp(&reference, cfg.kmp.kernel())?;

    let max_decrease = fit.max_decrease();
    let diagnostics = TrainingDiagnostics {
        schema_version: SCHEMA_VERSION,
        training_ids: manifest.train.clone(),
        alignment_reference: record.reference_id,
        alignment_costs: record.costs,
        data_points: data.len(),
        components: fit.model.components(),
        bic,
        em_iterations: fit.log_likelihood.len(),
        em_converged: fit.converged,
        log_likelihood: fit.log_likelihood.clone(),
        max_log_likelihood_decrease: max_decrease,
        log_likelihood_monotone: max_decrease <= EM_MONOTONE_TOLERANCE,
        reference_points: cfg.model.reference_points,
        kernel: cfg.kmp.kernel(),
        kl_diagnostic: kmp.kl_diagnostic()?,
        gram_condition_number: kmp.condition_number(),
        gram_jittered: kmp.jittered(),
    };

    let dir = run.models();
    create_dir(&dir)?;
    fit.model.save(&dir.join("gmm.json"))?;
    kmp.save(&dir.join("kmp.json"))?;
    write_json(&dir.join("diagnostics.json"), &diagnostics)?;
    write_file(&dir.join("log_likelihood.csv"), log_likelihood_csv(&fit.log_likelihood))?;
    write_file(&dir.join("reference.csv"), reference_csv(&kmp))?;
    write_file(&dir.join("config.json"), cfg.to_json())?;

    if !diagnostics.log_likelihood_monotone {
        return Err(CliError::numeric(format!("EM log-likelihood decreased by {max_decrease:e}")));
    }
    Ok(diagnostics)
}

fn log_likelihood_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,mean_log_likelihood\n");
    for (i, ll) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{ll}");
    }
    out
}

/// Reference database next to the KMP prediction on the same inputs.
fn reference_csv(kmp: &KmpModel) -> String {
    let mut out = String::from("progress,reference_mean,reference_std,kmp_mean,kmp_std\n");
    for e in &kmp.reference().entries {
        let mean = kmp.predict_mean(&e.input).map(|m| m[0]).unwrap_or(f64::NAN);
        let var = kmp.predict_covariance(&e.input).map(|c| c[(0, 0)]).unwrap_or(f64::NAN);
        let _ = writeln!(out, "{},{},{},{},{}", e.input[0], e.mean[0], e.covariance[0].max(0.0).sqrt(), mean, var.max(0.0).sqrt());
    }
    out
}

pub fn load_models(run: &RunLayout) -> Result<(GmmModel, KmpModel), CliError> {
    Ok((GmmModel::load(&run.models().join("gmm.json"))?, KmpModel::load(&run.models().join("kmp.json"))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproductionSummary {
    pub records: usize,
    pub frames: usize,
    pub contact_time: Option<f64>,
    pub scan_start_time: Option<f64>,
    pub via_points: Vec<ViaPoint>,
    /// RMSE between measured force and KMP mean over the scan phase, N.
    pub scan_force_rmse: f64,
    pub scan_force_mean: f64,
}

fn summarize(log: &ScanLog, via_points: Vec<ViaPoint>) -> ReproductionSummary {
    let scan: Vec<_> = log.scan_records().collect();
    let n = scan.len().max(1) as f64;
    ReproductionSummary {
        records: log.records.len(),
        frames: log.frames.len(),
        contact_time: log.contact_time,
        scan_start_time: log.scan_start_time,
        via_points,
        scan_force_rmse: (scan.iter().map(|r| (r.force - r.target_mean).powi(2)).sum::<f64>() / n).sqrt(),
        scan_force_mean: scan.iter().map(|r| r.force).sum::<f64>() / n,
    }
}

pub fn reproduce(cfg: &RunConfig, run: &RunLayout) -> Result<ReproductionSummary, CliError> {
    cfg.validate()?;
    let kmp = KmpModel::load(&run.models().join("kmp.json"))?;
    let mut via_points = Vec::new();
    for spec in &cfg.via_points {
        via_points.extend(spec.expand(kmp.reference()).map_err(CliError::usage)?);
    }
    let dir = run.logs();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    }
    create_dir(&dir)?;
    write_file(&dir.join("config.json"), cfg.to_json())?;

    let outcome = run_reproduction(&kmp, &cfg.plan()?, &cfg.phantom()?, &cfg.controller, &via_points, &cfg.reproduction_options());
    match outcome {
        Ok(log) => {
            log.save(&dir)?;
            let summary = summarize(&log, via_points);
            write_json(&dir.join("summary.json"), &summary)?;
            Ok(summary)
        }
        Err(forcelfd_core::Error::Diverged { time, error_norm, log }) => {
            log.save(&dir)?;
            write_json(&dir.join("summary.json"), &summarize(&log, via_points))?;
            Err(CliError {
                code: EXIT_DIVERGENCE,
                message: format!(
                    "controller diverged at t = {time:.4} s (|x_e| = {error_norm:.3} m); partial log written to {}",
                    dir.display()
                ),
            })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate(cfg: &RunConfig, run: &RunLayout) -> Result<EvaluationReport, CliError> {
    cfg.validate()?;
    let manifest = load_manifest(run)?;
    if manifest.validation.is_empty() {
        return Err(CliError::data(format!("{}: validation set is empty", run.manifest().display())));
    }
    let log = ScanLog::load(&run.logs())?;
    let validation_db = load_split(run, &manifest.validation)?;
    let phantom = cfg.phantom()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_STREAM);
    let validation = validation_db
        .demonstrations
        .iter()
        .map(|d| ValidationRecord::from_demonstration(d, &phantom, cfg.scan.frame_rate_hz, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let report = evaluate_scan(&log, &validation, &manifest.train)?;

    let dir = run.reports();
    create_dir(&dir)?;
    write_file(&dir.join("evaluation.json"), report.to_json()?)?;
    write_file(&dir.join("summary.csv"), report.summary_csv())?;
    write_file(&dir.join("per_demo.csv"), report.per_demo_csv())?;
    write_file(&dir.join("profile.csv"), profile_csv(&log))?;
    write_file(&dir.join("config.json"), cfg.to_json())?;
    Ok(report)
}

fn profile_csv(log: &ScanLog) -> String {
    let mut out = String::from("progress,force,target_mean,target_std\n");
    for r in log.scan_records() {
        let _ = writeln!(out, "{},{},{},{}", log.progress(r), r.force, r.target_mean, r.target_std);
    }
    out
}

/// Which report table `report` concatenates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportTable {
    Summary,
    PerDemo,
    Profile,
}

impl ReportTable {
    fn file(self) -> &'static str {
        match self {
            ReportTable::Summary => "summary.csv",
            ReportTable::PerDemo => "per_demo.csv",
            ReportTable::Profile => "profile.csv",
        }
    }
}

/// Concatenates one report table of several runs, prefixing a `run` column.
pub fn report(runs: &[PathBuf], table: ReportTable) -> Result<String, CliError> {
    if runs.is_empty() {
        return Err(CliError::usage("no runs to report"));
    }
    let mut out = String::new();
    let mut header: Option<String> = None;
    for dir in runs {
        let path = RunLayout::new(dir).reports().join(table.file());
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| CliError::data(format!("{}: empty file", path.display())))?;
        match &header {
            None => {
                let _ = writeln!(out, "run,{head}");
                header = Some(head.to_string());
            }
            Some(h) if h != head => {
                return Err(CliError::data(format!("{}: header `{head}` differs from `{h}`", path.display())));
            }
            Some(_) => {}
        }
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(out, "{name},{line}");
        }
    }
    Ok(out)
}

