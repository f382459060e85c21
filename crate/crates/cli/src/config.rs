use std::fs;
use std::path::{Path, PathBuf};

use forcelfd_core::alignment::ReferenceChoice;
use forcelfd_core::control::{ControllerParams, Phantom, ReproductionOptions, ScanPlan};
use forcelfd_core::demo::ScenarioSpec;
use forcelfd_core::gmm::GmmConfig;
use forcelfd_core::kmp::{KernelParams, DEFAULT_VIA_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::via::ViaSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub gamma: f64,
    /// `medoid` or an index into the training split.
    pub reference: String,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { gamma: forcelfd_core::alignment::DEFAULT_GAMMA, reference: "medoid".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub components: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub covariance_floor: f64,
    /// Pick the component count by BIC over 2..=12 instead of `components`.
    pub select_by_bic: bool,
    /// Length of the uniform progress grid the reference database is built on.
    pub reference_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let g = GmmConfig::default();
        ModelConfig {
            components: g.components,
            seed: g.seed,
            tol: g.tol,
            max_iter: g.max_iter,
            covariance_floor: g.covariance_floor,
            select_by_bic: false,
            reference_points: 500,
        }
    }
}

impl ModelConfig {
    pub fn gmm(&self) -> GmmConfig {
        GmmConfig {
            components: self.components,
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
            covariance_floor: self.covariance_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmpConfig {
    pub sigma_f: f64,
    pub lambda: f64,
    pub lambda_c: f64,
    pub via_threshold: f64,
}

impl Default for KmpConfig {
    fn default() -> Self {
        let k = KernelParams::default();
        KmpConfig { sigma_f: k.sigma_f, lambda: k.lambda, lambda_c: k.lambda_c, via_threshold: DEFAULT_VIA_THRESHOLD }
    }
}

impl KmpConfig {
    pub fn kernel(&self) -> KernelParams {
        KernelParams { sigma_f: self.sigma_f, lambda: self.lambda, lambda_c: self.lambda_c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Height above the phantom surface where the approach starts, m.
    pub clearance: f64,
    pub speed: f64,
    pub approach_speed: f64,
    pub settle_time: f64,
    pub max_approach_time: f64,
    pub frame_rate_hz: f64,
    pub feedforward_time_constant: Option<f64>,
    pub divergence_limit: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let plan = ScanPlan::default();
        let opts = ReproductionOptions::default();
        ScanConfig {
            clearance: 0.002,
            speed: plan.speed,
            approach_speed: plan.approach_speed,
            settle_time: plan.settle_time,
            max_approach_time: plan.max_approach_time,
            frame_rate_hz: opts.frame_rate_hz,
            feedforward_time_constant: opts.feedforward_time_constant,
            divergence_limit: opts.divergence_limit,
        }
    }
}

/// Every configurable knob of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub demo_count: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Keep every n-th demonstration sample before alignment; 1 keeps all.
    pub subsample: usize,
    pub alignment: AlignmentConfig,
    pub model: ModelConfig,
    pub kmp: KmpConfig,
    pub controller: ControllerParams,
    pub phantom: String,
    pub scan: ScanConfig,
    pub via_points: Vec<ViaSpec>,
    /// Root under which run directories are created.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioSpec::default(),
            demo_count: 10,
            noise_std: 0.2,
            seed: 42,
            subsample: 1,
            alignment: AlignmentConfig::default(),
            model: ModelConfig::default(),
            kmp: KmpConfig::default(),
            controller: ControllerParams::default(),
            phantom: "phantom-c".into(),
            scan: ScanConfig::default(),
            via_points: Vec::new(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::usage(m));
        if self.demo_count == 0 {
            return usage("demo count must be at least 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return usage(format!("noise std must be nonnegative, got {}", self.noise_std));
        }
        if self.subsample == 0 {
            return usage("subsample step must be at least 1".into());
        }
        if !(self.alignment.gamma.is_finite() && self.alignment.gamma > 0.0) {
            return usage(format!("alignment gamma must be positive, got {}", self.alignment.gamma));
        }
        self.reference_choice()?;
        if self.model.reference_points == 0 {
            return usage("reference grid needs at least one point".into());
        }
        if self.model.components == 0 {
            return usage("component count must be at least 1".into());
        }
        self.kmp.kernel().validate()?;
        if !(self.kmp.via_threshold.is_finite() && self.kmp.via_threshold > 0.0) {
            return usage("via threshold must be positive".into());
        }
        self.controller.validate()?;
        self.phantom()?;
        let s = &self.scan;
        if !(s.clearance.is_finite() && s.clearance >= 0.0) {
            return usage("scan clearance must be nonnegative".into());
        }
        if !(s.frame_rate_hz.is_finite() && s.frame_rate_hz > 0.0) || !(s.divergence_limit > 0.0) {
            return usage("frame rate and divergence limit must be positive".into());
        }
        self.plan()?.validate()?;
        Ok(())
    }

    pub fn phantom(&self) -> Result<Phantom, CliError> {
        Ok(Phantom::preset(&self.phantom)?)
    }

    pub fn reference_choice(&self) -> Result<ReferenceChoice, CliError> {
        Ok(self.alignment.reference.parse()?)
    }

    /// Straight scan along +x over the demonstrated scan length.
    pub fn plan(&self) -> Result<ScanPlan, CliError> {
        let base = ScanPlan::along_x(&self.phantom()?, self.scenario.scan_length_mm * 1e-3, self.scan.clearance);
        Ok(ScanPlan {
            speed: self.scan.speed,
            approach_speed: self.scan.approach_speed,
            settle_time: self.scan.settle_time,
            max_approach_time: self.scan.max_approach_time,
            ..base
        })
    }

    pub fn reproduction_options(&self) -> ReproductionOptions {
        ReproductionOptions {
            seed: self.seed,
            frame_rate_hz: self.scan.frame_rate_hz,
            feedforward_time_constant: self.scan.feedforward_time_constant,
            divergence_limit: self.scan.divergence_limit,
            via_threshold: self.kmp.via_threshold,
        }
    }

    /// Number of demonstrations in the training half; the rest validate.
    pub fn train_count(&self) -> usize {
        self.demo_count.div_ceil(2)
    }
}
