//! Synthetic demonstrations.
//!
//! Each scenario has a nominal force-versus-progress profile. A demonstration
//! samples that profile along a linear scan, perturbed by a smooth monotone
//! time-warp and by smoothed Gaussian force noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Demonstration, DemonstrationDatabase, FeatureSelector, RawSample, Scenario};
use crate::error::{Error, Result};

/// Force held throughout a constant-pressure scan.
pub const CONSTANT_FORCE: f64 = 6.0;
/// Coupling force outside the compression in the compression scenario.
pub const COMPRESSION_BASELINE: f64 = 5.0;
/// Force held while the vessel is compressed.
pub const COMPRESSION_PLATEAU: f64 = 25.0;
/// Plateau of the compression scenario, in progress units.
pub const COMPRESSION_WINDOW: (f64, f64) = (0.40, 0.60);
pub const BIMODAL_BASELINE: f64 = 4.0;
pub const BIMODAL_PLATEAU: f64 = 20.0;
pub const BIMODAL_WINDOWS: [(f64, f64); 2] = [(0.25, 0.35), (0.65, 0.75)];
/// Width of the rising and falling flanks around each plateau.
pub const RAMP_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub scan_length_mm: f64,
    pub speed_mm_s: f64,
    pub sample_rate_hz: f64,
    /// Maximum local deviation of the time-warp rate, as a fraction.
    pub max_rate_deviation: f64,
    /// Moving-average window applied to the white force noise, seconds.
    pub smoothing_s: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::new(Scenario::Constant)
    }
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        ScenarioSpec {
            scenario,
            scan_length_mm: 200.0,
            speed_mm_s: 10.0,
            sample_rate_hz: 100.0,
            max_rate_deviation: 0.1,
            smoothing_s: 0.5,
        }
    }

    pub fn samples_per_demo(&self) -> usize {
        (self.scan_length_mm / self.speed_mm_s * self.sample_rate_hz).round() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        let ok = self.scan_length_mm > 0.0
            && self.speed_mm_s > 0.0
            && self.sample_rate_hz > 0.0
            && (0.0..1.0).contains(&self.max_rate_deviation)
            && self.smoothing_s >= 0.0;
        if !ok || self.samples_per_demo() < 2 {
            return Err(Error::InvalidArgument(format!("invalid scenario parameters {self:?}")));
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Unit-height plateau on `[a, b]` with smooth flanks of width
/// [`RAMP_WIDTH`] outside it.
fn plateau(s: f64, (a, b): (f64, f64)) -> f64 {
    smoothstep((s - (a - RAMP_WIDTH)) / RAMP_WIDTH) * (1.0 - smoothstep((s - b) / RAMP_WIDTH))
}

/// Noise-free pressing force in newtons at scan progress `s`.
pub fn nominal_force(scenario: Scenario, s: f64) -> f64 {
    match scenario {
        Scenario::Constant => CONSTANT_FORCE,
        Scenario::Compression => {
            COMPRESSION_BASELINE + (COMPRESSION_PLATEAU - COMPRESSION_BASELINE) * plateau(s, COMPRESSION_WINDOW)
        }
        Scenario::Bimodal => {
            let bump: f64 = BIMODAL_WINDOWS.iter().map(|w| plateau(s, *w)).sum();
            BIMODAL_BASELINE + (BIMODAL_PLATEAU - BIMODAL_BASELINE) * bump
        }
    }
}

/// Monotone map from normalized time to progress with `warp(0) = 0`,
/// `warp(1) = 1` and local rate within `1 ± amplitude`.
struct TimeWarp {
    amplitude: f64,
    cycles: f64,
    phase: f64,
}

impl TimeWarp {
    fn sample(rng: &mut impl Rng, max_dev: f64) -> Self {
        TimeWarp {
            amplitude: rng.random_range(-1.0..=1.0) * max_dev,
            cycles: rng.random_range(1..=2) as f64,
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn apply(&self, u: f64) -> f64 {
        let w = 2.0 * PI * self.cycles;
        let v = u + self.amplitude / w * ((w * u + self.phase).sin() - self.phase.sin());
        v.clamp(0.0, 1.0)
    }
}

/// White noise smoothed by a moving average of `window` samples and rescaled
/// so the smoothed sequence has standard deviation `std`.
fn smoothed_noise(rng: &mut impl Rng, n: usize, window: usize, std: f64) -> Vec<f64> {
    let window = window.max(1);
    let white: Vec<f64> = (0..n + window - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let scale = std / (window as f64).sqrt();
    let mut acc: f64 = white[..window].iter().sum();
    let mut out = Vec::with_capacity(n);
    out.push(acc * scale);
    for i in 1..n {
        acc += white[i + window - 1] - white[i - 1];
        out.push(acc * scale);
    }
    out
}

/// Generates `count` demonstrations of `spec.scenario`. The result is a
/// pure function of the arguments.
pub fn synthesize_demonstrations(spec: &ScenarioSpec, count: usize, noise_std: f64, seed: u64) -> Result<DemonstrationDatabase> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("demonstration count must be at least 1".into()));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise std must be nonnegative, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.samples_per_demo();
    let window = (spec.smoothing_s * spec.sample_rate_hz).round() as usize;

    let mut demonstrations = Vec::with_capacity(count);
    for h in 0..count {
        let warp = TimeWarp::sample(&mut rng, spec.max_rate_deviation);
        let noise = smoothed_noise(&mut rng, n, window, noise_std);
        let samples = (0..n)
            .map(|k| {
                let u = k as f64 / (n - 1) as f64;
                let s = warp.apply(u);
                let force = nominal_force(spec.scenario, s) + noise[k];
                RawSample {
                    t: k as f64 / spec.sample_rate_hz,
                    position: [s * spec.scan_length_mm, 0.0, 0.0],
                    orientation: [1.0, 0.0, 0.0, 0.0],
                    force: [0.0, 0.0, -force],
                    torque: [0.0; 3],
                }
            })
            .collect();
        demonstrations.push(Demonstration::new(
            format!("demo_{h:03}"),
            spec.scenario,
            spec.scan_length_mm,
            samples,
        )?);
    }
    Ok(DemonstrationDatabase::new(demonstrations, &FeatureSelector::default()))
}
