//! Force-profile and image-similarity metrics, and scan evaluation against
//! held-out demonstrations.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{render_synthetic_image, Phantom, ScanLog};
use crate::demo::{progress_of, Axis, Demonstration};
use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DEFAULT_PSNR_CAP: f64 = 100.0;
const ZERO_MSE: f64 = 1e-12;

/// Force samples indexed by normalized scan progress (nondecreasing).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForceProfile {
    pub progress: Vec<f64>,
    pub force: Vec<f64>,
}

impl ForceProfile {
    pub fn new(progress: Vec<f64>, force: Vec<f64>) -> Result<Self> {
        if progress.len() != force.len() {
            return Err(Error::DimensionMismatch { expected: progress.len(), actual: force.len() });
        }
        if progress.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidArgument("force profile progress must be nondecreasing".into()));
        }
        Ok(ForceProfile { progress, force })
    }

    pub fn len(&self) -> usize {
        self.progress.len()
    }

    pub fn is_empty(&self) -> bool {
        self.progress.is_empty()
    }

    /// Linear interpolation at `s`, which must lie inside the profile's range.
    fn interpolate(&self, s: f64) -> f64 {
        let p = &self.progress;
        let i = p.partition_point(|&x| x < s);
        if i < p.len() && p[i] == s {
            return self.force[i];
        }
        let (a, b) = (i - 1, i);
        let w = (s - p[a]) / (p[b] - p[a]);
        self.force[a] + w * (self.force[b] - self.force[a])
    }
}

/// RMSE of `executed` resampled onto the grid of `reference`, over the
/// progress range both profiles cover.
pub fn force_rmse(executed: &ForceProfile, reference: &ForceProfile) -> Result<f64> {
    if executed.is_empty() || reference.is_empty() {
        return Err(Error::Evaluation("force profiles must be nonempty".into()));
    }
    let lo = executed.progress[0].max(reference.progress[0]);
    let hi = executed.progress[executed.len() - 1].min(reference.progress[reference.len() - 1]);
    let (mut sum, mut n) = (0.0, 0usize);
    for (&s, &f) in reference.progress.iter().zip(&reference.force) {
        if s < lo || s > hi {
            continue;
        }
        let d = executed.interpolate(s) - f;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::DisjointProfiles);
    }
    Ok((sum / n as f64).sqrt())
}

fn check_shapes(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Evaluation(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.pixels.is_empty() {
        return Err(Error::Evaluation("empty image".into()));
    }
    Ok(())
}

pub fn psnr_with_cap(image: &GrayImage, reference: &GrayImage, cap: f64) -> Result<f64> {
    check_shapes(image, reference)?;
    let mse = image
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / image.pixels.len() as f64;
    if mse < ZERO_MSE {
        return Ok(cap);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(cap))
}

/// Peak signal-to-noise ratio in dB with unit peak intensity.
pub fn psnr(image: &GrayImage, reference: &GrayImage) -> Result<f64> {
    psnr_with_cap(image, reference, DEFAULT_PSNR_CAP)
}

fn moments(px: &[f64]) -> (f64, f64) {
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let var = px.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero-mean normalized cross-correlation.
pub fn zncc(image: &GrayImage, reference: &GrayImage) -> Result<f64> {
    check_shapes(image, reference)?;
    let (ma, sa) = moments(&image.pixels);
    let (mb, sb) = moments(&reference.pixels);
    if sa == 0.0 {
        return Err(Error::ZeroVariance("executed frame"));
    }
    if sb == 0.0 {
        return Err(Error::ZeroVariance("reference frame"));
    }
    let cov = image
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (a - ma) * (b - mb))
        .sum::<f64>()
        / image.pixels.len() as f64;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// A held-out acquisition: force profile plus frames timed from scan start.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    pub id: String,
    pub profile: ForceProfile,
    pub frames: Vec<(f64, GrayImage)>,
}

impl ValidationRecord {
    /// Pairs a recorded demonstration with frames rendered from its pose and
    /// force channels on `phantom`.
    pub fn from_demonstration<R: Rng + ?Sized>(demo: &Demonstration, phantom: &Phantom, frame_rate_hz: f64, rng: &mut R) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("frame rate must be positive".into()));
        }
        let first = &demo.samples[0];
        let mut progress = Vec::with_capacity(demo.len());
        let mut force = Vec::with_capacity(demo.len());
        let mut last = 0.0f64;
        for s in &demo.samples {
            // Progress of a noisy track may wobble backwards; keep it monotone.
            last = last.max(progress_of(demo, &s.position, Axis::X));
            progress.push(last);
            force.push(-s.force[2]);
        }
        let profile = ForceProfile::new(progress, force)?;

        let duration = demo.duration();
        let times: Vec<f64> = demo.samples.iter().map(|s| s.t - first.t).collect();
        let mut frames = Vec::new();
        for k in 0.. {
            let t = k as f64 / frame_rate_hz;
            if t > duration + 1e-9 {
                break;
            }
            let i = nearest_index(&times, t);
            let s = &demo.samples[i];
            let pos = [s.position[0] * 1e-3, s.position[1] * 1e-3, s.position[2] * 1e-3];
            frames.push((t, render_synthetic_image(phantom, pos, -s.force[2], rng)));
        }
        Ok(ValidationRecord { id: demo.id.clone(), profile, frames })
    }

    /// Treats a persisted reproduction as a validation acquisition.
    pub fn from_scan_log(id: impl Into<String>, log: &ScanLog) -> Result<Self> {
        let (p, f) = log.executed_profile();
        Ok(ValidationRecord {
            id: id.into(),
            profile: ForceProfile::new(p, f)?,
            frames: log.scan_frames().into_iter().map(|(t, img)| (t, img.clone())).collect(),
        })
    }
}

/// Index of the sorted `times` entry closest to `t`; ties go to the earlier.
pub fn nearest_index(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return 0;
    }
    if i == times.len() {
        return times.len() - 1;
    }
    if t - times[i - 1] <= times[i] - t {
        i - 1
    } else {
        i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMetrics {
    pub id: String,
    pub force_rmse: f64,
    pub psnr: f64,
    pub zncc: f64,
    pub frames_compared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub force_rmse: MeanStd,
    pub psnr: MeanStd,
    pub zncc: MeanStd,
    pub per_demo: Vec<DemoMetrics>,
    pub validation_ids: Vec<String>,
    /// Identifiers checked to be absent from the validation set.
    pub excluded_training_ids: Vec<String>,
    pub reference_image_source: String,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Evaluation(e.to_string()))
    }

    /// `metric,mean,std`, one row per metric.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,std\n");
        for (name, m) in [("force_rmse", self.force_rmse), ("psnr", self.psnr), ("zncc", self.zncc)] {
            let _ = writeln!(out, "{name},{},{}", m.mean, m.std);
        }
        out
    }

    /// One row per validation demonstration.
    pub fn per_demo_csv(&self) -> String {
        let mut out = String::from("id,force_rmse,psnr,zncc,frames_compared\n");
        for d in &self.per_demo {
            let _ = writeln!(out, "{},{},{},{},{}", d.id, d.force_rmse, d.psnr, d.zncc, d.frames_compared);
        }
        out
    }
}

fn evaluate_one(executed: &ForceProfile, frames: &[(f64, &GrayImage)], v: &ValidationRecord) -> Result<DemoMetrics> {
    let force_rmse = force_rmse(executed, &v.profile)?;
    if v.frames.is_empty() {
        return Err(Error::Evaluation(format!("validation demo {} has no frames", v.id)));
    }
    let times: Vec<f64> = v.frames.iter().map(|f| f.0).collect();
    let (mut p, mut z) = (0.0, 0.0);
    for (t, img) in frames {
        let reference = &v.frames[nearest_index(&times, *t)].1;
        p += psnr(img, reference)?;
        z += zncc(img, reference)?;
    }
    let n = frames.len() as f64;
    Ok(DemoMetrics {
        id: v.id.clone(),
        force_rmse,
        psnr: p / n,
        zncc: z / n,
        frames_compared: frames.len(),
    })
}

/// Scores a reproduction against every validation acquisition.
pub fn evaluate_scan(log: &ScanLog, validation: &[ValidationRecord], training_ids: &[String]) -> Result<EvaluationReport> {
    if validation.is_empty() {
        return Err(Error::Evaluation("validation set is empty".into()));
    }
    let training: BTreeSet<&str> = training_ids.iter().map(String::as_str).collect();
    let overlap: Vec<&str> = validation.iter().map(|v| v.id.as_str()).filter(|id| training.contains(id)).collect();
    if !overlap.is_empty() {
        return Err(Error::Evaluation(format!("validation demos overlap the training set: {}", overlap.join(", "))));
    }
    let (p, f) = log.executed_profile();
    let executed = ForceProfile::new(p, f)?;
    let frames = log.scan_frames();
    if frames.is_empty() {
        return Err(Error::Evaluation("scan log has no frames in the scan phase".into()));
    }
    let per_demo = validation
        .par_iter()
        .map(|v| evaluate_one(&executed, &frames, v))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&DemoMetrics) -> f64| MeanStd::of(&per_demo.iter().map(f).collect::<Vec<_>>());
    Ok(EvaluationReport {
        force_rmse: col(|d| d.force_rmse),
        psnr: col(|d| d.psnr),
        zncc: col(|d| d.zncc),
        validation_ids: validation.iter().map(|v| v.id.clone()).collect(),
        excluded_training_ids: training_ids.to_vec(),
        reference_image_source: "temporally nearest frame of each validation acquisition".into(),
        per_demo,
    })
}
