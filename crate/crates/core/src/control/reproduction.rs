use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::log::{Frame, ScanLog, ScanRecord};
use super::phantom::{phantom_contact_force, render_synthetic_image, Phantom};
use super::{controller_step, ControllerParams, ProbeState, Vec3};
use crate::error::{Error, Result};
use crate::kmp::{insert_via_point, train_kmp, KmpModel, ViaPoint};

/// Straight-line scan: descend from `start` until contact, dwell, then move
/// the desired pose towards `end` in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanPlan {
    pub start: Vec3,
    pub end: Vec3,
    /// Scan speed, m/s.
    pub speed: f64,
    /// Descent speed before contact, m/s.
    pub approach_speed: f64,
    /// Dwell at the start point after contact before the scan timer starts, s.
    pub settle_time: f64,
    /// Give up when no contact is made within this time, s.
    pub max_approach_time: f64,
}

impl Default for ScanPlan {
    fn default() -> Self {
        ScanPlan {
            start: [0.0; 3],
            end: [0.2, 0.0, 0.0],
            speed: 0.01,
            approach_speed: 0.005,
            settle_time: 3.0,
            max_approach_time: 60.0,
        }
    }
}

impl ScanPlan {
    /// A scan of `length` metres along +x starting `clearance` above the
    /// phantom surface.
    pub fn along_x(phantom: &Phantom, length: f64, clearance: f64) -> Self {
        let z = phantom.surface_height + clearance;
        ScanPlan {
            start: [0.0, 0.0, z],
            end: [length, 0.0, z],
            ..ScanPlan::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start.iter().chain(&self.end).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scan plan endpoints must be finite".into()));
        }
        for (name, v) in [("speed", self.speed), ("approach_speed", self.approach_speed), ("max_approach_time", self.max_approach_time)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("scan plan {name} must be positive")));
            }
        }
        if !(self.settle_time.is_finite() && self.settle_time >= 0.0) {
            return Err(Error::InvalidArgument("scan plan settle_time must be nonnegative".into()));
        }
        Ok(())
    }

    fn horizontal(&self) -> (f64, [f64; 2]) {
        let d = [self.end[0] - self.start[0], self.end[1] - self.start[1]];
        let len = d[0].hypot(d[1]);
        if len == 0.0 {
            (0.0, [0.0, 0.0])
        } else {
            (len, [d[0] / len, d[1] / len])
        }
    }

    pub fn length(&self) -> f64 {
        self.horizontal().0
    }

    /// Normalized progress of a pose along the plan, clamped to `[0, 1]`.
    pub fn progress(&self, pose: Vec3) -> f64 {
        let (len, u) = self.horizontal();
        if len == 0.0 {
            return 0.0;
        }
        let along = (pose[0] - self.start[0]) * u[0] + (pose[1] - self.start[1]) * u[1];
        (along / len).clamp(0.0, 1.0)
    }

    fn pose_at(&self, distance: f64, z: f64) -> Vec3 {
        let (len, u) = self.horizontal();
        let d = distance.min(len);
        [self.start[0] + u[0] * d, self.start[1] + u[1] * d, z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproductionOptions {
    pub seed: u64,
    pub frame_rate_hz: f64,
    /// Time constant of an optional low-pass on the feedforward force.
    pub feedforward_time_constant: Option<f64>,
    /// Abort when `|x_c − x_d|` exceeds this, m.
    pub divergence_limit: f64,
    /// Distance threshold used when applying via-points.
    pub via_threshold: f64,
}

impl Default for ReproductionOptions {
    fn default() -> Self {
        ReproductionOptions {
            seed: 0,
            frame_rate_hz: 20.0,
            feedforward_time_constant: None,
            divergence_limit: 0.5,
            via_threshold: crate::kmp::DEFAULT_VIA_THRESHOLD,
        }
    }
}

/// Inserts every via-point into the model's reference database and retrains.
pub fn apply_via_points(model: &KmpModel, via_points: &[ViaPoint], threshold: f64) -> Result<KmpModel> {
    let mut reference = model.reference().clone();
    for vp in via_points {
        reference = insert_via_point(&reference, vp, threshold)?;
    }
    train_kmp(&reference, model.params())
}

/// Mean and standard deviation of the normal force the model prescribes at
/// the progress of the desired pose.
pub fn query_force_reference(model: &KmpModel, plan: &ScanPlan, desired: Vec3) -> Result<(f64, f64)> {
    check_scalar_model(model)?;
    let s = [plan.progress(desired)];
    let mean = model.predict_mean(&s)?[0];
    let var = model.predict_covariance(&s)?[(0, 0)];
    Ok((mean, var.max(0.0).sqrt()))
}

fn check_scalar_model(model: &KmpModel) -> Result<()> {
    if model.input_dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, actual: model.input_dim() });
    }
    if model.output_dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, actual: model.output_dim() });
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Approach,
    Settle { until: usize },
    Scan { start: usize },
}

/// Simulates a full reproduction: approach, settle, scan. Frames are
/// rendered from one seeded stream, so the log is a pure function of the
/// arguments.
pub fn run_reproduction(
    model: &KmpModel,
    plan: &ScanPlan,
    phantom: &Phantom,
    params: &ControllerParams,
    via_points: &[ViaPoint],
    options: &ReproductionOptions,
) -> Result<ScanLog> {
    params.validate()?;
    phantom.validate()?;
    plan.validate()?;
    check_scalar_model(model)?;
    if !(options.frame_rate_hz.is_finite() && options.frame_rate_hz > 0.0) {
        return Err(Error::InvalidArgument("frame rate must be positive".into()));
    }
    if let Some(tau) = options.feedforward_time_constant {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument("feedforward time constant must be positive".into()));
        }
    }
    let retrained;
    let model = if via_points.is_empty() {
        model
    } else {
        retrained = apply_via_points(model, via_points, options.via_threshold)?;
        &retrained
    };

    let dt = params.dt;
    let steps_per_frame = ((1.0 / (options.frame_rate_hz * dt)).round() as usize).max(1);
    let settle_steps = (plan.settle_time / dt).round() as usize;
    let max_approach_steps = (plan.max_approach_time / dt).ceil() as usize;
    let length = plan.length();
    let step_len = plan.speed * dt;
    let scan_steps = if length > 0.0 { (length / step_len - 1e-9).ceil() as usize } else { 0 };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut log = ScanLog {
        dt,
        plan: *plan,
        frame_rate_hz: options.frame_rate_hz,
        contact_time: None,
        scan_start_time: None,
        records: Vec::with_capacity(max_approach_steps.min(1 << 16) + settle_steps + scan_steps + 1),
        frames: Vec::new(),
    };

    let mut state = ProbeState::at_rest(plan.start);
    let mut phase = Phase::Approach;
    let mut next_frame = 0usize;
    let mut feedforward: Option<f64> = None;
    let mut cached: Option<(f64, (f64, f64))> = None;

    for step in 0usize.. {
        let t = step as f64 * dt;
        let h = phantom_contact_force(phantom, state.compliant_position);

        if phase == Phase::Approach {
            if h[2] > 0.0 {
                log.contact_time = Some(t);
                phase = Phase::Settle { until: step + settle_steps };
            } else if step >= max_approach_steps {
                return Err(Error::NoContact(t));
            }
        }
        if let Phase::Settle { until } = phase {
            if step >= until {
                log.scan_start_time = Some(t);
                phase = Phase::Scan { start: step };
                next_frame = step;
            }
        }

        let x_d = state.desired_position;
        let s = plan.progress(x_d);
        let (mean, std) = match cached {
            Some((cs, v)) if cs == s => v,
            _ => {
                let v = query_force_reference(model, plan, x_d)?;
                cached = Some((s, v));
                v
            }
        };
        log.records.push(ScanRecord {
            t,
            compliant: state.compliant_position,
            desired: x_d,
            force: h[2],
            target_mean: mean,
            target_std: std,
        });
        if step == next_frame {
            let image = render_synthetic_image(phantom, state.compliant_position, h[2], &mut rng);
            log.frames.push(Frame { t, image });
            next_frame += steps_per_frame;
        }

        let (x_d_next, mu_z) = match phase {
            Phase::Approach => ([x_d[0], x_d[1], x_d[2] - plan.approach_speed * dt], 0.0),
            Phase::Settle { .. } => (x_d, mean),
            Phase::Scan { start } => {
                let j = step - start;
                if j >= scan_steps {
                    break;
                }
                (plan.pose_at((j + 1) as f64 * step_len, x_d[2]), mean)
            }
        };
        let mu_z = if phase == Phase::Approach {
            0.0
        } else {
            match (options.feedforward_time_constant, feedforward) {
                (Some(tau), Some(prev)) => {
                    let next = prev + dt / (tau + dt) * (mu_z - prev);
                    feedforward = Some(next);
                    next
                }
                _ => {
                    feedforward = Some(mu_z);
                    mu_z
                }
            }
        };

        state = controller_step(&state, h, x_d_next, [0.0, 0.0, -mu_z], params)?;
        let e = state.error();
        let norm = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        if !(norm <= options.divergence_limit) {
            return Err(Error::Diverged {
                time: t + dt,
                error_norm: norm,
                log: Box::new(log),
            });
        }
    }
    Ok(log)
}
