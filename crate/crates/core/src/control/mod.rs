//! Admittance-controlled probe simulation.
//!
//! The controller renders `M ẍ_e + D ẋ_e + K x_e = h_e + μ_f` on the error
//! state `x_e = x_c − x_d`, where the stiffness on the surface-normal axis is
//! zero so that axis becomes force-controlled.

mod log;
mod phantom;
mod reproduction;

pub use log::{Frame, ScanLog, ScanRecord};
pub use phantom::{phantom_contact_force, render_synthetic_image, Phantom, IMAGE_DEPTH_M, IMAGE_SIZE};
pub use reproduction::{apply_via_points, query_force_reference, run_reproduction, ReproductionOptions, ScanPlan};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Virtual mass, damping and stiffness of the admittance law plus the
/// control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub mass: [[f64; 3]; 3],
    pub damping: [[f64; 3]; 3],
    pub stiffness: [[f64; 3]; 3],
    pub dt: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams::diagonal([2.5; 3], [500.0; 3], [270.0, 270.0, 0.0], 0.002)
    }
}

fn diag(v: [f64; 3]) -> [[f64; 3]; 3] {
    [[v[0], 0.0, 0.0], [0.0, v[1], 0.0], [0.0, 0.0, v[2]]]
}

fn to_matrix(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

impl ControllerParams {
    pub fn diagonal(mass: [f64; 3], damping: [f64; 3], stiffness: [f64; 3], dt: f64) -> Self {
        ControllerParams {
            mass: diag(mass),
            damping: diag(damping),
            stiffness: diag(stiffness),
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("controller parameters: {m}")));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        let (m, d, k) = (to_matrix(&self.mass), to_matrix(&self.damping), to_matrix(&self.stiffness));
        if [m, d, k].iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return bad("non-finite entry");
        }
        let symmetric = |a: &Matrix3<f64>| (a - a.transpose()).abs().max() <= 1e-12 * a.abs().max().max(1.0);
        if !symmetric(&m) || !symmetric(&d) || !symmetric(&k) {
            return bad("matrices must be symmetric");
        }
        if m.symmetric_eigenvalues().min() <= 0.0 {
            return bad("mass must be positive definite");
        }
        if d.symmetric_eigenvalues().min() <= 0.0 {
            return bad("damping must be positive definite");
        }
        if k.symmetric_eigenvalues().min() < -1e-12 {
            return bad("stiffness must be positive semidefinite");
        }
        if k[(2, 2)] != 0.0 {
            return bad("stiffness on the normal (z) axis must be zero");
        }
        Ok(())
    }

    fn mass_inverse(&self) -> Result<Matrix3<f64>> {
        to_matrix(&self.mass)
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("controller parameters: singular mass".into()))
    }
}

/// Compliant pose, error velocity `ẋ_e` and desired pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeState {
    pub compliant_position: Vec3,
    pub velocity: Vec3,
    pub desired_position: Vec3,
}

impl ProbeState {
    pub fn at_rest(position: Vec3) -> Self {
        ProbeState {
            compliant_position: position,
            velocity: [0.0; 3],
            desired_position: position,
        }
    }

    pub fn error(&self) -> Vec3 {
        let (c, d) = (self.compliant_position, self.desired_position);
        [c[0] - d[0], c[1] - d[1], c[2] - d[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.compliant_position
            .iter()
            .chain(&self.velocity)
            .chain(&self.desired_position)
            .all(|v| v.is_finite())
    }
}

/// One semi-implicit Euler step of the admittance law. The acceleration is
/// computed from the current error state, the velocity is updated first and
/// the new velocity moves the error; the compliant pose then rides on the new
/// desired pose `x_d`.
pub fn controller_step(state: &ProbeState, h_e: Vec3, x_d: Vec3, mu_f: Vec3, params: &ControllerParams) -> Result<ProbeState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("probe state"));
    }
    for (name, v) in [("measured force", h_e), ("desired pose", x_d), ("feedforward force", mu_f)] {
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(name));
        }
    }
    if !(params.dt.is_finite() && params.dt > 0.0) {
        return Err(Error::InvalidArgument("controller dt must be positive".into()));
    }
    let m_inv = params.mass_inverse()?;
    let x_e = Vector3::from(state.error());
    let v = Vector3::from(state.velocity);
    let drive = Vector3::from(h_e) + Vector3::from(mu_f) - to_matrix(&params.damping) * v - to_matrix(&params.stiffness) * x_e;
    let v_new = v + m_inv * drive * params.dt;
    let x_e_new = x_e + v_new * params.dt;
    let x_c = Vector3::from(x_d) + x_e_new;
    Ok(ProbeState {
        compliant_position: x_c.into(),
        velocity: v_new.into(),
        desired_position: x_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_gains_are_valid() {
        ControllerParams::default().validate().unwrap();
        let mut p = ControllerParams::default();
        p.stiffness[2][2] = 10.0;
        assert!(p.validate().is_err());
        let mut p = ControllerParams::default();
        p.damping[0][0] = -1.0;
        assert!(p.validate().is_err());
        let p = ControllerParams { dt: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = ControllerParams::default();
        let s = ProbeState::at_rest([0.1, -0.2, 0.3]);
        let next = controller_step(&s, [0.0; 3], s.desired_position, [0.0; 3], &p).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let p = ControllerParams::default();
        let s = ProbeState::at_rest([0.0; 3]);
        assert!(matches!(
            controller_step(&s, [f64::NAN, 0.0, 0.0], [0.0; 3], [0.0; 3], &p),
            Err(Error::NonFinite(_))
        ));
        assert!(controller_step(&s, [0.0; 3], [0.0, f64::INFINITY, 0.0], [0.0; 3], &p).is_err());
    }

    #[test]
    fn lateral_static_offset() {
        let p = ControllerParams::default();
        let mut s = ProbeState::at_rest([0.0; 3]);
        for _ in 0..20_000 {
            s = controller_step(&s, [2.7, 0.0, 0.0], [0.0; 3], [0.0; 3], &p).unwrap();
        }
        assert!((s.error()[0] - 0.01).abs() < 1e-9, "{:?}", s.error());
    }

    #[test]
    fn normal_axis_balances_feedforward_against_phantom() {
        let p = ControllerParams::default();
        let ph = Phantom::preset("phantom-c").unwrap();
        let mut s = ProbeState::at_rest([0.0, 0.0, ph.surface_height]);
        for _ in 0..20_000 {
            let h = phantom_contact_force(&ph, s.compliant_position);
            s = controller_step(&s, h, s.desired_position, [0.0, 0.0, -6.0], &p).unwrap();
        }
        let f = phantom_contact_force(&ph, s.compliant_position)[2];
        assert!((f - 6.0).abs() < 0.05, "{f}");
    }
}
