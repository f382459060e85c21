//! Kernelized movement primitive.
//!
//! The model imitates a reference database `{s_n, μ̂_n, Σ̂_n}` without any
//! explicit basis functions. With `K` the block kernel matrix
//! (`k(s_i, s_j)·I_O`), `Σ = blockdiag(Σ̂_n)` and `μ` the stacked means:
//!
//! ```text
//! mean(s*)       = k* (K + λΣ)⁻¹ μ
//! covariance(s*) = (N / λ_c) (k(s*, s*) - k* (K + λ_c Σ)⁻¹ k*ᵀ)
//! ```
//!
//! Both systems are factorized once at training time.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{ReferenceDatabase, ReferenceEntry};
use crate::linalg::{condition_number, floor_eigenvalues, symmetrize};

pub const KMP_SCHEMA_VERSION: u32 = 1;

/// Diagonal jitter tried once when a factorization fails.
pub const FACTORIZATION_JITTER: f64 = 1e-10;

/// Default nearest-input distance under which a via-point replaces an entry.
pub const DEFAULT_VIA_THRESHOLD: f64 = 5e-4;

/// `k(a, b) = exp(-σ_f ‖a - b‖²)`
pub fn rbf_kernel(a: &[f64], b: &[f64], sigma_f: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sigma_f * d2).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub sigma_f: f64,
    pub lambda: f64,
    pub lambda_c: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            sigma_f: 50.0,
            lambda: 0.1,
            lambda_c: 10.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_f", self.sigma_f), ("lambda", self.lambda), ("lambda_c", self.lambda_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Desired point `{s_d, μ_d, Σ_d}`; the covariance is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub input: Vec<f64>,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl ViaPoint {
    /// Scalar via-point with variance `variance`.
    pub fn scalar(input: f64, mean: f64, variance: f64) -> Self {
        ViaPoint {
            input: vec![input],
            mean: vec![mean],
            covariance: vec![variance],
        }
    }

    fn validate(&self, db: &ReferenceDatabase) -> Result<()> {
        if self.input.len() != db.input_dim {
            return Err(Error::DimensionMismatch {
                expected: db.input_dim,
                actual: self.input.len(),
            });
        }
        let o = db.output_dim;
        if self.mean.len() != o || self.covariance.len() != o * o {
            return Err(Error::DimensionMismatch {
                expected: o,
                actual: self.mean.len(),
            });
        }
        let cov = DMatrix::from_row_slice(o, o, &self.covariance);
        if (&cov - cov.transpose()).abs().max() > 1e-12 || crate::linalg::min_eigenvalue(&cov) < 0.0 {
            return Err(Error::NotPositiveDefinite("via-point covariance must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Inserts a via-point: replaces the entry with the nearest input when it
/// lies within `threshold`, otherwise appends (keeping scalar inputs
/// sorted). The nearest entry is the first one on ties.
pub fn insert_via_point(reference: &ReferenceDatabase, vp: &ViaPoint, threshold: f64) -> Result<ReferenceDatabase> {
    reference.validate()?;
    vp.validate(reference)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("via-point threshold must be positive, got {threshold}")));
    }
    let dist = |e: &ReferenceEntry| e.input.iter().zip(&vp.input).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let (nearest, d) = reference
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, dist(e)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let entry = ReferenceEntry {
        input: vp.input.clone(),
        mean: vp.mean.clone(),
        covariance: vp.covariance.clone(),
    };
    let mut out = reference.clone();
    if d <= threshold {
        out.entries[nearest] = entry;
    } else if reference.input_dim == 1 {
        let at = out.entries.partition_point(|e| e.input[0] <= vp.input[0]);
        out.entries.insert(at, entry);
    } else {
        out.entries.push(entry);
    }
    Ok(out)
}

fn entry_order(a: &ReferenceEntry, b: &ReferenceEntry) -> Ordering {
    let cmp = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    cmp(&a.input, &b.input)
        .then_with(|| cmp(&a.mean, &b.mean))
        .then_with(|| cmp(&a.covariance, &b.covariance))
}

#[derive(Debug, Clone)]
pub struct KmpModel {
    reference: ReferenceDatabase,
    params: KernelParams,
    gram: DMatrix<f64>,
    stacked_mean: DVector<f64>,
    /// `(K + λΣ)⁻¹ μ`
    weights: DVector<f64>,
    /// Lower Cholesky factor of `K + λ_c Σ`.
    cov_factor: DMatrix<f64>,
    condition: f64,
    jittered: bool,
}

fn factorize(a: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch, false));
    }
    let n = a.nrows();
    let jittered = &a + DMatrix::identity(n, n) * FACTORIZATION_JITTER;
    match jittered.cholesky() {
        Some(ch) => Ok((ch, true)),
        None => Err(Error::Factorization {
            condition: condition_number(&a),
        }),
    }
}

/// Builds and factorizes the regularized kernel systems of a reference
/// database. Entries are put in canonical order first, so predictions do not
/// depend on the order of the database.
pub fn train_kmp(reference: &ReferenceDatabase, params: KernelParams) -> Result<KmpModel> {
    params.validate()?;
    reference.validate()?;
    let mut reference = reference.clone();
    reference.entries.sort_by(entry_order);
    for e in &reference.entries {
        let cov = e.covariance_matrix();
        if (&cov - cov.transpose()).abs().max() > 1e-9 * (1.0 + cov.abs().max()) || crate::linalg::min_eigenvalue(&cov) < -1e-9 {
            return Err(Error::NotPositiveDefinite(format!("reference covariance at input {:?}", e.input)));
        }
    }

    let n = reference.len();
    let o = reference.output_dim;
    let size = n * o;
    let mut gram = DMatrix::zeros(size, size);
    let mut sigma = DMatrix::zeros(size, size);
    let mut stacked_mean = DVector::zeros(size);
    for (i, ei) in reference.entries.iter().enumerate() {
        for (j, ej) in reference.entries.iter().enumerate().skip(i) {
            let k = rbf_kernel(&ei.input, &ej.input, params.sigma_f);
            for a in 0..o {
                gram[(i * o + a, j * o + a)] = k;
                gram[(j * o + a, i * o + a)] = k;
            }
        }
        for a in 0..o {
            stacked_mean[i * o + a] = ei.mean[a];
            for b in 0..o {
                sigma[(i * o + a, i * o + b)] = ei.covariance[a * o + b];
            }
        }
    }

    let mean_system = symmetrize(&(&gram + &sigma * params.lambda));
    let condition = condition_number(&mean_system);
    let (mean_chol, jit_mean) = factorize(mean_system)?;
    let weights = mean_chol.solve(&stacked_mean);
    let (cov_chol, jit_cov) = factorize(symmetrize(&(&gram + &sigma * params.lambda_c)))?;

    Ok(KmpModel {
        reference,
        params,
        gram,
        stacked_mean,
        weights,
        cov_factor: cov_chol.l(),
        condition,
        jittered: jit_mean || jit_cov,
    })
}

impl KmpModel {
    pub fn reference(&self) -> &ReferenceDatabase {
        &self.reference
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn stacked_mean(&self) -> &DVector<f64> {
        &self.stacked_mean
    }

    /// Condition number of `K + λΣ`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// True when a factorization needed the diagonal jitter fallback.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn input_dim(&self) -> usize {
        self.reference.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.reference.output_dim
    }

    fn kernel_row(&self, s: &[f64]) -> Vec<f64> {
        self.reference
            .entries
            .iter()
            .map(|e| rbf_kernel(s, &e.input, self.params.sigma_f))
            .collect()
    }

    fn check_query(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: s.len(),
            });
        }
        Ok(())
    }

    pub fn predict_mean(&self, s: &[f64]) -> Result<DVector<f64>> {
        self.check_query(s)?;
        let o = self.output_dim();
        let row = self.kernel_row(s);
        let mut out = DVector::zeros(o);
        for (i, k) in row.iter().enumerate() {
            for a in 0..o {
                out[a] += k * self.weights[i * o + a];
            }
        }
        Ok(out)
    }

    /// Covariance before symmetrization and eigenvalue flooring.
    pub fn predict_covariance_raw(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        self.check_query(s)?;
        let o = self.output_dim();
        let n = self.reference.len();
        let row = self.kernel_row(s);
        let mut kstar_t = DMatrix::zeros(n * o, o);
        for (i, k) in row.iter().enumerate() {
            for a in 0..o {
                kstar_t[(i * o + a, a)] = *k;
            }
        }
        let v = self
            .cov_factor
            .solve_lower_triangular(&kstar_t)
            .ok_or_else(|| Error::NotPositiveDefinite("covariance system factor".into()))?;
        let self_k = rbf_kernel(s, s, self.params.sigma_f);
        let inner = DMatrix::identity(o, o) * self_k - v.transpose() * v;
        Ok(inner * (n as f64 / self.params.lambda_c))
    }

    /// Symmetric positive semidefinite predictive covariance.
    pub fn predict_covariance(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        Ok(floor_eigenvalues(&self.predict_covariance_raw(s)?))
    }

    /// `Σ_n KL(prediction(s_n) ‖ reference_n)`.
    pub fn kl_diagnostic(&self) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.reference.entries {
            let mean = self.predict_mean(&e.input)?;
            let cov = self.predict_covariance(&e.input)?;
            total += gaussian_kl(&mean, &cov, &DVector::from_row_slice(&e.mean), &e.covariance_matrix())?;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = KmpDocument {
            schema_version: KMP_SCHEMA_VERSION,
            params: self.params,
            reference: self.reference.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
            path: "<kmp>".into(),
            source: e,
        })
    }

    /// Restores a model; the kernel systems are refactorized.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: KmpDocument = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<kmp>".into(),
            source: e,
        })?;
        if doc.schema_version != KMP_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported KMP schema version {}", doc.schema_version)));
        }
        train_kmp(&doc.reference, doc.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KmpModel::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct KmpDocument {
    schema_version: u32,
    params: KernelParams,
    reference: ReferenceDatabase,
}

/// Closed-form `KL(N(a) ‖ N(b))`.
pub fn gaussian_kl(mean_a: &DVector<f64>, cov_a: &DMatrix<f64>, mean_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> Result<f64> {
    let k = mean_a.len();
    if mean_b.len() != k || cov_a.shape() != (k, k) || cov_b.shape() != (k, k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: mean_b.len(),
        });
    }
    let la = cov_a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("first covariance".into()))?;
    let lb = cov_b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("second covariance".into()))?;
    let log_det = |l: &DMatrix<f64>| 2.0 * (0..k).map(|i| l[(i, i)].ln()).sum::<f64>();
    let trace = lb.solve(cov_a).trace();
    let diff = mean_b - mean_a;
    let maha = diff.dot(&lb.solve(&diff));
    let kl = 0.5 * (trace + maha - k as f64 + log_det(&lb.l()) - log_det(&la.l()));
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_db(points: &[(f64, f64, f64)]) -> ReferenceDatabase {
        ReferenceDatabase {
            input_dim: 1,
            output_dim: 1,
            entries: points
                .iter()
                .map(|&(s, m, v)| ReferenceEntry {
                    input: vec![s],
                    mean: vec![m],
                    covariance: vec![v],
                })
                .collect(),
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(rbf_kernel(&[0.3], &[0.3], 7.0), 1.0);
        assert!((rbf_kernel(&[0.0], &[1.0], 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(rbf_kernel(&[0.1, 2.0], &[0.4, 1.0], 2.0), rbf_kernel(&[0.4, 1.0], &[0.1, 2.0], 2.0));
    }

    #[test]
    fn params_must_be_positive() {
        let db = scalar_db(&[(0.0, 1.0, 1.0)]);
        let bad = KernelParams { lambda: 0.0, ..Default::default() };
        assert!(train_kmp(&db, bad).is_err());
    }

    #[test]
    fn single_point_scalar_cases() {
        let db = scalar_db(&[(0.5, 6.0, 1.0)]);
        let p = KernelParams { sigma_f: 3.0, lambda: 1.0, lambda_c: 1.0 };
        let m = train_kmp(&db, p).unwrap();
        assert_eq!(m.gram()[(0, 0)], 1.0);
        assert!((m.predict_mean(&[0.5]).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!((m.predict_covariance(&[0.5]).unwrap()[(0, 0)] - 0.5).abs() < 1e-12);
        // far query: kernel row vanishes
        let far = [0.5 + (50.0f64 / 3.0).sqrt()];
        assert!(m.predict_mean(&far).unwrap()[0].abs() < 1e-12);
        assert!((m.predict_covariance(&far).unwrap()[(0, 0)] - 1.0).abs() < 1e-12);

        let tight = train_kmp(&db, KernelParams { lambda: 1e-9, ..p }).unwrap();
        assert!((tight.predict_mean(&[0.5]).unwrap()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn large_lambda_shrinks_to_zero() {
        let db = scalar_db(&[(0.0, 5.0, 0.5), (0.5, 7.0, 0.5), (1.0, 6.0, 0.5)]);
        let m = train_kmp(&db, KernelParams { lambda: 1e9, ..Default::default() }).unwrap();
        assert!(m.predict_mean(&[0.5]).unwrap()[0].abs() < 1e-7);
    }

    #[test]
    fn duplicate_inputs_are_regularized() {
        let db = scalar_db(&[(0.5, 4.0, 0.2), (0.5, 8.0, 0.2)]);
        let m = train_kmp(&db, KernelParams { lambda: 1.0, ..Default::default() }).unwrap();
        let mean = m.predict_mean(&[0.5]).unwrap()[0];
        // symmetric problem: α₁ = α₂ = 6 / (2 + 0.2) → mean = 12 / 2.2
        assert!((mean - 12.0 / 2.2).abs() < 1e-12, "{mean}");
    }

    #[test]
    fn via_point_replace_and_append() {
        let db = scalar_db(&[(0.0, 5.0, 1.0), (0.5, 5.0, 1.0), (1.0, 5.0, 1.0)]);
        let r = DEFAULT_VIA_THRESHOLD;
        let replaced = insert_via_point(&db, &ViaPoint::scalar(0.5, 20.0, 1e-8), r).unwrap();
        assert_eq!(replaced.len(), 3);
        assert_eq!(replaced.entries[1].mean, vec![20.0]);
        let appended = insert_via_point(&db, &ViaPoint::scalar(0.5 + 10.0 * r, 20.0, 1e-8), r).unwrap();
        assert_eq!(appended.len(), 4);
        assert_eq!(appended.entries[2].input, vec![0.5 + 10.0 * r]);
        assert!(appended.entries.windows(2).all(|w| w[0].input[0] < w[1].input[0]));
        assert!(insert_via_point(&db, &ViaPoint::scalar(0.5, 1.0, -1.0), r).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        let z = DVector::from_row_slice(&[0.0]);
        let one = DVector::from_row_slice(&[1.0]);
        let i = DMatrix::identity(1, 1);
        assert_eq!(gaussian_kl(&z, &i, &z, &i).unwrap(), 0.0);
        assert!((gaussian_kl(&z, &i, &one, &i).unwrap() - 0.5).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(gaussian_kl(&z, &bad, &z, &i).is_err());
    }

    #[test]
    fn json_round_trip_refactorizes() {
        let db = scalar_db(&[(0.0, 5.0, 0.3), (0.4, 9.0, 0.2), (1.0, 6.0, 0.1)]);
        let m = train_kmp(&db, KernelParams::default()).unwrap();
        let back = KmpModel::from_json(&m.to_json().unwrap()).unwrap();
        for s in [0.0, 0.25, 0.7] {
            assert_eq!(m.predict_mean(&[s]).unwrap(), back.predict_mean(&[s]).unwrap());
        }
    }
}
