//! Gaussian mixture over the joint `(s, ξ)` space, fitted by EM, and
//! Gaussian mixture regression producing the reference database.
//!
//! All joint dimensions are z-scored before fitting; the mixture lives in
//! the standardized space and regression outputs are mapped back to
//! physical units.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{clamp_eigenvalues, log_sum_exp, outer, symmetrize, Gaussian};

pub const GMM_SCHEMA_VERSION: u32 = 1;

/// Diagonal added to every standardized covariance.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and population standard deviation; dimensions
    /// with no spread keep unit scale.
    pub fn fit(data: &[Vec<f64>]) -> Self {
        let d = data[0].len();
        let m = data.len() as f64;
        let mut mean = vec![0.0; d];
        for x in data {
            for k in 0..d {
                mean[k] += x[k];
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; d];
        for x in data {
            for k in 0..d {
                var[k] += (x[k] - mean[k]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, mu)| {
                let s = (v / m).sqrt();
                if s > 1e-12 * mu.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub priors: Vec<f64>,
    /// Component means in standardized coordinates.
    pub means: Vec<DVector<f64>>,
    /// Component covariances in standardized coordinates.
    pub covariances: Vec<DMatrix<f64>>,
    pub scaler: Standardizer,
}

impl GmmModel {
    /// Builds a model directly in physical coordinates (identity scaling).
    pub fn new(input_dim: usize, output_dim: usize, priors: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let model = GmmModel {
            input_dim,
            output_dim,
            priors,
            means,
            covariances,
            scaler: Standardizer::identity(input_dim + output_dim),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn components(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.input_dim + self.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let c = self.priors.len();
        if c == 0 || self.means.len() != c || self.covariances.len() != c {
            return Err(Error::InvalidArgument("mixture needs matching priors, means and covariances".into()));
        }
        if self.scaler.mean.len() != d || self.scaler.std.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: self.scaler.mean.len(),
            });
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.priors.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidArgument(format!("priors must lie in (0, 1] and sum to 1 (sum {total})")));
        }
        for (m, s) in self.means.iter().zip(&self.covariances) {
            if m.len() != d || s.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: m.len(),
                });
            }
            if (s - s.transpose()).abs().max() > 1e-12 * (1.0 + s.abs().max()) {
                return Err(Error::NotPositiveDefinite("component covariance is not symmetric".into()));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite("component covariance".into()));
            }
        }
        Ok(())
    }

    fn split(&self, c: usize) -> ComponentBlocks {
        let (i, o) = (self.input_dim, self.output_dim);
        let mu = &self.means[c];
        let s = &self.covariances[c];
        ComponentBlocks {
            mu_s: mu.rows(0, i).into_owned(),
            mu_x: mu.rows(i, o).into_owned(),
            ss: s.view((0, 0), (i, i)).into_owned(),
            xs: s.view((i, 0), (o, i)).into_owned(),
            xx: s.view((i, i), (o, o)).into_owned(),
        }
    }

    /// Standardized log-likelihood of each point under the mixture.
    fn point_log_likelihoods(&self, scaled: &[Vec<f64>]) -> Result<Vec<f64>> {
        let gaussians = self
            .means
            .iter()
            .zip(&self.covariances)
            .map(|(m, s)| Gaussian::new(m.as_slice(), s))
            .collect::<Result<Vec<_>>>()?;
        let log_priors: Vec<f64> = self.priors.iter().map(|p| p.ln()).collect();
        Ok(scaled
            .par_iter()
            .map(|x| {
                let mut work = vec![0.0; x.len()];
                let terms: Vec<f64> = gaussians.iter().zip(&log_priors).map(|(g, lp)| lp + g.log_pdf(x, &mut work)).collect();
                log_sum_exp(&terms)
            })
            .collect())
    }

    /// Mean log-likelihood of physical-space data in standardized
    /// coordinates.
    pub fn mean_log_likelihood(&self, data: &[Vec<f64>]) -> Result<f64> {
        let scaled: Vec<Vec<f64>> = data.iter().map(|x| self.scaler.apply(x)).collect();
        let ll = self.point_log_likelihoods(&scaled)?;
        Ok(ll.iter().sum::<f64>() / ll.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GmmDocument {
            schema_version: GMM_SCHEMA_VERSION,
            components: self.components(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            priors: self.priors.clone(),
            means: self.means.iter().map(|m| m.as_slice().to_vec()).collect(),
            covariances: self.covariances.iter().map(row_major).collect(),
            scaler: self.scaler.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Json {
            path: "<gmm>".into(),
            source: e,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GmmDocument = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<gmm>".into(),
            source: e,
        })?;
        if doc.schema_version != GMM_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported GMM schema version {}", doc.schema_version)));
        }
        let d = doc.input_dim + doc.output_dim;
        let model = GmmModel {
            input_dim: doc.input_dim,
            output_dim: doc.output_dim,
            priors: doc.priors,
            means: doc.means.iter().map(|m| DVector::from_row_slice(m)).collect(),
            covariances: doc
                .covariances
                .iter()
                .map(|c| {
                    if c.len() != d * d {
                        Err(Error::DimensionMismatch {
                            expected: d * d,
                            actual: c.len(),
                        })
                    } else {
                        Ok(DMatrix::from_row_slice(d, d, c))
                    }
                })
                .collect::<Result<_>>()?,
            scaler: doc.scaler,
        };
        if model.components() != doc.components {
            return Err(Error::InvalidArgument("component count does not match entries".into()));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GmmModel::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Serialize, Deserialize)]
struct GmmDocument {
    schema_version: u32,
    components: usize,
    input_dim: usize,
    output_dim: usize,
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `(I+O) × (I+O)` matrices in standardized coordinates.
    covariances: Vec<Vec<f64>>,
    scaler: Standardizer,
}

struct ComponentBlocks {
    mu_s: DVector<f64>,
    mu_x: DVector<f64>,
    ss: DMatrix<f64>,
    xs: DMatrix<f64>,
    xx: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    /// Convergence threshold on the change of mean log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub covariance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            components: 8,
            seed: 0,
            tol: 1e-8,
            max_iter: 500,
            covariance_floor: COVARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood (standardized coordinates) before each M-step;
    /// the last entry belongs to the returned parameters.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl GmmFit {
    /// Largest drop of the log-likelihood between consecutive iterations.
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihood.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

fn sample_covariance(data: &[Vec<f64>], weights: Option<&[f64]>, mean: &[f64]) -> DMatrix<f64> {
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    let mut total = 0.0;
    for (i, x) in data.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        total += w;
        for r in 0..d {
            let dr = x[r] - mean[r];
            for c in 0..=r {
                cov[(r, c)] += w * dr * (x[c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in 0..=r {
            let v = cov[(r, c)] / total;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    cov
}

/// k-means++ seeding; returns the chosen data indices.
fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let m = data.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..m)];
    let mut dist: Vec<f64> = data.iter().map(|x| sq(x, &data[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "{k} components requested but the data has only {} distinct points",
                centers.len()
            )));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, d) in dist.iter().enumerate() {
            acc += d;
            if acc > target && *d > 0.0 {
                chosen = Some(i);
                break;
            }
        }
        // Round-off can leave `acc` just short of `target`.
        let next = chosen.unwrap_or_else(|| dist.iter().rposition(|d| *d > 0.0).unwrap());
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            dist[i] = dist[i].min(sq(x, &data[next]));
        }
    }
    Ok(centers)
}

/// Fits a `config.components`-component mixture to `data` (rows are
/// `[s, ξ]` with `input_dim` leading input coordinates) with EM.
pub fn fit_gmm(data: &[Vec<f64>], input_dim: usize, config: &GmmConfig) -> Result<GmmFit> {
    let c = config.components;
    if c == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::DegenerateData("no data".into()));
    }
    let d = data[0].len();
    if input_dim == 0 || input_dim >= d {
        return Err(Error::InvalidArgument(format!("input dimension {input_dim} invalid for {d}-D data")));
    }
    if let Some(x) = data.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: x.len() });
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite values".into()));
    }
    let m = data.len();
    if m <= c * d {
        return Err(Error::DegenerateData(format!("{m} points are too few for {c} components in {d} dimensions")));
    }

    let scaler = Standardizer::fit(data);
    let scaled: Vec<Vec<f64>> = data.iter().map(|x| scaler.apply(x)).collect();
    // Clamping the eigenvalues (rather than adding a ridge) is the exact
    // M-step under the constraint λ_min(Σ) ≥ floor, so EM stays monotone.
    let floor = config.covariance_floor;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = kmeans_pp(&scaled, c, &mut rng)?;
    let grand_mean: Vec<f64> = (0..d).map(|k| scaled.iter().map(|x| x[k]).sum::<f64>() / m as f64).collect();
    let shared = clamp_eigenvalues(&sample_covariance(&scaled, None, &grand_mean), floor);

    let mut model = GmmModel {
        input_dim,
        output_dim: d - input_dim,
        priors: vec![1.0 / c as f64; c],
        means: centers.iter().map(|&i| DVector::from_row_slice(&scaled[i])).collect(),
        covariances: vec![shared; c],
        scaler,
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut resp = vec![0.0; m * c];
    for _ in 0..config.max_iter.max(1) {
        // E-step
        let gaussians = model
            .means
            .iter()
            .zip(&model.covariances)
            .map(|(mu, s)| Gaussian::new(mu.as_slice(), s))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::DegenerateData("component covariance lost definiteness".into()))?;
        let log_priors: Vec<f64> = model.priors.iter().map(|p| p.ln()).collect();
        let point_ll: Vec<f64> = resp
            .par_chunks_mut(c)
            .zip(scaled.par_iter())
            .map(|(r, x)| {
                let mut work = vec![0.0; d];
                for (k, g) in gaussians.iter().enumerate() {
                    r[k] = log_priors[k] + g.log_pdf(x, &mut work);
                }
                let lse = log_sum_exp(r);
                r.iter_mut().for_each(|v| *v = (*v - lse).exp());
                lse
            })
            .collect();
        let ll = point_ll.iter().sum::<f64>() / m as f64;
        if !ll.is_finite() {
            return Err(Error::DegenerateData("log-likelihood is not finite".into()));
        }
        let done = trace.last().is_some_and(|prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
        if trace.len() == config.max_iter.max(1) {
            break;
        }

        // M-step
        for k in 0..c {
            let w: Vec<f64> = (0..m).map(|i| resp[i * c + k]).collect();
            let nk: f64 = w.iter().sum();
            if nk <= f64::MIN_POSITIVE * m as f64 {
                // An emptied component keeps its shape with a vanishing prior.
                model.priors[k] = nk / m as f64;
                continue;
            }
            let mean: Vec<f64> = (0..d).map(|j| w.iter().zip(&scaled).map(|(wi, x)| wi * x[j]).sum::<f64>() / nk).collect();
            model.covariances[k] = clamp_eigenvalues(&sample_covariance(&scaled, Some(&w), &mean), floor);
            model.means[k] = DVector::from_vec(mean);
            model.priors[k] = nk / m as f64;
        }
        let total: f64 = model.priors.iter().sum();
        model.priors.iter_mut().for_each(|p| *p = (*p / total).max(f64::MIN_POSITIVE));
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
        converged,
    })
}

/// Bayesian information criterion of a fitted model on its training data.
pub fn bic(model: &GmmModel, data: &[Vec<f64>]) -> Result<f64> {
    let d = model.dim() as f64;
    let c = model.components() as f64;
    let params = (c - 1.0) + c * d + c * d * (d + 1.0) / 2.0;
    let m = data.len() as f64;
    Ok(-2.0 * model.mean_log_likelihood(data)? * m + params * m.ln())
}

/// Fits every component count in `candidates` and keeps the lowest BIC.
pub fn select_components_bic(data: &[Vec<f64>], input_dim: usize, candidates: impl IntoIterator<Item = usize>, config: &GmmConfig) -> Result<(GmmFit, Vec<(usize, f64)>)> {
    let mut best: Option<(GmmFit, f64)> = None;
    let mut scores = Vec::new();
    for c in candidates {
        let fit = match fit_gmm(data, input_dim, &GmmConfig { components: c, ..*config }) {
            Ok(f) => f,
            Err(Error::DegenerateData(_)) => continue,
            Err(e) => return Err(e),
        };
        let score = bic(&fit.model, data)?;
        scores.push((c, score));
        if best.as_ref().is_none_or(|(_, b)| score < *b) {
            best = Some((fit, score));
        }
    }
    let (fit, _) = best.ok_or_else(|| Error::DegenerateData("no candidate component count could be fitted".into()))?;
    Ok((fit, scores))
}

/// Component weights `h_c(ŝ)` of a physical-space input.
pub fn responsibilities(model: &GmmModel, s_hat: &[f64]) -> Result<Vec<f64>> {
    if s_hat.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            actual: s_hat.len(),
        });
    }
    let x: Vec<f64> = (0..model.input_dim).map(|k| (s_hat[k] - model.scaler.mean[k]) / model.scaler.std[k]).collect();
    let mut logs = Vec::with_capacity(model.components());
    let mut work = vec![0.0; model.input_dim];
    for c in 0..model.components() {
        let b = model.split(c);
        let g = Gaussian::new(b.mu_s.as_slice(), &b.ss).map_err(|_| Error::NotPositiveDefinite("input block of a component".into()))?;
        logs.push(model.priors[c].ln() + g.log_pdf(&x, &mut work));
    }
    let lse = log_sum_exp(&logs);
    Ok(logs.into_iter().map(|l| (l - lse).exp()).collect())
}

/// Conditional mean and covariance of `ξ` given `s = ŝ` (physical units).
pub fn gmr_condition(model: &GmmModel, s_hat: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (i_dim, o_dim) = (model.input_dim, model.output_dim);
    let h = responsibilities(model, s_hat)?;
    let x = DVector::from_iterator(i_dim, (0..i_dim).map(|k| (s_hat[k] - model.scaler.mean[k]) / model.scaler.std[k]));

    let mut mean = DVector::zeros(o_dim);
    let mut second = DMatrix::zeros(o_dim, o_dim);
    for (c, hc) in h.iter().enumerate() {
        let b = model.split(c);
        let ss_chol = b.ss.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("input block of a component".into()))?;
        let gain_t = ss_chol.solve(&b.xs.transpose()); // Σss⁻¹ Σsξ
        let mu_c = &b.mu_x + gain_t.transpose() * (&x - &b.mu_s);
        let cond_cov = &b.xx - &b.xs * &gain_t;
        mean += *hc * &mu_c;
        second += *hc * (cond_cov + outer(&mu_c, &mu_c));
    }
    let cov = symmetrize(&(second - outer(&mean, &mean)));

    let scale = DVector::from_iterator(o_dim, model.scaler.std[i_dim..].iter().copied());
    let offset = DVector::from_iterator(o_dim, model.scaler.mean[i_dim..].iter().copied());
    let mean_phys = mean.component_mul(&scale) + offset;
    let d = DMatrix::from_diagonal(&scale);
    Ok((mean_phys, symmetrize(&(&d * cov * &d))))
}

/// One `(s_n, μ̂_n, Σ̂_n)` entry; the covariance is row-major `O × O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub input: Vec<f64>,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl ReferenceEntry {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let o = self.mean.len();
        DMatrix::from_row_slice(o, o, &self.covariance)
    }
}

/// Conditional means and covariances along a reference input trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDatabase {
    pub input_dim: usize,
    pub output_dim: usize,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceDatabase {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument("reference database is empty".into()));
        }
        let (i, o) = (self.input_dim, self.output_dim);
        for e in &self.entries {
            if e.input.len() != i || e.mean.len() != o || e.covariance.len() != o * o {
                return Err(Error::DimensionMismatch {
                    expected: i,
                    actual: e.input.len(),
                });
            }
            if e.input.iter().chain(&e.mean).chain(&e.covariance).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("reference database holds non-finite values".into()));
            }
        }
        Ok(())
    }
}

/// Evenly spaced scalar inputs covering `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![0.0]],
        _ => (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect(),
    }
}

pub fn build_reference_database(model: &GmmModel, inputs: &[Vec<f64>]) -> Result<ReferenceDatabase> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("reference input trajectory is empty".into()));
    }
    let entries = inputs
        .iter()
        .map(|s| {
            let (mean, cov) = gmr_condition(model, s)?;
            Ok(ReferenceEntry {
                input: s.clone(),
                mean: mean.as_slice().to_vec(),
                covariance: row_major(&cov),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReferenceDatabase {
        input_dim: model.input_dim,
        output_dim: model.output_dim,
        entries,
    })
}
