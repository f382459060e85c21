//! Soft-DTW alignment of demonstrations.
//!
//! The local cost is the squared Euclidean distance and the accumulated cost
//! follows `R(i,j) = c(i,j) + softmin_γ(R(i-1,j), R(i,j-1), R(i-1,j-1))`
//! with `softmin_γ(x) = -γ log Σ exp(-x/γ)`, which is the hard minimum at
//! `γ = 0`. The gradient of the accumulated cost with respect to the local
//! cost matrix is the expected alignment, used here as warping weights.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::{Demonstration, DemonstrationDatabase, RawSample};
use crate::error::{Error, Result};

/// Smoothing used when none is configured; channels are z-scored first.
pub const DEFAULT_GAMMA: f64 = 1.0;

fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    // Sort so that `lo` is the minimum; its exponential term is exactly 1.
    let (lo, x, y) = if a <= b && a <= c {
        (a, b, c)
    } else if b <= c {
        (b, a, c)
    } else {
        (c, a, b)
    };
    if gamma == 0.0 || lo == f64::INFINITY {
        return lo;
    }
    // Terms below e^-40 cannot change the sum at double precision.
    let term = |v: f64| {
        let d = (v - lo) / gamma;
        if d > 40.0 {
            0.0
        } else {
            (-d).exp()
        }
    };
    let s = term(x) + term(y);
    if s == 0.0 {
        lo
    } else {
        lo - gamma * s.ln_1p()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be finite and nonnegative, got {gamma}")));
    }
    Ok(())
}

fn check_sequences<T: AsRef<[f64]>>(a: &[T], b: &[T]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("sequences must be nonempty".into()));
    }
    let dim = a[0].as_ref().len();
    for v in a.iter().chain(b) {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Accumulated cost over an `n × m` grid using two rolling rows.
fn accumulated_cost(n: usize, m: usize, gamma: f64, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            cur[j] = cost(i - 1, j - 1) + softmin3(prev[j], cur[j - 1], prev[j - 1], gamma);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Expected alignment (row-major `n × m`) and the soft cost, for `gamma > 0`.
fn expected_alignment(n: usize, m: usize, gamma: f64, cost: impl Fn(usize, usize) -> f64) -> (Vec<f64>, f64) {
    let w = m + 2;
    let idx = |i: usize, j: usize| i * w + j;
    // Local cost on the padded grid; zero outside the interior.
    let mut c = vec![0.0; (n + 2) * w];
    for i in 1..=n {
        for j in 1..=m {
            c[idx(i, j)] = cost(i - 1, j - 1);
        }
    }
    let mut r = vec![f64::INFINITY; (n + 2) * w];
    r[idx(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            r[idx(i, j)] = c[idx(i, j)] + softmin3(r[idx(i - 1, j)], r[idx(i, j - 1)], r[idx(i - 1, j - 1)], gamma);
        }
    }
    for i in 1..=n {
        r[idx(i, m + 1)] = f64::NEG_INFINITY;
    }
    for j in 1..=m {
        r[idx(n + 1, j)] = f64::NEG_INFINITY;
    }
    let total = r[idx(n, m)];
    r[idx(n + 1, m + 1)] = total;

    // Each successor's weight is exp((R_succ - c_succ - R_ij) / γ); the
    // `exp(-R_ij / γ)` factor is shared, so only the successor terms differ.
    let inv = 1.0 / gamma;
    let mut e = vec![0.0; (n + 2) * w];
    e[idx(n + 1, m + 1)] = 1.0;
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            let rij = r[idx(i, j)];
            let term = |k: usize| {
                let ek = e[k];
                let arg = (r[k] - rij - c[k]) * inv;
                if ek == 0.0 || arg < -745.0 {
                    0.0
                } else {
                    ek * arg.exp()
                }
            };
            e[idx(i, j)] = term(idx(i + 1, j)) + term(idx(i, j + 1)) + term(idx(i + 1, j + 1));
        }
    }
    let mut out = Vec::with_capacity(n * m);
    for i in 1..=n {
        out.extend_from_slice(&e[idx(i, 1)..=idx(i, m)]);
    }
    (out, total)
}

/// Soft-DTW cost between two sequences of equal-dimension vectors.
pub fn soft_dtw_cost<T: AsRef<[f64]>>(a: &[T], b: &[T], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_sequences(a, b)?;
    Ok(accumulated_cost(a.len(), b.len(), gamma, |i, j| sq_dist(a[i].as_ref(), b[j].as_ref())))
}

/// Soft-DTW cost of an explicit local cost matrix.
pub fn soft_dtw_from_costs(costs: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if costs.is_empty() {
        return Err(Error::InvalidArgument("cost matrix must be nonempty".into()));
    }
    Ok(accumulated_cost(costs.nrows(), costs.ncols(), gamma, |i, j| costs[(i, j)]))
}

/// Gradient of [`soft_dtw_from_costs`] with respect to each cost entry.
pub fn soft_dtw_gradient(costs: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    if gamma == 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive; use dtw_path for hard alignment".into()));
    }
    let (n, m) = costs.shape();
    let (e, _) = expected_alignment(n, m, gamma, |i, j| costs[(i, j)]);
    Ok(DMatrix::from_row_slice(n, m, &e))
}

/// Expected alignment matrix `E` (`|a| × |b|`, entries in `[0, 1]`).
pub fn soft_alignment_matrix<T: AsRef<[f64]>>(a: &[T], b: &[T], gamma: f64) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    check_sequences(a, b)?;
    if gamma == 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive; use dtw_path for hard alignment".into()));
    }
    let (e, _) = expected_alignment(a.len(), b.len(), gamma, |i, j| sq_dist(a[i].as_ref(), b[j].as_ref()));
    Ok(DMatrix::from_row_slice(a.len(), b.len(), &e))
}

/// Classic DTW cost and one optimal warping path (ties favour the diagonal,
/// then the step in `a`).
pub fn dtw_path<T: AsRef<[f64]>>(a: &[T], b: &[T]) -> Result<(f64, Vec<(usize, usize)>)> {
    check_sequences(a, b)?;
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut r = vec![f64::INFINITY; (n + 1) * w];
    r[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = r[(i - 1) * w + j].min(r[i * w + j - 1]).min(r[(i - 1) * w + j - 1]);
            r[i * w + j] = sq_dist(a[i - 1].as_ref(), b[j - 1].as_ref()) + best;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n, m);
    while (i, j) != (1, 1) {
        let diag = r[(i - 1) * w + j - 1];
        let up = r[(i - 1) * w + j];
        let left = r[i * w + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((r[n * w + m], path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceChoice {
    /// Demonstration with the smallest summed Soft-DTW cost to all others.
    #[default]
    Medoid,
    Index(usize),
}

impl std::str::FromStr for ReferenceChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "medoid" {
            return Ok(ReferenceChoice::Medoid);
        }
        s.parse::<usize>()
            .map(ReferenceChoice::Index)
            .map_err(|_| Error::InvalidArgument(format!("reference must be `medoid` or an index, got `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub reference_index: usize,
    pub warped: DemonstrationDatabase,
    /// Soft-DTW cost of each demonstration against the reference.
    pub costs: Vec<f64>,
}

/// Alignment channel: the force vector, z-scored per component with
/// statistics pooled over the database.
fn alignment_channels(db: &DemonstrationDatabase) -> Vec<Vec<[f64; 3]>> {
    let total: usize = db.demonstrations.iter().map(Demonstration::len).sum();
    let mut mean = [0.0; 3];
    for s in db.demonstrations.iter().flat_map(|d| &d.samples) {
        for (m, f) in mean.iter_mut().zip(s.force) {
            *m += f;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut var = [0.0; 3];
    for s in db.demonstrations.iter().flat_map(|d| &d.samples) {
        for k in 0..3 {
            var[k] += (s.force[k] - mean[k]).powi(2);
        }
    }
    let std = var.map(|v| {
        let sd = (v / total as f64).sqrt();
        if sd > 1e-12 {
            sd
        } else {
            1.0
        }
    });
    db.demonstrations
        .iter()
        .map(|d| {
            d.samples
                .iter()
                .map(|s| [0, 1, 2].map(|k| (s.force[k] - mean[k]) / std[k]))
                .collect()
        })
        .collect()
}

fn weighted_sample(reference: &RawSample, demo: &[RawSample], weights: &[f64]) -> RawSample {
    let total: f64 = weights.iter().sum();
    let mut out = RawSample {
        t: reference.t,
        position: [0.0; 3],
        orientation: [0.0; 4],
        force: [0.0; 3],
        torque: [0.0; 3],
    };
    for (s, &w) in demo.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let w = w / total;
        for k in 0..3 {
            out.position[k] += w * s.position[k];
            out.force[k] += w * s.force[k];
            out.torque[k] += w * s.torque[k];
        }
        for k in 0..4 {
            out.orientation[k] += w * s.orientation[k];
        }
    }
    let qn = out.orientation.iter().map(|q| q * q).sum::<f64>().sqrt();
    if qn > 0.0 {
        out.orientation.iter_mut().for_each(|q| *q /= qn);
    } else {
        out.orientation = reference.orientation;
    }
    out
}

/// Warped copy of `demo` on the reference timeline and its soft cost.
fn warp_onto(reference: &Demonstration, ref_channel: &[[f64; 3]], demo: &Demonstration, channel: &[[f64; 3]], gamma: f64) -> (Demonstration, f64) {
    let pair_cost = |a: &[[f64; 3]], b: &[[f64; 3]]| accumulated_cost(a.len(), b.len(), gamma, |p, q| sq_dist(&a[p], &b[q]));
    // Identical alignment channels align along the diagonal.
    if ref_channel == channel {
        return (demo.clone(), pair_cost(ref_channel, channel));
    }
    let m = channel.len();
    let (e, cost) = expected_alignment(ref_channel.len(), m, gamma, |i, j| sq_dist(&ref_channel[i], &channel[j]));
    let samples = reference
        .samples
        .iter()
        .enumerate()
        .map(|(i, rs)| weighted_sample(rs, &demo.samples, &e[i * m..(i + 1) * m]))
        .collect();
    (Demonstration { samples, ..demo.clone() }, cost)
}

/// Warps every demonstration onto the timeline of a reference
/// demonstration. The reference itself is returned unchanged.
pub fn align_database(db: &DemonstrationDatabase, gamma: f64, reference: ReferenceChoice) -> Result<AlignmentResult> {
    check_gamma(gamma)?;
    if gamma == 0.0 {
        return Err(Error::InvalidArgument("alignment requires gamma > 0".into()));
    }
    if db.is_empty() {
        return Err(Error::InvalidArgument("cannot align an empty database".into()));
    }
    let h = db.len();
    let channels = alignment_channels(db);

    let reference_index = match reference {
        ReferenceChoice::Index(i) if i < h => i,
        ReferenceChoice::Index(i) => {
            return Err(Error::InvalidArgument(format!("reference index {i} out of range for {h} demonstrations")))
        }
        ReferenceChoice::Medoid => {
            let pairs: Vec<(usize, usize)> = (0..h).flat_map(|i| (i + 1..h).map(move |j| (i, j))).collect();
            let pair_costs: Vec<f64> = pairs
                .par_iter()
                .map(|&(i, j)| accumulated_cost(channels[i].len(), channels[j].len(), gamma, |p, q| sq_dist(&channels[i][p], &channels[j][q])))
                .collect();
            let mut totals = vec![0.0; h];
            for (&(i, j), c) in pairs.iter().zip(&pair_costs) {
                totals[i] += c;
                totals[j] += c;
            }
            // First minimum wins.
            totals
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, &t)| if t < best.1 { (i, t) } else { best })
                .0
        }
    };

    let ref_demo = &db.demonstrations[reference_index];
    let ref_channel = &channels[reference_index];
    let outputs: Vec<(Demonstration, f64)> = (0..h)
        .into_par_iter()
        .map(|k| {
            let demo = &db.demonstrations[k];
            if k == reference_index {
                let cost = accumulated_cost(ref_channel.len(), ref_channel.len(), gamma, |p, q| sq_dist(&ref_channel[p], &ref_channel[q]));
                (demo.clone(), cost)
            } else {
                warp_onto(ref_demo, ref_channel, demo, &channels[k], gamma)
            }
        })
        .collect();
    let (demonstrations, costs) = outputs.into_iter().unzip();
    Ok(AlignmentResult {
        reference_index,
        warped: DemonstrationDatabase {
            demonstrations,
            ..*db
        },
        costs,
    })
}
