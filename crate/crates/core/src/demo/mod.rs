//! Demonstration data model.
//!
//! A demonstration is a sequence of raw probe recordings (pose, force and
//! torque). A database is one directory of CSV files, one file per
//! demonstration. Synthetic generators in [`synth`] stand in for the
//! recording hardware.

mod csv;
mod features;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_demonstrations, read_demonstration, save_demonstrations, write_demonstration};
pub use self::features::{extract_features, Axis, FeatureDatabase, FeatureSelector, FeatureSequence, InputFeature, OutputFeature};
pub(crate) use self::features::progress_of;
pub use self::synth::{nominal_force, synthesize_demonstrations, ScenarioSpec};

/// Quaternion norms farther than this from one are rejected.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// One raw recording sample.
///
/// Units: seconds, millimetres, unit quaternion `(w, x, y, z)`, newtons and
/// newton-millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub t: f64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

impl RawSample {
    pub fn quaternion_norm(&self) -> f64 {
        self.orientation.iter().map(|q| q * q).sum::<f64>().sqrt()
    }

    fn channels(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.t)
            .chain(self.position)
            .chain(self.orientation)
            .chain(self.force)
            .chain(self.torque)
    }

    /// Checks the per-sample invariants, returning a description of the
    /// first violation.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.channels().position(|v| !v.is_finite()) {
            return Err(format!("non-finite value in channel {}", i + 1));
        }
        let norm = self.quaternion_norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(format!("quaternion norm {norm} is not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Approximately constant pressing force along the whole scan.
    Constant,
    /// Gentle contact with one mid-scan vessel compression.
    Compression,
    /// Two compressions separated by a low-force stretch.
    Bimodal,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Constant, Scenario::Compression, Scenario::Bimodal];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Constant => "constant",
            Scenario::Compression => "compression",
            Scenario::Bimodal => "bimodal",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.tag() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    /// Identifier, the file stem when loaded from disk.
    pub id: String,
    pub scenario: Scenario,
    pub scan_length_mm: f64,
    pub samples: Vec<RawSample>,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, scenario: Scenario, scan_length_mm: f64, samples: Vec<RawSample>) -> Result<Self> {
        let demo = Demonstration {
            id: id.into(),
            scenario,
            scan_length_mm,
            samples,
        };
        demo.validate().map_err(|message| Error::InvalidData {
            file: demo.id.clone().into(),
            message,
        })?;
        Ok(demo)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.samples.len() < 2 {
            return Err(format!("needs at least 2 samples, has {}", self.samples.len()));
        }
        if !(self.scan_length_mm > 0.0 && self.scan_length_mm.is_finite()) {
            return Err(format!("scan length must be positive, got {}", self.scan_length_mm));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.validate().map_err(|e| format!("sample {i}: {e}"))?;
        }
        if let Some(i) = self.samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(format!("timestamps not strictly increasing at sample {}", i + 1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationDatabase {
    pub demonstrations: Vec<Demonstration>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl DemonstrationDatabase {
    pub fn new(demonstrations: Vec<Demonstration>, selector: &FeatureSelector) -> Self {
        DemonstrationDatabase {
            demonstrations,
            input_dim: selector.input_dim(),
            output_dim: selector.output_dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.demonstrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demonstrations.is_empty()
    }

    /// True when every demonstration has the same number of samples.
    pub fn is_aligned(&self) -> bool {
        self.demonstrations.windows(2).all(|w| w[0].len() == w[1].len())
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demonstrations.iter().find(|d| d.id == id)
    }

    /// Keeps the demonstrations whose identifiers appear in `ids`, in the
    /// order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let demonstrations = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Evaluation(format!("demonstration `{id}` not in database")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DemonstrationDatabase {
            demonstrations,
            ..*self
        })
    }

    /// Keeps every `step`-th sample (plus the final one) of each
    /// demonstration.
    pub fn subsample(&self, step: usize) -> Self {
        if step <= 1 {
            return self.clone();
        }
        let demonstrations = self
            .demonstrations
            .iter()
            .map(|d| {
                let last = d.samples.len() - 1;
                let samples = d
                    .samples
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % step == 0 || *i == last)
                    .map(|(_, s)| *s)
                    .collect();
                Demonstration { samples, ..d.clone() }
            })
            .collect();
        DemonstrationDatabase { demonstrations, ..*self }
    }
}
