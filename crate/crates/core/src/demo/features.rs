use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Demonstration, DemonstrationDatabase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn parse(s: &str) -> Option<Axis> {
        match s {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }
}

/// Channels forming the model input `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputFeature {
    /// Scalar scan progress in `[0, 1]` along one axis.
    Progress { axis: Axis },
    /// Raw 3-D probe position in millimetres.
    Position,
}

/// Channels forming the model output `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutputFeature {
    /// Pressing force along the contact normal: `-f · axis`, in newtons.
    NormalForce { axis: Axis },
    /// Full 3-D force vector in newtons.
    Force,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelector {
    pub input: InputFeature,
    pub output: OutputFeature,
}

impl Default for FeatureSelector {
    fn default() -> Self {
        FeatureSelector {
            input: InputFeature::Progress { axis: Axis::X },
            output: OutputFeature::NormalForce { axis: Axis::Z },
        }
    }
}

impl FeatureSelector {
    pub fn input_dim(&self) -> usize {
        match self.input {
            InputFeature::Progress { .. } => 1,
            InputFeature::Position => 3,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.output {
            OutputFeature::NormalForce { .. } => 1,
            OutputFeature::Force => 3,
        }
    }

    /// Parses channel names such as `progress:x`, `position`,
    /// `normal-force:z` or `force`.
    pub fn parse(input: &str, output: &str) -> Result<Self> {
        let bad = |s: &str| Error::InvalidArgument(format!("unknown feature channel `{s}`"));
        let input_feature = match input.split_once(':') {
            Some(("progress", a)) => InputFeature::Progress {
                axis: Axis::parse(a).ok_or_else(|| bad(input))?,
            },
            None if input == "position" => InputFeature::Position,
            _ => return Err(bad(input)),
        };
        let output_feature = match output.split_once(':') {
            Some(("normal-force", a)) => OutputFeature::NormalForce {
                axis: Axis::parse(a).ok_or_else(|| bad(output))?,
            },
            None if output == "force" => OutputFeature::Force,
            _ => return Err(bad(output)),
        };
        Ok(FeatureSelector {
            input: input_feature,
            output: output_feature,
        })
    }
}

impl fmt::Display for FeatureSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.input {
            InputFeature::Progress { axis } => write!(f, "progress:{}", axis.name())?,
            InputFeature::Position => f.write_str("position")?,
        }
        f.write_str(" -> ")?;
        match self.output {
            OutputFeature::NormalForce { axis } => write!(f, "normal-force:{}", axis.name()),
            OutputFeature::Force => f.write_str("force"),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Axis::parse(s).ok_or_else(|| Error::InvalidArgument(format!("unknown axis `{s}`")))
    }
}

/// `(s, ξ)` pairs extracted from one demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDatabase {
    pub sequences: Vec<FeatureSequence>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl FeatureDatabase {
    /// All samples as concatenated `[s, ξ]` vectors.
    pub fn joint_points(&self) -> Vec<Vec<f64>> {
        self.sequences
            .iter()
            .flat_map(|seq| {
                seq.inputs.iter().zip(&seq.outputs).map(|(s, x)| {
                    let mut v = Vec::with_capacity(s.len() + x.len());
                    v.extend_from_slice(s);
                    v.extend_from_slice(x);
                    v
                })
            })
            .collect()
    }

    pub fn total_samples(&self) -> usize {
        self.sequences.iter().map(|s| s.inputs.len()).sum()
    }
}

/// Scan progress of a sample: distance travelled along `axis` from the first
/// sample, divided by the scan length and clamped to `[0, 1]`.
pub(crate) fn progress_of(demo: &Demonstration, position: &[f64; 3], axis: Axis) -> f64 {
    let origin = demo.samples[0].position[axis.index()];
    ((position[axis.index()] - origin) / demo.scan_length_mm).clamp(0.0, 1.0)
}

pub fn extract_features(db: &DemonstrationDatabase, sel: &FeatureSelector) -> Result<FeatureDatabase> {
    if db.input_dim != sel.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: db.input_dim,
            actual: sel.input_dim(),
        });
    }
    if db.output_dim != sel.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: db.output_dim,
            actual: sel.output_dim(),
        });
    }
    let sequences = db
        .demonstrations
        .iter()
        .map(|demo| {
            let inputs = demo
                .samples
                .iter()
                .map(|s| match sel.input {
                    InputFeature::Progress { axis } => vec![progress_of(demo, &s.position, axis)],
                    InputFeature::Position => s.position.to_vec(),
                })
                .collect();
            let outputs = demo
                .samples
                .iter()
                .map(|s| match sel.output {
                    OutputFeature::NormalForce { axis } => vec![-s.force[axis.index()]],
                    OutputFeature::Force => s.force.to_vec(),
                })
                .collect();
            FeatureSequence {
                id: demo.id.clone(),
                inputs,
                outputs,
            }
        })
        .collect();
    Ok(FeatureDatabase {
        sequences,
        input_dim: sel.input_dim(),
        output_dim: sel.output_dim(),
    })
}
