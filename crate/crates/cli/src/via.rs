//! Via-point flags: `progress:force:variance` for a single point, or
//! `from-to:force:variance` to pin every reference input in a progress range.

use std::fmt;
use std::str::FromStr;

use forcelfd_core::gmm::ReferenceDatabase;
use forcelfd_core::kmp::ViaPoint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ViaSpec {
    Point { progress: f64, force: f64, variance: f64 },
    Range { from: f64, to: f64, force: f64, variance: f64 },
}

impl ViaSpec {
    /// Expands the spec against the reference inputs of a trained model.
    pub fn expand(&self, reference: &ReferenceDatabase) -> Result<Vec<ViaPoint>, String> {
        match *self {
            ViaSpec::Point { progress, force, variance } => Ok(vec![ViaPoint::scalar(progress, force, variance)]),
            ViaSpec::Range { from, to, force, variance } => {
                let points: Vec<ViaPoint> = reference
                    .entries
                    .iter()
                    .filter(|e| e.input.len() == 1 && (from..=to).contains(&e.input[0]))
                    .map(|e| ViaPoint::scalar(e.input[0], force, variance))
                    .collect();
                if points.is_empty() {
                    Err(format!("via range {self} contains no reference inputs"))
                } else {
                    Ok(points)
                }
            }
        }
    }
}

fn number(field: &str, what: &str) -> Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("invalid {what} `{field}`"))
}

fn check_progress(s: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(format!("via progress {s} outside [0, 1]"))
    }
}

impl FromStr for ViaSpec {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, String> {
        let fields: Vec<&str> = text.split(':').collect();
        let [at, force, variance] = fields[..] else {
            return Err(format!("via point `{text}` must look like progress:force:variance"));
        };
        let force = number(force, "via force")?;
        let variance = number(variance, "via variance")?;
        if variance <= 0.0 {
            return Err(format!("via variance must be positive, got {variance}"));
        }
        if let Ok(progress) = at.trim().parse::<f64>() {
            return Ok(ViaSpec::Point { progress: check_progress(progress)?, force, variance });
        }
        let (from, to) = at
            .split_once('-')
            .ok_or_else(|| format!("invalid via progress `{at}`"))?;
        let (from, to) = (check_progress(number(from, "via range start")?)?, check_progress(number(to, "via range end")?)?);
        if from > to {
            return Err(format!("via range `{at}` is reversed"));
        }
        Ok(ViaSpec::Range { from, to, force, variance })
    }
}

impl TryFrom<String> for ViaSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ViaSpec> for String {
    fn from(v: ViaSpec) -> String {
        v.to_string()
    }
}

impl fmt::Display for ViaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViaSpec::Point { progress, force, variance } => write!(f, "{progress}:{force}:{variance:e}"),
            ViaSpec::Range { from, to, force, variance } => write!(f, "{from}-{to}:{force}:{variance:e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use forcelfd_core::gmm::ReferenceEntry;
    use proptest::prelude::*;

    #[test]
    fn parses_points_and_ranges() {
        assert_eq!(
            "0.5:20.0:1e-6".parse::<ViaSpec>().unwrap(),
            ViaSpec::Point { progress: 0.5, force: 20.0, variance: 1e-6 }
        );
        assert_eq!(
            "0.4-0.6:20:1e-6".parse::<ViaSpec>().unwrap(),
            ViaSpec::Range { from: 0.4, to: 0.6, force: 20.0, variance: 1e-6 }
        );
        for bad in ["0.5:20", "x:1:1", "0.5:20:0", "0.5:20:-1", "1.5:20:1", "0.6-0.4:1:1", "0.1-:1:1", "0.5:nan:1"] {
            assert!(bad.parse::<ViaSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn range_expands_onto_reference_inputs() {
        let reference = ReferenceDatabase {
            input_dim: 1,
            output_dim: 1,
            entries: (0..=10)
                .map(|i| ReferenceEntry { input: vec![i as f64 / 10.0], mean: vec![5.0], covariance: vec![1.0] })
                .collect(),
        };
        let spec: ViaSpec = "0.35-0.65:20:1e-6".parse().unwrap();
        let inputs: Vec<f64> = spec.expand(&reference).unwrap().iter().map(|v| v.input[0]).collect();
        assert_eq!(inputs, vec![0.4, 0.5, 0.6]);
        assert!("0.41-0.42:20:1e-6".parse::<ViaSpec>().unwrap().expand(&reference).is_err());
    }

    proptest! {
        #[test]
        fn display_round_trips(a in 0.0f64..=1.0, b in 0.0f64..=1.0, f in -50.0f64..50.0, v in 1e-12f64..10.0) {
            let point = ViaSpec::Point { progress: a, force: f, variance: v };
            prop_assert_eq!(point.to_string().parse::<ViaSpec>().unwrap(), point);
            let range = ViaSpec::Range { from: a.min(b), to: a.max(b), force: f, variance: v };
            prop_assert_eq!(range.to_string().parse::<ViaSpec>().unwrap(), range);
        }
    }
}
