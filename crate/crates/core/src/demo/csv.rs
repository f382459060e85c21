//! Demonstration CSV files.
//!
//! ```text
//! # scenario=<tag> scan_length_mm=<v>
//! t,px,py,pz,qw,qx,qy,qz,fx,fy,fz,tx,ty,tz
//! 0,0,0,0,1,0,0,0,0,0,-6,0,0,0
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Demonstration, DemonstrationDatabase, FeatureSelector, RawSample, Scenario};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 14] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "fx", "fy", "fz", "tx", "ty", "tz",
];

fn malformed(file: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        file: file.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn parse_header(file: &Path, line: &str) -> Result<(Scenario, f64)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| malformed(file, 1, 1, "missing `# scenario=... scan_length_mm=...` header"))?;
    let mut scenario = None;
    let mut scan_length = None;
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("scenario", v)) => scenario = Some(v.parse::<Scenario>()?),
            Some(("scan_length_mm", v)) => {
                scan_length = Some(
                    v.parse::<f64>()
                        .map_err(|_| malformed(file, 1, 1, format!("invalid scan_length_mm `{v}`")))?,
                )
            }
            _ => {}
        }
    }
    match (scenario, scan_length) {
        (Some(s), Some(l)) => Ok((s, l)),
        (None, _) => Err(malformed(file, 1, 1, "header lacks scenario")),
        (_, None) => Err(malformed(file, 1, 1, "header lacks scan_length_mm")),
    }
}

fn parse_row(file: &Path, lineno: usize, line: &str) -> Result<RawSample> {
    let mut values = [0.0; 14];
    let mut count = 0;
    for (i, field) in line.split(',').enumerate() {
        if i >= COLUMNS.len() {
            return Err(malformed(file, lineno, i + 1, format!("expected {} columns", COLUMNS.len())));
        }
        values[i] = field
            .trim()
            .parse::<f64>()
            .map_err(|_| malformed(file, lineno, i + 1, format!("cannot parse `{field}` as a number")))?;
        count += 1;
    }
    if count != COLUMNS.len() {
        return Err(malformed(
            file,
            lineno,
            count + 1,
            format!("expected {} columns, found {count}", COLUMNS.len()),
        ));
    }
    let v = values;
    Ok(RawSample {
        t: v[0],
        position: [v[1], v[2], v[3]],
        orientation: [v[4], v[5], v[6], v[7]],
        force: [v[8], v[9], v[10]],
        torque: [v[11], v[12], v[13]],
    })
}

/// Reads one demonstration file. The identifier is the file stem.
pub fn read_demonstration(path: &Path) -> Result<Demonstration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| malformed(path, 1, 1, "empty file"))?;
    let (scenario, scan_length_mm) = parse_header(path, header)?;
    match lines.next() {
        Some((_, cols)) if cols.split(',').map(str::trim).eq(COLUMNS) => {}
        Some((n, _)) => return Err(malformed(path, n, 1, format!("expected column header `{}`", COLUMNS.join(",")))),
        None => return Err(malformed(path, 2, 1, "missing column header")),
    }

    let mut samples: Vec<RawSample> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_row(path, lineno, line)?;
        sample
            .validate()
            .map_err(|message| malformed(path, lineno, 1, message))?;
        if let Some(prev) = samples.last() {
            if sample.t <= prev.t {
                return Err(malformed(path, lineno, 1, "non-monotonic timestamp"));
            }
        }
        samples.push(sample);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Demonstration::new(id, scenario, scan_length_mm, samples).map_err(|e| match e {
        Error::InvalidData { message, .. } => Error::InvalidData {
            file: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Loads a single CSV file or every `*.csv` file of a directory (sorted by
/// file name).
pub fn load_demonstrations(path: &Path, selector: &FeatureSelector) -> Result<DemonstrationDatabase> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut files = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "csv"))
            .collect::<Vec<_>>();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::InvalidData {
            file: path.to_path_buf(),
            message: "no demonstration files".into(),
        });
    }
    let demonstrations = files
        .iter()
        .map(|f| read_demonstration(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(DemonstrationDatabase::new(demonstrations, selector))
}

pub fn write_demonstration(demo: &Demonstration, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(demo.samples.len() * 64);
    let _ = writeln!(out, "# scenario={} scan_length_mm={}", demo.scenario, demo.scan_length_mm);
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for s in &demo.samples {
        let mut first = true;
        for v in s.channels() {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `<id>.csv` for every demonstration, creating `dir` if needed.
pub fn save_demonstrations(db: &DemonstrationDatabase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for demo in &db.demonstrations {
        write_demonstration(demo, &dir.join(format!("{}.csv", demo.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "# scenario=constant scan_length_mm=200\n\
        t,px,py,pz,qw,qx,qy,qz,fx,fy,fz,tx,ty,tz\n\
        0,0,0,0,1,0,0,0,0,0,-6,0,0,0\n\
        0.01,0.1,0,0,1,0,0,0,0,0,-6.1,0,0,0\n";

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", GOOD);
        let db = load_demonstrations(&p, &FeatureSelector::default()).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.demonstrations[0].len(), 2);
        assert_eq!(db.demonstrations[0].id, "d");
        assert_eq!(db.demonstrations[0].samples[1].force[2], -6.1);
    }

    #[test]
    fn bad_quaternion_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let text = GOOD.replace("0.01,0.1,0,0,1,", "0.01,0.1,0,0,0.9,");
        let p = write(dir.path(), "q.csv", &text);
        match load_demonstrations(&p, &FeatureSelector::default()) {
            Err(Error::Malformed { line, file, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(file, p);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_cell_reports_column() {
        let dir = tempfile::tempdir().unwrap();
        let text = GOOD.replace("0,0,0,0,1,0,0,0,0,0,-6,0,0,0", "0,0,0,0,1,0,0,0,0,0,abc,0,0,0");
        let p = write(dir.path(), "m.csv", &text);
        match load_demonstrations(&p, &FeatureSelector::default()) {
            Err(Error::Malformed { line, column, .. }) => assert_eq!((line, column), (3, 11)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = GOOD.replace("0.01,0.1", "0,0.1");
        let p = write(dir.path(), "t.csv", &text);
        let err = load_demonstrations(&p, &FeatureSelector::default()).unwrap_err();
        assert!(err.to_string().contains("non-monotonic"), "{err}");
    }

    #[test]
    fn missing_path_is_io_error() {
        let err = load_demonstrations(Path::new("/nonexistent/demos"), &FeatureSelector::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn save_creates_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", GOOD);
        let db = load_demonstrations(&p, &FeatureSelector::default()).unwrap();
        let target = dir.path().join("nested/out");
        save_demonstrations(&db, &target).unwrap();
        assert!(target.join("d.csv").is_file());
        assert_eq!(fs::read_to_string(target.join("d.csv")).unwrap(), GOOD);
    }
}
