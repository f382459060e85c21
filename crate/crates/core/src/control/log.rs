use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::reproduction::ScanPlan;
use super::Vec3;
use crate::error::{Error, Result};
use crate::image::GrayImage;

const LOG_FILE: &str = "log.csv";
const MANIFEST_FILE: &str = "manifest.json";
const FRAMES_DIR: &str = "frames";
const LOG_HEADER: &str = "t,xc_x,xc_y,xc_z,xd_x,xd_y,xd_z,f_meas,f_target_mean,f_target_std";
const SCAN_LOG_SCHEMA_VERSION: u32 = 1;

/// One control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRecord {
    pub t: f64,
    pub compliant: Vec3,
    pub desired: Vec3,
    /// Normal contact force measured at the probe, N.
    pub force: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub image: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanLog {
    pub dt: f64,
    pub plan: ScanPlan,
    pub frame_rate_hz: f64,
    /// Time of first contact with the phantom.
    pub contact_time: Option<f64>,
    /// Time the desired pose started moving along the plan.
    pub scan_start_time: Option<f64>,
    pub records: Vec<ScanRecord>,
    pub frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    index: usize,
    t: f64,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    dt: f64,
    plan: ScanPlan,
    frame_rate_hz: f64,
    contact_time: Option<f64>,
    scan_start_time: Option<f64>,
    records: usize,
    frames: Vec<FrameEntry>,
}

impl ScanLog {
    /// Progress along the plan of a record's desired pose.
    pub fn progress(&self, record: &ScanRecord) -> f64 {
        self.plan.progress(record.desired)
    }

    fn scan_start(&self) -> f64 {
        self.scan_start_time.unwrap_or(f64::INFINITY)
    }

    /// `(progress, measured force)` for every record of the scan phase.
    pub fn executed_profile(&self) -> (Vec<f64>, Vec<f64>) {
        self.scan_records().map(|r| (self.progress(r), r.force)).unzip()
    }

    /// `(progress, target mean)` for every record of the scan phase.
    pub fn target_profile(&self) -> (Vec<f64>, Vec<f64>) {
        self.scan_records().map(|r| (self.progress(r), r.target_mean)).unzip()
    }

    pub fn scan_records(&self) -> impl Iterator<Item = &ScanRecord> {
        let t0 = self.scan_start() - 0.25 * self.dt;
        self.records.iter().filter(move |r| r.t >= t0)
    }

    /// Frames of the scan phase with time measured from scan start.
    pub fn scan_frames(&self) -> Vec<(f64, &GrayImage)> {
        let t0 = self.scan_start();
        self.frames
            .iter()
            .filter(|f| f.t >= t0 - 0.25 * self.dt)
            .map(|f| (f.t - t0, &f.image))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join(FRAMES_DIR);
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

        let mut csv = String::with_capacity(self.records.len() * 120);
        csv.push_str(LOG_HEADER);
        csv.push('\n');
        for r in &self.records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t, r.compliant[0], r.compliant[1], r.compliant[2], r.desired[0], r.desired[1], r.desired[2], r.force, r.target_mean, r.target_std
            );
        }
        let log_path = dir.join(LOG_FILE);
        fs::write(&log_path, csv).map_err(|e| Error::io(&log_path, e))?;

        let mut entries = Vec::with_capacity(self.frames.len());
        for (index, frame) in self.frames.iter().enumerate() {
            let file = format!("{FRAMES_DIR}/frame_{index:05}.pgm");
            frame.image.save_pgm(&dir.join(&file))?;
            entries.push(FrameEntry { index, t: frame.t, file });
        }
        let manifest = Manifest {
            schema_version: SCAN_LOG_SCHEMA_VERSION,
            dt: self.dt,
            plan: self.plan,
            frame_rate_hz: self.frame_rate_hz,
            contact_time: self.contact_time,
            scan_start_time: self.scan_start_time,
            records: self.records.len(),
            frames: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<ScanLog> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        if manifest.schema_version != SCAN_LOG_SCHEMA_VERSION {
            return Err(Error::InvalidData {
                file: path,
                message: format!("unsupported schema version {}", manifest.schema_version),
            });
        }

        let log_path = dir.join(LOG_FILE);
        let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            _ => {
                return Err(Error::Malformed {
                    file: log_path,
                    line: 1,
                    column: 1,
                    message: format!("expected header `{LOG_HEADER}`"),
                })
            }
        }
        let mut records = Vec::with_capacity(manifest.records);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut v = [0.0; 10];
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != v.len() {
                return Err(Error::Malformed {
                    file: log_path,
                    line: i + 1,
                    column: 1,
                    message: format!("expected {} columns, found {}", v.len(), cells.len()),
                });
            }
            for (k, cell) in cells.iter().enumerate() {
                v[k] = cell.trim().parse().map_err(|_| Error::Malformed {
                    file: log_path.clone(),
                    line: i + 1,
                    column: k + 1,
                    message: format!("not a number: `{cell}`"),
                })?;
            }
            records.push(ScanRecord {
                t: v[0],
                compliant: [v[1], v[2], v[3]],
                desired: [v[4], v[5], v[6]],
                force: v[7],
                target_mean: v[8],
                target_std: v[9],
            });
        }
        if records.len() != manifest.records {
            return Err(Error::InvalidData {
                file: log_path,
                message: format!("manifest lists {} records, log has {}", manifest.records, records.len()),
            });
        }

        let frames = manifest
            .frames
            .iter()
            .map(|e| Ok(Frame { t: e.t, image: GrayImage::load_pgm(&dir.join(&e.file))? }))
            .collect::<Result<Vec<_>>>()?;

        Ok(ScanLog {
            dt: manifest.dt,
            plan: manifest.plan,
            frame_rate_hz: manifest.frame_rate_hz,
            contact_time: manifest.contact_time,
            scan_start_time: manifest.scan_start_time,
            records,
            frames,
        })
    }
}
