//! Trajectory ingestion, validation, windowing, and median filtering.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected CSV header, in order.
pub const TRAJECTORY_COLUMNS: [&str; 12] = [
    "time_s", "driver_id", "drive_id", "task", "lat_vel", "lat_acc", "yaw_vel", "yaw_acc",
    "ld_center", "ld_left", "ld_right", "distracted",
];

/// Secondary task active at a sample, `None` meaning undistracted driving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    None,
    ShortMsg,
    LongMsg,
    Call,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::None, Task::ShortMsg, Task::LongMsg, Task::Call];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::None => "none",
            Task::ShortMsg => "short_msg",
            Task::LongMsg => "long_msg",
            Task::Call => "call",
        }
    }

    /// Distraction tasks, i.e. everything except `None`.
    pub fn distractions() -> [Task; 3] {
        [Task::ShortMsg, Task::LongMsg, Task::Call]
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s {
            "none" => Ok(Task::None),
            "short_msg" => Ok(Task::ShortMsg),
            "long_msg" => Ok(Task::LongMsg),
            "call" => Ok(Task::Call),
            other => Err(Error::Argument(format!(
                "unknown task {other:?}, expected one of none, short_msg, long_msg, call"
            ))),
        }
    }
}

/// One telemetry sample. Driver and drive identity live on [`Drive`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub time_s: f64,
    pub task: Task,
    pub lat_vel: f64,
    pub lat_acc: f64,
    pub yaw_vel: f64,
    pub yaw_acc: f64,
    pub ld_center: f64,
    pub ld_left: f64,
    pub ld_right: f64,
    pub distracted: bool,
}

/// All samples of one drive, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub driver_id: String,
    pub drive_id: String,
    pub samples: Vec<TrajectorySample>,
}

/// A full dataset: drives in first-appearance order plus the inferred sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub drives: Vec<Drive>,
    /// Samples per second, inferred from median inter-sample spacing.
    pub sample_rate: f64,
}

impl TrajectoryDataset {
    pub fn n_samples(&self) -> usize {
        self.drives.iter().map(|d| d.samples.len()).sum()
    }

    /// Copy of the dataset with every signal column median-filtered per drive.
    pub fn median_filtered(&self, window: usize) -> Result<TrajectoryDataset> {
        let mut out = self.clone();
        for drive in &mut out.drives {
            for field in SIGNAL_FIELDS {
                let series: Vec<f64> = drive.samples.iter().map(|s| (field.get)(s)).collect();
                let filtered = median_filter(&series, window)?;
                for (sample, v) in drive.samples.iter_mut().zip(filtered) {
                    (field.set)(sample, v);
                }
            }
        }
        Ok(out)
    }

}

/// Accessors for the seven continuous signal columns.
pub(crate) struct SignalField {
    pub name: &'static str,
    pub get: fn(&TrajectorySample) -> f64,
    pub set: fn(&mut TrajectorySample, f64),
}

pub(crate) const SIGNAL_FIELDS: &[SignalField] = &[
    SignalField { name: "lat_vel", get: |s| s.lat_vel, set: |s, v| s.lat_vel = v },
    SignalField { name: "lat_acc", get: |s| s.lat_acc, set: |s, v| s.lat_acc = v },
    SignalField { name: "yaw_vel", get: |s| s.yaw_vel, set: |s, v| s.yaw_vel = v },
    SignalField { name: "yaw_acc", get: |s| s.yaw_acc, set: |s, v| s.yaw_acc = v },
    SignalField { name: "ld_center", get: |s| s.ld_center, set: |s, v| s.ld_center = v },
    SignalField { name: "ld_left", get: |s| s.ld_left, set: |s, v| s.ld_left = v },
    SignalField { name: "ld_right", get: |s| s.ld_right, set: |s, v| s.ld_right = v },
];

/// One fixed-length window of consecutive samples from a single drive.
#[derive(Debug, Clone)]
pub struct Window {
    pub driver_id: String,
    pub drive_id: String,
    /// Zero-based window index within its drive.
    pub window_idx: usize,
    pub samples: Vec<TrajectorySample>,
    /// 1 when the majority of samples are distracted (ties count as 1).
    pub label: u8,
    /// Dominant task among distracted samples when `label == 1`, else `None`.
    pub task: Task,
}

fn parse_f64(record: &csv::StringRecord, col: usize, row: usize) -> Result<f64> {
    let raw = &record[col];
    let value: f64 = raw.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column {:?}: {raw:?} is not a number", TRAJECTORY_COLUMNS[col]),
    })?;
    if !value.is_finite() {
        return Err(Error::Validation {
            row,
            message: format!("column {:?}: value {raw:?} is not finite", TRAJECTORY_COLUMNS[col]),
        });
    }
    Ok(value)
}

/// Parse trajectory CSV from any reader. See [`parse_trajectory_csv`].
pub fn parse_trajectory_reader<R: Read>(reader: R) -> Result<TrajectoryDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.len() != TRAJECTORY_COLUMNS.len() {
        return Err(Error::Schema(format!(
            "expected {} columns, found {}",
            TRAJECTORY_COLUMNS.len(),
            headers.len()
        )));
    }
    for (i, expected) in TRAJECTORY_COLUMNS.iter().enumerate() {
        if &headers[i] != *expected {
            return Err(Error::Schema(format!(
                "column {} is {:?}, expected {:?}",
                i, &headers[i], expected
            )));
        }
    }

    let mut drives: Vec<Drive> = Vec::new();
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0usize;

    while rdr.read_record(&mut record)? {
        row += 1;
        if record.len() != TRAJECTORY_COLUMNS.len() {
            return Err(Error::Parse {
                row,
                message: format!(
                    "expected {} fields, found {}",
                    TRAJECTORY_COLUMNS.len(),
                    record.len()
                ),
            });
        }

        let time_s = parse_f64(&record, 0, row)?;
        let driver_id = record[1].to_string();
        let drive_id = record[2].to_string();
        let task: Task = record[3].parse().map_err(|e: Error| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let lat_vel = parse_f64(&record, 4, row)?;
        let lat_acc = parse_f64(&record, 5, row)?;
        let yaw_vel = parse_f64(&record, 6, row)?;
        let yaw_acc = parse_f64(&record, 7, row)?;
        let ld_center = parse_f64(&record, 8, row)?;
        let ld_left = parse_f64(&record, 9, row)?;
        let ld_right = parse_f64(&record, 10, row)?;
        let distracted = match &record[11] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Validation {
                    row,
                    message: format!("column \"distracted\": {other:?} is not 0 or 1"),
                })
            }
        };

        if ld_left < 0.0 {
            return Err(Error::Validation {
                row,
                message: format!("column \"ld_left\": distance {ld_left} is negative"),
            });
        }
        if ld_right < 0.0 {
            return Err(Error::Validation {
                row,
                message: format!("column \"ld_right\": distance {ld_right} is negative"),
            });
        }
        if distracted != (task != Task::None) {
            return Err(Error::Validation {
                row,
                message: format!(
                    "distracted={} contradicts task={}",
                    distracted as u8, task
                ),
            });
        }

        let sample = TrajectorySample {
            time_s,
            task,
            lat_vel,
            lat_acc,
            yaw_vel,
            yaw_acc,
            ld_center,
            ld_left,
            ld_right,
            distracted,
        };

        let key = (driver_id.clone(), drive_id.clone());
        let slot = *index.entry(key).or_insert_with(|| {
            drives.push(Drive {
                driver_id,
                drive_id,
                samples: Vec::new(),
            });
            drives.len() - 1
        });
        let drive = &mut drives[slot];
        if let Some(last) = drive.samples.last() {
            if time_s <= last.time_s {
                return Err(Error::Ordering(format!(
                    "drive ({}, {}): time {} at row {} does not increase past {}",
                    drive.driver_id, drive.drive_id, time_s, row, last.time_s
                )));
            }
        }
        drive.samples.push(sample);
    }

    let sample_rate = infer_sample_rate(&drives);
    Ok(TrajectoryDataset {
        drives,
        sample_rate,
    })
}

/// Parse a trajectory CSV file with the exact [`TRAJECTORY_COLUMNS`] header.
///
/// Rows are grouped into drives by `(driver_id, drive_id)` in first-appearance
/// order; within each drive, `time_s` must strictly increase. Lane distances
/// must be non-negative, `distracted` must be `0`/`1` and consistent with
/// `task`, and every numeric cell must be finite.
pub fn parse_trajectory_csv<P: AsRef<Path>>(path: P) -> Result<TrajectoryDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_trajectory_reader(std::io::BufReader::new(file))
}

/// Median inter-sample spacing over all drives, inverted and snapped to an
/// integer rate when within 1e-6. Defaults to 20 Hz when no spacing exists.
fn infer_sample_rate(drives: &[Drive]) -> f64 {
    let mut deltas: Vec<f64> = Vec::new();
    for drive in drives {
        for pair in drive.samples.windows(2) {
            deltas.push(pair[1].time_s - pair[0].time_s);
        }
    }
    if deltas.is_empty() {
        return 20.0;
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).expect("deltas are finite"));
    let mid = deltas.len() / 2;
    let median = if deltas.len() % 2 == 1 {
        deltas[mid]
    } else {
        (deltas[mid - 1] + deltas[mid]) / 2.0
    };
    let rate = 1.0 / median;
    if (rate - rate.round()).abs() < 1e-6 {
        rate.round()
    } else {
        rate
    }
}

/// Write a dataset back to the canonical CSV schema.
pub fn write_trajectory_csv<P: AsRef<Path>>(dataset: &TrajectoryDataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_trajectory_writer(dataset, std::io::BufWriter::new(file))
}

pub fn write_trajectory_writer<W: Write>(dataset: &TrajectoryDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(TRAJECTORY_COLUMNS)?;
    for drive in &dataset.drives {
        for s in &drive.samples {
            wtr.write_record([
                format!("{}", s.time_s),
                drive.driver_id.clone(),
                drive.drive_id.clone(),
                s.task.to_string(),
                format!("{}", s.lat_vel),
                format!("{}", s.lat_acc),
                format!("{}", s.yaw_vel),
                format!("{}", s.yaw_acc),
                format!("{}", s.ld_center),
                format!("{}", s.ld_left),
                format!("{}", s.ld_right),
                (s.distracted as u8).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Running median with an odd, centered window; near the edges the window
/// shrinks symmetrically so it stays centered and odd.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Argument(format!(
            "median filter window must be odd and positive, got {window}"
        )));
    }
    if window > series.len() {
        return Err(Error::Argument(format!(
            "median filter window {window} exceeds series length {}",
            series.len()
        )));
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let half = window / 2;
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    let mut scratch: Vec<f64> = Vec::with_capacity(window);
    for i in 0..n {
        let radius = half.min(i).min(n - 1 - i);
        scratch.clear();
        scratch.extend_from_slice(&series[i - radius..=i + radius]);
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("series is finite"));
        out.push(scratch[radius]);
    }
    Ok(out)
}

/// Cut every drive into consecutive non-overlapping windows of
/// `window_seconds`, dropping the trailing remainder of each drive.
///
/// The sample count per window is `window_seconds * sample_rate`, which must
/// be a positive integer (tolerance 1e-6).
pub fn window_segments(dataset: &TrajectoryDataset, window_seconds: f64) -> Result<Vec<Window>> {
    let spw_exact = window_seconds * dataset.sample_rate;
    let spw = spw_exact.round();
    if !(spw >= 1.0 && (spw_exact - spw).abs() <= 1e-6 * spw.max(1.0)) {
        return Err(Error::Argument(format!(
            "window of {window_seconds} s at {} Hz gives a non-integral {spw_exact} samples per window",
            dataset.sample_rate
        )));
    }
    let spw = spw as usize;

    let mut windows = Vec::new();
    for drive in &dataset.drives {
        for (window_idx, chunk) in drive.samples.chunks_exact(spw).enumerate() {
            let n_distracted = chunk.iter().filter(|s| s.distracted).count();
            let label = u8::from(2 * n_distracted >= spw);
            let task = if label == 1 {
                dominant_task(chunk)
            } else {
                Task::None
            };
            windows.push(Window {
                driver_id: drive.driver_id.clone(),
                drive_id: drive.drive_id.clone(),
                window_idx,
                samples: chunk.to_vec(),
                label,
                task,
            });
        }
    }
    Ok(windows)
}

/// Most frequent non-`None` task; ties go to the task appearing first.
fn dominant_task(samples: &[TrajectorySample]) -> Task {
    let mut count = [0usize; 4];
    let mut first = [usize::MAX; 4];
    for (i, s) in samples.iter().enumerate() {
        if s.task != Task::None {
            let slot = s.task as usize;
            count[slot] += 1;
            if first[slot] == usize::MAX {
                first[slot] = i;
            }
        }
    }
    let mut best = Task::None;
    let mut best_key = (0usize, usize::MAX);
    for task in Task::distractions() {
        let slot = task as usize;
        if count[slot] == 0 {
            continue;
        }
        // Larger count wins; on equal counts the earlier first appearance wins.
        let key = (count[slot], usize::MAX - first[slot]);
        if key > best_key {
            best_key = key;
            best = task;
        }
    }
    best
}
