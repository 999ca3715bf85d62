//! Window-level lane-keeping features: five order-free metrics over seven
//! signals, reduced to the 19 canonical (signal, metric) pairs.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Task, Window, SIGNAL_FIELDS};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 19;

/// Canonical feature names, fixed order. Signals are abbreviated LV (lateral
/// velocity), LA (lateral acceleration), YV (yaw velocity), YA (yaw
/// acceleration), LD (distance to lane center), LDL/LDR (distance to
/// left/right lane line); suffixes are the metric.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "LV_M", "LA_M", "YV_M", "YA_M", "LD_M", "LDL_M", "LDR_M", "LV_SD", "LA_SD", "YV_SD",
    "YA_SD", "LD_SD", "LDL_SD", "LDR_SD", "LD_R", "LDL_Cv", "LDR_Cv", "LDL_Qcv", "LDR_Qcv",
];

/// Position of a name in [`FEATURE_NAMES`].
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mean,
    Sd,
    Range,
    Cv,
    Qcv,
}

/// Metric value plus a flag marking a degenerate denominator resolved to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregated {
    pub value: f64,
    pub degenerate: bool,
}

impl Aggregated {
    fn plain(value: f64) -> Aggregated {
        Aggregated {
            value,
            degenerate: false,
        }
    }
}

const DENOM_EPS: f64 = 1e-12;

fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Sample standard deviation (N−1 denominator).
fn sample_sd(series: &[f64]) -> f64 {
    let m = mean(series);
    let ss: f64 = series.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (series.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile over a sorted slice: index h = (n−1)p,
/// interpolating between the flanking order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Reduce a series with one metric.
///
/// `sd`, `cv`, and `qcv` need at least two samples; `mean` and `range` need
/// one. `cv` with a vanishing mean and `qcv` with vanishing quartile sum
/// resolve to 0 with the degeneracy flag set instead of erroring.
pub fn aggregate(series: &[f64], metric: Metric) -> Result<Aggregated> {
    let min_len = match metric {
        Metric::Mean | Metric::Range => 1,
        Metric::Sd | Metric::Cv | Metric::Qcv => 2,
    };
    if series.len() < min_len {
        return Err(Error::Argument(format!(
            "metric {metric:?} needs at least {min_len} samples, got {}",
            series.len()
        )));
    }
    let out = match metric {
        Metric::Mean => Aggregated::plain(mean(series)),
        Metric::Sd => Aggregated::plain(sample_sd(series)),
        Metric::Range => {
            let mut lo = series[0];
            let mut hi = series[0];
            for &x in series {
                lo = lo.min(x);
                hi = hi.max(x);
            }
            Aggregated::plain(hi - lo)
        }
        Metric::Cv => {
            let m = mean(series);
            if m.abs() < DENOM_EPS {
                Aggregated {
                    value: 0.0,
                    degenerate: true,
                }
            } else {
                Aggregated::plain(sample_sd(series) / m)
            }
        }
        Metric::Qcv => {
            let mut sorted = series.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("series is finite"));
            let q25 = quantile_sorted(&sorted, 0.25);
            let q75 = quantile_sorted(&sorted, 0.75);
            let denom = q75 + q25;
            if denom.abs() < DENOM_EPS {
                Aggregated {
                    value: 0.0,
                    degenerate: true,
                }
            } else {
                Aggregated::plain((q75 - q25) / denom)
            }
        }
    };
    Ok(out)
}

/// The 19 features of one window plus its metadata.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
    /// Per-feature degenerate-denominator flags.
    pub degenerate: [bool; N_FEATURES],
    pub driver_id: String,
    pub drive_id: String,
    pub window_idx: usize,
    pub task: Task,
    pub label: u8,
}

/// Compute all 19 features of a window: mean and sd of all seven signals,
/// range of LD, cv and qcv of LDL and LDR.
pub fn extract_features(window: &Window) -> Result<FeatureVector> {
    if window.samples.is_empty() {
        return Err(Error::Argument("window has no samples".into()));
    }
    let mut values = [0.0; N_FEATURES];
    let mut degenerate = [false; N_FEATURES];
    let mut series = Vec::with_capacity(window.samples.len());

    for (sig, field) in SIGNAL_FIELDS.iter().enumerate() {
        series.clear();
        for (i, sample) in window.samples.iter().enumerate() {
            let v = (field.get)(sample);
            if !v.is_finite() {
                return Err(Error::Extraction(format!(
                    "signal {:?} is not finite at sample {i}",
                    field.name
                )));
            }
            series.push(v);
        }

        let mut put = |slot: usize, agg: Aggregated| {
            values[slot] = agg.value;
            degenerate[slot] = agg.degenerate;
        };
        put(sig, aggregate(&series, Metric::Mean)?);
        put(7 + sig, aggregate(&series, Metric::Sd)?);
        match field.name {
            "ld_center" => put(14, aggregate(&series, Metric::Range)?),
            "ld_left" => {
                put(15, aggregate(&series, Metric::Cv)?);
                put(17, aggregate(&series, Metric::Qcv)?);
            }
            "ld_right" => {
                put(16, aggregate(&series, Metric::Cv)?);
                put(18, aggregate(&series, Metric::Qcv)?);
            }
            _ => {}
        }
    }

    Ok(FeatureVector {
        values,
        degenerate,
        driver_id: window.driver_id.clone(),
        drive_id: window.drive_id.clone(),
        window_idx: window.window_idx,
        task: window.task,
        label: window.label,
    })
}

/// Column-major feature matrix with row metadata, the working form for
/// training and evaluation.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub names: Vec<String>,
    /// `columns[f][r]` is feature `f` of row `r`.
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub meta: Vec<RowMeta>,
}

#[derive(Debug, Clone)]
pub struct RowMeta {
    pub driver_id: String,
    pub drive_id: String,
    pub task: Task,
    pub window_idx: usize,
}

impl FeatureTable {
    pub fn from_windows(windows: &[Window]) -> Result<FeatureTable> {
        let mut columns = vec![Vec::with_capacity(windows.len()); N_FEATURES];
        let mut labels = Vec::with_capacity(windows.len());
        let mut meta = Vec::with_capacity(windows.len());
        for window in windows {
            let fv = extract_features(window)?;
            for (f, col) in columns.iter_mut().enumerate() {
                col.push(fv.values[f]);
            }
            labels.push(fv.label);
            meta.push(RowMeta {
                driver_id: fv.driver_id,
                drive_id: fv.drive_id,
                task: fv.task,
                window_idx: fv.window_idx,
            });
        }
        Ok(FeatureTable {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            columns,
            labels,
            meta,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// New table restricted to the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|col| rows.iter().map(|&r| col[r]).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            meta: rows.iter().map(|&r| self.meta[r].clone()).collect(),
        }
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(|s| s.as_str()).collect();
        header.extend(["driver_id", "task", "window_idx", "label"]);
        wtr.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut record: Vec<String> = self.columns.iter().map(|col| format!("{}", col[r])).collect();
            record.push(self.meta[r].driver_id.clone());
            record.push(self.meta[r].task.to_string());
            record.push(self.meta[r].window_idx.to_string());
            record.push(self.labels[r].to_string());
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read a table written by [`FeatureTable::write`]. Drive identity is not
    /// part of the file format and comes back empty.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<FeatureTable> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn read<R: Read>(reader: R) -> Result<FeatureTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut expected: Vec<&str> = FEATURE_NAMES.to_vec();
        expected.extend(["driver_id", "task", "window_idx", "label"]);
        if headers.len() != expected.len() {
            return Err(Error::Schema(format!(
                "expected {} columns, found {}",
                expected.len(),
                headers.len()
            )));
        }
        for (i, want) in expected.iter().enumerate() {
            if &headers[i] != *want {
                return Err(Error::Schema(format!(
                    "column {i} is {:?}, expected {:?}",
                    &headers[i], want
                )));
            }
        }
        let mut columns = vec![Vec::new(); N_FEATURES];
        let mut labels = Vec::new();
        let mut meta = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            for (f, col) in columns.iter_mut().enumerate() {
                let raw = &record[f];
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("column {:?}: {raw:?} is not a number", FEATURE_NAMES[f]),
                })?;
                col.push(v);
            }
            let task: Task = record[N_FEATURES + 1].parse().map_err(|e: Error| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            let window_idx: usize = record[N_FEATURES + 2].parse().map_err(|_| Error::Parse {
                row,
                message: format!("column \"window_idx\": {:?} is not an integer", &record[N_FEATURES + 2]),
            })?;
            let label: u8 = match &record[N_FEATURES + 3] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        row,
                        message: format!("column \"label\": {other:?} is not 0 or 1"),
                    })
                }
            };
            labels.push(label);
            meta.push(RowMeta {
                driver_id: record[N_FEATURES].to_string(),
                drive_id: String::new(),
                task,
                window_idx,
            });
        }
        Ok(FeatureTable {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            columns,
            labels,
            meta,
        })
    }
}
