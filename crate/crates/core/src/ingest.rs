//! Trajectory segment files: parsing, validation, cleaning.
//!
//! One CSV file holds one segment with columns `time_s`, `speed_mps`,
//! `accel_mps2`, optional `jerk_mps3` and optional `label`.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TIME_COLUMN: &str = "time_s";
pub const SPEED_COLUMN: &str = "speed_mps";
pub const ACCEL_COLUMN: &str = "accel_mps2";
pub const JERK_COLUMN: &str = "jerk_mps3";
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { row: usize, column: String },
    #[error("unparseable value {value:?} in column `{column}` at row {row}")]
    BadValue { row: usize, column: String, value: String },
    #[error("segment has {0} samples, need at least 2")]
    TooShort(usize),
    #[error("timestamps not strictly increasing at row {row}")]
    NonMonotonicTime { row: usize },
    #[error("series lengths differ: {0:?}")]
    LengthMismatch([usize; 4]),
    #[error("unknown style label {value:?} at row {row}")]
    BadLabel { row: usize, value: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// The four driving styles, with stable integer codes in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StyleLabel {
    Aggressive = 0,
    Assertive = 1,
    Conservative = 2,
    Moderate = 3,
}

impl StyleLabel {
    pub const ALL: [StyleLabel; 4] = [
        StyleLabel::Aggressive,
        StyleLabel::Assertive,
        StyleLabel::Conservative,
        StyleLabel::Moderate,
    ];
    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StyleLabel::Aggressive => "Aggressive",
            StyleLabel::Assertive => "Assertive",
            StyleLabel::Conservative => "Conservative",
            StyleLabel::Moderate => "Moderate",
        }
    }
}

impl fmt::Display for StyleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StyleLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown style label {s:?}"))
    }
}

/// One windowed trip segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub id: String,
    /// Timestamps in seconds, strictly increasing.
    pub t: Vec<f64>,
    /// Speed in m/s.
    pub v: Vec<f64>,
    /// Acceleration in m/s².
    pub a: Vec<f64>,
    /// Jerk in m/s³.
    pub j: Vec<f64>,
    pub label: Option<StyleLabel>,
    /// Set once the moving-average filter has run, so cleaning twice is a no-op.
    pub smoothed: bool,
}

impl TrajectorySegment {
    /// Builds a segment, checking equal lengths, `T >= 2`, finiteness and
    /// strictly increasing time.
    pub fn new(
        id: impl Into<String>,
        t: Vec<f64>,
        v: Vec<f64>,
        a: Vec<f64>,
        j: Vec<f64>,
        label: Option<StyleLabel>,
    ) -> Result<Self> {
        let lens = [t.len(), v.len(), a.len(), j.len()];
        if lens.iter().any(|&n| n != lens[0]) {
            return Err(IngestError::LengthMismatch(lens));
        }
        let seg = Self {
            id: id.into(),
            t,
            v,
            a,
            j,
            label,
            smoothed: false,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(IngestError::TooShort(self.len()));
        }
        for (column, series) in [
            (TIME_COLUMN, &self.t),
            (SPEED_COLUMN, &self.v),
            (ACCEL_COLUMN, &self.a),
            (JERK_COLUMN, &self.j),
        ] {
            if let Some(row) = series.iter().position(|x| !x.is_finite()) {
                return Err(IngestError::NonFiniteValue {
                    row,
                    column: column.to_string(),
                });
            }
        }
        if let Some(row) = self.t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(IngestError::NonMonotonicTime { row: row + 1 });
        }
        Ok(())
    }

    pub fn max_time_gap(&self) -> f64 {
        self.t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Writes the segment in the input schema, always including jerk. Values
    /// use the shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![TIME_COLUMN, SPEED_COLUMN, ACCEL_COLUMN, JERK_COLUMN];
        if self.label.is_some() {
            header.push(LABEL_COLUMN);
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.t[i].to_string(),
                self.v[i].to_string(),
                self.a[i].to_string(),
                self.j[i].to_string(),
            ];
            if let Some(label) = self.label {
                row.push(label.name().to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| IngestError::Io {
            path: PathBuf::from("<writer>"),
            source: e,
        })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Forward difference of `a` over the timestamp deltas; the last value is
/// repeated so the output keeps the input length.
pub fn forward_difference(a: &[f64], t: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a
        .windows(2)
        .zip(t.windows(2))
        .map(|(a, t)| (a[1] - a[0]) / (t[1] - t[0]))
        .collect();
    if let Some(&last) = out.last() {
        out.push(last);
    } else if !a.is_empty() {
        out.push(0.0);
    }
    out
}

fn segment_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn parse_segment(path: &Path) -> Result<TrajectorySegment> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_segment_from_reader(segment_id_from_path(path), file)
}

/// Parses one segment. Row indices in errors count data rows from 0.
pub fn parse_segment_from_reader<R: Read>(id: impl Into<String>, reader: R) -> Result<TrajectorySegment> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = |name: &str| find(name).ok_or_else(|| IngestError::MissingColumn(name.to_string()));
    let (ti, vi, ai) = (required(TIME_COLUMN)?, required(SPEED_COLUMN)?, required(ACCEL_COLUMN)?);
    let (ji, li) = (find(JERK_COLUMN), find(LABEL_COLUMN));

    let (mut t, mut v, mut a, mut j) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut label = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |idx: usize, column: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| IngestError::BadValue {
                row,
                column: column.to_string(),
                value: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFiniteValue {
                    row,
                    column: column.to_string(),
                });
            }
            Ok(value)
        };
        t.push(field(ti, TIME_COLUMN)?);
        v.push(field(vi, SPEED_COLUMN)?);
        a.push(field(ai, ACCEL_COLUMN)?);
        if let Some(ji) = ji {
            j.push(field(ji, JERK_COLUMN)?);
        }
        if let Some(li) = li {
            let raw = record.get(li).unwrap_or("").trim();
            if !raw.is_empty() {
                let parsed: StyleLabel = raw.parse().map_err(|_| IngestError::BadLabel {
                    row,
                    value: raw.to_string(),
                })?;
                match label {
                    None => label = Some(parsed),
                    Some(prev) if prev != parsed => {
                        return Err(IngestError::BadLabel {
                            row,
                            value: raw.to_string(),
                        })
                    }
                    _ => {}
                }
            }
        }
    }
    if t.len() < 2 {
        return Err(IngestError::TooShort(t.len()));
    }
    if let Some(row) = t.windows(2).position(|w| w[1] <= w[0]) {
        return Err(IngestError::NonMonotonicTime { row: row + 1 });
    }
    if ji.is_none() {
        j = forward_difference(&a, &t);
    }
    TrajectorySegment::new(id, t, v, a, j, label)
}

/// Lists `*.csv` files of a directory in lexicographic order.
pub fn list_segment_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |e| IngestError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    pub max_abs_speed: f64,
    pub max_abs_accel: f64,
    pub max_abs_jerk: f64,
    /// Centered moving-average window; `None` disables smoothing.
    pub smoothing_window: Option<usize>,
    pub nominal_dt: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            max_abs_speed: 60.0,
            max_abs_accel: 15.0,
            max_abs_jerk: 60.0,
            smoothing_window: None,
            nominal_dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NonPositiveSpeed,
    TimeGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSegment {
    pub id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub input_count: usize,
    pub output_count: usize,
    pub dropped: Vec<DroppedSegment>,
}

fn clip(series: &mut [f64], bound: f64) {
    for x in series {
        *x = x.clamp(-bound, bound);
    }
}

fn clip_all(seg: &mut TrajectorySegment, cfg: &CleanConfig) {
    clip(&mut seg.v, cfg.max_abs_speed);
    clip(&mut seg.a, cfg.max_abs_accel);
    clip(&mut seg.j, cfg.max_abs_jerk);
}

/// Centered moving average; windows are truncated at the edges.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Drops never-moving segments and segments with oversized time gaps, then
/// clips every series to its physical bound and optionally smooths it.
pub fn clean_segments(segments: Vec<TrajectorySegment>, cfg: &CleanConfig) -> (Vec<TrajectorySegment>, DropReport) {
    let mut report = DropReport {
        input_count: segments.len(),
        ..Default::default()
    };
    let gap_limit = 2.0 * cfg.nominal_dt * (1.0 + 1e-9);
    let mut kept = Vec::with_capacity(segments.len());
    for mut seg in segments {
        let reason = if !seg.v.iter().any(|&v| v > 0.0) {
            Some(DropReason::NonPositiveSpeed)
        } else if seg.max_time_gap() > gap_limit {
            Some(DropReason::TimeGap)
        } else {
            None
        };
        if let Some(reason) = reason {
            log::debug!("dropping segment {} ({reason:?})", seg.id);
            report.dropped.push(DroppedSegment { id: seg.id, reason });
            continue;
        }
        clip_all(&mut seg, cfg);
        if let Some(w) = cfg.smoothing_window.filter(|&w| w > 1 && !seg.smoothed) {
            seg.v = moving_average(&seg.v, w);
            seg.a = moving_average(&seg.a, w);
            seg.j = moving_average(&seg.j, w);
            seg.smoothed = true;
            // Averages of clipped values can round one ulp past the bound.
            clip_all(&mut seg, cfg);
        }
        kept.push(seg);
    }
    report.output_count = kept.len();
    (kept, report)
}
