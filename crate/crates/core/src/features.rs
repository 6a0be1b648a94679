//! Three-tier feature hierarchy: per-signal distribution statistics,
//! threshold-based driving-event counts, and correlation dynamics.
//!
//! The assembled vector is `[stat | behavior | dynamic]` with
//! `D = 9 N + 5 + 4` for `N` signals in the stat block.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{StyleLabel, TrajectorySegment};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("cannot fit normalization on an empty training set")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("feature table: {0}")]
    Table(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Default hard-event threshold, shared by acceleration, braking and jerk.
pub const DEFAULT_TAU: f64 = 2.0;

pub const STAT_NAMES: [&str; 9] = [
    "mean", "std", "max", "min", "median", "q25", "q75", "kurtosis", "skewness",
];

pub const BEHAVIOR_NAMES: [&str; 5] = [
    "acceleration_change_rate",
    "num_hard_accelerations",
    "num_hard_brakes",
    "num_hard_turns",
    "speed_change_rate",
];

pub const DYNAMIC_NAMES: [&str; 4] = [
    "speed_acceleration_cross_correlation",
    "acceleration_jerk_cross_correlation",
    "speed_autocorrelation",
    "acceleration_autocorrelation",
];

/// `D = 9 N + 5 + 4`.
pub fn feature_dim(n_signals: usize) -> usize {
    9 * n_signals + BEHAVIOR_NAMES.len() + DYNAMIC_NAMES.len()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatFeatures {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Excess (Fisher) kurtosis.
    pub kurtosis: f64,
    /// Moment skewness g1.
    pub skewness: f64,
}

impl StatFeatures {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.mean,
            self.std,
            self.max,
            self.min,
            self.median,
            self.q25,
            self.q75,
            self.kurtosis,
            self.skewness,
        ]
    }
}

/// Linear interpolation between order statistics at rank `p (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Population moments; skewness and kurtosis are 0 for a constant signal.
pub fn stat_features(signal: &[f64]) -> Result<StatFeatures> {
    if signal.len() < 2 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: signal.len(),
        });
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in signal {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let mut sorted = signal.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(StatFeatures {
        mean,
        std: m2.sqrt(),
        max: sorted[sorted.len() - 1],
        min: sorted[0],
        median: percentile_sorted(&sorted, 0.5),
        q25: percentile_sorted(&sorted, 0.25),
        q75: percentile_sorted(&sorted, 0.75),
        kurtosis,
        skewness,
    })
}

/// Hard-event thresholds. All three default to the shared `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub accel: f64,
    pub brake: f64,
    pub turn: f64,
}

impl Thresholds {
    pub fn shared(tau: f64) -> Self {
        Self {
            accel: tau,
            brake: tau,
            turn: tau,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in [self.accel, self.brake, self.turn] {
            if !(t > 0.0) {
                return Err(FeatureError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::shared(DEFAULT_TAU)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorFeatures {
    /// Mean absolute step-to-step change of acceleration.
    pub accel_change_rate: f64,
    pub num_hard_accelerations: usize,
    pub num_hard_brakes: usize,
    /// Counted on |jerk|, not on heading.
    pub num_hard_turns: usize,
    /// Mean absolute step-to-step change of speed.
    pub speed_change_rate: f64,
}

impl BehaviorFeatures {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.accel_change_rate,
            self.num_hard_accelerations as f64,
            self.num_hard_brakes as f64,
            self.num_hard_turns as f64,
            self.speed_change_rate,
        ]
    }
}

fn check_lengths(series: &[&[f64]], needed: usize) -> Result<usize> {
    let lens: Vec<usize> = series.iter().map(|s| s.len()).collect();
    if lens.iter().any(|&n| n != lens[0]) {
        return Err(FeatureError::LengthMismatch(lens));
    }
    if lens[0] < needed {
        return Err(FeatureError::TooShort { needed, got: lens[0] });
    }
    Ok(lens[0])
}

fn mean_abs_step(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
}

pub fn behavior_features(v: &[f64], a: &[f64], j: &[f64], thresholds: &Thresholds) -> Result<BehaviorFeatures> {
    check_lengths(&[v, a, j], 2)?;
    thresholds.validate()?;
    Ok(BehaviorFeatures {
        accel_change_rate: mean_abs_step(a),
        num_hard_accelerations: a.iter().filter(|&&x| x > thresholds.accel).count(),
        num_hard_brakes: a.iter().filter(|&&x| x < -thresholds.brake).count(),
        num_hard_turns: j.iter().filter(|&&x| x.abs() > thresholds.turn).count(),
        speed_change_rate: mean_abs_step(v),
    })
}

/// Pearson correlation, defined as 0 when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    pearson(&x[..x.len() - 1], &x[1..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicFeatures {
    pub speed_accel_corr: f64,
    pub accel_jerk_corr: f64,
    pub speed_autocorr: f64,
    pub accel_autocorr: f64,
}

impl DynamicFeatures {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.speed_accel_corr,
            self.accel_jerk_corr,
            self.speed_autocorr,
            self.accel_autocorr,
        ]
    }
}

pub fn dynamic_features(v: &[f64], a: &[f64], j: &[f64]) -> Result<DynamicFeatures> {
    check_lengths(&[v, a, j], 3)?;
    Ok(DynamicFeatures {
        speed_accel_corr: pearson(v, a),
        accel_jerk_corr: pearson(a, j),
        speed_autocorr: lag1_autocorrelation(v),
        accel_autocorr: lag1_autocorrelation(a),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseSignal {
    Speed,
    Acceleration,
    Jerk,
}

impl BaseSignal {
    pub const ALL: [BaseSignal; 3] = [BaseSignal::Speed, BaseSignal::Acceleration, BaseSignal::Jerk];

    pub fn name(self) -> &'static str {
        match self {
            BaseSignal::Speed => "speed",
            BaseSignal::Acceleration => "acceleration",
            BaseSignal::Jerk => "jerk",
        }
    }

    fn series(self, seg: &TrajectorySegment) -> &[f64] {
        match self {
            BaseSignal::Speed => &seg.v,
            BaseSignal::Acceleration => &seg.a,
            BaseSignal::Jerk => &seg.j,
        }
    }
}

/// A per-time-step signal feeding the statistical block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    Base(BaseSignal),
    Abs(BaseSignal),
    /// `max(x, 0)`
    Positive(BaseSignal),
    /// `min(x, 0)`
    Negative(BaseSignal),
    /// Trailing mean over up to `window` samples.
    RollingMean(BaseSignal, usize),
    /// Trailing population std over up to `window` samples.
    RollingStd(BaseSignal, usize),
    /// `|x(t) - x(t-1)|`, 0 at the first sample.
    AbsDiff(BaseSignal),
    Square(BaseSignal),
}

impl Signal {
    pub fn compute(&self, seg: &TrajectorySegment) -> Vec<f64> {
        match *self {
            Signal::Base(b) => b.series(seg).to_vec(),
            Signal::Abs(b) => b.series(seg).iter().map(|x| x.abs()).collect(),
            Signal::Positive(b) => b.series(seg).iter().map(|x| x.max(0.0)).collect(),
            Signal::Negative(b) => b.series(seg).iter().map(|x| x.min(0.0)).collect(),
            Signal::RollingMean(b, w) => rolling(b.series(seg), w, |win| win.iter().sum::<f64>() / win.len() as f64),
            Signal::RollingStd(b, w) => rolling(b.series(seg), w, |win| {
                let m = win.iter().sum::<f64>() / win.len() as f64;
                (win.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / win.len() as f64).sqrt()
            }),
            Signal::AbsDiff(b) => {
                let x = b.series(seg);
                std::iter::once(0.0)
                    .chain(x.windows(2).map(|w| (w[1] - w[0]).abs()))
                    .collect()
            }
            Signal::Square(b) => b.series(seg).iter().map(|x| x * x).collect(),
        }
    }
}

fn rolling(x: &[f64], window: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let window = window.max(1);
    (0..x.len())
        .map(|i| f(&x[(i + 1).saturating_sub(window)..=i]))
        .collect()
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Base(b) => write!(f, "{}", b.name()),
            Signal::Abs(b) => write!(f, "abs_{}", b.name()),
            Signal::Positive(b) => write!(f, "pos_{}", b.name()),
            Signal::Negative(b) => write!(f, "neg_{}", b.name()),
            Signal::RollingMean(b, w) => write!(f, "rollmean{w}_{}", b.name()),
            Signal::RollingStd(b, w) => write!(f, "rollstd{w}_{}", b.name()),
            Signal::AbsDiff(b) => write!(f, "absdiff_{}", b.name()),
            Signal::Square(b) => write!(f, "sq_{}", b.name()),
        }
    }
}

impl FromStr for Signal {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || FeatureError::UnknownSignal(s.to_string());
        let base = |name: &str| {
            BaseSignal::ALL
                .into_iter()
                .find(|b| b.name() == name)
                .ok_or_else(unknown)
        };
        if let Ok(b) = base(s) {
            return Ok(Signal::Base(b));
        }
        let (prefix, rest) = s.split_once('_').ok_or_else(unknown)?;
        let b = base(rest)?;
        let windowed = |tag: &str| -> Option<usize> {
            prefix
                .strip_prefix(tag)
                .and_then(|w| w.parse().ok())
                .filter(|&w: &usize| w > 0)
        };
        match prefix {
            "abs" => Ok(Signal::Abs(b)),
            "pos" => Ok(Signal::Positive(b)),
            "neg" => Ok(Signal::Negative(b)),
            "absdiff" => Ok(Signal::AbsDiff(b)),
            "sq" => Ok(Signal::Square(b)),
            _ => {
                if let Some(w) = windowed("rollmean") {
                    Ok(Signal::RollingMean(b, w))
                } else if let Some(w) = windowed("rollstd") {
                    Ok(Signal::RollingStd(b, w))
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

/// Ordered list of signals used for the statistical block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalRegistry {
    signals: Vec<Signal>,
}

impl Default for SignalRegistry {
    /// Speed, acceleration and jerk.
    fn default() -> Self {
        Self {
            signals: BaseSignal::ALL.iter().map(|&b| Signal::Base(b)).collect(),
        }
    }
}

impl SignalRegistry {
    pub fn new(signals: Vec<Signal>) -> Self {
        Self { signals }
    }

    pub fn parse(names: &[impl AsRef<str>]) -> Result<Self> {
        Ok(Self {
            signals: names.iter().map(|n| n.as_ref().parse()).collect::<Result<_>>()?,
        })
    }

    /// The full 36-signal roster: the base signals followed by absolute,
    /// positive/negative parts, rolling means and stds over 5/10/20 samples,
    /// absolute steps and squares of each base signal.
    pub fn roster() -> Vec<Signal> {
        let mut out = Vec::with_capacity(36);
        let each = |f: &dyn Fn(BaseSignal) -> Signal, out: &mut Vec<Signal>| {
            out.extend(BaseSignal::ALL.iter().map(|&b| f(b)));
        };
        each(&Signal::Base, &mut out);
        each(&Signal::Abs, &mut out);
        each(&Signal::Positive, &mut out);
        each(&Signal::Negative, &mut out);
        for w in [5, 10, 20] {
            each(&|b| Signal::RollingMean(b, w), &mut out);
        }
        for w in [5, 10, 20] {
            each(&|b| Signal::RollingStd(b, w), &mut out);
        }
        each(&Signal::AbsDiff, &mut out);
        each(&Signal::Square, &mut out);
        out
    }

    /// First `n` signals of [`SignalRegistry::roster`].
    pub fn extended(n: usize) -> Self {
        Self {
            signals: Self::roster().into_iter().take(n).collect(),
        }
    }

    pub fn signals(&self) -> &[Signal] {
        &self.signals
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.signals.iter().map(|s| s.to_string()).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(feature_dim(self.len()));
        for s in &self.signals {
            names.extend(STAT_NAMES.iter().map(|stat| format!("{s}_{stat}")));
        }
        names.extend(BEHAVIOR_NAMES.iter().map(|s| s.to_string()));
        names.extend(DYNAMIC_NAMES.iter().map(|s| s.to_string()));
        names
    }
}

/// An assembled (raw or normalized) feature vector with its names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Arc<[String]>,
    pub n_signals: usize,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Reusable assembler: holds the registry, thresholds and the shared name list.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    registry: SignalRegistry,
    thresholds: Thresholds,
    names: Arc<[String]>,
}

impl FeatureExtractor {
    pub fn new(registry: SignalRegistry, thresholds: Thresholds) -> Result<Self> {
        thresholds.validate()?;
        let names: Arc<[String]> = registry.feature_names().into();
        Ok(Self {
            registry,
            thresholds,
            names,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn registry(&self) -> &SignalRegistry {
        &self.registry
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn assemble(&self, seg: &TrajectorySegment) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(self.dim());
        for signal in self.registry.signals() {
            values.extend(stat_features(&signal.compute(seg))?.to_array());
        }
        values.extend(behavior_features(&seg.v, &seg.a, &seg.j, &self.thresholds)?.to_array());
        values.extend(dynamic_features(&seg.v, &seg.a, &seg.j)?.to_array());
        debug_assert_eq!(values.len(), self.dim());
        Ok(FeatureVector {
            values,
            names: self.names.clone(),
            n_signals: self.registry.len(),
        })
    }
}

pub fn assemble(seg: &TrajectorySegment, registry: &SignalRegistry, thresholds: &Thresholds) -> Result<FeatureVector> {
    FeatureExtractor::new(registry.clone(), *thresholds)?.assemble(seg)
}

/// Per-feature training mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("norm stats serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: NormStats = serde_json::from_str(s).map_err(|e| FeatureError::Table(e.to_string()))?;
        if stats.std.len() != stats.mean.len() || stats.names.len() != stats.mean.len() {
            return Err(FeatureError::Table("norm stats arrays differ in length".into()));
        }
        Ok(stats)
    }

    /// z-score of a single feature, 0 when the stored std is 0.
    pub fn z(&self, idx: usize, x: f64) -> f64 {
        if self.std[idx] == 0.0 {
            0.0
        } else {
            (x - self.mean[idx]) / self.std[idx]
        }
    }
}

pub fn fit_norm(train: &[FeatureVector]) -> Result<NormStats> {
    let first = train.first().ok_or(FeatureError::EmptyTrainingSet)?;
    let d = first.dim();
    if let Some(bad) = train.iter().find(|f| f.dim() != d) {
        return Err(FeatureError::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for f in train {
        for (m, x) in mean.iter_mut().zip(&f.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for f in train {
        for ((s, x), m) in var.iter_mut().zip(&f.values).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(NormStats {
        names: first.names.to_vec(),
        mean,
        std,
    })
}

pub fn apply_norm(fv: &FeatureVector, stats: &NormStats) -> Result<FeatureVector> {
    if fv.dim() != stats.dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: stats.dim(),
            got: fv.dim(),
        });
    }
    Ok(FeatureVector {
        values: fv.values.iter().enumerate().map(|(i, &x)| stats.z(i, x)).collect(),
        names: fv.names.clone(),
        n_signals: fv.n_signals,
    })
}

/// One row of the exported feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: Option<StyleLabel>,
    pub features: FeatureVector,
}

/// Writes `id,label,<feature names...>`; unlabeled rows leave `label` empty.
pub fn write_feature_table<W: Write>(rows: &[FeatureRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = rows.first() else {
        w.flush().map_err(|e| FeatureError::Table(e.to_string()))?;
        return Ok(());
    };
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(first.features.names.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.id.clone(),
            row.label.map(|l| l.name().to_string()).unwrap_or_default(),
        ];
        rec.extend(row.features.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| FeatureError::Table(e.to_string()))?;
    Ok(())
}

pub fn read_feature_table<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("id") || header.get(1) != Some("label") {
        return Err(FeatureError::Table("header must start with id,label".into()));
    }
    let names: Arc<[String]> = header.iter().skip(2).map(str::to_string).collect();
    let n_signals = (names.len().saturating_sub(9)) / 9;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match rec.get(1).unwrap_or("") {
            "" => None,
            s => Some(s.parse().map_err(FeatureError::Table)?),
        };
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| FeatureError::Table(format!("row {i}: bad value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != names.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: names.len(),
                got: values.len(),
            });
        }
        rows.push(FeatureRow {
            id: rec.get(0).unwrap_or("").to_string(),
            label,
            features: FeatureVector {
                values,
                names: names.clone(),
                n_signals,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn constant_signal_is_degenerate() {
        let s = stat_features(&[5.0; 4]).unwrap();
        assert_eq!((s.mean, s.std, s.skewness, s.kurtosis), (5.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn one_to_four() {
        let s = stat_features(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!(close(s.std, 1.118033988749895, 1e-15));
        assert_eq!((s.median, s.q25, s.q75), (2.5, 1.75, 3.25));
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert!(s.skewness.abs() < 1e-15);
        // m4 / m2^2 - 3 = 2.5625 / 1.5625 - 3
        assert!(close(s.kurtosis, 2.5625 / 1.5625 - 3.0, 1e-14));
    }

    #[test]
    fn too_short_signal() {
        assert!(matches!(
            stat_features(&[1.0]),
            Err(FeatureError::TooShort { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn behavior_hand_count() {
        let a = [0.0, 3.0, 0.0, -3.0, 0.0];
        let z = [0.0; 5];
        let b = behavior_features(&z, &a, &z, &Thresholds::default()).unwrap();
        assert_eq!(b.accel_change_rate, 3.0);
        assert_eq!(
            (b.num_hard_accelerations, b.num_hard_brakes, b.num_hard_turns),
            (1, 1, 0)
        );
        assert_eq!(b.speed_change_rate, 0.0);
        let zeros = behavior_features(&z, &z, &z, &Thresholds::default()).unwrap();
        assert_eq!(zeros.to_array(), [0.0; 5]);
    }

    #[test]
    fn threshold_is_strict() {
        let a = [2.0; 6];
        let j = [-2.0; 6];
        let b = behavior_features(&a, &a, &j, &Thresholds::shared(2.0)).unwrap();
        assert_eq!((b.num_hard_accelerations, b.num_hard_turns), (0, 0));
    }

    #[test]
    fn turns_count_jerk() {
        let z = [0.0; 4];
        let j = [0.0, 2.5, -2.5, 1.0];
        let b = behavior_features(&z, &z, &j, &Thresholds::default()).unwrap();
        assert_eq!(b.num_hard_turns, 2);
    }

    #[test]
    fn behavior_errors() {
        assert!(matches!(
            behavior_features(&[0.0; 3], &[0.0; 4], &[0.0; 3], &Thresholds::default()),
            Err(FeatureError::LengthMismatch(_))
        ));
        assert!(matches!(
            behavior_features(&[0.0; 3], &[0.0; 3], &[0.0; 3], &Thresholds::shared(0.0)),
            Err(FeatureError::BadThreshold(_))
        ));
    }

    #[test]
    fn dynamic_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let a = [4.0, 3.0, 2.0, 1.0];
        let d = dynamic_features(&v, &a, &a).unwrap();
        assert!(close(d.speed_accel_corr, -1.0, 1e-15));
        assert!(close(d.speed_autocorr, 1.0, 1e-15));
        assert!(close(d.accel_jerk_corr, 1.0, 1e-15));
        let flat = dynamic_features(&[3.0; 4], &a, &a).unwrap();
        assert_eq!((flat.speed_accel_corr, flat.speed_autocorr), (0.0, 0.0));
        assert!(dynamic_features(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn names_follow_declared_order() {
        let names = SignalRegistry::default().feature_names();
        assert_eq!(names.len(), 36);
        assert_eq!(names.first().unwrap(), "speed_mean");
        assert_eq!(names.last().unwrap(), "acceleration_autocorrelation");
        assert_eq!(names[9], "acceleration_mean");
        assert_eq!(names[27], "acceleration_change_rate");
    }

    #[test]
    fn roster_is_36_unique_parseable_signals() {
        let roster = SignalRegistry::roster();
        assert_eq!(roster.len(), 36);
        let names: std::collections::HashSet<String> = roster.iter().map(|s| s.to_string()).collect();
        assert_eq!(names.len(), 36);
        for s in &roster {
            assert_eq!(&s.to_string().parse::<Signal>().unwrap(), s);
        }
        assert!("rollmean0_speed".parse::<Signal>().is_err());
        assert!("wobble_speed".parse::<Signal>().is_err());
    }

    #[test]
    fn norm_examples() {
        let names: Arc<[String]> = vec!["a".to_string(), "b".to_string()].into();
        let fv = |v: Vec<f64>| FeatureVector {
            values: v,
            names: names.clone(),
            n_signals: 0,
        };
        let same = vec![fv(vec![1.0, 2.0]); 3];
        let s = fit_norm(&same).unwrap();
        assert_eq!((s.mean.clone(), s.std.clone()), (vec![1.0, 2.0], vec![0.0, 0.0]));
        assert_eq!(apply_norm(&same[0], &s).unwrap().values, vec![0.0, 0.0]);

        let s = fit_norm(&[fv(vec![0.0, 0.0]), fv(vec![2.0, 2.0])]).unwrap();
        assert_eq!((s.mean.clone(), s.std.clone()), (vec![1.0, 1.0], vec![1.0, 1.0]));
        assert_eq!(apply_norm(&fv(vec![1.0, 1.0]), &s).unwrap().values, vec![0.0, 0.0]);

        assert!(matches!(fit_norm(&[]), Err(FeatureError::EmptyTrainingSet)));
        let short = FeatureVector {
            values: vec![1.0],
            names: vec!["a".to_string()].into(),
            n_signals: 0,
        };
        assert!(matches!(
            fit_norm(&[fv(vec![0.0, 0.0]), short.clone()]),
            Err(FeatureError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(apply_norm(&short, &s).is_err());
    }
}
