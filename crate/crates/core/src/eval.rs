//! Metrics, stratified splitting, the synthetic four-style generator, the
//! ablation runner and the correlation/distribution report emitters.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{pearson, percentile_sorted, FeatureRow, FeatureVector, DEFAULT_TAU};
use crate::ingest::{forward_difference, IngestError, StyleLabel, TrajectorySegment};
use crate::model::{self, derive_variant, ModelConfig, ModelError, Sample, TrainOutcome, Variant};

pub const KDE_GRID_POINTS: usize = 200;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {truth} labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no samples")]
    Empty,
    #[error("class {label} has {count} samples; at least 3 are needed to split")]
    ClassTooSmall { label: StyleLabel, count: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("need at least 2 feature vectors, got {0}")]
    TooFew(usize),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `matrix[truth][pred]` counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(pred: &[usize], truth: &[usize], classes: usize) -> Self {
        let mut matrix = vec![vec![0u64; classes]; classes];
        for (&p, &t) in pred.iter().zip(truth) {
            matrix[t][p] += 1;
        }
        Self { matrix }
    }

    pub fn classes(&self) -> usize {
        self.matrix.len()
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.matrix[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.classes()).filter(|&t| t != c).map(|t| self.matrix[t][c]).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.classes()).filter(|&p| p != c).map(|p| self.matrix[c][p]).sum()
    }

    pub fn tn(&self, c: usize) -> u64 {
        self.total() - self.tp(c) - self.fp(c) - self.fn_(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.matrix[c].iter().sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (precision * recall) / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: StyleLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Micro-averaged; these are the primary figures.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionCounts,
    pub variant: Option<String>,
    pub seed: Option<u64>,
    pub fingerprint: Option<String>,
}

pub fn compute_metrics(pred: &[StyleLabel], truth: &[StyleLabel]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let p: Vec<usize> = pred.iter().map(|l| l.code()).collect();
    let t: Vec<usize> = truth.iter().map(|l| l.code()).collect();
    let cm = ConfusionCounts::new(&p, &t, StyleLabel::COUNT);
    let k = cm.classes();
    let n = cm.total();
    let correct: u64 = (0..k).map(|c| cm.tp(c)).sum();
    let (tp, fp, fn_): (u64, u64, u64) = (0..k).fold((0, 0, 0), |acc, c| {
        (acc.0 + cm.tp(c), acc.1 + cm.fp(c), acc.2 + cm.fn_(c))
    });
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);

    let per_class: Vec<ClassMetrics> = StyleLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.code();
            let pr = ratio(cm.tp(c), cm.tp(c) + cm.fp(c));
            let rc = ratio(cm.tp(c), cm.tp(c) + cm.fn_(c));
            ClassMetrics {
                label,
                precision: pr,
                recall: rc,
                f1: f1_score(pr, rc),
                support: cm.support(c),
            }
        })
        .collect();
    let kf = k as f64;
    let macro_of = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / kf;
    let weighted_of =
        |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        accuracy: ratio(correct, n),
        precision,
        recall,
        // Count form of the harmonic mean; exact where the ratio form rounds.
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        macro_precision: macro_of(|m| m.precision),
        macro_recall: macro_of(|m| m.recall),
        macro_f1: macro_of(|m| m.f1),
        weighted_precision: weighted_of(|m| m.precision),
        weighted_recall: weighted_of(|m| m.recall),
        weighted_f1: weighted_of(|m| m.f1),
        per_class,
        confusion: cm,
        variant: None,
        seed: None,
        fingerprint: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder allocation of `n` items over `ratios`. Ties in the
/// fractional part rotate with `rotation` so that repeated calls spread the
/// leftover items across the tied slots.
pub fn allocate(n: usize, ratios: &[f64; 3], rotation: usize) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = std::array::from_fn(|i| quotas[i].floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    let frac = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut pos = 0;
    while left > 0 {
        let top = frac(order[pos]);
        let tied: Vec<usize> = order[pos..]
            .iter()
            .copied()
            .filter(|&i| (frac(i) - top).abs() < 1e-9)
            .collect();
        let take = left.min(tied.len());
        for r in 0..take {
            counts[tied[(r + rotation) % tied.len()]] += 1;
        }
        left -= take;
        pos += tied.len();
    }
    counts
}

/// Per-class proportional split with seeded shuffling. Indices in each part
/// are returned sorted.
pub fn stratified_split(labels: &[StyleLabel], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::BadRatios(ratios));
    }
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for label in StyleLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(EvalError::ClassTooSmall {
                label,
                count: idx.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.code() as u64 + 1);
        idx.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(idx.len(), &ratios, label.code());
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Generator parameters for one driving style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthStyleSpec {
    pub label: StyleLabel,
    /// Segment target speeds are drawn from N(mean, std), m/s.
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Hard-event pulse onsets per 100 steps.
    pub hard_accel_rate: f64,
    pub hard_brake_rate: f64,
    /// Std of the per-step acceleration innovation, m/s².
    pub jerk_noise: f64,
    /// AR(1) coefficient of the acceleration process, in [0, 1).
    pub smoothing: f64,
}

impl SynthStyleSpec {
    pub fn defaults() -> Vec<SynthStyleSpec> {
        let spec = |label, speed_mean, speed_std, rate, jerk_noise, smoothing| SynthStyleSpec {
            label,
            speed_mean,
            speed_std,
            hard_accel_rate: rate,
            hard_brake_rate: rate,
            jerk_noise,
            smoothing,
        };
        vec![
            spec(StyleLabel::Aggressive, 18.0, 3.0, 3.0, 0.25, 0.6),
            spec(StyleLabel::Assertive, 15.0, 3.0, 1.5, 0.18, 0.7),
            spec(StyleLabel::Conservative, 8.0, 2.5, 0.15, 0.06, 0.9),
            spec(StyleLabel::Moderate, 11.0, 3.0, 0.6, 0.12, 0.8),
        ]
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.speed_mean,
            self.speed_std,
            self.hard_accel_rate,
            self.hard_brake_rate,
            self.jerk_noise,
            self.smoothing,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(EvalError::BadSpec(format!("{}: non-finite parameter", self.label)));
        }
        if self.speed_mean <= 0.0 || self.speed_std < 0.0 || self.jerk_noise < 0.0 {
            return Err(EvalError::BadSpec(format!(
                "{}: speed mean must be positive, stds non-negative",
                self.label
            )));
        }
        if self.hard_accel_rate < 0.0
            || self.hard_brake_rate < 0.0
            || self.hard_accel_rate > 100.0
            || self.hard_brake_rate > 100.0
        {
            return Err(EvalError::BadSpec(format!(
                "{}: event rates must lie in [0, 100]",
                self.label
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(EvalError::BadSpec(format!("{}: smoothing outside [0, 1)", self.label)));
        }
        Ok(())
    }
}

/// Pulse length in steps and extra amplitude beyond the hard-event threshold.
const PULSE_STEPS: std::ops::RangeInclusive<usize> = 4..=8;
const PULSE_MARGIN: std::ops::Range<f64> = 0.4..1.5;
const MEAN_REVERSION: f64 = 0.05;
const MIN_SPEED: f64 = 0.5;

fn gen_one(
    spec: &SynthStyleSpec,
    id: String,
    steps: usize,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectorySegment> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let target = (spec.speed_mean + spec.speed_std * std_normal.sample(rng)).max(2.0);
    let mut v = Vec::with_capacity(steps);
    let mut a = Vec::with_capacity(steps);
    let mut speed = target + std_normal.sample(rng);
    let mut base = 0.0;
    let mut pulse_left = 0usize;
    let mut pulse_amp = 0.0;
    for _ in 0..steps {
        base = spec.smoothing * base + spec.jerk_noise * std_normal.sample(rng) + MEAN_REVERSION * (target - speed);
        if pulse_left == 0 {
            let u: f64 = rng.random::<f64>() * 100.0;
            let amp = DEFAULT_TAU + rng.random_range(PULSE_MARGIN);
            if u < spec.hard_accel_rate {
                pulse_left = rng.random_range(PULSE_STEPS);
                pulse_amp = amp;
            } else if u < spec.hard_accel_rate + spec.hard_brake_rate {
                pulse_left = rng.random_range(PULSE_STEPS);
                pulse_amp = -amp;
            }
        }
        let mut acc = base;
        if pulse_left > 0 {
            acc += pulse_amp;
            pulse_left -= 1;
        }
        if speed + acc * dt < MIN_SPEED {
            // Braking would stop the vehicle; coast instead.
            acc = (MIN_SPEED - speed) / dt;
            base = 0.0;
            pulse_left = 0;
        }
        speed += acc * dt;
        v.push(speed);
        a.push(acc);
    }
    let t: Vec<f64> = (0..steps).map(|i| i as f64 * dt).collect();
    let j = forward_difference(&a, &t);
    Ok(TrajectorySegment::new(id, t, v, a, j, Some(spec.label))?)
}

/// Generates `n_per_class` labeled segments of `steps` samples for each spec.
/// Output order is class-major in spec order.
pub fn gen_synthetic(
    specs: &[SynthStyleSpec],
    n_per_class: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<TrajectorySegment>> {
    if steps < 50 {
        return Err(EvalError::BadSpec(format!("segment length {steps} < 50")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EvalError::BadSpec(format!("dt = {dt}")));
    }
    if specs.len() != StyleLabel::COUNT {
        return Err(EvalError::BadSpec(format!(
            "expected {} specs, got {}",
            StyleLabel::COUNT,
            specs.len()
        )));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        if specs[..i].iter().any(|o| o.label == s.label) {
            return Err(EvalError::BadSpec(format!("duplicate spec for {}", s.label)));
        }
        if specs[..i].iter().any(|o| {
            o == &SynthStyleSpec {
                label: o.label,
                ..s.clone()
            }
        }) {
            return Err(EvalError::BadSpec(format!(
                "spec for {} duplicates another style",
                s.label
            )));
        }
    }
    let mut out = Vec::with_capacity(specs.len() * n_per_class);
    for spec in specs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(spec.label.code() as u64 + 1);
        for i in 0..n_per_class {
            let id = format!("{}_{i:04}", spec.label.name().to_lowercase());
            out.push(gen_one(spec, id, steps, dt, &mut rng)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    /// Header `feature,<names...>`, one row per feature.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["feature".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn correlation_matrix(features: &[FeatureVector]) -> Result<CorrelationMatrix> {
    if features.len() < 2 {
        return Err(EvalError::TooFew(features.len()));
    }
    let d = features[0].dim();
    let columns: Vec<Vec<f64>> = (0..d).map(|i| features.iter().map(|f| f.values[i]).collect()).collect();
    let nonconstant: Vec<bool> = columns.iter().map(|c| c.iter().any(|&x| x != c[0])).collect();
    let mut values = vec![vec![0.0; d]; d];
    for i in 0..d {
        values[i][i] = if nonconstant[i] { 1.0 } else { 0.0 };
        for j in i + 1..d {
            let r = pearson(&columns[i], &columns[j]);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: features[0].names.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub feature: String,
    pub label: StyleLabel,
    pub samples: Vec<f64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoid-rule integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistributionReport {
    pub curves: Vec<KdeCurve>,
    pub warnings: Vec<String>,
}

impl DistributionReport {
    /// Long format: `feature,label,value`.
    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "label", "value"])?;
        for c in &self.curves {
            for v in &c.samples {
                w.write_record([c.feature.as_str(), c.label.name(), &v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Long format: `feature,label,bandwidth,x,density`.
    pub fn write_kde_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "label", "bandwidth", "x", "density"])?;
        for c in &self.curves {
            for (x, d) in c.grid.iter().zip(&c.density) {
                w.write_record([
                    c.feature.as_str(),
                    c.label.name(),
                    &c.bandwidth.to_string(),
                    &x.to_string(),
                    &d.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Silverman's rule, `0.9 min(σ, IQR/1.34) n^(-1/5)`, using σ alone when the
/// IQR is 0. Returns `None` when the spread is 0.
pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sigma = population_std(values);
    let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    (spread > 0.0).then(|| 0.9 * spread * (values.len() as f64).powf(-0.2))
}

fn gaussian_kde(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Per-class values and Gaussian KDE curves for the named features.
pub fn distribution_report(rows: &[FeatureRow], feature_names: &[&str]) -> Result<DistributionReport> {
    let first = rows.first().ok_or(EvalError::Empty)?;
    let mut report = DistributionReport::default();
    for &name in feature_names {
        let idx = first
            .features
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| EvalError::UnknownFeature(name.to_string()))?;
        let all: Vec<f64> = rows.iter().map(|r| r.features.values[idx]).collect();
        let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for label in StyleLabel::ALL {
            let samples: Vec<f64> = rows
                .iter()
                .filter(|r| r.label == Some(label))
                .map(|r| r.features.values[idx])
                .collect();
            if samples.is_empty() {
                continue;
            }
            let bandwidth = match silverman_bandwidth(&samples) {
                Some(h) => h,
                None => {
                    let h = if range > 0.0 { 0.1 * range } else { 0.1 };
                    let msg = format!(
                        "{name}/{label}: {} sample(s) with zero spread; bandwidth set to {h}",
                        samples.len()
                    );
                    log::warn!("{msg}");
                    report.warnings.push(msg);
                    h
                }
            };
            let smin = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
            let smax = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
            let step = (smax - smin) / (KDE_GRID_POINTS - 1) as f64;
            let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| smin + i as f64 * step).collect();
            let density = gaussian_kde(&samples, bandwidth, &grid);
            report.curves.push(KdeCurve {
                feature: name.to_string(),
                label,
                samples,
                bandwidth,
                grid,
                density,
            });
        }
    }
    Ok(report)
}

/// Train/validation/test samples for one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub metrics: MetricsReport,
    pub outcome: TrainOutcome,
    pub train_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<VariantResult>,
}

pub const ABLATION_HEADER: [&str; 5] = ["Model Variation", "Acc.", "Pre.", "Rec.", "F1"];

/// Reference figures per variant (accuracy, precision, recall, F1), kept
/// for side-by-side reporting only; they come from a dataset that is not
/// available here and are never asserted.
pub const REFERENCE_TABLE: [(Variant, [f64; 4]); 5] = [
    (Variant::Full, [0.9430, 0.9464, 0.9430, 0.9414]),
    (Variant::NoAttention, [0.9311, 0.9333, 0.9311, 0.9298]),
    (Variant::NoMultiscale, [0.9359, 0.9409, 0.9359, 0.9343]),
    (Variant::TextOnly, [0.9145, 0.9158, 0.9145, 0.9135]),
    (Variant::NumericOnly, [0.9144, 0.9161, 0.9144, 0.9147]),
];

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Micro-averaged table, four decimals.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_with(writer, |m| [m.accuracy, m.precision, m.recall, m.f1])
    }

    /// Same layout with support-weighted per-class averages.
    pub fn write_weighted_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_with(writer, |m| {
            [m.accuracy, m.weighted_precision, m.weighted_recall, m.weighted_f1]
        })
    }

    fn write_with<W: Write>(&self, writer: W, cells: impl Fn(&MetricsReport) -> [f64; 4]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(ABLATION_HEADER)?;
        for row in &self.rows {
            let mut rec = vec![row.variant.table_name().to_string()];
            rec.extend(cells(&row.metrics).iter().map(|v| format!("{v:.4}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Test-split metrics for a trained model.
pub fn evaluate_model(model: &model::Model, test: &[Sample]) -> Result<MetricsReport> {
    let preds = model::predict(model, test)?;
    let pred: Vec<StyleLabel> = preds.iter().map(|p| p.label).collect();
    let truth: Vec<StyleLabel> = test.iter().map(|s| s.label).collect();
    let mut m = compute_metrics(&pred, &truth)?;
    m.variant = Some(model.config().variant.name().to_string());
    m.seed = Some(model.config().seed);
    m.fingerprint = Some(model.fingerprint().to_string());
    Ok(m)
}

/// Trains `variant` from `base` on the shared splits and scores the test split.
pub fn run_variant(base: &ModelConfig, variant: Variant, data: &ExperimentData) -> Result<VariantResult> {
    let cfg = derive_variant(base, variant)?;
    log::info!("training variant {variant}");
    let start = std::time::Instant::now();
    let outcome = model::train(&cfg, &data.train, &data.val)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate_model(&outcome.model, &data.test)?;
    Ok(VariantResult {
        variant,
        metrics,
        outcome,
        train_seconds,
    })
}

/// Trains the five variants sequentially with identical data and seed.
pub fn run_ablation(base: &ModelConfig, data: &ExperimentData) -> Result<AblationReport> {
    run_ablation_with(base, data, false)
}

/// With `parallel`, variants train on separate threads. Each variant is
/// still individually deterministic; only wall-clock ordering changes.
pub fn run_ablation_with(base: &ModelConfig, data: &ExperimentData, parallel: bool) -> Result<AblationReport> {
    let rows = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = Variant::ALL
                .iter()
                .map(|&v| s.spawn(move || run_variant(base, v, data)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("variant thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        Variant::ALL
            .iter()
            .map(|&v| run_variant(base, v, data))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use StyleLabel::*;

    #[test]
    fn hand_counted_metrics() {
        let m = compute_metrics(
            &[Aggressive, Assertive, Assertive, Assertive],
            &[Aggressive, Aggressive, Assertive, Assertive],
        )
        .unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.75);
        assert_eq!(m.f1, 0.75);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert_eq!(m.confusion.total(), 4);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(compute_metrics(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            compute_metrics(&[Moderate], &[]),
            Err(EvalError::LengthMismatch { pred: 1, truth: 0 })
        ));
    }

    #[test]
    fn allocation_rotates_ties() {
        let r = [0.8, 0.1, 0.1];
        assert_eq!(allocate(25, &r, 0), [20, 3, 2]);
        assert_eq!(allocate(25, &r, 1), [20, 2, 3]);
        assert_eq!(allocate(250, &r, 3), [200, 25, 25]);
        assert_eq!(allocate(3, &r, 0).iter().sum::<usize>(), 3);
    }

    #[test]
    fn split_100_is_80_10_10() {
        let labels: Vec<StyleLabel> = (0..100).map(|i| StyleLabel::ALL[i % 4]).collect();
        let s = stratified_split(&labels, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, stratified_split(&labels, [0.8, 0.1, 0.1], 9).unwrap());
        assert_ne!(s, stratified_split(&labels, [0.8, 0.1, 0.1], 10).unwrap());
    }

    #[test]
    fn split_errors() {
        let labels = vec![Aggressive, Aggressive, Moderate, Moderate, Moderate];
        assert!(matches!(
            stratified_split(&labels, [0.8, 0.1, 0.1], 0),
            Err(EvalError::ClassTooSmall {
                label: Aggressive,
                count: 2
            })
        ));
        assert!(matches!(
            stratified_split(&labels, [0.8, 0.1, 0.2], 0),
            Err(EvalError::BadRatios(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let specs = SynthStyleSpec::defaults();
        let a = gen_synthetic(&specs, 3, 80, 0.1, 4).unwrap();
        let b = gen_synthetic(&specs, 3, 80, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        for s in &a {
            s.validate().unwrap();
            assert!(s.v.iter().all(|&v| v > 0.0));
        }
        assert!(matches!(
            gen_synthetic(&specs, 1, 49, 0.1, 0),
            Err(EvalError::BadSpec(_))
        ));
        assert!(matches!(
            gen_synthetic(&specs[..3], 1, 60, 0.1, 0),
            Err(EvalError::BadSpec(_))
        ));
    }

    #[test]
    fn silverman_falls_back() {
        assert_eq!(silverman_bandwidth(&[1.0]), None);
        assert_eq!(silverman_bandwidth(&[2.0, 2.0, 2.0]), None);
        // IQR 0 but nonzero spread uses sigma.
        let h = silverman_bandwidth(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0]).unwrap();
        assert!(h > 0.0);
    }
}
