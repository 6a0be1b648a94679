//! Glue from labeled segments to model-ready train/validation/test samples:
//! feature extraction, split, normalization, descriptions and embeddings.

use thiserror::Error;

use crate::embed::{EmbedError, TextEmbedding, TextEncoder};
use crate::eval::{stratified_split, EvalError, ExperimentData, SplitIndices};
use crate::features::{apply_norm, fit_norm, FeatureError, FeatureExtractor, FeatureRow, FeatureVector, NormStats};
use crate::ingest::{StyleLabel, TrajectorySegment};
use crate::model::{raw_series_input, Sample};
use crate::semantic::{Describer, SemanticDescription, SemanticError};

pub const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("row {0} has no label")]
    Unlabeled(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn extract_rows(segments: &[TrajectorySegment], extractor: &FeatureExtractor) -> Result<Vec<FeatureRow>> {
    segments
        .iter()
        .map(|s| {
            Ok(FeatureRow {
                id: s.id.clone(),
                label: s.label,
                features: extractor.assemble(s)?,
            })
        })
        .collect()
}

pub fn labels_of(rows: &[FeatureRow]) -> Result<Vec<StyleLabel>> {
    rows.iter()
        .map(|r| r.label.ok_or_else(|| PipelineError::Unlabeled(r.id.clone())))
        .collect()
}

/// Everything derived from a labeled feature table for one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub rows: Vec<FeatureRow>,
    pub labels: Vec<StyleLabel>,
    pub split: SplitIndices,
    /// Fitted on the training split only.
    pub norm: NormStats,
    pub normalized: Vec<FeatureVector>,
    pub descriptions: Vec<SemanticDescription>,
    pub embeddings: Vec<TextEmbedding>,
}

/// Splits, normalizes with training statistics, describes and embeds.
pub fn prepare(
    rows: Vec<FeatureRow>,
    ratios: [f64; 3],
    seed: u64,
    describer: &Describer,
    encoder: &dyn TextEncoder,
) -> Result<PreparedData> {
    let labels = labels_of(&rows)?;
    let split = stratified_split(&labels, ratios, seed)?;
    let train_fvs: Vec<FeatureVector> = split.train.iter().map(|&i| rows[i].features.clone()).collect();
    let norm = fit_norm(&train_fvs)?;
    let normalized = rows
        .iter()
        .map(|r| apply_norm(&r.features, &norm))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let raw: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    let descriptions = describer.describe_all(&raw, &norm)?;
    let embeddings = descriptions
        .iter()
        .map(|d| encoder.encode(&d.text))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PreparedData {
        rows,
        labels,
        split,
        norm,
        normalized,
        descriptions,
        embeddings,
    })
}

impl PreparedData {
    fn sample(&self, i: usize) -> Sample {
        Sample {
            id: self.rows[i].id.clone(),
            numeric: Some(self.normalized[i].values.clone()),
            text: Some(self.embeddings[i].values.clone()),
            label: self.labels[i],
        }
    }

    /// Samples with the normalized feature vector as numeric input.
    pub fn experiment(&self) -> ExperimentData {
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.sample(i)).collect();
        ExperimentData {
            train: pick(&self.split.train),
            val: pick(&self.split.val),
            test: pick(&self.split.test),
        }
    }

    /// Samples with resampled raw speed/acceleration/jerk as numeric input.
    /// `segments` must be aligned with `rows`.
    pub fn raw_experiment(&self, segments: &[TrajectorySegment], steps: usize) -> ExperimentData {
        let pick = |idx: &[usize]| {
            idx.iter()
                .map(|&i| Sample {
                    numeric: Some(raw_series_input(&segments[i], steps)),
                    ..self.sample(i)
                })
                .collect()
        };
        ExperimentData {
            train: pick(&self.split.train),
            val: pick(&self.split.val),
            test: pick(&self.split.test),
        }
    }
}
