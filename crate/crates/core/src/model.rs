//! Dual-channel fusion classifier: a projected text embedding and a
//! convolutional/attention encoding of the numeric features, concatenated
//! and passed through a two-layer head.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use drivestyle_nn::{
    cross_entropy, softmax_rows, AdamW, AdaptiveMaxPool1d, Attention, BatchNorm1d, Conv1d, Dense, Dropout,
    GradCheckReport, Layer, Mode, NnError, Param, Relu, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::sha256_hex;
use crate::features::NormStats;
use crate::ingest::{StyleLabel, TrajectorySegment};

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSTYLECK";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Signals stacked as channels in raw-series mode: speed, acceleration, jerk.
pub const RAW_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("variant {variant} needs the {channel} channel but the sample has none")]
    VariantChannelMissing { variant: Variant, channel: &'static str },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonfiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("config fingerprint {found} does not match checkpoint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAttention,
    NoMultiscale,
    TextOnly,
    NumericOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoAttention,
        Variant::NoMultiscale,
        Variant::TextOnly,
        Variant::NumericOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no_attention",
            Variant::NoMultiscale => "no_multiscale",
            Variant::TextOnly => "text_only",
            Variant::NumericOnly => "numeric_only",
        }
    }

    /// Row label used in the ablation table.
    pub fn table_name(self) -> &'static str {
        match self {
            Variant::Full => "Full Model",
            Variant::NoAttention => "w/o Spatio-Temp Attn.",
            Variant::NoMultiscale => "w/o Multi-Scale Conv.",
            Variant::TextOnly => "Text Features Only",
            Variant::NumericOnly => "Num. Features Only",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Variant::NumericOnly
    }

    pub fn uses_numeric(self) -> bool {
        self != Variant::TextOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Normalized feature vector as a 1-channel sequence of length `input_dim`.
    FeatureVector,
    /// Speed/acceleration/jerk resampled to `input_dim` steps, 3 channels.
    RawSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub classes: usize,
    /// Numeric sequence length: feature dimension or raw-series steps.
    pub input_dim: usize,
    pub input_mode: InputMode,
    pub text_dim: usize,
    pub semantic_dim: usize,
    pub kernels: Vec<usize>,
    pub branch_channels: usize,
    pub d_k: usize,
    pub refine_channels: Vec<usize>,
    pub refine_kernel: usize,
    pub pool_out_len: usize,
    pub numeric_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: StyleLabel::COUNT,
            input_dim: 36,
            input_mode: InputMode::FeatureVector,
            text_dim: crate::embed::EMBEDDING_DIM,
            semantic_dim: 128,
            kernels: vec![3, 5, 7],
            branch_channels: 64,
            d_k: 64,
            refine_channels: vec![128, 128],
            refine_kernel: 3,
            pool_out_len: 1,
            numeric_dim: 128,
            hidden_dim: 256,
            dropout: 0.3,
            lr: 2e-5,
            batch_size: 64,
            weight_decay: 0.01,
            epochs: 100,
            patience: 20,
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("classes = {} (need >= 2)", self.classes));
        }
        if self.kernels.is_empty() {
            return bad("no conv kernels".into());
        }
        if let Some(k) = self
            .kernels
            .iter()
            .chain(std::iter::once(&self.refine_kernel))
            .find(|k| *k % 2 == 0)
        {
            return bad(format!("kernel size {k} is even"));
        }
        if self.variant == Variant::NoMultiscale && self.kernels.len() != 1 {
            return bad("no_multiscale needs exactly one kernel; build it with make_variant".into());
        }
        let dims = [
            ("input_dim", self.input_dim),
            ("text_dim", self.text_dim),
            ("semantic_dim", self.semantic_dim),
            ("branch_channels", self.branch_channels),
            ("d_k", self.d_k),
            ("pool_out_len", self.pool_out_len),
            ("numeric_dim", self.numeric_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.refine_channels.contains(&0) {
            return bad("refine channel count of 0".into());
        }
        if self.pool_out_len > self.input_dim {
            return bad("pool_out_len exceeds input_dim".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        match self.input_mode {
            InputMode::FeatureVector => 1,
            InputMode::RawSeries => RAW_CHANNELS,
        }
    }

    /// Width of the concatenated branch outputs.
    pub fn concat_channels(&self) -> usize {
        self.kernels.len() * self.branch_channels
    }

    pub fn fusion_dim(&self) -> usize {
        match self.variant {
            Variant::TextOnly => self.semantic_dim,
            Variant::NumericOnly => self.numeric_dim,
            _ => self.semantic_dim + self.numeric_dim,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Derives an ablation config from a full-model config.
pub fn make_variant(base: &ModelConfig, variant: &str) -> Result<ModelConfig> {
    let v: Variant = variant.parse()?;
    derive_variant(base, v)
}

pub fn derive_variant(base: &ModelConfig, variant: Variant) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    cfg.variant = variant;
    if variant == Variant::NoMultiscale {
        cfg.branch_channels = base.concat_channels();
        cfg.kernels = vec![3];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One labeled example. Either channel may be absent when the variant does
/// not read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Channel-major `[in_channels * input_dim]` values.
    pub numeric: Option<Vec<f64>>,
    pub text: Option<Vec<f64>>,
    pub label: StyleLabel,
}

/// Linearly resamples speed, acceleration and jerk onto `steps` evenly spaced
/// sample indices, channel-major.
pub fn raw_series_input(seg: &TrajectorySegment, steps: usize) -> Vec<f64> {
    let n = seg.len();
    let mut out = Vec::with_capacity(RAW_CHANNELS * steps);
    for signal in [&seg.v, &seg.a, &seg.j] {
        for i in 0..steps {
            let pos = if steps == 1 {
                0.0
            } else {
                i as f64 * (n - 1) as f64 / (steps - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            out.push(signal[lo] * (1.0 - frac) + signal[hi] * frac);
        }
    }
    out
}

/// Batched inputs for one forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub numeric: Option<Tensor>,
    pub text: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_samples(samples: &[&Sample], cfg: &ModelConfig) -> Result<Self> {
        let b = samples.len();
        let numeric = if cfg.variant.uses_numeric() {
            let width = cfg.in_channels() * cfg.input_dim;
            let mut data = Vec::with_capacity(b * width);
            for s in samples {
                let x = s.numeric.as_ref().ok_or(ModelError::VariantChannelMissing {
                    variant: cfg.variant,
                    channel: "numeric",
                })?;
                if x.len() != width {
                    return Err(NnError::ShapeMismatch(format!(
                        "sample {} numeric length {} != {width}",
                        s.id,
                        x.len()
                    ))
                    .into());
                }
                data.extend_from_slice(x);
            }
            Some(Tensor::from_vec(&[b, cfg.in_channels(), cfg.input_dim], data)?)
        } else {
            None
        };
        let text = if cfg.variant.uses_text() {
            let mut data = Vec::with_capacity(b * cfg.text_dim);
            for s in samples {
                let e = s.text.as_ref().ok_or(ModelError::VariantChannelMissing {
                    variant: cfg.variant,
                    channel: "text",
                })?;
                if e.len() != cfg.text_dim {
                    return Err(NnError::ShapeMismatch(format!(
                        "sample {} embedding length {} != {}",
                        s.id,
                        e.len(),
                        cfg.text_dim
                    ))
                    .into());
                }
                data.extend_from_slice(e);
            }
            Some(Tensor::from_vec(&[b, cfg.text_dim], data)?)
        } else {
            None
        };
        Ok(Self {
            numeric,
            text,
            labels: samples.iter().map(|s| s.label.code()).collect(),
        })
    }

    fn first_nonfinite(&self) -> Option<String> {
        let b = self.len().max(1);
        for (what, t) in [("numeric", &self.numeric), ("text", &self.text)] {
            if let Some(t) = t {
                if let Some(i) = t.data().iter().position(|x| !x.is_finite()) {
                    return Some(format!("non-finite {what} input in batch row {}", i / (t.len() / b)));
                }
            }
        }
        None
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
struct SemanticChannel {
    dense: Dense,
    relu: Relu,
    dropout: Dropout,
}

impl SemanticChannel {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.dense.forward(x, mode)?;
        let h = self.relu.forward(&h, mode)?;
        Ok(self.dropout.forward(&h, mode)?)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let d = self.dropout.backward(dy)?;
        let d = self.relu.backward(&d)?;
        self.dense.backward(&d)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RefineBlock {
    conv: Conv1d,
    bn: BatchNorm1d,
    relu: Relu,
}

#[derive(Debug, Clone)]
struct NumericChannel {
    branches: Vec<(Conv1d, Relu)>,
    attention: Option<Attention>,
    refine: Vec<RefineBlock>,
    pool: AdaptiveMaxPool1d,
    fc: Dense,
    pooled_shape: Vec<usize>,
}

impl NumericChannel {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for (conv, relu) in &mut self.branches {
            let h = conv.forward(x, mode)?;
            outs.push(relu.forward(&h, mode)?);
        }
        let mut h = Tensor::concat_axis1(&outs.iter().collect::<Vec<_>>())?;
        if let Some(attn) = &mut self.attention {
            let tokens = h.swap_last_two()?;
            h = attn.forward(&tokens, mode)?.swap_last_two()?;
        }
        for block in &mut self.refine {
            h = block.conv.forward(&h, mode)?;
            h = block.bn.forward(&h, mode)?;
            h = block.relu.forward(&h, mode)?;
        }
        let pooled = self.pool.forward(&h, mode)?;
        self.pooled_shape = pooled.shape().to_vec();
        let b = pooled.shape()[0];
        let flat_len = pooled.len() / b.max(1);
        let flat = pooled.reshape(&[b, flat_len])?;
        Ok(self.fc.forward(&flat, mode)?)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let d = self.fc.backward(dy)?;
        let mut d = self.pool.backward(&d.reshape(&self.pooled_shape)?)?;
        for block in self.refine.iter_mut().rev() {
            d = block.relu.backward(&d)?;
            d = block.bn.backward(&d)?;
            d = block.conv.backward(&d)?;
        }
        if let Some(attn) = &mut self.attention {
            d = attn.backward(&d.swap_last_two()?)?.swap_last_two()?;
        }
        let widths: Vec<usize> = self.branches.iter().map(|(c, _)| c.out_channels()).collect();
        for ((conv, relu), part) in self.branches.iter_mut().zip(d.split_axis1(&widths)?) {
            let g = relu.backward(&part)?;
            conv.backward(&g)?;
        }
        Ok(())
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (conv, _) in &self.branches {
            out.extend(conv.params());
        }
        if let Some(a) = &self.attention {
            out.extend(a.params());
        }
        for block in &self.refine {
            out.extend(block.conv.params());
            out.extend(block.bn.params());
        }
        out.extend(self.fc.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (conv, _) in &mut self.branches {
            out.extend(conv.params_mut());
        }
        if let Some(a) = &mut self.attention {
            out.extend(a.params_mut());
        }
        for block in &mut self.refine {
            out.extend(block.conv.params_mut());
            out.extend(block.bn.params_mut());
        }
        out.extend(self.fc.params_mut());
        out
    }
}

/// Network weights plus the normalization statistics its inputs expect.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    fingerprint: String,
    pub norm: Option<NormStats>,
    semantic: Option<SemanticChannel>,
    numeric: Option<NumericChannel>,
    hidden: Dense,
    hidden_relu: Relu,
    output: Dense,
}

impl Model {
    /// Initializes weights from `cfg.seed`. Each submodule draws from its own
    /// random stream, so a channel's initial weights do not depend on which
    /// other channels exist.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let semantic = if cfg.variant.uses_text() {
            let mut rng = stream_rng(cfg.seed, 1);
            Some(SemanticChannel {
                dense: Dense::new("semantic.dense", cfg.text_dim, cfg.semantic_dim, &mut rng),
                relu: Relu::new(),
                dropout: Dropout::new(cfg.dropout, cfg.seed ^ 0xd20f_0a11)?,
            })
        } else {
            None
        };
        let numeric = if cfg.variant.uses_numeric() {
            let mut rng = stream_rng(cfg.seed, 2);
            let mut branches = Vec::with_capacity(cfg.kernels.len());
            for &k in &cfg.kernels {
                let conv = Conv1d::new(
                    &format!("numeric.branch{k}"),
                    cfg.in_channels(),
                    cfg.branch_channels,
                    k,
                    true,
                    &mut rng,
                )?;
                branches.push((conv, Relu::new()));
            }
            let use_attention = cfg.variant != Variant::NoAttention;
            let attention =
                use_attention.then(|| Attention::new("numeric.attention", cfg.concat_channels(), cfg.d_k, &mut rng));
            let mut width = if use_attention { cfg.d_k } else { cfg.concat_channels() };
            let mut refine = Vec::with_capacity(cfg.refine_channels.len());
            for (i, &c) in cfg.refine_channels.iter().enumerate() {
                // Batchnorm follows immediately, which would cancel a conv bias.
                let conv = Conv1d::new(
                    &format!("numeric.refine{i}.conv"),
                    width,
                    c,
                    cfg.refine_kernel,
                    false,
                    &mut rng,
                )?;
                let bn = BatchNorm1d::new(&format!("numeric.refine{i}.bn"), c, &mut rng);
                refine.push(RefineBlock {
                    conv,
                    bn,
                    relu: Relu::new(),
                });
                width = c;
            }
            let fc = Dense::new("numeric.fc", width * cfg.pool_out_len, cfg.numeric_dim, &mut rng);
            Some(NumericChannel {
                branches,
                attention,
                refine,
                pool: AdaptiveMaxPool1d::new(cfg.pool_out_len),
                fc,
                pooled_shape: Vec::new(),
            })
        } else {
            None
        };
        let mut rng = stream_rng(cfg.seed, 3);
        let hidden = Dense::new("fusion.hidden", cfg.fusion_dim(), cfg.hidden_dim, &mut rng);
        let output = Dense::new("fusion.output", cfg.hidden_dim, cfg.classes, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            fingerprint: cfg.fingerprint(),
            norm: None,
            semantic,
            numeric,
            hidden,
            hidden_relu: Relu::new(),
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fingerprint recorded at construction or in the loaded checkpoint.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn forward(&mut self, batch: &Batch, mode: Mode) -> Result<Tensor> {
        let variant = self.cfg.variant;
        let mut parts = Vec::with_capacity(2);
        if let Some(sem) = &mut self.semantic {
            let x = batch.text.as_ref().ok_or(ModelError::VariantChannelMissing {
                variant,
                channel: "text",
            })?;
            parts.push(sem.forward(x, mode)?);
        }
        if let Some(num) = &mut self.numeric {
            let x = batch.numeric.as_ref().ok_or(ModelError::VariantChannelMissing {
                variant,
                channel: "numeric",
            })?;
            parts.push(num.forward(x, mode)?);
        }
        let fused = if parts.len() == 1 {
            parts.pop().expect("one part")
        } else {
            Tensor::concat_axis1(&parts.iter().collect::<Vec<_>>())?
        };
        let h = self.hidden.forward(&fused, mode)?;
        let h = self.hidden_relu.forward(&h, mode)?;
        Ok(self.output.forward(&h, mode)?)
    }

    /// Backpropagates `dlogits` from the most recent forward pass,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, dlogits: &Tensor) -> Result<()> {
        let d = self.output.backward(dlogits)?;
        let d = self.hidden_relu.backward(&d)?;
        let d = self.hidden.backward(&d)?;
        match (&mut self.semantic, &mut self.numeric) {
            (Some(sem), Some(num)) => {
                let parts = d.split_axis1(&[self.cfg.semantic_dim, self.cfg.numeric_dim])?;
                sem.backward(&parts[0])?;
                num.backward(&parts[1])?;
            }
            (Some(sem), None) => sem.backward(&d)?,
            (None, Some(num)) => num.backward(&d)?,
            (None, None) => unreachable!("every variant has a channel"),
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(s) = &self.semantic {
            out.extend(s.dense.params());
        }
        if let Some(n) = &self.numeric {
            out.extend(n.params());
        }
        out.extend(self.hidden.params());
        out.extend(self.output.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(s) = &mut self.semantic {
            out.extend(s.dense.params_mut());
        }
        if let Some(n) = &mut self.numeric {
            out.extend(n.params_mut());
        }
        out.extend(self.hidden.params_mut());
        out.extend(self.output.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Looks up a parameter by its full name, e.g. `"numeric.fc.weight"`.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    /// Non-trainable state: batchnorm running statistics.
    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.numeric {
            for (i, block) in n.refine.iter_mut().enumerate() {
                out.push((format!("numeric.refine{i}.bn.running_mean"), &mut block.bn.running_mean));
                out.push((format!("numeric.refine{i}.bn.running_var"), &mut block.bn.running_var));
            }
        }
        out
    }

    /// Restarts the dropout mask sequence.
    pub fn reseed_dropout(&mut self, seed: u64) {
        if let Some(s) = &mut self.semantic {
            s.dropout.reseed(seed);
        }
    }

    /// Eval-mode logits for a batch.
    pub fn logits(&mut self, batch: &Batch) -> Result<Tensor> {
        self.forward(batch, Mode::Eval)
    }

    /// Central finite-difference check of every parameter against backprop
    /// through the whole network, using the mean cross-entropy as objective.
    /// `mode` must be deterministic (train mode requires dropout 0).
    pub fn grad_check(&mut self, batch: &Batch, h: f64, mode: Mode) -> Result<GradCheckReport> {
        let logits = self.forward(batch, mode)?;
        let (_, dlogits) = cross_entropy(&logits, &batch.labels)?;
        self.zero_grad();
        self.backward(&dlogits)?;
        let analytic: Vec<Vec<f64>> = self.params().iter().map(|p| p.grad.data().to_vec()).collect();
        let mut report = GradCheckReport::default();
        for (pi, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let orig = self.params()[pi].value.data()[j];
                self.params_mut()[pi].value.data_mut()[j] = orig + h;
                let fp = cross_entropy(&self.forward(batch, mode)?, &batch.labels)?.0;
                self.params_mut()[pi].value.data_mut()[j] = orig - h;
                let fm = cross_entropy(&self.forward(batch, mode)?, &batch.labels)?.0;
                self.params_mut()[pi].value.data_mut()[j] = orig;
                let name = self.params()[pi].name.clone();
                report.record(|| format!("{name}[{j}]"), a, (fp - fm) / (2.0 * h));
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: StyleLabel,
    pub probabilities: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax probabilities and argmax labels for a logits matrix.
pub fn predictions_from_logits(logits: &Tensor) -> Result<Vec<Prediction>> {
    let probs = softmax_rows(logits)?;
    let k = logits.shape()[1];
    probs
        .data()
        .chunks_exact(k)
        .map(|p| {
            let idx = argmax(p);
            let label = StyleLabel::from_code(idx)
                .ok_or_else(|| ModelError::InvalidConfig(format!("class index {idx} has no style label")))?;
            Ok(Prediction {
                label,
                probabilities: p.to_vec(),
            })
        })
        .collect()
}

fn eval_logits(model: &mut Model, samples: &[&Sample]) -> Result<Vec<f64>> {
    let bs = model.cfg.batch_size;
    let mut all = Vec::with_capacity(samples.len() * model.cfg.classes);
    for chunk in samples.chunks(bs) {
        let batch = Batch::from_samples(chunk, &model.cfg)?;
        all.extend_from_slice(model.forward(&batch, Mode::Eval)?.data());
    }
    Ok(all)
}

/// Eval-mode predictions. Fails if the model's configuration no longer
/// matches the fingerprint it was created or saved with.
pub fn predict(model: &Model, samples: &[Sample]) -> Result<Vec<Prediction>> {
    let found = model.cfg.fingerprint();
    if found != model.fingerprint {
        return Err(ModelError::FingerprintMismatch {
            expected: model.fingerprint.clone(),
            found,
        });
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let mut m = model.clone();
    let refs: Vec<&Sample> = samples.iter().collect();
    let logits = eval_logits(&mut m, &refs)?;
    let t = Tensor::from_vec(&[samples.len(), model.cfg.classes], logits)?;
    predictions_from_logits(&t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSplit {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: LogSplit,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
}

impl TrainOutcome {
    /// Training-split loss per epoch.
    pub fn loss_trace(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter(|r| r.split == LogSplit::Train)
            .map(|r| r.loss)
            .collect()
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Mean loss and accuracy in eval mode.
pub fn evaluate(model: &mut Model, samples: &[&Sample]) -> Result<(f64, f64)> {
    let bs = model.cfg.batch_size;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in samples.chunks(bs) {
        let batch = Batch::from_samples(chunk, &model.cfg)?;
        let logits = model.forward(&batch, Mode::Eval)?;
        let (loss, _) = cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss * chunk.len() as f64;
        correct += count_correct(&logits, &batch.labels);
    }
    let n = samples.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

/// Mini-batch AdamW training with per-epoch seeded shuffling and early
/// stopping on validation accuracy. Returns the best-validation weights.
///
/// Runs on the calling thread only, so identical inputs give identical
/// loss traces.
pub fn train(cfg: &ModelConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome> {
    train_with(Model::new(cfg)?, train_set, val_set, |_| {})
}

/// Like [`train`], starting from `model` and calling `on_epoch` after every
/// logged record.
pub fn train_with(
    mut model: Model,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    let cfg = model.cfg.clone();
    model.reseed_dropout(cfg.seed ^ 0xd20f_0a11);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let val_refs: Vec<&Sample> = val_set.iter().collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, 1_000 + epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let chunk: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_samples(&chunk, &cfg)?;
            if let Some(detail) = batch.first_nonfinite() {
                return Err(ModelError::NonfiniteLoss {
                    epoch,
                    batch: bi,
                    detail,
                });
            }
            let logits = model.forward(&batch, Mode::Train)?;
            let (loss, dlogits) = cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() {
                return Err(ModelError::NonfiniteLoss {
                    epoch,
                    batch: bi,
                    detail: format!("loss = {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&logits, &batch.labels);
            model.zero_grad();
            model.backward(&dlogits)?;
            opt.step(model.params_mut());
        }
        let n = train_set.len() as f64;
        let rec = EpochRecord {
            epoch,
            split: LogSplit::Train,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        };
        on_epoch(&rec);
        log.push(rec);

        let (val_loss, val_acc) = evaluate(&mut model, &val_refs)?;
        let rec = EpochRecord {
            epoch,
            split: LogSplit::Val,
            loss: val_loss,
            accuracy: val_acc,
        };
        on_epoch(&rec);
        log.push(rec);

        if val_acc > best.2 {
            best = (model.clone(), epoch, val_acc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch}; best epoch {}", best.1);
                break;
            }
        }
    }
    let (model, best_epoch, best_val_accuracy) = best;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_accuracy,
        epochs_run,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    fingerprint: String,
    param_count: usize,
    params: Vec<TensorEntry>,
    buffers: Vec<TensorEntry>,
    norm: Option<NormStats>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

/// Serializes the model: magic, version (u32 LE), manifest length (u64 LE),
/// JSON manifest, then every parameter and buffer as f64 LE.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut m = model.clone();
    let params: Vec<TensorEntry> = m
        .params()
        .iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.shape().to_vec(),
        })
        .collect();
    let mut payload: Vec<u8> = Vec::new();
    for p in m.params() {
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut buffers = Vec::new();
    for (name, buf) in m.buffers_mut() {
        buffers.push(TensorEntry {
            name,
            shape: vec![buf.len()],
        });
        for v in buf.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: model.cfg.clone(),
        fingerprint: model.fingerprint.clone(),
        param_count: model.param_count(),
        params,
        buffers,
        norm: model.norm.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn model_from_checkpoint_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if mlen > body.len() {
        return Err(corrupt("manifest extends past end of file"));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let mut payload = body[mlen..].chunks_exact(8);
    if !payload.remainder().is_empty() {
        return Err(corrupt("payload is not a whole number of f64 values"));
    }
    let mut model = Model::new(&manifest.config).map_err(|e| corrupt(format!("config: {e}")))?;
    let expected_floats: usize = manifest
        .params
        .iter()
        .chain(&manifest.buffers)
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected_floats {
        return Err(corrupt(format!(
            "payload holds {} values, manifest describes {expected_floats}",
            payload.len()
        )));
    }
    let mut next = || f64::from_le_bytes(payload.next().expect("length checked").try_into().expect("8 bytes"));
    {
        let params = model.params_mut();
        if params.len() != manifest.params.len() {
            return Err(corrupt("parameter list does not match the config"));
        }
        for (p, entry) in params.into_iter().zip(&manifest.params) {
            if p.name != entry.name || p.shape() != entry.shape.as_slice() {
                return Err(corrupt(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
            }
            for v in p.value.data_mut() {
                *v = next();
            }
        }
    }
    {
        let buffers = model.buffers_mut();
        if buffers.len() != manifest.buffers.len() {
            return Err(corrupt("buffer list does not match the config"));
        }
        for ((name, buf), entry) in buffers.into_iter().zip(&manifest.buffers) {
            if name != entry.name || entry.shape != [buf.len()] {
                return Err(corrupt(format!("unexpected buffer {}", entry.name)));
            }
            for v in buf.iter_mut() {
                *v = next();
            }
        }
    }
    model.fingerprint = manifest.fingerprint;
    model.norm = manifest.norm;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    model_from_checkpoint_bytes(&bytes)
}
