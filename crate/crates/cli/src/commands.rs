use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use drivestyle::cache::DiskCache;
use drivestyle::embed::{encoder_from_config, CachedEncoder, TextEncoder};
use drivestyle::eval::{
    compute_metrics, correlation_matrix, distribution_report, gen_synthetic, run_ablation_with, stratified_split,
    SynthStyleSpec,
};
use drivestyle::features::{
    apply_norm, fit_norm, read_feature_table, write_feature_table, FeatureExtractor, FeatureRow, FeatureVector,
    NormStats, BEHAVIOR_NAMES,
};
use drivestyle::ingest::{clean_segments, list_segment_files, parse_segment, StyleLabel};
use drivestyle::model::{derive_variant, load_checkpoint, predict, save_checkpoint, train, Sample, Variant};
use drivestyle::pipeline::{extract_rows, prepare, PreparedData};
use drivestyle::semantic::Describer;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub offline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Serialize, Deserialize)]
struct DescriptionLine {
    id: String,
    text: String,
    source: String,
    feature_hash: String,
    model_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    encoder_id: String,
    values: Vec<f64>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn cache_dir(&self) -> PathBuf {
        self.cfg
            .paths
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.out.join("cache"))
    }

    fn describer(&self) -> Result<Describer, CliError> {
        let cache =
            DiskCache::open(self.cache_dir().join("descriptions")).map_err(|e| CliError::io(&self.cache_dir(), e))?;
        Ok(Describer::new(&self.cfg.llm, Some(cache), self.offline)?)
    }

    fn encoder(&self) -> Result<CachedEncoder<Box<dyn TextEncoder>>, CliError> {
        let inner = encoder_from_config(&self.cfg.embedding, self.offline)?;
        let cache =
            DiskCache::open(self.cache_dir().join("embeddings")).map_err(|e| CliError::io(&self.cache_dir(), e))?;
        Ok(CachedEncoder::new(inner, cache))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::io(&path, e))
    }

    /// Appends one line to the structured run log.
    pub fn log_run(&self, command: &str, outputs: &[&str], extra: serde_json::Value) -> Result<(), CliError> {
        let path = self.path("run.jsonl");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        let line = json!({"command": command, "seed": self.cfg.seed, "outputs": outputs, "details": extra});
        writeln!(f, "{line}").map_err(|e| CliError::io(&path, e))
    }

    fn prepared(&self, rows: Vec<FeatureRow>) -> Result<PreparedData, CliError> {
        let prep = prepare(
            rows,
            self.cfg.split,
            self.cfg.seed,
            &self.describer()?,
            &self.encoder()?,
        )?;
        self.write_json("split.json", &prep.split)?;
        Ok(prep)
    }
}

fn flush(mut w: impl Write, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn load_rows(path: &Path) -> Result<Vec<FeatureRow>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let rows = read_feature_table(BufReader::new(file))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no feature rows", path.display())));
    }
    Ok(rows)
}

pub fn extract(ctx: &Context, input: &Path, skip_bad: bool) -> Result<(), CliError> {
    let files = list_segment_files(input)?;
    let mut segments = Vec::with_capacity(files.len());
    let mut skipped = Vec::new();
    for file in &files {
        match parse_segment(file) {
            Ok(seg) => segments.push(seg),
            Err(e) if skip_bad => {
                log::warn!("skipping {}: {e}", file.display());
                skipped.push(json!({"file": file.display().to_string(), "error": e.to_string()}));
            }
            Err(e) => return Err(CliError::Data(format!("{}: {e}", file.display()))),
        }
    }
    let (segments, mut report) = clean_segments(segments, &ctx.cfg.clean);
    report.input_count += skipped.len();
    let thresholds = ctx.cfg.thresholds()?;
    let extractor = FeatureExtractor::new(ctx.cfg.registry()?, thresholds)?;
    let rows = extract_rows(&segments, &extractor)?;
    write_feature_table(&rows, ctx.create("features.csv")?)?;
    ctx.write_json("drop_report.json", &json!({"report": report, "skipped_files": skipped}))?;
    ctx.write_json(
        "extract_meta.json",
        &json!({
            "tau": ctx.cfg.tau,
            "thresholds": thresholds,
            "signals": ctx.cfg.signals,
            "feature_dim": extractor.dim(),
            "rows": rows.len(),
        }),
    )?;
    ctx.log_run(
        "extract",
        &["features.csv", "drop_report.json", "extract_meta.json"],
        json!({"files": files.len(), "rows": rows.len(), "skipped": skipped.len()}),
    )?;
    println!(
        "extracted {} feature rows ({} dims) from {} files",
        rows.len(),
        extractor.dim(),
        files.len()
    );
    Ok(())
}

/// Normalization statistics for describing a table: the training split
/// when every row is labeled, otherwise all rows.
fn describe_norm(ctx: &Context, rows: &[FeatureRow]) -> Result<NormStats, CliError> {
    let labels: Option<Vec<StyleLabel>> = rows.iter().map(|r| r.label).collect();
    let fvs: Vec<FeatureVector> = match labels {
        Some(labels) => stratified_split(&labels, ctx.cfg.split, ctx.cfg.seed)?
            .train
            .iter()
            .map(|&i| rows[i].features.clone())
            .collect(),
        None => rows.iter().map(|r| r.features.clone()).collect(),
    };
    Ok(fit_norm(&fvs)?)
}

pub fn describe(ctx: &Context, features: &Path) -> Result<(), CliError> {
    let rows = load_rows(features)?;
    let norm = describe_norm(ctx, &rows)?;
    let describer = ctx.describer()?;
    let fvs: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    let descriptions = describer.describe_all(&fvs, &norm)?;
    let mut w = ctx.create("descriptions.jsonl")?;
    for (row, d) in rows.iter().zip(&descriptions) {
        let line = DescriptionLine {
            id: row.id.clone(),
            text: d.text.clone(),
            source: d.source.to_string(),
            feature_hash: d.feature_hash.clone(),
            model_id: d.model_id.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line)?).map_err(|e| CliError::io(features, e))?;
    }
    flush(w, &ctx.path("descriptions.jsonl"))?;
    let stats = json!({
        "rows": rows.len(),
        "remote_requests": describer.remote_requests(),
        "cache_hits": describer.cache_hits(),
        "model_id": describer.model_id(),
        "offline": ctx.offline,
    });
    ctx.write_json("describe_meta.json", &stats)?;
    ctx.log_run("describe", &["descriptions.jsonl", "describe_meta.json"], stats)?;
    println!(
        "described {} rows ({} remote requests, {} cache hits)",
        rows.len(),
        describer.remote_requests(),
        describer.cache_hits()
    );
    Ok(())
}

pub fn embed(ctx: &Context, descriptions: &Path) -> Result<(), CliError> {
    let file = File::open(descriptions).map_err(|e| CliError::io(descriptions, e))?;
    let encoder = ctx.encoder()?;
    let mut w = ctx.create("embeddings.jsonl")?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(descriptions, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DescriptionLine = serde_json::from_str(&line)?;
        let emb = encoder.encode(&d.text)?;
        let out = EmbeddingLine {
            id: d.id,
            encoder_id: emb.encoder_id,
            values: emb.values,
        };
        writeln!(w, "{}", serde_json::to_string(&out)?).map_err(|e| CliError::io(descriptions, e))?;
        n += 1;
    }
    flush(w, &ctx.path("embeddings.jsonl"))?;
    ctx.log_run(
        "embed",
        &["embeddings.jsonl"],
        json!({"rows": n, "encoder": encoder.encoder_id()}),
    )?;
    println!("embedded {n} descriptions with {}", encoder.encoder_id());
    Ok(())
}

pub fn synth(ctx: &Context, n_per_class: Option<usize>) -> Result<(), CliError> {
    let s = &ctx.cfg.synth;
    let n = n_per_class.unwrap_or(s.n_per_class);
    let segments = gen_synthetic(&SynthStyleSpec::defaults(), n, s.steps, s.dt, ctx.cfg.seed)?;
    let dir = ctx.path("segments");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for seg in &segments {
        seg.save(&dir.join(format!("{}.csv", seg.id)))?;
    }
    let mut counts = std::collections::BTreeMap::new();
    for seg in &segments {
        *counts
            .entry(seg.label.map(|l| l.name()).unwrap_or("unlabeled"))
            .or_insert(0usize) += 1;
    }
    ctx.write_json(
        "synth_manifest.json",
        &json!({"segments": segments.len(), "per_class": counts, "steps": s.steps, "dt": s.dt}),
    )?;
    ctx.log_run(
        "synth",
        &["segments", "synth_manifest.json"],
        json!({"segments": segments.len()}),
    )?;
    println!("wrote {} synthetic segments to {}", segments.len(), dir.display());
    Ok(())
}

pub fn train_cmd(ctx: &Context, features: &Path, variant: Variant, select_on_train: bool) -> Result<(), CliError> {
    let rows = load_rows(features)?;
    let dim = rows[0].features.dim();
    let prep = ctx.prepared(rows)?;
    let data = prep.experiment();
    let cfg = derive_variant(&ctx.cfg.model_config(dim), variant)?;
    let val = if select_on_train { &data.train } else { &data.val };
    let mut outcome = train(&cfg, &data.train, val)?;
    outcome.model.norm = Some(prep.norm.clone());
    let ckpt = ctx.path("model.ckpt");
    save_checkpoint(&outcome.model, &ckpt)?;
    let log_path = ctx.path("train_log.jsonl");
    fs::write(&log_path, outcome.log_jsonl()).map_err(|e| CliError::io(&log_path, e))?;
    let summary = json!({
        "variant": variant,
        "fingerprint": outcome.model.fingerprint(),
        "param_count": outcome.model.param_count(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
        "epochs_run": outcome.epochs_run,
    });
    ctx.write_json("train_summary.json", &summary)?;
    ctx.log_run(
        "train",
        &["model.ckpt", "train_log.jsonl", "train_summary.json", "split.json"],
        summary,
    )?;
    println!(
        "trained {variant}: best val accuracy {:.4} at epoch {} of {}",
        outcome.best_val_accuracy, outcome.best_epoch, outcome.epochs_run
    );
    Ok(())
}

pub fn eval_cmd(ctx: &Context, checkpoint: &Path, features: &Path, split: SplitChoice) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let rows = load_rows(features)?;
    let prep = ctx.prepared(rows)?;
    let norm = model.norm.clone().unwrap_or_else(|| prep.norm.clone());
    let indices: Vec<usize> = match split {
        SplitChoice::Train => prep.split.train.clone(),
        SplitChoice::Val => prep.split.val.clone(),
        SplitChoice::Test => prep.split.test.clone(),
        SplitChoice::All => (0..prep.rows.len()).collect(),
    };
    let samples = indices
        .iter()
        .map(|&i| {
            Ok(Sample {
                id: prep.rows[i].id.clone(),
                numeric: Some(apply_norm(&prep.rows[i].features, &norm)?.values),
                text: Some(prep.embeddings[i].values.clone()),
                label: prep.labels[i],
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let preds = predict(&model, &samples)?;
    let pred: Vec<StyleLabel> = preds.iter().map(|p| p.label).collect();
    let truth: Vec<StyleLabel> = samples.iter().map(|s| s.label).collect();
    let mut metrics = compute_metrics(&pred, &truth)?;
    metrics.variant = Some(model.config().variant.to_string());
    metrics.seed = Some(model.config().seed);
    metrics.fingerprint = Some(model.fingerprint().to_string());
    ctx.write_json("metrics.json", &metrics)?;
    let mut w = csv::Writer::from_writer(ctx.create("confusion.csv")?);
    let mut header = vec!["truth\\pred".to_string()];
    header.extend(StyleLabel::ALL.iter().map(|l| l.name().to_string()));
    w.write_record(&header)?;
    for (label, row) in StyleLabel::ALL.iter().zip(&metrics.confusion.matrix) {
        let mut rec = vec![label.name().to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(&ctx.path("confusion.csv"), e))?;
    ctx.log_run(
        "eval",
        &["metrics.json", "confusion.csv", "split.json"],
        json!({"split": format!("{split:?}").to_lowercase(), "samples": samples.len(), "accuracy": metrics.accuracy}),
    )?;
    println!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} on {} samples",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1,
        samples.len()
    );
    Ok(())
}

pub fn ablate(ctx: &Context, features: &Path) -> Result<(), CliError> {
    let rows = load_rows(features)?;
    let dim = rows[0].features.dim();
    let prep = ctx.prepared(rows)?;
    let base = ctx.cfg.model_config(dim);
    let report = run_ablation_with(&base, &prep.experiment(), !ctx.cfg.deterministic)?;
    report.write_table_csv(ctx.create("ablation.csv")?)?;
    report.write_weighted_table_csv(ctx.create("ablation_weighted.csv")?)?;
    let metrics: Vec<_> = report.rows.iter().map(|r| &r.metrics).collect();
    ctx.write_json("ablation_metrics.json", &metrics)?;
    let mut log = ctx.create("ablation_log.jsonl")?;
    for row in &report.rows {
        for rec in &row.outcome.log {
            let mut v = serde_json::to_value(rec)?;
            v["variant"] = json!(row.variant);
            writeln!(log, "{v}").map_err(|e| CliError::io(&ctx.path("ablation_log.jsonl"), e))?;
        }
    }
    flush(log, &ctx.path("ablation_log.jsonl"))?;
    let summary: Vec<_> = report
        .rows
        .iter()
        .map(|r| json!({"variant": r.variant, "accuracy": r.metrics.accuracy, "seconds": r.train_seconds}))
        .collect();
    ctx.log_run(
        "ablate",
        &[
            "ablation.csv",
            "ablation_weighted.csv",
            "ablation_metrics.json",
            "ablation_log.jsonl",
            "split.json",
        ],
        json!(summary),
    )?;
    for r in &report.rows {
        println!("{:<24} accuracy {:.4}", r.variant.table_name(), r.metrics.accuracy);
    }
    Ok(())
}

pub fn report(ctx: &Context, features: &Path, names: &[String]) -> Result<(), CliError> {
    let rows = load_rows(features)?;
    let fvs: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    correlation_matrix(&fvs)?.write_csv(ctx.create("correlation.csv")?)?;
    let names: Vec<&str> = if names.is_empty() {
        BEHAVIOR_NAMES.to_vec()
    } else {
        names.iter().map(String::as_str).collect()
    };
    let dist = distribution_report(&rows, &names)?;
    dist.write_samples_csv(ctx.create("kde_samples.csv")?)?;
    dist.write_kde_csv(ctx.create("kde.csv")?)?;
    for w in &dist.warnings {
        log::warn!("{w}");
    }
    ctx.write_json("report_warnings.json", &dist.warnings)?;
    ctx.log_run(
        "report",
        &["correlation.csv", "kde_samples.csv", "kde.csv", "report_warnings.json"],
        json!({"rows": rows.len(), "features": names}),
    )?;
    println!("wrote correlation and distribution reports for {} rows", rows.len());
    Ok(())
}
