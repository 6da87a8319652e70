//! Benchmark evaluation dumps: embedded inputs, per-model labels, the task
//! partition and the model roster, plus exact cosine kNN over them.
//!
//! Samples are kept sorted by `(task_id, sample_id)`, so a sample's index in
//! the store doubles as its lexicographic rank. Every tie-break in the crate
//! that is specified as "by (task_id, sample_id)" is implemented as "by index".

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::jsonfmt;

/// Index of a sample inside a [`BenchmarkStore`].
pub type SampleRef = usize;

const SAMPLES_FILE: &str = "samples.jsonl";
const MODELS_FILE: &str = "models.jsonl";
const MANIFEST_FILE: &str = "store.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    /// Parameter count in billions.
    #[serde(rename = "n_params_b")]
    pub n_params: f64,
    #[serde(default)]
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub sample_id: String,
    pub task_id: String,
    /// Unit-norm embedding.
    pub embedding: Vec<f64>,
    /// One label per roster model, in roster order.
    pub labels: Vec<f64>,
    pub raw_metrics: Option<BTreeMap<String, f64>>,
    pub ll_scores: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    samples: Range<usize>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_refs(&self) -> Range<SampleRef> {
        self.samples.clone()
    }

    pub fn contains(&self, idx: SampleRef) -> bool {
        self.samples.contains(&idx)
    }
}

/// Ingestion options. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Derive binary labels as `raw_metric > threshold[task]`.
    pub binarize: bool,
    pub thresholds: Option<BTreeMap<String, f64>>,
    /// Declared range for continuous labels; labels are rescaled to [0, 1].
    pub label_min: Option<f64>,
    pub label_max: Option<f64>,
    pub dimension: Option<usize>,
    /// Force a label mode instead of inferring it.
    pub label_mode: Option<LabelMode>,
    /// Embeddings are already unit-norm (saved stores); skip renormalization.
    pub normalized: bool,
}

/// One line of the samples JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub task_id: String,
    pub sample_id: String,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_metrics: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ll: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    dimension: usize,
    label_mode: LabelMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<BTreeMap<String, f64>>,
}

/// Immutable benchmark store.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkStore {
    dimension: usize,
    models: Vec<ModelRecord>,
    tasks: Vec<TaskDataset>,
    samples: Vec<EmbeddedSample>,
    label_mode: LabelMode,
    thresholds: Option<BTreeMap<String, f64>>,
}

/// A neighbor returned by [`BenchmarkStore::knn_query`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub sample: SampleRef,
    pub distance: f64,
}

/// Which task to leave out of a reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeldOut<'a> {
    Task(&'a str),
    /// A new task that is not part of the store: nothing is excluded.
    External,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine distance between two unit-norm vectors, clamped to [0, 2].
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

/// Total order on neighbor candidates: distance, then store index.
pub(crate) fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.sample.cmp(&b.sample))
}

/// Keep the `k` smallest candidates under [`neighbor_order`], sorted.
pub(crate) fn select_smallest(mut cands: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if cands.len() > k && k > 0 {
        cands.select_nth_unstable_by(k - 1, neighbor_order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(neighbor_order);
    cands.truncate(k);
    cands
}

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

impl BenchmarkStore {
    /// Load a store from the samples and models JSONL files.
    pub fn load(samples_path: &Path, models_path: &Path, cfg: &IngestConfig) -> Result<Self> {
        let models = read_models(models_path)?;
        let records = read_samples(samples_path)?;
        Self::from_records(models, records, cfg, samples_path)
    }

    /// Load a store previously written by [`BenchmarkStore::save`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| RouterError::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let cfg = IngestConfig {
            thresholds: manifest.thresholds,
            dimension: Some(manifest.dimension),
            label_mode: Some(manifest.label_mode),
            normalized: true,
            ..IngestConfig::default()
        };
        Self::load(&dir.join(SAMPLES_FILE), &dir.join(MODELS_FILE), &cfg)
    }

    /// Validate and assemble a store from parsed records. `records` carry the
    /// 1-based source line used in schema errors.
    pub fn from_records(
        models: Vec<ModelRecord>,
        records: Vec<(usize, SampleRecord)>,
        cfg: &IngestConfig,
        source: &Path,
    ) -> Result<Self> {
        let models = validate_models(models)?;
        let roster: BTreeMap<&str, usize> = models
            .iter()
            .enumerate()
            .map(|(i, m)| (m.model_id.as_str(), i))
            .collect();

        if let (Some(lo), Some(hi)) = (cfg.label_min, cfg.label_max) {
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(RouterError::Validation(format!(
                    "label_max ({hi}) must exceed label_min ({lo})"
                )));
            }
        } else if cfg.label_min.is_some() || cfg.label_max.is_some() {
            return Err(RouterError::Validation(
                "label_min and label_max must be given together".into(),
            ));
        }
        if cfg.binarize && cfg.label_mode == Some(LabelMode::Continuous) {
            return Err(RouterError::Validation(
                "binarize requires binary label mode".into(),
            ));
        }
        if let Some(th) = &cfg.thresholds {
            if let Some((t, v)) = th.iter().find(|(_, v)| !v.is_finite()) {
                return Err(RouterError::Validation(format!(
                    "threshold for task {t} is not finite: {v}"
                )));
            }
        }

        let dimension = match cfg.dimension {
            Some(d) => d,
            None => records
                .first()
                .map(|(_, r)| r.embedding.len())
                .ok_or_else(|| RouterError::EmptyStore("samples file is empty".into()))?,
        };
        if dimension == 0 {
            return Err(RouterError::Validation("dimension must be positive".into()));
        }
        if records.is_empty() {
            return Err(RouterError::EmptyStore("samples file is empty".into()));
        }

        let schema = |line: usize, message: String| RouterError::Schema {
            path: source.to_path_buf(),
            line,
            message,
        };

        let mut samples = Vec::with_capacity(records.len());
        for (line, rec) in records {
            if rec.embedding.len() != dimension {
                return Err(schema(
                    line,
                    format!(
                        "embedding has {} dimensions, store dimension is {}",
                        rec.embedding.len(),
                        dimension
                    ),
                ));
            }
            if rec.embedding.iter().any(|v| !v.is_finite()) {
                return Err(schema(line, "embedding has non-finite components".into()));
            }
            let norm = l2_norm(&rec.embedding);
            if norm == 0.0 || !norm.is_finite() {
                return Err(schema(line, "embedding has zero norm".into()));
            }
            let embedding = if cfg.normalized {
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(schema(line, format!("embedding is not unit-norm ({norm})")));
                }
                rec.embedding
            } else {
                rec.embedding.iter().map(|v| v / norm).collect()
            };

            for (kind, map) in [("raw_metrics", &rec.raw_metrics), ("ll", &rec.ll)] {
                if let Some(map) = map {
                    check_keys(map, &roster, kind, line, source)?;
                    if let Some((m, v)) = map.iter().find(|(_, v)| !v.is_finite()) {
                        return Err(RouterError::Validation(format!(
                            "line {line}: {kind} for model {m} is not finite: {v}"
                        )));
                    }
                }
            }

            let threshold = cfg
                .thresholds
                .as_ref()
                .and_then(|t| t.get(&rec.task_id).copied());

            let labels = if cfg.binarize {
                let eta = threshold.ok_or_else(|| {
                    RouterError::Validation(format!(
                        "line {line}: binarize is on but task {} has no threshold",
                        rec.task_id
                    ))
                })?;
                let raw = rec.raw_metrics.as_ref().ok_or_else(|| {
                    RouterError::Validation(format!(
                        "line {line}: binarize is on but sample has no raw_metrics"
                    ))
                })?;
                let mut labels = vec![0.0; models.len()];
                for (id, &mi) in &roster {
                    let f = raw.get(*id).ok_or_else(|| {
                        RouterError::Validation(format!(
                            "line {line}: raw_metrics missing model {id}"
                        ))
                    })?;
                    labels[mi] = if *f > eta { 1.0 } else { 0.0 };
                }
                if let Some(given) = &rec.labels {
                    check_keys(given, &roster, "labels", line, source)?;
                    for (id, v) in given {
                        if labels[roster[id.as_str()]] != *v {
                            return Err(RouterError::Validation(format!(
                                "line {line}: label for {id} disagrees with thresholded raw metric"
                            )));
                        }
                    }
                }
                labels
            } else {
                let given = rec.labels.as_ref().ok_or_else(|| {
                    RouterError::Validation(format!("line {line}: sample has no labels"))
                })?;
                check_keys(given, &roster, "labels", line, source)?;
                let mut labels = vec![f64::NAN; models.len()];
                for (id, v) in given {
                    labels[roster[id.as_str()]] = match (cfg.label_min, cfg.label_max) {
                        (Some(lo), Some(hi)) => (v - lo) / (hi - lo),
                        _ => *v,
                    };
                }
                if let Some(id) = roster.iter().find(|(_, &i)| labels[i].is_nan()).map(|(id, _)| id) {
                    return Err(RouterError::Validation(format!(
                        "line {line}: labels missing model {id}"
                    )));
                }
                labels
            };
            if let Some((i, v)) = labels
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(RouterError::Validation(format!(
                    "line {line}: label {v} for model {} outside [0, 1]",
                    models[i].model_id
                )));
            }

            samples.push(EmbeddedSample {
                sample_id: rec.sample_id,
                task_id: rec.task_id,
                embedding,
                labels,
                raw_metrics: rec.raw_metrics,
                ll_scores: rec.ll,
            });
        }

        let all_binary = samples
            .iter()
            .all(|s| s.labels.iter().all(|&v| v == 0.0 || v == 1.0));
        let label_mode = match cfg.label_mode {
            Some(mode) => mode,
            None if cfg.binarize => LabelMode::Binary,
            None if cfg.label_min.is_some() => LabelMode::Continuous,
            None if all_binary => LabelMode::Binary,
            None => LabelMode::Continuous,
        };
        if label_mode == LabelMode::Binary && !all_binary {
            return Err(RouterError::Validation(
                "binary store has labels outside {0, 1}".into(),
            ));
        }

        // Thresholds, when declared, must agree with binary labels wherever a
        // raw metric is present.
        if let (LabelMode::Binary, Some(th)) = (label_mode, &cfg.thresholds) {
            for s in &samples {
                let (Some(eta), Some(raw)) = (th.get(&s.task_id), &s.raw_metrics) else {
                    continue;
                };
                for (id, f) in raw {
                    let y = s.labels[roster[id.as_str()]];
                    if (y == 1.0) != (*f > *eta) {
                        return Err(RouterError::Validation(format!(
                            "sample {}/{}: label {y} for {id} inconsistent with raw metric {f} and threshold {eta}",
                            s.task_id, s.sample_id
                        )));
                    }
                }
            }
        }

        samples.sort_by(|a, b| {
            a.task_id
                .cmp(&b.task_id)
                .then_with(|| a.sample_id.cmp(&b.sample_id))
        });
        for w in samples.windows(2) {
            if w[0].task_id == w[1].task_id && w[0].sample_id == w[1].sample_id {
                return Err(RouterError::Validation(format!(
                    "duplicate sample ({}, {})",
                    w[0].task_id, w[0].sample_id
                )));
            }
        }

        let mut tasks: Vec<TaskDataset> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            match tasks.last_mut() {
                Some(t) if t.task_id == s.task_id => t.samples.end = i + 1,
                _ => tasks.push(TaskDataset {
                    task_id: s.task_id.clone(),
                    samples: i..i + 1,
                }),
            }
        }

        Ok(BenchmarkStore {
            dimension,
            models,
            tasks,
            samples,
            label_mode,
            thresholds: cfg.thresholds.clone(),
        })
    }

    /// Write the store as a directory holding `samples.jsonl`, `models.jsonl`
    /// and a `store.json` manifest. Floats use 17 significant digits, so
    /// [`BenchmarkStore::load_dir`] reproduces the store exactly.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| RouterError::io(dir, e))?;

        let manifest = Manifest {
            dimension: self.dimension,
            label_mode: self.label_mode,
            thresholds: self.thresholds.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, jsonfmt::to_string(&manifest)? + "\n")
            .map_err(|e| RouterError::io(&path, e))?;

        let path = dir.join(MODELS_FILE);
        write_jsonl(&path, self.models.iter())?;

        let path = dir.join(SAMPLES_FILE);
        write_jsonl(&path, self.samples.iter().map(|s| self.to_record(s)))?;
        Ok(())
    }

    fn to_record(&self, s: &EmbeddedSample) -> SampleRecord {
        SampleRecord {
            task_id: s.task_id.clone(),
            sample_id: s.sample_id.clone(),
            embedding: s.embedding.clone(),
            labels: Some(
                self.models
                    .iter()
                    .zip(&s.labels)
                    .map(|(m, &v)| (m.model_id.clone(), v))
                    .collect(),
            ),
            raw_metrics: s.raw_metrics.clone(),
            ll: s.ll_scores.clone(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn tasks(&self) -> &[TaskDataset] {
        &self.tasks
    }

    pub fn samples(&self) -> &[EmbeddedSample] {
        &self.samples
    }

    pub fn sample(&self, idx: SampleRef) -> &EmbeddedSample {
        &self.samples[idx]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_mode(&self) -> LabelMode {
        self.label_mode
    }

    pub fn thresholds(&self) -> Option<&BTreeMap<String, f64>> {
        self.thresholds.as_ref()
    }

    pub fn label(&self, idx: SampleRef, model: usize) -> f64 {
        self.samples[idx].labels[model]
    }

    pub fn model_index(&self, model_id: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.model_id == model_id)
            .ok_or_else(|| RouterError::not_found("model", model_id))
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .binary_search_by(|t| t.task_id.as_str().cmp(task_id))
            .map_err(|_| RouterError::not_found("task", task_id))
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskDataset> {
        Ok(&self.tasks[self.task_index(task_id)?])
    }

    /// Index of the task containing sample `idx`.
    pub fn task_of(&self, idx: SampleRef) -> usize {
        self.tasks.partition_point(|t| t.samples.end <= idx)
    }

    pub fn require_binary(&self, what: &str) -> Result<()> {
        match self.label_mode {
            LabelMode::Binary => Ok(()),
            LabelMode::Continuous => Err(RouterError::Mode(format!(
                "{what} requires binary labels; store is continuous"
            ))),
        }
    }

    /// Check the dimension of `query` and scale it to unit norm.
    pub fn normalize_query(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dimension {
            return Err(RouterError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RouterError::Domain("query has non-finite components".into()));
        }
        let norm = l2_norm(query);
        if norm == 0.0 || !norm.is_finite() {
            return Err(RouterError::Domain("query has zero norm".into()));
        }
        Ok(query.iter().map(|v| v / norm).collect())
    }

    /// All samples outside the held-out task (`𝒟₋d`); the full store for an
    /// external task.
    pub fn dataset_complement(&self, held_out: HeldOut<'_>) -> Result<Vec<SampleRef>> {
        match held_out {
            HeldOut::External => Ok((0..self.samples.len()).collect()),
            HeldOut::Task(id) => {
                let range = self.task(id)?.sample_refs();
                Ok((0..range.start).chain(range.end..self.samples.len()).collect())
            }
        }
    }

    /// Exact k nearest neighbors of `query` by cosine distance, optionally
    /// leaving one task out. Returns `min(k, available)` neighbors sorted by
    /// ascending distance, ties broken by `(task_id, sample_id)`.
    pub fn knn_query(
        &self,
        query: &[f64],
        k: usize,
        exclude_task: Option<&str>,
    ) -> Result<Vec<Neighbor>> {
        let held_out = match exclude_task {
            Some(id) => HeldOut::Task(id),
            None => HeldOut::External,
        };
        self.knn_with_extras(query, k, held_out, &[])
    }

    /// kNN over `complement(held_out) ∪ extras`. `extras` are store indices,
    /// typically drawn from the held-out task itself.
    pub fn knn_with_extras(
        &self,
        query: &[f64],
        k: usize,
        held_out: HeldOut<'_>,
        extras: &[SampleRef],
    ) -> Result<Vec<Neighbor>> {
        let q = self.normalize_query(query)?;
        self.knn_unit(&q, k, held_out, extras)
    }

    /// As [`BenchmarkStore::knn_with_extras`] for a query that is already unit
    /// norm (for example a stored embedding).
    pub(crate) fn knn_unit(
        &self,
        q: &[f64],
        k: usize,
        held_out: HeldOut<'_>,
        extras: &[SampleRef],
    ) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(RouterError::Domain("k must be at least 1".into()));
        }
        let excluded = match held_out {
            HeldOut::Task(id) => self.task(id)?.sample_refs(),
            HeldOut::External => 0..0,
        };
        let mut extra_set: BTreeSet<SampleRef> = BTreeSet::new();
        for &e in extras {
            if e >= self.samples.len() {
                return Err(RouterError::not_found("sample index", e.to_string()));
            }
            if excluded.contains(&e) {
                extra_set.insert(e);
            }
        }
        let cands: Vec<Neighbor> = (0..self.samples.len())
            .filter(|i| !excluded.contains(i))
            .chain(extra_set)
            .map(|i| Neighbor {
                sample: i,
                distance: cosine_distance(q, &self.samples[i].embedding),
            })
            .collect();
        if cands.is_empty() {
            return Err(RouterError::EmptyStore(
                "no reference samples remain after exclusion".into(),
            ));
        }
        Ok(select_smallest(cands, k))
    }

    /// Exact kNN of a unit-norm query among an arbitrary list of samples.
    pub fn knn_among(&self, q: &[f64], k: usize, refs: &[SampleRef]) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(RouterError::Domain("k must be at least 1".into()));
        }
        if refs.is_empty() {
            return Err(RouterError::EmptyStore("reference list is empty".into()));
        }
        let cands = refs
            .iter()
            .map(|&i| Neighbor {
                sample: i,
                distance: cosine_distance(q, &self.samples[i].embedding),
            })
            .collect();
        Ok(select_smallest(cands, k))
    }

    /// Human-readable summary used by the `validate` subcommand.
    pub fn summary(&self) -> String {
        format!(
            "tasks={} models={} samples={} dimension={} labels={}",
            self.tasks.len(),
            self.models.len(),
            self.samples.len(),
            self.dimension,
            match self.label_mode {
                LabelMode::Binary => "binary",
                LabelMode::Continuous => "continuous",
            }
        )
    }
}

fn check_keys(
    map: &BTreeMap<String, f64>,
    roster: &BTreeMap<&str, usize>,
    kind: &str,
    line: usize,
    _source: &Path,
) -> Result<()> {
    if let Some(id) = map.keys().find(|k| !roster.contains_key(k.as_str())) {
        return Err(RouterError::Validation(format!(
            "line {line}: {kind} references unknown model_id {id}"
        )));
    }
    Ok(())
}

fn validate_models(mut models: Vec<ModelRecord>) -> Result<Vec<ModelRecord>> {
    if models.is_empty() {
        return Err(RouterError::Validation("model roster is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for m in &mut models {
        if !seen.insert(m.model_id.clone()) {
            return Err(RouterError::Validation(format!(
                "duplicate model_id {}",
                m.model_id
            )));
        }
        if !m.n_params.is_finite() || m.n_params <= 0.0 {
            return Err(RouterError::Validation(format!(
                "model {} has non-positive parameter count {}",
                m.model_id, m.n_params
            )));
        }
        if m.display_name.is_empty() {
            m.display_name = m.model_id.clone();
        }
    }
    Ok(models)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| RouterError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RouterError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| RouterError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn read_samples(path: &Path) -> Result<Vec<(usize, SampleRecord)>> {
    read_lines(path)
}

pub fn read_models(path: &Path) -> Result<Vec<ModelRecord>> {
    Ok(read_lines(path)?.into_iter().map(|(_, m)| m).collect())
}

fn write_jsonl<T: Serialize>(path: &PathBuf, items: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| RouterError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        jsonfmt::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| RouterError::io(path, e))?;
    }
    w.flush().map_err(|e| RouterError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(id: &str, p: f64) -> ModelRecord {
        ModelRecord {
            model_id: id.into(),
            n_params: p,
            display_name: String::new(),
        }
    }

    fn rec(task: &str, id: &str, emb: Vec<f64>, labels: &[(&str, f64)]) -> SampleRecord {
        SampleRecord {
            task_id: task.into(),
            sample_id: id.into(),
            embedding: emb,
            labels: Some(labels.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            raw_metrics: None,
            ll: None,
        }
    }

    fn build(records: Vec<SampleRecord>, cfg: &IngestConfig) -> Result<BenchmarkStore> {
        BenchmarkStore::from_records(
            vec![model("m1", 7.0)],
            records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(),
            cfg,
            Path::new("mem"),
        )
    }

    fn five_sample_store() -> BenchmarkStore {
        let recs = vec![
            rec("A", "a1", vec![1.0, 0.0, 0.0], &[("m1", 1.0)]),
            rec("A", "a2", vec![0.0, 1.0, 0.0], &[("m1", 0.0)]),
            rec("A", "a3", vec![0.0, 0.0, 1.0], &[("m1", 1.0)]),
            rec("B", "b1", vec![1.0, 1.0, 0.0], &[("m1", 0.0)]),
            rec("B", "b2", vec![0.0, 1.0, 1.0], &[("m1", 1.0)]),
        ];
        build(recs, &IngestConfig::default()).unwrap()
    }

    #[test]
    fn loads_two_samples() {
        let recs = vec![
            rec("t", "1", vec![1.0, 2.0, 3.0], &[("m1", 1.0)]),
            rec("t", "2", vec![3.0, 2.0, 1.0], &[("m1", 0.0)]),
        ];
        let store = build(recs, &IngestConfig::default()).unwrap();
        assert_eq!(store.tasks().len(), 1);
        assert_eq!(store.models().len(), 1);
        assert_eq!(store.len(), 2);
        assert_eq!(store.label_mode(), LabelMode::Binary);
        let n = l2_norm(&store.sample(0).embedding);
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let cfg = IngestConfig {
            dimension: Some(3),
            ..Default::default()
        };
        let err = build(vec![rec("t", "1", vec![1.0, 0.0, 0.0, 1.0], &[("m1", 1.0)])], &cfg)
            .unwrap_err();
        match err {
            RouterError::Schema { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = build(vec![rec("t", "1", vec![1.0, 0.0], &[("m1", 1.5)])], &Default::default())
            .unwrap_err();
        assert!(matches!(err, RouterError::Validation(_)));
    }

    #[test]
    fn unknown_model_rejected() {
        let err = build(
            vec![rec("t", "1", vec![1.0, 0.0], &[("m1", 1.0), ("zz", 0.0)])],
            &Default::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown model_id zz"), "{err}");
    }

    #[test]
    fn zero_norm_rejected() {
        let err = build(vec![rec("t", "1", vec![0.0, 0.0], &[("m1", 1.0)])], &Default::default())
            .unwrap_err();
        assert!(matches!(err, RouterError::Schema { .. }));
    }

    #[test]
    fn duplicates_rejected() {
        let err = build(
            vec![
                rec("t", "1", vec![1.0, 0.0], &[("m1", 1.0)]),
                rec("t", "1", vec![0.0, 1.0], &[("m1", 1.0)]),
            ],
            &Default::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn binarize_thresholds_raw_metrics() {
        let mut r = rec("t", "1", vec![1.0, 0.0], &[]);
        r.labels = None;
        r.raw_metrics = Some([("m1".to_string(), 0.7)].into());
        let cfg = IngestConfig {
            binarize: true,
            thresholds: Some([("t".to_string(), 0.5)].into()),
            ..Default::default()
        };
        let store = build(vec![r.clone()], &cfg).unwrap();
        assert_eq!(store.label(0, 0), 1.0);

        r.raw_metrics = Some([("m1".to_string(), 0.5)].into());
        let store = build(vec![r], &cfg).unwrap();
        assert_eq!(store.label(0, 0), 0.0, "strict inequality");
    }

    #[test]
    fn thresholds_must_agree_with_labels() {
        let mut r = rec("t", "1", vec![1.0, 0.0], &[("m1", 0.0)]);
        r.raw_metrics = Some([("m1".to_string(), 0.9)].into());
        let cfg = IngestConfig {
            thresholds: Some([("t".to_string(), 0.5)].into()),
            ..Default::default()
        };
        assert!(build(vec![r], &cfg).is_err());
    }

    #[test]
    fn continuous_rescaling() {
        let recs = vec![
            rec("t", "1", vec![1.0, 0.0], &[("m1", -1.0)]),
            rec("t", "2", vec![0.0, 1.0], &[("m1", 0.5)]),
        ];
        let cfg = IngestConfig {
            label_min: Some(-1.0),
            label_max: Some(1.0),
            ..Default::default()
        };
        let store = build(recs, &cfg).unwrap();
        assert_eq!(store.label_mode(), LabelMode::Continuous);
        assert_eq!(store.label(0, 0), 0.0);
        assert_eq!(store.label(1, 0), 0.75);
    }

    #[test]
    fn complement_examples() {
        let store = five_sample_store();
        let ids = |v: Vec<SampleRef>| -> Vec<String> {
            v.into_iter().map(|i| store.sample(i).sample_id.clone()).collect()
        };
        assert_eq!(ids(store.dataset_complement(HeldOut::Task("A")).unwrap()), ["b1", "b2"]);
        assert_eq!(ids(store.dataset_complement(HeldOut::Task("B")).unwrap()), ["a1", "a2", "a3"]);
        assert_eq!(store.dataset_complement(HeldOut::External).unwrap().len(), 5);
        assert!(matches!(
            store.dataset_complement(HeldOut::Task("C")),
            Err(RouterError::NotFound { .. })
        ));
    }

    #[test]
    fn knn_identity_and_orthogonal() {
        let store = five_sample_store();
        let nn = store.knn_query(&[1.0, 0.0, 0.0], 1, None).unwrap();
        assert_eq!(nn[0].sample, 0);
        assert_eq!(nn[0].distance, 0.0);

        let nn = store.knn_query(&[0.0, 1.0, 0.0], 5, None).unwrap();
        let a1 = nn.iter().find(|n| n.sample == 0).unwrap();
        assert_eq!(a1.distance, 1.0);
    }

    #[test]
    fn knn_ties_break_by_ids() {
        let store = five_sample_store();
        // a1 and a3 are both orthogonal to e2, so they tie at distance 1.
        let nn = store.knn_query(&[0.0, 1.0, 0.0], 5, None).unwrap();
        let order: Vec<_> = nn.iter().map(|n| n.sample).collect();
        let pos = |i| order.iter().position(|&x| x == i).unwrap();
        assert!(pos(0) < pos(2));
    }

    #[test]
    fn knn_exclusion_and_empty() {
        let store = five_sample_store();
        let nn = store.knn_query(&[1.0, 0.0, 0.0], 10, Some("A")).unwrap();
        assert_eq!(nn.len(), 2);
        assert!(nn.iter().all(|n| store.sample(n.sample).task_id == "B"));

        let one = build(
            vec![rec("t", "1", vec![1.0, 0.0], &[("m1", 1.0)])],
            &Default::default(),
        )
        .unwrap();
        assert!(matches!(
            one.knn_query(&[1.0, 0.0], 1, Some("t")),
            Err(RouterError::EmptyStore(_))
        ));
        assert!(matches!(
            one.knn_query(&[1.0, 0.0, 0.0], 1, None),
            Err(RouterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn task_of_matches_ranges() {
        let store = five_sample_store();
        let tasks: Vec<usize> = (0..5).map(|i| store.task_of(i)).collect();
        assert_eq!(tasks, [0, 0, 0, 1, 1]);
    }
}
