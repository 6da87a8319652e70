//! kNN correctness predictors: `g_m(x)` is the mean label of model `m` over
//! the `k` nearest reference samples of `x`; the thresholded predictor is
//! `g_m(x) > t`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::store::{BenchmarkStore, HeldOut, Neighbor, SampleRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub k: usize,
    pub threshold: f64,
    pub exclude_task: Option<String>,
    /// Store indices added to the reference set even though their task is
    /// excluded (α-mixing).
    #[serde(skip)]
    pub extra_samples: Vec<SampleRef>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            k: 5,
            threshold: 0.5,
            exclude_task: None,
            extra_samples: Vec::new(),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(RouterError::Domain("k must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(RouterError::Domain(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    fn held_out(&self) -> HeldOut<'_> {
        match &self.exclude_task {
            Some(t) => HeldOut::Task(t),
            None => HeldOut::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessPrediction {
    pub g: f64,
    pub g_bar: bool,
    pub neighbor_ids: Vec<SampleRef>,
    /// How many of the requested `k` neighbors were unavailable.
    pub shortfall: usize,
}

/// Mean label of `model` over `neighbors`.
pub fn mean_label(store: &BenchmarkStore, model: usize, neighbors: &[Neighbor]) -> f64 {
    let sum: f64 = neighbors.iter().map(|n| store.label(n.sample, model)).sum();
    sum / neighbors.len() as f64
}

pub(crate) fn prediction_from(
    store: &BenchmarkStore,
    model: usize,
    neighbors: &[Neighbor],
    k: usize,
    threshold: f64,
) -> CorrectnessPrediction {
    let g = mean_label(store, model, neighbors);
    CorrectnessPrediction {
        g,
        g_bar: g > threshold,
        neighbor_ids: neighbors.iter().map(|n| n.sample).collect(),
        shortfall: k.saturating_sub(neighbors.len()),
    }
}

fn reference_neighbors(
    store: &BenchmarkStore,
    query: &[f64],
    cfg: &PredictorConfig,
) -> Result<Vec<Neighbor>> {
    cfg.validate()?;
    let nn = store.knn_with_extras(query, cfg.k, cfg.held_out(), &cfg.extra_samples)?;
    if nn.len() < cfg.k {
        log::debug!("kNN shortfall: wanted {}, found {}", cfg.k, nn.len());
    }
    Ok(nn)
}

/// Predict the correctness of `model_id` on `query`.
pub fn predict(
    store: &BenchmarkStore,
    model_id: &str,
    query: &[f64],
    cfg: &PredictorConfig,
) -> Result<CorrectnessPrediction> {
    let model = store.model_index(model_id)?;
    let nn = reference_neighbors(store, query, cfg)?;
    Ok(prediction_from(store, model, &nn, cfg.k, cfg.threshold))
}

/// Predictions for every roster model, sharing one neighbor search.
pub fn predict_all(
    store: &BenchmarkStore,
    query: &[f64],
    cfg: &PredictorConfig,
) -> Result<Vec<CorrectnessPrediction>> {
    let nn = reference_neighbors(store, query, cfg)?;
    Ok((0..store.models().len())
        .map(|m| prediction_from(store, m, &nn, cfg.k, cfg.threshold))
        .collect())
}

/// Fraction of `eval_samples` (store indices) on which the thresholded
/// predictor agrees with the stored binary label.
pub fn predictor_accuracy(
    store: &BenchmarkStore,
    model_id: &str,
    eval_samples: &[SampleRef],
    cfg: &PredictorConfig,
) -> Result<f64> {
    store.require_binary("predictor accuracy")?;
    if eval_samples.is_empty() {
        return Err(RouterError::Domain("evaluation set is empty".into()));
    }
    let model = store.model_index(model_id)?;
    cfg.validate()?;
    let mut correct = 0usize;
    for &i in eval_samples {
        let sample = store.sample(i);
        let nn = store.knn_unit(&sample.embedding, cfg.k, cfg.held_out(), &cfg.extra_samples)?;
        let pred = prediction_from(store, model, &nn, cfg.k, cfg.threshold);
        if pred.g_bar == (sample.labels[model] == 1.0) {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_samples.len() as f64)
}

/// A task split into samples moved into the reference set and the remainder
/// used for evaluation. Both lists are sorted store indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedReference {
    pub extras: Vec<SampleRef>,
    pub eval: Vec<SampleRef>,
}

/// `round(min(alpha * n, cap))`, rounding halves up.
pub fn mixed_count(n: usize, alpha: f64, cap: usize) -> usize {
    let raw = (alpha * n as f64).min(cap as f64);
    ((raw + 0.5).floor() as usize).min(n)
}

/// Move `round(min(alpha * n, cap))` uniformly chosen samples of `task_id`
/// into the reference set. Deterministic in `rng_seed`.
pub fn build_mixed_reference(
    store: &BenchmarkStore,
    task_id: &str,
    alpha: f64,
    cap: usize,
    rng_seed: u64,
) -> Result<MixedReference> {
    let task = store.task(task_id)?;
    split_task(task.sample_refs().collect(), alpha, cap, rng_seed)
}

pub(crate) fn split_task(
    members: Vec<SampleRef>,
    alpha: f64,
    cap: usize,
    rng_seed: u64,
) -> Result<MixedReference> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RouterError::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let n = members.len();
    let count = mixed_count(n, alpha, cap);
    if count == 0 {
        return Ok(MixedReference {
            extras: Vec::new(),
            eval: members,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = vec![false; n];
    for i in index::sample(&mut rng, n, count) {
        picked[i] = true;
    }
    let (extras, eval): (Vec<_>, Vec<_>) = members
        .into_iter()
        .zip(picked)
        .partition(|(_, p)| *p);
    Ok(MixedReference {
        extras: extras.into_iter().map(|(i, _)| i).collect(),
        eval: eval.into_iter().map(|(i, _)| i).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{IngestConfig, ModelRecord, SampleRecord};
    use std::path::Path;

    fn store_from(points: &[(&str, [f64; 2], f64)]) -> BenchmarkStore {
        let recs = points
            .iter()
            .enumerate()
            .map(|(i, (t, e, y))| {
                (
                    i + 1,
                    SampleRecord {
                        task_id: t.to_string(),
                        sample_id: format!("{i:03}"),
                        embedding: e.to_vec(),
                        labels: Some([("m".to_string(), *y)].into()),
                        raw_metrics: None,
                        ll: None,
                    },
                )
            })
            .collect();
        let models = vec![ModelRecord {
            model_id: "m".into(),
            n_params: 1.0,
            display_name: String::new(),
        }];
        BenchmarkStore::from_records(models, recs, &IngestConfig::default(), Path::new("mem"))
            .unwrap()
    }

    fn fan(labels: &[f64]) -> BenchmarkStore {
        // Points at increasing angles from the x axis.
        let pts: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let a = 0.1 * (i as f64 + 1.0);
                ("A", [a.cos(), a.sin()], y)
            })
            .collect();
        store_from(&pts)
    }

    #[test]
    fn k1_identity() {
        let store = fan(&[1.0, 0.0, 0.0]);
        let q = store.sample(0).embedding.clone();
        let cfg = PredictorConfig {
            k: 1,
            ..Default::default()
        };
        let p = predict(&store, "m", &q, &cfg).unwrap();
        assert_eq!(p.g, 1.0);
        assert!(p.g_bar);
        assert_eq!(p.neighbor_ids, vec![0]);
    }

    #[test]
    fn k5_mean_of_labels() {
        let store = fan(&[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let p = predict(&store, "m", &[1.0, 0.0], &PredictorConfig::default()).unwrap();
        assert_eq!(p.neighbor_ids, vec![0, 1, 2, 3, 4]);
        assert!((p.g - 0.6).abs() < 1e-15);
        assert!(p.g_bar);
    }

    #[test]
    fn g_at_threshold_maps_to_zero() {
        let store = fan(&[1.0, 0.0]);
        let cfg = PredictorConfig {
            k: 2,
            ..Default::default()
        };
        let p = predict(&store, "m", &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(p.g, 0.5);
        assert!(!p.g_bar);
    }

    #[test]
    fn shortfall_recorded() {
        let store = fan(&[1.0, 0.0]);
        let p = predict(&store, "m", &[1.0, 0.0], &PredictorConfig::default()).unwrap();
        assert_eq!(p.shortfall, 3);
        assert_eq!(p.neighbor_ids.len(), 2);
    }

    #[test]
    fn errors() {
        let store = fan(&[1.0, 0.0]);
        let cfg = PredictorConfig::default();
        assert!(matches!(
            predict(&store, "nope", &[1.0, 0.0], &cfg),
            Err(RouterError::NotFound { .. })
        ));
        let cfg = PredictorConfig {
            exclude_task: Some("A".into()),
            ..Default::default()
        };
        assert!(matches!(
            predict(&store, "m", &[1.0, 0.0], &cfg),
            Err(RouterError::EmptyStore(_))
        ));
        let bad = PredictorConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(predict(&store, "m", &[1.0, 0.0], &bad).is_err());
    }

    #[test]
    fn accuracy_counts_agreement() {
        // Five eval points in task B, each adjacent to a reference point in A.
        // Four references carry the same label as their B twin; one does not.
        let mut pts = Vec::new();
        let ys_a = [1.0, 0.0, 1.0, 1.0, 0.0];
        let ys_b = [1.0, 0.0, 1.0, 1.0, 1.0];
        for i in 0..5 {
            let a = 0.3 * i as f64;
            pts.push(("A", [a.cos(), a.sin()], ys_a[i]));
            let b = a + 0.01;
            pts.push(("B", [b.cos(), b.sin()], ys_b[i]));
        }
        let store = store_from(&pts);
        let cfg = PredictorConfig {
            k: 1,
            exclude_task: Some("B".into()),
            ..Default::default()
        };
        let eval: Vec<_> = store.task("B").unwrap().sample_refs().collect();
        let acc = predictor_accuracy(&store, "m", &eval, &cfg).unwrap();
        assert!((acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn memorization_gives_perfect_accuracy() {
        let store = fan(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let cfg = PredictorConfig {
            k: 1,
            ..Default::default()
        };
        let all: Vec<_> = (0..store.len()).collect();
        assert_eq!(predictor_accuracy(&store, "m", &all, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn mixed_counts() {
        assert_eq!(mixed_count(1000, 0.1, 50), 50);
        assert_eq!(mixed_count(40, 0.05, 50), 2);
        assert_eq!(mixed_count(40, 0.0, 50), 0);
        assert_eq!(mixed_count(10, 0.25, 50), 3); // 2.5 rounds up
    }

    #[test]
    fn mixed_reference_partitions() {
        let members: Vec<SampleRef> = (100..140).collect();
        let r = split_task(members.clone(), 0.05, 50, 9).unwrap();
        assert_eq!(r.extras.len(), 2);
        let mut all = r.extras.clone();
        all.extend(&r.eval);
        all.sort();
        assert_eq!(all, members);
        assert_eq!(r, split_task(members.clone(), 0.05, 50, 9).unwrap());

        let r0 = split_task(members.clone(), 0.0, 50, 9).unwrap();
        assert!(r0.extras.is_empty());
        assert_eq!(r0.eval, members);

        assert!(split_task(members, 1.5, 50, 0).is_err());
    }
}
