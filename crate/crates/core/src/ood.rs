//! Out-of-distribution confidence: a one-dimensional task descriptor `u(d)`
//! (mean distance of a task's inputs to their κ nearest reference points), a
//! replayed training set of `(u, p)` pairs where `p` is the accuracy of the
//! thresholded kNN predictor on a held-out task, and a Gaussian kernel
//! smoother mapping `u` to an accuracy estimate.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::par::{self, derive_seed, Execution};
use crate::predictor::{mixed_count, split_task, PredictorConfig};
use crate::replay::Replay;
use crate::store::{BenchmarkStore, HeldOut, SampleRef};

pub const DEFAULT_KAPPA: usize = 19;
pub const DEFAULT_SIGMA: f64 = 0.09;
pub const DEFAULT_MIX_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    pub kappa: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig {
            kappa: DEFAULT_KAPPA,
        }
    }
}

/// Mean cosine distance from `query` to its κ nearest reference points.
pub fn point_distance(
    store: &BenchmarkStore,
    query: &[f64],
    kappa: usize,
    held_out: HeldOut<'_>,
    extras: &[SampleRef],
) -> Result<f64> {
    let nn = store.knn_with_extras(query, kappa, held_out, extras)?;
    Ok(nn.iter().map(|n| n.distance).sum::<f64>() / nn.len() as f64)
}

/// One-sided Chamfer-style distance from a task's inputs to the reference
/// set `complement(held_out)`.
pub fn dataset_distance(
    store: &BenchmarkStore,
    inputs: &[Vec<f64>],
    cfg: &DistanceConfig,
    held_out: HeldOut<'_>,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(RouterError::Domain("task has no inputs".into()));
    }
    if cfg.kappa == 0 {
        return Err(RouterError::Domain("kappa must be at least 1".into()));
    }
    let mut total = 0.0;
    for x in inputs {
        total += point_distance(store, x, cfg.kappa, held_out, &[])?;
    }
    Ok(total / inputs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceAccuracyPair {
    pub model_id: String,
    pub u: f64,
    pub p: f64,
    pub source_task: String,
    pub alpha: f64,
    #[serde(rename = "repeat")]
    pub repeat_index: usize,
}

/// `n` evenly spaced values from 0 to `max` inclusive.
pub fn alpha_grid(n: usize, max: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub alphas: Vec<f64>,
    pub repeats: usize,
    pub cap: usize,
    pub kappa: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            alphas: alpha_grid(15, 0.2),
            repeats: 10,
            cap: DEFAULT_MIX_CAP,
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<DistanceAccuracyPair>,
    pub warnings: Vec<String>,
}

/// Replay held-out benchmark tasks to collect `(u, p)` pairs for every model.
pub fn generate_pairs(
    store: &BenchmarkStore,
    predictor: &PredictorConfig,
    cfg: &PairConfig,
    exec: Execution,
) -> Result<PairSet> {
    predictor.validate()?;
    let replay = Replay::new(store, predictor.k, cfg.kappa, predictor.threshold, exec)?;
    generate_pairs_with(&replay, &[], cfg, exec)
}

/// Pair replay over every task not in `outer_excluded`; those tasks are kept
/// out of every reference set as well.
pub(crate) fn generate_pairs_with(
    replay: &Replay<'_>,
    outer_excluded: &[usize],
    cfg: &PairConfig,
    exec: Execution,
) -> Result<PairSet> {
    let store = replay.store;
    store.require_binary("pair generation")?;
    if cfg.repeats == 0 || cfg.alphas.is_empty() {
        return Err(RouterError::Domain("need at least one alpha and one repeat".into()));
    }
    if let Some(a) = cfg.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(RouterError::Domain(format!("alpha {a} outside [0, 1]")));
    }
    let tasks: Vec<usize> = (0..store.tasks().len())
        .filter(|t| !outer_excluded.contains(t))
        .collect();
    if tasks.len() < 2 {
        return Err(RouterError::Domain(
            "pair generation needs at least two benchmark tasks".into(),
        ));
    }

    // Repeats of a zero-sized mix are identical; compute them once.
    let mut jobs = Vec::new();
    for &t in &tasks {
        let n = store.tasks()[t].len();
        for (a, &alpha) in cfg.alphas.iter().enumerate() {
            let reps = if mixed_count(n, alpha, cfg.cap) == 0 { 1 } else { cfg.repeats };
            for r in 0..reps {
                jobs.push((t, a, r));
            }
        }
    }

    let results = par::map_slice(exec, &jobs, |&(t, a, r)| {
        let task = &store.tasks()[t];
        let seed = derive_seed(cfg.seed, &[t as u64, a as u64, r as u64]);
        let split = split_task(task.sample_refs().collect(), cfg.alphas[a], cfg.cap, seed)?;
        if split.eval.is_empty() {
            return Ok(None);
        }
        let mut excluded = outer_excluded.to_vec();
        excluded.push(t);
        replay.evaluate(&excluded, &split.eval, &split.extras).map(Some)
    });

    let mut out = PairSet::default();
    for (&(t, a, r), res) in jobs.iter().zip(results) {
        let task_id = &store.tasks()[t].task_id;
        let alpha = cfg.alphas[a];
        let Some(ev) = res? else {
            let msg = format!("task {task_id} fully absorbed at alpha={alpha}; pair skipped");
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        };
        let n = store.tasks()[t].len();
        let copies = if mixed_count(n, alpha, cfg.cap) == 0 { cfg.repeats } else { 1 };
        for rep in 0..copies {
            for (m, model) in store.models().iter().enumerate() {
                out.pairs.push(DistanceAccuracyPair {
                    model_id: model.model_id.clone(),
                    u: ev.u,
                    p: ev.predictor_accuracy(m),
                    source_task: task_id.clone(),
                    alpha,
                    repeat_index: r + rep,
                });
            }
        }
    }
    Ok(out)
}

/// Nadaraya–Watson estimator with a Gaussian kernel, one pair set per model.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherModel {
    pub sigma: f64,
    pub pairs: BTreeMap<String, Vec<DistanceAccuracyPair>>,
}

impl SmootherModel {
    pub fn fit(pairs: impl IntoIterator<Item = DistanceAccuracyPair>, sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(RouterError::Domain(format!("sigma {sigma} must be positive")));
        }
        let mut by_model: BTreeMap<String, Vec<DistanceAccuracyPair>> = BTreeMap::new();
        for pair in pairs {
            if !pair.u.is_finite() || !(0.0..=1.0).contains(&pair.p) {
                return Err(RouterError::Validation(format!(
                    "invalid pair for {}: u={}, p={}",
                    pair.model_id, pair.u, pair.p
                )));
            }
            by_model.entry(pair.model_id.clone()).or_default().push(pair);
        }
        Ok(SmootherModel {
            sigma,
            pairs: by_model,
        })
    }

    /// Estimated predictor accuracy of `model_id` on a task at distance
    /// `u_query`.
    pub fn predict_p(&self, model_id: &str, u_query: f64) -> Result<f64> {
        let pairs = self
            .pairs
            .get(model_id)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| RouterError::NotFitted(model_id.to_string()))?;
        if !u_query.is_finite() {
            return Err(RouterError::Domain(format!("u={u_query} is not finite")));
        }
        let sq: Vec<f64> = pairs.iter().map(|z| (u_query - z.u).powi(2)).collect();
        let nearest = sq.iter().copied().fold(f64::INFINITY, f64::min);
        // Weights are taken relative to the nearest pair, which leaves the
        // ratio unchanged and keeps the denominator at least 1.
        let two_var = 2.0 * self.sigma * self.sigma;
        let mut num = 0.0;
        let mut den = 0.0;
        for (z, d) in pairs.iter().zip(&sq) {
            let w = (-(d - nearest) / two_var).exp();
            num += w * z.p;
            den += w;
        }
        let est = num / den;
        if est.is_finite() {
            let (lo, hi) = pairs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z.p), hi.max(z.p)));
            return Ok(est.clamp(lo, hi));
        }
        // All weights collapsed: use the nearest pairs.
        let close: Vec<f64> = pairs
            .iter()
            .zip(&sq)
            .filter(|(_, d)| **d == nearest)
            .map(|(z, _)| z.p)
            .collect();
        Ok(close.iter().sum::<f64>() / close.len() as f64)
    }

    /// Mean absolute error of [`SmootherModel::predict_p`] on `heldout`.
    pub fn mae(&self, heldout: &[DistanceAccuracyPair]) -> Result<f64> {
        if heldout.is_empty() {
            return Err(RouterError::Domain("no held-out pairs".into()));
        }
        let mut total = 0.0;
        for z in heldout {
            total += (self.predict_p(&z.model_id, z.u)? - z.p).abs();
        }
        Ok(total / heldout.len() as f64)
    }
}

pub fn smoother_mae(model: &SmootherModel, heldout: &[DistanceAccuracyPair]) -> Result<f64> {
    model.mae(heldout)
}

pub fn write_pairs_csv(path: &Path, pairs: &[DistanceAccuracyPair]) -> Result<()> {
    let file = File::create(path).map_err(|e| RouterError::io(path, e))?;
    write_pairs(file, pairs)
}

pub fn write_pairs<W: std::io::Write>(writer: W, pairs: &[DistanceAccuracyPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| RouterError::io("<csv>", e))?;
    Ok(())
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<DistanceAccuracyPair>> {
    let file = File::open(path).map_err(|e| RouterError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let pairs = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(u: f64, p: f64) -> DistanceAccuracyPair {
        DistanceAccuracyPair {
            model_id: "m".into(),
            u,
            p,
            source_task: "t".into(),
            alpha: 0.0,
            repeat_index: 0,
        }
    }

    #[test]
    fn single_pair_is_constant() {
        let s = SmootherModel::fit([pair(0.3, 0.8)], DEFAULT_SIGMA).unwrap();
        for u in [0.0, 0.3, 5.0, 1e6] {
            assert_eq!(s.predict_p("m", u).unwrap(), 0.8);
        }
    }

    #[test]
    fn worked_example() {
        let s = SmootherModel::fit([pair(0.1, 0.9), pair(0.5, 0.3)], 0.09).unwrap();
        let p = s.predict_p("m", 0.1).unwrap();
        let w = (-0.16f64 / (2.0 * 0.09 * 0.09)).exp();
        assert!((p - (0.9 + 0.3 * w) / (1.0 + w)).abs() < 1e-15);
        assert!((p - 0.89997).abs() < 1e-4, "{p}");
    }

    #[test]
    fn equidistant_query_averages() {
        let s = SmootherModel::fit([pair(0.2, 0.2), pair(0.4, 0.6)], 0.09).unwrap();
        assert!((s.predict_p("m", 0.3).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn far_query_uses_nearest_pair() {
        let s = SmootherModel::fit([pair(0.0, 0.2), pair(1.0, 0.6)], 1e-4).unwrap();
        assert_eq!(s.predict_p("m", 50.0).unwrap(), 0.6);
    }

    #[test]
    fn unfitted_model() {
        let s = SmootherModel::fit([pair(0.0, 0.2)], 0.1).unwrap();
        assert!(matches!(s.predict_p("other", 0.0), Err(RouterError::NotFitted(_))));
        assert!(SmootherModel::fit([pair(0.0, 0.2)], 0.0).is_err());
    }

    #[test]
    fn mae_examples() {
        let s = SmootherModel::fit([pair(0.3, 0.5)], 0.1).unwrap();
        assert_eq!(s.mae(&[pair(0.3, 0.5)]).unwrap(), 0.0);
        assert!((s.mae(&[pair(0.1, 0.7)]).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn alpha_grid_defaults() {
        let g = alpha_grid(15, 0.2);
        assert_eq!(g.len(), 15);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[14], 0.2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = vec![pair(0.123456789, 0.5), pair(1.0 / 3.0, 0.25)];
        write_pairs_csv(&path, &pairs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("model_id,u,p,source_task,alpha,repeat\n"));
        assert_eq!(read_pairs_csv(&path).unwrap(), pairs);
    }
}
