#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use benchroute::store::{BenchmarkStore, IngestConfig, ModelRecord, SampleRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn models(n: usize) -> Vec<ModelRecord> {
    (0..n)
        .map(|m| ModelRecord {
            model_id: format!("m{m}"),
            n_params: [7.0, 13.0, 70.0, 3.0, 40.0][m % 5] + m as f64 / 100.0,
            display_name: format!("m{m}"),
        })
        .collect()
}

/// Random binary store. With `coarse`, embedding components are small
/// integers so exact distance ties (and duplicate points) are common.
pub fn random_store(seed: u64, n_tasks: usize, per_task: usize, dim: usize, n_models: usize, coarse: bool) -> BenchmarkStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recs = Vec::new();
    for t in 0..n_tasks {
        for s in 0..per_task {
            let mut emb: Vec<f64> = (0..dim)
                .map(|_| {
                    if coarse {
                        rng.random_range(-1i32..=2) as f64
                    } else {
                        rng.random::<f64>() * 2.0 - 1.0
                    }
                })
                .collect();
            if emb.iter().all(|x| *x == 0.0) {
                emb[0] = 1.0;
            }
            let labels: BTreeMap<String, f64> = (0..n_models)
                .map(|m| (format!("m{m}"), (rng.random::<f64>() < 0.3 + 0.1 * m as f64) as u8 as f64))
                .collect();
            recs.push(SampleRecord {
                // Reversed task ids and scrambled sample ids so that store
                // order differs from insertion order.
                task_id: format!("t{:02}", n_tasks - 1 - t),
                sample_id: format!("s{:03}", (s * 37) % 997),
                embedding: emb,
                labels: Some(labels),
                raw_metrics: None,
                ll: None,
            });
        }
    }
    let recs = recs.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
    BenchmarkStore::from_records(models(n_models), recs, &IngestConfig::default(), Path::new("random")).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Plain-loop cosine distance between unit vectors.
pub fn brute_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    for i in 0..a.len() {
        d += a[i] * b[i];
    }
    (1.0 - d).clamp(0.0, 2.0)
}

/// Exhaustive kNN: sort every reference by (distance, task_id, sample_id).
/// Returns store indices.
pub fn brute_knn(store: &BenchmarkStore, q_unit: &[f64], k: usize, refs: &[usize]) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, &str, &str, usize)> = refs
        .iter()
        .map(|&i| {
            let s = store.sample(i);
            (brute_distance(q_unit, &s.embedding), s.task_id.as_str(), s.sample_id.as_str(), i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(b.2)));
    all.into_iter().take(k).map(|(d, _, _, i)| (i, d)).collect()
}

pub fn complement(store: &BenchmarkStore, task: Option<&str>) -> Vec<usize> {
    (0..store.len())
        .filter(|&i| task.is_none_or(|t| store.sample(i).task_id != t))
        .collect()
}
