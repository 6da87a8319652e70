//! Per-task neighbor cache for replay-heavy workloads.
//!
//! Leave-one-task-out evaluation and distance/accuracy pair replay query the
//! same stored points against many different reference sets, each of the form
//! "all tasks except a few, plus some extra samples". For every sample and
//! every other task the cache keeps the `depth` nearest points of that task;
//! the top-k over any union of tasks is then a merge of those short lists.
//! Results are identical to an exhaustive scan with the same tie-break.

use crate::error::{Result, RouterError};
use crate::par::{self, Execution};
use crate::store::{cosine_distance, select_smallest, BenchmarkStore, Neighbor, SampleRef};

#[derive(Debug, Clone)]
pub struct NeighborCache {
    depth: usize,
    n_tasks: usize,
    /// `lists[i * n_tasks + t]`: nearest `depth` samples of task `t` to sample
    /// `i`; empty for `i`'s own task.
    lists: Vec<Vec<Neighbor>>,
}

impl NeighborCache {
    pub fn build(store: &BenchmarkStore, depth: usize, exec: Execution) -> Self {
        let n_tasks = store.tasks().len();
        let per_sample = par::map_range(exec, store.len(), |i| {
            let own = store.task_of(i);
            let q = &store.sample(i).embedding;
            store
                .tasks()
                .iter()
                .enumerate()
                .map(|(t, task)| {
                    if t == own {
                        return Vec::new();
                    }
                    let cands = task
                        .sample_refs()
                        .map(|j| Neighbor {
                            sample: j,
                            distance: cosine_distance(q, &store.sample(j).embedding),
                        })
                        .collect();
                    select_smallest(cands, depth)
                })
                .collect::<Vec<_>>()
        });
        NeighborCache {
            depth,
            n_tasks,
            lists: per_sample.into_iter().flatten().collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// The `k` nearest references of stored sample `i`, where the reference
    /// set is every task not in `excluded_tasks` plus `extras`. The sample's
    /// own task must be excluded.
    pub fn neighbors(
        &self,
        store: &BenchmarkStore,
        i: SampleRef,
        excluded_tasks: &[usize],
        extras: &[SampleRef],
        k: usize,
    ) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.depth {
            return Err(RouterError::Domain(format!(
                "k={k} outside cached depth 1..={}",
                self.depth
            )));
        }
        let own = store.task_of(i);
        debug_assert!(excluded_tasks.contains(&own));
        let q = &store.sample(i).embedding;
        let mut cands: Vec<Neighbor> = Vec::new();
        for t in 0..self.n_tasks {
            if t == own || excluded_tasks.contains(&t) {
                continue;
            }
            cands.extend_from_slice(&self.lists[i * self.n_tasks + t]);
        }
        for &e in extras {
            if e == i || !excluded_tasks.contains(&store.task_of(e)) {
                continue;
            }
            cands.push(Neighbor {
                sample: e,
                distance: cosine_distance(q, &store.sample(e).embedding),
            });
        }
        if cands.is_empty() {
            return Err(RouterError::EmptyStore(
                "no reference samples remain after exclusion".into(),
            ));
        }
        Ok(select_smallest(cands, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{HeldOut, IngestConfig, ModelRecord, SampleRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    fn random_store(seed: u64, n_tasks: usize, per_task: usize, dim: usize) -> BenchmarkStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for t in 0..n_tasks {
            for s in 0..per_task {
                let emb: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                recs.push((
                    recs.len() + 1,
                    SampleRecord {
                        task_id: format!("t{t}"),
                        sample_id: format!("s{s:03}"),
                        embedding: emb,
                        labels: Some([("m".to_string(), rng.random_range(0..2) as f64)].into()),
                        raw_metrics: None,
                        ll: None,
                    },
                ));
            }
        }
        let models = vec![ModelRecord {
            model_id: "m".into(),
            n_params: 1.0,
            display_name: String::new(),
        }];
        BenchmarkStore::from_records(models, recs, &IngestConfig::default(), Path::new("mem"))
            .unwrap()
    }

    fn exhaustive(
        store: &BenchmarkStore,
        i: SampleRef,
        excluded: &[usize],
        extras: &[SampleRef],
        k: usize,
    ) -> Vec<Neighbor> {
        let q = &store.sample(i).embedding;
        let cands = (0..store.len())
            .filter(|&j| j != i)
            .filter(|&j| !excluded.contains(&store.task_of(j)) || extras.contains(&j))
            .map(|j| Neighbor {
                sample: j,
                distance: cosine_distance(q, &store.sample(j).embedding),
            })
            .collect();
        select_smallest(cands, k)
    }

    #[test]
    fn cache_matches_exhaustive_scan() {
        let store = random_store(3, 5, 30, 4);
        let cache = NeighborCache::build(&store, 7, Execution::Parallel);
        for i in (0..store.len()).step_by(7) {
            let own = store.task_of(i);
            let other = (own + 2) % 5;
            let own_range = store.tasks()[own].sample_refs();
            let extras: Vec<_> = own_range.clone().step_by(4).collect();
            for excluded in [vec![own], vec![own, other]] {
                for k in [1, 3, 7] {
                    let got = cache.neighbors(&store, i, &excluded, &extras, k).unwrap();
                    let want = exhaustive(&store, i, &excluded, &extras, k);
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn cache_agrees_with_store_knn() {
        let store = random_store(11, 3, 20, 5);
        let cache = NeighborCache::build(&store, 5, Execution::Sequential);
        for i in 0..store.len() {
            let own = store.task_of(i);
            let task_id = store.tasks()[own].task_id.clone();
            let got = cache.neighbors(&store, i, &[own], &[], 5).unwrap();
            let want = store
                .knn_with_extras(&store.sample(i).embedding, 5, HeldOut::Task(&task_id), &[])
                .unwrap();
            let a: Vec<_> = got.iter().map(|n| n.sample).collect();
            let b: Vec<_> = want.iter().map(|n| n.sample).collect();
            assert_eq!(a, b);
            for (x, y) in got.iter().zip(&want) {
                assert!((x.distance - y.distance).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_is_enforced() {
        let store = random_store(1, 2, 5, 3);
        let cache = NeighborCache::build(&store, 2, Execution::Sequential);
        assert!(cache.neighbors(&store, 0, &[0], &[], 3).is_err());
        assert!(cache.neighbors(&store, 0, &[0, 1], &[], 1).is_err());
    }
}
