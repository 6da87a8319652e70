//! Shared evaluation kernel for held-out tasks.
//!
//! Given a held-out evaluation set of stored samples and a reference set of
//! the form "tasks not excluded, plus extras", one neighbor search per sample
//! yields everything the harness and the pair replay need: the per-model kNN
//! predictions, the true labels, and the κ-neighbor dataset distance.

use crate::error::{Result, RouterError};
use crate::neighbors::NeighborCache;
use crate::par::Execution;
use crate::store::{BenchmarkStore, LabelMode, SampleRef};

/// Per-model aggregates over one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTally {
    /// Σ g over the evaluation set.
    pub sum_g: f64,
    /// Number of samples with `g > t`.
    pub n1: usize,
    /// Number of samples where `g > t` agrees with the true label.
    pub agree: usize,
    /// Σ true label.
    pub sum_label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub n: usize,
    /// Mean κ-neighbor cosine distance (the dataset distance `u`).
    pub u: f64,
    pub models: Vec<ModelTally>,
}

impl TaskEval {
    pub fn s1(&self, m: usize) -> f64 {
        self.models[m].sum_g / self.n as f64
    }

    pub fn s2(&self, m: usize) -> f64 {
        self.models[m].n1 as f64 / self.n as f64
    }

    pub fn oracle(&self, m: usize) -> f64 {
        self.models[m].sum_label / self.n as f64
    }

    /// Accuracy of the thresholded predictor on the evaluation set.
    pub fn predictor_accuracy(&self, m: usize) -> f64 {
        self.models[m].agree as f64 / self.n as f64
    }
}

pub struct Replay<'a> {
    pub store: &'a BenchmarkStore,
    pub cache: NeighborCache,
    pub k: usize,
    pub kappa: usize,
    pub threshold: f64,
}

impl<'a> Replay<'a> {
    pub fn new(
        store: &'a BenchmarkStore,
        k: usize,
        kappa: usize,
        threshold: f64,
        exec: Execution,
    ) -> Result<Self> {
        if k == 0 || kappa == 0 {
            return Err(RouterError::Domain("k and kappa must be at least 1".into()));
        }
        let cache = NeighborCache::build(store, k.max(kappa), exec);
        Ok(Replay {
            store,
            cache,
            k,
            kappa,
            threshold,
        })
    }

    pub fn evaluate(
        &self,
        excluded_tasks: &[usize],
        eval: &[SampleRef],
        extras: &[SampleRef],
    ) -> Result<TaskEval> {
        if eval.is_empty() {
            return Err(RouterError::Domain("evaluation set is empty".into()));
        }
        let store = self.store;
        let n_models = store.models().len();
        let binary = store.label_mode() == LabelMode::Binary;
        let mut tallies = vec![
            ModelTally {
                sum_g: 0.0,
                n1: 0,
                agree: 0,
                sum_label: 0.0,
            };
            n_models
        ];
        let mut u_sum = 0.0;
        let depth = self.k.max(self.kappa);
        for &i in eval {
            let nn = self.cache.neighbors(store, i, excluded_tasks, extras, depth)?;
            let kappa_nn = &nn[..self.kappa.min(nn.len())];
            u_sum += kappa_nn.iter().map(|n| n.distance).sum::<f64>() / kappa_nn.len() as f64;
            let k_nn = &nn[..self.k.min(nn.len())];
            let labels = &store.sample(i).labels;
            for (m, tally) in tallies.iter_mut().enumerate() {
                let g = k_nn.iter().map(|n| store.label(n.sample, m)).sum::<f64>()
                    / k_nn.len() as f64;
                let g_bar = g > self.threshold;
                tally.sum_g += g;
                tally.n1 += g_bar as usize;
                tally.sum_label += labels[m];
                if binary && g_bar == (labels[m] == 1.0) {
                    tally.agree += 1;
                }
            }
        }
        Ok(TaskEval {
            n: eval.len(),
            u: u_sum / eval.len() as f64,
            models: tallies,
        })
    }
}
