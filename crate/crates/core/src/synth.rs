//! Synthetic benchmark generator with planted ground truth.
//!
//! Tasks are clusters on the unit sphere, grouped around a few domain
//! centers. Each model answers correctly with a base probability, raised
//! (or lowered) inside planted competence regions; labels are then flipped
//! with probability `label_noise`. The generator records each model's
//! expected accuracy on every task in a sidecar so tests can compare measured
//! quantities against the planted truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::jsonfmt;
use crate::store::{cosine_distance, BenchmarkStore, IngestConfig, ModelRecord, SampleRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Task(usize),
    Domain(usize),
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceRegion {
    pub model: usize,
    pub anchor: Anchor,
    /// Cosine-distance radius around the anchor.
    pub radius: f64,
    /// Probability of a correct answer inside the region.
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_tasks: usize,
    pub samples_per_task: usize,
    pub dimension: usize,
    pub n_models: usize,
    pub n_domains: usize,
    /// Spread of task centers around their domain center.
    pub domain_spread: f64,
    /// Spread of samples around their task center.
    pub cluster_spread: f64,
    /// Parameter counts in billions, one per model.
    pub model_params: Vec<f64>,
    /// Correctness probability outside every region, one per model.
    pub base_probs: Vec<f64>,
    pub regions: Vec<CompetenceRegion>,
    pub label_noise: f64,
    /// Also emit per-sample log-likelihood baseline values.
    pub with_ll: bool,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::planted(8, 500, 6, 0.1, 0)
    }
}

/// Expected accuracy of every model on every task, keyed task → model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub accuracy: BTreeMap<String, BTreeMap<String, f64>>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, jsonfmt::to_string(self)? + "\n").map_err(|e| RouterError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RouterError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn model_id(m: usize) -> String {
    format!("model-{m:02}")
}

pub fn task_id(t: usize) -> String {
    format!("task-{t:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn perturb(center: &[f64], spread: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    let noise = gaussian(rng, center.len(), scale);
    unit(center.iter().zip(noise).map(|(c, z)| c + z).collect())
}

/// Typical cosine distance of a point perturbed with `spread` from its center.
fn typical_distance(spread: f64) -> f64 {
    1.0 - 1.0 / (1.0 + spread * spread).sqrt()
}

impl SyntheticSpec {
    /// A family of stores with specialist models: each smaller model is very
    /// good on parts of a couple of tasks and fairly good across one domain;
    /// the largest model is best on average. Regions are drawn from `seed`.
    pub fn planted(
        n_tasks: usize,
        samples_per_task: usize,
        n_models: usize,
        label_noise: f64,
        seed: u64,
    ) -> Self {
        let n_domains = 3.min(n_tasks.max(1));
        let domain_spread = 0.6;
        let cluster_spread = 0.5;
        let sizes = [3.0, 7.0, 7.0, 13.0, 13.0, 30.0, 40.0, 70.0];
        let mut model_params: Vec<f64> = (0..n_models)
            .map(|m| sizes[m * sizes.len() / n_models.max(1)])
            .collect();
        if let Some(last) = model_params.last_mut() {
            *last = 70.0;
        }
        let base_probs: Vec<f64> = (0..n_models)
            .map(|m| {
                if n_models == 1 {
                    0.6
                } else {
                    0.35 + 0.25 * m as f64 / (n_models - 1) as f64
                }
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let task_radius = typical_distance(cluster_spread);
        let domain_radius = typical_distance((domain_spread * domain_spread
            + cluster_spread * cluster_spread)
            .sqrt());
        let mut regions = Vec::new();
        for m in 0..n_models.saturating_sub(1) {
            regions.push(CompetenceRegion {
                model: m,
                anchor: Anchor::Domain(rng.random_range(0..n_domains)),
                radius: domain_radius,
                prob: 0.7,
            });
            for _ in 0..2 {
                regions.push(CompetenceRegion {
                    model: m,
                    anchor: Anchor::Task(rng.random_range(0..n_tasks)),
                    radius: task_radius * rng.random_range(0.8..1.3),
                    prob: 0.92,
                });
            }
        }

        SyntheticSpec {
            n_tasks,
            samples_per_task,
            dimension: 16,
            n_models,
            n_domains,
            domain_spread,
            cluster_spread,
            model_params,
            base_probs,
            regions,
            label_noise,
            with_ll: true,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RouterError::Domain(msg));
        if self.dimension < 2 {
            return bad(format!("dimension {} must be at least 2", self.dimension));
        }
        if self.n_tasks == 0 || self.samples_per_task == 0 || self.n_models == 0 {
            return bad("need at least one task, sample and model".into());
        }
        if self.n_domains == 0 {
            return bad("need at least one domain".into());
        }
        if self.model_params.len() != self.n_models || self.base_probs.len() != self.n_models {
            return bad("model_params and base_probs need one entry per model".into());
        }
        if self.model_params.iter().any(|p| p.is_nan() || *p <= 0.0) {
            return bad("parameter counts must be positive".into());
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.label_noise)
            || !self.base_probs.iter().copied().all(unit)
            || !self.regions.iter().all(|r| unit(r.prob))
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.domain_spread < 0.0 || self.cluster_spread < 0.0 {
            return bad("spreads must be non-negative".into());
        }
        for r in &self.regions {
            if r.model >= self.n_models {
                return bad(format!("region references model {}", r.model));
            }
            match &r.anchor {
                Anchor::Task(t) if *t >= self.n_tasks => {
                    return bad(format!("region anchored at missing task {t}"))
                }
                Anchor::Domain(d) if *d >= self.n_domains => {
                    return bad(format!("region anchored at missing domain {d}"))
                }
                Anchor::Point(p) if p.len() != self.dimension || p.iter().all(|x| *x == 0.0) => {
                    return bad("region point has wrong dimension or zero norm".into())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Generate a store and its planted ground truth.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(BenchmarkStore, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let dim = spec.dimension;

    let domains: Vec<Vec<f64>> = (0..spec.n_domains)
        .map(|_| unit(gaussian(&mut rng, dim, 1.0)))
        .collect();
    let task_centers: Vec<Vec<f64>> = (0..spec.n_tasks)
        .map(|t| perturb(&domains[t % spec.n_domains], spec.domain_spread, &mut rng))
        .collect();
    let anchors: Vec<Vec<f64>> = spec
        .regions
        .iter()
        .map(|r| match &r.anchor {
            Anchor::Task(t) => task_centers[*t].clone(),
            Anchor::Domain(d) => domains[*d].clone(),
            Anchor::Point(p) => unit(p.clone()),
        })
        .collect();

    let models: Vec<ModelRecord> = (0..spec.n_models)
        .map(|m| ModelRecord {
            model_id: model_id(m),
            n_params: spec.model_params[m],
            display_name: format!("Synthetic {}B #{m}", spec.model_params[m]),
        })
        .collect();

    let eps = spec.label_noise;
    let mut truth = GroundTruth::default();
    let mut records = Vec::with_capacity(spec.n_tasks * spec.samples_per_task);
    for (t, center) in task_centers.iter().enumerate() {
        let mut expected = vec![0.0; spec.n_models];
        for s in 0..spec.samples_per_task {
            let x = perturb(center, spec.cluster_spread, &mut rng);
            let mut labels = BTreeMap::new();
            let mut ll = BTreeMap::new();
            for m in 0..spec.n_models {
                let q = spec
                    .regions
                    .iter()
                    .zip(&anchors)
                    .filter(|(r, a)| r.model == m && cosine_distance(&x, a) <= r.radius)
                    .map(|(r, _)| r.prob)
                    .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
                    .unwrap_or(spec.base_probs[m]);
                let effective = q * (1.0 - eps) + (1.0 - q) * eps;
                expected[m] += effective;
                let correct = rng.random::<f64>() < q;
                let flipped = rng.random::<f64>() < eps;
                labels.insert(model_id(m), if correct != flipped { 1.0 } else { 0.0 });
                if spec.with_ll {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    // Fluency tracks model size more than competence on the input.
                    let v = 0.25 * (0.05 + 0.9 * effective).ln() + 0.15 * spec.model_params[m].ln() + 0.5 * z;
                    ll.insert(model_id(m), v);
                }
            }
            records.push((
                records.len() + 1,
                SampleRecord {
                    task_id: task_id(t),
                    sample_id: format!("s{s:05}"),
                    embedding: x,
                    labels: Some(labels),
                    raw_metrics: None,
                    ll: spec.with_ll.then_some(ll),
                },
            ));
        }
        truth.accuracy.insert(
            task_id(t),
            (0..spec.n_models)
                .map(|m| (model_id(m), expected[m] / spec.samples_per_task as f64))
                .collect(),
        );
    }

    let cfg = IngestConfig {
        label_mode: Some(crate::store::LabelMode::Binary),
        ..IngestConfig::default()
    };
    let store = BenchmarkStore::from_records(models, records, &cfg, Path::new("<synthetic>"))?;
    Ok((store, truth))
}
