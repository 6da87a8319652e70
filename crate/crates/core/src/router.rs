//! Deployment-side routing: a loaded store plus a fitted kernel smoother,
//! answering "which model should handle these inputs?".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::ood::{generate_pairs, DistanceAccuracyPair, PairConfig, SmootherModel, DEFAULT_KAPPA, DEFAULT_SIGMA};
use crate::par::Execution;
use crate::predictor::{mean_label, PredictorConfig};
use crate::scores::{
    argmax_model, best_model_among, correctness_distribution, score_s3, select_eta_gated,
    InstanceDecision, ModelScore, ScoreKind, ScoreVector, SelectionOutcome, WinConfig,
};
use crate::store::{BenchmarkStore, LabelMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterConfig {
    pub k: usize,
    pub threshold: f64,
    pub kappa: usize,
    pub sigma: f64,
    pub eta: f64,
    pub default_score: ScoreKind,
    pub win: WinConfig,
    pub pairs: PairConfig,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            k: 5,
            threshold: 0.5,
            kappa: DEFAULT_KAPPA,
            sigma: DEFAULT_SIGMA,
            eta: 0.6,
            default_score: ScoreKind::S3,
            win: WinConfig::default(),
            pairs: PairConfig::default(),
        }
    }
}

impl RouterConfig {
    fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            k: self.k,
            threshold: self.threshold,
            ..PredictorConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_params_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub inputs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<CandidateFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreKind>,
    #[serde(default)]
    pub per_instance: bool,
    /// Overrides the configured Monte-Carlo seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRoute {
    pub chosen_model: String,
    pub scores: ScoreVector,
    pub u: f64,
    pub p_estimates: Vec<ModelScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RouteResponse {
    Task(TaskRoute),
    PerInstance { decisions: Vec<InstanceDecision> },
}

/// Task id placed in score vectors for externally supplied inputs.
pub const REQUEST_TASK_ID: &str = "request";

pub struct Router {
    store: BenchmarkStore,
    cfg: RouterConfig,
    smoother: Option<SmootherModel>,
}

impl Router {
    /// Fit the smoother by replaying every benchmark task. Continuous stores
    /// and single-task stores get no smoother; S3 requests then fail.
    pub fn fit(store: BenchmarkStore, cfg: RouterConfig, exec: Execution) -> Result<Self> {
        let smoother = if store.label_mode() == LabelMode::Binary && store.tasks().len() >= 2 {
            // The smoother must be trained on the same descriptor used at query time.
            let pair_cfg = PairConfig {
                kappa: cfg.kappa,
                ..cfg.pairs.clone()
            };
            let pairs = generate_pairs(&store, &cfg.predictor(), &pair_cfg, exec)?;
            for w in &pairs.warnings {
                log::warn!("{w}");
            }
            Some(SmootherModel::fit(pairs.pairs, cfg.sigma)?)
        } else {
            None
        };
        Self::build(store, cfg, smoother)
    }

    /// Use precomputed distance/accuracy pairs instead of replaying.
    pub fn with_pairs(store: BenchmarkStore, cfg: RouterConfig, pairs: Vec<DistanceAccuracyPair>) -> Result<Self> {
        for p in &pairs {
            store.model_index(&p.model_id)?;
        }
        let smoother = SmootherModel::fit(pairs, cfg.sigma)?;
        Self::build(store, cfg, Some(smoother))
    }

    fn build(store: BenchmarkStore, cfg: RouterConfig, smoother: Option<SmootherModel>) -> Result<Self> {
        cfg.predictor().validate()?;
        if cfg.kappa == 0 {
            return Err(RouterError::Domain("kappa must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&cfg.eta) {
            return Err(RouterError::Domain(format!("eta {} outside [0, 1]", cfg.eta)));
        }
        if store.is_empty() {
            return Err(RouterError::EmptyStore("store has no samples".into()));
        }
        Ok(Router { store, cfg, smoother })
    }

    pub fn store(&self) -> &BenchmarkStore {
        &self.store
    }

    pub fn config(&self) -> &RouterConfig {
        &self.cfg
    }

    pub fn smoother(&self) -> Option<&SmootherModel> {
        self.smoother.as_ref()
    }

    fn candidates(&self, filter: Option<&CandidateFilter>) -> Result<Vec<usize>> {
        let models = self.store.models();
        let mut out: Vec<usize> = (0..models.len()).collect();
        if let Some(f) = filter {
            if let Some(ids) = &f.model_ids {
                let mut picked = Vec::with_capacity(ids.len());
                for id in ids {
                    picked.push(self.store.model_index(id)?);
                }
                out.retain(|m| picked.contains(m));
            }
            if let Some(max) = f.max_params_b {
                out.retain(|&m| models[m].n_params <= max);
            }
        }
        if out.is_empty() {
            return Err(RouterError::Domain("candidate filter leaves no models".into()));
        }
        Ok(out)
    }

    pub fn route(&self, req: &RouteRequest) -> Result<RouteResponse> {
        if req.inputs.is_empty() {
            return Err(RouterError::Domain("request has no inputs".into()));
        }
        let cands = self.candidates(req.candidates.as_ref())?;
        let store = &self.store;
        let depth = self.cfg.k.max(self.cfg.kappa);
        let mut neighbors = Vec::with_capacity(req.inputs.len());
        for x in &req.inputs {
            neighbors.push(store.knn_query(x, depth, None)?);
        }
        // Per-input, per-candidate g.
        let g: Vec<Vec<f64>> = neighbors
            .iter()
            .map(|nn| {
                let k_nn = &nn[..self.cfg.k.min(nn.len())];
                cands.iter().map(|&m| mean_label(store, m, k_nn)).collect()
            })
            .collect();
        let pos = |m: usize| cands.iter().position(|&c| c == m).expect("candidate");

        if req.per_instance {
            let decisions = g
                .iter()
                .map(|gi| {
                    let best = argmax_model(store, &cands, |m| gi[pos(m)]);
                    InstanceDecision {
                        chosen_model: store.models()[best].model_id.clone(),
                        scores: model_scores(store, &cands, gi),
                    }
                })
                .collect();
            return Ok(RouteResponse::PerInstance { decisions });
        }

        let kind = req.score.unwrap_or(self.cfg.default_score);
        let n = req.inputs.len();
        let u = neighbors
            .iter()
            .map(|nn| {
                let kn = &nn[..self.cfg.kappa.min(nn.len())];
                kn.iter().map(|x| x.distance).sum::<f64>() / kn.len() as f64
            })
            .sum::<f64>()
            / n as f64;
        let n1: Vec<usize> = (0..cands.len())
            .map(|j| g.iter().filter(|gi| gi[j] > self.cfg.threshold).count())
            .collect();
        let s2: Vec<f64> = n1.iter().map(|&c| c as f64 / n as f64).collect();
        let p: Option<Vec<f64>> = match &self.smoother {
            Some(sm) => Some(
                cands
                    .iter()
                    .map(|&m| sm.predict_p(&store.models()[m].model_id, u))
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        let p_estimates = p
            .as_ref()
            .map(|p| model_scores(store, &cands, p))
            .unwrap_or_default();

        let values: Vec<f64> = match kind {
            ScoreKind::S1 => (0..cands.len())
                .map(|j| g.iter().map(|gi| gi[j]).sum::<f64>() / n as f64)
                .collect(),
            ScoreKind::S2 => s2.clone(),
            ScoreKind::S3 => {
                let p = p.as_ref().ok_or_else(|| {
                    RouterError::Mode("s3 needs a fitted smoother (binary store with two or more tasks)".into())
                })?;
                s2.iter().zip(p).map(|(&s, &pp)| score_s3(s, pp)).collect::<Result<_>>()?
            }
            other => {
                return Err(RouterError::Mode(format!(
                    "score {} is not available for routing new inputs",
                    other.as_str()
                )))
            }
        };
        let scores = ScoreVector {
            task_id: REQUEST_TASK_ID.to_string(),
            score_kind: kind,
            scores: model_scores(store, &cands, &values),
        };

        let (chosen, selection) = if kind == ScoreKind::S3 {
            let p = p.as_ref().expect("checked above");
            let tasks: Vec<usize> = (0..store.tasks().len()).collect();
            let m_star = best_model_among(store, &tasks, &cands)?;
            let m3 = argmax_model(store, &cands, |m| values[pos(m)]);
            let mut dists = BTreeMap::new();
            for m in [m3, m_star] {
                let j = pos(m);
                dists.insert(
                    store.models()[m].model_id.clone(),
                    correctness_distribution(n1[j], n - n1[j], p[j])?,
                );
            }
            let win = WinConfig {
                seed: req.seed.unwrap_or(self.cfg.win.seed),
                ..self.cfg.win
            };
            let out = select_eta_gated(
                store,
                &scores,
                &store.models()[m_star].model_id,
                &dists,
                self.cfg.eta,
                &win,
            )?;
            (out.chosen_model.clone(), Some(out))
        } else {
            let best = argmax_model(store, &cands, |m| values[pos(m)]);
            (store.models()[best].model_id.clone(), None)
        };

        Ok(RouteResponse::Task(TaskRoute {
            chosen_model: chosen,
            scores,
            u,
            p_estimates,
            selection,
        }))
    }
}

fn model_scores(store: &BenchmarkStore, cands: &[usize], values: &[f64]) -> Vec<ModelScore> {
    cands
        .iter()
        .zip(values)
        .map(|(&m, &score)| ModelScore {
            model_id: store.models()[m].model_id.clone(),
            score,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{IngestConfig, ModelRecord, SampleRecord};

    fn rec(task: &str, id: &str, emb: Vec<f64>, labels: &[(&str, f64)]) -> SampleRecord {
        SampleRecord {
            task_id: task.into(),
            sample_id: id.into(),
            embedding: emb,
            labels: Some(labels.iter().map(|(m, v)| (m.to_string(), *v)).collect()),
            raw_metrics: None,
            ll: None,
        }
    }

    fn small_store() -> BenchmarkStore {
        let models = vec![
            ModelRecord {
                model_id: "big".into(),
                n_params: 70.0,
                display_name: "big".into(),
            },
            ModelRecord {
                model_id: "small".into(),
                n_params: 7.0,
                display_name: "small".into(),
            },
        ];
        let mut recs = Vec::new();
        for i in 0..6 {
            let a = 0.1 * i as f64;
            recs.push(rec("a", &format!("a{i}"), vec![1.0, a, 0.0], &[("big", 1.0), ("small", 0.0)]));
            recs.push(rec("b", &format!("b{i}"), vec![0.0, a, 1.0], &[("big", 0.0), ("small", 1.0)]));
            recs.push(rec("c", &format!("c{i}"), vec![a, 1.0, 0.0], &[("big", 1.0), ("small", 1.0)]));
        }
        let recs = recs.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        BenchmarkStore::from_records(models, recs, &IngestConfig::default(), std::path::Path::new("mem")).unwrap()
    }

    fn router() -> Router {
        let cfg = RouterConfig {
            k: 3,
            kappa: 3,
            pairs: PairConfig {
                alphas: vec![0.0, 0.2],
                repeats: 2,
                ..PairConfig::default()
            },
            ..RouterConfig::default()
        };
        Router::fit(small_store(), cfg, Execution::Sequential).unwrap()
    }

    fn req(inputs: Vec<Vec<f64>>) -> RouteRequest {
        RouteRequest {
            inputs,
            candidates: None,
            score: Some(ScoreKind::S2),
            per_instance: false,
            seed: None,
        }
    }

    #[test]
    fn memorized_task_routes_to_its_model() {
        let r = router();
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![0.0, 0.1 * i as f64, 1.0]).collect();
        match r.route(&req(inputs)).unwrap() {
            RouteResponse::Task(t) => {
                assert_eq!(t.chosen_model, "small");
                assert_eq!(t.scores.get("small"), Some(1.0));
                assert!(t.selection.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_instance_returns_one_decision_per_input() {
        let r = router();
        let mut q = req(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        q.per_instance = true;
        match r.route(&q).unwrap() {
            RouteResponse::PerInstance { decisions } => {
                let chosen: Vec<&str> = decisions.iter().map(|d| d.chosen_model.as_str()).collect();
                // Third input: both models score 1, fewer parameters wins.
                assert_eq!(chosen, ["big", "small", "small"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn s3_route_has_selection() {
        let r = router();
        let mut q = req(vec![vec![1.0, 0.0, 0.0]]);
        q.score = Some(ScoreKind::S3);
        let RouteResponse::Task(t) = r.route(&q).unwrap() else {
            panic!("task response expected")
        };
        let sel = t.selection.unwrap();
        assert!(sel.chosen_model == sel.m3 || sel.chosen_model == sel.m_star);
        assert_eq!(t.p_estimates.len(), 2);
        assert!(t.scores.scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
    }

    #[test]
    fn request_errors() {
        let r = router();
        assert!(matches!(r.route(&req(vec![])), Err(RouterError::Domain(_))));
        let err = r.route(&req(vec![vec![1.0, 0.0]])).unwrap_err();
        assert_eq!(err.reason(), "dimension_mismatch");
        let mut q = req(vec![vec![1.0, 0.0, 0.0]]);
        q.score = Some(ScoreKind::Oracle);
        assert!(matches!(r.route(&q), Err(RouterError::Mode(_))));
        q.score = None;
        q.candidates = Some(CandidateFilter {
            max_params_b: Some(1.0),
            model_ids: None,
        });
        assert!(r.route(&q).is_err());
    }

    #[test]
    fn candidate_filter_restricts_choice() {
        let r = router();
        let mut q = req(vec![vec![1.0, 0.0, 0.0]]);
        q.candidates = Some(CandidateFilter {
            max_params_b: Some(10.0),
            model_ids: None,
        });
        let RouteResponse::Task(t) = r.route(&q).unwrap() else {
            panic!("task response expected")
        };
        assert_eq!(t.chosen_model, "small");
        assert_eq!(t.scores.scores.len(), 1);
    }
}
