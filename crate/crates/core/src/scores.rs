//! Task-level routing scores, the η-gated selection rule and its
//! correctness-count distribution, plus per-instance routing.
//!
//! Under the confidence model, each thresholded prediction of model `m` on the
//! new task is right with probability `p`. The number of correct answers is
//! then `Binomial(n1, p) + Binomial(n0, 1 - p)`, where `n1`/`n0` count inputs
//! predicted correct/incorrect. `S3` is the mean of that count divided by `n`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::predictor::{predict_all, CorrectnessPrediction, PredictorConfig};
use crate::store::{BenchmarkStore, SampleRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Oracle,
    S1,
    S2,
    S3,
    S3TrueP,
    Ll,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Oracle => "oracle",
            ScoreKind::S1 => "s1",
            ScoreKind::S2 => "s2",
            ScoreKind::S3 => "s3",
            ScoreKind::S3TrueP => "s3_true_p",
            ScoreKind::Ll => "ll",
        }
    }

    /// Whether values are probabilities in [0, 1].
    pub fn is_bounded(self) -> bool {
        self != ScoreKind::Ll
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = RouterError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle" => ScoreKind::Oracle,
            "s1" => ScoreKind::S1,
            "s2" => ScoreKind::S2,
            "s3" => ScoreKind::S3,
            "s3_true_p" => ScoreKind::S3TrueP,
            "ll" => ScoreKind::Ll,
            other => return Err(RouterError::Domain(format!("unknown score kind {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model_id: String,
    pub score: f64,
}

/// Per-model scores of one kind for one task, in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub task_id: String,
    pub score_kind: ScoreKind,
    pub scores: Vec<ModelScore>,
}

impl ScoreVector {
    pub fn get(&self, model_id: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.model_id == model_id)
            .map(|s| s.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Argmax,
    EtaGated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub chosen_model: String,
    pub rule: SelectionRule,
    pub m3: String,
    pub m_star: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_probability: Option<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinMethod {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WinConfig {
    pub method: WinMethod,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for WinConfig {
    fn default() -> Self {
        WinConfig {
            method: WinMethod::Exact,
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

/// Distribution of the number of correct answers under the confidence model.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessDistribution {
    pub n1: usize,
    pub n0: usize,
    pub p: f64,
    /// `pmf[c]` = probability of exactly `c` correct answers.
    pub pmf: Vec<f64>,
}

impl CorrectnessDistribution {
    pub fn n(&self) -> usize {
        self.n1 + self.n0
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(c, w)| c as f64 * w).sum()
    }

    /// Expected fraction of correct answers.
    pub fn mean_rate(&self) -> f64 {
        self.mean() / self.n() as f64
    }

    fn sample<R: rand::Rng>(&self, rng: &mut R) -> u64 {
        let draw = |n: usize, q: f64, rng: &mut R| -> u64 {
            if n == 0 {
                0
            } else {
                Binomial::new(n as u64, q)
                    .expect("probability validated on construction")
                    .sample(rng)
            }
        };
        draw(self.n1, self.p, rng) + draw(self.n0, 1.0 - self.p, rng)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(RouterError::Domain(format!("{name}={v} outside [0, 1]")))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(RouterError::Domain("mean of an empty set".into()));
    }
    Ok(values.sum::<f64>() / n as f64)
}

/// True fraction of `task` answered correctly by `model_id`.
pub fn oracle_score(store: &BenchmarkStore, model_id: &str, task: &[SampleRef]) -> Result<f64> {
    store.require_binary("oracle score")?;
    let m = store.model_index(model_id)?;
    mean(task.iter().map(|&i| store.label(i, m)))
}

/// Mean predicted probability of correctness.
pub fn score_s1(predictions: &[CorrectnessPrediction]) -> Result<f64> {
    mean(predictions.iter().map(|p| p.g))
}

/// Mean thresholded prediction.
pub fn score_s2(predictions: &[CorrectnessPrediction]) -> Result<f64> {
    mean(predictions.iter().map(|p| if p.g_bar { 1.0 } else { 0.0 }))
}

/// `s2 * p + (1 - s2) * (1 - p)`.
pub fn score_s3(s2: f64, p: f64) -> Result<f64> {
    check_unit("s2", s2)?;
    check_unit("p", p)?;
    Ok(s2 * p + (1.0 - s2) * (1.0 - p))
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n + 1];
    pmf[0] = 1.0;
    for trial in 1..=n {
        for c in (1..=trial).rev() {
            pmf[c] = pmf[c] * (1.0 - p) + pmf[c - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact pmf of `Binomial(n1, p) + Binomial(n0, 1 - p)`.
pub fn correctness_distribution(n1: usize, n0: usize, p: f64) -> Result<CorrectnessDistribution> {
    check_unit("p", p)?;
    if n1 + n0 == 0 {
        return Err(RouterError::Domain("n1 + n0 must be at least 1".into()));
    }
    let pmf = convolve(&binomial_pmf(n1, p), &binomial_pmf(n0, 1.0 - p));
    Ok(CorrectnessDistribution { n1, n0, p, pmf })
}

/// `P(rate_a > rate_b)` for independent draws, where `rate = count / n`.
/// Ties contribute nothing.
pub fn win_probability(
    a: &CorrectnessDistribution,
    b: &CorrectnessDistribution,
    method: WinMethod,
    mc_samples: usize,
    rng_seed: u64,
) -> Result<f64> {
    let (na, nb) = (a.n() as u128, b.n() as u128);
    match method {
        WinMethod::Exact => {
            let mut cdf_b = Vec::with_capacity(b.pmf.len());
            let mut acc = 0.0;
            for w in &b.pmf {
                acc += w;
                cdf_b.push(acc);
            }
            let mut total = 0.0;
            for (ca, wa) in a.pmf.iter().enumerate() {
                // b * na < ca * nb  <=>  b <= (ca * nb - 1) / na
                let lhs = ca as u128 * nb;
                if lhs == 0 {
                    continue;
                }
                let b_max = ((lhs - 1) / na) as usize;
                total += wa * cdf_b[b_max.min(cdf_b.len() - 1)];
            }
            Ok(total.clamp(0.0, 1.0))
        }
        WinMethod::MonteCarlo => {
            if mc_samples == 0 {
                return Err(RouterError::Domain("mc_samples must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let mut wins = 0usize;
            for _ in 0..mc_samples {
                let ca = a.sample(&mut rng) as u128;
                let cb = b.sample(&mut rng) as u128;
                if ca * nb > cb * na {
                    wins += 1;
                }
            }
            Ok(wins as f64 / mc_samples as f64)
        }
    }
}

/// Argmax over `candidates` (roster indices): highest score, then fewer
/// parameters, then lexicographically smaller model id.
pub fn argmax_model(store: &BenchmarkStore, candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let models = store.models();
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &m in &candidates[1..] {
        let s = score(m);
        let better = s > best_score
            || (s == best_score
                && (models[m].n_params < models[best].n_params
                    || (models[m].n_params == models[best].n_params
                        && models[m].model_id < models[best].model_id)));
        if better {
            best = m;
            best_score = s;
        }
    }
    best
}

/// Apply the η-gate: take the best model by `S3` only if it beats the
/// fallback `m_star` with probability greater than `eta`.
pub fn select_eta_gated(
    store: &BenchmarkStore,
    s3_scores: &ScoreVector,
    m_star: &str,
    distributions: &BTreeMap<String, CorrectnessDistribution>,
    eta: f64,
    win: &WinConfig,
) -> Result<SelectionOutcome> {
    store.model_index(m_star)?;
    if !matches!(s3_scores.score_kind, ScoreKind::S3 | ScoreKind::S3TrueP) {
        return Err(RouterError::Invariant(format!(
            "eta-gated selection needs s3 scores, got {}",
            s3_scores.score_kind.as_str()
        )));
    }
    if s3_scores.scores.is_empty() {
        return Err(RouterError::Domain("score vector is empty".into()));
    }
    let idx: Vec<usize> = s3_scores
        .scores
        .iter()
        .map(|s| store.model_index(&s.model_id))
        .collect::<Result<_>>()?;
    let pos = |m: usize| idx.iter().position(|&x| x == m).unwrap();
    let m3 = argmax_model(store, &idx, |m| s3_scores.scores[pos(m)].score);
    let m3_id = store.models()[m3].model_id.clone();

    if m3_id == m_star {
        return Ok(SelectionOutcome {
            chosen_model: m3_id.clone(),
            rule: SelectionRule::EtaGated,
            m3: m3_id,
            m_star: m_star.to_string(),
            win_probability: None,
            eta,
        });
    }
    let dist = |id: &str| {
        distributions
            .get(id)
            .ok_or_else(|| RouterError::Invariant(format!("no correctness distribution for {id}")))
    };
    let w = win_probability(dist(&m3_id)?, dist(m_star)?, win.method, win.mc_samples, win.seed)?;
    Ok(SelectionOutcome {
        chosen_model: if w > eta { m3_id.clone() } else { m_star.to_string() },
        rule: SelectionRule::EtaGated,
        m3: m3_id,
        m_star: m_star.to_string(),
        win_probability: Some(w),
        eta,
    })
}

/// Best model on average over `tasks` (task indices), among `candidates`.
pub fn best_model_among(store: &BenchmarkStore, tasks: &[usize], candidates: &[usize]) -> Result<usize> {
    store.require_binary("best model on average")?;
    if candidates.is_empty() {
        return Err(RouterError::Domain("no candidate models".into()));
    }
    let sums: Vec<f64> = (0..store.models().len())
        .map(|m| {
            tasks
                .iter()
                .map(|&t| {
                    let task = &store.tasks()[t];
                    let total: f64 = task.sample_refs().map(|i| store.label(i, m)).sum();
                    total / task.len() as f64
                })
                .sum()
        })
        .collect();
    Ok(argmax_model(store, candidates, |m| sums[m]))
}

/// `argmax_m Σ_d S̃(m, d)` over every task in the store.
pub fn best_model_on_average(store: &BenchmarkStore) -> Result<String> {
    let tasks: Vec<usize> = (0..store.tasks().len()).collect();
    let all: Vec<usize> = (0..store.models().len()).collect();
    let m = best_model_among(store, &tasks, &all)?;
    Ok(store.models()[m].model_id.clone())
}

/// Mean ingested log-likelihood of `model_id` over `task`.
pub fn score_ll(store: &BenchmarkStore, model_id: &str, task: &[SampleRef]) -> Result<f64> {
    store.model_index(model_id)?;
    let values: Vec<f64> = task
        .iter()
        .map(|&i| {
            store
                .sample(i)
                .ll_scores
                .as_ref()
                .and_then(|ll| ll.get(model_id).copied())
                .ok_or_else(|| {
                    RouterError::Mode(format!(
                        "sample {} has no log-likelihood for {model_id}",
                        store.sample(i).sample_id
                    ))
                })
        })
        .collect::<Result<_>>()?;
    mean(values.into_iter())
}

/// Per-instance decision: per-model `g` and the argmax model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDecision {
    pub chosen_model: String,
    pub scores: Vec<ModelScore>,
}

/// Route a single input to the model with the highest kNN score.
pub fn route_per_instance(
    store: &BenchmarkStore,
    query: &[f64],
    cfg: &PredictorConfig,
) -> Result<InstanceDecision> {
    let all: Vec<usize> = (0..store.models().len()).collect();
    route_per_instance_among(store, query, cfg, &all)
}

pub fn route_per_instance_among(
    store: &BenchmarkStore,
    query: &[f64],
    cfg: &PredictorConfig,
    candidates: &[usize],
) -> Result<InstanceDecision> {
    if candidates.is_empty() {
        return Err(RouterError::Domain("no candidate models".into()));
    }
    let preds = predict_all(store, query, cfg)?;
    let best = argmax_model(store, candidates, |m| preds[m].g);
    Ok(InstanceDecision {
        chosen_model: store.models()[best].model_id.clone(),
        scores: candidates
            .iter()
            .map(|&m| ModelScore {
                model_id: store.models()[m].model_id.clone(),
                score: preds[m].g,
            })
            .collect(),
    })
}

/// Squared-loss comparison between the loss of an aggregate score and the
/// mean pointwise loss, for both the thresholded score and its
/// confidence-adjusted counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JensenGap {
    pub lhs_s2: f64,
    pub rhs_s2: f64,
    pub lhs_s3: f64,
    pub rhs_s3: f64,
}

impl JensenGap {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs_s2 <= self.rhs_s2 + tol && self.lhs_s3 <= self.rhs_s3 + tol
    }
}

fn half_sq(a: f64, b: f64) -> f64 {
    0.5 * (a - b) * (a - b)
}

pub fn jensen_gap_check(g_bar: &[bool], labels: &[f64], p: f64) -> Result<JensenGap> {
    check_unit("p", p)?;
    if g_bar.is_empty() || g_bar.len() != labels.len() {
        return Err(RouterError::Domain(
            "predictions and labels must be non-empty and of equal length".into(),
        ));
    }
    let n = g_bar.len() as f64;
    let gb: Vec<f64> = g_bar.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let oracle = labels.iter().sum::<f64>() / n;
    let s2 = gb.iter().sum::<f64>() / n;
    let s3 = score_s3(s2, p)?;
    let adjusted = |g: f64| p * g + (1.0 - p) * (1.0 - g);
    let rhs_s2 = gb.iter().zip(labels).map(|(&g, &y)| half_sq(g, y)).sum::<f64>() / n;
    let rhs_s3 = gb
        .iter()
        .zip(labels)
        .map(|(&g, &y)| half_sq(adjusted(g), y))
        .sum::<f64>()
        / n;
    let gap = JensenGap {
        lhs_s2: half_sq(s2, oracle),
        rhs_s2,
        lhs_s3: half_sq(s3, oracle),
        rhs_s3,
    };
    debug_assert!(gap.holds(1e-12), "{gap:?}");
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(g: f64, t: f64) -> CorrectnessPrediction {
        CorrectnessPrediction {
            g,
            g_bar: g > t,
            neighbor_ids: vec![],
            shortfall: 0,
        }
    }

    #[test]
    fn s1_s2_examples() {
        let p = [pred(0.6, 0.5), pred(0.8, 0.5)];
        assert!((score_s1(&p).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(score_s1(&[pred(1.0, 0.5)]).unwrap(), 1.0);
        let b = [pred(1.0, 0.5), pred(0.0, 0.5), pred(0.9, 0.5), pred(0.6, 0.5)];
        assert_eq!(score_s2(&b).unwrap(), 0.75);
        let at_t = [pred(0.5, 0.5), pred(0.5, 0.5)];
        assert_eq!(score_s2(&at_t).unwrap(), 0.0);
        assert!(score_s1(&[]).is_err());
    }

    #[test]
    fn s3_examples() {
        assert_eq!(score_s3(0.75, 1.0).unwrap(), 0.75);
        assert_eq!(score_s3(0.3, 0.5).unwrap(), 0.5);
        assert_eq!(score_s3(0.75, 0.0).unwrap(), 0.25);
        assert!(score_s3(1.2, 0.5).is_err());
        assert!(score_s3(0.5, -0.1).is_err());
    }

    #[test]
    fn distribution_examples() {
        let d = correctness_distribution(1, 1, 0.5).unwrap();
        assert_eq!(d.pmf, vec![0.25, 0.5, 0.25]);
        let d = correctness_distribution(2, 0, 1.0).unwrap();
        assert_eq!(d.pmf, vec![0.0, 0.0, 1.0]);
        assert!(correctness_distribution(0, 0, 0.5).is_err());
    }

    #[test]
    fn win_probability_examples() {
        let hi = correctness_distribution(3, 0, 1.0).unwrap();
        let lo = correctness_distribution(0, 3, 1.0).unwrap();
        assert_eq!(win_probability(&hi, &lo, WinMethod::Exact, 0, 0).unwrap(), 1.0);
        let d = correctness_distribution(1, 1, 0.5).unwrap();
        let w = win_probability(&d, &d, WinMethod::Exact, 0, 0).unwrap();
        assert!((w - 0.3125).abs() < 1e-15);
        let mc = win_probability(&d, &d, WinMethod::MonteCarlo, 100_000, 42).unwrap();
        assert!((mc - 0.3125).abs() < 0.01);
        assert!(win_probability(&d, &d, WinMethod::MonteCarlo, 0, 42).is_err());
    }

    #[test]
    fn win_probability_scales_rates_when_sizes_differ() {
        // a: rate 1/2 surely; b: rate 1/3 surely.
        let a = correctness_distribution(1, 1, 1.0).unwrap();
        let b = correctness_distribution(1, 2, 1.0).unwrap();
        assert_eq!(win_probability(&a, &b, WinMethod::Exact, 0, 0).unwrap(), 1.0);
        assert_eq!(win_probability(&b, &a, WinMethod::Exact, 0, 0).unwrap(), 0.0);
        // Equal rates 1/2 vs 2/4 tie and contribute nothing.
        let c = correctness_distribution(2, 2, 1.0).unwrap();
        assert_eq!(win_probability(&a, &c, WinMethod::Exact, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn jensen_examples() {
        let gap = jensen_gap_check(&[true, false, true], &[1.0, 0.0, 1.0], 0.8).unwrap();
        assert_eq!(gap.lhs_s2, 0.0);
        assert_eq!(gap.rhs_s2, 0.0);
        let gap = jensen_gap_check(&[true; 4], &[1.0, 0.0, 1.0, 0.0], 0.7).unwrap();
        assert_eq!(gap.lhs_s2, 0.125);
        assert_eq!(gap.rhs_s2, 0.25);
        assert!(gap.holds(1e-12));
    }
}
