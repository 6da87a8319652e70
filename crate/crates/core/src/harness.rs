//! Evaluation protocols: leave-one-task-out routing with report metrics,
//! α-mixing sweeps, routing restricted to small models, distance-threshold
//! subsets for per-instance routing, and distance/correlation tables.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RouterError};
use crate::ood::{alpha_grid, generate_pairs_with, PairConfig, SmootherModel, DEFAULT_KAPPA, DEFAULT_MIX_CAP, DEFAULT_SIGMA};
use crate::par::{self, derive_seed, Execution};
use crate::predictor::{split_task, PredictorConfig};
use crate::replay::{Replay, TaskEval};
use crate::scores::{
    argmax_model, best_model_among, correctness_distribution, score_s3, select_eta_gated,
    ModelScore, ScoreKind, ScoreVector, WinConfig,
};
use crate::stats::{self, pearson, spearman};
use crate::store::{BenchmarkStore, SampleRef};

/// A row of the routing report: one way of choosing a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    S1,
    S2,
    S3,
    S3TrueP,
    Ll,
    Bma,
    Oracle,
}

impl Selector {
    pub const ALL: [Selector; 7] = [
        Selector::S1,
        Selector::S2,
        Selector::S3,
        Selector::S3TrueP,
        Selector::Ll,
        Selector::Bma,
        Selector::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::S1 => "s1",
            Selector::S2 => "s2",
            Selector::S3 => "s3",
            Selector::S3TrueP => "s3_true_p",
            Selector::Ll => "ll",
            Selector::Bma => "bma",
            Selector::Oracle => "oracle",
        }
    }

    fn score_kind(self) -> Option<ScoreKind> {
        match self {
            Selector::S1 => Some(ScoreKind::S1),
            Selector::S2 => Some(ScoreKind::S2),
            Selector::S3 => Some(ScoreKind::S3),
            Selector::S3TrueP => Some(ScoreKind::S3TrueP),
            Selector::Ll => Some(ScoreKind::Ll),
            Selector::Bma | Selector::Oracle => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Score rows to compute; BMA and oracle rows are always reported.
    pub score_kinds: Vec<ScoreKind>,
    /// Mixing levels for the OOD-gap sweep.
    pub alphas: Vec<f64>,
    pub repeats: usize,
    pub eta: f64,
    pub k: usize,
    pub threshold: f64,
    pub kappa: usize,
    pub sigma: f64,
    /// Mixing levels and repeats used to replay smoother training pairs.
    pub pair_alphas: Vec<f64>,
    pub pair_repeats: usize,
    pub mix_cap: usize,
    /// Keep only candidate models with at most this many parameters (billions).
    pub model_filter: Option<f64>,
    pub subset_thresholds: Option<Vec<f64>>,
    pub win: WinConfig,
    pub rng_seed: u64,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            score_kinds: vec![
                ScoreKind::S1,
                ScoreKind::S2,
                ScoreKind::S3,
                ScoreKind::S3TrueP,
                ScoreKind::Ll,
            ],
            alphas: vec![0.0, 0.02, 0.05, 0.1, 0.2],
            repeats: 10,
            eta: 0.6,
            k: 5,
            threshold: 0.5,
            kappa: DEFAULT_KAPPA,
            sigma: DEFAULT_SIGMA,
            pair_alphas: alpha_grid(15, 0.2),
            pair_repeats: 10,
            mix_cap: DEFAULT_MIX_CAP,
            model_filter: None,
            subset_thresholds: None,
            win: WinConfig::default(),
            rng_seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(RouterError::Domain("repeats must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(RouterError::Domain(format!("eta {} outside [0, 1]", self.eta)));
        }
        if let Some(cs) = &self.subset_thresholds {
            if cs.iter().any(|c| c.is_nan() || *c <= 0.0) {
                return Err(RouterError::Domain("subset thresholds must be positive".into()));
            }
        }
        PredictorConfig {
            k: self.k,
            threshold: self.threshold,
            ..PredictorConfig::default()
        }
        .validate()
    }

    fn wants(&self, kind: ScoreKind) -> bool {
        self.score_kinds.contains(&kind)
    }
}

/// Outcome of routing one held-out task under one mixing level and repeat.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldRun {
    pub task_id: String,
    pub alpha: f64,
    pub repeat: usize,
    pub n_eval: usize,
    /// Dataset distance of the evaluation remainder.
    pub u: f64,
    /// Candidate roster indices, in roster order.
    pub candidates: Vec<usize>,
    /// True accuracy of each candidate on the evaluation remainder.
    pub accuracy: Vec<f64>,
    pub p_true: Vec<f64>,
    pub p_hat: Option<Vec<f64>>,
    pub scores: BTreeMap<Selector, Vec<f64>>,
    /// Chosen roster index per selector.
    pub chosen: BTreeMap<Selector, usize>,
    pub win_probability: BTreeMap<Selector, f64>,
    pub m_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub task_id: String,
    pub selector: Selector,
    pub chosen_model: String,
    pub accuracy: f64,
    pub ratio_to_best: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub is_bma: bool,
    pub n_params: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub selector: Selector,
    pub accuracy: f64,
    pub ratio_to_best: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub pct_bma: f64,
    pub mean_params: f64,
    pub mean_rank: f64,
    pub n_tasks: usize,
    pub undefined_correlations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingReport {
    pub summary: Vec<SummaryRow>,
    pub rows: Vec<TaskRow>,
    /// Mean accuracy of the thresholded predictors over tasks and models.
    pub predictor_accuracy: f64,
    /// Mean |p̂ − p| of the kernel smoother, when S3 was computed.
    pub smoother_mae: Option<f64>,
    pub warnings: Vec<String>,
}

impl RoutingReport {
    pub fn summary_for(&self, selector: Selector) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.selector == selector)
    }

    pub const CSV_HEADER: &'static str =
        "task_id,selector,chosen_model,accuracy,ratio_to_best,pearson,spearman,is_bma,n_params,rank";

    /// One row per task × selector, columns as in [`RoutingReport::CSV_HEADER`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.task_id,
                r.selector.as_str(),
                r.chosen_model,
                r.accuracy,
                r.ratio_to_best,
                opt(r.pearson),
                opt(r.spearman),
                r.is_bma as u8,
                r.n_params,
                r.rank
            )?;
        }
        Ok(())
    }

    pub const SUMMARY_CSV_HEADER: &'static str =
        "selector,accuracy,ratio_to_best,pearson,spearman,pct_bma,mean_params,mean_rank,n_tasks";

    /// One row per selector, averaged over tasks.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::SUMMARY_CSV_HEADER)?;
        for r in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.selector.as_str(),
                r.accuracy,
                r.ratio_to_best,
                opt(r.pearson),
                opt(r.spearman),
                r.pct_bma,
                r.mean_params,
                r.mean_rank,
                r.n_tasks
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("utf-8")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Fixed state for running folds on one store.
pub struct Experiment<'a> {
    store: &'a BenchmarkStore,
    cfg: ExperimentConfig,
    replay: Replay<'a>,
    candidates: Vec<usize>,
    /// Per-fold kernel smoother; `None` when S3 is disabled or cannot be fit.
    smoothers: Vec<Option<SmootherModel>>,
    has_ll: bool,
    warnings: Vec<String>,
}

impl<'a> Experiment<'a> {
    pub fn new(store: &'a BenchmarkStore, cfg: ExperimentConfig) -> Result<Self> {
        let candidates: Vec<usize> = store
            .models()
            .iter()
            .enumerate()
            .filter(|(_, m)| cfg.model_filter.is_none_or(|max| m.n_params <= max))
            .map(|(i, _)| i)
            .collect();
        Self::with_candidates(store, cfg, candidates)
    }

    pub fn with_candidates(
        store: &'a BenchmarkStore,
        cfg: ExperimentConfig,
        candidates: Vec<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        store.require_binary("leave-one-task-out evaluation")?;
        if store.tasks().len() < 2 {
            return Err(RouterError::Domain(
                "leave-one-task-out needs at least two tasks".into(),
            ));
        }
        if candidates.is_empty() {
            return Err(RouterError::Domain("no candidate models after filtering".into()));
        }
        let replay = Replay::new(store, cfg.k, cfg.kappa, cfg.threshold, cfg.execution)?;
        let has_ll = store.samples().iter().all(|s| {
            s.ll_scores.as_ref().is_some_and(|ll| {
                candidates
                    .iter()
                    .all(|&m| ll.contains_key(&store.models()[m].model_id))
            })
        });

        let mut warnings = Vec::new();
        if cfg.wants(ScoreKind::Ll) && !has_ll {
            warnings.push("log-likelihood values missing; ll row skipped".to_string());
        }
        let mut smoothers = Vec::with_capacity(store.tasks().len());
        for fold in 0..store.tasks().len() {
            if !cfg.wants(ScoreKind::S3) {
                smoothers.push(None);
                continue;
            }
            let pair_cfg = PairConfig {
                alphas: cfg.pair_alphas.clone(),
                repeats: cfg.pair_repeats,
                cap: cfg.mix_cap,
                kappa: cfg.kappa,
                seed: derive_seed(cfg.rng_seed, &[2, fold as u64]),
            };
            if store.tasks().len() < 3 {
                warnings.push(format!(
                    "fold {}: fewer than two benchmark tasks; s3 skipped",
                    store.tasks()[fold].task_id
                ));
                smoothers.push(None);
                continue;
            }
            let pairs = generate_pairs_with(&replay, &[fold], &pair_cfg, cfg.execution)?;
            warnings.extend(pairs.warnings);
            smoothers.push(Some(SmootherModel::fit(pairs.pairs, cfg.sigma)?));
        }

        Ok(Experiment {
            store,
            cfg,
            replay,
            candidates,
            smoothers,
            has_ll,
            warnings,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn smoother(&self, fold: usize) -> Option<&SmootherModel> {
        self.smoothers[fold].as_ref()
    }

    fn selectors(&self, fold: usize) -> Vec<Selector> {
        let mut out = Vec::new();
        for sel in Selector::ALL {
            let keep = match sel.score_kind() {
                None => true,
                Some(ScoreKind::Ll) => self.cfg.wants(ScoreKind::Ll) && self.has_ll,
                Some(ScoreKind::S3) => self.smoothers[fold].is_some(),
                Some(kind) => self.cfg.wants(kind),
            };
            if keep {
                out.push(sel);
            }
        }
        out
    }

    /// Route held-out task `fold` after moving `round(min(alpha·n, cap))` of
    /// its samples into the reference set.
    pub fn run_fold(&self, fold: usize, alpha: f64, alpha_index: usize, repeat: usize) -> Result<Option<FoldRun>> {
        let store = self.store;
        let task = &store.tasks()[fold];
        let seed = derive_seed(self.cfg.rng_seed, &[1, fold as u64, alpha_index as u64, repeat as u64]);
        let split = split_task(task.sample_refs().collect(), alpha, self.cfg.mix_cap, seed)?;
        if split.eval.is_empty() {
            return Ok(None);
        }
        let ev: TaskEval = self.replay.evaluate(&[fold], &split.eval, &split.extras)?;
        let cands = &self.candidates;
        let accuracy: Vec<f64> = cands.iter().map(|&m| ev.oracle(m)).collect();
        let p_true: Vec<f64> = cands.iter().map(|&m| ev.predictor_accuracy(m)).collect();
        let p_hat: Option<Vec<f64>> = match &self.smoothers[fold] {
            Some(sm) => Some(
                cands
                    .iter()
                    .map(|&m| sm.predict_p(&store.models()[m].model_id, ev.u))
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        let other_tasks: Vec<usize> = (0..store.tasks().len()).filter(|&t| t != fold).collect();
        let m_star = best_model_among(store, &other_tasks, cands)?;

        let mut scores: BTreeMap<Selector, Vec<f64>> = BTreeMap::new();
        let mut chosen: BTreeMap<Selector, usize> = BTreeMap::new();
        let mut win_probability = BTreeMap::new();
        let pos = |m: usize| cands.iter().position(|&c| c == m).expect("candidate");

        for sel in self.selectors(fold) {
            let values: Option<Vec<f64>> = match sel {
                Selector::S1 => Some(cands.iter().map(|&m| ev.s1(m)).collect()),
                Selector::S2 => Some(cands.iter().map(|&m| ev.s2(m)).collect()),
                Selector::S3 | Selector::S3TrueP => {
                    let ps = if sel == Selector::S3 { p_hat.as_ref().expect("smoother") } else { &p_true };
                    Some(
                        cands
                            .iter()
                            .zip(ps)
                            .map(|(&m, &p)| score_s3(ev.s2(m), p))
                            .collect::<Result<_>>()?,
                    )
                }
                Selector::Ll => Some(
                    cands
                        .iter()
                        .map(|&m| {
                            let id = &store.models()[m].model_id;
                            let total: f64 = split
                                .eval
                                .iter()
                                .map(|&i| store.sample(i).ll_scores.as_ref().expect("checked")[id])
                                .sum();
                            total / split.eval.len() as f64
                        })
                        .collect(),
                ),
                Selector::Bma | Selector::Oracle => None,
            };
            let pick = match sel {
                Selector::Bma => m_star,
                Selector::Oracle => argmax_model(store, cands, |m| accuracy[pos(m)]),
                Selector::S3 | Selector::S3TrueP => {
                    let v = values.as_ref().expect("scores");
                    let ps = if sel == Selector::S3 { p_hat.as_ref().expect("smoother") } else { &p_true };
                    let sv = ScoreVector {
                        task_id: task.task_id.clone(),
                        score_kind: sel.score_kind().expect("score"),
                        scores: cands
                            .iter()
                            .zip(v)
                            .map(|(&m, &s)| ModelScore {
                                model_id: store.models()[m].model_id.clone(),
                                score: s,
                            })
                            .collect(),
                    };
                    let m3 = argmax_model(store, cands, |m| v[pos(m)]);
                    let mut dists = BTreeMap::new();
                    for m in [m3, m_star] {
                        let n1 = ev.models[m].n1;
                        dists.insert(
                            store.models()[m].model_id.clone(),
                            correctness_distribution(n1, ev.n - n1, ps[pos(m)])?,
                        );
                    }
                    // Independent of the repeat so that unmixed runs stay identical.
                    let win = WinConfig {
                        seed: derive_seed(self.cfg.win.seed, &[fold as u64, sel as u64]),
                        ..self.cfg.win
                    };
                    let out = select_eta_gated(
                        store,
                        &sv,
                        &store.models()[m_star].model_id,
                        &dists,
                        self.cfg.eta,
                        &win,
                    )?;
                    if let Some(w) = out.win_probability {
                        win_probability.insert(sel, w);
                    }
                    store.model_index(&out.chosen_model)?
                }
                _ => {
                    let v = values.as_ref().expect("scores");
                    argmax_model(store, cands, |m| v[pos(m)])
                }
            };
            if let Some(v) = values {
                scores.insert(sel, v);
            }
            chosen.insert(sel, pick);
        }

        Ok(Some(FoldRun {
            task_id: task.task_id.clone(),
            alpha,
            repeat,
            n_eval: ev.n,
            u: ev.u,
            candidates: cands.clone(),
            accuracy,
            p_true,
            p_hat,
            scores,
            chosen,
            win_probability,
            m_star,
        }))
    }

    /// All folds at one mixing level and repeat.
    pub fn run_all(&self, alpha: f64, alpha_index: usize, repeat: usize) -> Result<(Vec<FoldRun>, Vec<String>)> {
        let n = self.store.tasks().len();
        let results = par::map_range(self.cfg.execution, n, |fold| {
            self.run_fold(fold, alpha, alpha_index, repeat)
        });
        let mut runs = Vec::new();
        let mut warnings = Vec::new();
        for (fold, r) in results.into_iter().enumerate() {
            match r? {
                Some(run) => runs.push(run),
                None => warnings.push(format!(
                    "task {} fully absorbed at alpha={alpha}; fold skipped",
                    self.store.tasks()[fold].task_id
                )),
            }
        }
        Ok((runs, warnings))
    }

    pub fn report(&self, runs: &[FoldRun], extra_warnings: Vec<String>) -> RoutingReport {
        let mut warnings = self.warnings.clone();
        warnings.extend(extra_warnings);
        aggregate(self.store, runs, warnings)
    }
}

fn aggregate(store: &BenchmarkStore, runs: &[FoldRun], warnings: Vec<String>) -> RoutingReport {
    let mut rows = Vec::new();
    for run in runs {
        let best = run.accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (&sel, &pick) in &run.chosen {
            let i = run.candidates.iter().position(|&c| c == pick).expect("candidate");
            let acc = run.accuracy[i];
            let (pr, sp) = match run.scores.get(&sel) {
                Some(s) => (pearson(s, &run.accuracy).ok(), spearman(s, &run.accuracy).ok()),
                None => (None, None),
            };
            rows.push(TaskRow {
                task_id: run.task_id.clone(),
                selector: sel,
                chosen_model: store.models()[pick].model_id.clone(),
                accuracy: acc,
                ratio_to_best: if best > 0.0 { acc / best } else { 1.0 },
                pearson: pr,
                spearman: sp,
                is_bma: pick == run.m_star,
                n_params: store.models()[pick].n_params,
                rank: 1 + run.accuracy.iter().filter(|&&a| a > acc).count(),
            });
        }
    }

    let mut summary = Vec::new();
    for sel in Selector::ALL {
        let sel_rows: Vec<&TaskRow> = rows.iter().filter(|r| r.selector == sel).collect();
        if sel_rows.is_empty() {
            continue;
        }
        let n = sel_rows.len() as f64;
        let avg = |f: &dyn Fn(&TaskRow) -> f64| sel_rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let defined = |f: &dyn Fn(&TaskRow) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = sel_rows.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| stats::mean(&v))
        };
        let has_scores = sel.score_kind().is_some();
        summary.push(SummaryRow {
            selector: sel,
            accuracy: avg(&|r| r.accuracy),
            ratio_to_best: avg(&|r| r.ratio_to_best),
            pearson: defined(&|r| r.pearson),
            spearman: defined(&|r| r.spearman),
            pct_bma: avg(&|r| r.is_bma as u8 as f64),
            mean_params: avg(&|r| r.n_params),
            mean_rank: avg(&|r| r.rank as f64),
            n_tasks: sel_rows.len(),
            undefined_correlations: if has_scores {
                sel_rows.iter().filter(|r| r.pearson.is_none()).count()
            } else {
                0
            },
        });
    }

    let p_all: Vec<f64> = runs.iter().flat_map(|r| r.p_true.iter().copied()).collect();
    let errs: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.p_hat.as_ref().map(|ph| (ph, &r.p_true)))
        .flat_map(|(ph, pt)| ph.iter().zip(pt).map(|(a, b)| (a - b).abs()))
        .collect();
    RoutingReport {
        summary,
        rows,
        predictor_accuracy: if p_all.is_empty() { 0.0 } else { stats::mean(&p_all) },
        smoother_mae: (!errs.is_empty()).then(|| stats::mean(&errs)),
        warnings,
    }
}

/// Leave-one-task-out routing: each task in turn plays the new task.
pub fn leave_one_task_out(store: &BenchmarkStore, cfg: &ExperimentConfig) -> Result<RoutingReport> {
    let exp = Experiment::new(store, cfg.clone())?;
    let (runs, warnings) = exp.run_all(0.0, 0, 0)?;
    Ok(exp.report(&runs, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(xs: &[f64]) -> Self {
        // Identical repeats report an exact zero instead of rounding residue.
        if xs.windows(2).all(|w| w[0] == w[1]) && !xs.is_empty() {
            return MeanSd { mean: xs[0], sd: 0.0 };
        }
        MeanSd {
            mean: stats::mean(xs),
            sd: stats::population_sd(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    /// Selected-model accuracy per selector across repeats.
    pub accuracy: BTreeMap<Selector, MeanSd>,
    pub pearson: BTreeMap<Selector, MeanSd>,
    pub predictor_accuracy: MeanSd,
    pub smoother_mae: Option<MeanSd>,
    /// One aggregated report per repeat.
    pub reports: Vec<RoutingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub runs: Vec<FoldRun>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "alpha,selector,accuracy_mean,accuracy_sd,pearson_mean,pearson_sd";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for p in &self.points {
            for (sel, acc) in &p.accuracy {
                let pr = p.pearson.get(sel);
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    p.alpha,
                    sel.as_str(),
                    acc.mean,
                    acc.sd,
                    opt(pr.map(|x| x.mean)),
                    opt(pr.map(|x| x.sd))
                )?;
            }
        }
        Ok(())
    }

    pub const PREDICTOR_CSV_HEADER: &'static str =
        "alpha,predictor_accuracy_mean,predictor_accuracy_sd,smoother_mae_mean,smoother_mae_sd";

    pub fn write_predictor_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::PREDICTOR_CSV_HEADER)?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.alpha,
                p.predictor_accuracy.mean,
                p.predictor_accuracy.sd,
                opt(p.smoother_mae.as_ref().map(|x| x.mean)),
                opt(p.smoother_mae.as_ref().map(|x| x.sd))
            )?;
        }
        Ok(())
    }
}

/// Run leave-one-task-out routing for every α and repeat.
pub fn ood_gap_sweep(store: &BenchmarkStore, cfg: &ExperimentConfig) -> Result<SweepReport> {
    let exp = Experiment::new(store, cfg.clone())?;
    sweep_with(&exp)
}

pub fn sweep_with(exp: &Experiment<'_>) -> Result<SweepReport> {
    let cfg = exp.config();
    let mut points = Vec::new();
    let mut all_runs = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let mut reports = Vec::new();
        for r in 0..cfg.repeats {
            let (runs, warnings) = exp.run_all(alpha, ai, r)?;
            reports.push(exp.report(&runs, warnings));
            all_runs.extend(runs);
        }
        let mut accuracy = BTreeMap::new();
        let mut pearson_by = BTreeMap::new();
        for sel in Selector::ALL {
            let accs: Vec<f64> = reports
                .iter()
                .filter_map(|rep| rep.summary_for(sel).map(|s| s.accuracy))
                .collect();
            if accs.len() == reports.len() {
                accuracy.insert(sel, MeanSd::of(&accs));
            }
            let prs: Vec<f64> = reports
                .iter()
                .filter_map(|rep| rep.summary_for(sel).and_then(|s| s.pearson))
                .collect();
            if !prs.is_empty() {
                pearson_by.insert(sel, MeanSd::of(&prs));
            }
        }
        let pa: Vec<f64> = reports.iter().map(|r| r.predictor_accuracy).collect();
        let mae: Vec<f64> = reports.iter().filter_map(|r| r.smoother_mae).collect();
        points.push(SweepPoint {
            alpha,
            accuracy,
            pearson: pearson_by,
            predictor_accuracy: MeanSd::of(&pa),
            smoother_mae: (!mae.is_empty()).then(|| MeanSd::of(&mae)),
            reports,
        });
    }
    Ok(SweepReport {
        points,
        runs: all_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallModelRow {
    pub alpha: f64,
    pub task_id: String,
    pub reference_accuracy: f64,
    /// Selected-model accuracy per selector, averaged over repeats.
    pub accuracy: BTreeMap<Selector, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallModelReport {
    pub reference_model: String,
    pub candidates: Vec<String>,
    pub rows: Vec<SmallModelRow>,
}

impl SmallModelReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,task_id,selector,accuracy,reference_accuracy")?;
        for r in &self.rows {
            for (sel, acc) in &r.accuracy {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.alpha,
                    r.task_id,
                    sel.as_str(),
                    acc,
                    r.reference_accuracy
                )?;
            }
        }
        Ok(())
    }

    /// Mean over tasks of a selector's accuracy at `alpha`.
    pub fn mean_accuracy(&self, alpha: f64, sel: Selector) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.alpha == alpha)
            .filter_map(|r| r.accuracy.get(&sel).copied())
            .collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    }
}

/// Route among models with at most `cfg.model_filter` parameters and compare
/// against a fixed reference model, which is never a candidate.
pub fn small_model_routing(
    store: &BenchmarkStore,
    cfg: &ExperimentConfig,
    reference_model: &str,
) -> Result<SmallModelReport> {
    let reference = store.model_index(reference_model)?;
    let candidates: Vec<usize> = store
        .models()
        .iter()
        .enumerate()
        .filter(|&(i, m)| i != reference && cfg.model_filter.is_none_or(|max| m.n_params <= max))
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(RouterError::Domain("model filter leaves no candidates".into()));
    }
    let exp = Experiment::with_candidates(store, cfg.clone(), candidates.clone())?;
    let mut rows = Vec::new();
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let mut per_task: BTreeMap<String, (Vec<f64>, BTreeMap<Selector, Vec<f64>>)> = BTreeMap::new();
        for r in 0..cfg.repeats {
            let (runs, _) = exp.run_all(alpha, ai, r)?;
            for run in runs {
                let fold = store.task_index(&run.task_id)?;
                let task = &store.tasks()[fold];
                // Reference accuracy on the same evaluation remainder.
                let seed = derive_seed(cfg.rng_seed, &[1, fold as u64, ai as u64, r as u64]);
                let split = split_task(task.sample_refs().collect(), alpha, cfg.mix_cap, seed)?;
                let ref_acc = split.eval.iter().map(|&i| store.label(i, reference)).sum::<f64>()
                    / split.eval.len() as f64;
                let entry = per_task.entry(run.task_id.clone()).or_default();
                entry.0.push(ref_acc);
                for (&sel, &pick) in &run.chosen {
                    let i = run.candidates.iter().position(|&c| c == pick).expect("candidate");
                    entry.1.entry(sel).or_default().push(run.accuracy[i]);
                }
            }
        }
        for (task_id, (refs, accs)) in per_task {
            rows.push(SmallModelRow {
                alpha,
                task_id,
                reference_accuracy: stats::mean(&refs),
                accuracy: accs.into_iter().map(|(s, v)| (s, stats::mean(&v))).collect(),
            });
        }
    }
    Ok(SmallModelReport {
        reference_model: reference_model.to_string(),
        candidates: candidates
            .iter()
            .map(|&m| store.models()[m].model_id.clone())
            .collect(),
        rows,
    })
}

/// Train/test partition for per-instance routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSplit {
    pub train: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

/// Hold out `holdout_tasks` whole tasks plus a `test_fraction` of every other
/// task as the test set; the rest is the reference (train) set.
pub fn instance_split(
    store: &BenchmarkStore,
    holdout_tasks: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<InstanceSplit> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(RouterError::Domain(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let n_tasks = store.tasks().len();
    if holdout_tasks >= n_tasks {
        return Err(RouterError::Domain("cannot hold out every task".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held: Vec<usize> = index::sample(&mut rng, n_tasks, holdout_tasks).into_vec();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (t, task) in store.tasks().iter().enumerate() {
        let members: Vec<SampleRef> = task.sample_refs().collect();
        if held.contains(&t) {
            test.extend(members);
            continue;
        }
        let n_test = ((test_fraction * members.len() as f64).round() as usize).min(members.len());
        let mut picked = vec![false; members.len()];
        for i in index::sample(&mut rng, members.len(), n_test) {
            picked[i] = true;
        }
        for (i, s) in members.into_iter().enumerate() {
            if picked[i] {
                test.push(s);
            } else {
                train.push(s);
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(RouterError::Domain("split leaves an empty train or test set".into()));
    }
    Ok(InstanceSplit { train, test })
}

/// Mean cosine distance of each test sample to its `knn` nearest train samples.
pub fn train_distances(
    store: &BenchmarkStore,
    train: &[SampleRef],
    test: &[SampleRef],
    knn: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    par::map_slice(exec, test, |&i| {
        let nn = store.knn_among(&store.sample(i).embedding, knn, train)?;
        Ok(nn.iter().map(|n| n.distance).sum::<f64>() / nn.len() as f64)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceSubset {
    pub kept: Vec<SampleRef>,
    pub retained_fraction: f64,
}

/// Test samples whose mean distance to their nearest train samples is below
/// `c`.
pub fn subset_by_distance(
    store: &BenchmarkStore,
    train: &[SampleRef],
    test: &[SampleRef],
    c: f64,
    knn: usize,
) -> Result<DistanceSubset> {
    if c.is_nan() || c <= 0.0 {
        return Err(RouterError::Domain(format!("threshold {c} must be positive")));
    }
    let dists = train_distances(store, train, test, knn, Execution::Parallel)?;
    Ok(filter_by_distance(test, &dists, c))
}

pub fn filter_by_distance(test: &[SampleRef], dists: &[f64], c: f64) -> DistanceSubset {
    let kept: Vec<SampleRef> = test
        .iter()
        .zip(dists)
        .filter(|(_, &d)| d < c)
        .map(|(&i, _)| i)
        .collect();
    let retained_fraction = if test.is_empty() { 0.0 } else { kept.len() as f64 / test.len() as f64 };
    DistanceSubset {
        kept,
        retained_fraction,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub sample: SampleRef,
    pub chosen_model: String,
    /// Label of the chosen model on this input.
    pub quality: f64,
    /// Best label any candidate achieves on this input.
    pub best_quality: f64,
    pub distance: f64,
}

/// Route every test input with its per-point kNN score over the train set.
pub fn per_instance_routing(
    store: &BenchmarkStore,
    split: &InstanceSplit,
    k: usize,
    knn_distance: usize,
    exec: Execution,
) -> Result<Vec<InstanceOutcome>> {
    let all: Vec<usize> = (0..store.models().len()).collect();
    let dists = train_distances(store, &split.train, &split.test, knn_distance, exec)?;
    par::map_range(exec, split.test.len(), |j| {
        let i = split.test[j];
        let nn = store.knn_among(&store.sample(i).embedding, k, &split.train)?;
        let g: Vec<f64> = all
            .iter()
            .map(|&m| crate::predictor::mean_label(store, m, &nn))
            .collect();
        let best = argmax_model(store, &all, |m| g[m]);
        let labels = &store.sample(i).labels;
        Ok(InstanceOutcome {
            sample: i,
            chosen_model: store.models()[best].model_id.clone(),
            quality: labels[best],
            best_quality: labels.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            distance: dists[j],
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    pub threshold: f64,
    pub retained_fraction: f64,
    pub mean_quality: Option<f64>,
}

/// Mean routed quality on the subsets `distance < c` for each threshold.
pub fn subset_quality(outcomes: &[InstanceOutcome], thresholds: &[f64]) -> Vec<SubsetRow> {
    thresholds
        .iter()
        .map(|&c| {
            let kept: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.distance < c)
                .map(|o| o.quality)
                .collect();
            SubsetRow {
                threshold: c,
                retained_fraction: if outcomes.is_empty() { 0.0 } else { kept.len() as f64 / outcomes.len() as f64 },
                mean_quality: (!kept.is_empty()).then(|| stats::mean(&kept)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub task_id: String,
    pub alpha: f64,
    pub repeat: usize,
    pub u: f64,
    pub pearson: BTreeMap<Selector, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
    /// Runs where no score had a defined correlation.
    pub skipped: usize,
    /// Individual (run, score) correlations that were undefined.
    pub undefined: usize,
}

impl CorrelationTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let sels: Vec<Selector> = Selector::ALL
            .into_iter()
            .filter(|s| self.rows.iter().any(|r| r.pearson.contains_key(s)))
            .collect();
        write!(w, "task_id,alpha,repeat,u")?;
        for s in &sels {
            write!(w, ",{}", s.as_str())?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{},{},{}", r.task_id, r.alpha, r.repeat, r.u)?;
            for s in &sels {
                write!(w, ",{}", opt(r.pearson.get(s).copied()))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Pair each run's dataset distance with the Pearson correlation between its
/// scores and the true model accuracies.
pub fn distance_correlation_table(runs: &[FoldRun]) -> CorrelationTable {
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut undefined = 0;
    for run in runs {
        let mut pr = BTreeMap::new();
        for (&sel, scores) in &run.scores {
            match pearson(scores, &run.accuracy) {
                Ok(v) => {
                    pr.insert(sel, v);
                }
                Err(_) => undefined += 1,
            }
        }
        if pr.is_empty() {
            skipped += 1;
            continue;
        }
        rows.push(CorrelationRow {
            task_id: run.task_id.clone(),
            alpha: run.alpha,
            repeat: run.repeat,
            u: run.u,
            pearson: pr,
        });
    }
    CorrelationTable {
        rows,
        skipped,
        undefined,
    }
}
