// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gated grid search and the baselines built around it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    EvalMode, EvalReport, Evaluator, Part, PlanDescriptor, PlanEvaluator, PromptRecipe,
    RecipeEvaluator,
};
use crate::error::{Error, Result};
use crate::seed;
use crate::steering::{Pooling, PositionMode, SteeringPlan, SteeringVector, VectorMeta};

fn default_pooling() -> Pooling {
    Pooling::Mean
}

/// Search space and language pair for one (language, task) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub source_lang: String,
    pub target_lang: String,
    pub layers: Vec<usize>,
    pub alphas: Vec<f32>,
    pub positions: Vec<PositionMode>,
    /// Demonstrations per prompt and blocks per extraction text.
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
}

impl ExperimentConfig {
    /// Layers {5..30 step 5}, α ∈ {0.5, 1, 2, 3}, all position modes, k = 6.
    pub fn with_defaults(task: &str, source: &str, target: &str) -> Self {
        Self {
            task: task.to_string(),
            source_lang: source.to_string(),
            target_lang: target.to_string(),
            layers: vec![5, 10, 15, 20, 25, 30],
            alphas: vec![0.5, 1.0, 2.0, 3.0],
            positions: PositionMode::ALL.to_vec(),
            k: 6,
            seed: 0,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.alphas.is_empty() || self.positions.is_empty() {
            return Err(Error::arg("layer, alpha and position grids must be non-empty"));
        }
        if self.layers.contains(&0) {
            return Err(Error::arg("layers are 1-based"));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::arg("alphas must be finite"));
        }
        Ok(())
    }

    pub fn layer_set(&self) -> BTreeSet<usize> {
        self.layers.iter().copied().collect()
    }

    /// Every (layer, alpha, mode) in grid order, duplicates removed.
    pub fn configs(&self) -> Vec<(usize, f32, PositionMode)> {
        let mut out = Vec::new();
        for &l in &self.layer_set() {
            for &a in &self.alphas {
                for &m in &self.positions {
                    if !out.contains(&(l, a, m)) {
                        out.push((l, a, m));
                    }
                }
            }
        }
        out
    }
}

/// Validation result of one grid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub layer: usize,
    pub alpha: f32,
    pub position: PositionMode,
    pub val_correct: usize,
    pub val_total: usize,
    pub val_acc: f64,
}

impl GridRow {
    fn beats(&self, correct: usize, total: usize) -> bool {
        (self.val_correct as u128) * (total as u128) > (correct as u128) * (self.val_total as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub mode: EvalMode,
    pub baseline_val: EvalReport,
    pub val_table: Vec<GridRow>,
    /// The selected configuration, or `None` when no configuration beat
    /// the baseline on validation.
    pub best: Option<PlanDescriptor>,
    /// The winner's test report, or the baseline test report when no
    /// configuration passed the gate.
    pub test: EvalReport,
    pub gated: bool,
}

impl GridOutcome {
    pub fn flag(&self) -> Option<&'static str> {
        (!self.gated).then_some("no gated config")
    }

    pub fn best_row(&self) -> Option<&GridRow> {
        let b = self.best?;
        self.val_table
            .iter()
            .find(|r| r.layer == b.layer && r.alpha == b.alpha && r.position == b.position)
    }
}

/// Preference between two rows that both passed the gate: higher val
/// accuracy, then lower α, lower layer, earlier position mode.
fn prefer(a: &GridRow, b: &GridRow) -> Ordering {
    let lhs = (a.val_correct as u128) * (b.val_total as u128);
    let rhs = (b.val_correct as u128) * (a.val_total as u128);
    rhs.cmp(&lhs)
        .then(a.alpha.total_cmp(&b.alpha))
        .then(a.layer.cmp(&b.layer))
        .then(a.position.cmp(&b.position))
}

/// The row selected from a validation table, given the baseline's counts.
pub fn select_best(rows: &[GridRow], baseline_correct: usize, baseline_total: usize) -> Option<&GridRow> {
    rows.iter()
        .filter(|r| r.beats(baseline_correct, baseline_total))
        .min_by(|a, b| prefer(a, b))
}

/// Evaluate every grid configuration on validation, keep those strictly
/// above the unsteered baseline, and test only the preferred survivor.
pub fn grid_search(
    evaluator: &dyn PlanEvaluator,
    vectors: &BTreeMap<usize, SteeringVector>,
    config: &ExperimentConfig,
    mode: EvalMode,
) -> Result<GridOutcome> {
    config.validate()?;
    for l in config.layer_set() {
        if !vectors.contains_key(&l) {
            return Err(Error::arg(format!("no steering vector for grid layer {l}")));
        }
    }
    let baseline_val = evaluator.evaluate_part(Part::Val, None)?;
    let configs = config.configs();
    let plans = configs
        .iter()
        .map(|&(l, a, m)| SteeringPlan::new(vectors[&l].clone(), a, m))
        .collect::<Result<Vec<_>>>()?;
    let val_table = plans
        .par_iter()
        .map(|plan| {
            let r = evaluator.evaluate_part(Part::Val, Some(plan))?;
            Ok(GridRow {
                layer: plan.layer,
                alpha: plan.scale,
                position: plan.position_mode,
                val_correct: r.correct,
                val_total: r.total,
                val_acc: r.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&val_table, baseline_val.correct, baseline_val.total).cloned();
    let (test, best) = match best {
        Some(row) => {
            let idx = val_table.iter().position(|r| *r == row).expect("row from table");
            let report = evaluator.evaluate_part(Part::Test, Some(&plans[idx]))?;
            log::info!(
                "selected layer {} alpha {} {} (val {:.4} vs baseline {:.4})",
                row.layer,
                row.alpha,
                row.position,
                row.val_acc,
                baseline_val.accuracy
            );
            (report.relabeled(mode), Some(PlanDescriptor::from(&plans[idx])))
        }
        None => {
            log::info!("no configuration beat the baseline on validation");
            (evaluator.evaluate_part(Part::Test, None)?.relabeled(mode), None)
        }
    };
    Ok(GridOutcome {
        mode,
        baseline_val,
        val_table,
        gated: best.is_some(),
        best,
        test,
    })
}

/// Seeded standard-normal vectors, one per layer, shaped like `like`.
pub fn random_vectors(
    like: &BTreeMap<usize, SteeringVector>,
    seed: u64,
) -> BTreeMap<usize, SteeringVector> {
    like.iter()
        .map(|(&l, v)| {
            let mut rng = seed::rng(seed, "random-vector", &[l as u64]);
            let values = (0..v.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            (
                l,
                SteeringVector {
                    layer: l,
                    values,
                    meta: VectorMeta {
                        source_lang: "random".into(),
                        seed,
                        ..v.meta.clone()
                    },
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    B,
    #[serde(rename = "MFS")]
    Mfs,
    #[serde(rename = "OR")]
    Oracle,
    Random,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b" | "baseline" => Ok(Self::B),
            "mfs" => Ok(Self::Mfs),
            "or" | "oracle" => Ok(Self::Oracle),
            "random" => Ok(Self::Random),
            _ => Err(Error::arg(format!("unknown baseline {s:?} (b|mfs|oracle|random)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub val: EvalReport,
    pub test: EvalReport,
    /// Present for the random-vector baseline.
    pub grid: Option<GridOutcome>,
}

/// Run one baseline on the val and test parts. The random baseline needs
/// `vectors` only for their shapes and runs the full gated search.
pub fn run_baseline(
    kind: BaselineKind,
    evaluator: &Evaluator<'_>,
    val_ids: &[String],
    test_ids: &[String],
    config: &ExperimentConfig,
    vectors: Option<&BTreeMap<usize, SteeringVector>>,
) -> Result<BaselineOutcome> {
    let (src, tgt, k) = (config.source_lang.as_str(), config.target_lang.as_str(), config.k);
    let (recipe, mode) = match kind {
        BaselineKind::B | BaselineKind::Random => (PromptRecipe::baseline(src, tgt, k), EvalMode::B),
        BaselineKind::Oracle => (PromptRecipe::oracle(src, tgt, k), EvalMode::Oracle),
        BaselineKind::Mfs => (
            PromptRecipe::multilingual(evaluator.task().corpus.languages(), src, tgt, k)?,
            EvalMode::Mfs,
        ),
    };
    if kind == BaselineKind::Random {
        let like = vectors.ok_or_else(|| Error::arg("random baseline needs vector shapes"))?;
        let random = random_vectors(like, config.seed);
        let re = RecipeEvaluator::new(evaluator, recipe, val_ids, test_ids, EvalMode::Random)?;
        let grid = grid_search(&re, &random, config, EvalMode::Random)?;
        return Ok(BaselineOutcome {
            kind,
            val: grid.baseline_val.clone(),
            test: grid.test.clone(),
            grid: Some(grid),
        });
    }
    let val = evaluator.evaluate(val_ids, &recipe, None, mode, Part::Val)?;
    let test = evaluator.evaluate(test_ids, &recipe, None, mode, Part::Test)?;
    Ok(BaselineOutcome {
        kind,
        val,
        test,
        grid: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub report: EvalReport,
    pub baseline_acc: f64,
    pub ours_acc: f64,
    /// Set when the transferred accuracy falls outside
    /// `[min(B, Ours), max(B, Ours)]`.
    pub transfer_failure: bool,
}

/// Apply a plan selected on one task, unchanged, to another task's test
/// part with baseline demonstrations.
pub fn cross_task_eval(
    plan: &SteeringPlan,
    evaluator: &Evaluator<'_>,
    test_ids: &[String],
    source: &str,
    k: usize,
    baseline_acc: f64,
    ours_acc: f64,
) -> Result<TransferOutcome> {
    let target = &plan.vector.meta.target_lang;
    evaluator.task().require_language(target)?;
    if plan.vector.dim() != evaluator.model().hidden_size() {
        return Err(Error::arg(format!(
            "vector dim {} does not match model hidden size {}",
            plan.vector.dim(),
            evaluator.model().hidden_size()
        )));
    }
    let recipe = PromptRecipe::baseline(source, target, k);
    let report = evaluator.evaluate(test_ids, &recipe, Some(plan), EvalMode::Ct, Part::Test)?;
    let (lo, hi) = if baseline_acc <= ours_acc {
        (baseline_acc, ours_acc)
    } else {
        (ours_acc, baseline_acc)
    };
    let transfer_failure = report.accuracy < lo || report.accuracy > hi;
    if transfer_failure {
        log::warn!(
            "transfer accuracy {:.4} outside [{lo:.4}, {hi:.4}]",
            report.accuracy
        );
    }
    Ok(TransferOutcome {
        report,
        baseline_acc,
        ours_acc,
        transfer_failure,
    })
}
