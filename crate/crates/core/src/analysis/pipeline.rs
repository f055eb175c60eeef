// SPDX-License-Identifier: MIT OR Apache-2.0

//! The standard extract → gated-search pipeline and the ablations that
//! re-run it with one ingredient changed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_three_way, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    extract_vectors, grid_search, EvalMode, EvalReport, EvalTask, Evaluator, ExperimentConfig,
    GridOutcome, Part, PromptRecipe, RecipeEvaluator,
};
use crate::model::ToyModel;
use crate::seed;
use crate::steering::{Pooling, SteeringVector};

/// A model, task, configuration and split, with a shared generation cache.
pub struct SteeringPipeline<'a> {
    evaluator: Evaluator<'a>,
    config: ExperimentConfig,
    split: SplitSpec,
}

/// Vectors and gated-search result of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub pooling: Pooling,
    pub compute_size: usize,
    pub vectors: BTreeMap<usize, SteeringVector>,
    pub grid: GridOutcome,
}

impl<'a> SteeringPipeline<'a> {
    /// Split the task corpus with `config.seed`.
    pub fn new(model: &'a ToyModel, task: &'a EvalTask, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        task.require_language(&config.source_lang)?;
        task.require_language(&config.target_lang)?;
        let split = split_three_way(&task.corpus, config.seed)?;
        Ok(Self {
            evaluator: Evaluator::new(model, task)?,
            config,
            split,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn split(&self) -> &SplitSpec {
        &self.split
    }

    pub fn evaluator(&self) -> &Evaluator<'a> {
        &self.evaluator
    }

    /// Vectors from `compute_ids` under `pooling`, then the gated search.
    pub fn run_with(&self, pooling: Pooling, compute_ids: &[String]) -> Result<PipelineRun> {
        let c = &self.config;
        let vectors = extract_vectors(
            self.evaluator.model(),
            self.evaluator.task(),
            compute_ids,
            &c.source_lang,
            &c.target_lang,
            &c.layer_set(),
            c.k,
            pooling,
            c.seed,
        )?;
        let re = RecipeEvaluator::new(
            &self.evaluator,
            PromptRecipe::baseline(&c.source_lang, &c.target_lang, c.k),
            &self.split.val_ids,
            &self.split.test_ids,
            EvalMode::Ours,
        )?;
        let grid = grid_search(&re, &vectors, c, EvalMode::Ours)?;
        Ok(PipelineRun {
            pooling,
            compute_size: compute_ids.len(),
            vectors,
            grid,
        })
    }

    /// The configured pooling over the full compute part.
    pub fn run(&self) -> Result<PipelineRun> {
        self.run_with(self.config.pooling, &self.split.compute_ids)
    }

    /// Unsteered baseline-recipe test report.
    pub fn baseline_test(&self) -> Result<EvalReport> {
        let c = &self.config;
        self.evaluator.evaluate(
            &self.split.test_ids,
            &PromptRecipe::baseline(&c.source_lang, &c.target_lang, c.k),
            None,
            EvalMode::B,
            Part::Test,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub fraction: f64,
    pub compute_size: usize,
    pub test_acc: f64,
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub language: String,
    pub task: String,
    pub base_test_acc: f64,
    pub points: Vec<SensitivityPoint>,
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

/// The compute ids used at `fraction`: a prefix of a seeded shuffle,
/// returned in original split order.
pub fn fraction_subset(compute_ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = compute_ids.len();
    let take = (fraction * n as f64).floor() as usize;
    if take == 0 {
        return Err(Error::arg(format!(
            "fraction {fraction} of {n} compute examples is empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, "sensitivity", &[]));
    let mut kept = order[..take].to_vec();
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| compute_ids[i].clone()).collect())
}

/// Test accuracy of the gated pipeline as the compute set shrinks.
pub fn sensitivity_sweep(
    pipeline: &SteeringPipeline<'_>,
    fractions: &[f64],
    seed: u64,
) -> Result<SensitivityCurve> {
    if fractions.is_empty() {
        return Err(Error::arg("no fractions given"));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("fractions must be strictly ascending"));
    }
    let subsets = fractions
        .iter()
        .map(|&f| fraction_subset(&pipeline.split().compute_ids, f, seed))
        .collect::<Result<Vec<_>>>()?;
    let points = fractions
        .par_iter()
        .zip(subsets.par_iter())
        .map(|(&fraction, ids)| {
            let run = pipeline.run_with(pipeline.config().pooling, ids)?;
            Ok(SensitivityPoint {
                fraction,
                compute_size: ids.len(),
                test_acc: run.grid.test.accuracy,
                gated: run.grid.gated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base = pipeline.baseline_test()?;
    Ok(SensitivityCurve {
        language: pipeline.config().target_lang.clone(),
        task: base.task.clone(),
        base_test_acc: base.accuracy,
        points,
    })
}

/// Side-by-side mean- and last-token pooling results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingAblation {
    pub language: String,
    pub task: String,
    pub baseline: f64,
    pub mean: f64,
    pub mean_delta: f64,
    pub last: f64,
    pub last_delta: f64,
    pub mean_gated: bool,
    pub last_gated: bool,
}

/// Run the full pipeline once per pooling mode on the same compute part.
pub fn pooling_ablation(pipeline: &SteeringPipeline<'_>) -> Result<PoolingAblation> {
    let ids = &pipeline.split().compute_ids;
    let runs = [Pooling::Mean, Pooling::Last]
        .par_iter()
        .map(|&p| pipeline.run_with(p, ids))
        .collect::<Result<Vec<_>>>()?;
    let base = pipeline.baseline_test()?;
    let (mean, last) = (&runs[0].grid, &runs[1].grid);
    Ok(PoolingAblation {
        language: pipeline.config().target_lang.clone(),
        task: base.task.clone(),
        baseline: base.accuracy,
        mean: mean.test.accuracy,
        mean_delta: mean.test.accuracy - base.accuracy,
        last: last.test.accuracy,
        last_delta: last.test.accuracy - base.accuracy,
        mean_gated: mean.gated,
        last_gated: last.gated,
    })
}
