// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt evaluation, gated grid search, baselines and cross-task transfer.

mod answer;
mod grid;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_compute_samples_from, render_prompt, DialectTestbed, ParallelCorpus, ParallelExample,
    TaskTemplate,
};
use crate::error::{Error, Result};
use crate::model::{TokenId, ToyModel};
use crate::seed::sha256_hex;
use crate::steering::{
    compute_language_vector, generate_steered, pooled_hidden_states_multi, PositionMode, Pooling,
    SteeringPlan, SteeringVector,
};

pub use answer::{answers_match, extract_answer, numbers_match, LABELS};
pub use grid::{
    cross_task_eval, grid_search, random_vectors, run_baseline, select_best, BaselineKind,
    BaselineOutcome, ExperimentConfig, GridOutcome, GridRow, TransferOutcome,
};
pub use report::{summary_rows, write_csv, write_json, SummaryRow};

/// Method labels used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvalMode {
    B,
    #[serde(rename = "MFS")]
    Mfs,
    Ours,
    #[serde(rename = "OR")]
    Oracle,
    Random,
    #[serde(rename = "CT")]
    Ct,
}

impl EvalMode {
    pub fn label(self) -> &'static str {
        match self {
            EvalMode::B => "B",
            EvalMode::Mfs => "MFS",
            EvalMode::Ours => "Ours",
            EvalMode::Oracle => "OR",
            EvalMode::Random => "Random",
            EvalMode::Ct => "CT",
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Which split part a report was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Val,
    Test,
}

/// Languages used to render one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecipe {
    /// One entry per demonstration, in prompt order.
    pub demo_langs: Vec<String>,
    pub question_lang: String,
    /// Language of the reasoning text in demonstrations.
    pub cot_lang: String,
}

impl PromptRecipe {
    /// Source-language demonstrations, target-language question.
    pub fn baseline(source: &str, target: &str, k: usize) -> Self {
        Self {
            demo_langs: vec![source.to_string(); k],
            question_lang: target.to_string(),
            cot_lang: source.to_string(),
        }
    }

    /// Target-language demonstrations and question.
    pub fn oracle(source: &str, target: &str, k: usize) -> Self {
        Self {
            demo_langs: vec![target.to_string(); k],
            question_lang: target.to_string(),
            cot_lang: source.to_string(),
        }
    }

    /// Demonstrations cycle through `languages` starting at the language
    /// after `target`.
    pub fn multilingual(languages: &[String], source: &str, target: &str, k: usize) -> Result<Self> {
        if languages.len() < 2 {
            return Err(Error::arg(
                "multilingual demonstrations need at least two languages",
            ));
        }
        let start = languages
            .iter()
            .position(|l| l == target)
            .ok_or_else(|| Error::arg(format!("target language {target:?} not in language list")))?;
        let demo_langs = (0..k)
            .map(|i| languages[(start + 1 + i) % languages.len()].clone())
            .collect();
        Ok(Self {
            demo_langs,
            question_lang: target.to_string(),
            cot_lang: source.to_string(),
        })
    }
}

/// Everything needed to prompt a model on one task.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub name: String,
    pub corpus: ParallelCorpus,
    /// Demonstrations are the first `k` examples of this pool.
    pub demos: ParallelCorpus,
    pub template: TaskTemplate,
    pub max_new_tokens: usize,
}

impl EvalTask {
    /// The reversal task of a dialect testbed.
    pub fn from_testbed(tb: &DialectTestbed) -> Self {
        Self {
            name: "toy-reverse".into(),
            corpus: tb.corpus.clone(),
            demos: tb.demos.clone(),
            template: tb.template.clone(),
            max_new_tokens: tb.spec.question_len + 4,
        }
    }

    /// The copy task of a dialect testbed.
    pub fn copy_from_testbed(tb: &DialectTestbed) -> Self {
        Self {
            name: "toy-copy".into(),
            corpus: tb.copy_corpus.clone(),
            demos: tb.copy_demos.clone(),
            template: tb.copy_template.clone(),
            max_new_tokens: tb.spec.question_len + 4,
        }
    }

    pub fn require_language(&self, lang: &str) -> Result<()> {
        if !self.corpus.has_language(lang) || !self.demos.has_language(lang) {
            return Err(Error::arg(format!(
                "language {lang:?} is not available for task {}",
                self.name
            )));
        }
        Ok(())
    }
}

/// Compact description of a steering configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanDescriptor {
    pub layer: usize,
    pub alpha: f32,
    pub position: PositionMode,
}

impl From<&SteeringPlan> for PlanDescriptor {
    fn from(p: &SteeringPlan) -> Self {
        Self {
            layer: p.layer,
            alpha: p.scale,
            position: p.position_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prompt_hash: String,
    pub generated: String,
    pub extracted: Option<String>,
    pub gold: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub task: String,
    pub language: String,
    pub part: Part,
    pub plan: Option<PlanDescriptor>,
    pub records: Vec<EvalRecord>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl EvalReport {
    fn from_records(
        mode: EvalMode,
        task: &str,
        language: &str,
        part: Part,
        plan: Option<PlanDescriptor>,
        records: Vec<EvalRecord>,
    ) -> Self {
        let correct = records.iter().filter(|r| r.correct).count();
        let total = records.len();
        Self {
            mode,
            task: task.to_string(),
            language: language.to_string(),
            part,
            plan,
            records,
            correct,
            total,
            accuracy: ratio(correct, total),
        }
    }

    /// Same report under a different label.
    pub fn relabeled(mut self, mode: EvalMode) -> Self {
        self.mode = mode;
        self
    }

    /// `self.correct / self.total > other.correct / other.total`, exactly.
    pub fn beats(&self, other: &EvalReport) -> bool {
        (self.correct as u128) * (other.total as u128) > (other.correct as u128) * (self.total as u128)
    }
}

pub(crate) fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Runs prompts through a model, caching generations by
/// `(model, prompt, plan)`.
pub struct Evaluator<'a> {
    model: &'a ToyModel,
    task: &'a EvalTask,
    stop: Vec<TokenId>,
    cache: Mutex<HashMap<(String, String), String>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a ToyModel, task: &'a EvalTask) -> Result<Self> {
        let stop = model
            .vocab()
            .tokenize(crate::corpus::BLOCK_SEPARATOR)
            .ok()
            .filter(|t| t.len() == 1)
            .unwrap_or_default();
        Ok(Self {
            model,
            task,
            stop,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &ToyModel {
        self.model
    }

    pub fn task(&self) -> &EvalTask {
        self.task
    }

    pub fn cached_generations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Evaluate every id under `recipe` and an optional plan.
    pub fn evaluate(
        &self,
        ids: &[String],
        recipe: &PromptRecipe,
        plan: Option<&SteeringPlan>,
        mode: EvalMode,
        part: Part,
    ) -> Result<EvalReport> {
        if ids.is_empty() {
            return Err(Error::arg("cannot evaluate an empty split part"));
        }
        for lang in recipe.demo_langs.iter().chain([&recipe.question_lang, &recipe.cot_lang]) {
            self.task.require_language(lang)?;
        }
        if let Some(p) = plan {
            if p.layer == 0 || p.layer > self.model.num_layers() {
                return Err(Error::arg(format!(
                    "plan layer {} outside [1, {}]",
                    p.layer,
                    self.model.num_layers()
                )));
            }
        }
        let k = recipe.demo_langs.len();
        if k > self.task.demos.len() {
            return Err(Error::arg(format!(
                "{k} demonstrations requested, pool has {}",
                self.task.demos.len()
            )));
        }
        let demos: Vec<(&ParallelExample, &str)> = self.task.demos.examples()[..k]
            .iter()
            .zip(&recipe.demo_langs)
            .map(|(e, l)| (e, l.as_str()))
            .collect();
        let plan_key = plan.map_or_else(|| "none".to_string(), SteeringPlan::digest);
        let kind = self.task.corpus.task_kind();
        let records = ids
            .par_iter()
            .map(|id| {
                let ex = self.task.corpus.get(id)?;
                let prompt = render_prompt(
                    self.model.vocab(),
                    &self.task.template,
                    &demos,
                    (ex, &recipe.question_lang),
                    &recipe.cot_lang,
                )?;
                let prompt_hash = sha256_hex(prompt.text.as_bytes());
                let generated = self.generate_cached(&prompt, &prompt_hash, plan, &plan_key)?;
                let gold = ex.text(&recipe.question_lang)?.answer.clone();
                let extracted = extract_answer(&generated, kind);
                let correct = extracted
                    .as_deref()
                    .is_some_and(|e| answers_match(e, &gold, kind));
                Ok(EvalRecord {
                    id: id.clone(),
                    prompt_hash,
                    generated,
                    extracted,
                    gold,
                    correct,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport::from_records(
            mode,
            &self.task.name,
            &recipe.question_lang,
            part,
            plan.map(PlanDescriptor::from),
            records,
        ))
    }

    fn generate_cached(
        &self,
        prompt: &crate::corpus::RenderedPrompt,
        prompt_hash: &str,
        plan: Option<&SteeringPlan>,
        plan_key: &str,
    ) -> Result<String> {
        let key = (prompt_hash.to_string(), plan_key.to_string());
        if let Some(text) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(text.clone());
        }
        let out = generate_steered(self.model, prompt, plan, self.task.max_new_tokens, &self.stop)?;
        let text = self.model.vocab().detokenize(&out)?;
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| text.clone());
        Ok(text)
    }
}

/// Scores a steering plan on the validation or test part. Grid search
/// only talks to this trait so it can be exercised with stubs.
pub trait PlanEvaluator: Sync {
    fn evaluate_part(&self, part: Part, plan: Option<&SteeringPlan>) -> Result<EvalReport>;
}

/// An [`Evaluator`] bound to one recipe and one validation/test split.
pub struct RecipeEvaluator<'e, 'a> {
    evaluator: &'e Evaluator<'a>,
    recipe: PromptRecipe,
    val_ids: Vec<String>,
    test_ids: Vec<String>,
    mode: EvalMode,
}

impl<'e, 'a> RecipeEvaluator<'e, 'a> {
    pub fn new(
        evaluator: &'e Evaluator<'a>,
        recipe: PromptRecipe,
        val_ids: &[String],
        test_ids: &[String],
        mode: EvalMode,
    ) -> Result<Self> {
        let val: BTreeSet<&String> = val_ids.iter().collect();
        if let Some(dup) = test_ids.iter().find(|id| val.contains(id)) {
            return Err(Error::arg(format!("id {dup} is in both val and test parts")));
        }
        Ok(Self {
            evaluator,
            recipe,
            val_ids: val_ids.to_vec(),
            test_ids: test_ids.to_vec(),
            mode,
        })
    }
}

impl PlanEvaluator for RecipeEvaluator<'_, '_> {
    fn evaluate_part(&self, part: Part, plan: Option<&SteeringPlan>) -> Result<EvalReport> {
        let ids = match part {
            Part::Val => &self.val_ids,
            Part::Test => &self.test_ids,
        };
        let mode = if plan.is_some() { self.mode } else { EvalMode::B };
        self.evaluator.evaluate(ids, &self.recipe, plan, mode, part)
    }
}

/// Steering vectors for every layer in `layers`, computed from extraction
/// texts over `compute_ids` in one forward pass per text.
#[allow(clippy::too_many_arguments)]
pub fn extract_vectors(
    model: &ToyModel,
    task: &EvalTask,
    compute_ids: &[String],
    source: &str,
    target: &str,
    layers: &BTreeSet<usize>,
    k: usize,
    pooling: Pooling,
    seed: u64,
) -> Result<BTreeMap<usize, SteeringVector>> {
    let samples =
        build_compute_samples_from(&task.corpus, &task.template, compute_ids, source, target, k, seed)?;
    let src: Vec<String> = samples.iter().map(|s| s.source_text.clone()).collect();
    let tgt: Vec<String> = samples.iter().map(|s| s.target_text.clone()).collect();
    let s = pooled_hidden_states_multi(model, &src, source, layers, pooling)?;
    let t = pooled_hidden_states_multi(model, &tgt, target, layers, pooling)?;
    layers
        .iter()
        .map(|l| {
            let mut v = compute_language_vector(&s[l], &t[l])?;
            v.meta.task = task.name.clone();
            v.meta.seed = seed;
            Ok((*l, v))
        })
        .collect()
}

/// Mean fraction of dialect symbols in each generation that belong to
/// `lang`'s token block.
pub fn dialect_output_rate(tb: &DialectTestbed, report: &EvalReport, lang: &str) -> f64 {
    if report.records.is_empty() {
        return 0.0;
    }
    let sum: f64 = report
        .records
        .iter()
        .map(|r| tb.dialect_rate(&r.generated, lang))
        .sum();
    sum / report.records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs() -> Vec<String> {
        ["en", "xa", "xb", "xc"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn multilingual_round_robin() {
        let r = PromptRecipe::multilingual(&langs(), "en", "xb", 6).unwrap();
        assert_eq!(r.demo_langs, vec!["xc", "en", "xa", "xb", "xc", "en"]);
        assert_eq!(r.cot_lang, "en");
        assert!(PromptRecipe::multilingual(&langs()[..1], "en", "en", 2).is_err());
    }

    #[test]
    fn exact_comparison_of_accuracies() {
        let rep = |c, t| EvalReport::from_records(EvalMode::B, "t", "xa", Part::Val, None, {
            (0..t)
                .map(|i| EvalRecord {
                    id: format!("{i}"),
                    prompt_hash: String::new(),
                    generated: String::new(),
                    extracted: None,
                    gold: String::new(),
                    correct: i < c,
                })
                .collect()
        });
        assert!(rep(2, 3).beats(&rep(1, 2)));
        assert!(!rep(1, 3).beats(&rep(2, 6)));
        assert_eq!(rep(2, 6).accuracy, 2.0 / 6.0);
    }
}
