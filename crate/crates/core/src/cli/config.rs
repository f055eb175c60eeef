// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_parallel_corpus, synth_dialect_corpus, DialectSpec, DialectTestbed, TaskTemplate};
use crate::evaluation::{EvalTask, ExperimentConfig};
use crate::model::{ModelConfig, TrainOptions};
use crate::steering::{Pooling, PositionMode};

/// Architecture of the toy model; the vocabulary size comes from the
/// dialect testbed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelSpec {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_size: 64,
            num_heads: 4,
            max_seq_len: 80,
        }
    }
}

/// Dialect testbed, model shape and optimizer settings for `train-toy`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    /// Defaults to the standard four-dialect testbed at the run seed.
    #[serde(default)]
    pub dialects: Option<DialectSpec>,
    #[serde(default)]
    pub model: ToyModelSpec,
    #[serde(default)]
    pub train: Option<TrainOptions>,
}

impl ToySpec {
    pub fn dialect_spec(&self, seed: u64) -> DialectSpec {
        self.dialects.clone().unwrap_or_else(|| DialectSpec::testbed(seed))
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        self.train.clone().unwrap_or(TrainOptions {
            steps: 2000,
            learn_rate: 3e-3,
            batch_size: 8,
            seed,
        })
    }

    pub fn model_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            num_layers: self.model.num_layers,
            hidden_size: self.model.hidden_size,
            num_heads: self.model.num_heads,
            vocab_size,
            max_seq_len: self.model.max_seq_len,
            seed,
        }
    }
}

/// A task backed by corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    pub name: String,
    pub corpus: PathBuf,
    pub demos: PathBuf,
    #[serde(default)]
    pub template: Option<TaskTemplate>,
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
}

fn default_max_new() -> usize {
    64
}

fn default_source() -> String {
    "en".into()
}

fn default_alphas() -> Vec<f32> {
    vec![0.5, 1.0, 2.0, 3.0]
}

fn default_positions() -> Vec<PositionMode> {
    PositionMode::ALL.to_vec()
}

fn default_pooling() -> Pooling {
    Pooling::Mean
}

/// Everything a subcommand needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub toy: ToySpec,
    /// Corpus-backed tasks; when empty the toy testbed's tasks are used.
    #[serde(default)]
    pub tasks: Vec<TaskSource>,
    /// Restrict evaluation subcommands to these task names.
    #[serde(default)]
    pub select_tasks: Vec<String>,
    #[serde(default = "default_source")]
    pub source_lang: String,
    /// Defaults to every corpus language except the source.
    #[serde(default)]
    pub targets: Vec<String>,
    /// Defaults to {5, 10, ..., 30} within the model's depth, or every
    /// layer for models shallower than 5.
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f32>,
    #[serde(default = "default_positions")]
    pub positions: Vec<PositionMode>,
    /// Defaults to the testbed's shot count for toy tasks, 6 otherwise.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    #[serde(default)]
    pub cluster_layer: Option<usize>,
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    /// Read a config file, or the `config` member of a manifest.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("artifacts").is_some() => inner.clone(),
            _ => value,
        };
        let mut cfg: RunConfig = serde_json::from_value(value)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = &mut self.model {
            fix(m);
        }
        for t in &mut self.tasks {
            fix(&mut t.corpus);
            fix(&mut t.demos);
        }
    }

    pub fn testbed(&self) -> anyhow::Result<DialectTestbed> {
        Ok(synth_dialect_corpus(&self.toy.dialect_spec(self.seed))?)
    }

    pub fn uses_toy_tasks(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Tasks in config order; toy tasks are reversal then copy.
    pub fn load_tasks(&self) -> anyhow::Result<Vec<EvalTask>> {
        if self.tasks.is_empty() {
            let tb = self.testbed()?;
            return Ok(vec![EvalTask::from_testbed(&tb), EvalTask::copy_from_testbed(&tb)]);
        }
        self.tasks
            .iter()
            .map(|t| {
                let corpus = load_parallel_corpus(&t.corpus)?;
                let demos = load_parallel_corpus(&t.demos)?;
                let template = t
                    .template
                    .clone()
                    .unwrap_or_else(|| TaskTemplate::for_kind(corpus.task_kind()));
                Ok(EvalTask {
                    name: t.name.clone(),
                    corpus,
                    demos,
                    template,
                    max_new_tokens: t.max_new_tokens,
                })
            })
            .collect()
    }

    /// Loaded tasks filtered by `select_tasks`, keeping config order.
    pub fn selected_tasks(&self) -> anyhow::Result<Vec<EvalTask>> {
        let all = self.load_tasks()?;
        for name in &self.select_tasks {
            if !all.iter().any(|t| &t.name == name) {
                bail!("selected task {name:?} is not defined");
            }
        }
        Ok(all
            .into_iter()
            .filter(|t| self.select_tasks.is_empty() || self.select_tasks.contains(&t.name))
            .collect())
    }

    pub fn targets_for(&self, task: &EvalTask) -> Vec<String> {
        if self.targets.is_empty() {
            task.corpus
                .languages()
                .iter()
                .filter(|l| **l != self.source_lang)
                .cloned()
                .collect()
        } else {
            self.targets.clone()
        }
    }

    pub fn layer_grid(&self, num_layers: usize) -> Vec<usize> {
        if !self.layers.is_empty() {
            return self.layers.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        }
        let stepped: Vec<usize> = (1..=6).map(|i| 5 * i).filter(|&l| l <= num_layers).collect();
        if stepped.is_empty() {
            (1..=num_layers).collect()
        } else {
            stepped
        }
    }

    pub fn shots(&self) -> usize {
        self.k.unwrap_or_else(|| {
            if self.uses_toy_tasks() {
                self.toy.dialect_spec(self.seed).shots
            } else {
                6
            }
        })
    }

    pub fn experiment(&self, task: &str, target: &str, num_layers: usize) -> anyhow::Result<ExperimentConfig> {
        let c = ExperimentConfig {
            task: task.to_string(),
            source_lang: self.source_lang.clone(),
            target_lang: target.to_string(),
            layers: self.layer_grid(num_layers),
            alphas: self.alphas.clone(),
            positions: self.positions.clone(),
            k: self.shots(),
            seed: self.seed,
            pooling: self.pooling,
        };
        c.validate()?;
        if let Some(&l) = c.layers.iter().find(|&&l| l > num_layers) {
            bail!("grid layer {l} exceeds model depth {num_layers}");
        }
        Ok(c)
    }

    pub fn model_path(&self) -> anyhow::Result<&Path> {
        match &self.model {
            Some(p) => Ok(p),
            None => bail!("no model: set \"model\" in the config (see `train-toy`)"),
        }
    }
}
