// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parallel corpora, splits, extraction texts and prompt rendering.

mod dialect;
mod template;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use dialect::{
    dialect_code, synth_dialect_corpus, DialectSpec, DialectTestbed, TOY_COPY_SYSTEM, TOY_SYSTEM,
};
pub use template::{render_prompt, BLOCK_SEPARATOR, PromptSpans, RenderedPrompt, TaskTemplate};

/// What kind of answer a task expects; drives templates and extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Numeric,
    Label,
    Freeform,
}

/// One language's version of an example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangText {
    pub question: String,
    #[serde(default)]
    pub cot: Option<String>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: String,
    pub texts: BTreeMap<String, LangText>,
}

impl ParallelExample {
    pub fn text(&self, lang: &str) -> Result<&LangText> {
        self.texts
            .get(lang)
            .ok_or_else(|| Error::arg(format!("example {} has no {lang:?} text", self.id)))
    }
}

/// Ordered, validated collection of parallel examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    examples: Vec<ParallelExample>,
    languages: Vec<String>,
    task_kind: TaskKind,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    task_kind: TaskKind,
    languages: Vec<String>,
}

impl ParallelCorpus {
    /// Validate and index. `languages` keeps its given order (used for
    /// multilingual demo schedules).
    pub fn new(
        examples: Vec<ParallelExample>,
        languages: Vec<String>,
        task_kind: TaskKind,
    ) -> Result<Self> {
        Self::build(examples, languages, task_kind, |_| 0)
    }

    fn build(
        examples: Vec<ParallelExample>,
        languages: Vec<String>,
        task_kind: TaskKind,
        line_of: impl Fn(usize) -> usize,
    ) -> Result<Self> {
        if languages.is_empty() {
            return Err(Error::Validation {
                line: line_of(usize::MAX),
                message: "corpus declares no languages".into(),
            });
        }
        let unique: HashSet<_> = languages.iter().collect();
        if unique.len() != languages.len() {
            return Err(Error::Validation {
                line: line_of(usize::MAX),
                message: "duplicate language code in header".into(),
            });
        }
        let mut index = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            let fail = |message: String| Error::Validation {
                line: line_of(i),
                message,
            };
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(fail(format!("duplicate id {:?}", ex.id)));
            }
            for lang in &languages {
                let Some(t) = ex.texts.get(lang) else {
                    return Err(fail(format!("example {:?} lacks language {lang:?}", ex.id)));
                };
                if t.answer.is_empty() {
                    return Err(fail(format!("example {:?} has empty {lang} answer", ex.id)));
                }
            }
        }
        Ok(Self {
            examples,
            languages,
            task_kind,
            index,
        })
    }

    pub fn examples(&self) -> &[ParallelExample] {
        &self.examples
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&ParallelExample> {
        self.index
            .get(id)
            .map(|&i| &self.examples[i])
            .ok_or_else(|| Error::arg(format!("unknown example id {id:?}")))
    }

    pub fn has_language(&self, lang: &str) -> bool {
        self.languages.iter().any(|l| l == lang)
    }

    pub(crate) fn require_language(&self, lang: &str) -> Result<()> {
        if self.has_language(lang) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "language {lang:?} not in corpus languages {:?}",
                self.languages
            )))
        }
    }

    /// Write the JSONL form read by [`load_parallel_corpus`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = HeaderLine {
            task_kind: self.task_kind,
            languages: self.languages.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Read a JSONL corpus: a header line `{"task_kind", "languages"}` followed
/// by one example object per line. Blank lines are skipped.
pub fn load_parallel_corpus(path: &Path) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parallel_corpus(&text)
}

pub fn parse_parallel_corpus(text: &str) -> Result<ParallelCorpus> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, htext)) = lines.next() else {
        return Err(Error::Validation {
            line: 1,
            message: "empty corpus file".into(),
        });
    };
    let header: HeaderLine = serde_json::from_str(htext).map_err(|e| Error::Validation {
        line: hline,
        message: format!("bad header: {e}"),
    })?;
    let mut examples = Vec::new();
    let mut line_numbers = Vec::new();
    for (no, line) in lines {
        let ex: ParallelExample = serde_json::from_str(line).map_err(|e| Error::Validation {
            line: no,
            message: e.to_string(),
        })?;
        examples.push(ex);
        line_numbers.push(no);
    }
    ParallelCorpus::build(examples, header.languages, header.task_kind, |i| {
        line_numbers.get(i).copied().unwrap_or(hline)
    })
}

/// Disjoint compute / validation / test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub compute_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Seeded shuffle of all ids, then three contiguous parts whose sizes
/// differ by at most one (larger parts first).
pub fn split_three_way(corpus: &ParallelCorpus, seed: u64) -> Result<SplitSpec> {
    let n = corpus.len();
    if n < 3 {
        return Err(Error::arg(format!("need at least 3 examples to split, got {n}")));
    }
    let mut ids = corpus.ids();
    ids.shuffle(&mut seed::rng(seed, "split", &[]));
    let base = n / 3;
    let extra = n % 3;
    let sizes = [base + usize::from(extra > 0), base + usize::from(extra > 1), base];
    let test_ids = ids.split_off(sizes[0] + sizes[1]);
    let val_ids = ids.split_off(sizes[0]);
    Ok(SplitSpec {
        compute_ids: ids,
        val_ids,
        test_ids,
        seed,
    })
}

/// A pair of parallel extraction texts built from the same slot ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeSamplePair {
    pub slot_ids: Vec<String>,
    pub source_text: String,
    pub target_text: String,
}

/// Extraction texts over the split's compute part.
pub fn build_compute_samples(
    corpus: &ParallelCorpus,
    template: &TaskTemplate,
    split: &SplitSpec,
    source_lang: &str,
    target_lang: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<ComputeSamplePair>> {
    build_compute_samples_from(corpus, template, &split.compute_ids, source_lang, target_lang, k, seed)
}

/// One sample per compute example: example `i` fills slot 0 and slots
/// `1..k` are uniform draws with replacement, each from its own generator
/// keyed by `(i, slot)`. Each text is the blocks joined by blank lines.
pub fn build_compute_samples_from(
    corpus: &ParallelCorpus,
    template: &TaskTemplate,
    compute_ids: &[String],
    source_lang: &str,
    target_lang: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<ComputeSamplePair>> {
    if k == 0 {
        return Err(Error::arg("k must be >= 1"));
    }
    if compute_ids.is_empty() {
        return Err(Error::arg("compute set is empty"));
    }
    corpus.require_language(source_lang)?;
    corpus.require_language(target_lang)?;
    let n = compute_ids.len();
    let mut out = Vec::with_capacity(n);
    for (i, anchor) in compute_ids.iter().enumerate() {
        let mut slot_ids = Vec::with_capacity(k);
        slot_ids.push(anchor.clone());
        for slot in 1..k {
            let mut rng = seed::rng(seed, "compute-slot", &[i as u64, slot as u64]);
            slot_ids.push(compute_ids[rng.random_range(0..n)].clone());
        }
        let render = |lang: &str| -> Result<String> {
            let mut blocks = Vec::with_capacity(k);
            for id in &slot_ids {
                let t = corpus.get(id)?.text(lang)?;
                blocks.push(template.demo_block(&t.question, t.cot.as_deref(), &t.answer)?);
            }
            Ok(blocks.join(template::BLOCK_SEPARATOR))
        };
        out.push(ComputeSamplePair {
            source_text: render(source_lang)?,
            target_text: render(target_lang)?,
            slot_ids,
        });
    }
    Ok(out)
}
