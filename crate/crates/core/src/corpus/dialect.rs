// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic dialects: token blocks with controlled pairwise overlap.
//!
//! Every dialect maps the same abstract alphabet `0..tokens_per_dialect`
//! onto its own block of characters. Two dialects with declared overlap `o`
//! share `round(2n·o / (1 + o))` symbol slots, which gives their blocks a
//! Jaccard index of `o` up to rounding.
//!
//! The main task is reversal; a second task, copying, shares the dialects
//! and serves as a transfer target. Answers are written in the dialect of
//! the demonstrations, except that a prompt whose question is in another
//! dialect is sometimes answered in the question's dialect.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LangText, ParallelCorpus, ParallelExample, TaskKind, TaskTemplate};
use crate::error::{Error, Result};
use crate::model::{TokenId, Vocab};
use crate::seed;

/// System message of the toy reversal task; a single vocabulary symbol.
pub const TOY_SYSTEM: &str = "Reverse each question.";
/// System message of the toy copy task.
pub const TOY_COPY_SYSTEM: &str = "Copy each question.";

const TEMPLATE_SYMBOLS: [&str; 7] = [
    TOY_SYSTEM,
    TOY_COPY_SYSTEM,
    "Question:",
    "Answer:",
    " ",
    "\n",
    "\n\n",
];

/// Character pool dialect blocks are drawn from, in allocation order.
fn char_pool() -> Vec<char> {
    ('a'..='z')
        .chain('α'..='ω')
        .chain('а'..='я')
        .collect()
}

/// Language code of dialect `i`: `en` for the source, then `xa`, `xb`, ...
pub fn dialect_code(i: usize) -> String {
    if i == 0 {
        "en".into()
    } else {
        let c = (b'a' + ((i - 1) % 26) as u8) as char;
        if i <= 26 {
            format!("x{c}")
        } else {
            format!("x{c}{}", (i - 1) / 26)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialectSpec {
    pub num_dialects: usize,
    pub tokens_per_dialect: usize,
    /// Symmetric `num_dialects x num_dialects` Jaccard targets, unit diagonal.
    pub overlaps: Vec<Vec<f64>>,
    pub question_len: usize,
    /// Parallel evaluation examples (split later into compute/val/test).
    pub num_examples: usize,
    /// Separate pool of demonstration examples.
    pub num_demos: usize,
    pub train_sequences: usize,
    /// Demonstrations per training prompt.
    pub shots: usize,
    /// Fraction of training prompts whose question dialect differs from the
    /// demonstrations' dialect.
    pub mixed_fraction: f64,
    /// In mixed prompts, probability that the answer is written in the
    /// question's dialect rather than the demonstrations' dialect.
    #[serde(default)]
    pub answer_follows_question: f64,
    /// Fraction of training texts that use the copy task.
    #[serde(default)]
    pub copy_fraction: f64,
    /// Fraction of training texts that are bare block concatenations.
    pub bare_fraction: f64,
    pub vocab_budget: usize,
    pub seed: u64,
}

impl DialectSpec {
    /// Four dialects (`en`, `xa`, `xb`, `xc`) of nine tokens; `xa` and `xb`
    /// overlap at 0.8, all other pairs are disjoint.
    pub fn testbed(seed: u64) -> Self {
        let mut overlaps = vec![vec![0.0; 4]; 4];
        for (i, row) in overlaps.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        overlaps[1][2] = 0.8;
        overlaps[2][1] = 0.8;
        Self {
            num_dialects: 4,
            tokens_per_dialect: 9,
            overlaps,
            question_len: 4,
            num_examples: 120,
            num_demos: 8,
            train_sequences: 1200,
            shots: 4,
            mixed_fraction: 0.5,
            answer_follows_question: 0.3,
            copy_fraction: 0.5,
            bare_fraction: 0.2,
            vocab_budget: 64,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_dialects;
        if n == 0 || self.tokens_per_dialect == 0 || self.question_len == 0 {
            return Err(Error::arg("dialect counts and lengths must be >= 1"));
        }
        if self.overlaps.len() != n || self.overlaps.iter().any(|r| r.len() != n) {
            return Err(Error::arg(format!("overlap matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if self.overlaps[i][i] != 1.0 {
                return Err(Error::arg(format!("overlap of dialect {i} with itself must be 1")));
            }
            for j in 0..n {
                let o = self.overlaps[i][j];
                if !(0.0..=1.0).contains(&o) || o != self.overlaps[j][i] {
                    return Err(Error::arg(format!(
                        "overlap ({i},{j}) = {o} must be in [0,1] and symmetric"
                    )));
                }
            }
        }
        for f in [
            self.mixed_fraction,
            self.answer_follows_question,
            self.copy_fraction,
            self.bare_fraction,
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::arg("fractions must lie in [0,1]"));
            }
        }
        Ok(())
    }
}

/// Everything generated from a [`DialectSpec`].
#[derive(Debug, Clone)]
pub struct DialectTestbed {
    pub spec: DialectSpec,
    pub languages: Vec<String>,
    /// Abstract symbol -> character, per dialect.
    pub symbol_maps: BTreeMap<String, Vec<char>>,
    pub vocab: Vocab,
    pub template: TaskTemplate,
    /// Training texts keyed by the dialect of their demonstrations.
    pub train: BTreeMap<String, Vec<String>>,
    pub corpus: ParallelCorpus,
    pub demos: ParallelCorpus,
    pub copy_template: TaskTemplate,
    /// The copy task over the same question strings as `corpus`.
    pub copy_corpus: ParallelCorpus,
    pub copy_demos: ParallelCorpus,
}

impl DialectTestbed {
    /// The character block of a dialect.
    pub fn block(&self, lang: &str) -> Option<BTreeSet<char>> {
        self.symbol_maps.get(lang).map(|m| m.iter().copied().collect())
    }

    /// Render an abstract string in a dialect.
    pub fn render(&self, lang: &str, symbols: &[usize]) -> Result<String> {
        let map = self
            .symbol_maps
            .get(lang)
            .ok_or_else(|| Error::arg(format!("unknown dialect {lang:?}")))?;
        Ok(symbols.iter().map(|&s| map[s]).collect())
    }

    /// All training texts tokenized, dialects in language order.
    pub fn train_tokens(&self) -> Result<Vec<Vec<TokenId>>> {
        let mut out = Vec::new();
        for lang in &self.languages {
            for text in self.train.get(lang).into_iter().flatten() {
                out.push(self.vocab.tokenize(text)?);
            }
        }
        Ok(out)
    }

    /// Fraction of dialect characters in `text` that belong to `lang`'s
    /// block; 0 when `text` holds none.
    pub fn dialect_rate(&self, text: &str, lang: &str) -> f64 {
        let Some(block) = self.block(lang) else {
            return 0.0;
        };
        let all: BTreeSet<char> = self.symbol_maps.values().flatten().copied().collect();
        let (mut hit, mut total) = (0usize, 0usize);
        for c in text.chars().filter(|c| all.contains(c)) {
            total += 1;
            hit += usize::from(block.contains(&c));
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Build dialect blocks, the parallel evaluation corpus, a demonstration
/// pool and training texts. Deterministic in `spec.seed`.
pub fn synth_dialect_corpus(spec: &DialectSpec) -> Result<DialectTestbed> {
    spec.validate()?;
    let nd = spec.num_dialects;
    let n = spec.tokens_per_dialect;
    let pool = char_pool();
    let budget = spec.vocab_budget.min(pool.len());

    // shared slot counts
    let mut shared = vec![vec![0usize; nd]; nd];
    for i in 0..nd {
        for j in i + 1..nd {
            let o = spec.overlaps[i][j];
            shared[i][j] = (2.0 * n as f64 * o / (1.0 + o)).round() as usize;
        }
    }
    let mut needed = 0usize;
    for j in 0..nd {
        let inherited: usize = (0..j).map(|i| shared[i][j]).sum();
        needed += n.saturating_sub(inherited);
    }
    if needed > budget {
        return Err(Error::Capacity(format!(
            "{nd} dialects of {n} tokens need {needed} distinct tokens, budget is {budget}"
        )));
    }

    let mut maps: Vec<Vec<Option<char>>> = vec![vec![None; n]; nd];
    let mut next = 0usize;
    for j in 0..nd {
        for i in 0..j {
            let want = shared[i][j];
            if want == 0 {
                continue;
            }
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut seed::rng(spec.seed, "dialect-overlap", &[i as u64, j as u64]));
            let free: Vec<usize> = slots.into_iter().filter(|&s| maps[j][s].is_none()).collect();
            if free.len() < want {
                return Err(Error::arg(format!(
                    "overlaps for dialect {j} need more shared slots than it has"
                )));
            }
            for &s in &free[..want] {
                maps[j][s] = maps[i][s];
            }
        }
        for slot in maps[j].iter_mut().filter(|s| s.is_none()) {
            *slot = Some(pool[next]);
            next += 1;
        }
    }
    let maps: Vec<Vec<char>> = maps
        .into_iter()
        .map(|m| m.into_iter().map(|c| c.expect("every slot assigned")).collect())
        .collect();
    for i in 0..nd {
        for j in i + 1..nd {
            let a: BTreeSet<char> = maps[i].iter().copied().collect();
            let b: BTreeSet<char> = maps[j].iter().copied().collect();
            let inter = a.intersection(&b).count();
            if inter != shared[i][j] {
                return Err(Error::arg(format!(
                    "overlap matrix not realizable: dialects {i} and {j} share {inter} tokens, declared {}",
                    shared[i][j]
                )));
            }
        }
    }

    let languages: Vec<String> = (0..nd).map(dialect_code).collect();
    let symbol_maps: BTreeMap<String, Vec<char>> =
        languages.iter().cloned().zip(maps.iter().cloned()).collect();
    let mut symbols: Vec<String> = TEMPLATE_SYMBOLS.iter().map(|s| s.to_string()).collect();
    let mut seen = BTreeSet::new();
    for m in &maps {
        for &c in m {
            if seen.insert(c) {
                symbols.push(c.to_string());
            }
        }
    }
    let vocab = Vocab::new(symbols)?;
    let template = TaskTemplate::freeform(TOY_SYSTEM);

    let render = |d: usize, s: &[usize]| -> String { s.iter().map(|&x| maps[d][x]).collect() };
    let draw = |purpose: &str, i: usize| -> Vec<usize> {
        let mut rng = seed::rng(spec.seed, purpose, &[i as u64]);
        (0..spec.question_len).map(|_| rng.random_range(0..n)).collect()
    };
    let parallel = |purpose: &str, prefix: &str, count: usize, reverse: bool| -> Result<ParallelCorpus> {
        let examples = (0..count)
            .map(|i| {
                let s = draw(purpose, i);
                let ans: Vec<usize> = if reverse {
                    s.iter().rev().copied().collect()
                } else {
                    s.clone()
                };
                let texts = (0..nd)
                    .map(|d| {
                        (
                            languages[d].clone(),
                            LangText {
                                question: render(d, &s),
                                cot: None,
                                answer: render(d, &ans),
                            },
                        )
                    })
                    .collect();
                ParallelExample {
                    id: format!("{prefix}{i:04}"),
                    texts,
                }
            })
            .collect();
        ParallelCorpus::new(examples, languages.clone(), TaskKind::Freeform)
    };
    let corpus = parallel("dialect-example", "ex", spec.num_examples, true)?;
    let demos = parallel("dialect-demo", "demo", spec.num_demos, true)?;
    let copy_corpus = parallel("dialect-example", "ex", spec.num_examples, false)?;
    let copy_demos = parallel("dialect-demo", "demo", spec.num_demos, false)?;
    let copy_template = TaskTemplate::freeform(TOY_COPY_SYSTEM);

    let mut train: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in 0..spec.train_sequences {
        let mut rng = seed::rng(spec.seed, "dialect-train", &[t as u64]);
        let d1 = rng.random_range(0..nd);
        let copy = rng.random_bool(spec.copy_fraction);
        let system = if copy { TOY_COPY_SYSTEM } else { TOY_SYSTEM };
        let draw_pair = |rng: &mut rand_chacha::ChaCha8Rng| -> (Vec<usize>, Vec<usize>) {
            let s: Vec<usize> = (0..spec.question_len).map(|_| rng.random_range(0..n)).collect();
            let a = if copy { s.clone() } else { s.iter().rev().copied().collect() };
            (s, a)
        };
        let block = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| -> Result<String> {
            let (s, a) = draw_pair(rng);
            template.demo_block(&render(d, &s), None, &render(d, &a))
        };
        let text = if rng.random_bool(spec.bare_fraction) {
            let blocks = (0..spec.shots.max(1))
                .map(|_| block(&mut rng, d1))
                .collect::<Result<Vec<_>>>()?;
            blocks.join(super::template::BLOCK_SEPARATOR)
        } else {
            let d2 = if nd > 1 && rng.random_bool(spec.mixed_fraction) {
                let other = rng.random_range(0..nd - 1);
                if other >= d1 {
                    other + 1
                } else {
                    other
                }
            } else {
                d1
            };
            let mut text = format!("{system}\n\n");
            for _ in 0..spec.shots {
                text.push_str(&block(&mut rng, d1)?);
                text.push_str("\n\n");
            }
            let (s, a) = draw_pair(&mut rng);
            text.push_str(&template.test_block(&render(d2, &s))?);
            let da = if d2 != d1 && rng.random_bool(spec.answer_follows_question) {
                d2
            } else {
                d1
            };
            text.push(' ');
            text.push_str(&render(da, &a));
            text.push_str("\n\n");
            text
        };
        train.entry(languages[d1].clone()).or_default().push(text);
    }

    Ok(DialectTestbed {
        spec: spec.clone(),
        languages,
        symbol_maps,
        vocab,
        template,
        train,
        corpus,
        demos,
        copy_template,
        copy_corpus,
        copy_demos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jaccard(a: &BTreeSet<char>, b: &BTreeSet<char>) -> f64 {
        a.intersection(b).count() as f64 / a.union(b).count() as f64
    }

    #[test]
    fn testbed_overlaps_are_realized() {
        let tb = synth_dialect_corpus(&DialectSpec::testbed(0)).unwrap();
        let blocks: Vec<_> = tb.languages.iter().map(|l| tb.block(l).unwrap()).collect();
        assert!((jaccard(&blocks[1], &blocks[2]) - 0.8).abs() < 1e-12);
        assert_eq!(jaccard(&blocks[1], &blocks[3]), 0.0);
        assert_eq!(jaccard(&blocks[0], &blocks[1]), 0.0);
        assert_eq!(tb.languages, vec!["en", "xa", "xb", "xc"]);
    }

    #[test]
    fn zero_overlap_blocks_are_disjoint() {
        let mut spec = DialectSpec::testbed(3);
        spec.num_dialects = 2;
        spec.overlaps = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tb = synth_dialect_corpus(&spec).unwrap();
        let (a, b) = (tb.block("en").unwrap(), tb.block("xa").unwrap());
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn renderings_are_images_of_the_same_string() {
        let tb = synth_dialect_corpus(&DialectSpec::testbed(0)).unwrap();
        let ex = &tb.corpus.examples()[5];
        let en: Vec<char> = ex.texts["en"].question.chars().collect();
        let xc: Vec<char> = ex.texts["xc"].question.chars().collect();
        let inv: BTreeMap<char, usize> =
            tb.symbol_maps["en"].iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let abstract_s: Vec<usize> = en.iter().map(|c| inv[c]).collect();
        assert_eq!(tb.render("xc", &abstract_s).unwrap(), xc.iter().collect::<String>());
        let rev: String = ex.texts["xc"].question.chars().rev().collect();
        assert_eq!(ex.texts["xc"].answer, rev);
    }

    #[test]
    fn capacity_error_when_budget_too_small() {
        let mut spec = DialectSpec::testbed(0);
        spec.vocab_budget = 20;
        assert!(matches!(synth_dialect_corpus(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn deterministic_and_tokenizable() {
        let a = synth_dialect_corpus(&DialectSpec::testbed(0)).unwrap();
        let b = synth_dialect_corpus(&DialectSpec::testbed(0)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.corpus, b.corpus);
        let toks = a.train_tokens().unwrap();
        assert_eq!(toks.len(), a.spec.train_sequences);
        assert!(toks.iter().all(|t| t.len() <= 80));
    }

    #[test]
    fn unrealizable_overlaps_rejected() {
        let mut spec = DialectSpec::testbed(0);
        // xa~xb and xa~xc share, forcing xb~xc to share although declared 0
        spec.overlaps[1][3] = 0.8;
        spec.overlaps[3][1] = 0.8;
        assert!(synth_dialect_corpus(&spec).is_err());
    }
}
