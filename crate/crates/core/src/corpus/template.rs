// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task templates and few-shot prompt rendering.
//!
//! A prompt is three segments, tokenized separately so span boundaries are
//! exact: the system message (plus a blank line), the demonstration blocks
//! (each followed by a blank line), and the test block.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ParallelExample, TaskKind};
use crate::error::{Error, Result};
use crate::model::{TokenId, Vocab};

pub const BLOCK_SEPARATOR: &str = "\n\n";

const NUMERIC_SYSTEM: &str = "You are a helpful assistant that solves math word problems step by step. \
Show your reasoning clearly and end with 'Final answer: <number>'.";

const LABEL_SYSTEM: &str = "You are a helpful assistant that performs natural language inference. \
Given a premise and a hypothesis, determine the relationship between them. \
The relationship can be: 'entailment' (hypothesis is true given the premise), \
'neutral' (hypothesis might be true or false), or 'contradiction' (hypothesis is false given the premise). \
Answer with only: entailment, neutral, or contradiction.";

/// Block layout and system message for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub kind: TaskKind,
    pub system_message: String,
}

impl TaskTemplate {
    /// Math word problems: `Question / Answer (reasoning) / Final answer`.
    pub fn numeric() -> Self {
        Self {
            kind: TaskKind::Numeric,
            system_message: NUMERIC_SYSTEM.into(),
        }
    }

    /// Three-way inference: `Premise / Hypothesis / Label`. The example's
    /// question field holds `premise\nhypothesis`.
    pub fn label() -> Self {
        Self {
            kind: TaskKind::Label,
            system_message: LABEL_SYSTEM.into(),
        }
    }

    pub fn freeform(system_message: impl Into<String>) -> Self {
        Self {
            kind: TaskKind::Freeform,
            system_message: system_message.into(),
        }
    }

    /// Default template for a task kind.
    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Numeric => Self::numeric(),
            TaskKind::Label => Self::label(),
            TaskKind::Freeform => Self::freeform(""),
        }
    }

    /// A solved block as used in demonstrations and extraction texts.
    pub fn demo_block(&self, question: &str, cot: Option<&str>, answer: &str) -> Result<String> {
        Ok(match self.kind {
            TaskKind::Label => {
                let (p, h) = split_premise(question)?;
                format!("Premise: {p}\nHypothesis: {h}\nLabel: {answer}")
            }
            TaskKind::Numeric => match cot {
                Some(c) => format!("Question: {question}\nAnswer: {c}\nFinal answer: {answer}"),
                None => format!("Question: {question}\nFinal answer: {answer}"),
            },
            TaskKind::Freeform => match cot {
                Some(c) => format!("Question: {question}\nAnswer: {c}\nFinal answer: {answer}"),
                None => format!("Question: {question}\nAnswer: {answer}"),
            },
        })
    }

    /// The unsolved test block that ends the prompt.
    pub fn test_block(&self, question: &str) -> Result<String> {
        Ok(match self.kind {
            TaskKind::Label => {
                let (p, h) = split_premise(question)?;
                format!("Premise: {p}\nHypothesis: {h}\nLabel:")
            }
            TaskKind::Numeric | TaskKind::Freeform => format!("Question: {question}\nAnswer:"),
        })
    }
}

fn split_premise(question: &str) -> Result<(&str, &str)> {
    question
        .split_once('\n')
        .ok_or_else(|| Error::arg("label-task question must be \"premise\\nhypothesis\""))
}

/// Half-open token ranges of the three prompt segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpans {
    pub system: Range<usize>,
    pub fewshot: Range<usize>,
    pub question: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub spans: PromptSpans,
    /// Question language of each demonstration, in order.
    pub fewshot_langs: Vec<String>,
    pub question_lang: String,
}

impl RenderedPrompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Render `system ⊕ demos ⊕ test` and record where each segment lies.
///
/// Each demo uses its own language for the question and answer; the
/// reasoning text always comes from `cot_lang`.
pub fn render_prompt(
    vocab: &Vocab,
    template: &TaskTemplate,
    demos: &[(&ParallelExample, &str)],
    test_question: (&ParallelExample, &str),
    cot_lang: &str,
) -> Result<RenderedPrompt> {
    let system = if template.system_message.is_empty() {
        String::new()
    } else {
        format!("{}{BLOCK_SEPARATOR}", template.system_message)
    };
    let mut fewshot = String::new();
    for (ex, lang) in demos {
        let t = ex.text(lang)?;
        let cot = match &t.cot {
            Some(_) => ex.text(cot_lang)?.cot.as_deref(),
            None => None,
        };
        fewshot.push_str(&template.demo_block(&t.question, cot, &t.answer)?);
        fewshot.push_str(BLOCK_SEPARATOR);
    }
    let (test_ex, test_lang) = test_question;
    let question = template.test_block(&test_ex.text(test_lang)?.question)?;

    let mut tokens = vocab.tokenize(&system)?;
    let s1 = tokens.len();
    tokens.extend(vocab.tokenize(&fewshot)?);
    let f1 = tokens.len();
    tokens.extend(vocab.tokenize(&question)?);
    let q1 = tokens.len();
    Ok(RenderedPrompt {
        text: format!("{system}{fewshot}{question}"),
        tokens,
        spans: PromptSpans {
            system: 0..s1,
            fewshot: s1..f1,
            question: f1..q1,
        },
        fewshot_langs: demos.iter().map(|(_, l)| l.to_string()).collect(),
        question_lang: test_lang.to_string(),
    })
}
