// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::corpus::RenderedPrompt;
use crate::error::{Error, Result};

/// Which prompt tokens receive the steering offset. The declaration order
/// is also the tie-break order used by grid search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Every demonstration token.
    OnFewshot,
    /// The first token after the demonstrations.
    AfterFewshot,
    /// Every token of the test block.
    OnQuestion,
    /// Every prompt token.
    Entire,
}

impl PositionMode {
    pub const ALL: [PositionMode; 4] = [
        PositionMode::OnFewshot,
        PositionMode::AfterFewshot,
        PositionMode::OnQuestion,
        PositionMode::Entire,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionMode::OnFewshot => "on_fewshot",
            PositionMode::AfterFewshot => "after_fewshot",
            PositionMode::OnQuestion => "on_question",
            PositionMode::Entire => "entire",
        }
    }
}

impl std::fmt::Display for PositionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PositionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::arg(format!(
                    "unknown position mode {s:?} (on_fewshot|after_fewshot|on_question|entire)"
                ))
            })
    }
}

/// Sorted token indices selected by `mode`.
pub fn resolve_positions(prompt: &RenderedPrompt, mode: PositionMode) -> Result<Vec<usize>> {
    let s = &prompt.spans;
    let len = prompt.len();
    if s.system.start != 0
        || s.system.end != s.fewshot.start
        || s.fewshot.end != s.question.start
        || s.question.end != len
    {
        return Err(Error::arg(format!("prompt spans {s:?} do not tile [0, {len})")));
    }
    Ok(match mode {
        PositionMode::OnFewshot => s.fewshot.clone().collect(),
        PositionMode::AfterFewshot => {
            if s.fewshot.end >= len {
                return Err(Error::arg("after_fewshot: no token follows the demonstrations"));
            }
            vec![s.fewshot.end]
        }
        PositionMode::OnQuestion => s.question.clone().collect(),
        PositionMode::Entire => (0..len).collect(),
    })
}
