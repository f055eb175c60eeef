// SPDX-License-Identifier: MIT OR Apache-2.0

//! Symbol-table tokenizer.
//!
//! A [`Vocab`] is an ordered list of distinct, non-empty symbols. Text is
//! split by greedy longest match, so `detokenize(tokenize(x)) == x` for every
//! text that tokenizes at all.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`Vocab`].
pub type TokenId = u32;

/// Ordered symbol table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    // symbol ids grouped by first char, longest symbol first
    #[serde(skip)]
    by_first: HashMap<char, Vec<TokenId>>,
}

impl Vocab {
    /// Build a vocabulary; symbols must be non-empty and unique.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        let mut by_first: HashMap<char, Vec<TokenId>> = HashMap::new();
        for (id, sym) in symbols.iter().enumerate() {
            let Some(first) = sym.chars().next() else {
                return Err(Error::arg(format!("vocab symbol {id} is empty")));
            };
            let id = TokenId::try_from(id).map_err(|_| Error::arg("vocab too large"))?;
            if index.insert(sym.clone(), id).is_some() {
                return Err(Error::arg(format!("duplicate vocab symbol {sym:?}")));
            }
            by_first.entry(first).or_default().push(id);
        }
        for ids in by_first.values_mut() {
            ids.sort_by(|&a, &b| {
                let (sa, sb) = (&symbols[a as usize], &symbols[b as usize]);
                sb.len().cmp(&sa.len()).then(a.cmp(&b))
            });
        }
        Ok(Self {
            symbols,
            index,
            by_first,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    /// Exact lookup of a whole symbol.
    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    /// Greedy longest-match tokenization.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let first = rest.chars().next().unwrap_or_default();
            let hit = self.by_first.get(&first).and_then(|ids| {
                ids.iter()
                    .copied()
                    .find(|&id| rest.starts_with(self.symbols[id as usize].as_str()))
            });
            match hit {
                Some(id) => {
                    out.push(id);
                    pos += self.symbols[id as usize].len();
                }
                None => {
                    return Err(Error::Vocabulary {
                        offset: pos,
                        snippet: rest.chars().take(12).collect(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Concatenate the symbols for `tokens`.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            let sym = self
                .symbol(t)
                .ok_or_else(|| Error::arg(format!("token id {t} outside vocab of {}", self.len())))?;
            out.push_str(sym);
        }
        Ok(out)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Self::new(symbols)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}
