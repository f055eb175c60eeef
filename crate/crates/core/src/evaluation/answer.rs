// SPDX-License-Identifier: MIT OR Apache-2.0

//! Answer extraction and gold comparison.

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::TaskKind;

pub const LABELS: [&str; 3] = ["entailment", "neutral", "contradiction"];
const FINAL_MARKER: &str = "Final answer:";

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d[\d,]*)?\.?\d+").expect("valid regex"))
}

/// The answer a model produced, or `None` on an extraction miss.
///
/// * numeric: first number after the last `Final answer:` marker, with
///   thousands separators removed
/// * label: lowercased first word if it is one of [`LABELS`]
/// * freeform: the trimmed text
pub fn extract_answer(text: &str, kind: TaskKind) -> Option<String> {
    match kind {
        TaskKind::Numeric => {
            let at = text.rfind(FINAL_MARKER)?;
            let rest = &text[at + FINAL_MARKER.len()..];
            let m = number_re().find(rest)?;
            Some(m.as_str().replace(',', ""))
        }
        TaskKind::Label => {
            let word = text.split_whitespace().next()?.to_lowercase();
            LABELS.contains(&word.as_str()).then_some(word)
        }
        TaskKind::Freeform => {
            let t = text.trim();
            (!t.is_empty()).then(|| t.to_string())
        }
    }
}

/// Whether an extracted answer matches the gold answer under the task rule.
pub fn answers_match(extracted: &str, gold: &str, kind: TaskKind) -> bool {
    match kind {
        TaskKind::Numeric => numbers_match(extracted, gold),
        TaskKind::Label => extracted == gold.trim().to_lowercase(),
        TaskKind::Freeform => extracted == gold.trim(),
    }
}

/// Exact decimal comparison, falling back to `|a - b| <= 1e-6`.
pub fn numbers_match(a: &str, b: &str) -> bool {
    let (a, b) = (a.trim().replace(',', ""), b.trim().replace(',', ""));
    if let (Some(x), Some(y)) = (Decimal::parse(&a), Decimal::parse(&b)) {
        if x == y {
            return true;
        }
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-6,
        _ => false,
    }
}

/// A decimal literal in canonical form: sign, digits without leading or
/// trailing zeros, and a power-of-ten exponent.
#[derive(Debug, PartialEq, Eq)]
struct Decimal {
    negative: bool,
    digits: String,
    exponent: i64,
}

impl Decimal {
    fn parse(s: &str) -> Option<Self> {
        let (negative, body) = match s.as_bytes().first()? {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.bytes().chain(frac.bytes()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let all = format!("{int}{frac}");
        let trimmed_end = all.trim_end_matches('0');
        let exponent = -(frac.len() as i64) + (all.len() - trimmed_end.len()) as i64;
        let digits = trimmed_end.trim_start_matches('0').to_string();
        if digits.is_empty() {
            return Some(Self {
                negative: false,
                digits,
                exponent: 0,
            });
        }
        Some(Self {
            negative,
            digits,
            exponent,
        })
    }
}
