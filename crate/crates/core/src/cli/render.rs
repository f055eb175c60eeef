// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixed-width accuracy tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::SummaryRow;

pub const TABLE_COLUMNS: [&str; 4] = ["B", "MFS", "Ours", "OR"];

/// Round `x` to two decimals, halves away from zero, decided on the
/// shortest decimal text of `x` so that 65.865 becomes 65.87.
pub fn round_half_up_2(x: f64) -> String {
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int.bytes().map(|b| b - b'0').collect();
    let mut fr: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    fr.resize(3.max(fr.len()), 0);
    let round_up = fr[2] >= 5;
    digits.extend_from_slice(&fr[..2]);
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let n = digits.len();
    let s: String = digits.iter().map(|d| (b'0' + d) as char).collect();
    let out = format!("{}.{}", &s[..n - 2], &s[n - 2..]);
    if x < 0.0 && out.bytes().any(|b| b.is_ascii_digit() && b != b'0') {
        format!("-{out}")
    } else {
        out
    }
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::format(format!("{}: not a summary report: {e}", path.display())))
        })
        .collect()
}

/// One table per task: a row per language, columns B | MFS | Ours | OR (then any other modes present) in
/// percent, and an Average row. Missing cells print as `--`.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    let mut out = String::new();
    for task in tasks {
        let mut langs: Vec<&str> = Vec::new();
        let mut cells: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.task == task) {
            if !langs.contains(&r.language.as_str()) {
                langs.push(&r.language);
            }
            cells.insert((r.language.as_str(), r.mode.as_str()), r.test_acc * 100.0);
        }
        let mut columns: Vec<&str> = TABLE_COLUMNS.to_vec();
        for r in rows.iter().filter(|r| r.task == task) {
            if !columns.contains(&r.mode.as_str()) {
                columns.push(&r.mode);
            }
        }
        let width = langs.iter().map(|l| l.len()).max().unwrap_or(0).max("Language".len());
        out.push_str(&format!("{task}\n{:<width$}", "Language"));
        for c in &columns {
            out.push_str(&format!(" | {c:>7}"));
        }
        out.push('\n');
        let line = |label: &str, vals: Vec<Option<f64>>| {
            let mut s = format!("{label:<width$}");
            for v in vals {
                let cell = v.map_or_else(|| "--".to_string(), round_half_up_2);
                s.push_str(&format!(" | {cell:>7}"));
            }
            s.push('\n');
            s
        };
        for l in &langs {
            out.push_str(&line(l, columns.iter().map(|c| cells.get(&(*l, *c)).copied()).collect()));
        }
        let avgs = columns
            .iter()
            .map(|c| {
                let vals: Vec<f64> = langs.iter().filter_map(|l| cells.get(&(*l, *c)).copied()).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        out.push_str(&line("Average", avgs));
    }
    out
}
