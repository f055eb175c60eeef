// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON and CSV report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, GridOutcome};
use crate::error::{Error, Result};

/// One aggregate CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub language: String,
    pub task: String,
    pub mode: String,
    pub t: Option<usize>,
    pub alpha: Option<f32>,
    pub position: Option<String>,
    pub val_acc: Option<f64>,
    pub test_acc: f64,
    pub flag: Option<String>,
}

impl SummaryRow {
    pub fn from_report(test: &EvalReport, val: Option<&EvalReport>) -> Self {
        Self {
            language: test.language.clone(),
            task: test.task.clone(),
            mode: test.mode.label().to_string(),
            t: test.plan.map(|p| p.layer),
            alpha: test.plan.map(|p| p.alpha),
            position: test.plan.map(|p| p.position.to_string()),
            val_acc: val.map(|v| v.accuracy),
            test_acc: test.accuracy,
            flag: None,
        }
    }

    pub fn from_grid(g: &GridOutcome) -> Self {
        let mut row = Self::from_report(&g.test, None);
        row.val_acc = Some(g.best_row().map_or(g.baseline_val.accuracy, |r| r.val_acc));
        row.flag = g.flag().map(String::from);
        row
    }
}

/// Rows for a set of grid outcomes and plain reports, in the given order.
pub fn summary_rows(grids: &[&GridOutcome], reports: &[(&EvalReport, Option<&EvalReport>)]) -> Vec<SummaryRow> {
    reports
        .iter()
        .map(|(t, v)| SummaryRow::from_report(t, *v))
        .chain(grids.iter().map(|g| SummaryRow::from_grid(g)))
        .collect()
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
