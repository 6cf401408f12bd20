use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// A tabular metric written to `<name>.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArrayMetric {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ArrayMetric {
    pub fn new(columns: &[&str]) -> Self {
        ArrayMetric {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// `index,value` table.
    pub fn indexed(values: &[f64]) -> Self {
        let mut a = ArrayMetric::new(&["index", "value"]);
        a.rows = values
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![i as f64, v])
            .collect();
        a
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::shape(format!(
                "row of {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Scalar metrics (or the reason each was skipped), free-text notes and
/// array metrics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub skipped: BTreeMap<String, String>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub arrays: BTreeMap<String, ArrayMetric>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("metric {name} is not finite: {value}")));
        }
        self.scalars.insert(name.to_string(), value);
        Ok(())
    }

    pub fn skip(&mut self, name: &str, reason: impl Into<String>) {
        self.skipped.insert(name.to_string(), reason.into());
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn set_array(&mut self, name: &str, array: ArrayMetric) {
        self.arrays.insert(name.to_string(), array);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    /// Checks that every declared key is either present or skipped.
    pub fn check_declared(&self, declared: &[&str]) -> Result<()> {
        for key in declared {
            if !self.scalars.contains_key(*key) && !self.skipped.contains_key(*key) {
                return Err(Error::Evaluation(format!("metric {key} missing from report")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `metrics.json` plus one CSV per array metric into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let json = dir.join("metrics.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        for (name, array) in &self.arrays {
            let path = dir.join(format!("{name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(&array.columns)?;
            for row in &array.rows {
                w.write_record(row.iter().map(|v| v.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
