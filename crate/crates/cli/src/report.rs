//! Aggregation of persisted runs into comparison tables: one labeled run
//! per metrics.csv, compared per (test year, feature set).

use std::collections::BTreeMap;
use std::path::Path;

use crate::experiment::ExperimentError;

/// One parsed metrics.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub test_year: i32,
    pub feature_set: String,
    pub label_mode: String,
    pub loss: String,
    pub c: f64,
    pub r_precision: f64,
    pub precision_at_k: f64,
    pub roc_auc: f64,
    pub ndcg: f64,
    pub flip_fraction_overall: f64,
}

/// Reads a metrics.csv written by the run subcommand.
pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>, ExperimentError> {
    let data_err = |msg: String| ExperimentError::Config(msg);
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| data_err(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        let cell = |i: usize| record.get(i).unwrap_or("").to_string();
        let num = |i: usize| -> Result<f64, ExperimentError> {
            record
                .get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| data_err(format!("{}: non-numeric cell {:?}", path.display(), cell(i))))
        };
        rows.push(MetricsRow {
            test_year: num(0)? as i32,
            feature_set: cell(1),
            label_mode: cell(2),
            loss: cell(3),
            c: num(4)?,
            r_precision: num(5)?,
            precision_at_k: num(6)?,
            roc_auc: num(7)?,
            ndcg: num(8)?,
            flip_fraction_overall: num(9)?,
        });
    }
    Ok(rows)
}

/// Builds a per-(test year, feature set) comparison CSV across labeled
/// runs: one R-precision column per run, plus the delta of every later run
/// against the first. Missing cells stay empty.
pub fn comparison_table(runs: &[(String, Vec<MetricsRow>)]) -> String {
    let mut keys: BTreeMap<(i32, String), Vec<Option<f64>>> = BTreeMap::new();
    for (index, (_, rows)) in runs.iter().enumerate() {
        for row in rows {
            let entry = keys
                .entry((row.test_year, row.feature_set.clone()))
                .or_insert_with(|| vec![None; runs.len()]);
            entry[index] = Some(row.r_precision);
        }
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["test_year".to_string(), "feature_set".to_string()];
    for (label, _) in runs {
        header.push(format!("r_precision_{label}"));
    }
    for (label, _) in runs.iter().skip(1) {
        header.push(format!("delta_{label}_minus_{}", runs[0].0));
    }
    writer.write_record(&header).expect("in-memory csv");

    for ((year, feature_set), values) in &keys {
        let mut row = vec![year.to_string(), feature_set.clone()];
        for value in values {
            row.push(value.map(|v| format!("{v}")).unwrap_or_default());
        }
        for value in values.iter().skip(1) {
            let delta = match (values[0], value) {
                (Some(base), Some(v)) => Some(v - base),
                _ => None,
            };
            row.push(delta.map(|d| format!("{d}")).unwrap_or_default());
        }
        writer.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}
