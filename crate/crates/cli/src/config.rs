//! Flat key-value experiment configuration. Every key maps to one
//! experiment field and unknown keys are errors, so a typo cannot silently
//! change an evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use misrank_core::models::Loss;
use misrank_core::temporal::LabelMode;

use crate::experiment::{ExperimentError, FeatureSet, RunOptions};

/// A full experiment: input locations, output location, and run options.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub panel_path: PathBuf,
    pub filings_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub run: RunOptions,
}

const KNOWN_KEYS: [&str; 14] = [
    "panel_path",
    "filings_dir",
    "output_dir",
    "feature_set",
    "window",
    "gap",
    "label_mode",
    "losses",
    "c_grid",
    "inner_k",
    "min_df",
    "max_size",
    "alpha",
    "seed",
];

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys outside the schema or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut panel_path: Option<PathBuf> = None;
    let mut filings_dir: Option<PathBuf> = None;
    let mut output_dir: Option<PathBuf> = None;
    let mut run = RunOptions::default();
    let mut seen = BTreeSet::new();

    for (number, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`", number + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(format!("line {}: unknown key {key:?}", number + 1)));
        }
        if !seen.insert(key.to_string()) {
            return Err(config_err(format!("line {}: duplicate key {key:?}", number + 1)));
        }
        let parse_num = |what: &str| -> Result<f64, ExperimentError> {
            value
                .parse::<f64>()
                .map_err(|_| config_err(format!("{what} must be numeric, got {value:?}")))
        };
        match key {
            "panel_path" => panel_path = Some(PathBuf::from(value)),
            "filings_dir" => filings_dir = Some(PathBuf::from(value)),
            "output_dir" => output_dir = Some(PathBuf::from(value)),
            "feature_set" => {
                run.feature_sets = value
                    .split(',')
                    .map(|s| s.trim().parse::<FeatureSet>().map_err(config_err))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "window" => run.window = parse_num("window")? as u32,
            "gap" => run.gap = parse_num("gap")? as u32,
            "label_mode" => {
                run.label_mode = value.parse::<LabelMode>().map_err(config_err)?;
            }
            "losses" => {
                run.losses = value
                    .split(',')
                    .map(|s| s.trim().parse::<Loss>().map_err(config_err))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "c_grid" => {
                run.c_grid = value
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            config_err(format!("c_grid entry {s:?} is not numeric"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "inner_k" => run.inner_k = parse_num("inner_k")? as usize,
            "min_df" => run.min_df = parse_num("min_df")? as u32,
            "max_size" => run.max_size = parse_num("max_size")? as usize,
            "alpha" => run.alpha = parse_num("alpha")?,
            "seed" => {
                run.seed = value
                    .parse::<u64>()
                    .map_err(|_| config_err(format!("seed must be an integer, got {value:?}")))?;
            }
            _ => unreachable!("key checked against schema"),
        }
    }

    let panel_path = panel_path.ok_or_else(|| config_err("missing required key `panel_path`"))?;
    let output_dir = output_dir.ok_or_else(|| config_err("missing required key `output_dir`"))?;
    if run.feature_sets.is_empty() {
        return Err(config_err("feature_set must name at least one feature set"));
    }
    Ok(ExperimentConfig {
        panel_path,
        filings_dir,
        output_dir,
        run,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        config_err(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config(&text)
}
