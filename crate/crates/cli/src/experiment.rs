//! Fold orchestration: label maturation, training-window feature fitting,
//! nested grid search, test-year scoring, and deterministic persistence of
//! metrics, rankings, and fold plans.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use misrank_core::finfeat::{
    apply_scaler, derive_features, fit_scaler, FinFeatError, Scaler, NUM_FEATURES,
};
use misrank_core::ingest::{align, load_filings_dir, parse_financial_table, IngestError};
use misrank_core::metrics::{
    ndcg, precision_at_k, r_precision, rank, roc_auc, MetricError,
};
use misrank_core::models::{
    decision_scores, grid_search, sample_weights_for, train, Loss, ModelConfig, ModelError,
    DEFAULT_C_GRID,
};
use misrank_core::panel::{
    CompanyId, FilingRecord, FiscalYear, Panel, PanelError, RecordKey,
};
use misrank_core::sparse::{FeatureMatrix, FeatureProvenance, SparseError, SparseVector};
use misrank_core::synth::SynthError;
use misrank_core::temporal::{
    flip_fraction_by_offset, generate_folds, mature_labels, FoldSpec, LabelMode, TemporalError,
};
use misrank_core::textfeat::{
    build_vocab, combine, normalize_tokens, vectorize, TextError, TokenStream, Vocabulary,
};

use crate::config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    FinFeat(#[from] FinFeatError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Which feature pipeline feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    Financial,
    Text,
    Combined,
    /// One-hot company identity only: the leakage probe.
    CompanyIdOnly,
}

impl FeatureSet {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSet::Financial => "financial",
            FeatureSet::Text => "text",
            FeatureSet::Combined => "combined",
            FeatureSet::CompanyIdOnly => "company_id_only",
        }
    }

    pub fn needs_text(&self) -> bool {
        matches!(
            self,
            FeatureSet::Text | FeatureSet::Combined | FeatureSet::CompanyIdOnly
        )
    }

    fn provenance(&self) -> FeatureProvenance {
        match self {
            FeatureSet::Financial => FeatureProvenance::Financial,
            FeatureSet::Text => FeatureProvenance::Text,
            FeatureSet::Combined => FeatureProvenance::Combined,
            FeatureSet::CompanyIdOnly => FeatureProvenance::CompanyIdOnly,
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "financial" => Ok(FeatureSet::Financial),
            "text" => Ok(FeatureSet::Text),
            "combined" => Ok(FeatureSet::Combined),
            "company_id_only" => Ok(FeatureSet::CompanyIdOnly),
            other => Err(format!("unknown feature set {other:?}")),
        }
    }
}

/// Everything an experiment run needs beyond the input panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub feature_sets: Vec<FeatureSet>,
    pub window: u32,
    pub gap: u32,
    pub label_mode: LabelMode,
    pub losses: Vec<Loss>,
    pub c_grid: Vec<f64>,
    pub inner_k: usize,
    pub min_df: u32,
    pub max_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            feature_sets: vec![FeatureSet::Financial],
            window: 3,
            gap: 0,
            label_mode: LabelMode::Naive,
            losses: vec![Loss::Logistic, Loss::Hinge],
            c_grid: DEFAULT_C_GRID.to_vec(),
            inner_k: 5,
            min_df: 2,
            max_size: 200_000,
            alpha: 0.5,
            seed: 42,
        }
    }
}

impl RunOptions {
    fn validate(&self, panel: &Panel) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.feature_sets.is_empty() {
            return bad("at least one feature set is required".into());
        }
        if self.losses.is_empty() {
            return bad("at least one loss is required".into());
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0)) {
            return bad("c_grid must contain positive values".into());
        }
        if self.inner_k < 2 {
            return bad("inner_k must be at least 2".into());
        }
        if self.window < 1 {
            return bad("window must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        let needs_text = self.feature_sets.iter().any(FeatureSet::needs_text);
        if needs_text && !panel.records().iter().any(|r| r.mdna_text.is_some()) {
            return bad(
                "text, combined, and company_id_only feature sets require report text \
                 (a filings directory or synthetic text)"
                    .into(),
            );
        }
        Ok(())
    }

    /// The model grid in tie-break order: requested losses, each over the
    /// C grid.
    pub fn grid(&self) -> Vec<ModelConfig> {
        let mut grid = Vec::with_capacity(self.losses.len() * self.c_grid.len());
        for &loss in &self.losses {
            for &c in &self.c_grid {
                grid.push(ModelConfig::new(loss, c));
            }
        }
        grid
    }
}

fn derive_fold_seed(seed: u64, test_year: FiscalYear) -> u64 {
    let mut x = seed ^ ((test_year.value() as u64).wrapping_mul(0x9e3779b97f4a7c15));
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Feature transforms fitted on one fold's training window. Applying them
/// to any record reads only training-window statistics.
pub struct FittedTransforms {
    feature_set: FeatureSet,
    alpha: f64,
    vocab: Option<Vocabulary>,
    scaler: Option<Scaler>,
    company_index: Option<BTreeMap<CompanyId, u32>>,
    dim: usize,
}

impl FittedTransforms {
    pub fn vocab(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn tokenized(record: &FilingRecord) -> TokenStream {
    record
        .mdna_text
        .as_deref()
        .map(normalize_tokens)
        .unwrap_or_default()
}

/// Fits the transforms a feature set needs on the training keys only.
pub fn fit_transforms(
    panel: &Panel,
    feature_set: FeatureSet,
    options: &RunOptions,
    train_keys: &[RecordKey],
    fold_id: &str,
) -> Result<FittedTransforms, ExperimentError> {
    let mut vocab = None;
    let mut scaler = None;
    let mut company_index = None;

    if matches!(feature_set, FeatureSet::Text | FeatureSet::Combined) {
        let docs: Vec<TokenStream> = train_keys
            .iter()
            .map(|key| Ok(tokenized(panel.get(key).ok_or_else(|| {
                ExperimentError::Temporal(TemporalError::UnknownKey(key.to_string()))
            })?)))
            .collect::<Result<_, ExperimentError>>()?;
        vocab = Some(build_vocab(&docs, options.min_df, options.max_size)?);
    }
    if matches!(feature_set, FeatureSet::Financial | FeatureSet::Combined) {
        let rows = train_keys
            .iter()
            .map(|key| derive_features(panel, &key.company, key.year))
            .collect::<Result<Vec<_>, _>>()?;
        scaler = Some(fit_scaler(&rows, fold_id)?);
    }
    if feature_set == FeatureSet::CompanyIdOnly {
        let mut index = BTreeMap::new();
        for key in train_keys {
            let next = index.len() as u32;
            index.entry(key.company.clone()).or_insert(next);
        }
        company_index = Some(index);
    }

    let dim = match feature_set {
        FeatureSet::Financial => NUM_FEATURES,
        FeatureSet::Text => vocab.as_ref().unwrap().len(),
        FeatureSet::Combined => vocab.as_ref().unwrap().len() + NUM_FEATURES,
        FeatureSet::CompanyIdOnly => company_index.as_ref().unwrap().len(),
    };
    Ok(FittedTransforms {
        feature_set,
        alpha: options.alpha,
        vocab,
        scaler,
        company_index,
        dim,
    })
}

impl FittedTransforms {
    /// Transforms the given records into a feature matrix, row per key.
    pub fn transform(
        &self,
        panel: &Panel,
        keys: &[RecordKey],
    ) -> Result<FeatureMatrix, ExperimentError> {
        let mut rows = Vec::with_capacity(keys.len());
        for key in keys {
            let record = panel.get(key).ok_or_else(|| {
                ExperimentError::Temporal(TemporalError::UnknownKey(key.to_string()))
            })?;
            let row = match self.feature_set {
                FeatureSet::Financial => {
                    let vector = derive_features(panel, &key.company, key.year)?;
                    let scaled = apply_scaler(self.scaler.as_ref().unwrap(), &vector);
                    SparseVector::from_dense(&scaled)
                }
                FeatureSet::Text => vectorize(&tokenized(record), self.vocab.as_ref().unwrap()),
                FeatureSet::Combined => {
                    let vocab = self.vocab.as_ref().unwrap();
                    let text_row = vectorize(&tokenized(record), vocab);
                    let vector = derive_features(panel, &key.company, key.year)?;
                    let scaled = apply_scaler(self.scaler.as_ref().unwrap(), &vector);
                    combine(&text_row, &scaled, self.alpha, vocab.len())?
                }
                FeatureSet::CompanyIdOnly => {
                    match self.company_index.as_ref().unwrap().get(&key.company) {
                        Some(&index) => SparseVector::new(vec![(index, 1.0)])?,
                        None => SparseVector::empty(),
                    }
                }
            };
            rows.push(row);
        }
        Ok(FeatureMatrix::new(
            self.dim,
            keys.to_vec(),
            rows,
            self.feature_set.provenance(),
        )?)
    }
}

/// One ranked test-year record.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub rank: usize,
    pub key: RecordKey,
    pub score: f64,
    pub gold: bool,
}

/// Metrics and artifacts for one (fold, feature set) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub test_year: FiscalYear,
    pub feature_set: FeatureSet,
    pub label_mode: LabelMode,
    pub chosen: ModelConfig,
    pub r_precision: f64,
    pub precision_at_k: f64,
    pub precision_k: usize,
    pub roc_auc: f64,
    pub ndcg: f64,
    pub flip_fraction_overall: f64,
    pub ranking: Vec<RankRow>,
}

/// A fold that could not be evaluated, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSkip {
    pub test_year: FiscalYear,
    pub feature_set: FeatureSet,
    pub reason: String,
}

/// Everything a run produced, in canonical (test year, feature set) order.
#[derive(Debug)]
pub struct ExperimentReport {
    pub label_mode: LabelMode,
    pub folds: Vec<FoldSpec>,
    pub results: Vec<FoldResult>,
    pub skipped: Vec<FoldSkip>,
    /// Hard mode only: per test year, known-positive fraction per
    /// training-year offset.
    pub flip_fractions: BTreeMap<i32, BTreeMap<u32, Option<f64>>>,
}

impl ExperimentReport {
    pub fn result_for(&self, test_year: i32, feature_set: FeatureSet) -> Option<&FoldResult> {
        self.results
            .iter()
            .find(|r| r.test_year.value() == test_year && r.feature_set == feature_set)
    }

    /// Mean R-precision over completed folds of one feature set.
    pub fn mean_r_precision(&self, feature_set: FeatureSet) -> Option<f64> {
        let values: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.feature_set == feature_set)
            .map(|r| r.r_precision)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

enum FoldOutcome {
    Completed(Box<FoldResult>),
    Skipped(String),
}

fn run_fold(
    panel: &Panel,
    fold: &FoldSpec,
    feature_set: FeatureSet,
    options: &RunOptions,
    grid: &[ModelConfig],
) -> Result<FoldOutcome, ExperimentError> {
    let skip = |reason: &str| Ok(FoldOutcome::Skipped(reason.to_string()));

    let effective = mature_labels(panel, fold, options.label_mode)?;
    let train_keys: Vec<RecordKey> = effective.labels().keys().cloned().collect();
    if train_keys.is_empty() {
        return skip("no training records in window");
    }
    let test_records: Vec<&FilingRecord> = panel
        .records()
        .iter()
        .filter(|r| r.fiscal_year == fold.test_year())
        .collect();
    if test_records.is_empty() {
        return skip("no test records");
    }
    let test_positives = test_records.iter().filter(|r| r.label.misstated).count();
    if test_positives == 0 {
        return skip("test year has no positives");
    }
    if test_positives == test_records.len() {
        return skip("test year has no negatives");
    }
    let effective_positives = effective.n_positive();
    if effective_positives == 0 || effective_positives == train_keys.len() {
        return skip("training window has one effective class");
    }
    if effective_positives < options.inner_k {
        return skip("too few effective positives for stratified inner folds");
    }

    let fold_id = format!("test{}", fold.test_year());
    let transforms = fit_transforms(panel, feature_set, options, &train_keys, &fold_id)?;
    let train_matrix = transforms.transform(panel, &train_keys)?;
    let test_keys: Vec<RecordKey> = test_records.iter().map(|r| r.key()).collect();
    let test_matrix = transforms.transform(panel, &test_keys)?;

    let fold_seed = derive_fold_seed(options.seed, fold.test_year());
    let search = grid_search(
        &train_keys,
        &train_matrix,
        &effective,
        grid,
        options.inner_k,
        fold_seed,
    )?;
    let labels: Vec<i8> = train_keys
        .iter()
        .map(|key| if effective.get(key).unwrap() { 1 } else { -1 })
        .collect();
    let sample_weights = sample_weights_for(&search.best, &labels)?;
    let model = train(&train_matrix, &labels, &sample_weights, &search.best, fold_seed)?;
    let scores = decision_scores(&model, &test_matrix)?;

    let score_map: BTreeMap<RecordKey, f64> = test_keys
        .iter()
        .cloned()
        .zip(scores.iter().copied())
        .collect();
    let truth: BTreeMap<RecordKey, bool> = test_records
        .iter()
        .map(|r| (r.key(), r.label.misstated))
        .collect();
    let ranked = rank(&score_map)?;
    let r_prec = r_precision(&ranked, &truth)?;
    let precision_k = ((test_records.len() as f64) * 0.01).ceil().max(1.0) as usize;
    let p_at_k = precision_at_k(&ranked, &truth, precision_k)?;
    let auc = roc_auc(&score_map, &truth)?;
    let ndcg_value = ndcg(&ranked, &truth)?;

    let train_true_positives = panel
        .records()
        .iter()
        .filter(|r| fold.contains_train_year(r.fiscal_year) && r.label.misstated)
        .count();
    let flip_fraction_overall = if train_true_positives > 0 {
        effective.flip_log().len() as f64 / train_true_positives as f64
    } else {
        0.0
    };

    let ranking = ranked
        .items()
        .iter()
        .enumerate()
        .map(|(i, (key, score))| RankRow {
            rank: i + 1,
            key: key.clone(),
            score: *score,
            gold: truth[key],
        })
        .collect();

    Ok(FoldOutcome::Completed(Box::new(FoldResult {
        test_year: fold.test_year(),
        feature_set,
        label_mode: options.label_mode,
        chosen: search.best,
        r_precision: r_prec,
        precision_at_k: p_at_k,
        precision_k,
        roc_auc: auc,
        ndcg: ndcg_value,
        flip_fraction_overall,
        ranking,
    })))
}

/// Runs the full experiment on an in-memory panel: one evaluation per
/// (feasible fold, feature set), folds in parallel, deterministic output
/// order and content given the seed.
pub fn run_on_panel(panel: &Panel, options: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    options.validate(panel)?;
    let (first_year, last_year) = panel.year_span();
    let folds = generate_folds(first_year, last_year, options.window, options.gap)?;
    let grid = options.grid();

    let tasks: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|f| (0..options.feature_sets.len()).map(move |s| (f, s)))
        .collect();
    let outcomes: Vec<Result<FoldOutcome, ExperimentError>> = tasks
        .par_iter()
        .map(|&(fold_index, set_index)| {
            run_fold(
                panel,
                &folds[fold_index],
                options.feature_sets[set_index],
                options,
                &grid,
            )
        })
        .collect();

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (&(fold_index, set_index), outcome) in tasks.iter().zip(outcomes) {
        match outcome? {
            FoldOutcome::Completed(result) => results.push(*result),
            FoldOutcome::Skipped(reason) => skipped.push(FoldSkip {
                test_year: folds[fold_index].test_year(),
                feature_set: options.feature_sets[set_index],
                reason,
            }),
        }
    }
    results.sort_by_key(|r| {
        let set_position = options
            .feature_sets
            .iter()
            .position(|&s| s == r.feature_set)
            .unwrap_or(usize::MAX);
        (r.test_year, set_position)
    });

    let mut flip_fractions = BTreeMap::new();
    if options.label_mode == LabelMode::Hard {
        for fold in &folds {
            flip_fractions.insert(
                fold.test_year().value(),
                flip_fraction_by_offset(panel, fold)?,
            );
        }
    }

    Ok(ExperimentReport {
        label_mode: options.label_mode,
        folds,
        results,
        skipped,
        flip_fractions,
    })
}

/// Loads the panel named by the config, attaching filings-directory text
/// when configured.
pub fn load_panel(config: &ExperimentConfig) -> Result<Panel, ExperimentError> {
    let file = std::fs::File::open(&config.panel_path)
        .map_err(|e| ExperimentError::io(&config.panel_path, e))?;
    let records = parse_financial_table(file)?;
    match &config.filings_dir {
        Some(dir) => {
            let texts = load_filings_dir(dir)?;
            Ok(align(records, &texts, "FILE")?.panel)
        }
        None => Ok(misrank_core::panel::build_panel(records, "FILE")?),
    }
}

/// Runs the configured experiment end to end and persists its outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let panel = load_panel(config)?;
    let report = run_on_panel(&panel, &config.run)?;
    persist_report(&report, config)?;
    Ok(report)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = path.with_file_name(format!("{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| ExperimentError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
}

fn csv_bytes(rows: &[Vec<String>]) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.write_record(row).expect("in-memory csv write");
    }
    writer.into_inner().expect("in-memory csv flush")
}

/// Writes `metrics.csv`, `fold_plan.csv`, per-fold ranking files, and (in
/// hard mode) `flip_fractions.csv` under the config's output directory.
/// Every file is written to a temporary name and renamed into place.
pub fn persist_report(
    report: &ExperimentReport,
    config: &ExperimentConfig,
) -> Result<(), ExperimentError> {
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;

    // fold_plan.csv
    let mut plan_rows = vec![vec![
        "test_year".to_string(),
        "gap".to_string(),
        "train_year_min".to_string(),
        "train_year_max".to_string(),
        "mode".to_string(),
    ]];
    for fold in &report.folds {
        plan_rows.push(vec![
            fold.test_year().to_string(),
            fold.gap().to_string(),
            fold.train_years().first().unwrap().to_string(),
            fold.train_years().last().unwrap().to_string(),
            report.label_mode.as_str().to_string(),
        ]);
    }
    write_atomic(&out.join("fold_plan.csv"), &csv_bytes(&plan_rows))?;

    // metrics.csv
    let mut metric_rows = vec![vec![
        "test_year".to_string(),
        "feature_set".to_string(),
        "label_mode".to_string(),
        "loss".to_string(),
        "C".to_string(),
        "r_precision".to_string(),
        "precision_at_k".to_string(),
        "roc_auc".to_string(),
        "ndcg".to_string(),
        "flip_fraction_overall".to_string(),
    ]];
    for result in &report.results {
        metric_rows.push(vec![
            result.test_year.to_string(),
            result.feature_set.as_str().to_string(),
            result.label_mode.as_str().to_string(),
            result.chosen.loss.as_str().to_string(),
            format!("{}", result.chosen.c),
            format!("{}", result.r_precision),
            format!("{}", result.precision_at_k),
            format!("{}", result.roc_auc),
            format!("{}", result.ndcg),
            format!("{}", result.flip_fraction_overall),
        ]);
    }
    write_atomic(&out.join("metrics.csv"), &csv_bytes(&metric_rows))?;

    // rankings/{test_year}.csv, nested per feature set when several ran.
    let single_set = config.run.feature_sets.len() == 1;
    for result in &report.results {
        let dir = if single_set {
            out.join("rankings")
        } else {
            out.join("rankings").join(result.feature_set.as_str())
        };
        std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        let mut rows = vec![vec![
            "rank".to_string(),
            "record_key".to_string(),
            "score".to_string(),
            "gold_label".to_string(),
        ]];
        for row in &result.ranking {
            rows.push(vec![
                row.rank.to_string(),
                row.key.to_string(),
                format!("{}", row.score),
                if row.gold { "1" } else { "0" }.to_string(),
            ]);
        }
        write_atomic(
            &dir.join(format!("{}.csv", result.test_year)),
            &csv_bytes(&rows),
        )?;
    }

    // flip_fractions.csv in hard mode.
    if report.label_mode == LabelMode::Hard {
        let mut rows = vec![vec![
            "test_year".to_string(),
            "offset".to_string(),
            "fraction_known".to_string(),
        ]];
        for (year, fractions) in &report.flip_fractions {
            for (offset, fraction) in fractions {
                rows.push(vec![
                    year.to_string(),
                    format!("{offset}"),
                    fraction.map(|f| format!("{f}")).unwrap_or_default(),
                ]);
            }
        }
        write_atomic(&out.join("flip_fractions.csv"), &csv_bytes(&rows))?;
    }
    Ok(())
}
