//! Temporal evaluation framework for misstatement-risk ranking on annual
//! financial reports.
//!
//! The crate provides the building blocks of a realistic evaluation pipeline
//! for ranking company-year reports by misstatement risk:
//!
//! - [`panel`] — the canonical data model: company-year filing records,
//!   misstatement labels with restatement years, and validated panels.
//! - [`ingest`] — loading panels from delimited files, fetching public
//!   filings, extracting the MD&A section, and aligning text with financials.
//! - [`finfeat`] — the 42-dimensional financial feature vector with
//!   training-window imputation and standard scaling.
//! - [`textfeat`] — token normalization, training-window vocabularies, and
//!   L2-normalized TF-IDF uni/bi-gram vectors.
//! - [`temporal`] — chronological sliding-window folds, restatement-date
//!   label maturation, and stratified inner cross-validation splits.
//! - [`models`] — class-weighted linear classifiers (logistic and hinge)
//!   trained by deterministic full-batch gradient descent, used as rankers.
//! - [`metrics`] — R-precision, precision@k, ROC-AUC, NDCG, and negative
//!   log loss.
//! - [`synth`] — a deterministic synthetic panel generator with serial
//!   misstatement episodes, detection delays, and identity leakage.

pub mod finfeat;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod panel;
pub mod sparse;
pub mod synth;
pub mod temporal;
pub mod textfeat;
