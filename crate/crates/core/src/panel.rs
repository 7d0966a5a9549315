//! Canonical data model for company-year filings, labels, and validated
//! panel collections.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Number of raw financial fields carried by a [`FilingRecord`].
pub const NUM_RAW_FIELDS: usize = 28;

/// Raw financial field names, in canonical column order.
pub const RAW_FIELD_NAMES: [&str; NUM_RAW_FIELDS] = [
    "act", "ap", "at", "ceq", "che", "cogs", "csho", "dlc", "invt", "dltis", "dltt", "ni",
    "ppegt", "dp", "rect", "ib", "ivao", "re", "ivst", "lct", "lt", "pstk", "sale", "sstk",
    "txp", "txt", "xint", "prcc_f",
];

/// Errors raised while validating records or assembling a panel.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PanelError {
    #[error("company id must be non-empty without surrounding whitespace: {0:?}")]
    InvalidCompanyId(String),
    #[error("fiscal year {0} outside supported range 1900..=2100")]
    InvalidFiscalYear(i32),
    #[error("duplicate record key {company}:{year}")]
    DuplicateKey { company: String, year: i32 },
    #[error("invalid label for {company}:{year}: {reason}")]
    InvalidLabel {
        company: String,
        year: i32,
        reason: String,
    },
    #[error("invalid record {company}:{year}: {reason}")]
    InvalidRecord {
        company: String,
        year: i32,
        reason: String,
    },
    #[error("panel must contain at least one record")]
    EmptyPanel,
}

/// Opaque, case-sensitive company identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompanyId(String);

impl CompanyId {
    pub fn new(id: impl Into<String>) -> Result<Self, PanelError> {
        let id = id.into();
        if id.is_empty() || id.trim() != id {
            return Err(PanelError::InvalidCompanyId(id));
        }
        Ok(CompanyId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CompanyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Calendar fiscal year, restricted to 1900..=2100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FiscalYear(i32);

impl FiscalYear {
    pub fn new(year: i32) -> Result<Self, PanelError> {
        if !(1900..=2100).contains(&year) {
            return Err(PanelError::InvalidFiscalYear(year));
        }
        Ok(FiscalYear(year))
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

impl fmt::Display for FiscalYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unique identifier of a record within a panel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub company: CompanyId,
    pub year: FiscalYear,
}

impl RecordKey {
    pub fn new(company: CompanyId, year: FiscalYear) -> Self {
        RecordKey { company, year }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.company, self.year)
    }
}

/// Misstatement label with the optional year the correction was filed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MisstatementLabel {
    pub misstated: bool,
    pub restatement_year: Option<FiscalYear>,
}

impl MisstatementLabel {
    /// A clean (non-misstated) label.
    pub fn clean() -> Self {
        MisstatementLabel {
            misstated: false,
            restatement_year: None,
        }
    }

    /// A misstated label, optionally carrying the restatement year.
    pub fn misstated(restatement_year: Option<FiscalYear>) -> Self {
        MisstatementLabel {
            misstated: true,
            restatement_year,
        }
    }
}

/// Raw financial fields of one filing. Every field is optional; the
/// missing-value policy belongs to the feature modules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinancialFields {
    values: [Option<f64>; NUM_RAW_FIELDS],
}

impl FinancialFields {
    pub fn new(values: [Option<f64>; NUM_RAW_FIELDS]) -> Self {
        FinancialFields { values }
    }

    /// Value of the raw field at `index` in canonical column order.
    pub fn get(&self, index: usize) -> Option<f64> {
        self.values[index]
    }

    pub fn set(&mut self, index: usize, value: Option<f64>) {
        self.values[index] = value;
    }

    /// Value of a raw field by its column name.
    pub fn by_name(&self, name: &str) -> Option<f64> {
        RAW_FIELD_NAMES
            .iter()
            .position(|&n| n == name)
            .and_then(|i| self.values[i])
    }

    pub fn values(&self) -> &[Option<f64>; NUM_RAW_FIELDS] {
        &self.values
    }
}

/// One company-year annual report: raw financial fields, optional MD&A
/// text, and a misstatement label.
#[derive(Debug, Clone, PartialEq)]
pub struct FilingRecord {
    pub company: CompanyId,
    pub fiscal_year: FiscalYear,
    pub financials: FinancialFields,
    pub mdna_text: Option<String>,
    pub label: MisstatementLabel,
}

impl FilingRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.company.clone(), self.fiscal_year)
    }

    fn validate(&self) -> Result<(), PanelError> {
        if !self.label.misstated && self.label.restatement_year.is_some() {
            return Err(PanelError::InvalidLabel {
                company: self.company.to_string(),
                year: self.fiscal_year.value(),
                reason: "restatement year present on a non-misstated record".into(),
            });
        }
        if let Some(ry) = self.label.restatement_year {
            if ry < self.fiscal_year {
                return Err(PanelError::InvalidLabel {
                    company: self.company.to_string(),
                    year: self.fiscal_year.value(),
                    reason: format!("restatement year {} precedes fiscal year", ry),
                });
            }
        }
        let prcc_f = self.financials.by_name("prcc_f");
        if let Some(v) = prcc_f {
            if v < 0.0 {
                return Err(PanelError::InvalidRecord {
                    company: self.company.to_string(),
                    year: self.fiscal_year.value(),
                    reason: format!("prcc_f must be nonnegative, got {v}"),
                });
            }
        }
        if let Some(v) = self.financials.by_name("csho") {
            if v < 0.0 {
                return Err(PanelError::InvalidRecord {
                    company: self.company.to_string(),
                    year: self.fiscal_year.value(),
                    reason: format!("csho must be nonnegative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Validated, immutable collection of filing records keyed by
/// (company, fiscal year). Records are held in ascending key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    records: Vec<FilingRecord>,
    label_source_tag: String,
    index: BTreeMap<RecordKey, usize>,
}

impl Panel {
    pub fn records(&self) -> &[FilingRecord] {
        &self.records
    }

    pub fn label_source_tag(&self) -> &str {
        &self.label_source_tag
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&FilingRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    pub fn get_by_parts(&self, company: &CompanyId, year: FiscalYear) -> Option<&FilingRecord> {
        self.get(&RecordKey::new(company.clone(), year))
    }

    /// Smallest and largest fiscal years present.
    pub fn year_span(&self) -> (FiscalYear, FiscalYear) {
        let min = self.records.iter().map(|r| r.fiscal_year).min().unwrap();
        let max = self.records.iter().map(|r| r.fiscal_year).max().unwrap();
        (min, max)
    }
}

/// Per-year label counts. The negative-to-positive ratio is absent when a
/// year has no positives.
#[derive(Debug, Clone, PartialEq)]
pub struct YearStats {
    pub positives: usize,
    pub negatives: usize,
    pub ratio: Option<f64>,
}

impl YearStats {
    pub fn total(&self) -> usize {
        self.positives + self.negatives
    }
}

/// Label distribution of a panel, overall and per fiscal year.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelStats {
    pub per_year: BTreeMap<FiscalYear, YearStats>,
    pub total_positives: usize,
    pub total_negatives: usize,
}

impl PanelStats {
    pub fn total(&self) -> usize {
        self.total_positives + self.total_negatives
    }

    /// Overall share of positive records.
    pub fn positive_share(&self) -> f64 {
        self.total_positives as f64 / self.total() as f64
    }
}

/// Validates a sequence of records and assembles them into a panel with
/// records normalized to ascending (company, fiscal year) order.
pub fn build_panel(
    records: impl IntoIterator<Item = FilingRecord>,
    label_source_tag: impl Into<String>,
) -> Result<Panel, PanelError> {
    let mut records: Vec<FilingRecord> = records.into_iter().collect();
    if records.is_empty() {
        return Err(PanelError::EmptyPanel);
    }
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut index = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        record.validate()?;
        let key = record.key();
        if index.insert(key.clone(), i).is_some() {
            return Err(PanelError::DuplicateKey {
                company: key.company.to_string(),
                year: key.year.value(),
            });
        }
    }
    Ok(Panel {
        records,
        label_source_tag: label_source_tag.into(),
        index,
    })
}

/// Per-year positive/negative counts and negative-to-positive ratios.
pub fn panel_stats(panel: &Panel) -> PanelStats {
    let mut per_year: BTreeMap<FiscalYear, (usize, usize)> = BTreeMap::new();
    for record in panel.records() {
        let entry = per_year.entry(record.fiscal_year).or_insert((0, 0));
        if record.label.misstated {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    let mut total_positives = 0;
    let mut total_negatives = 0;
    let per_year = per_year
        .into_iter()
        .map(|(year, (pos, neg))| {
            total_positives += pos;
            total_negatives += neg;
            let ratio = if pos > 0 {
                Some(neg as f64 / pos as f64)
            } else {
                None
            };
            (
                year,
                YearStats {
                    positives: pos,
                    negatives: neg,
                    ratio,
                },
            )
        })
        .collect();
    PanelStats {
        per_year,
        total_positives,
        total_negatives,
    }
}
