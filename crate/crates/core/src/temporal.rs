//! Chronological sliding-window folds, restatement-date label maturation,
//! and stratified inner cross-validation splits.
//!
//! A fold trains on `window` consecutive years, optionally separated from
//! the test year by a gap, and always tests on a strictly later year. In
//! hard label mode a positive training record is only visible as positive
//! when its restatement year precedes the fold's test year; otherwise it is
//! flipped to negative for that fold. Test-year labels are never modified.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::panel::{FilingRecord, FiscalYear, Panel, RecordKey};

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("need at least {needed} consecutive years, got {available}")]
    InsufficientHistory { needed: i32, available: i32 },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("hard label mode requires a restatement year on positive record {0}")]
    MissingRestatementDate(String),
    #[error("stratified {k}-fold split needs {k} positives, found {available}")]
    TooFewPositives { k: usize, available: usize },
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("record {0} missing from the effective label set")]
    UnknownKey(String),
}

/// How training labels are derived from gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Training labels equal gold labels.
    Naive,
    /// Positives whose restatement year has not arrived before the test
    /// year are flipped to negative.
    Hard,
}

impl LabelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelMode::Naive => "naive",
            LabelMode::Hard => "hard",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(LabelMode::Naive),
            "hard" => Ok(LabelMode::Hard),
            other => Err(format!("unknown label mode {other:?}")),
        }
    }
}

/// One chronological evaluation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    train_years: Vec<FiscalYear>,
    gap: u32,
    test_year: FiscalYear,
}

impl FoldSpec {
    /// Training years in ascending order; always `window` contiguous years
    /// ending `gap + 1` years before the test year.
    pub fn train_years(&self) -> &[FiscalYear] {
        &self.train_years
    }

    pub fn gap(&self) -> u32 {
        self.gap
    }

    pub fn test_year(&self) -> FiscalYear {
        self.test_year
    }

    pub fn window(&self) -> u32 {
        self.train_years.len() as u32
    }

    pub fn contains_train_year(&self, year: FiscalYear) -> bool {
        self.train_years.first().map_or(false, |&lo| {
            year >= lo && year <= *self.train_years.last().unwrap()
        })
    }
}

/// One fold per feasible test year, ascending. The first feasible test year
/// leaves room for `window` training years plus the gap.
pub fn generate_folds(
    first_year: FiscalYear,
    last_year: FiscalYear,
    window: u32,
    gap: u32,
) -> Result<Vec<FoldSpec>, TemporalError> {
    if window < 1 {
        return Err(TemporalError::ZeroWindow);
    }
    let needed = (window + gap + 1) as i32;
    let available = last_year.value() - first_year.value() + 1;
    if available < needed {
        return Err(TemporalError::InsufficientHistory { needed, available });
    }
    let mut folds = Vec::new();
    for test in (first_year.value() + needed - 1)..=last_year.value() {
        let train_start = test - gap as i32 - window as i32;
        let train_years = (train_start..test - gap as i32)
            .map(|y| FiscalYear::new(y).expect("train year within panel range"))
            .collect();
        folds.push(FoldSpec {
            train_years,
            gap,
            test_year: FiscalYear::new(test).expect("test year within panel range"),
        });
    }
    Ok(folds)
}

/// Effective training labels for one fold, with the record keys whose
/// positive label was flipped to negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveLabelSet {
    labels: BTreeMap<RecordKey, bool>,
    flip_log: BTreeSet<RecordKey>,
}

impl EffectiveLabelSet {
    pub fn labels(&self) -> &BTreeMap<RecordKey, bool> {
        &self.labels
    }

    pub fn flip_log(&self) -> &BTreeSet<RecordKey> {
        &self.flip_log
    }

    pub fn get(&self, key: &RecordKey) -> Option<bool> {
        self.labels.get(key).copied()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.values().filter(|&&p| p).count()
    }
}

fn training_records<'p>(panel: &'p Panel, fold: &FoldSpec) -> Vec<&'p FilingRecord> {
    panel
        .records()
        .iter()
        .filter(|r| fold.contains_train_year(r.fiscal_year))
        .collect()
}

/// Derives effective training labels for a fold.
///
/// Naive mode copies gold labels. Hard mode keeps a positive only when its
/// restatement year precedes the fold's test year, flipping it to negative
/// otherwise and recording the flip. Only training-window records appear in
/// the result; test-year labels are left untouched by construction.
pub fn mature_labels(
    panel: &Panel,
    fold: &FoldSpec,
    mode: LabelMode,
) -> Result<EffectiveLabelSet, TemporalError> {
    let mut labels = BTreeMap::new();
    let mut flip_log = BTreeSet::new();
    for record in training_records(panel, fold) {
        let key = record.key();
        let effective = match (mode, record.label.misstated) {
            (_, false) => false,
            (LabelMode::Naive, true) => true,
            (LabelMode::Hard, true) => {
                let restated = record.label.restatement_year.ok_or_else(|| {
                    TemporalError::MissingRestatementDate(key.to_string())
                })?;
                let known = restated < fold.test_year;
                if !known {
                    flip_log.insert(key.clone());
                }
                known
            }
        };
        labels.insert(key, effective);
    }
    Ok(EffectiveLabelSet { labels, flip_log })
}

/// Stratified k-fold partition of training keys by effective label,
/// deterministic given the seed. Each returned pair is
/// (training part, validation part).
pub fn inner_cv_splits(
    train_keys: &[RecordKey],
    effective_labels: &EffectiveLabelSet,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<RecordKey>, Vec<RecordKey>)>, TemporalError> {
    if k < 2 {
        return Err(TemporalError::KTooSmall(k));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for key in train_keys {
        match effective_labels.get(key) {
            Some(true) => positives.push(key.clone()),
            Some(false) => negatives.push(key.clone()),
            None => return Err(TemporalError::UnknownKey(key.to_string())),
        }
    }
    if positives.len() < k {
        return Err(TemporalError::TooFewPositives {
            k,
            available: positives.len(),
        });
    }
    // Sort before shuffling so the outcome depends only on the key set and
    // the seed, not on input order.
    positives.sort();
    negatives.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let mut parts: Vec<Vec<RecordKey>> = vec![Vec::new(); k];
    for (i, key) in positives.into_iter().chain(negatives).enumerate() {
        parts[i % k].push(key);
    }
    let splits = (0..k)
        .map(|held_out| {
            let mut train = Vec::new();
            for (i, part) in parts.iter().enumerate() {
                if i != held_out {
                    train.extend(part.iter().cloned());
                }
            }
            let mut validation = parts[held_out].clone();
            train.sort();
            validation.sort();
            (train, validation)
        })
        .collect();
    Ok(splits)
}

/// For each training-year offset k in 1..=window, the fraction of that
/// year's true positives whose restatement year precedes the fold's test
/// year. Absent when the year has no positives.
pub fn flip_fraction_by_offset(
    panel: &Panel,
    fold: &FoldSpec,
) -> Result<BTreeMap<u32, Option<f64>>, TemporalError> {
    let mut counts: BTreeMap<u32, (usize, usize)> = (1..=fold.window())
        .map(|k| (k, (0, 0)))
        .collect();
    for record in training_records(panel, fold) {
        if !record.label.misstated {
            continue;
        }
        let restated = record
            .label
            .restatement_year
            .ok_or_else(|| TemporalError::MissingRestatementDate(record.key().to_string()))?;
        let offset =
            (fold.test_year.value() - fold.gap as i32 - record.fiscal_year.value()) as u32;
        let entry = counts.get_mut(&offset).expect("offset within window");
        entry.1 += 1;
        if restated < fold.test_year {
            entry.0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(k, (known, total))| {
            let fraction = if total > 0 {
                Some(known as f64 / total as f64)
            } else {
                None
            };
            (k, fraction)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_panel, CompanyId, FinancialFields, MisstatementLabel};

    fn year(y: i32) -> FiscalYear {
        FiscalYear::new(y).unwrap()
    }

    fn record(company: &str, fiscal: i32, restated: Option<i32>) -> FilingRecord {
        let label = match restated {
            Some(r) => MisstatementLabel::misstated(Some(year(r))),
            None => MisstatementLabel::clean(),
        };
        FilingRecord {
            company: CompanyId::new(company).unwrap(),
            fiscal_year: year(fiscal),
            financials: FinancialFields::default(),
            mdna_text: None,
            label,
        }
    }

    fn key(company: &str, fiscal: i32) -> RecordKey {
        RecordKey::new(CompanyId::new(company).unwrap(), year(fiscal))
    }

    #[test]
    fn folds_follow_window_and_gap() {
        let folds = generate_folds(year(1998), year(2008), 3, 0).unwrap();
        assert_eq!(folds.len(), 8);
        let first = &folds[0];
        assert_eq!(first.test_year(), year(2001));
        assert_eq!(first.train_years(), &[year(1998), year(1999), year(2000)]);
        // Testing in 2003 trains on 2000-2002.
        let f2003 = folds.iter().find(|f| f.test_year() == year(2003)).unwrap();
        assert_eq!(f2003.train_years(), &[year(2000), year(2001), year(2002)]);
    }

    #[test]
    fn folds_respect_two_year_gap() {
        let folds = generate_folds(year(1998), year(2008), 3, 2).unwrap();
        let f2005 = folds.iter().find(|f| f.test_year() == year(2005)).unwrap();
        assert_eq!(f2005.train_years(), &[year(2000), year(2001), year(2002)]);
        assert_eq!(f2005.gap(), 2);
    }

    #[test]
    fn folds_require_enough_history() {
        let err = generate_folds(year(2000), year(2002), 3, 0).unwrap_err();
        assert_eq!(
            err,
            TemporalError::InsufficientHistory {
                needed: 4,
                available: 3
            }
        );
    }

    fn appendix_panel() -> Panel {
        // Report R: fiscal 2001, restated 2003, plus clean fillers so every
        // training year is populated.
        let mut records = vec![record("R", 2001, Some(2003))];
        for y in 1998..=2004 {
            records.push(record("F", y, None));
        }
        build_panel(records, "AA").unwrap()
    }

    #[test]
    fn hard_mode_flips_unknown_positive() {
        let panel = appendix_panel();
        let folds = generate_folds(year(1998), year(2004), 3, 0).unwrap();
        // Test 2003 trains on 2000-2002: the restatement has not arrived.
        let f2003 = folds.iter().find(|f| f.test_year() == year(2003)).unwrap();
        let eff = mature_labels(&panel, f2003, LabelMode::Hard).unwrap();
        assert_eq!(eff.get(&key("R", 2001)), Some(false));
        assert!(eff.flip_log().contains(&key("R", 2001)));

        // Test 2004 trains on 2001-2003: the 2003 restatement is known.
        let f2004 = folds.iter().find(|f| f.test_year() == year(2004)).unwrap();
        let eff = mature_labels(&panel, f2004, LabelMode::Hard).unwrap();
        assert_eq!(eff.get(&key("R", 2001)), Some(true));
        assert!(eff.flip_log().is_empty());
    }

    #[test]
    fn negatives_unchanged_in_both_modes() {
        let panel = appendix_panel();
        let folds = generate_folds(year(1998), year(2004), 3, 0).unwrap();
        for fold in &folds {
            for mode in [LabelMode::Naive, LabelMode::Hard] {
                let eff = mature_labels(&panel, fold, mode).unwrap();
                for y in fold.train_years() {
                    assert_eq!(eff.get(&key("F", y.value())), Some(false));
                }
            }
        }
    }

    #[test]
    fn naive_mode_is_identity_on_labels() {
        let panel = appendix_panel();
        let folds = generate_folds(year(1998), year(2004), 3, 0).unwrap();
        for fold in &folds {
            let eff = mature_labels(&panel, fold, LabelMode::Naive).unwrap();
            assert!(eff.flip_log().is_empty());
            for (k, &label) in eff.labels() {
                assert_eq!(label, panel.get(k).unwrap().label.misstated);
            }
        }
    }

    #[test]
    fn hard_mode_requires_restatement_year() {
        let mut records = vec![FilingRecord {
            company: CompanyId::new("R").unwrap(),
            fiscal_year: year(2001),
            financials: FinancialFields::default(),
            mdna_text: None,
            label: MisstatementLabel::misstated(None),
        }];
        for y in 1999..=2002 {
            records.push(record("F", y, None));
        }
        let panel = build_panel(records, "AA").unwrap();
        let folds = generate_folds(year(1999), year(2002), 3, 0).unwrap();
        let err = mature_labels(&panel, &folds[0], LabelMode::Hard).unwrap_err();
        assert_eq!(
            err,
            TemporalError::MissingRestatementDate("R:2001".into())
        );
        // Naive mode tolerates the missing date.
        assert!(mature_labels(&panel, &folds[0], LabelMode::Naive).is_ok());
    }

    fn labels_for(keys: &[(RecordKey, bool)]) -> EffectiveLabelSet {
        EffectiveLabelSet {
            labels: keys.iter().cloned().collect(),
            flip_log: BTreeSet::new(),
        }
    }

    #[test]
    fn splits_are_stratified() {
        let mut pairs = Vec::new();
        for i in 0..2 {
            pairs.push((key(&format!("P{i}"), 2000), true));
        }
        for i in 0..8 {
            pairs.push((key(&format!("N{i}"), 2000), false));
        }
        let eff = labels_for(&pairs);
        let keys: Vec<RecordKey> = pairs.iter().map(|(k, _)| k.clone()).collect();
        let splits = inner_cv_splits(&keys, &eff, 2, 7).unwrap();
        assert_eq!(splits.len(), 2);
        for (train, validation) in &splits {
            assert_eq!(train.len() + validation.len(), keys.len());
            let val_pos = validation.iter().filter(|k| eff.get(k).unwrap()).count();
            assert_eq!(val_pos, 1);
            // Disjoint cover.
            for k in validation {
                assert!(!train.contains(k));
            }
        }
    }

    #[test]
    fn splits_are_deterministic() {
        let mut pairs = Vec::new();
        for i in 0..3 {
            pairs.push((key(&format!("P{i}"), 2000), true));
        }
        for i in 0..9 {
            pairs.push((key(&format!("N{i}"), 2000), false));
        }
        let eff = labels_for(&pairs);
        let keys: Vec<RecordKey> = pairs.iter().map(|(k, _)| k.clone()).collect();
        let a = inner_cv_splits(&keys, &eff, 3, 42).unwrap();
        let b = inner_cv_splits(&keys, &eff, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = inner_cv_splits(&keys, &eff, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_need_enough_positives() {
        let pairs: Vec<(RecordKey, bool)> = (0..10)
            .map(|i| (key(&format!("K{i}"), 2000), i == 0))
            .collect();
        let eff = labels_for(&pairs);
        let keys: Vec<RecordKey> = pairs.iter().map(|(k, _)| k.clone()).collect();
        let err = inner_cv_splits(&keys, &eff, 5, 1).unwrap_err();
        assert_eq!(err, TemporalError::TooFewPositives { k: 5, available: 1 });
    }

    #[test]
    fn flip_fractions_at_extremes() {
        // All delays zero: every positive is known for any later test year.
        let mut records = Vec::new();
        for y in 2000..=2003 {
            records.push(record(&format!("P{y}"), y, Some(y)));
            records.push(record(&format!("F{y}"), y, None));
        }
        let panel = build_panel(records, "AA").unwrap();
        let fold = &generate_folds(year(2000), year(2003), 3, 0).unwrap()[0];
        let fractions = flip_fraction_by_offset(&panel, fold).unwrap();
        assert!(fractions.values().all(|f| *f == Some(1.0)));

        // Delays past window + gap: nothing is known.
        let mut records = Vec::new();
        for y in 2000..=2003 {
            records.push(record(&format!("P{y}"), y, Some(y + 10)));
            records.push(record(&format!("F{y}"), y, None));
        }
        let panel = build_panel(records, "AA").unwrap();
        let fractions = flip_fraction_by_offset(&panel, fold).unwrap();
        assert!(fractions.values().all(|f| *f == Some(0.0)));
    }

    #[test]
    fn flip_fractions_absent_without_positives() {
        let mut records = Vec::new();
        for y in 2000..=2003 {
            records.push(record(&format!("F{y}"), y, None));
        }
        records.push(record("P", 2001, Some(2001)));
        let panel = build_panel(records, "AA").unwrap();
        let fold = &generate_folds(year(2000), year(2003), 3, 0).unwrap()[0];
        let fractions = flip_fraction_by_offset(&panel, fold).unwrap();
        // Offset 2 is fiscal 2001 (test 2003, gap 0): has the one positive.
        assert_eq!(fractions[&2], Some(1.0));
        assert_eq!(fractions[&1], None);
        assert_eq!(fractions[&3], None);
    }
}
