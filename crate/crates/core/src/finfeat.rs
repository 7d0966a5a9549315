//! The 42-dimensional financial feature vector: 28 raw statement fields plus
//! 14 derived accrual/ratio features, with training-median imputation and
//! training-window standard scaling.
//!
//! Derived features compare a fiscal year with the prior year (and, for the
//! free-cash-flow change, the year before that). Any feature whose inputs
//! are missing or whose denominator is zero is marked missing and left to
//! the scaler's imputation.

use thiserror::Error;

use crate::panel::{CompanyId, FiscalYear, Panel, RecordKey, NUM_RAW_FIELDS, RAW_FIELD_NAMES};

/// Total feature count: raw fields then derived features.
pub const NUM_FEATURES: usize = 42;

/// Derived feature names, in vector order after the raw fields.
pub const DERIVED_FEATURE_NAMES: [&str; NUM_FEATURES - NUM_RAW_FIELDS] = [
    "dch_wc",
    "ch_rsst",
    "dch_rec",
    "dch_inv",
    "ch_cs",
    "soft_assets",
    "ch_cm",
    "ch_roa",
    "issue",
    "bm",
    "dpi",
    "reoa",
    "ebit",
    "ch_fcf",
];

/// Name of the feature at `index` in vector order.
pub fn feature_name(index: usize) -> &'static str {
    if index < NUM_RAW_FIELDS {
        RAW_FIELD_NAMES[index]
    } else {
        DERIVED_FEATURE_NAMES[index - NUM_RAW_FIELDS]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FinFeatError {
    #[error("record {0} not found in panel")]
    RecordNotFound(String),
    #[error("cannot fit a scaler on empty input")]
    EmptyInput,
}

/// One record's feature values with an observed/missing mask. Missing slots
/// hold zero and are only meaningful through the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FinancialVector {
    values: [f64; NUM_FEATURES],
    observed: [bool; NUM_FEATURES],
}

impl FinancialVector {
    pub fn get(&self, index: usize) -> Option<f64> {
        self.observed[index].then_some(self.values[index])
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        (0..NUM_FEATURES)
            .find(|&i| feature_name(i) == name)
            .and_then(|i| self.get(i))
    }

    pub fn observed(&self) -> &[bool; NUM_FEATURES] {
        &self.observed
    }

    #[cfg(test)]
    pub(crate) fn from_options(opts: [Option<f64>; NUM_FEATURES]) -> Self {
        let mut v = FinancialVector {
            values: [0.0; NUM_FEATURES],
            observed: [false; NUM_FEATURES],
        };
        for (i, opt) in opts.into_iter().enumerate() {
            if let Some(x) = opt {
                v.values[i] = x;
                v.observed[i] = true;
            }
        }
        v
    }
}

fn sub(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn add(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? + b?)
}

fn div(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    let den = den?;
    if den == 0.0 {
        return None;
    }
    Some(num? / den)
}

/// Field accessor for one record-year, absent when the record is.
#[derive(Clone, Copy)]
struct Fields<'a> {
    record: Option<&'a crate::panel::FilingRecord>,
}

impl<'a> Fields<'a> {
    fn get(&self, name: &str) -> Option<f64> {
        self.record.and_then(|r| r.financials.by_name(name))
    }
}

/// Working capital, non-current operating, and financing accrual components.
fn wc_nco_fin(f: Fields<'_>) -> (Option<f64>, Option<f64>, Option<f64>) {
    let wc = sub(
        sub(f.get("act"), f.get("che")),
        sub(f.get("lct"), f.get("dlc")),
    );
    let nco = sub(
        sub(sub(f.get("at"), f.get("act")), f.get("ivao")),
        sub(sub(f.get("lt"), f.get("lct")), f.get("dltt")),
    );
    let fin = sub(
        add(f.get("ivst"), f.get("ivao")),
        add(add(f.get("dltt"), f.get("dlc")), f.get("pstk")),
    );
    (wc, nco, fin)
}

/// Numerator of the RSST accrual ratio for the year of `cur` relative to
/// `prev`: change in WC + NCO + FIN.
fn rsst_numerator(cur: Fields<'_>, prev: Fields<'_>) -> Option<f64> {
    let (wc_t, nco_t, fin_t) = wc_nco_fin(cur);
    let (wc_p, nco_p, fin_p) = wc_nco_fin(prev);
    add(
        add(sub(wc_t, wc_p), sub(nco_t, nco_p)),
        sub(fin_t, fin_p),
    )
}

fn cash_sales(cur: Fields<'_>, prev: Fields<'_>) -> Option<f64> {
    sub(cur.get("sale"), sub(cur.get("rect"), prev.get("rect")))
}

fn cash_margin(cur: Fields<'_>, prev: Fields<'_>) -> Option<f64> {
    let cs = cash_sales(cur, prev);
    let costs = add(
        sub(
            cur.get("cogs"),
            sub(cur.get("invt"), prev.get("invt")),
        ),
        sub(cur.get("ap"), prev.get("ap")),
    );
    sub(Some(1.0), div(costs, cs))
}

/// Derives the full 42-feature vector for one company-year.
///
/// Raw fields are copied through; change-based features use the prior-year
/// record (and the one before it for the free-cash-flow change) and are
/// missing when that history is absent.
pub fn derive_features(
    panel: &Panel,
    company: &CompanyId,
    year: FiscalYear,
) -> Result<FinancialVector, FinFeatError> {
    let key = RecordKey::new(company.clone(), year);
    let record = panel
        .get(&key)
        .ok_or_else(|| FinFeatError::RecordNotFound(key.to_string()))?;
    let prev_record = FiscalYear::new(year.value() - 1)
        .ok()
        .and_then(|y| panel.get_by_parts(company, y));
    let prev2_record = FiscalYear::new(year.value() - 2)
        .ok()
        .and_then(|y| panel.get_by_parts(company, y));
    let cur = Fields {
        record: Some(record),
    };
    let prev = Fields {
        record: prev_record,
    };
    let prev2 = Fields {
        record: prev2_record,
    };

    let mut out: [Option<f64>; NUM_FEATURES] = [None; NUM_FEATURES];
    for i in 0..NUM_RAW_FIELDS {
        out[i] = record.financials.get(i);
    }

    let avg_at = div(add(cur.get("at"), prev.get("at")), Some(2.0));
    let delta = |name: &str| sub(cur.get(name), prev.get(name));

    // dch_wc: working-capital accruals over average assets.
    let wc_acc = sub(
        sub(delta("act"), delta("che")),
        sub(sub(delta("lct"), delta("dlc")), delta("txp")),
    );
    out[28] = div(wc_acc, avg_at);

    // ch_rsst: RSST accruals over average assets.
    let rsst_t = rsst_numerator(cur, prev);
    out[29] = div(rsst_t, avg_at);

    out[30] = div(delta("rect"), avg_at);
    out[31] = div(delta("invt"), avg_at);

    // ch_cs: relative change in cash sales.
    let cs_t = cash_sales(cur, prev);
    let cs_p = cash_sales(prev, prev2);
    out[32] = div(sub(cs_t, cs_p), cs_p);

    // soft_assets: share of assets that are neither fixed nor cash.
    out[33] = div(
        sub(sub(cur.get("at"), cur.get("ppegt")), cur.get("che")),
        cur.get("at"),
    );

    // ch_cm: change in cash margin.
    out[34] = sub(cash_margin(cur, prev), cash_margin(prev, prev2));

    // ch_roa: change in return on assets.
    let avg_at_prev = div(add(prev.get("at"), prev2.get("at")), Some(2.0));
    out[35] = sub(
        div(cur.get("ib"), avg_at),
        div(prev.get("ib"), avg_at_prev),
    );

    // issue: any stock or long-term debt issuance.
    let sstk = cur.get("sstk");
    let dltis = cur.get("dltis");
    out[36] = match (sstk, dltis) {
        (Some(s), _) if s > 0.0 => Some(1.0),
        (_, Some(d)) if d > 0.0 => Some(1.0),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };

    // bm: book to market.
    let market = match (cur.get("csho"), cur.get("prcc_f")) {
        (Some(c), Some(p)) => Some(c * p),
        _ => None,
    };
    out[37] = div(cur.get("ceq"), market);

    // dpi: depreciation index, prior-year rate over current rate.
    let rate = |f: Fields<'_>| div(f.get("dp"), add(f.get("dp"), f.get("ppegt")));
    out[38] = div(rate(prev), rate(cur));

    out[39] = div(cur.get("re"), cur.get("at"));
    out[40] = div(
        add(add(cur.get("ni"), cur.get("xint")), cur.get("txt")),
        avg_at,
    );

    // ch_fcf: change in free cash flow (earnings less RSST accrual dollars)
    // over average assets; the prior-year accruals need the year before it.
    let fcf_t = sub(cur.get("ib"), rsst_t);
    let fcf_p = sub(prev.get("ib"), rsst_numerator(prev, prev2));
    out[41] = div(sub(fcf_t, fcf_p), avg_at);

    let mut values = [0.0; NUM_FEATURES];
    let mut observed = [false; NUM_FEATURES];
    for (i, opt) in out.into_iter().enumerate() {
        if let Some(v) = opt {
            if v.is_finite() {
                values[i] = v;
                observed[i] = true;
            }
        }
    }
    Ok(FinancialVector { values, observed })
}

/// Per-feature standardization parameters fitted on a training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    means: [f64; NUM_FEATURES],
    stds: [f64; NUM_FEATURES],
    medians: [f64; NUM_FEATURES],
    fitted_on: String,
}

impl Scaler {
    pub fn means(&self) -> &[f64; NUM_FEATURES] {
        &self.means
    }

    pub fn stds(&self) -> &[f64; NUM_FEATURES] {
        &self.stds
    }

    pub fn medians(&self) -> &[f64; NUM_FEATURES] {
        &self.medians
    }

    pub fn fitted_on(&self) -> &str {
        &self.fitted_on
    }
}

fn median_of(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Fits per-feature medians (over observed entries), then means and
/// population standard deviations over the median-imputed training rows.
/// Zero-variance features store a standard deviation of one.
pub fn fit_scaler(
    rows: &[FinancialVector],
    fitted_on: impl Into<String>,
) -> Result<Scaler, FinFeatError> {
    if rows.is_empty() {
        return Err(FinFeatError::EmptyInput);
    }
    let n = rows.len() as f64;
    let mut means = [0.0; NUM_FEATURES];
    let mut stds = [1.0; NUM_FEATURES];
    let mut medians = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let observed: Vec<f64> = rows.iter().filter_map(|r| r.get(j)).collect();
        medians[j] = median_of(observed);
        let imputed = rows.iter().map(|r| r.get(j).unwrap_or(medians[j]));
        let mean = imputed.clone().sum::<f64>() / n;
        let var = imputed.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        means[j] = mean;
        let std = var.sqrt();
        stds[j] = if std > 0.0 { std } else { 1.0 };
    }
    Ok(Scaler {
        means,
        stds,
        medians,
        fitted_on: fitted_on.into(),
    })
}

/// Imputes missing entries with the scaler's training medians, then
/// standardizes each feature.
pub fn apply_scaler(scaler: &Scaler, row: &FinancialVector) -> [f64; NUM_FEATURES] {
    let mut out = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let x = row.get(j).unwrap_or(scaler.medians[j]);
        out[j] = (x - scaler.means[j]) / scaler.stds[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{
        build_panel, FilingRecord, FinancialFields, MisstatementLabel,
    };

    fn company() -> CompanyId {
        CompanyId::new("ACME").unwrap()
    }

    fn year(y: i32) -> FiscalYear {
        FiscalYear::new(y).unwrap()
    }

    fn record_with(fiscal: i32, fields: &[(&str, f64)]) -> FilingRecord {
        let mut financials = FinancialFields::default();
        for &(name, value) in fields {
            let idx = RAW_FIELD_NAMES.iter().position(|&n| n == name).unwrap();
            financials.set(idx, Some(value));
        }
        FilingRecord {
            company: company(),
            fiscal_year: year(fiscal),
            financials,
            mdna_text: None,
            label: MisstatementLabel::clean(),
        }
    }

    fn single_year_panel(fields: &[(&str, f64)]) -> Panel {
        build_panel(vec![record_with(2001, fields)], "SYNTH").unwrap()
    }

    #[test]
    fn book_to_market_from_equity_shares_and_price() {
        let panel = single_year_panel(&[("ceq", 200.0), ("csho", 10.0), ("prcc_f", 4.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("bm"), Some(5.0));
    }

    #[test]
    fn retained_earnings_over_assets() {
        let panel = single_year_panel(&[("re", 50.0), ("at", 200.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("reoa"), Some(0.25));
    }

    #[test]
    fn issue_indicator() {
        let panel = single_year_panel(&[("sstk", 0.0), ("dltis", 0.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("issue"), Some(0.0));

        let panel = single_year_panel(&[("sstk", 1.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("issue"), Some(1.0));

        // Indicator is unknown when neither input is observed.
        let panel = single_year_panel(&[("at", 1.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("issue"), None);
    }

    #[test]
    fn change_features_need_prior_year() {
        let panel = single_year_panel(&[("rect", 10.0), ("at", 100.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("dch_rec"), None);

        let panel = build_panel(
            vec![
                record_with(2000, &[("rect", 4.0), ("at", 60.0)]),
                record_with(2001, &[("rect", 10.0), ("at", 140.0)]),
            ],
            "SYNTH",
        )
        .unwrap();
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        // delta rect 6 over avg assets 100.
        assert_eq!(v.by_name("dch_rec"), Some(0.06));
    }

    #[test]
    fn zero_denominator_marks_missing() {
        let panel = single_year_panel(&[("re", 50.0), ("at", 0.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("reoa"), None);

        let panel = single_year_panel(&[("ceq", 1.0), ("csho", 0.0), ("prcc_f", 4.0)]);
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("bm"), None);
    }

    #[test]
    fn depreciation_index_two_year_rates() {
        let panel = build_panel(
            vec![
                record_with(2000, &[("dp", 10.0), ("ppegt", 90.0)]),
                record_with(2001, &[("dp", 10.0), ("ppegt", 190.0)]),
            ],
            "SYNTH",
        )
        .unwrap();
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        // Prior rate 0.1, current rate 0.05: index 2.
        assert!((v.by_name("dpi").unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ch_fcf_needs_two_prior_years() {
        // WC + NCO + FIN collapses to at - che - lt + ivst - pstk, so with
        // everything but che held fixed the accrual numerators are -delta(che).
        let mk = |fiscal: i32, ib: f64, che: f64| {
            record_with(
                fiscal,
                &[
                    ("ib", ib),
                    ("act", che + 10.0),
                    ("che", che),
                    ("lct", 0.0),
                    ("dlc", 0.0),
                    ("at", 100.0),
                    ("ivao", 0.0),
                    ("lt", 0.0),
                    ("dltt", 0.0),
                    ("ivst", 0.0),
                    ("pstk", 0.0),
                ],
            )
        };
        let panel = build_panel(vec![mk(2000, 5.0, 2.0), mk(2001, 8.0, 6.0)], "SYNTH").unwrap();
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        assert_eq!(v.by_name("ch_fcf"), None);

        let panel = build_panel(
            vec![mk(1999, 3.0, 0.0), mk(2000, 5.0, 2.0), mk(2001, 8.0, 6.0)],
            "SYNTH",
        )
        .unwrap();
        let v = derive_features(&panel, &company(), year(2001)).unwrap();
        // Accrual numerators: 2001 gives -4, 2000 gives -2. So fcf_t = 12,
        // fcf_p = 7, and the change over avg_at = 100 is 0.05.
        assert!((v.by_name("ch_fcf").unwrap() - 0.05).abs() < 1e-12);
        assert!((v.by_name("ch_rsst").unwrap() - (-0.04)).abs() < 1e-12);
    }

    #[test]
    fn record_not_found() {
        let panel = single_year_panel(&[("at", 1.0)]);
        let err = derive_features(&panel, &company(), year(2002)).unwrap_err();
        assert_eq!(err, FinFeatError::RecordNotFound("ACME:2002".into()));
    }

    fn vector_with(index: usize, value: Option<f64>) -> FinancialVector {
        let mut opts = [None; NUM_FEATURES];
        opts[index] = value;
        FinancialVector::from_options(opts)
    }

    #[test]
    fn scaler_two_point_column() {
        let rows = vec![vector_with(0, Some(1.0)), vector_with(0, Some(3.0))];
        let scaler = fit_scaler(&rows, "fold").unwrap();
        assert_eq!(scaler.means()[0], 2.0);
        assert_eq!(scaler.stds()[0], 1.0);
        // Input 3 scales to one.
        assert_eq!(apply_scaler(&scaler, &rows[1])[0], 1.0);
    }

    #[test]
    fn scaler_constant_column_stores_unit_std() {
        let rows = vec![vector_with(3, Some(5.0)); 3];
        let scaler = fit_scaler(&rows, "fold").unwrap();
        assert_eq!(scaler.means()[3], 5.0);
        assert_eq!(scaler.stds()[3], 1.0);
    }

    #[test]
    fn scaler_imputes_median_before_statistics() {
        let rows = vec![
            vector_with(0, Some(1.0)),
            vector_with(0, None),
            vector_with(0, Some(3.0)),
        ];
        let scaler = fit_scaler(&rows, "fold").unwrap();
        assert_eq!(scaler.medians()[0], 2.0);
        assert_eq!(scaler.means()[0], 2.0);
        // Fully-missing row lands at (median - mean) / std for each feature.
        let missing = vector_with(0, None);
        let scaled = apply_scaler(&scaler, &missing);
        assert_eq!(scaled[0], 0.0);
    }

    #[test]
    fn scaler_rejects_empty_input() {
        assert_eq!(fit_scaler(&[], "fold").unwrap_err(), FinFeatError::EmptyInput);
    }

    #[test]
    fn training_rows_scale_to_zero_mean_unit_std() {
        let rows: Vec<FinancialVector> = (0..7)
            .map(|i| {
                let mut opts = [None; NUM_FEATURES];
                opts[0] = Some(i as f64 * 1.7 - 3.0);
                opts[5] = Some((i as f64).powi(2));
                opts[41] = (i % 2 == 0).then_some(i as f64);
                FinancialVector::from_options(opts)
            })
            .collect();
        let scaler = fit_scaler(&rows, "fold").unwrap();
        for j in [0usize, 5, 41] {
            let scaled: Vec<f64> = rows.iter().map(|r| apply_scaler(&scaler, r)[j]).collect();
            let n = scaled.len() as f64;
            let mean = scaled.iter().sum::<f64>() / n;
            let var = scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "feature {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn derive_ignores_unrelated_records() {
        // Purity: adding other companies or later years leaves the vector
        // unchanged.
        let base = build_panel(
            vec![
                record_with(2000, &[("rect", 4.0), ("at", 60.0)]),
                record_with(2001, &[("rect", 10.0), ("at", 140.0)]),
            ],
            "SYNTH",
        )
        .unwrap();
        let v1 = derive_features(&base, &company(), year(2001)).unwrap();

        let mut records = base.records().to_vec();
        let mut other = record_with(2001, &[("rect", 99.0), ("at", 1.0)]);
        other.company = CompanyId::new("OTHER").unwrap();
        records.push(other);
        records.push(record_with(2002, &[("rect", 50.0), ("at", 10.0)]));
        let bigger = build_panel(records, "SYNTH").unwrap();
        let v2 = derive_features(&bigger, &company(), year(2001)).unwrap();
        assert_eq!(v1, v2);
    }
}
