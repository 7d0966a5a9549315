//! Loading financial panels from delimited files, fetching public filings
//! over HTTP, extracting and cleaning the MD&A section, and aligning text
//! with financial records.
//!
//! The panel file format is a UTF-8 CSV with a fixed header (identifier and
//! label columns, then the 28 raw financial fields); empty cells are
//! missing values. Filings live one per file in a directory, named
//! `{company_id}_{fiscal_year}.txt`.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use regex::Regex;
use thiserror::Error;

use crate::panel::{
    build_panel, CompanyId, FilingRecord, FinancialFields, FiscalYear, MisstatementLabel, Panel,
    PanelError, RecordKey, NUM_RAW_FIELDS, RAW_FIELD_NAMES,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("parse error at data row {row}, column {column}: {detail}")]
    ParseError {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("filing not found for {company}:{year}")]
    NotFound { company: String, year: i32 },
    #[error("rate limited by the remote archive")]
    RateLimited,
    #[error("network error: {0}")]
    NetworkError(String),
    #[error("no MD&A section heading found")]
    SectionNotFound,
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// The exact panel-file header, in order.
pub fn panel_header() -> Vec<&'static str> {
    let mut header = vec!["company_id", "fiscal_year", "misstated", "restatement_year"];
    header.extend(RAW_FIELD_NAMES);
    header
}

/// Parses a financial panel CSV into filing records. Empty cells map to
/// missing values; `misstated` must be 0 or 1; `restatement_year` is read
/// when non-empty.
pub fn parse_financial_table(reader: impl Read) -> Result<Vec<FilingRecord>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let expected = panel_header();
    for column in &expected {
        if !headers.iter().any(|h| h == *column) {
            return Err(IngestError::SchemaError(format!("missing column `{column}`")));
        }
    }
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(IngestError::SchemaError(format!(
            "header must be exactly `{}`",
            expected.join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in csv_reader.records().enumerate() {
        let row = row?;
        let record_number = i + 1;
        let field = |col: usize| row.get(col).unwrap_or("").trim();
        let parse_err = |column: &str, detail: String| IngestError::ParseError {
            row: record_number,
            column: column.to_string(),
            detail,
        };

        let company = CompanyId::new(field(0))
            .map_err(|e| parse_err("company_id", e.to_string()))?;
        let fiscal_year = field(1)
            .parse::<i32>()
            .map_err(|e| parse_err("fiscal_year", e.to_string()))
            .and_then(|y| {
                FiscalYear::new(y).map_err(|e| parse_err("fiscal_year", e.to_string()))
            })?;
        let misstated = match field(2) {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    "misstated",
                    format!("expected 0 or 1, got {other:?}"),
                ))
            }
        };
        let restatement_year = match field(3) {
            "" => None,
            text => Some(
                text.parse::<i32>()
                    .map_err(|e| parse_err("restatement_year", e.to_string()))
                    .and_then(|y| {
                        FiscalYear::new(y)
                            .map_err(|e| parse_err("restatement_year", e.to_string()))
                    })?,
            ),
        };
        if !misstated && restatement_year.is_some() {
            return Err(parse_err(
                "restatement_year",
                "set on a non-misstated row".to_string(),
            ));
        }

        let mut financials = FinancialFields::default();
        for (j, name) in RAW_FIELD_NAMES.iter().enumerate() {
            let cell = field(4 + j);
            if cell.is_empty() {
                continue;
            }
            let value = cell
                .parse::<f64>()
                .map_err(|_| parse_err(name, format!("non-numeric cell {cell:?}")))?;
            financials.set(j, Some(value));
        }

        records.push(FilingRecord {
            company,
            fiscal_year,
            financials,
            mdna_text: None,
            label: MisstatementLabel {
                misstated,
                restatement_year,
            },
        });
    }
    Ok(records)
}

/// Writes a panel in the exact format [`parse_financial_table`] reads.
/// Floats use the shortest round-trippable decimal form; MD&A text is not
/// part of this file.
pub fn write_financial_table(panel: &Panel, writer: impl Write) -> Result<(), IngestError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    csv_writer.write_record(panel_header())?;
    for record in panel.records() {
        let mut row: Vec<String> = Vec::with_capacity(4 + NUM_RAW_FIELDS);
        row.push(record.company.to_string());
        row.push(record.fiscal_year.to_string());
        row.push(if record.label.misstated { "1" } else { "0" }.to_string());
        row.push(
            record
                .label
                .restatement_year
                .map(|y| y.to_string())
                .unwrap_or_default(),
        );
        for j in 0..NUM_RAW_FIELDS {
            row.push(
                record
                    .financials
                    .get(j)
                    .map(|v| format!("{v}"))
                    .unwrap_or_default(),
            );
        }
        csv_writer.write_record(&row)?;
    }
    csv_writer.flush()?;
    Ok(())
}

/// One fetched report body, possibly containing markup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFiling {
    pub company: CompanyId,
    pub fiscal_year: FiscalYear,
    pub body: String,
}

/// Extracts the MD&A span: from the last occurrence of an Item 7 heading
/// variant to the next Item 7A or Item 8 heading (or the end of the body),
/// with markup tags removed and whitespace collapsed to single spaces.
///
/// The last-occurrence rule skips table-of-contents mentions, which precede
/// the body heading in annual reports.
pub fn extract_mdna(raw: &RawFiling) -> Result<String, IngestError> {
    let item7 = Regex::new(r"(?i)\bitem\s*7\b").expect("static pattern");
    let boundary = Regex::new(r"(?i)\bitem\s*7a\b|\bitem\s*8\b").expect("static pattern");
    let start = item7
        .find_iter(&raw.body)
        .last()
        .ok_or(IngestError::SectionNotFound)?
        .end();
    let end = boundary
        .find(&raw.body[start..])
        .map(|m| start + m.start())
        .unwrap_or(raw.body.len());
    let span = &raw.body[start..end];

    let tags = Regex::new(r"<[^>]*>").expect("static pattern");
    let no_tags = tags.replace_all(span, " ");
    let no_entities = no_tags.replace("&nbsp;", " ").replace("&amp;", "&");
    let cleaned = no_entities.split_whitespace().collect::<Vec<_>>().join(" ");
    Ok(cleaned)
}

/// Result of joining financial records with report texts.
#[derive(Debug)]
pub struct AlignOutcome {
    pub panel: Panel,
    /// Records that gained text.
    pub matched: usize,
    /// Texts with no matching financial record.
    pub ignored_texts: usize,
}

/// Attaches MD&A text to the financial records that have a matching
/// (company, fiscal year) key and builds the panel. Texts without a match
/// are counted and dropped; records without a match keep no text.
pub fn align(
    financial_records: Vec<FilingRecord>,
    texts: &HashMap<RecordKey, String>,
    label_source_tag: impl Into<String>,
) -> Result<AlignOutcome, IngestError> {
    let mut matched = 0;
    let mut used: usize = 0;
    let records: Vec<FilingRecord> = financial_records
        .into_iter()
        .map(|mut record| {
            if let Some(text) = texts.get(&record.key()) {
                record.mdna_text = Some(text.clone());
                matched += 1;
                used += 1;
            }
            record
        })
        .collect();
    let panel = build_panel(records, label_source_tag)?;
    Ok(AlignOutcome {
        panel,
        matched,
        ignored_texts: texts.len() - used,
    })
}

/// Reads a filings directory of `{company_id}_{fiscal_year}.txt` files.
/// The year is taken from the segment after the last underscore.
pub fn load_filings_dir(dir: &Path) -> Result<HashMap<RecordKey, String>, IngestError> {
    let mut texts = HashMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().map_or(true, |e| e != "txt") {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(stem) => stem,
            None => continue,
        };
        let (company, year) = match stem.rsplit_once('_') {
            Some(parts) => parts,
            None => continue,
        };
        let year: i32 = match year.parse() {
            Ok(y) => y,
            Err(_) => continue,
        };
        let key = RecordKey::new(CompanyId::new(company)?, FiscalYear::new(year)?);
        texts.insert(key, fs::read_to_string(&path)?);
    }
    Ok(texts)
}

/// Writes one text file per record that carries MD&A text, in the format
/// [`load_filings_dir`] reads.
pub fn write_filings_dir(panel: &Panel, dir: &Path) -> Result<usize, IngestError> {
    fs::create_dir_all(dir)?;
    let mut written = 0;
    for record in panel.records() {
        if let Some(text) = &record.mdna_text {
            let name = format!("{}_{}.txt", record.company, record.fiscal_year);
            fs::write(dir.join(name), text)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Monotonic time source, abstracted so rate-limiter behavior is testable
/// without wall-clock sleeps.
pub trait Clock: Send + Sync {
    fn monotonic(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

/// Wall-clock implementation.
pub struct SystemClock {
    origin: std::time::Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: std::time::Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Serializes callers so requests respect a minimum spacing. Safe to share
/// across threads; waiting happens through the clock.
pub struct RateLimiter {
    min_interval: Duration,
    clock: Arc<dyn Clock>,
    last: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn new(max_per_second: f64, clock: Arc<dyn Clock>) -> Result<Self, IngestError> {
        if !(max_per_second > 0.0) || !max_per_second.is_finite() {
            return Err(IngestError::InvalidConfig(format!(
                "rate ceiling must be positive, got {max_per_second}"
            )));
        }
        Ok(RateLimiter {
            min_interval: Duration::from_secs_f64(1.0 / max_per_second),
            clock,
            last: Mutex::new(None),
        })
    }

    /// Blocks until the next request slot.
    pub fn acquire(&self) {
        let mut last = self.last.lock().expect("rate limiter lock");
        let now = self.clock.monotonic();
        let earliest = match *last {
            Some(prev) => prev + self.min_interval,
            None => now,
        };
        if earliest > now {
            self.clock.sleep(earliest - now);
        }
        *last = Some(self.clock.monotonic().max(earliest));
    }
}

/// Minimal HTTP response surface consumed by the fetcher.
#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// HTTP GET abstraction; the default implementation uses a real client,
/// tests substitute scripted transports.
pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, user_agent: &str) -> Result<HttpResponse, IngestError>;
}

/// Production transport backed by ureq.
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str, user_agent: &str) -> Result<HttpResponse, IngestError> {
        match ureq::get(url).set("User-Agent", user_agent).call() {
            Ok(response) => {
                let status = response.status();
                let body = response
                    .into_string()
                    .map_err(|e| IngestError::NetworkError(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, _)) => Ok(HttpResponse {
                status,
                body: String::new(),
            }),
            Err(ureq::Error::Transport(t)) => Err(IngestError::NetworkError(t.to_string())),
        }
    }
}

/// Default request rate ceiling, in requests per second.
pub const DEFAULT_RATE_CEILING: f64 = 8.0;
/// Total attempts per filing (one initial try plus retries).
pub const FETCH_ATTEMPTS: usize = 3;
const BACKOFF_BASE: Duration = Duration::from_millis(250);

/// Fetches filing bodies from a public archive endpoint, identifying the
/// caller, pacing requests through a rate limiter, and retrying transient
/// failures with exponential backoff.
pub struct FilingFetcher {
    base_url: String,
    contact_identity: String,
    transport: Box<dyn HttpTransport>,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
}

impl FilingFetcher {
    pub fn new(base_url: impl Into<String>, contact_identity: impl Into<String>) -> Result<Self, IngestError> {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        Self::with_transport(
            base_url,
            contact_identity,
            Box::new(UreqTransport),
            DEFAULT_RATE_CEILING,
            clock,
        )
    }

    pub fn with_transport(
        base_url: impl Into<String>,
        contact_identity: impl Into<String>,
        transport: Box<dyn HttpTransport>,
        max_per_second: f64,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, IngestError> {
        let contact_identity = contact_identity.into();
        if contact_identity.trim().is_empty() {
            return Err(IngestError::InvalidConfig(
                "contact identity must be non-empty; public archives require an identifying user agent".into(),
            ));
        }
        Ok(FilingFetcher {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            contact_identity,
            transport,
            limiter: RateLimiter::new(max_per_second, clock.clone())?,
            clock,
        })
    }

    fn url_for(&self, company: &CompanyId, year: FiscalYear) -> String {
        format!("{}/{}_{}.txt", self.base_url, company, year)
    }

    /// Fetches the report body for one company-year. Writes nothing; the
    /// caller persists the result.
    pub fn fetch_filing(
        &self,
        company: &CompanyId,
        fiscal_year: FiscalYear,
    ) -> Result<RawFiling, IngestError> {
        let url = self.url_for(company, fiscal_year);
        let mut last_error = IngestError::NetworkError("no attempts made".into());
        for attempt in 0..FETCH_ATTEMPTS {
            if attempt > 0 {
                self.clock.sleep(BACKOFF_BASE * (1 << (attempt - 1)));
            }
            self.limiter.acquire();
            match self.transport.get(&url, &self.contact_identity) {
                Ok(response) if response.status == 200 => {
                    if response.body.is_empty() {
                        last_error = IngestError::NetworkError("empty body".into());
                        continue;
                    }
                    return Ok(RawFiling {
                        company: company.clone(),
                        fiscal_year,
                        body: response.body,
                    });
                }
                Ok(response) if response.status == 404 => {
                    return Err(IngestError::NotFound {
                        company: company.to_string(),
                        year: fiscal_year.value(),
                    });
                }
                Ok(response) if response.status == 429 => {
                    last_error = IngestError::RateLimited;
                }
                Ok(response) => {
                    last_error =
                        IngestError::NetworkError(format!("status {}", response.status));
                }
                Err(e) => last_error = e,
            }
        }
        Err(last_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn company(id: &str) -> CompanyId {
        CompanyId::new(id).unwrap()
    }

    fn year(y: i32) -> FiscalYear {
        FiscalYear::new(y).unwrap()
    }

    fn full_row(company: &str, fiscal: i32, misstated: &str, restated: &str) -> String {
        let cells: Vec<String> = (0..NUM_RAW_FIELDS).map(|j| format!("{}.5", j + 1)).collect();
        format!("{company},{fiscal},{misstated},{restated},{}", cells.join(","))
    }

    #[test]
    fn parses_full_row_without_restatement() {
        let data = format!("{}\n{}\n", panel_header().join(","), full_row("A", 2001, "0", ""));
        let records = parse_financial_table(data.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        assert_eq!(record.company, company("A"));
        assert_eq!(record.fiscal_year, year(2001));
        assert!(!record.label.misstated);
        assert_eq!(record.label.restatement_year, None);
        assert_eq!(record.financials.by_name("act"), Some(1.5));
        assert_eq!(record.financials.by_name("prcc_f"), Some(28.5));
    }

    #[test]
    fn parses_misstated_row_with_restatement_year() {
        let data = format!(
            "{}\n{}\n",
            panel_header().join(","),
            full_row("R", 2001, "1", "2003")
        );
        let records = parse_financial_table(data.as_bytes()).unwrap();
        assert!(records[0].label.misstated);
        assert_eq!(records[0].label.restatement_year, Some(year(2003)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let header: Vec<&str> = panel_header()
            .into_iter()
            .filter(|c| *c != "prcc_f")
            .collect();
        let data = format!("{}\n", header.join(","));
        let err = parse_financial_table(data.as_bytes()).unwrap_err();
        match err {
            IngestError::SchemaError(msg) => assert!(msg.contains("prcc_f")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let mut row = full_row("A", 2001, "0", "");
        row = row.replace("3.5", "abc");
        let data = format!("{}\n{row}\n", panel_header().join(","));
        let err = parse_financial_table(data.as_bytes()).unwrap_err();
        match err {
            IngestError::ParseError { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "at");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cells_are_missing_values() {
        let cells = vec![""; NUM_RAW_FIELDS].join(",");
        let data = format!("{}\nA,2001,0,,{cells}\n", panel_header().join(","));
        let records = parse_financial_table(data.as_bytes()).unwrap();
        assert!(records[0].financials.values().iter().all(Option::is_none));
    }

    #[test]
    fn table_roundtrips_through_write_and_parse() {
        let mut financials = FinancialFields::default();
        financials.set(0, Some(1.0 / 3.0));
        financials.set(27, Some(29.970000000000002));
        let records = vec![
            FilingRecord {
                company: company("A"),
                fiscal_year: year(2001),
                financials,
                mdna_text: None,
                label: MisstatementLabel::misstated(Some(year(2004))),
            },
            FilingRecord {
                company: company("B"),
                fiscal_year: year(2002),
                financials: FinancialFields::default(),
                mdna_text: None,
                label: MisstatementLabel::clean(),
            },
        ];
        let panel = build_panel(records, "AA").unwrap();
        let mut buffer = Vec::new();
        write_financial_table(&panel, &mut buffer).unwrap();
        let parsed = parse_financial_table(buffer.as_slice()).unwrap();
        let reparsed = build_panel(parsed, "AA").unwrap();
        assert_eq!(panel, reparsed);
    }

    #[test]
    fn mdna_uses_last_item7_and_stops_at_boundary() {
        let body = "Table of Contents Item 7. MD&A page 22 Item 8 page 90\n\
                    PART II\n\
                    Item 7. Management's Discussion and Analysis\n\
                    We grew revenue this year.\n\
                    Item 7A. Quantitative Disclosures\n\
                    Irrelevant tail.";
        let raw = RawFiling {
            company: company("A"),
            fiscal_year: year(2001),
            body: body.to_string(),
        };
        let text = extract_mdna(&raw).unwrap();
        assert!(text.contains("We grew revenue this year"));
        assert!(!text.contains("Quantitative"));
        assert!(!text.contains("page 22"));
    }

    #[test]
    fn mdna_strips_tags_and_collapses_whitespace() {
        let body = "Item 7. Discussion <b>of</b> results\n\n\n with   <i>emphasis</i>  here. Item 8.";
        let raw = RawFiling {
            company: company("A"),
            fiscal_year: year(2001),
            body: body.to_string(),
        };
        let text = extract_mdna(&raw).unwrap();
        assert_eq!(text, ". Discussion of results with emphasis here.");
        assert!(!text.contains('<'));
        assert!(!text.contains("  "));
    }

    #[test]
    fn mdna_missing_heading_is_error() {
        let raw = RawFiling {
            company: company("A"),
            fiscal_year: year(2001),
            body: "Item 1. Business. Item 8. Financial statements.".to_string(),
        };
        assert!(matches!(
            extract_mdna(&raw).unwrap_err(),
            IngestError::SectionNotFound
        ));
    }

    #[test]
    fn mdna_does_not_confuse_7a_with_7() {
        let body = "Item 7A. Market risk only.";
        let raw = RawFiling {
            company: company("A"),
            fiscal_year: year(2001),
            body: body.to_string(),
        };
        assert!(matches!(
            extract_mdna(&raw).unwrap_err(),
            IngestError::SectionNotFound
        ));
    }

    fn record(company_id: &str, fiscal: i32) -> FilingRecord {
        FilingRecord {
            company: company(company_id),
            fiscal_year: year(fiscal),
            financials: FinancialFields::default(),
            mdna_text: None,
            label: MisstatementLabel::clean(),
        }
    }

    #[test]
    fn align_joins_on_record_key() {
        let records = vec![record("A", 2001), record("B", 2001), record("C", 2002)];
        let mut texts = HashMap::new();
        texts.insert(RecordKey::new(company("A"), year(2001)), "alpha".to_string());
        texts.insert(RecordKey::new(company("C"), year(2002)), "gamma".to_string());
        texts.insert(RecordKey::new(company("Z"), year(2001)), "orphan".to_string());
        let outcome = align(records, &texts, "AA").unwrap();
        assert_eq!(outcome.matched, 2);
        assert_eq!(outcome.ignored_texts, 1);
        assert_eq!(outcome.panel.len(), 3);
        let a = outcome
            .panel
            .get(&RecordKey::new(company("A"), year(2001)))
            .unwrap();
        assert_eq!(a.mdna_text.as_deref(), Some("alpha"));
        let b = outcome
            .panel
            .get(&RecordKey::new(company("B"), year(2001)))
            .unwrap();
        assert_eq!(b.mdna_text, None);
    }

    #[test]
    fn align_with_empty_texts_is_identity() {
        let records = vec![record("A", 2001), record("B", 2001)];
        let outcome = align(records.clone(), &HashMap::new(), "AA").unwrap();
        assert_eq!(outcome.matched, 0);
        assert_eq!(outcome.ignored_texts, 0);
        let direct = build_panel(records, "AA").unwrap();
        assert_eq!(outcome.panel, direct);
    }

    /// Simulated clock where sleeps advance time instantly.
    struct MockClock {
        now: Mutex<Duration>,
    }

    impl MockClock {
        fn new() -> Self {
            MockClock {
                now: Mutex::new(Duration::ZERO),
            }
        }
    }

    impl Clock for MockClock {
        fn monotonic(&self) -> Duration {
            *self.now.lock().unwrap()
        }

        fn sleep(&self, duration: Duration) {
            *self.now.lock().unwrap() += duration;
        }
    }

    #[test]
    fn rate_limiter_spaces_ten_calls_at_two_per_second() {
        let clock = Arc::new(MockClock::new());
        let limiter = RateLimiter::new(2.0, clock.clone()).unwrap();
        let start = clock.monotonic();
        for _ in 0..10 {
            limiter.acquire();
        }
        let elapsed = clock.monotonic() - start;
        // Nine gaps of at least half a second each.
        assert!(elapsed >= Duration::from_millis(4500), "elapsed {elapsed:?}");
    }

    struct ScriptedTransport {
        responses: Mutex<Vec<Result<HttpResponse, IngestError>>>,
        calls: AtomicUsize,
    }

    impl ScriptedTransport {
        fn new(responses: Vec<Result<HttpResponse, IngestError>>) -> Self {
            ScriptedTransport {
                responses: Mutex::new(responses),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn get(&self, _url: &str, user_agent: &str) -> Result<HttpResponse, IngestError> {
            assert!(!user_agent.is_empty());
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses.lock().unwrap().remove(0)
        }
    }

    fn fetcher_with(
        responses: Vec<Result<HttpResponse, IngestError>>,
    ) -> (FilingFetcher, Arc<MockClock>) {
        let clock = Arc::new(MockClock::new());
        let fetcher = FilingFetcher::with_transport(
            "https://archive.example/filings",
            "analyst@example.com",
            Box::new(ScriptedTransport::new(responses)),
            100.0,
            clock.clone(),
        )
        .unwrap();
        (fetcher, clock)
    }

    #[test]
    fn fetch_unknown_company_is_not_found() {
        let (fetcher, _) = fetcher_with(vec![Ok(HttpResponse {
            status: 404,
            body: String::new(),
        })]);
        let err = fetcher.fetch_filing(&company("NOPE"), year(2001)).unwrap_err();
        assert!(matches!(err, IngestError::NotFound { .. }));
    }

    #[test]
    fn fetch_retries_transient_failure_then_succeeds() {
        let (fetcher, _) = fetcher_with(vec![
            Err(IngestError::NetworkError("reset".into())),
            Ok(HttpResponse {
                status: 200,
                body: "Item 7. Text. Item 8.".to_string(),
            }),
        ]);
        let filing = fetcher.fetch_filing(&company("A"), year(2001)).unwrap();
        assert_eq!(filing.body, "Item 7. Text. Item 8.");
    }

    #[test]
    fn fetch_gives_up_after_three_attempts() {
        let (fetcher, _) = fetcher_with(vec![
            Err(IngestError::NetworkError("reset".into())),
            Ok(HttpResponse {
                status: 429,
                body: String::new(),
            }),
            Err(IngestError::NetworkError("reset again".into())),
            Ok(HttpResponse {
                status: 200,
                body: "never reached".to_string(),
            }),
        ]);
        let err = fetcher.fetch_filing(&company("A"), year(2001)).unwrap_err();
        assert!(matches!(err, IngestError::NetworkError(_)));
    }

    #[test]
    fn fetcher_requires_contact_identity() {
        let clock: Arc<dyn Clock> = Arc::new(MockClock::new());
        let result = FilingFetcher::with_transport(
            "https://archive.example",
            "  ",
            Box::new(ScriptedTransport::new(vec![])),
            1.0,
            clock,
        );
        assert!(matches!(result, Err(IngestError::InvalidConfig(_))));
    }

    #[test]
    fn filings_roundtrip_through_directory(){
        let dir = tempfile::tempdir().unwrap();
        let mut rec = record("A", 2001);
        rec.mdna_text = Some("We grew. Then we grew more.".to_string());
        let mut other = record("B_CO", 2002);
        other.mdna_text = Some("Static text.".to_string());
        let panel = build_panel(vec![rec, other], "AA").unwrap();
        let written = write_filings_dir(&panel, dir.path()).unwrap();
        assert_eq!(written, 2);
        let texts = load_filings_dir(dir.path()).unwrap();
        assert_eq!(
            texts[&RecordKey::new(company("A"), year(2001))],
            "We grew. Then we grew more."
        );
        // Underscores in company ids survive because the year is the
        // segment after the last underscore.
        assert_eq!(
            texts[&RecordKey::new(company("B_CO"), year(2002))],
            "Static text."
        );
    }
}
