//! The generator emits the same panel-CSV and filings-directory formats the
//! ingest module reads: generate, write, parse, align, and compare.

use misrank_core::ingest::{
    align, load_filings_dir, parse_financial_table, write_filings_dir, write_financial_table,
};
use misrank_core::panel::FiscalYear;
use misrank_core::synth::{generate_panel, SynthParams};

#[test]
fn generated_panel_roundtrips_through_files() {
    let params = SynthParams {
        n_companies: 60,
        first_year: FiscalYear::new(2000).unwrap(),
        last_year: FiscalYear::new(2006).unwrap(),
        episode_start_rate: 0.06,
        seed: 7,
        ..SynthParams::default()
    };
    let (panel, _) = generate_panel(&params).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("panel.csv");
    let filings_dir = dir.path().join("filings");

    let mut buffer = Vec::new();
    write_financial_table(&panel, &mut buffer).unwrap();
    std::fs::write(&csv_path, &buffer).unwrap();
    let written = write_filings_dir(&panel, &filings_dir).unwrap();
    assert_eq!(written, panel.len());

    let records = parse_financial_table(std::fs::File::open(&csv_path).unwrap()).unwrap();
    let texts = load_filings_dir(&filings_dir).unwrap();
    let outcome = align(records, &texts, panel.label_source_tag()).unwrap();

    assert_eq!(outcome.matched, panel.len());
    assert_eq!(outcome.ignored_texts, 0);
    assert_eq!(outcome.panel, panel);
}

#[test]
fn rewriting_a_parsed_panel_is_byte_stable() {
    let params = SynthParams {
        n_companies: 25,
        first_year: FiscalYear::new(2001).unwrap(),
        last_year: FiscalYear::new(2004).unwrap(),
        episode_start_rate: 0.08,
        seed: 13,
        ..SynthParams::default()
    };
    let (panel, _) = generate_panel(&params).unwrap();

    let mut first = Vec::new();
    write_financial_table(&panel, &mut first).unwrap();
    let reparsed = parse_financial_table(first.as_slice()).unwrap();
    let rebuilt = misrank_core::panel::build_panel(reparsed, panel.label_source_tag()).unwrap();
    let mut second = Vec::new();
    write_financial_table(&rebuilt, &mut second).unwrap();
    assert_eq!(first, second);
}
