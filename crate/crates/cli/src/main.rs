//! `misrank`: synthesize panels, validate and inspect inputs, export
//! feature matrices, run temporal ranking experiments, and compare runs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use misrank_cli::config::load_config;
use misrank_cli::experiment::{
    fit_transforms, run_experiment, ExperimentError, FeatureSet, RunOptions,
};
use misrank_cli::report::{comparison_table, load_metrics};
use misrank_core::ingest::{
    align, extract_mdna, load_filings_dir, parse_financial_table, write_filings_dir,
    write_financial_table, FilingFetcher, SystemClock, UreqTransport,
};
use misrank_core::panel::{build_panel, panel_stats, CompanyId, FiscalYear, Panel, RecordKey};
use misrank_core::synth::{generate_panel, DelayMode, SynthParams};

#[derive(Parser)]
#[command(
    name = "misrank",
    version,
    about = "Temporal evaluation of misstatement-risk ranking on annual reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel, filings directory, and episode truth.
    Synth(SynthArgs),
    /// Validate a panel file, align filings, and print label statistics.
    Ingest(IngestArgs),
    /// Export feature matrices and vocabularies for inspection.
    Featurize(FeaturizeArgs),
    /// Run the configured experiment and persist metrics and rankings.
    Run(RunArgs),
    /// Aggregate several runs into a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving panel.csv, filings/, and episodes.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 3000)]
    companies: usize,
    #[arg(long, default_value_t = 1998)]
    first_year: i32,
    #[arg(long, default_value_t = 2008)]
    last_year: i32,
    #[arg(long, default_value_t = 0.0034)]
    episode_start_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    episode_length_mean: f64,
    #[arg(long, default_value_t = 0.3)]
    delay_p: f64,
    /// per_report or per_episode.
    #[arg(long, default_value = "per_report")]
    delay_mode: String,
    #[arg(long, default_value_t = 0.3)]
    fin_shift: f64,
    #[arg(long, default_value_t = 4.0)]
    leak_strength: f64,
    #[arg(long, default_value_t = 2000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Skip writing the filings directory.
    #[arg(long)]
    no_text: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    filings_dir: Option<PathBuf>,
    #[arg(long, default_value = "FILE")]
    label_source: String,
    /// Fetch one filing as COMPANY:YEAR and store its MD&A in the filings
    /// directory (requires --filings-dir, --endpoint, --contact).
    #[arg(long)]
    fetch: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Identifying contact string sent as the user agent.
    #[arg(long)]
    contact: Option<String>,
    /// Request rate ceiling in requests per second.
    #[arg(long, default_value_t = 8.0)]
    rate: f64,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    filings_dir: Option<PathBuf>,
    /// financial, text, combined, or company_id_only.
    #[arg(long)]
    feature_set: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Fit transforms on these years only, as MIN:MAX (default: all).
    #[arg(long)]
    train_years: Option<String>,
    #[arg(long, default_value_t = 2)]
    min_df: u32,
    #[arg(long, default_value_t = 200000)]
    max_size: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value experiment config file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Runs as LABEL=DIR, where DIR holds a metrics.csv.
    #[arg(required = true)]
    runs: Vec<String>,
    /// Write the comparison CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::Config(_) => Failure::usage(err.to_string()),
            ExperimentError::Io { .. } => Failure::internal(err.to_string()),
            other => Failure::data(other.to_string()),
        }
    }
}

macro_rules! impl_data_failure {
    ($($ty:path),*) => {
        $(impl From<$ty> for Failure {
            fn from(err: $ty) -> Self {
                Failure::data(err.to_string())
            }
        })*
    };
}

impl_data_failure!(
    misrank_core::panel::PanelError,
    misrank_core::ingest::IngestError,
    misrank_core::synth::SynthError
);

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::internal(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let line = err
                .to_string()
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage")
                .to_string();
            eprintln!("misrank: {line}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("misrank: {}", failure.message.replace('\n', " "));
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Featurize(args) => cmd_featurize(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn print_stats(panel: &Panel) {
    let stats = panel_stats(panel);
    println!("year  positives  negatives  total  neg/pos");
    for (year, ys) in &stats.per_year {
        let ratio = ys
            .ratio
            .map(|r| format!("{r:.2}"))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "{year}  {:>9}  {:>9}  {:>5}  {ratio:>7}",
            ys.positives,
            ys.negatives,
            ys.total()
        );
    }
    println!(
        "overall: {} records, {} positives ({:.3}%)",
        stats.total(),
        stats.total_positives,
        100.0 * stats.positive_share()
    );
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let delay_mode: DelayMode = args
        .delay_mode
        .parse()
        .map_err(|e: String| Failure::usage(e))?;
    let params = SynthParams {
        n_companies: args.companies,
        first_year: FiscalYear::new(args.first_year)?,
        last_year: FiscalYear::new(args.last_year)?,
        episode_start_rate: args.episode_start_rate,
        episode_length_mean: args.episode_length_mean,
        delay_p: args.delay_p,
        delay_mode,
        fin_shift: args.fin_shift,
        leak_strength: args.leak_strength,
        base_vocab_size: args.vocab_size,
        seed: args.seed,
    };
    let (panel, truths) = generate_panel(&params)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let panel_path = args.out_dir.join("panel.csv");
    let mut buffer = Vec::new();
    write_financial_table(&panel, &mut buffer)?;
    std::fs::write(&panel_path, buffer)?;

    if !args.no_text {
        let written = write_filings_dir(&panel, &args.out_dir.join("filings"))?;
        println!("wrote {written} filings");
    }

    let mut episodes = csv::Writer::from_writer(Vec::new());
    episodes
        .write_record(["company", "start_year", "end_year", "restatement_year"])
        .expect("in-memory csv");
    for truth in &truths {
        episodes
            .write_record([
                truth.company.to_string(),
                truth.start_year.to_string(),
                truth.end_year.to_string(),
                truth.restatement_year.to_string(),
            ])
            .expect("in-memory csv");
    }
    std::fs::write(
        args.out_dir.join("episodes.csv"),
        episodes.into_inner().expect("in-memory csv"),
    )?;

    println!("wrote {}", panel_path.display());
    println!("{} episodes across {} companies", truths.len(), args.companies);
    print_stats(&panel);
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<(), Failure> {
    let file = std::fs::File::open(&args.panel)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", args.panel.display())))?;
    let records = parse_financial_table(file)?;
    let panel = match &args.filings_dir {
        Some(dir) => {
            let texts = load_filings_dir(dir)?;
            let outcome = align(records, &texts, args.label_source.clone())?;
            println!(
                "aligned {} texts ({} without a matching record)",
                outcome.matched, outcome.ignored_texts
            );
            outcome.panel
        }
        None => build_panel(records, args.label_source.clone())?,
    };
    print_stats(&panel);

    if let Some(spec) = &args.fetch {
        let (company, year) = spec
            .rsplit_once(':')
            .ok_or_else(|| Failure::usage("--fetch expects COMPANY:YEAR"))?;
        let year: i32 = year
            .parse()
            .map_err(|_| Failure::usage("--fetch expects a numeric year"))?;
        let endpoint = args
            .endpoint
            .as_ref()
            .ok_or_else(|| Failure::usage("--fetch requires --endpoint"))?;
        let contact = args
            .contact
            .as_ref()
            .ok_or_else(|| Failure::usage("--fetch requires --contact"))?;
        let dir = args
            .filings_dir
            .as_ref()
            .ok_or_else(|| Failure::usage("--fetch requires --filings-dir"))?;
        let fetcher = FilingFetcher::with_transport(
            endpoint.clone(),
            contact.clone(),
            Box::new(UreqTransport),
            args.rate,
            Arc::new(SystemClock::new()),
        )?;
        let company = CompanyId::new(company)?;
        let fiscal_year = FiscalYear::new(year)?;
        let raw = fetcher.fetch_filing(&company, fiscal_year)?;
        let mdna = extract_mdna(&raw)?;
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{company}_{fiscal_year}.txt"));
        std::fs::write(&path, &mdna)?;
        println!("saved {} ({} characters of MD&A)", path.display(), mdna.len());
    }
    Ok(())
}

fn cmd_featurize(args: FeaturizeArgs) -> Result<(), Failure> {
    let feature_set: FeatureSet = args
        .feature_set
        .parse()
        .map_err(|e: String| Failure::usage(e))?;
    let file = std::fs::File::open(&args.panel)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", args.panel.display())))?;
    let records = parse_financial_table(file)?;
    let panel = match &args.filings_dir {
        Some(dir) => align(records, &load_filings_dir(dir)?, "FILE")?.panel,
        None => build_panel(records, "FILE")?,
    };

    let train_range = match &args.train_years {
        Some(spec) => {
            let (lo, hi) = spec
                .split_once(':')
                .ok_or_else(|| Failure::usage("--train-years expects MIN:MAX"))?;
            let lo: i32 = lo.parse().map_err(|_| Failure::usage("bad --train-years"))?;
            let hi: i32 = hi.parse().map_err(|_| Failure::usage("bad --train-years"))?;
            Some((lo, hi))
        }
        None => None,
    };
    let train_keys: Vec<RecordKey> = panel
        .records()
        .iter()
        .filter(|r| {
            train_range.map_or(true, |(lo, hi)| {
                r.fiscal_year.value() >= lo && r.fiscal_year.value() <= hi
            })
        })
        .map(|r| r.key())
        .collect();
    if train_keys.is_empty() {
        return Err(Failure::data("no records in the training-year range"));
    }

    let options = RunOptions {
        feature_sets: vec![feature_set],
        min_df: args.min_df,
        max_size: args.max_size,
        alpha: args.alpha,
        ..RunOptions::default()
    };
    let transforms = fit_transforms(&panel, feature_set, &options, &train_keys, "export")?;
    let all_keys: Vec<RecordKey> = panel.records().iter().map(|r| r.key()).collect();
    let matrix = transforms.transform(&panel, &all_keys)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut out = String::new();
    for (key, row) in matrix.keys().iter().zip(matrix.rows()) {
        out.push_str(&key.to_string());
        for &(i, v) in row.entries() {
            out.push_str(&format!("\t{i}:{v}"));
        }
        out.push('\n');
    }
    let features_path = args
        .out_dir
        .join(format!("features_{}.tsv", feature_set.as_str()));
    std::fs::write(&features_path, out)?;
    println!(
        "wrote {} ({} rows, dim {})",
        features_path.display(),
        matrix.n_rows(),
        matrix.dim()
    );

    if let Some(vocab) = transforms.vocab() {
        let vocab_path = args.out_dir.join("vocab.tsv");
        std::fs::write(&vocab_path, vocab.export())?;
        println!("wrote {} ({} terms)", vocab_path.display(), vocab.len());
    }
    if let Some(scaler) = transforms.scaler() {
        let mut out = String::from("feature\tmean\tstd\tmedian\n");
        for j in 0..misrank_core::finfeat::NUM_FEATURES {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                misrank_core::finfeat::feature_name(j),
                scaler.means()[j],
                scaler.stds()[j],
                scaler.medians()[j]
            ));
        }
        let scaler_path = args.out_dir.join("scaler.tsv");
        std::fs::write(&scaler_path, out)?;
        println!("wrote {}", scaler_path.display());
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_config(&args.config)?;
    let report = run_experiment(&config)?;
    println!(
        "completed {} fold evaluations over {} folds ({} skipped)",
        report.results.len(),
        report.folds.len(),
        report.skipped.len()
    );
    for skip in &report.skipped {
        eprintln!(
            "skipped test year {} [{}]: {}",
            skip.test_year,
            skip.feature_set.as_str(),
            skip.reason
        );
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let mut runs = Vec::new();
    for spec in &args.runs {
        let (label, dir) = spec
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("expected LABEL=DIR, got {spec:?}")))?;
        let rows = load_metrics(&PathBuf::from(dir).join("metrics.csv"))?;
        runs.push((label.to_string(), rows));
    }
    let table = comparison_table(&runs);
    match &args.out {
        Some(path) => {
            std::fs::write(path, table)?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
