//! Deterministic synthetic financial panels with serial misstatement
//! episodes, geometric detection delays, company-identity leakage in the
//! text, and controllable class prevalence.
//!
//! Companies evolve AR(1) financial baselines with a mild calendar drift,
//! and misstatement episodes additively shift those baselines along a
//! direction that rotates slowly over calendar years. Report text is a bag
//! of base-vocabulary tokens plus always-present company-identifier tokens
//! plus risk tokens whose rate is multiplied by `leak_strength` from the
//! company's first episode onward. Generation reads three independent
//! random streams per company (episodes, financials, text), so label
//! structure and content can be varied independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Zipf};
use thiserror::Error;

use crate::panel::{
    build_panel, CompanyId, FilingRecord, FinancialFields, FiscalYear, MisstatementLabel, Panel,
    NUM_RAW_FIELDS,
};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

/// How restatement years are assigned to the reports of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayMode {
    /// Every positive report draws its own geometric delay from its fiscal
    /// year, which makes the fraction-known law exactly analytic.
    PerReport,
    /// One delay per episode; all member reports share the restatement
    /// year counted from the episode's final year.
    PerEpisode,
}

impl DelayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DelayMode::PerReport => "per_report",
            DelayMode::PerEpisode => "per_episode",
        }
    }
}

impl std::str::FromStr for DelayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_report" => Ok(DelayMode::PerReport),
            "per_episode" => Ok(DelayMode::PerEpisode),
            other => Err(format!("unknown delay mode {other:?}")),
        }
    }
}

/// Generator parameters. `Default` is calibrated to roughly 1% positive
/// prevalence on a 3000-company, 1998-2008 panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_companies: usize,
    pub first_year: FiscalYear,
    pub last_year: FiscalYear,
    /// Probability an episode starts in a company-year outside an episode.
    pub episode_start_rate: f64,
    /// Mean episode length in years (geometric on 1, 2, ...).
    pub episode_length_mean: f64,
    /// Geometric delay parameter on 0, 1, 2, ... years.
    pub delay_p: f64,
    pub delay_mode: DelayMode,
    /// Relative size of the episode shift applied to financial baselines.
    pub fin_shift: f64,
    /// Risk-token rate multiplier during and after episodes.
    pub leak_strength: f64,
    pub base_vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_companies: 3000,
            first_year: FiscalYear::new(1998).unwrap(),
            last_year: FiscalYear::new(2008).unwrap(),
            episode_start_rate: 0.0034,
            episode_length_mean: 3.0,
            delay_p: 0.3,
            delay_mode: DelayMode::PerReport,
            fin_shift: 0.3,
            leak_strength: 4.0,
            base_vocab_size: 2000,
            seed: 42,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidParams(msg));
        if self.n_companies < 1 {
            return bad("n_companies must be at least 1".into());
        }
        if self.first_year > self.last_year {
            return bad(format!(
                "year range {}..{} is empty",
                self.first_year, self.last_year
            ));
        }
        for (name, p) in [
            ("episode_start_rate", self.episode_start_rate),
            ("delay_p", self.delay_p),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {p}"));
            }
        }
        if !(self.episode_length_mean >= 1.0) || !self.episode_length_mean.is_finite() {
            return bad(format!(
                "episode_length_mean must be at least 1, got {}",
                self.episode_length_mean
            ));
        }
        if !(0.0..=0.95).contains(&self.fin_shift) {
            return bad(format!("fin_shift must lie in [0, 0.95], got {}", self.fin_shift));
        }
        if !(self.leak_strength > 0.0) || !self.leak_strength.is_finite() {
            return bad(format!(
                "leak_strength must be positive, got {}",
                self.leak_strength
            ));
        }
        if self.base_vocab_size < 1 {
            return bad("base_vocab_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Ground truth for one misstatement episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeTruth {
    pub company: CompanyId,
    pub start_year: FiscalYear,
    pub end_year: FiscalYear,
    /// In per-episode mode the shared restatement year; in per-report mode
    /// the latest member report's restatement year.
    pub restatement_year: FiscalYear,
}

/// Probability that a positive report at training offset k (years before
/// test year minus gap) is already restated before the test year, under the
/// per-report geometric delay law: 1 - (1 - p)^(gap + k).
pub fn analytic_known_fraction(delay_p: f64, offset_k: u32, gap: u32) -> Result<f64, SynthError> {
    if !(delay_p > 0.0 && delay_p < 1.0) {
        return Err(SynthError::InvalidParams(format!(
            "delay_p must lie in (0, 1), got {delay_p}"
        )));
    }
    if offset_k < 1 {
        return Err(SynthError::InvalidParams(
            "offset must be at least 1".into(),
        ));
    }
    Ok(1.0 - (1.0 - delay_p).powi((gap + offset_k) as i32))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Geometric sample on {1, 2, ...} with success probability p.
fn geometric_from_one(rng: &mut ChaCha8Rng, p: f64) -> u32 {
    let u: f64 = rng.gen();
    let ratio = (1.0 - u).ln() / (1.0 - p).ln();
    1 + ratio.floor().min(1e6) as u32
}

/// Geometric sample on {0, 1, ...} with success probability p.
fn geometric_from_zero(rng: &mut ChaCha8Rng, p: f64) -> u32 {
    let u: f64 = rng.gen();
    let ratio = (1.0 - u).ln() / (1.0 - p).ln();
    ratio.floor().min(1e6) as u32
}

fn clamp_year(year: i32) -> FiscalYear {
    FiscalYear::new(year.clamp(1900, 2100)).expect("clamped year is valid")
}

/// Ratio of each raw field to company size. Price per share and the share
/// count are handled separately.
const BASE_RATIOS: [f64; NUM_RAW_FIELDS] = [
    0.45,  // act
    0.08,  // ap
    1.0,   // at
    0.40,  // ceq
    0.12,  // che
    0.55,  // cogs
    0.04,  // csho
    0.05,  // dlc
    0.15,  // invt
    0.03,  // dltis
    0.20,  // dltt
    0.06,  // ni
    0.35,  // ppegt
    0.04,  // dp
    0.18,  // rect
    0.055, // ib
    0.02,  // ivao
    0.25,  // re
    0.03,  // ivst
    0.22,  // lct
    0.55,  // lt
    0.01,  // pstk
    0.90,  // sale
    0.01,  // sstk
    0.015, // txp
    0.02,  // txt
    0.012, // xint
    30.0,  // prcc_f (price level, not a ratio)
];

const PRCC_F_INDEX: usize = 27;
const CSHO_INDEX: usize = 6;
const AR1_PHI: f64 = 0.7;
const AR1_NOISE_STD: f64 = 0.08;
/// Calendar growth of baselines per year.
const BASELINE_DRIFT: f64 = 0.03;
/// Years for the episode-shift direction to rotate once.
const SHIFT_ROTATION_PERIOD: f64 = 12.0;
/// Per-field missingness outside the always-present fields.
const MISSING_RATE: f64 = 0.02;
const ALWAYS_PRESENT: [usize; 4] = [2, 6, 22, 27]; // at, csho, sale, prcc_f

const RISK_TOKEN_COUNT: usize = 10;
/// Expected occurrences of each risk token per document at baseline.
const RISK_BASE_RATE: f64 = 0.3;

/// Direction of the episode shift for a field in a calendar year; rotates
/// slowly so that stale training windows see a rotated signature.
fn episode_shift_direction(field: usize, year: i32) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * field as f64 / NUM_RAW_FIELDS as f64;
    let angle = 2.0 * std::f64::consts::PI * year as f64 / SHIFT_ROTATION_PERIOD + phase;
    angle.cos()
}

struct CompanyPlan {
    episodes: Vec<(i32, i32)>,
    /// fiscal year -> restatement year for positive reports.
    restatements: Vec<(i32, i32)>,
}

fn plan_company(
    params: &SynthParams,
    rng: &mut ChaCha8Rng,
) -> CompanyPlan {
    let first = params.first_year.value();
    let last = params.last_year.value();
    let mut episodes = Vec::new();
    let mut year = first;
    while year <= last {
        if rng.gen_bool(params.episode_start_rate) {
            let length = geometric_from_one(rng, 1.0 / params.episode_length_mean);
            let end = (year + length as i32 - 1).min(last);
            episodes.push((year, end));
            year = end + 1;
        } else {
            year += 1;
        }
    }
    let mut restatements = Vec::new();
    for &(start, end) in &episodes {
        match params.delay_mode {
            DelayMode::PerReport => {
                for y in start..=end {
                    let delay = geometric_from_zero(rng, params.delay_p) as i32;
                    restatements.push((y, (y + delay).min(2100)));
                }
            }
            DelayMode::PerEpisode => {
                let delay = geometric_from_zero(rng, params.delay_p) as i32;
                for y in start..=end {
                    restatements.push((y, (end + delay).min(2100)));
                }
            }
        }
    }
    CompanyPlan {
        episodes,
        restatements,
    }
}

fn in_episode(plan: &CompanyPlan, year: i32) -> bool {
    plan.episodes
        .iter()
        .any(|&(start, end)| year >= start && year <= end)
}

fn first_episode_start(plan: &CompanyPlan) -> Option<i32> {
    plan.episodes.first().map(|&(start, _)| start)
}

fn generate_financials(
    params: &SynthParams,
    plan: &CompanyPlan,
    size: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<FinancialFields> {
    let first = params.first_year.value();
    let last = params.last_year.value();
    let noise = Normal::new(0.0, AR1_NOISE_STD).expect("valid normal");
    let mut deviations = [0.0f64; NUM_RAW_FIELDS];
    for dev in &mut deviations {
        *dev = noise.sample(rng);
    }
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    for year in first..=last {
        let drift = (1.0 + BASELINE_DRIFT).powi(year - first);
        let episode_active = in_episode(plan, year);
        let mut fields = FinancialFields::default();
        for field in 0..NUM_RAW_FIELDS {
            deviations[field] =
                (AR1_PHI * deviations[field] + noise.sample(rng)).clamp(-0.9, 0.9);
            let missing =
                !ALWAYS_PRESENT.contains(&field) && rng.gen_bool(MISSING_RATE);
            if missing {
                continue;
            }
            let base = if field == PRCC_F_INDEX {
                BASE_RATIOS[field]
            } else {
                BASE_RATIOS[field] * size
            };
            let mut value = base * drift * (1.0 + deviations[field]);
            if episode_active && field != CSHO_INDEX {
                value *= 1.0 + params.fin_shift * episode_shift_direction(field, year);
            }
            if field == PRCC_F_INDEX || field == CSHO_INDEX {
                value = value.max(0.01);
            }
            fields.set(field, Some(value));
        }
        out.push(fields);
    }
    out
}

fn generate_text(
    params: &SynthParams,
    plan: &CompanyPlan,
    identity_token: &str,
    zipf: &Zipf<f64>,
    rng: &mut ChaCha8Rng,
    year: i32,
) -> String {
    let mut sentences: Vec<Vec<String>> = Vec::new();
    let n_sentences = 4 + rng.gen_range(0..4);
    for _ in 0..n_sentences {
        let length = 6 + rng.gen_range(0..6);
        let mut sentence = Vec::with_capacity(length);
        for _ in 0..length {
            let sample = zipf.sample(rng) as usize;
            sentence.push(format!("w{}", sample.min(params.base_vocab_size) - 1));
        }
        sentences.push(sentence);
    }
    // The company identifier always appears a few times.
    for _ in 0..3 {
        let s = rng.gen_range(0..sentences.len());
        let pos = rng.gen_range(0..=sentences[s].len());
        sentences[s].insert(pos, identity_token.to_string());
    }
    // Risk language, amplified from the first episode onward.
    let elevated = first_episode_start(plan).map_or(false, |start| year >= start);
    let rate = if elevated {
        RISK_BASE_RATE * params.leak_strength
    } else {
        RISK_BASE_RATE
    };
    let poisson = Poisson::new(rate).expect("valid poisson rate");
    for token_index in 0..RISK_TOKEN_COUNT {
        let count = poisson.sample(rng) as usize;
        for _ in 0..count {
            let s = rng.gen_range(0..sentences.len());
            let pos = rng.gen_range(0..=sentences[s].len());
            sentences[s].insert(pos, format!("riskterm{token_index}"));
        }
    }
    let mut doc = String::new();
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            doc.push(' ');
        }
        let mut first = true;
        for token in sentence {
            if !first {
                doc.push(' ');
            }
            if first {
                // Capitalize so downstream sentence splitting works.
                let mut chars = token.chars();
                if let Some(c) = chars.next() {
                    doc.extend(c.to_uppercase());
                    doc.push_str(chars.as_str());
                }
                first = false;
            } else {
                doc.push_str(token);
            }
        }
        doc.push('.');
    }
    doc
}

/// Generates a synthetic panel and its episode ground truth. Deterministic
/// given the parameters; companies use independent derived seeds, and the
/// episode process, financial noise, and text noise read separate streams.
pub fn generate_panel(params: &SynthParams) -> Result<(Panel, Vec<EpisodeTruth>), SynthError> {
    params.validate()?;
    let zipf = Zipf::new(params.base_vocab_size as u64, 1.1)
        .map_err(|e| SynthError::InvalidParams(format!("zipf: {e}")))?;
    let mut records = Vec::new();
    let mut truths = Vec::new();
    for index in 0..params.n_companies {
        let company_seed = splitmix64(params.seed ^ splitmix64(index as u64));
        let mut rng_episode = ChaCha8Rng::seed_from_u64(splitmix64(company_seed ^ 0x01));
        let mut rng_fin = ChaCha8Rng::seed_from_u64(splitmix64(company_seed ^ 0x02));
        let mut rng_text = ChaCha8Rng::seed_from_u64(splitmix64(company_seed ^ 0x03));

        let company = CompanyId::new(format!("C{index:05}")).expect("generated id is valid");
        let identity_token = company.as_str().to_lowercase();
        let plan = plan_company(params, &mut rng_episode);
        // Log-normal company size.
        let size = (Normal::new(4.0, 1.0).unwrap().sample(&mut rng_fin) as f64).exp();
        let financials = generate_financials(params, &plan, size, &mut rng_fin);

        for &(start, end) in &plan.episodes {
            let restatement = plan
                .restatements
                .iter()
                .filter(|&&(y, _)| y >= start && y <= end)
                .map(|&(_, r)| r)
                .max()
                .expect("episode has at least one report");
            truths.push(EpisodeTruth {
                company: company.clone(),
                start_year: clamp_year(start),
                end_year: clamp_year(end),
                restatement_year: clamp_year(restatement),
            });
        }

        let first = params.first_year.value();
        for (offset, fields) in financials.into_iter().enumerate() {
            let year = first + offset as i32;
            let text = generate_text(
                params,
                &plan,
                &identity_token,
                &zipf,
                &mut rng_text,
                year,
            );
            let restated = plan
                .restatements
                .iter()
                .find(|&&(y, _)| y == year)
                .map(|&(_, r)| clamp_year(r));
            let label = match restated {
                Some(r) => MisstatementLabel::misstated(Some(r)),
                None => MisstatementLabel::clean(),
            };
            records.push(FilingRecord {
                company: company.clone(),
                fiscal_year: clamp_year(year),
                financials: fields,
                mdna_text: Some(text),
                label,
            });
        }
    }
    let panel = build_panel(records, "SYNTH")
        .map_err(|e| SynthError::InvalidParams(format!("generated panel invalid: {e}")))?;
    Ok((panel, truths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::panel_stats;

    fn small_params() -> SynthParams {
        SynthParams {
            n_companies: 120,
            first_year: FiscalYear::new(1998).unwrap(),
            last_year: FiscalYear::new(2008).unwrap(),
            episode_start_rate: 0.05,
            ..SynthParams::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let params = small_params();
        let (panel_a, truths_a) = generate_panel(&params).unwrap();
        let (panel_b, truths_b) = generate_panel(&params).unwrap();
        assert_eq!(panel_a, panel_b);
        assert_eq!(truths_a, truths_b);

        let mut reseeded = params;
        reseeded.seed += 1;
        let (panel_c, _) = generate_panel(&reseeded).unwrap();
        assert_ne!(panel_a, panel_c);
    }

    #[test]
    fn every_company_year_has_one_record() {
        let params = small_params();
        let (panel, _) = generate_panel(&params).unwrap();
        assert_eq!(panel.len(), 120 * 11);
        let stats = panel_stats(&panel);
        assert_eq!(stats.per_year.len(), 11);
        for (_, ys) in &stats.per_year {
            assert_eq!(ys.total(), 120);
        }
    }

    #[test]
    fn positives_belong_to_exactly_one_contiguous_episode() {
        let params = small_params();
        let (panel, truths) = generate_panel(&params).unwrap();
        for record in panel.records() {
            let covering: Vec<&EpisodeTruth> = truths
                .iter()
                .filter(|t| {
                    t.company == record.company
                        && record.fiscal_year >= t.start_year
                        && record.fiscal_year <= t.end_year
                })
                .collect();
            if record.label.misstated {
                assert_eq!(covering.len(), 1, "positive must sit in one episode");
            } else {
                assert!(covering.is_empty(), "negative inside an episode span");
            }
        }
        // Episode spans are valid and labels inside them are positive.
        for truth in &truths {
            assert!(truth.start_year <= truth.end_year);
            assert!(truth.restatement_year >= truth.start_year);
            for y in truth.start_year.value()..=truth.end_year.value() {
                let rec = panel
                    .get_by_parts(&truth.company, FiscalYear::new(y).unwrap())
                    .unwrap();
                assert!(rec.label.misstated);
            }
        }
    }

    #[test]
    fn per_episode_mode_shares_the_restatement_year() {
        let mut params = small_params();
        params.delay_mode = DelayMode::PerEpisode;
        let (panel, truths) = generate_panel(&params).unwrap();
        for truth in &truths {
            for y in truth.start_year.value()..=truth.end_year.value() {
                let rec = panel
                    .get_by_parts(&truth.company, FiscalYear::new(y).unwrap())
                    .unwrap();
                assert_eq!(rec.label.restatement_year, Some(truth.restatement_year));
            }
            assert!(truth.restatement_year >= truth.end_year);
        }
    }

    #[test]
    fn default_prevalence_near_one_percent() {
        let (panel, _) = generate_panel(&SynthParams::default()).unwrap();
        let share = panel_stats(&panel).positive_share();
        assert!(
            (0.008..=0.012).contains(&share),
            "positive share {share} outside [0.8%, 1.2%]"
        );
    }

    #[test]
    fn null_config_decouples_content_from_labels() {
        // With no financial shift and unit leak, episode structure must not
        // touch record content: only labels may differ.
        let mut sparse = small_params();
        sparse.fin_shift = 0.0;
        sparse.leak_strength = 1.0;
        sparse.episode_start_rate = 0.01;
        let mut dense = sparse.clone();
        dense.episode_start_rate = 0.40;

        let (panel_a, _) = generate_panel(&sparse).unwrap();
        let (panel_b, _) = generate_panel(&dense).unwrap();
        assert_eq!(panel_a.len(), panel_b.len());
        let mut label_diffs = 0;
        for (a, b) in panel_a.records().iter().zip(panel_b.records()) {
            assert_eq!(a.company, b.company);
            assert_eq!(a.fiscal_year, b.fiscal_year);
            assert_eq!(a.financials, b.financials);
            assert_eq!(a.mdna_text, b.mdna_text);
            if a.label != b.label {
                label_diffs += 1;
            }
        }
        assert!(label_diffs > 0, "denser episodes must change some labels");
    }

    #[test]
    fn analytic_known_fraction_matches_geometric_cdf() {
        let f1 = analytic_known_fraction(0.3, 1, 0).unwrap();
        let f2 = analytic_known_fraction(0.3, 2, 0).unwrap();
        let f3 = analytic_known_fraction(0.3, 3, 0).unwrap();
        assert!((f1 - 0.30).abs() < 1e-12);
        assert!((f2 - 0.51).abs() < 1e-12);
        assert!((f3 - 0.657).abs() < 1e-12);
        // Strictly increasing in the offset.
        for p in [0.1, 0.3, 0.5, 0.9] {
            let mut last = 0.0;
            for k in 1..6 {
                let f = analytic_known_fraction(p, k, 0).unwrap();
                assert!(f > last);
                last = f;
            }
        }
        assert!(analytic_known_fraction(0.0, 1, 0).is_err());
        assert!(analytic_known_fraction(1.0, 1, 0).is_err());
    }

    #[test]
    fn rejects_invalid_params() {
        let mut params = small_params();
        params.episode_start_rate = 0.0;
        assert!(matches!(
            generate_panel(&params),
            Err(SynthError::InvalidParams(_))
        ));

        let mut params = small_params();
        params.episode_length_mean = 0.5;
        assert!(generate_panel(&params).is_err());

        let mut params = small_params();
        params.fin_shift = 2.0;
        assert!(generate_panel(&params).is_err());
    }

    #[test]
    fn restatement_years_respect_label_invariants() {
        let params = small_params();
        let (panel, _) = generate_panel(&params).unwrap();
        for record in panel.records() {
            if let Some(r) = record.label.restatement_year {
                assert!(r >= record.fiscal_year);
            }
        }
    }

    #[test]
    fn text_contains_identity_and_structure() {
        let mut params = small_params();
        params.n_companies = 3;
        let (panel, _) = generate_panel(&params).unwrap();
        for record in panel.records() {
            let text = record.mdna_text.as_ref().unwrap();
            let identity = record.company.as_str().to_lowercase();
            assert!(
                text.to_lowercase().contains(&identity),
                "identity token missing from text"
            );
            assert!(text.contains('.'));
        }
    }
}
