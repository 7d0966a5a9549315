//! Text features for financial reports: rule-based sentence splitting and
//! tokenization, amount/date/number token replacement, training-window
//! vocabularies of uni- and bi-grams, and L2-normalized TF-IDF vectors.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::finfeat::NUM_FEATURES;
use crate::sparse::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("vocabulary cannot be built from an empty corpus")]
    EmptyCorpus,
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("malformed vocabulary line {0}: {1:?}")]
    MalformedVocabLine(usize, String),
}

/// Lowercased, replacement-normalized tokens grouped by sentence. Bi-grams
/// never cross sentence boundaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    sentences: Vec<Vec<String>>,
}

impl TokenStream {
    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn bigram_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len().saturating_sub(1)).sum()
    }

    /// Calls `f` once per term occurrence: every uni-gram, then every
    /// within-sentence bi-gram (joined by a single space).
    pub fn for_each_term(&self, mut f: impl FnMut(&str)) {
        let mut buf = String::new();
        for sentence in &self.sentences {
            for token in sentence {
                f(token);
            }
            for pair in sentence.windows(2) {
                buf.clear();
                buf.push_str(&pair[0]);
                buf.push(' ');
                buf.push_str(&pair[1]);
                f(&buf);
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn from_sentences(sentences: Vec<Vec<&str>>) -> Self {
        TokenStream {
            sentences: sentences
                .into_iter()
                .map(|s| s.into_iter().map(str::to_string).collect())
                .collect(),
        }
    }
}

pub const AMOUNT_TOKEN: &str = "amount_replaced";
pub const DATE_TOKEN: &str = "date_replaced";
pub const NUMBER_TOKEN: &str = "number_replaced";

const MONTHS: [&str; 24] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
    "sept", "oct", "nov", "dec",
];

const SCALE_WORDS: [&str; 8] = [
    "thousand",
    "thousands",
    "million",
    "millions",
    "billion",
    "billions",
    "trillion",
    "trillions",
];

const CURRENCY_SYMBOLS: [char; 4] = ['$', '€', '£', '¥'];

#[derive(Debug, Clone, PartialEq, Eq)]
enum RawToken {
    Word(String),
    Number(String),
    Currency,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits raw text into sentences on terminator punctuation followed by
/// whitespace and an uppercase letter.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            // Consume the terminator run, then require whitespace and a
            // following uppercase letter (decimal points fail the
            // whitespace check).
            let mut j = i + c.len_utf8();
            while j < bytes.len() && matches!(bytes[j], b'.' | b'!' | b'?') {
                j += 1;
            }
            let rest = &text[j..];
            let trimmed = rest.trim_start();
            let had_ws = trimmed.len() < rest.len();
            if had_ws && trimmed.chars().next().map_or(false, char::is_uppercase) {
                sentences.push(&text[start..j]);
                start = j;
                while matches!(chars.peek(), Some(&(k, _)) if k < j + (rest.len() - trimmed.len()))
                {
                    chars.next();
                }
            }
        }
    }
    if start < text.len() {
        sentences.push(&text[start..]);
    }
    sentences
}

/// Scans one sentence into typed tokens: lowercased words, number literals
/// (digits with internal separators), and currency symbols.
fn scan_tokens(sentence: &str) -> Vec<RawToken> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = sentence.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if CURRENCY_SYMBOLS.contains(&c) {
            tokens.push(RawToken::Currency);
            i += 1;
        } else if c.is_ascii_digit() {
            let mut literal = String::new();
            while i < chars.len() {
                let c = chars[i];
                if c.is_ascii_digit() {
                    literal.push(c);
                    i += 1;
                } else if matches!(c, '.' | ',')
                    && chars.get(i + 1).map_or(false, |n| n.is_ascii_digit())
                {
                    literal.push(c);
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(RawToken::Number(literal));
        } else if is_word_char(c) {
            let mut word = String::new();
            while i < chars.len() && is_word_char(chars[i]) {
                // Characters with no lowercase mapping (e.g. math capitals)
                // would break the lowercase invariant; drop them.
                word.extend(chars[i].to_lowercase().filter(|l| !l.is_uppercase()));
                i += 1;
            }
            if !word.is_empty() {
                tokens.push(RawToken::Word(word));
            }
        } else {
            i += 1;
        }
    }
    tokens
}

fn is_year_literal(s: &str) -> bool {
    s.len() == 4
        && (s.starts_with("19") || s.starts_with("20"))
        && s.chars().all(|c| c.is_ascii_digit())
}

/// Applies the replacement rules to one scanned sentence, in precedence
/// order: amounts, then dates, then remaining numbers.
fn replace_tokens(raw: &[RawToken]) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        match &raw[i] {
            RawToken::Currency => {
                if matches!(raw.get(i + 1), Some(RawToken::Number(_))) {
                    out.push(AMOUNT_TOKEN.to_string());
                    i += 2;
                    // "$3.5 million" folds the scale word in as well.
                    if matches!(raw.get(i), Some(RawToken::Word(w)) if SCALE_WORDS.contains(&w.as_str()))
                    {
                        i += 1;
                    }
                } else {
                    // A bare currency symbol is noise.
                    i += 1;
                }
            }
            RawToken::Number(literal) => {
                match raw.get(i + 1) {
                    Some(RawToken::Word(w)) if SCALE_WORDS.contains(&w.as_str()) => {
                        out.push(AMOUNT_TOKEN.to_string());
                        i += 2;
                    }
                    Some(RawToken::Currency) => {
                        out.push(AMOUNT_TOKEN.to_string());
                        i += 2;
                    }
                    _ if is_year_literal(literal) => {
                        out.push(DATE_TOKEN.to_string());
                        i += 1;
                    }
                    _ => {
                        out.push(NUMBER_TOKEN.to_string());
                        i += 1;
                    }
                }
            }
            RawToken::Word(word) => {
                if MONTHS.contains(&word.as_str()) {
                    if let Some(RawToken::Number(first)) = raw.get(i + 1) {
                        out.push(DATE_TOKEN.to_string());
                        i += 2;
                        // Month + day may still carry the year.
                        if !is_year_literal(first) {
                            if let Some(RawToken::Number(second)) = raw.get(i) {
                                if is_year_literal(second) {
                                    i += 1;
                                }
                            }
                        }
                        continue;
                    }
                }
                out.push(word.clone());
                i += 1;
            }
        }
    }
    out
}

/// Sentence-splits, tokenizes, lowercases, and applies the amount/date/
/// number replacements. Empty text yields an empty stream.
pub fn normalize_tokens(text: &str) -> TokenStream {
    let sentences = split_sentences(text)
        .into_iter()
        .map(|s| replace_tokens(&scan_tokens(s)))
        .filter(|tokens| !tokens.is_empty())
        .collect();
    TokenStream { sentences }
}

/// Uni/bi-gram vocabulary built from one fold's training documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    dfs: Vec<u32>,
    index: HashMap<String, u32>,
    n_train_docs: usize,
    min_df: u32,
    max_size: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_train_docs(&self) -> usize {
        self.n_train_docs
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn df_of(&self, term: &str) -> Option<u32> {
        self.index_of(term).map(|i| self.dfs[i as usize])
    }

    /// Terms in index order (lexicographic).
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Smoothed inverse document frequency for the term at `index`.
    pub fn idf(&self, index: u32) -> f64 {
        let df = self.dfs[index as usize] as f64;
        ((1.0 + self.n_train_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    /// Serializes as `term\tindex\tdf` lines in index order.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (i, term) in self.terms.iter().enumerate() {
            out.push_str(term);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\t');
            out.push_str(&self.dfs[i].to_string());
            out.push('\n');
        }
        out
    }
}

/// Counts document frequencies of all uni-grams and within-sentence
/// bi-grams, keeps terms with df >= min_df (top max_size by document
/// frequency, ties lexicographic), and assigns indices in lexicographic
/// term order.
pub fn build_vocab(
    train_docs: &[TokenStream],
    min_df: u32,
    max_size: usize,
) -> Result<Vocabulary, TextError> {
    if train_docs.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut df: HashMap<String, u32> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    for doc in train_docs {
        seen.clear();
        doc.for_each_term(|term| {
            if !seen.contains(term) {
                seen.insert(term.to_string());
                match df.get_mut(term) {
                    Some(count) => *count += 1,
                    None => {
                        df.insert(term.to_string(), 1);
                    }
                }
            }
        });
    }
    let mut candidates: Vec<(String, u32)> =
        df.into_iter().filter(|&(_, c)| c >= min_df).collect();
    if candidates.len() > max_size {
        candidates.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        candidates.truncate(max_size);
    }
    candidates.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut index = HashMap::with_capacity(candidates.len());
    let mut terms = Vec::with_capacity(candidates.len());
    let mut dfs = Vec::with_capacity(candidates.len());
    for (i, (term, count)) in candidates.into_iter().enumerate() {
        index.insert(term.clone(), i as u32);
        terms.push(term);
        dfs.push(count);
    }
    Ok(Vocabulary {
        terms,
        dfs,
        index,
        n_train_docs: train_docs.len(),
        min_df,
        max_size,
    })
}

/// TF-IDF vector for one document against a training-window vocabulary:
/// raw term count times smoothed idf, L2-normalized. Documents with no
/// in-vocabulary terms yield the zero vector.
pub fn vectorize(doc: &TokenStream, vocab: &Vocabulary) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    doc.for_each_term(|term| {
        if let Some(i) = vocab.index_of(term) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    });
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(i, tf)| (i, tf * vocab.idf(i)))
        .collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    let norm = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    SparseVector::new(entries).expect("sorted finite entries")
}

/// Concatenates a text row and a dense financial row into one sparse
/// vector: text scaled by alpha at indices below `text_dim`, financials
/// scaled by (1 - alpha) at indices text_dim..text_dim+41.
pub fn combine(
    text_row: &SparseVector,
    fin_row: &[f64; NUM_FEATURES],
    alpha: f64,
    text_dim: usize,
) -> Result<SparseVector, TextError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TextError::AlphaOutOfRange(alpha));
    }
    assert!(
        text_row.min_dim() <= text_dim,
        "text row exceeds declared vocabulary size"
    );
    let mut entries = Vec::with_capacity(text_row.nnz() + NUM_FEATURES);
    for &(i, v) in text_row.entries() {
        entries.push((i, alpha * v));
    }
    for (j, &v) in fin_row.iter().enumerate() {
        entries.push(((text_dim + j) as u32, (1.0 - alpha) * v));
    }
    entries.retain(|&(_, v)| v != 0.0);
    Ok(SparseVector::new(entries).expect("sorted finite entries"))
}
