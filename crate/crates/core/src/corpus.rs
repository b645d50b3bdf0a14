//! Text ingestion: tokenization, vocabulary construction, bag-of-words
//! documents and survey-weight scaling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

/// Categorical covariates attached to a document, `name -> level`.
pub type Covariates = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizeRules {
    pub stopwords: HashSet<String>,
    pub min_len: usize,
}

impl Default for TokenizeRules {
    fn default() -> Self {
        Self {
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            min_len: 2,
        }
    }
}

impl TokenizeRules {
    /// Rules with no stopwords and no length filter.
    pub fn permissive() -> Self {
        Self {
            stopwords: HashSet::new(),
            min_len: 1,
        }
    }

    pub fn with_stopword_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.stopwords = parse_stopwords(&text);
        Ok(self)
    }
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Lowercases, drops every character that is neither alphabetic nor
/// whitespace, splits on whitespace and filters stopwords and short tokens.
pub fn tokenize(text: &str, rules: &TokenizeRules) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphabetic() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| t.chars().count() >= rules.min_len && !rules.stopwords.contains(*t))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list. Duplicates are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        let counts = vec![0; tokens.len()];
        Ok(Self {
            tokens,
            index,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Corpus-wide occurrence count of each token, as seen when the vocabulary was built.
    pub fn total_counts(&self) -> &[u64] {
        &self.counts
    }

    /// `index,token,total_count` CSV.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "index,token,total_count")?;
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{i},{},{c}", csv_field(t))?;
        }
        Ok(())
    }
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Keeps tokens whose total count reaches `min_count`, in first-appearance order.
pub fn build_vocabulary<S: AsRef<str>>(docs: &[Vec<S>], min_count: u64) -> Result<Vocabulary> {
    let weighted: Vec<Vec<(&str, u64)>> = docs
        .iter()
        .map(|d| d.iter().map(|t| (t.as_ref(), 1)).collect())
        .collect();
    build_vocabulary_weighted(&weighted, min_count)
}

fn build_vocabulary_weighted(docs: &[Vec<(&str, u64)>], min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for (tok, n) in docs.iter().flatten() {
        let e = totals.entry(tok).or_insert_with(|| {
            order.push(tok);
            0
        });
        *e += n;
    }
    let kept: Vec<(&str, u64)> = order
        .into_iter()
        .map(|t| (t, totals[t]))
        .filter(|&(_, c)| c >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut vocab = Vocabulary::from_tokens(kept.iter().map(|&(t, _)| t))?;
    vocab.counts = kept.iter().map(|&(_, c)| c).collect();
    Ok(vocab)
}

/// Rescales design weights so they sum to the number of documents.
pub fn scale_weights(raw: &[f64]) -> Result<Vec<f64>> {
    for (index, &value) in raw.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveWeight { index, value });
        }
    }
    let total: f64 = raw.iter().sum();
    let m = raw.len() as f64;
    Ok(raw.iter().map(|w| m * w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawContent {
    Text(String),
    /// Precomputed `token -> count` pairs, in input order.
    Counts(Vec<(String, u64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub id: String,
    pub content: RawContent,
    pub raw_weight: f64,
    pub covariates: Covariates,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: serde_json::Value,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    counts: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    covariates: Option<BTreeMap<String, serde_json::Value>>,
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

impl RawDocument {
    fn from_record(rec: JsonlRecord, line: usize) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("line {line}: {msg}"));
        let id = scalar_to_string(&rec.id).ok_or_else(|| bad("`id` must be a string"))?;
        let content = match (rec.text, rec.counts) {
            (Some(t), None) => RawContent::Text(t),
            (None, Some(map)) => {
                let mut pairs = Vec::with_capacity(map.len());
                for (tok, v) in map {
                    let n = v.as_u64().ok_or_else(|| {
                        bad(&format!("count for `{tok}` must be a non-negative integer"))
                    })?;
                    pairs.push((tok, n));
                }
                RawContent::Counts(pairs)
            }
            (Some(_), Some(_)) => return Err(bad("give either `text` or `counts`, not both")),
            (None, None) => return Err(bad("missing `text` or `counts`")),
        };
        let raw_weight = rec.weight.unwrap_or(1.0);
        if !(raw_weight > 0.0) || !raw_weight.is_finite() {
            return Err(Error::NonPositiveWeight {
                index: line - 1,
                value: raw_weight,
            });
        }
        let mut covariates = Covariates::new();
        for (k, v) in rec.covariates.unwrap_or_default() {
            let level = scalar_to_string(&v)
                .ok_or_else(|| bad(&format!("covariate `{k}` must be a scalar")))?;
            covariates.insert(k, level);
        }
        Ok(Self {
            id,
            content,
            raw_weight,
            covariates,
        })
    }
}

impl RawDocument {
    /// One JSON-lines record in the input format.
    pub fn to_json_line(&self) -> String {
        let mut rec = serde_json::Map::new();
        rec.insert("id".into(), self.id.clone().into());
        match &self.content {
            RawContent::Text(t) => {
                rec.insert("text".into(), t.clone().into());
            }
            RawContent::Counts(c) => {
                let counts: serde_json::Map<String, serde_json::Value> =
                    c.iter().map(|(t, n)| (t.clone(), (*n).into())).collect();
                rec.insert("counts".into(), counts.into());
            }
        }
        rec.insert("weight".into(), self.raw_weight.into());
        if !self.covariates.is_empty() {
            let cov: serde_json::Map<String, serde_json::Value> = self
                .covariates
                .iter()
                .map(|(k, v)| (k.clone(), v.clone().into()))
                .collect();
            rec.insert("covariates".into(), cov.into());
        }
        serde_json::Value::Object(rec).to_string()
    }
}

/// Parses JSON-lines input; blank lines are skipped.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Json {
            context: format!("line {}", i + 1),
            source: e,
        })?;
        let doc = RawDocument::from_record(rec, i + 1)?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::InvalidInput(format!(
                "duplicate document id `{}`",
                doc.id
            )));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(f))
}

/// A document as sparse word counts over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BowDocument {
    pub id: String,
    /// `(vocabulary index, count)` pairs sorted by index, counts positive.
    pub counts: Vec<(usize, u32)>,
    pub length: u32,
    pub weight: f64,
    pub covariates: Covariates,
}

impl BowDocument {
    pub fn new(
        id: impl Into<String>,
        counts: impl IntoIterator<Item = (usize, u32)>,
        weight: f64,
    ) -> Self {
        let mut merged: BTreeMap<usize, u32> = BTreeMap::new();
        for (v, n) in counts {
            if n > 0 {
                *merged.entry(v).or_default() += n;
            }
        }
        let counts: Vec<(usize, u32)> = merged.into_iter().collect();
        let length = counts.iter().map(|&(_, n)| n).sum();
        Self {
            id: id.into(),
            counts,
            length,
            weight,
            covariates: Covariates::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Self {
        self.covariates = covariates;
        self
    }

    /// Dense count vector of length `v`.
    pub fn dense(&self, v: usize) -> Vec<u32> {
        let mut out = vec![0; v];
        for &(i, n) in &self.counts {
            out[i] += n;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub docs: Vec<BowDocument>,
}

/// Outcome of turning raw documents into a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub dropped: Vec<String>,
}

impl Corpus {
    /// Wraps documents whose weights are already set; checks index bounds only.
    pub fn new(vocab: Vocabulary, docs: Vec<BowDocument>) -> Result<Self> {
        let v = vocab.len();
        for d in &docs {
            if let Some(&(i, _)) = d.counts.iter().find(|&&(i, _)| i >= v) {
                return Err(Error::DimensionMismatch {
                    what: "word index",
                    expected: v,
                    got: i,
                });
            }
        }
        Ok(Self { vocab, docs })
    }

    /// Tokenizes, builds the vocabulary, drops emptied documents and scales weights.
    pub fn from_raw(
        raw: &[RawDocument],
        rules: &TokenizeRules,
        min_count: u64,
    ) -> Result<(Self, BuildReport)> {
        if raw.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let token_counts: Vec<Vec<(String, u64)>> = raw
            .iter()
            .map(|d| match &d.content {
                RawContent::Text(t) => tokenize(t, rules).into_iter().map(|t| (t, 1)).collect(),
                RawContent::Counts(c) => c.iter().filter(|(_, n)| *n > 0).cloned().collect(),
            })
            .collect();
        let borrowed: Vec<Vec<(&str, u64)>> = token_counts
            .iter()
            .map(|d| d.iter().map(|(t, n)| (t.as_str(), *n)).collect())
            .collect();
        let vocab = build_vocabulary_weighted(&borrowed, min_count)?;
        let mut docs = Vec::with_capacity(raw.len());
        for (rd, toks) in raw.iter().zip(&borrowed) {
            let mut counts = Vec::with_capacity(toks.len());
            for &(t, n) in toks {
                if let Some(i) = vocab.index_of(t) {
                    let n = u32::try_from(n).map_err(|_| {
                        Error::InvalidInput(format!("count overflow in `{}`", rd.id))
                    })?;
                    counts.push((i, n));
                }
            }
            docs.push(
                BowDocument::new(rd.id.clone(), counts, rd.raw_weight)
                    .with_covariates(rd.covariates.clone()),
            );
        }
        let (corpus, dropped) = drop_empty_documents(Corpus { vocab, docs })?;
        Ok((corpus, BuildReport { dropped }))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.docs.iter().map(|d| d.weight).collect()
    }

    /// Replaces the current weights with their scaled versions.
    pub fn rescale_weights(&mut self) -> Result<()> {
        let scaled = scale_weights(&self.weights())?;
        for (d, w) in self.docs.iter_mut().zip(scaled) {
            d.weight = w;
        }
        Ok(())
    }

    /// The same corpus with every weight set to one.
    pub fn unweighted(&self) -> Self {
        let mut out = self.clone();
        for d in &mut out.docs {
            d.weight = 1.0;
        }
        out
    }

    /// Checks every invariant of a fitted-ready corpus.
    pub fn validate(&self) -> Result<()> {
        if self.docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let v = self.vocab.len();
        let mut total = 0.0;
        for (i, d) in self.docs.iter().enumerate() {
            if d.length == 0 {
                return Err(Error::InvalidInput(format!("document `{}` is empty", d.id)));
            }
            if d.counts.iter().any(|&(w, _)| w >= v) {
                return Err(Error::DimensionMismatch {
                    what: "word index",
                    expected: v,
                    got: d.counts.iter().map(|&(w, _)| w).max().unwrap_or(0),
                });
            }
            if !(d.weight > 0.0) {
                return Err(Error::NonPositiveWeight {
                    index: i,
                    value: d.weight,
                });
            }
            total += d.weight;
        }
        let m = self.docs.len() as f64;
        if ((total - m) / m).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, expected {m}"
            )));
        }
        Ok(())
    }
}

/// Removes zero-length documents and rescales the survivors' weights.
/// Returns the ids of the dropped documents.
pub fn drop_empty_documents(corpus: Corpus) -> Result<(Corpus, Vec<String>)> {
    let Corpus { vocab, docs } = corpus;
    let (kept, empty): (Vec<_>, Vec<_>) = docs.into_iter().partition(|d| d.length > 0);
    let dropped: Vec<String> = empty.into_iter().map(|d| d.id).collect();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for id in &dropped {
        log::warn!("dropping document `{id}`: empty after preprocessing");
    }
    let mut out = Corpus { vocab, docs: kept };
    out.rescale_weights()?;
    Ok((out, dropped))
}
