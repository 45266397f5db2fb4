//! Document collections, tokenization, the inverted index used by the
//! sparse retrievers, and relevance judgments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk index format.
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateIdAt { id: String, line: usize },
    #[error("document id must be non-empty (line {line})")]
    EmptyId { line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported index version {found} (expected {INDEX_FORMAT_VERSION})")]
    UnknownVersion { found: u32 },
    #[error("malformed index: {0}")]
    MalformedIndex(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases `text` and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True if `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_sequence(haystack: &[String], needle: &[String]) -> bool {
    find_sequence(haystack, needle).is_some()
}

/// Position of the leftmost contiguous occurrence of `needle` in `haystack`.
pub(crate) fn find_sequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

/// Answer-span test: does any candidate's token sequence occur contiguously
/// in the document's token sequence?
pub fn contains_span<S: AsRef<str>>(doc: &Document, candidates: &[S]) -> bool {
    let tokens = tokenize(&doc.text);
    candidates
        .iter()
        .any(|c| contains_sequence(&tokens, &tokenize(c.as_ref())))
}

/// An ordered, immutable document collection with exact id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), ordinal).is_some() {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self { docs, by_id })
    }

    /// Reads JSON-lines with `id` and `text` keys. Blank lines are skipped.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if doc.id.is_empty() {
                return Err(CorpusError::EmptyId { line: line_no });
            }
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateIdAt { id: doc.id, line: line_no });
            }
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn doc(&self, ordinal: usize) -> &Document {
        &self.docs[ordinal]
    }
}

/// A `(doc-ordinal, term-frequency)` entry of a posting list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: usize,
    pub tf: u32,
}

/// Term → postings, plus the length statistics BM25 needs.
///
/// Postings are kept in a `BTreeMap` so serialization is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    version: u32,
    doc_ids: Vec<String>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ordinal, doc) in corpus.docs().iter().enumerate() {
            let tokens = tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
        };
        Self {
            version: INDEX_FORMAT_VERSION,
            doc_ids: corpus.docs().iter().map(|d| d.id.clone()).collect(),
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_freq(&self, term: &str, ordinal: usize) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&ordinal, |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    /// Parses a serialized index, rejecting unknown versions and broken
    /// invariants.
    pub fn from_json(src: &str) -> Result<Self, CorpusError> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let header: Header =
            serde_json::from_str(src).map_err(|e| CorpusError::MalformedIndex(e.to_string()))?;
        if header.version != INDEX_FORMAT_VERSION {
            return Err(CorpusError::UnknownVersion { found: header.version });
        }
        let index: Self =
            serde_json::from_str(src).map_err(|e| CorpusError::MalformedIndex(e.to_string()))?;
        index.validate()?;
        Ok(index)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let n = self.doc_lengths.len();
        if self.doc_ids.len() != n {
            return Err(CorpusError::MalformedIndex("doc id count differs from doc lengths".into()));
        }
        let unique: HashSet<&String> = self.doc_ids.iter().collect();
        if unique.len() != n {
            return Err(CorpusError::MalformedIndex("duplicate doc ids".into()));
        }
        for (term, list) in &self.postings {
            let ascending = list.windows(2).all(|w| w[0].doc < w[1].doc);
            if !ascending || list.iter().any(|p| p.doc >= n || p.tf == 0) {
                return Err(CorpusError::MalformedIndex(format!("bad posting list for `{term}`")));
            }
        }
        Ok(())
    }
}

/// Graded relevance judgments: query id → doc id → grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.judgments.entry(query.into()).or_default().insert(doc.into(), grade);
    }

    /// Reads `query-id<TAB>doc-id<TAB>grade` lines. Blank lines are skipped.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut qrels = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [query, doc, grade] = fields.as_slice() else {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let grade: u32 = grade.trim().parse().map_err(|_| CorpusError::Parse {
                line: line_no,
                message: format!("grade `{grade}` is not a non-negative integer"),
            })?;
            qrels.insert(query.trim(), doc.trim(), grade);
        }
        Ok(qrels)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                out.push_str(&format!("{q}\t{d}\t{g}\n"));
            }
        }
        out
    }

    pub fn grades(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }
}
