//! Per-language document collections with BM25 lexical search.
//!
//! Each language owns one collection; a registry maps language codes to
//! collections so the retrieval loop can route a turn to one language or
//! fan out across all of them. Scoring is plain BM25 (k1 = 1.2, b = 0.75)
//! with the non-negative IDF variant:
//!
//! ```text
//! idf(t)      = max(0, ln((N - df + 0.5) / (df + 0.5)))
//! score(d, q) = Σ_t idf(t) · tf · (k1 + 1) / (tf + k1 · (1 - b + b · |d| / avgdl))
//! ```
//!
//! Query tokens are scored with multiplicity (a repeated token contributes
//! twice). Only documents with a strictly positive score are returned,
//! ordered by descending score with ascending document id as the tie-break.

use std::collections::HashMap;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

const K1: f64 = 1.2;
const B: f64 = 0.75;

/// One retrievable document. `lang` must match the collection it lives in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub title: String,
    pub text: String,
}

/// How a collection turns text into tokens. Word mode suits whitespace
/// languages; character bigrams handle scripts written without spaces
/// (Thai), where word splitting would glue whole clauses together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    #[default]
    Words,
    CharBigrams,
}

/// NFKC-normalize, lowercase, then split into maximal alphanumeric runs.
/// In bigram mode each run is further broken into overlapping character
/// pairs (a lone character stays a single token).
pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    let folded: String = text.nfkc().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    for run in folded.split(|c: char| !c.is_alphanumeric()) {
        if run.is_empty() {
            continue;
        }
        match mode {
            TokenizerMode::Words => tokens.push(run.to_string()),
            TokenizerMode::CharBigrams => {
                let chars: Vec<char> = run.chars().collect();
                if chars.len() == 1 {
                    tokens.push(chars[0].to_string());
                } else {
                    for w in chars.windows(2) {
                        tokens.push(w.iter().collect());
                    }
                }
            }
        }
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("document {id:?} has lang {doc_lang:?}, collection is {collection_lang:?}")]
    LanguageMismatch {
        id: String,
        doc_lang: String,
        collection_lang: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("query produced no tokens")]
    EmptyQuery,
}

/// A search hit: the document plus its BM25 score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredHit {
    pub doc: Document,
    pub score: f64,
}

/// An indexed, immutable set of documents in one language.
#[derive(Debug)]
pub struct Collection {
    lang: String,
    mode: TokenizerMode,
    docs: Vec<Document>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    avg_len: f64,
}

impl Collection {
    /// Index `docs` under `lang`. Ids must be unique and every document's
    /// language must equal the collection's.
    pub fn build(lang: &str, docs: Vec<Document>, mode: TokenizerMode) -> Result<Self, IndexError> {
        let mut seen = BTreeSet::new();
        for d in &docs {
            if d.lang != lang {
                return Err(IndexError::LanguageMismatch {
                    id: d.id.clone(),
                    doc_lang: d.lang.clone(),
                    collection_lang: lang.to_string(),
                });
            }
            if !seen.insert(d.id.clone()) {
                return Err(IndexError::DuplicateId(d.id.clone()));
            }
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (idx, d) in docs.iter().enumerate() {
            let tokens = tokenize(&format!("{} {}", d.title, d.text), mode);
            doc_len.push(tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((idx, c));
            }
        }
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / docs.len() as f64
        };
        Ok(Collection {
            lang: lang.to_string(),
            mode,
            docs,
            postings,
            doc_len,
            avg_len,
        })
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
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

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        ((n - df as f64 + 0.5) / (df as f64 + 0.5)).ln().max(0.0)
    }

    /// BM25 top-k search. Returns at most `k` hits with score > 0.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<ScoredHit>, SearchError> {
        let terms = tokenize(query, self.mode);
        if terms.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(posting) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(posting.len());
            if idf <= 0.0 {
                continue;
            }
            for &(idx, tf) in posting {
                let tf = f64::from(tf);
                let norm = K1 * (1.0 - B + B * self.doc_len[idx] as f64 / self.avg_len);
                *scores.entry(idx).or_insert(0.0) += idf * tf * (K1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<ScoredHit> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(idx, score)| ScoredHit {
                doc: self.docs[idx].clone(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc.id.cmp(&b.doc.id))
        });
        hits.truncate(k);
        Ok(hits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("no collection registered for language {0:?}")]
    UnknownLanguage(String),
    #[error("language {0:?} is already registered")]
    DuplicateLanguage(String),
}

/// Language code → collection map. Iteration order is the sorted order of
/// the codes, which keeps every fan-out deterministic.
#[derive(Debug, Clone, Default)]
pub struct CollectionRegistry {
    collections: BTreeMap<String, Arc<Collection>>,
}

impl CollectionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, collection: Collection) -> Result<(), RegistryError> {
        let lang = collection.lang().to_string();
        if self.collections.contains_key(&lang) {
            return Err(RegistryError::DuplicateLanguage(lang));
        }
        self.collections.insert(lang, Arc::new(collection));
        Ok(())
    }

    /// The searchable operator for one language.
    pub fn operator(&self, lang: &str) -> Result<Arc<Collection>, RegistryError> {
        self.collections
            .get(lang)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownLanguage(lang.to_string()))
    }

    pub fn contains(&self, lang: &str) -> bool {
        self.collections.contains_key(lang)
    }

    /// Registered language codes in ascending order.
    pub fn languages(&self) -> Vec<String> {
        self.collections.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.collections.is_empty()
    }

    /// A new registry holding only `keep`, with every other language
    /// replaced by an empty collection so episodes in it remain runnable.
    pub fn restricted_to(&self, keep: &BTreeSet<String>) -> Self {
        let mut out = CollectionRegistry::new();
        for (lang, coll) in &self.collections {
            let entry = if keep.contains(lang) {
                Arc::clone(coll)
            } else {
                Arc::new(Collection::build(lang, Vec::new(), coll.mode()).unwrap())
            };
            out.collections.insert(lang.clone(), entry);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {message}")]
    Schema { line: usize, message: String },
}

/// Load documents from a JSONL file with `id`, `lang`, `title`, `text`
/// fields, one document per line. Blank lines are skipped.
pub fn load_corpus_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let raw = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line).map_err(|e| CorpusError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}
