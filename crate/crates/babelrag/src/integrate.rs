//! Cross-lingual evidence normalization and fact reconstruction.
//!
//! Evidence retrieved outside the query language is first normalized,
//!
//! ```text
//! D̂ = { translate(d, L) | d ∈ D_global }
//! ```
//!
//! then condensed: the generator is prompted to compare the translated
//! evidence against the first-round native evidence and restate what
//! survives as short numbered facts in the query language. The facts, not
//! the raw translations, are what flow back into the loop context.

use regex::Regex;
use std::sync::LazyLock;
use thiserror::Error;

use crate::backends::{translate_with, BackendError, TranslationRequest, Translator};
use crate::index::Document;

/// Verbatim instruction line of every reconstruction prompt.
pub const RECONSTRUCTION_INSTRUCTION: &str = "Compare the translated cross-lingual evidence below \
against the first-round evidence. Resolve contradictions, prefer claims supported by both, and \
restate the useful content as short numbered facts in the query language.";

const NATIVE_HEADER: &str = "First-round evidence:";
const TRANSLATED_HEADER: &str = "Cross-lingual evidence (translated):";
const EMPTY_SECTION: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrateError {
    #[error("reconstruction needs at least one evidence document")]
    NoEvidence,
}

/// One translated (or passed-through) document, keeping its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedDoc {
    pub doc_id: String,
    pub source_lang: String,
    pub title: String,
    pub text: String,
}

/// Translate every document into `target_lang`, preserving order.
/// Documents already in the target language pass through verbatim. The
/// operation is all-or-nothing: the first backend failure aborts it.
pub fn normalize_evidence(
    docs: &[Document],
    target_lang: &str,
    translator: &dyn Translator,
) -> Result<Vec<NormalizedDoc>, BackendError> {
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let text = translate_with(
            translator,
            &TranslationRequest {
                text: d.text.clone(),
                source_lang: d.lang.clone(),
                target_lang: target_lang.to_string(),
            },
        )?;
        let title = translate_with(
            translator,
            &TranslationRequest {
                text: d.title.clone(),
                source_lang: d.lang.clone(),
                target_lang: target_lang.to_string(),
            },
        )?;
        out.push(NormalizedDoc {
            doc_id: d.id.clone(),
            source_lang: d.lang.clone(),
            title,
            text,
        });
    }
    Ok(out)
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Build the fact-reconstruction prompt: the fixed instruction, the query,
/// the native first-round evidence, then the translated evidence. Either
/// section may be empty (marked `(none)`), but not both.
pub fn build_reconstruction_prompt(
    query: &str,
    native: &[Document],
    normalized: &[NormalizedDoc],
) -> Result<String, IntegrateError> {
    if native.is_empty() && normalized.is_empty() {
        return Err(IntegrateError::NoEvidence);
    }
    let mut out = String::new();
    out.push_str(RECONSTRUCTION_INSTRUCTION);
    out.push('\n');
    out.push_str(&format!("Question: {}\n", one_line(query)));
    out.push_str(NATIVE_HEADER);
    out.push('\n');
    if native.is_empty() {
        out.push_str(EMPTY_SECTION);
        out.push('\n');
    } else {
        for d in native {
            out.push_str(&format!("- ({}) {}\n", d.id, one_line(&d.text)));
        }
    }
    out.push_str(TRANSLATED_HEADER);
    out.push('\n');
    if normalized.is_empty() {
        out.push_str(EMPTY_SECTION);
        out.push('\n');
    } else {
        for d in normalized {
            out.push_str(&format!("- ({}) {}\n", d.doc_id, one_line(&d.text)));
        }
    }
    Ok(out)
}

/// True when `prompt` is a reconstruction prompt built by
/// [`build_reconstruction_prompt`]. Mock backends use this to decide how
/// to respond.
pub fn is_reconstruction_prompt(prompt: &str) -> bool {
    prompt.starts_with(RECONSTRUCTION_INSTRUCTION)
}

/// The evidence texts listed in the translated section of a reconstruction
/// prompt, in order. Mock backends echo these back as facts.
pub fn translated_section_texts(prompt: &str) -> Vec<String> {
    let Some(section) = prompt.split(TRANSLATED_HEADER).nth(1) else {
        return Vec::new();
    };
    section
        .lines()
        .filter_map(|l| {
            let l = l.strip_prefix("- (")?;
            let (_, rest) = l.split_once(") ")?;
            Some(rest.to_string())
        })
        .collect()
}

/// Ordered fact statements pulled out of a reconstruction response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FactStatements {
    facts: Vec<String>,
}

impl FactStatements {
    pub fn facts(&self) -> &[String] {
        &self.facts
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    /// Render back to `1. fact` lines, the same shape extraction accepts.
    pub fn to_numbered_lines(&self) -> String {
        self.facts
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{}. {}", i + 1, f))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

static FACT_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+[.)]\s+(.+)$").unwrap());

/// Pull numbered fact lines (`1. ...` or `2) ...`) out of a reconstruction
/// response. Non-matching lines are ignored; facts are trimmed and never
/// empty. Extraction is idempotent over its own numbered rendering.
pub fn extract_facts(text: &str) -> FactStatements {
    let facts = text
        .lines()
        .filter_map(|line| {
            FACT_LINE
                .captures(line)
                .map(|c| c[1].trim().to_string())
                .filter(|f| !f.is_empty())
        })
        .collect();
    FactStatements { facts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{DictionaryTranslator, IdentityTranslator};

    fn doc(id: &str, lang: &str, text: &str) -> Document {
        Document {
            id: id.to_string(),
            lang: lang.to_string(),
            title: format!("title-{id}"),
            text: text.to_string(),
        }
    }

    fn fr_en() -> DictionaryTranslator {
        let mut t = DictionaryTranslator::new();
        t.add_lexicon(
            "fr",
            "en",
            [
                ("la", "the"),
                ("capitale", "capital"),
                ("title-f1", "title-f1-en"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        );
        t
    }

    #[test]
    fn test_normalize_translates_and_passes_through() {
        let docs = vec![
            doc("f1", "fr", "la capitale Paris"),
            doc("e1", "en", "already fine"),
        ];
        let out = normalize_evidence(&docs, "en", &fr_en()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].doc_id, "f1");
        assert_eq!(out[0].source_lang, "fr");
        assert_eq!(out[0].text, "the capital Paris");
        assert_eq!(out[1].text, "already fine");
    }

    #[test]
    fn test_normalize_is_all_or_nothing() {
        // th -> en has no lexicon, so the whole batch fails.
        let docs = vec![doc("f1", "fr", "la capitale"), doc("t1", "th", "ข้อความ")];
        let err = normalize_evidence(&docs, "en", &fr_en()).unwrap_err();
        assert!(matches!(err, BackendError::MissingLexicon { .. }));
    }

    #[test]
    fn test_prompt_layout() {
        let native = vec![doc("e1", "en", "native line")];
        let normalized =
            normalize_evidence(&[doc("f1", "fr", "la capitale")], "en", &fr_en()).unwrap();
        let p = build_reconstruction_prompt("what capital?", &native, &normalized).unwrap();
        assert!(p.starts_with(RECONSTRUCTION_INSTRUCTION));
        assert!(p.contains("Question: what capital?"));
        let native_at = p.find("- (e1) native line").unwrap();
        let translated_at = p.find("- (f1) the capital").unwrap();
        assert!(native_at < translated_at, "native section must come first");
        assert!(is_reconstruction_prompt(&p));
        assert_eq!(
            translated_section_texts(&p),
            vec!["the capital".to_string()]
        );
    }

    #[test]
    fn test_prompt_with_native_only_marks_empty_section() {
        let native = vec![doc("e1", "en", "only native")];
        let p = build_reconstruction_prompt("q", &native, &[]).unwrap();
        assert!(p.contains("Cross-lingual evidence (translated):\n(none)"));
        assert!(translated_section_texts(&p).is_empty());
    }

    #[test]
    fn test_prompt_rejects_no_evidence() {
        assert_eq!(
            build_reconstruction_prompt("q", &[], &[]),
            Err(IntegrateError::NoEvidence)
        );
    }

    #[test]
    fn test_extract_facts_shapes() {
        let text = "Some preamble about the task.\n1. Paris is the capital of France.\n2) It lies on the Seine.\n17.March is not a fact line\nclosing prose";
        let facts = extract_facts(text);
        assert_eq!(
            facts.facts(),
            &[
                "Paris is the capital of France.".to_string(),
                "It lies on the Seine.".to_string()
            ]
        );
    }

    #[test]
    fn test_extract_facts_idempotent() {
        let facts = extract_facts("1. alpha\n2. beta gamma\n3) delta");
        let again = extract_facts(&facts.to_numbered_lines());
        assert_eq!(facts, again);
    }

    #[test]
    fn test_extract_facts_empty_when_unnumbered() {
        assert!(extract_facts("no numbered lines here\njust prose").is_empty());
        assert!(extract_facts("").is_empty());
    }

    #[test]
    fn test_normalize_same_lang_never_calls_backend() {
        let docs = vec![doc("e1", "en", "stay put")];
        // DictionaryTranslator with no lexicons would fail if consulted.
        let out = normalize_evidence(&docs, "en", &DictionaryTranslator::new()).unwrap();
        assert_eq!(out[0].text, "stay put");
        let _ = IdentityTranslator;
    }
}
