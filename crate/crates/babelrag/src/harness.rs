//! Dataset loading, batch evaluation and the two experiment drivers:
//! the collection-count scaling curve and the language-ablation matrix.
//!
//! Evaluation is episode-per-example: each question runs through the
//! retrieval loop and its final answer (empty when the episode produced
//! none) is scored with the flexible-match and trigram-recall metrics,
//! aggregated per language and overall. Failed episodes are not dropped;
//! they score zero and are counted, so a flaky backend degrades the
//! report instead of silently shrinking it.
//!
//! The scaling driver re-runs the dataset with only the first `n`
//! collections of each question's language order enabled (the question's
//! own language, then the fallback language, then the rest ascending)
//! and reports mean trigram recall per `n`. The ablation driver removes
//! one collection at a time and reports, per query language, how much
//! mean trigram recall drops relative to the full registry.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Generator, GeneratorRequest, Translator};
use crate::episode::{run_episode, LoopConfig};
use crate::index::CollectionRegistry;
use crate::integrate::{is_reconstruction_prompt, translated_section_texts};
use crate::metrics::{best_c3_recall, fem};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("language {0:?} is not registered")]
    UnknownLanguage(String),
    #[error("example {0:?} has no gold answers")]
    EmptyGolds(String),
}

fn check_dataset(dataset: &[QAExample], registry: &CollectionRegistry) -> Result<(), HarnessError> {
    for ex in dataset {
        if !registry.contains(&ex.lang) {
            return Err(HarnessError::UnknownLanguage(ex.lang.clone()));
        }
        if ex.gold_aliases.is_empty() {
            return Err(HarnessError::EmptyGolds(ex.id.clone()));
        }
    }
    Ok(())
}

/// One question with its gold answers. `answers_by_lang` optionally
/// records which surface form of the answer belongs to which language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub lang: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_aliases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers_by_lang: Option<BTreeMap<String, Vec<String>>>,
}

/// Load a JSONL dataset, one example per line. Blank lines are skipped;
/// schema problems are reported with their 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<QAExample>, HarnessError> {
    let raw = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: QAExample = serde_json::from_str(line).map_err(|e| HarnessError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if example.gold_aliases.is_empty() {
            return Err(HarnessError::Schema {
                line: i + 1,
                message: "answers must be non-empty".to_string(),
            });
        }
        out.push(example);
    }
    Ok(out)
}

/// Per-example outcome inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct ExampleScore {
    pub id: String,
    pub lang: String,
    pub answer: Option<String>,
    pub fem: f64,
    pub c3_recall: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LanguageRow {
    pub lang: String,
    pub n: usize,
    pub fem_mean: f64,
    pub c3recall_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: Vec<LanguageRow>,
    pub overall_fem: f64,
    pub overall_c3recall: f64,
    pub examples: Vec<ExampleScore>,
    pub failures: usize,
    pub config_hash: u64,
    pub seed: u64,
}

impl EvalReport {
    /// Per-language CSV with a trailing overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lang,n,fem_mean,c3recall_mean\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.lang, r.n, r.fem_mean, r.c3recall_mean
            ));
        }
        out.push_str(&format!(
            "overall,{},{},{}\n",
            self.examples.len(),
            self.overall_fem,
            self.overall_c3recall
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// FNV-1a over bytes; used for stable config fingerprints in reports.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn config_fingerprint(config: &LoopConfig) -> u64 {
    let encoded = serde_json::to_string(config).expect("config serializes");
    fnv1a64(encoded.as_bytes())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Run every example through the retrieval loop and aggregate metric
/// means per language. `template.query_lang` is overridden per example.
pub fn evaluate(
    dataset: &[QAExample],
    registry: &CollectionRegistry,
    template: &LoopConfig,
    generator: &dyn Generator,
    translator: &dyn Translator,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    check_dataset(dataset, registry)?;
    let mut examples = Vec::with_capacity(dataset.len());
    let mut failures = 0;
    for ex in dataset {
        let mut config = template.clone();
        config.query_lang = ex.lang.clone();
        match run_episode(&ex.question, &config, registry, generator, translator) {
            Ok(result) => {
                let answer = result.answer.unwrap_or_default();
                examples.push(ExampleScore {
                    id: ex.id.clone(),
                    lang: ex.lang.clone(),
                    answer: if answer.is_empty() {
                        None
                    } else {
                        Some(answer.clone())
                    },
                    fem: fem(&answer, &ex.gold_aliases).expect("golds checked"),
                    c3_recall: best_c3_recall(&answer, &ex.gold_aliases).expect("golds checked"),
                    failed: false,
                });
            }
            Err(err) => {
                log::warn!("episode for {} failed: {err}", ex.id);
                failures += 1;
                examples.push(ExampleScore {
                    id: ex.id.clone(),
                    lang: ex.lang.clone(),
                    answer: None,
                    fem: 0.0,
                    c3_recall: 0.0,
                    failed: true,
                });
            }
        }
    }

    let mut by_lang: BTreeMap<&str, Vec<&ExampleScore>> = BTreeMap::new();
    for score in &examples {
        by_lang.entry(&score.lang).or_default().push(score);
    }
    let rows = by_lang
        .iter()
        .map(|(lang, scores)| LanguageRow {
            lang: lang.to_string(),
            n: scores.len(),
            fem_mean: mean(&scores.iter().map(|s| s.fem).collect::<Vec<_>>()),
            c3recall_mean: mean(&scores.iter().map(|s| s.c3_recall).collect::<Vec<_>>()),
        })
        .collect();
    let overall_fem = mean(&examples.iter().map(|s| s.fem).collect::<Vec<_>>());
    let overall_c3recall = mean(&examples.iter().map(|s| s.c3_recall).collect::<Vec<_>>());
    Ok(EvalReport {
        rows,
        overall_fem,
        overall_c3recall,
        examples,
        failures,
        config_hash: config_fingerprint(template),
        seed,
    })
}

/// The language order evaluation enables for one question: its own
/// language first, the fallback second (when registered), the remaining
/// registry languages ascending.
pub fn language_order(ex_lang: &str, fallback: &str, registry: &CollectionRegistry) -> Vec<String> {
    let mut order = vec![ex_lang.to_string()];
    if fallback != ex_lang && registry.contains(fallback) {
        order.push(fallback.to_string());
    }
    for lang in registry.languages() {
        if !order.contains(&lang) {
            order.push(lang);
        }
    }
    order
}

/// Mean trigram recall as a function of how many collections are
/// enabled. Point `n` keeps the first `n` entries of each question's
/// language order and empties the rest.
pub fn scaling_curve(
    dataset: &[QAExample],
    registry: &CollectionRegistry,
    template: &LoopConfig,
    generator: &dyn Generator,
    translator: &dyn Translator,
) -> Result<Vec<(usize, f64)>, HarnessError> {
    check_dataset(dataset, registry)?;
    let total = registry.languages().len();
    let mut curve = Vec::with_capacity(total);
    for n in 1..=total {
        let mut scores = Vec::with_capacity(dataset.len());
        for ex in dataset {
            let order = language_order(&ex.lang, &template.fallback_lang, registry);
            let keep: BTreeSet<String> = order.into_iter().take(n).collect();
            let reduced = registry.restricted_to(&keep);
            let mut config = template.clone();
            config.query_lang = ex.lang.clone();
            let c3 = match run_episode(&ex.question, &config, &reduced, generator, translator) {
                Ok(result) => best_c3_recall(&result.answer.unwrap_or_default(), &ex.gold_aliases)
                    .expect("golds checked"),
                Err(err) => {
                    log::warn!("scaling episode for {} at n={n} failed: {err}", ex.id);
                    0.0
                }
            };
            scores.push(c3);
        }
        curve.push((n, mean(&scores)));
    }
    Ok(curve)
}

/// Degradation matrix: rows are query languages, columns are removed
/// collections, cells are full-registry mean trigram recall minus the
/// reduced-registry mean.
#[derive(Debug, Clone, Serialize)]
pub struct AblationMatrix {
    pub query_langs: Vec<String>,
    pub removed_langs: Vec<String>,
    /// cells[row][col] aligned with the two axes above.
    pub cells: Vec<Vec<f64>>,
}

impl AblationMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lang");
        for col in &self.removed_langs {
            out.push(',');
            out.push_str(col);
        }
        out.push('\n');
        for (row, lang) in self.query_langs.iter().enumerate() {
            out.push_str(lang);
            for cell in &self.cells[row] {
                out.push_str(&format!(",{cell}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, query_lang: &str, removed: &str) -> Option<f64> {
        let row = self.query_langs.iter().position(|l| l == query_lang)?;
        let col = self.removed_langs.iter().position(|l| l == removed)?;
        Some(self.cells[row][col])
    }
}

fn per_lang_c3(
    dataset: &[QAExample],
    registry: &CollectionRegistry,
    template: &LoopConfig,
    generator: &dyn Generator,
    translator: &dyn Translator,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let report = evaluate(dataset, registry, template, generator, translator, 0)?;
    Ok(report
        .rows
        .into_iter()
        .map(|r| (r.lang, r.c3recall_mean))
        .collect())
}

/// Remove one collection at a time and measure the per-language drop in
/// mean trigram recall.
pub fn ablation_matrix(
    dataset: &[QAExample],
    registry: &CollectionRegistry,
    template: &LoopConfig,
    generator: &dyn Generator,
    translator: &dyn Translator,
) -> Result<AblationMatrix, HarnessError> {
    let removed_langs = registry.languages();
    if removed_langs.len() < 2 {
        return Err(HarnessError::UnknownLanguage(
            "ablation needs at least two registered languages".to_string(),
        ));
    }
    let full = per_lang_c3(dataset, registry, template, generator, translator)?;
    let query_langs: Vec<String> = full.keys().cloned().collect();
    let mut cells = vec![Vec::with_capacity(removed_langs.len()); query_langs.len()];
    for removed in &removed_langs {
        let keep: BTreeSet<String> = removed_langs
            .iter()
            .filter(|l| *l != removed)
            .cloned()
            .collect();
        let reduced_registry = registry.restricted_to(&keep);
        let reduced = per_lang_c3(dataset, &reduced_registry, template, generator, translator)?;
        for (row, lang) in query_langs.iter().enumerate() {
            cells[row].push(full[lang] - reduced[lang]);
        }
    }
    Ok(AblationMatrix {
        query_langs,
        removed_langs,
        cells,
    })
}

/// A deterministic scripted answerer for experiments: searches the
/// question verbatim, answers with the trailing token of the first
/// retrieved entry, retries the search once after an empty round, and
/// echoes translated evidence as numbered facts when asked to
/// reconstruct.
#[derive(Debug, Default)]
pub struct EvidenceBackend;

/// The question text carried by a retrieval-loop prompt.
pub fn question_from_prompt(prompt: &str) -> Option<&str> {
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix(crate::episode::QUESTION_PREFIX) {
            return Some(rest.trim());
        }
    }
    None
}

/// Entries of the last information block in `prompt`, as the text after
/// each `Doc k (title): ` prefix.
pub fn last_information_entries(prompt: &str) -> Vec<String> {
    let open = "<information>";
    let close = "</information>";
    let Some(start) = prompt.rfind(open) else {
        return Vec::new();
    };
    let body_start = start + open.len();
    let Some(end) = prompt[body_start..].find(close) else {
        return Vec::new();
    };
    let body = &prompt[body_start..body_start + end];
    body.split("\n\n")
        .filter(|entry| entry.trim_start().starts_with("Doc "))
        .filter_map(|entry| {
            entry
                .split_once("): ")
                .map(|(_, text)| text.trim().to_string())
        })
        .collect()
}

/// The trailing whitespace-delimited token of `text`.
pub fn trailing_token(text: &str) -> Option<&str> {
    text.split_whitespace().last()
}

impl Generator for EvidenceBackend {
    fn generate(&self, req: &GeneratorRequest) -> Result<String, BackendError> {
        let prompt = &req.prompt;
        let raw = if is_reconstruction_prompt(prompt) {
            let lines = translated_section_texts(prompt);
            let numbered: Vec<String> = lines
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{}. {}", i + 1, l))
                .collect();
            format!("<think>\n{}\n</think>", numbered.join("\n"))
        } else {
            let question = question_from_prompt(prompt).unwrap_or_default().to_string();
            let blocks = prompt.matches("<information>").count();
            let entries = last_information_entries(prompt);
            if blocks == 0 {
                format!("<search>{question}</search>")
            } else if let Some(candidate) = entries.first().and_then(|e| trailing_token(e)) {
                format!("<answer>{candidate}</answer>")
            } else if blocks < 2 {
                format!("<search>{question}</search>")
            } else {
                "<answer>unknown</answer>".to_string()
            }
        };
        Ok(crate::backends::apply_generation_limits(&raw, req))
    }
}
