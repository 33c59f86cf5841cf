//! The multi-turn retrieval loop.
//!
//! One episode answers one question. Within a search budget of `B` turns
//! the generator may issue `<search>` actions; evidence is routed by turn
//! number (complemental schedule), translated into the query language when
//! it is foreign, condensed into facts once, and appended to the context
//! as `<information>` blocks. The loop ends on a final `<answer>` or, when
//! the budget runs out, after one last generation with searches disabled.
//!
//! Routing schedule for search turn `b` with query language `L`:
//!
//! ```text
//! b = 1  -> { ω_L }               (native collection only)
//! b = 2  -> { ω_l : l registered } (full cross-lingual fan-out)
//! b >= 3 -> { ω_fallback }         (high-resource fallback, default "en")
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::backends::{BackendError, Generator, GeneratorRequest, Translator};
use crate::index::{CollectionRegistry, Document, ScoredHit};
use crate::integrate::{
    build_reconstruction_prompt, extract_facts, normalize_evidence, FactStatements, NormalizedDoc,
};
use crate::protocol::{
    self, complete_final_action, escape_tags, parse_trajectory, ActionEvent, SegmentKind,
    Trajectory,
};

/// Stop sequences every generation request carries: generation halts at an
/// action closer, which the loop restores before parsing.
pub const STOP_SEQUENCES: [&str; 2] = ["</search>", "</answer>"];

/// Information block appended when a search turn returns nothing, so the
/// context still advances and backends can see the turn completed.
pub const NO_RESULTS_BLOCK: &str = "<information>No results found.</information>";

/// Prefix of the question line in the context header.
pub const QUESTION_PREFIX: &str = "Question: ";

/// The directive prepended to the context when a thinking mode is set.
pub fn thinking_directive(language: &str) -> String {
    format!("Reason and formulate your search queries in {language}.")
}

/// Per-episode knobs. `max_self_corrections` bounds the total number of
/// retry messages per episode; without it a generator that never emits an
/// action would spin forever, since only searches consume budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoopConfig {
    pub max_budget: usize,
    pub top_k: usize,
    pub query_lang: String,
    pub fallback_lang: String,
    pub thinking_mode: Option<String>,
    pub max_self_corrections: usize,
    pub max_new_chars: usize,
}

impl LoopConfig {
    pub fn new(query_lang: &str) -> Self {
        LoopConfig {
            max_budget: 4,
            top_k: 3,
            query_lang: query_lang.to_string(),
            fallback_lang: "en".to_string(),
            thinking_mode: None,
            max_self_corrections: 3,
            max_new_chars: 4096,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("language {0:?} is not registered")]
    UnknownLanguage(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("search failed: {0}")]
    Search(#[from] crate::index::SearchError),
}

/// Which collections a search turn queries. Turn numbers are 1-based.
pub fn route_turn(
    turn: usize,
    query_lang: &str,
    registry: &CollectionRegistry,
    fallback_lang: &str,
) -> Vec<String> {
    assert!(turn >= 1, "search turns are 1-based");
    match turn {
        1 => vec![query_lang.to_string()],
        2 => registry.languages(),
        _ => vec![fallback_lang.to_string()],
    }
}

/// Everything one search turn did.
#[derive(Debug, Clone, Serialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub query: String,
    pub operators: Vec<String>,
    pub hits: Vec<ScoredHit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Answer,
    BudgetExhausted,
}

/// Outcome of one episode. `trajectory` is the parsed form of everything
/// that entered the context after the header: generations, information
/// blocks and self-correction messages.
#[derive(Debug)]
pub struct EpisodeResult {
    pub turns: Vec<TurnRecord>,
    pub budget_used: usize,
    pub terminated_by: TerminationReason,
    pub answer: Option<String>,
    pub trajectory: Trajectory,
}

/// Merge one turn's per-language hit lists: dedupe by (lang, id), then
/// round-robin across languages by descending per-language score, query
/// language first, remaining languages in ascending code order.
pub fn merge_turn_hits(per_lang: &[(String, Vec<ScoredHit>)], query_lang: &str) -> Vec<ScoredHit> {
    let ordered: Vec<&(String, Vec<ScoredHit>)> = per_lang
        .iter()
        .filter(|(l, _)| l == query_lang)
        .chain(per_lang.iter().filter(|(l, _)| l != query_lang))
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    let mut row = 0;
    loop {
        let mut any = false;
        for (_, hits) in &ordered {
            if let Some(hit) = hits.get(row) {
                any = true;
                if seen.insert((hit.doc.lang.clone(), hit.doc.id.clone())) {
                    out.push(hit.clone());
                }
            }
        }
        if !any {
            break;
        }
        row += 1;
    }
    out
}

struct LoopState<'a> {
    config: &'a LoopConfig,
    registry: &'a CollectionRegistry,
    generator: &'a dyn Generator,
    translator: &'a dyn Translator,
    header: String,
    transcript: String,
    turns: Vec<TurnRecord>,
    first_turn_native: Vec<Document>,
    reconstructed: bool,
}

impl<'a> LoopState<'a> {
    fn generate(&self, prompt: String) -> Result<String, EpisodeError> {
        let raw = self.generator.generate(&GeneratorRequest {
            prompt,
            stop_sequences: STOP_SEQUENCES.iter().map(|s| s.to_string()).collect(),
            max_new_chars: self.config.max_new_chars,
        })?;
        Ok(complete_final_action(&raw).unwrap_or(raw))
    }

    fn generate_step(&self) -> Result<String, EpisodeError> {
        self.generate(format!("{}{}", self.header, self.transcript))
    }

    fn append_info_block(&mut self, entries: &[(String, String)]) {
        // entries is never empty at the call sites, so this cannot fail.
        let block = protocol::render_information(entries).expect("non-empty evidence");
        self.transcript.push('\n');
        self.transcript.push_str(&block);
        self.transcript.push('\n');
    }

    fn run_search_turn(&mut self, turn: usize, query: &str) -> Result<(), EpisodeError> {
        let langs = route_turn(
            turn,
            &self.config.query_lang,
            self.registry,
            &self.config.fallback_lang,
        );
        let mut per_lang = Vec::new();
        for lang in &langs {
            let operator = self
                .registry
                .operator(lang)
                .map_err(|_| EpisodeError::UnknownLanguage(lang.clone()))?;
            per_lang.push((lang.clone(), operator.search(query, self.config.top_k)?));
        }
        let hits = if langs.len() > 1 {
            merge_turn_hits(&per_lang, &self.config.query_lang)
        } else {
            per_lang.pop().map(|(_, h)| h).unwrap_or_default()
        };
        self.turns.push(TurnRecord {
            turn,
            query: query.to_string(),
            operators: langs,
            hits: hits.clone(),
        });
        if hits.is_empty() {
            self.transcript.push('\n');
            self.transcript.push_str(NO_RESULTS_BLOCK);
            self.transcript.push('\n');
            return Ok(());
        }

        let native: Vec<Document> = hits
            .iter()
            .filter(|h| h.doc.lang == self.config.query_lang)
            .map(|h| h.doc.clone())
            .collect();
        let global: Vec<Document> = hits
            .iter()
            .filter(|h| h.doc.lang != self.config.query_lang)
            .map(|h| h.doc.clone())
            .collect();
        if turn == 1 {
            self.first_turn_native = native.clone();
        }
        let normalized = normalize_evidence(&global, &self.config.query_lang, self.translator)?;

        if !normalized.is_empty() && !self.reconstructed {
            self.reconstructed = true;
            if !native.is_empty() {
                let entries: Vec<(String, String)> = native
                    .iter()
                    .map(|d| (d.title.clone(), d.text.clone()))
                    .collect();
                self.append_info_block(&entries);
            }
            let facts = self.reconstruct(query, &normalized)?;
            if facts.is_empty() {
                // Nothing extractable: fall back to the raw translations so
                // the evidence is not silently dropped.
                self.append_normalized_block(&hits, &normalized);
            } else {
                let entries: Vec<(String, String)> = facts
                    .facts()
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (format!("reconstructed fact {}", i + 1), f.clone()))
                    .collect();
                self.append_info_block(&entries);
            }
        } else {
            self.append_normalized_block(&hits, &normalized);
        }
        Ok(())
    }

    /// Render a turn's evidence in merged hit order, swapping in translated
    /// titles and texts for the foreign documents.
    fn append_normalized_block(&mut self, hits: &[ScoredHit], normalized: &[NormalizedDoc]) {
        let entries: Vec<(String, String)> = hits
            .iter()
            .map(|h| {
                if let Some(n) = normalized
                    .iter()
                    .find(|n| n.doc_id == h.doc.id && n.source_lang == h.doc.lang)
                {
                    (n.title.clone(), n.text.clone())
                } else {
                    (h.doc.title.clone(), h.doc.text.clone())
                }
            })
            .collect();
        self.append_info_block(&entries);
    }

    fn reconstruct(
        &self,
        query: &str,
        normalized: &[NormalizedDoc],
    ) -> Result<FactStatements, EpisodeError> {
        let prompt = build_reconstruction_prompt(query, &self.first_turn_native, normalized)
            .expect("normalized evidence is non-empty");
        let response = self.generate(prompt)?;
        // Accept facts either wrapped in <think> tags or as bare lines.
        let source = match parse_trajectory(&response) {
            Ok(t) if !t.segments.is_empty() => t
                .segments
                .iter()
                .filter(|s| s.kind == SegmentKind::Think)
                .map(|s| s.body.clone())
                .collect::<Vec<_>>()
                .join("\n"),
            _ => response.clone(),
        };
        Ok(extract_facts(&source))
    }
}

/// Run one episode of the retrieval loop for `question`.
pub fn run_episode(
    question: &str,
    config: &LoopConfig,
    registry: &CollectionRegistry,
    generator: &dyn Generator,
    translator: &dyn Translator,
) -> Result<EpisodeResult, EpisodeError> {
    if !registry.contains(&config.query_lang) {
        return Err(EpisodeError::UnknownLanguage(config.query_lang.clone()));
    }
    if !registry.contains(&config.fallback_lang) {
        return Err(EpisodeError::UnknownLanguage(config.fallback_lang.clone()));
    }

    let mut header = String::new();
    if let Some(mode) = &config.thinking_mode {
        header.push_str(&thinking_directive(mode));
        header.push('\n');
    }
    header.push_str(QUESTION_PREFIX);
    header.push_str(question);
    header.push('\n');

    let mut state = LoopState {
        config,
        registry,
        generator,
        translator,
        header,
        transcript: String::new(),
        turns: Vec::new(),
        first_turn_native: Vec::new(),
        reconstructed: false,
    };

    let mut budget_used = 0;
    let mut corrections = 0;
    let mut answer: Option<String> = None;
    let mut terminated_by = TerminationReason::BudgetExhausted;

    while budget_used < config.max_budget {
        let tau = state.generate_step()?;
        match parse_trajectory(&tau) {
            Err(_) => {
                // Neutralize the unparseable output, then retry.
                let escaped = escape_tags(&tau);
                state.transcript.push_str(&escaped);
                corrections += 1;
                if corrections > config.max_self_corrections {
                    break;
                }
                state.transcript.push('\n');
                state
                    .transcript
                    .push_str(protocol::self_correction_message());
                state.transcript.push('\n');
            }
            Ok(traj) => {
                state.transcript.push_str(&tau);
                match protocol::next_action(&traj) {
                    ActionEvent::Search { query } => {
                        budget_used += 1;
                        state.run_search_turn(budget_used, &query)?;
                    }
                    ActionEvent::FinalResponse { answer: a } => {
                        answer = Some(a);
                        terminated_by = TerminationReason::Answer;
                        break;
                    }
                    ActionEvent::Malformed(_) => {
                        corrections += 1;
                        if corrections > config.max_self_corrections {
                            break;
                        }
                        state.transcript.push('\n');
                        state
                            .transcript
                            .push_str(protocol::self_correction_message());
                        state.transcript.push('\n');
                    }
                }
            }
        }
    }

    if terminated_by != TerminationReason::Answer {
        // Budget (or patience) ran out: one last generation, searches
        // disabled, answer taken if one shows up.
        let tau = state.generate_step()?;
        match parse_trajectory(&tau) {
            Ok(traj) => {
                state.transcript.push_str(&tau);
                if let ActionEvent::FinalResponse { answer: a } = protocol::next_action(&traj) {
                    answer = Some(a);
                }
            }
            Err(_) => state.transcript.push_str(&escape_tags(&tau)),
        }
    }

    let trajectory = parse_trajectory(&state.transcript)
        .expect("episode transcript is parseable by construction");
    Ok(EpisodeResult {
        turns: state.turns,
        budget_used,
        terminated_by,
        answer,
        trajectory,
    })
}

#[derive(Serialize)]
struct TraceHit<'a> {
    id: &'a str,
    lang: &'a str,
    title: &'a str,
    score: f64,
}

#[derive(Serialize)]
#[serde(tag = "type", rename = "turn")]
struct TraceTurn<'a> {
    turn: usize,
    query: &'a str,
    operators: &'a [String],
    hits: Vec<TraceHit<'a>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename = "summary")]
struct TraceSummary<'a> {
    budget_used: usize,
    terminated_by: TerminationReason,
    answer: Option<&'a str>,
}

/// Serialize an episode as trace JSONL: one line per turn, then a summary
/// line. The schema is documented in `docs/trace.md`.
pub fn trace_jsonl(result: &EpisodeResult) -> String {
    let mut out = String::new();
    for t in &result.turns {
        let line = TraceTurn {
            turn: t.turn,
            query: &t.query,
            operators: &t.operators,
            hits: t
                .hits
                .iter()
                .map(|h| TraceHit {
                    id: &h.doc.id,
                    lang: &h.doc.lang,
                    title: &h.doc.title,
                    score: h.score,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace serializes"));
        out.push('\n');
    }
    let summary = TraceSummary {
        budget_used: result.budget_used,
        terminated_by: result.terminated_by,
        answer: result.answer.as_deref(),
    };
    out.push_str(&serde_json::to_string(&summary).expect("trace serializes"));
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{DictionaryTranslator, IdentityTranslator, ScriptedGenerator};
    use crate::index::{Collection, TokenizerMode};

    fn doc(id: &str, lang: &str, title: &str, text: &str) -> Document {
        Document {
            id: id.to_string(),
            lang: lang.to_string(),
            title: title.to_string(),
            text: text.to_string(),
        }
    }

    /// fr + en registry: the French collection knows the question topic,
    /// the English collection holds the decisive fact.
    fn bilingual_registry() -> CollectionRegistry {
        let mut reg = CollectionRegistry::new();
        reg.register(
            Collection::build(
                "fr",
                vec![
                    doc("f1", "fr", "capitale", "la capitale est une ville"),
                    doc("f2", "fr", "fleuve", "un long fleuve"),
                    doc("f3", "fr", "montagne", "une haute montagne"),
                ],
                TokenizerMode::Words,
            )
            .unwrap(),
        )
        .unwrap();
        reg.register(
            Collection::build(
                "en",
                vec![
                    doc("e1", "en", "capital", "the capitale city is paris"),
                    doc("e2", "en", "river", "a long river"),
                    doc("e3", "en", "hill", "a small hill"),
                ],
                TokenizerMode::Words,
            )
            .unwrap(),
        )
        .unwrap();
        reg
    }

    fn fr_translator() -> DictionaryTranslator {
        let mut t = DictionaryTranslator::new();
        t.add_lexicon(
            "en",
            "fr",
            [
                ("the", "la"),
                ("city", "ville"),
                ("is", "est"),
                ("capital", "capitale"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        );
        t
    }

    #[test]
    fn test_route_turn_schedule() {
        let reg = bilingual_registry();
        assert_eq!(route_turn(1, "fr", &reg, "en"), vec!["fr"]);
        assert_eq!(route_turn(2, "fr", &reg, "en"), vec!["en", "fr"]);
        assert_eq!(route_turn(3, "fr", &reg, "en"), vec!["en"]);
        assert_eq!(route_turn(7, "fr", &reg, "en"), vec!["en"]);
    }

    #[test]
    fn test_two_turn_episode_with_reconstruction() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<think>start local</think><search>capitale</search>",
            "<search>capitale paris</search>",
            "<think>\n1. paris est la capitale.\n</think>",
            "<answer>Paris</answer>",
        ]);
        let translator = fr_translator();
        let mut config = LoopConfig::new("fr");
        config.max_budget = 4;
        let out = run_episode("quelle est la capitale", &config, &reg, &gen, &translator).unwrap();

        assert_eq!(out.turns.len(), 2);
        assert_eq!(out.turns[0].turn, 1);
        assert_eq!(out.turns[0].operators, vec!["fr"]);
        assert_eq!(out.turns[1].operators, vec!["en", "fr"]);
        assert_eq!(out.answer.as_deref(), Some("Paris"));
        assert_eq!(out.terminated_by, TerminationReason::Answer);
        assert_eq!(out.budget_used, 2);

        let raw = &out.trajectory.raw;
        assert!(raw.contains("reconstructed fact 1"));
        // Native evidence precedes the reconstructed facts.
        let native_at = raw.find("capitale est une ville").unwrap();
        let facts_at = raw.find("reconstructed fact").unwrap();
        assert!(native_at < facts_at);
        // The fact statement entered the context; the raw English doc text
        // never did.
        assert!(raw.contains("paris est la capitale"));
        assert!(!raw.contains("the capitale city is paris"));
    }

    #[test]
    fn test_budget_exhaustion_then_final_attempt() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<search>capitale</search>",
            "<search>fleuve</search>",
            "<answer>paris</answer>",
        ]);
        let mut config = LoopConfig::new("fr");
        config.max_budget = 2;
        let out = run_episode("capitale", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.budget_used, 2);
        assert_eq!(out.terminated_by, TerminationReason::BudgetExhausted);
        // The final no-search generation still supplied an answer.
        assert_eq!(out.answer.as_deref(), Some("paris"));
    }

    #[test]
    fn test_final_attempt_search_is_disabled() {
        let reg = bilingual_registry();
        let gen =
            ScriptedGenerator::new(vec!["<search>capitale</search>", "<search>deux</search>"]);
        let mut config = LoopConfig::new("fr");
        config.max_budget = 1;
        let out = run_episode("capitale", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.turns.len(), 1, "final attempt must not search");
        assert_eq!(out.answer, None);
        assert_eq!(out.terminated_by, TerminationReason::BudgetExhausted);
    }

    #[test]
    fn test_think_forever_ends_budget_exhausted() {
        let reg = bilingual_registry();
        let steps: Vec<String> = (0..8).map(|i| format!("<think>loop {i}</think>")).collect();
        let gen = ScriptedGenerator::new(steps);
        let mut config = LoopConfig::new("fr");
        config.max_budget = 2;
        let out = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.terminated_by, TerminationReason::BudgetExhausted);
        assert_eq!(out.budget_used, 0);
        assert!(out.turns.is_empty());
        assert_eq!(out.answer, None);
        assert!(out
            .trajectory
            .raw
            .contains("did not contain a valid action"));
    }

    #[test]
    fn test_self_correction_recovery() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<think>just thinking</think>",
            "<search>capitale</search>",
            "<answer>une ville</answer>",
        ]);
        let config = LoopConfig::new("fr");
        let out = run_episode("capitale", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.answer.as_deref(), Some("une ville"));
        assert!(out
            .trajectory
            .raw
            .contains("did not contain a valid action"));
        assert_eq!(out.turns.len(), 1);
    }

    #[test]
    fn test_unparseable_generation_is_escaped_and_retried() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<think>broken and never closed",
            "<answer>ok</answer>",
        ]);
        let config = LoopConfig::new("fr");
        let out = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.answer.as_deref(), Some("ok"));
        // The broken tag was neutralized into the escaped form.
        assert!(out.trajectory.raw.contains("\u{27e8}think\u{27e9}"));
    }

    #[test]
    fn test_empty_query_is_self_corrected() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec!["<search>   </search>", "<answer>done</answer>"]);
        let config = LoopConfig::new("fr");
        let out = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert!(out.turns.is_empty());
        assert_eq!(out.answer.as_deref(), Some("done"));
    }

    #[test]
    fn test_no_results_block() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<search>zzz introuvable</search>",
            "<answer>je ne sais pas</answer>",
        ]);
        let config = LoopConfig::new("fr");
        let out = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap();
        assert_eq!(out.turns.len(), 1);
        assert!(out.turns[0].hits.is_empty());
        assert!(out.trajectory.raw.contains("No results found."));
    }

    #[test]
    fn test_backend_failure_aborts() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(Vec::<String>::new());
        let config = LoopConfig::new("fr");
        let err = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap_err();
        assert!(matches!(err, EpisodeError::Backend(_)));
    }

    #[test]
    fn test_unknown_language_rejected() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec!["<answer>x</answer>"]);
        let config = LoopConfig::new("de");
        let err = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap_err();
        assert!(matches!(err, EpisodeError::UnknownLanguage(l) if l == "de"));
    }

    #[test]
    fn test_merge_interleaves_round_robin() {
        let hit = |id: &str, lang: &str, score: f64| ScoredHit {
            doc: doc(id, lang, "t", "x"),
            score,
        };
        let per_lang = vec![
            (
                "en".to_string(),
                vec![hit("e1", "en", 3.0), hit("e2", "en", 1.0)],
            ),
            ("fr".to_string(), vec![hit("f1", "fr", 9.0)]),
            (
                "th".to_string(),
                vec![hit("t1", "th", 5.0), hit("t2", "th", 4.0)],
            ),
        ];
        let merged = merge_turn_hits(&per_lang, "fr");
        let ids: Vec<&str> = merged.iter().map(|h| h.doc.id.as_str()).collect();
        // fr first, then en/th by row.
        assert_eq!(ids, vec!["f1", "e1", "t1", "e2", "t2"]);
    }

    #[test]
    fn test_turn_indices_and_budget_invariants() {
        let reg = bilingual_registry();
        let gen = ScriptedGenerator::new(vec![
            "<search>capitale</search>",
            "<search>fleuve</search>",
            "<search>montagne</search>",
            "<answer>ok</answer>",
        ]);
        let translator = fr_translator();
        let mut config = LoopConfig::new("fr");
        config.max_budget = 3;
        let out = run_episode("q", &config, &reg, &gen, &translator).unwrap();
        for (i, t) in out.turns.iter().enumerate() {
            assert_eq!(t.turn, i + 1);
        }
        assert!(out.budget_used <= config.max_budget);
    }

    #[test]
    fn test_trace_jsonl_shape() {
        let reg = bilingual_registry();
        let gen =
            ScriptedGenerator::new(vec!["<search>capitale</search>", "<answer>paris</answer>"]);
        let config = LoopConfig::new("fr");
        let out = run_episode("q", &config, &reg, &gen, &IdentityTranslator).unwrap();
        let trace = trace_jsonl(&out);
        let lines: Vec<&str> = trace.lines().collect();
        assert_eq!(lines.len(), 2);
        let turn: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(turn["type"], "turn");
        assert_eq!(turn["turn"], 1);
        assert_eq!(turn["operators"][0], "fr");
        let summary: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(summary["type"], "summary");
        assert_eq!(summary["terminated_by"], "answer");
        assert_eq!(summary["answer"], "paris");
    }

    #[test]
    fn test_episode_is_deterministic() {
        let reg = bilingual_registry();
        let steps = vec![
            "<search>capitale</search>",
            "<search>capitale paris</search>",
            "<think>\n1. paris est la capitale.\n</think>",
            "<answer>Paris</answer>",
        ];
        let translator = fr_translator();
        let config = LoopConfig::new("fr");
        let gen = ScriptedGenerator::new(steps.clone());
        let a = run_episode("q", &config, &reg, &gen, &translator).unwrap();
        let gen = ScriptedGenerator::new(steps);
        let b = run_episode("q", &config, &reg, &gen, &translator).unwrap();
        assert_eq!(a.trajectory.raw, b.trajectory.raw);
        assert_eq!(trace_jsonl(&a), trace_jsonl(&b));
    }
}
