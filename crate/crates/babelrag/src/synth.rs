//! A synthetic cross-lingual QA environment with forced synergy.
//!
//! The generator plants three kinds of questions per language `l`:
//!
//! * native: the answer lives in `l`'s own collection, so the first
//!   (native) search turn suffices;
//! * invariant-cross: the topic token is spelled identically in every
//!   language but the answer is planted only in one designated foreign
//!   collection, so the cross-lingual fan-out turn is required while the
//!   query wording is mode-independent;
//! * coded-cross: the topic token carries a per-language suffix and the
//!   answer is planted in every collection except `l`'s own, so only a
//!   rollout that reformulates the query in a foreign thinking mode can
//!   retrieve it at all.
//!
//! With the default four languages and four questions each, half of all
//! answers live outside their question's language, and a quarter are
//! reachable only through cross-lingual thinking modes. That gives
//! group-relative training a strict ordering: cross-lingual mode
//! assignment beats monolingual sampling by construction, and the
//! scaling and ablation drivers see forced, sign-determined gaps.
//!
//! Every planted token is a single alphanumeric word. Answer tokens are
//! always language-coded (`replyfrq2` + collection code) and the bundled
//! lexicons map each coded form to every other language, so translated
//! evidence and reconstructed facts carry the query-language form of the
//! answer. Gold aliases accept all coded forms.
//!
//! [`PolicyBackend`] adapts the differentiable policy to the retrieval
//! loop's generator interface: each generation call featurizes the
//! prompt, samples one token from the policy (seeded by the episode seed
//! and a hash of the prompt, so identical prompts redraw identically)
//! and renders it as a protocol action. Environment-inserted context is
//! recorded as masked observation tokens so the trainer can prove they
//! carry no gradient.

use std::collections::BTreeMap;
use std::sync::Mutex;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    apply_generation_limits, BackendError, DictionaryTranslator, Generator, GeneratorRequest,
};
use crate::episode::{run_episode, LoopConfig};
use crate::harness::{fnv1a64, last_information_entries, trailing_token, QAExample};
use crate::index::{
    Collection, CollectionRegistry, Document, IndexError, RegistryError, TokenizerMode,
};
use crate::integrate::{is_reconstruction_prompt, translated_section_texts};
use crate::metrics::{fem, normalize_text, outcome_reward};
use crate::policy::{log_probs, sample_token, PolicyParameters};
use crate::trainer::{
    derive_seed, RewardKind, Rollout, RolloutEnv, TokenRecord, TrainError, NATIVE_MODE,
};

/// The policy's micro-vocabulary. One token is sampled per generation
/// call and rendered into a protocol action.
pub const TOKEN_THINK: usize = 0;
/// Search for the question's topic, spelled in the rollout's thinking
/// mode.
pub const TOKEN_SEARCH: usize = 1;
/// Answer with the trailing token of the first entry in the latest
/// information block.
pub const TOKEN_ANSWER_FIRST: usize = 2;
pub const TOKEN_ANSWER_SECOND: usize = 3;
pub const TOKEN_ANSWER_THIRD: usize = 4;
pub const TOKEN_ANSWER_UNKNOWN: usize = 5;
/// Answer by echoing the question text.
pub const TOKEN_ANSWER_QUESTION: usize = 6;
/// Marker recorded (masked) when the environment extends the context.
pub const TOKEN_OBSERVE: usize = 7;
pub const VOCAB_SIZE: usize = 8;

/// Feature layout: bias, information-block count, answer-visibility
/// flag, then a one-hot of the thinking mode over the environment's
/// language list.
pub const FEATURE_BIAS: usize = 0;
pub const FEATURE_INFO: usize = 1;
pub const FEATURE_ANSWER_PRESENT: usize = 2;
pub const FEATURE_MODE_BASE: usize = 3;

pub fn feature_dim(num_languages: usize) -> usize {
    FEATURE_MODE_BASE + num_languages
}

/// Featurize a prompt as seen by the policy.
pub fn featurize(
    prompt: &str,
    mode_index: usize,
    num_languages: usize,
    gold_aliases: &[String],
) -> Array1<f64> {
    let mut f = Array1::zeros(feature_dim(num_languages));
    f[FEATURE_BIAS] = 1.0;
    let blocks = prompt.matches("<information>").count().min(4);
    f[FEATURE_INFO] = blocks as f64 / 4.0;
    let haystack = normalize_text(prompt);
    let visible = gold_aliases
        .iter()
        .any(|alias| haystack.contains(&normalize_text(alias)));
    f[FEATURE_ANSWER_PRESENT] = if visible { 1.0 } else { 0.0 };
    f[FEATURE_MODE_BASE + mode_index] = 1.0;
    f
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("question {question} is not retrievable from collection {lang}")]
    NotRetrievable { question: String, lang: String },
}

/// Knobs for the generator. The defaults produce the bundled
/// training environment: 4 languages x 4 questions, 2 fillers per
/// collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub languages: Vec<String>,
    pub questions_per_lang: usize,
    pub fillers_per_lang: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            languages: vec!["en".into(), "fr".into(), "th".into(), "ar".into()],
            questions_per_lang: 4,
            fillers_per_lang: 2,
            seed: 13,
        }
    }
}

/// What was planted where, and how each question is asked per mode.
#[derive(Debug, Clone, Serialize)]
pub struct SyntheticPlan {
    /// Languages in spec order; the policy's mode one-hot follows it.
    pub languages: Vec<String>,
    pub fallback_lang: String,
    /// question id → languages whose collections hold its evidence.
    pub evidence_langs: BTreeMap<String, Vec<String>>,
    /// question id → thinking mode → search query.
    pub query_forms: BTreeMap<String, BTreeMap<String, String>>,
    /// Questions whose evidence lives outside their own language.
    pub cross_ids: Vec<String>,
    /// The subset of `cross_ids` reachable only via a foreign thinking
    /// mode.
    pub coded_ids: Vec<String>,
}

/// The built environment.
#[derive(Debug)]
pub struct SyntheticEnv {
    pub registry: CollectionRegistry,
    pub dataset: Vec<QAExample>,
    pub translator: DictionaryTranslator,
    pub plan: SyntheticPlan,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Native,
    InvariantCross,
    CodedCross,
}

fn role_of(i: usize) -> Role {
    match i % 4 {
        2 => Role::InvariantCross,
        3 => Role::CodedCross,
        _ => Role::Native,
    }
}

fn stem(lang: &str, i: usize) -> String {
    format!("topic{lang}{i}")
}

fn answer_form(lang: &str, i: usize, coded: &str) -> String {
    // The "x" separator keeps every alias trigram disjoint from the
    // question text, so echoing the question earns exactly zero reward.
    format!("reply{lang}q{i}x{coded}")
}

/// Designated foreign collection for invariant-cross questions: the
/// fallback language, or the alphabetically first other language when
/// the question is already in the fallback language.
fn cross_designee(lang: &str, languages: &[String], fallback: &str) -> String {
    if lang != fallback {
        return fallback.to_string();
    }
    let mut others: Vec<&String> = languages.iter().filter(|l| l.as_str() != lang).collect();
    others.sort();
    others[0].clone()
}

/// Generate the environment: collections, dataset, lexicons and plan,
/// all deterministic in the spec. Every planted document is verified to
/// rank first for its designated query before the environment is
/// returned.
pub fn build_synthetic_env(spec: &SyntheticSpec) -> Result<SyntheticEnv, SynthError> {
    if spec.languages.len() < 2 {
        return Err(SynthError::InvalidSpec(
            "need at least two languages".to_string(),
        ));
    }
    {
        let mut unique = spec.languages.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != spec.languages.len() {
            return Err(SynthError::InvalidSpec("duplicate language".to_string()));
        }
    }
    if spec.questions_per_lang == 0 {
        return Err(SynthError::InvalidSpec(
            "questions_per_lang must be positive".to_string(),
        ));
    }
    let fallback = if spec.languages.iter().any(|l| l == "en") {
        "en".to_string()
    } else {
        let mut sorted = spec.languages.clone();
        sorted.sort();
        sorted[0].clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs: BTreeMap<String, Vec<Document>> = spec
        .languages
        .iter()
        .map(|l| (l.clone(), Vec::new()))
        .collect();
    let mut dataset = Vec::new();
    let mut evidence_langs = BTreeMap::new();
    let mut query_forms = BTreeMap::new();
    let mut cross_ids = Vec::new();
    let mut coded_ids = Vec::new();

    for lang in &spec.languages {
        for i in 0..spec.questions_per_lang {
            let qid = format!("{lang}-{i}");
            let stem = stem(lang, i);
            let role = role_of(i);
            let aliases: Vec<String> = spec
                .languages
                .iter()
                .map(|m| answer_form(lang, i, m))
                .collect();
            let answers_by_lang: BTreeMap<String, Vec<String>> = spec
                .languages
                .iter()
                .map(|m| (m.clone(), vec![answer_form(lang, i, m)]))
                .collect();

            let (question_topic, evidence): (String, Vec<String>) = match role {
                Role::Native => {
                    docs.get_mut(lang).unwrap().push(Document {
                        id: format!("d-{qid}"),
                        lang: lang.clone(),
                        title: format!("{stem} entry {lang}"),
                        text: format!("{stem} holds {}", answer_form(lang, i, lang)),
                    });
                    (stem.clone(), vec![lang.clone()])
                }
                Role::InvariantCross => {
                    let designee = cross_designee(lang, &spec.languages, &fallback);
                    docs.get_mut(&designee).unwrap().push(Document {
                        id: format!("d-{qid}"),
                        lang: designee.clone(),
                        title: format!("{stem} entry {designee}"),
                        text: format!("{stem} holds {}", answer_form(lang, i, &designee)),
                    });
                    cross_ids.push(qid.clone());
                    (stem.clone(), vec![designee])
                }
                Role::CodedCross => {
                    let mut planted = Vec::new();
                    for m in spec.languages.iter().filter(|m| *m != lang) {
                        docs.get_mut(m).unwrap().push(Document {
                            id: format!("d-{qid}-{m}"),
                            lang: m.clone(),
                            title: format!("{stem}{m} entry {m}"),
                            text: format!("{stem}{m} holds {}", answer_form(lang, i, m)),
                        });
                        planted.push(m.clone());
                    }
                    cross_ids.push(qid.clone());
                    coded_ids.push(qid.clone());
                    (format!("{stem}{lang}"), planted)
                }
            };

            let forms: BTreeMap<String, String> = spec
                .languages
                .iter()
                .map(|m| {
                    let form = match role {
                        Role::CodedCross => format!("{stem}{m}"),
                        _ => stem.clone(),
                    };
                    (m.clone(), form)
                })
                .collect();
            query_forms.insert(qid.clone(), forms);
            evidence_langs.insert(qid.clone(), evidence);

            dataset.push(QAExample {
                id: qid,
                lang: lang.clone(),
                question: format!("ask{lang} {question_topic} value{lang}"),
                gold_aliases: aliases,
                answers_by_lang: Some(answers_by_lang),
            });
        }
    }

    for lang in &spec.languages {
        for j in 0..spec.fillers_per_lang {
            let noise: u32 = rand::Rng::gen_range(&mut rng, 100_000..1_000_000);
            docs.get_mut(lang).unwrap().push(Document {
                id: format!("f-{lang}-{j}"),
                lang: lang.clone(),
                title: format!("filler{lang}{j} entry {lang}"),
                text: format!("filler{lang}{j} about misc{noise}"),
            });
        }
    }

    let mut registry = CollectionRegistry::new();
    for (lang, collection_docs) in &docs {
        let n = collection_docs.len();
        if !(3..=10).contains(&n) {
            return Err(SynthError::InvalidSpec(format!(
                "collection {lang} has {n} documents, outside 3..=10; \
                 reduce questions_per_lang or fillers_per_lang"
            )));
        }
        registry.register(Collection::build(
            lang,
            collection_docs.clone(),
            TokenizerMode::Words,
        )?)?;
    }

    let mut translator = DictionaryTranslator::new();
    for a in &spec.languages {
        for b in &spec.languages {
            if a == b {
                continue;
            }
            let mut entries = BTreeMap::new();
            entries.insert(a.clone(), b.clone());
            for lang in &spec.languages {
                for i in 0..spec.questions_per_lang {
                    entries.insert(answer_form(lang, i, a), answer_form(lang, i, b));
                    if role_of(i) == Role::CodedCross {
                        entries.insert(
                            format!("{}{a}", stem(lang, i)),
                            format!("{}{b}", stem(lang, i)),
                        );
                    }
                }
            }
            translator.add_lexicon(a, b, entries);
        }
    }

    for ex in &dataset {
        for designee in &evidence_langs[&ex.id] {
            let query = &query_forms[&ex.id][designee];
            let operator = registry.operator(designee).expect("designee registered");
            let hits = operator
                .search(query, 3)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            let first_is_plant = hits
                .first()
                .map(|h| {
                    h.doc
                        .text
                        .split_whitespace()
                        .any(|t| ex.gold_aliases.iter().any(|a| a == t))
                })
                .unwrap_or(false);
            if !first_is_plant {
                return Err(SynthError::NotRetrievable {
                    question: ex.id.clone(),
                    lang: designee.clone(),
                });
            }
        }
    }

    Ok(SyntheticEnv {
        registry,
        dataset,
        translator,
        plan: SyntheticPlan {
            languages: spec.languages.clone(),
            fallback_lang: fallback,
            evidence_langs,
            query_forms,
            cross_ids,
            coded_ids,
        },
    })
}

/// Generator backend driven by the differentiable policy. One token per
/// generation call; the token record stream (including masked
/// environment observations) is collected for the trainer.
pub struct PolicyBackend<'a> {
    example: &'a QAExample,
    query: String,
    mode_index: usize,
    num_languages: usize,
    params: &'a PolicyParameters,
    episode_seed: u64,
    records: Mutex<Vec<TokenRecord>>,
    last_context: Mutex<Option<String>>,
}

impl<'a> PolicyBackend<'a> {
    pub fn new(
        example: &'a QAExample,
        plan: &SyntheticPlan,
        mode: &str,
        params: &'a PolicyParameters,
        episode_seed: u64,
    ) -> Result<Self, TrainError> {
        let mode_index = plan
            .languages
            .iter()
            .position(|l| l == mode)
            .ok_or_else(|| TrainError::Env(format!("unknown thinking mode {mode:?}")))?;
        let query = plan
            .query_forms
            .get(&example.id)
            .and_then(|forms| forms.get(mode))
            .ok_or_else(|| TrainError::Env(format!("no query form for {}", example.id)))?
            .clone();
        Ok(PolicyBackend {
            example,
            query,
            mode_index,
            num_languages: plan.languages.len(),
            params,
            episode_seed,
            records: Mutex::new(Vec::new()),
            last_context: Mutex::new(None),
        })
    }

    pub fn into_records(self) -> Vec<TokenRecord> {
        self.records.into_inner().expect("record lock poisoned")
    }

    fn featurize(&self, prompt: &str) -> Array1<f64> {
        featurize(
            prompt,
            self.mode_index,
            self.num_languages,
            &self.example.gold_aliases,
        )
    }

    fn sample_and_record(&self, prompt: &str, state: Array1<f64>) -> usize {
        let mixed = derive_seed(self.episode_seed, fnv1a64(prompt.as_bytes()), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        let token = sample_token(self.params, &state, &mut rng);
        let lp = log_probs(self.params, &state)[token];
        self.records
            .lock()
            .expect("record lock poisoned")
            .push(TokenRecord {
                state,
                token,
                behavior_log_prob: lp,
                masked: false,
            });
        token
    }

    fn record_observation(&self, prompt: &str) {
        let state = self.featurize(prompt);
        let lp = log_probs(self.params, &state)[TOKEN_OBSERVE];
        self.records
            .lock()
            .expect("record lock poisoned")
            .push(TokenRecord {
                state,
                token: TOKEN_OBSERVE,
                behavior_log_prob: lp,
                masked: true,
            });
    }

    fn render(&self, token: usize, prompt: &str) -> String {
        match token {
            TOKEN_SEARCH => format!("<search>{}</search>", self.query),
            TOKEN_ANSWER_FIRST | TOKEN_ANSWER_SECOND | TOKEN_ANSWER_THIRD => {
                let entries = last_information_entries(prompt);
                let candidate = entries
                    .get(token - TOKEN_ANSWER_FIRST)
                    .and_then(|e| trailing_token(e))
                    .unwrap_or("unknown")
                    .to_string();
                format!("<answer>{candidate}</answer>")
            }
            TOKEN_ANSWER_UNKNOWN => "<answer>unknown</answer>".to_string(),
            TOKEN_ANSWER_QUESTION => format!("<answer>{}</answer>", self.example.question),
            _ => "<think>weighing the evidence</think>".to_string(),
        }
    }
}

impl Generator for PolicyBackend<'_> {
    fn generate(&self, req: &GeneratorRequest) -> Result<String, BackendError> {
        let prompt = &req.prompt;
        if is_reconstruction_prompt(prompt) {
            let state = self.featurize(prompt);
            self.sample_and_record(prompt, state);
            let numbered: Vec<String> = translated_section_texts(prompt)
                .iter()
                .enumerate()
                .map(|(i, line)| format!("{}. {}", i + 1, line))
                .collect();
            let raw = format!("<think>\n{}\n</think>", numbered.join("\n"));
            return Ok(apply_generation_limits(&raw, req));
        }

        {
            let last = self.last_context.lock().expect("context lock poisoned");
            if let Some(prev) = last.as_ref() {
                if prompt.len() > prev.len() && prompt.starts_with(prev.as_str()) {
                    self.record_observation(prompt);
                }
            }
        }
        let state = self.featurize(prompt);
        let token = self.sample_and_record(prompt, state);
        let raw = self.render(token, prompt);
        *self.last_context.lock().expect("context lock poisoned") = Some(format!("{prompt}{raw}"));
        Ok(apply_generation_limits(&raw, req))
    }
}

/// [`RolloutEnv`] over the synthetic environment: one rollout is one
/// retrieval-loop episode driven by the policy under the requested
/// thinking mode.
pub struct SyntheticRolloutEnv {
    env: SyntheticEnv,
    template: LoopConfig,
}

impl SyntheticRolloutEnv {
    pub fn new(env: SyntheticEnv) -> Self {
        let mut template = LoopConfig::new(&env.plan.fallback_lang);
        template.fallback_lang = env.plan.fallback_lang.clone();
        SyntheticRolloutEnv { env, template }
    }

    pub fn env(&self) -> &SyntheticEnv {
        &self.env
    }

    pub fn into_env(self) -> SyntheticEnv {
        self.env
    }
}

impl RolloutEnv for SyntheticRolloutEnv {
    fn num_queries(&self) -> usize {
        self.env.dataset.len()
    }

    fn collect(
        &self,
        query: usize,
        mode: &str,
        policy: &PolicyParameters,
        seed: u64,
        reward_kind: RewardKind,
    ) -> Result<Rollout, TrainError> {
        let example = self
            .env
            .dataset
            .get(query)
            .ok_or_else(|| TrainError::Env(format!("query index {query} out of range")))?;
        let resolved = if mode == NATIVE_MODE {
            example.lang.clone()
        } else {
            mode.to_string()
        };
        let backend = PolicyBackend::new(example, &self.env.plan, &resolved, policy, seed)?;
        let mut config = self.template.clone();
        config.query_lang = example.lang.clone();
        config.thinking_mode = Some(resolved.clone());
        let result = run_episode(
            &example.question,
            &config,
            &self.env.registry,
            &backend,
            &self.env.translator,
        )
        .map_err(|e| TrainError::Env(e.to_string()))?;
        let reward = match reward_kind {
            RewardKind::C3Recall => outcome_reward(&result.trajectory, &example.gold_aliases)
                .map_err(|e| TrainError::Env(e.to_string()))?,
            RewardKind::ExactMatch => {
                fem(&result.answer.unwrap_or_default(), &example.gold_aliases)
                    .map_err(|e| TrainError::Env(e.to_string()))?
            }
        };
        Ok(Rollout {
            mode: resolved,
            records: backend.into_records(),
            reward,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_HIDDEN_DIM;
    use crate::trainer::{train, CLPOConfig};
    use ndarray::Array2;

    fn default_env() -> SyntheticEnv {
        build_synthetic_env(&SyntheticSpec::default()).unwrap()
    }

    /// A handcrafted near-deterministic policy: search until the answer
    /// is visible in the context, then answer with the first candidate.
    fn expert_params(num_languages: usize) -> PolicyParameters {
        let f = feature_dim(num_languages);
        let mut embedding = Array2::zeros((f, 3));
        embedding[(FEATURE_BIAS, 0)] = 20.0;
        embedding[(FEATURE_INFO, 1)] = 20.0;
        embedding[(FEATURE_ANSWER_PRESENT, 2)] = 20.0;
        let mut output = Array2::zeros((3, VOCAB_SIZE));
        output[(0, TOKEN_SEARCH)] = 12.0;
        output[(2, TOKEN_SEARCH)] = -24.0;
        output[(2, TOKEN_ANSWER_FIRST)] = 12.0;
        PolicyParameters {
            embedding,
            output,
            seed: 0,
        }
    }

    #[test]
    fn test_build_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = build_synthetic_env(&spec).unwrap();
        let b = build_synthetic_env(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        for lang in a.registry.languages() {
            let da = a.registry.operator(&lang).unwrap();
            let db = b.registry.operator(&lang).unwrap();
            assert_eq!(da.docs(), db.docs());
        }
        let other = build_synthetic_env(&SyntheticSpec {
            seed: 14,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let da = a.registry.operator("en").unwrap();
        let db = other.registry.operator("en").unwrap();
        assert_ne!(da.docs(), db.docs());
    }

    #[test]
    fn test_collection_sizes_and_composition() {
        let env = default_env();
        assert_eq!(env.dataset.len(), 16);
        for lang in env.registry.languages() {
            let n = env.registry.operator(&lang).unwrap().len();
            assert!((3..=10).contains(&n), "{lang} has {n} docs");
        }
        // Half the questions are cross-planted, half of those coded.
        assert_eq!(env.plan.cross_ids.len(), 8);
        assert_eq!(env.plan.coded_ids.len(), 4);
    }

    #[test]
    fn test_cross_questions_have_no_native_evidence() {
        let env = default_env();
        for ex in &env.dataset {
            if !env.plan.cross_ids.contains(&ex.id) {
                continue;
            }
            let native = env.registry.operator(&ex.lang).unwrap();
            for doc in native.docs() {
                for alias in &ex.gold_aliases {
                    assert!(
                        !doc.text.split_whitespace().any(|t| t == alias),
                        "{} leaked into its native collection",
                        ex.id
                    );
                }
            }
        }
    }

    #[test]
    fn test_coded_questions_need_matching_mode() {
        let env = default_env();
        let ex = env.dataset.iter().find(|e| e.id == "fr-3").unwrap();
        let forms = &env.plan.query_forms[&ex.id];
        // The English form hits the English collection, first-ranked.
        let en_hits = env
            .registry
            .operator("en")
            .unwrap()
            .search(&forms["en"], 3)
            .unwrap();
        assert!(en_hits[0].doc.id.starts_with("d-fr-3"));
        // The native (French) form finds nothing anywhere.
        for lang in env.registry.languages() {
            let hits = env
                .registry
                .operator(&lang)
                .unwrap()
                .search(&forms["fr"], 3)
                .unwrap();
            assert!(hits.is_empty(), "{lang} unexpectedly matched the fr form");
        }
    }

    #[test]
    fn test_lexicons_map_coded_tokens() {
        let env = default_env();
        use crate::backends::{translate_with, TranslationRequest};
        let out = translate_with(
            &env.translator,
            &TranslationRequest {
                text: "topicfr3en holds replyfrq3xen".to_string(),
                source_lang: "en".to_string(),
                target_lang: "fr".to_string(),
            },
        )
        .unwrap();
        assert_eq!(out, "topicfr3fr holds replyfrq3xfr");
    }

    #[test]
    fn test_question_echo_earns_nothing() {
        use crate::metrics::best_c3_recall;
        let env = default_env();
        for ex in &env.dataset {
            let echo = best_c3_recall(&ex.question, &ex.gold_aliases).unwrap();
            assert_eq!(echo, 0.0, "question {} leaks reward to an echo", ex.id);
            assert_eq!(fem(&ex.question, &ex.gold_aliases).unwrap(), 0.0);
        }
    }

    #[test]
    fn test_featurize_layout() {
        let golds = vec!["replyenq0xen".to_string()];
        let f = featurize("Question: asken topicen0 valueen\n", 2, 4, &golds);
        assert_eq!(f.len(), 7);
        assert_eq!(f[FEATURE_BIAS], 1.0);
        assert_eq!(f[FEATURE_INFO], 0.0);
        assert_eq!(f[FEATURE_ANSWER_PRESENT], 0.0);
        assert_eq!(f[FEATURE_MODE_BASE + 2], 1.0);
        let prompt = "x<information>Doc 1 (t): replyenq0xen</information>";
        let f = featurize(prompt, 0, 4, &golds);
        assert_eq!(f[FEATURE_INFO], 0.25);
        assert_eq!(f[FEATURE_ANSWER_PRESENT], 1.0);
    }

    fn run_expert(env: &SyntheticRolloutEnv, id: &str, mode: &str, seed: u64) -> Rollout {
        let idx = env.env().dataset.iter().position(|e| e.id == id).unwrap();
        let params = expert_params(env.env().plan.languages.len());
        env.collect(idx, mode, &params, seed, RewardKind::C3Recall)
            .unwrap()
    }

    #[test]
    fn test_expert_policy_solves_native_question() {
        let env = SyntheticRolloutEnv::new(default_env());
        let rollout = run_expert(&env, "en-0", "en", 101);
        assert_eq!(rollout.reward, 1.0);
        assert!(rollout.records.iter().any(|r| !r.masked));
    }

    #[test]
    fn test_expert_policy_solves_invariant_cross_in_any_mode() {
        let env = SyntheticRolloutEnv::new(default_env());
        for (mode, seed) in [("fr", 201u64), ("en", 202), ("th", 203)] {
            let rollout = run_expert(&env, "fr-2", mode, seed);
            assert_eq!(rollout.reward, 1.0, "mode {mode} failed");
        }
    }

    #[test]
    fn test_expert_policy_coded_cross_needs_foreign_mode() {
        let env = SyntheticRolloutEnv::new(default_env());
        let foreign = run_expert(&env, "fr-3", "en", 301);
        assert_eq!(foreign.reward, 1.0);
        let native = run_expert(&env, "fr-3", "fr", 302);
        assert_eq!(native.reward, 0.0);
    }

    #[test]
    fn test_native_mode_sentinel_resolves_to_query_language() {
        let env = SyntheticRolloutEnv::new(default_env());
        let rollout = run_expert(&env, "th-0", NATIVE_MODE, 401);
        assert_eq!(rollout.mode, "th");
        assert_eq!(rollout.reward, 1.0);
    }

    #[test]
    fn test_rollouts_are_seed_deterministic() {
        let env = SyntheticRolloutEnv::new(default_env());
        let params = PolicyParameters::init(7, feature_dim(4), DEFAULT_HIDDEN_DIM, VOCAB_SIZE);
        let a = env
            .collect(5, "en", &params, 99, RewardKind::C3Recall)
            .unwrap();
        let b = env
            .collect(5, "en", &params, 99, RewardKind::C3Recall)
            .unwrap();
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.token, rb.token);
            assert_eq!(ra.state, rb.state);
            assert_eq!(ra.behavior_log_prob, rb.behavior_log_prob);
            assert_eq!(ra.masked, rb.masked);
        }
    }

    #[test]
    fn test_observations_recorded_masked_after_search() {
        let env = SyntheticRolloutEnv::new(default_env());
        let rollout = run_expert(&env, "en-0", "en", 501);
        let masked: Vec<&TokenRecord> = rollout.records.iter().filter(|r| r.masked).collect();
        assert!(!masked.is_empty());
        assert!(masked.iter().all(|r| r.token == TOKEN_OBSERVE));
        // Stored behavior log-probs match the collection-time policy.
        let params = expert_params(4);
        for r in &rollout.records {
            let lp = log_probs(&params, &r.state)[r.token];
            assert!((lp - r.behavior_log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn test_learning_improves_reward() {
        let env = SyntheticRolloutEnv::new(default_env());
        let mut config = CLPOConfig::default();
        config.thinking_modes = vec!["en".into(), "fr".into(), "th".into(), "ar".into()];
        config.updates = 250;
        config.seed = 7;
        config.learning_rate = 1.0;
        let initial = PolicyParameters::init(7, feature_dim(4), DEFAULT_HIDDEN_DIM, VOCAB_SIZE);
        let outcome = train(&env, initial, &config).unwrap();
        let records = &outcome.log.records;
        let head: f64 = records[..50].iter().map(|r| r.mean_reward).sum::<f64>() / 50.0;
        let tail: f64 = records[200..].iter().map(|r| r.mean_reward).sum::<f64>() / 50.0;
        assert!(
            tail > head + 0.3 && tail > 0.5,
            "no learning progress: head {head}, tail {tail}"
        );
    }
}
