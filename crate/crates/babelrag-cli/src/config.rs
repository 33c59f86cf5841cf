//! TOML run configuration: registry corpora, loop knobs, training
//! hyperparameters, backend wiring, the synthetic-environment spec and
//! evaluation inputs. Unknown keys are rejected and every referenced
//! path is checked at load time; relative paths resolve against the
//! config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use babelrag::backends::{DictionaryTranslator, Generator, ScriptedGenerator, Translator};
use babelrag::episode::LoopConfig;
use babelrag::index::{load_corpus_jsonl, Collection, CollectionRegistry, TokenizerMode};
use babelrag::synth::SyntheticSpec;
use babelrag::trainer::{CLPOConfig, RewardKind, NATIVE_MODE};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub registry: RegistrySection,
    #[serde(rename = "loop")]
    pub episode: LoopSection,
    pub clpo: ClpoSection,
    pub policy: PolicySection,
    pub backends: BackendsSection,
    pub env: EnvSection,
    pub eval: EvalSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrySection {
    pub fallback_lang: String,
    pub collections: Vec<CollectionEntry>,
}

impl Default for RegistrySection {
    fn default() -> Self {
        RegistrySection {
            fallback_lang: "en".to_string(),
            collections: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionEntry {
    pub lang: String,
    pub path: PathBuf,
    #[serde(default)]
    pub mode: TokenizerMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopSection {
    pub max_budget: usize,
    pub top_k: usize,
    pub thinking_mode: Option<String>,
    pub max_self_corrections: usize,
    pub max_new_chars: usize,
}

impl Default for LoopSection {
    fn default() -> Self {
        let template = LoopConfig::new("");
        LoopSection {
            max_budget: template.max_budget,
            top_k: template.top_k,
            thinking_mode: None,
            max_self_corrections: template.max_self_corrections,
            max_new_chars: template.max_new_chars,
        }
    }
}

impl LoopSection {
    pub fn to_loop_config(&self, query_lang: &str, fallback_lang: &str) -> LoopConfig {
        let mut config = LoopConfig::new(query_lang);
        config.fallback_lang = fallback_lang.to_string();
        config.max_budget = self.max_budget;
        config.top_k = self.top_k;
        config.thinking_mode = self.thinking_mode.clone();
        config.max_self_corrections = self.max_self_corrections;
        config.max_new_chars = self.max_new_chars;
        config
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClpoSection {
    pub group_size: usize,
    pub clip_delta: f64,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub advantage_epsilon: f64,
    pub updates: usize,
    pub thinking_modes: Vec<String>,
    pub seed: u64,
    pub reward_kind: RewardKind,
}

impl Default for ClpoSection {
    fn default() -> Self {
        let template = CLPOConfig::default();
        ClpoSection {
            group_size: template.group_size,
            clip_delta: template.clip_delta,
            kl_coefficient: template.kl_coefficient,
            learning_rate: template.learning_rate,
            advantage_epsilon: template.advantage_epsilon,
            updates: template.updates,
            thinking_modes: vec![NATIVE_MODE.to_string()],
            seed: template.seed,
            reward_kind: template.reward_kind,
        }
    }
}

impl ClpoSection {
    pub fn to_clpo_config(&self) -> CLPOConfig {
        let mut config = CLPOConfig::default();
        config.group_size = self.group_size;
        config.clip_delta = self.clip_delta;
        config.kl_coefficient = self.kl_coefficient;
        config.learning_rate = self.learning_rate;
        config.advantage_epsilon = self.advantage_epsilon;
        config.updates = self.updates;
        config.thinking_modes = self.thinking_modes.clone();
        config.seed = self.seed;
        config.reward_kind = self.reward_kind;
        config
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub hidden_dim: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden_dim: babelrag::policy::DEFAULT_HIDDEN_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    #[serde(alias = "mock")]
    Scripted,
    Http,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsSection {
    pub kind: BackendKind,
    pub scenario: Option<PathBuf>,
    pub generate_url: Option<String>,
    pub translate_url: Option<String>,
    pub bearer: Option<String>,
    pub lexicons: Vec<LexiconEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub source: String,
    pub target: String,
    pub path: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub languages: Vec<String>,
    pub questions_per_lang: usize,
    pub fillers_per_lang: usize,
    pub seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        EnvSection {
            languages: spec.languages,
            questions_per_lang: spec.questions_per_lang,
            fillers_per_lang: spec.fillers_per_lang,
            seed: spec.seed,
        }
    }
}

impl EnvSection {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            languages: self.languages.clone(),
            questions_per_lang: self.questions_per_lang,
            fillers_per_lang: self.fillers_per_lang,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub dataset: Option<PathBuf>,
    pub seed: u64,
}

/// Load, resolve and validate a config file.
pub fn load_config(path: &Path) -> Result<ConfigFile, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let mut config: ConfigFile = toml::from_str(&raw)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for entry in &mut config.registry.collections {
        entry.path = resolve(base, &entry.path)?;
    }
    if let Some(scenario) = &config.backends.scenario {
        config.backends.scenario = Some(resolve(base, scenario)?);
    }
    for lexicon in &mut config.backends.lexicons {
        lexicon.path = resolve(base, &lexicon.path)?;
    }
    if let Some(dataset) = &config.eval.dataset {
        config.eval.dataset = Some(resolve(base, dataset)?);
    }
    Ok(config)
}

fn resolve(base: &Path, path: &Path) -> Result<PathBuf, CliError> {
    let full = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    };
    if !full.exists() {
        return Err(CliError::Config(format!(
            "referenced path does not exist: {}",
            full.display()
        )));
    }
    Ok(full)
}

/// Build the search registry from the `[registry]` section.
pub fn build_registry(config: &ConfigFile) -> Result<CollectionRegistry, CliError> {
    if config.registry.collections.is_empty() {
        return Err(CliError::Config(
            "[registry] lists no collections".to_string(),
        ));
    }
    let mut registry = CollectionRegistry::new();
    for entry in &config.registry.collections {
        let docs = load_corpus_jsonl(&entry.path)
            .map_err(|e| CliError::Config(format!("corpus {}: {e}", entry.path.display())))?;
        let collection = Collection::build(&entry.lang, docs, entry.mode)
            .map_err(|e| CliError::Config(format!("corpus {}: {e}", entry.path.display())))?;
        registry
            .register(collection)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if !registry.contains(&config.registry.fallback_lang) {
        return Err(CliError::Config(format!(
            "fallback language {:?} has no registered collection",
            config.registry.fallback_lang
        )));
    }
    Ok(registry)
}

/// Instantiate the generation and translation backends from
/// `[backends]`.
pub fn build_backends(
    config: &ConfigFile,
) -> Result<(Box<dyn Generator>, Box<dyn Translator>), CliError> {
    match config.backends.kind {
        BackendKind::Scripted => {
            let scenario = config.backends.scenario.as_ref().ok_or_else(|| {
                CliError::Config("[backends] kind \"scripted\" needs a scenario path".to_string())
            })?;
            let generator = ScriptedGenerator::from_jsonl(scenario)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let mut translator = DictionaryTranslator::new();
            for lexicon in &config.backends.lexicons {
                translator
                    .add_lexicon_tsv(&lexicon.source, &lexicon.target, &lexicon.path)
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            Ok((Box::new(generator), Box::new(translator)))
        }
        BackendKind::Http => {
            let generate_url = config.backends.generate_url.as_ref().ok_or_else(|| {
                CliError::Config("[backends] kind \"http\" needs generate_url".to_string())
            })?;
            let translate_url = config.backends.translate_url.as_ref().ok_or_else(|| {
                CliError::Config("[backends] kind \"http\" needs translate_url".to_string())
            })?;
            let generator = babelrag::backends::HttpGenerator::new(
                generate_url,
                config.backends.bearer.clone(),
            )
            .map_err(|e| CliError::Backend(e.to_string()))?;
            let translator = babelrag::backends::HttpTranslator::new(
                translate_url,
                config.backends.bearer.clone(),
            )
            .map_err(|e| CliError::Backend(e.to_string()))?;
            Ok((Box::new(generator), Box::new(translator)))
        }
    }
}
