//! Command implementations. Each one is a thin adapter: load the
//! config, call the library, serialize its output exactly as the
//! library renders it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use babelrag::episode::{run_episode, trace_jsonl, TerminationReason};
use babelrag::harness::{ablation_matrix, evaluate, load_dataset, EvidenceBackend};
use babelrag::index::{load_corpus_jsonl, Collection, Document, TokenizerMode};
use babelrag::policy::{save_checkpoint, PolicyParameters};
use babelrag::synth::{build_synthetic_env, feature_dim, SyntheticRolloutEnv, VOCAB_SIZE};
use babelrag::trainer::{train, TrainError};

use crate::config::{build_backends, build_registry, load_config};
use crate::CliError;

pub fn cmd_index(corpus: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut by_lang: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for path in corpus {
        let docs = load_corpus_jsonl(path)
            .map_err(|e| CliError::Config(format!("corpus {}: {e}", path.display())))?;
        for doc in docs {
            by_lang.entry(doc.lang.clone()).or_default().push(doc);
        }
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (lang, docs) in by_lang {
        let collection = Collection::build(&lang, docs, TokenizerMode::Words)
            .map_err(|e| CliError::Config(e.to_string()))?;
        counts.insert(lang.clone(), collection.len());
        println!("{lang}: {} documents", collection.len());
    }
    if let Some(out) = out {
        let summary = serde_json::to_string_pretty(&counts).expect("count map serializes") + "\n";
        std::fs::write(out, summary)
            .map_err(|e| CliError::Config(format!("write {}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn cmd_run(
    config_path: &Path,
    question: &str,
    lang: &str,
    trace: bool,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let registry = build_registry(&config)?;
    if !registry.contains(lang) {
        return Err(CliError::Config(format!(
            "unknown language {lang:?}: no registered collection"
        )));
    }
    let (generator, translator) = build_backends(&config)?;
    let loop_config = config
        .episode
        .to_loop_config(lang, &config.registry.fallback_lang);
    let result = run_episode(question, &loop_config, &registry, &*generator, &*translator)
        .map_err(|e| match e {
            babelrag::episode::EpisodeError::Backend(err) => CliError::Backend(err.to_string()),
            other => CliError::Config(other.to_string()),
        })?;
    if trace {
        print!("{}", trace_jsonl(&result));
    }
    match &result.answer {
        Some(answer) => {
            println!("{answer}");
            Ok(())
        }
        None => {
            debug_assert_eq!(result.terminated_by, TerminationReason::BudgetExhausted);
            Err(CliError::NoAnswer)
        }
    }
}

pub fn cmd_train(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    updates: Option<usize>,
    learning_rate: Option<f64>,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let mut clpo = config.clpo.to_clpo_config();
    if let Some(seed) = seed {
        clpo.seed = seed;
    }
    if let Some(updates) = updates {
        clpo.updates = updates;
    }
    if let Some(learning_rate) = learning_rate {
        clpo.learning_rate = learning_rate;
    }
    let spec = config.env.to_spec();
    let env = build_synthetic_env(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let num_languages = env.plan.languages.len();
    let rollout_env = SyntheticRolloutEnv::new(env);
    let initial = PolicyParameters::init(
        clpo.seed,
        feature_dim(num_languages),
        config.policy.hidden_dim,
        VOCAB_SIZE,
    );
    let outcome = train(&rollout_env, initial, &clpo).map_err(|e| match e {
        TrainError::NonFiniteLoss { .. } => CliError::NonFiniteLoss(e.to_string()),
        TrainError::Env(msg) => CliError::Backend(msg),
        other => CliError::Config(other.to_string()),
    })?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("out dir {}: {e}", out.display())))?;
    let log_path = out.join("train_log.csv");
    std::fs::write(&log_path, outcome.log.to_csv())
        .map_err(|e| CliError::Config(format!("write {}: {e}", log_path.display())))?;
    let checkpoint_path = out.join("policy.json");
    save_checkpoint(&outcome.params, &checkpoint_path)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let records = &outcome.log.records;
    let window = records.len().min(50);
    let final_mean = if window == 0 {
        0.0
    } else {
        records[records.len() - window..]
            .iter()
            .map(|r| r.mean_reward)
            .sum::<f64>()
            / window as f64
    };
    println!(
        "trained {} updates; mean reward over final {window}: {final_mean:.4}",
        records.len()
    );
    println!(
        "wrote {} and {}",
        log_path.display(),
        checkpoint_path.display()
    );
    Ok(())
}

pub fn cmd_eval(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let dataset_path = config
        .eval
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("[eval] needs a dataset path".to_string()))?;
    let dataset = load_dataset(dataset_path)
        .map_err(|e| CliError::Config(format!("dataset {}: {e}", dataset_path.display())))?;
    let registry = build_registry(&config)?;
    let (generator, translator) = build_backends(&config)?;
    let template = config.episode.to_loop_config(
        &config.registry.fallback_lang,
        &config.registry.fallback_lang,
    );
    let report = evaluate(
        &dataset,
        &registry,
        &template,
        &*generator,
        &*translator,
        seed.unwrap_or(config.eval.seed),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("out dir {}: {e}", out.display())))?;
    let csv_path = out.join("eval_report.csv");
    std::fs::write(&csv_path, report.to_csv())
        .map_err(|e| CliError::Config(format!("write {}: {e}", csv_path.display())))?;
    let json_path = out.join("eval_report.json");
    std::fs::write(&json_path, report.to_json())
        .map_err(|e| CliError::Config(format!("write {}: {e}", json_path.display())))?;

    println!(
        "evaluated {} examples: fem {:.4}, c3recall {:.4}, {} failed",
        report.examples.len(),
        report.overall_fem,
        report.overall_c3recall,
        report.failures
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

pub fn cmd_ablate(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let spec = config.env.to_spec();
    let env = build_synthetic_env(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    let template = config
        .episode
        .to_loop_config(&env.plan.fallback_lang, &env.plan.fallback_lang);
    let matrix = ablation_matrix(
        &env.dataset,
        &env.registry,
        &template,
        &EvidenceBackend,
        &env.translator,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("out dir {}: {e}", out.display())))?;
    let csv_path = out.join("ablation.csv");
    std::fs::write(&csv_path, matrix.to_csv())
        .map_err(|e| CliError::Config(format!("write {}: {e}", csv_path.display())))?;

    println!(
        "ablation matrix: {} query languages x {} removals",
        matrix.query_langs.len(),
        matrix.removed_langs.len()
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}
