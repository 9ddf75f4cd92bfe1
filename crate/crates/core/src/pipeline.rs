//! End-to-end commands: build stimulus datasets, score deltas against the
//! configured backends, run the analyses, and emit figures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    accuracy_table, alignment_matrix, classify_outcome, correctness_regression,
    disagreement_filter, gold_option1, introspection_regression, method_kappa,
    self_effect_regression, size_regression, AccuracyRow, AlignmentMatrix, DeltaTable, KappaRow,
    Outcome, Verdict,
};
use crate::backend::{
    BackendSet, HttpBackend, NGramBackend, NGramModel, ReplayBackend, ScoreCache,
    subsample_corpus_lines,
};
use crate::config::{BackendKind, RunConfig};
use crate::deltas::{
    load_delta_records, plan_direct_pair, plan_direct_word, plan_meta, write_delta_records,
    DeltaRecord, ScorePlan,
};
use crate::error::{Error, Result};
use crate::prompting::{builtin_catalog, load_catalog, render, Experiment, PromptTemplate};
use crate::registry::{load_registry, Registry};
use crate::report::{
    alignment_csv, alignment_rows, cells_from_rows, heatmap_svg, mean_r_lookup,
    model_display_order, parse_alignment_csv, relation_bars_svg,
};
use crate::stimuli::{
    complete_item, generate_nonsense, generate_randomseq, load_continuation_items,
    load_minimal_pairs, sample_prefix_items, write_continuation_items, ContinuationItem, Dataset,
    FrequencyLexicon, MinimalPairItem, StimulusItem,
};
use crate::{seeding, stats};

pub const VERDICT_SCHEMA: &str = include_str!("../schemas/verdict.schema.json");

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub dataset: Dataset,
    pub rng_seed: u64,
    pub requested_count: usize,
    pub emitted_count: usize,
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub untagged_tokens: Option<usize>,
    pub output: PathBuf,
}

/// Builds one word-prediction stimulus dataset and its provenance
/// manifest.
pub fn cmd_build(config: &RunConfig, dataset: Dataset) -> Result<BuildSummary> {
    let build = config
        .build
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [build] section".into()))?;
    let output = config
        .stimuli
        .dataset_path(dataset)
        .ok_or_else(|| {
            Error::Config(format!("config has no [stimuli] path for `{dataset}`"))
        })?
        .clone();
    let lexicon = FrequencyLexicon::load(&build.lexicon)?;
    let mut inputs = BTreeMap::new();
    inputs.insert(
        build.lexicon.display().to_string(),
        sha256_hex(&build.lexicon)?,
    );
    let seed = config.rng_seed;

    let mut untagged_tokens = None;
    let items: Vec<ContinuationItem> = match dataset {
        Dataset::Wikipedia | Dataset::News => {
            let corpus_path = match dataset {
                Dataset::Wikipedia => build.wikipedia_corpus.as_ref(),
                _ => build.news_corpus.as_ref(),
            }
            .ok_or_else(|| {
                Error::Config(format!("config has no corpus input for `{dataset}`"))
            })?;
            inputs.insert(corpus_path.display().to_string(), sha256_hex(corpus_path)?);
            let corpus =
                std::fs::read_to_string(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
            let prefixes = sample_prefix_items(&corpus, &lexicon, dataset, build.count, seed)?;
            prefixes
                .iter()
                .enumerate()
                .map(|(i, p)| complete_item(p, &lexicon, seeding::derive_seed(seed, i as u64)))
                .collect::<Result<Vec<_>>>()?
        }
        Dataset::Nonsense => {
            let news_path = config.stimuli.dataset_path(Dataset::News).ok_or_else(|| {
                Error::Config("building nonsense needs a [stimuli] news path".into())
            })?;
            if !news_path.exists() {
                return Err(Error::Config(format!(
                    "news stimulus file {} is missing; build news first",
                    news_path.display()
                )));
            }
            inputs.insert(news_path.display().to_string(), sha256_hex(news_path)?);
            let news = load_continuation_items(news_path)?;
            let (items, report) = generate_nonsense(&news, &lexicon, seed)?;
            untagged_tokens = Some(report.untagged_tokens);
            items
        }
        Dataset::Randomseq => generate_randomseq(&lexicon, build.count, seed)?,
    };

    write_file(&output, "")?; // ensure parent exists before the real write
    write_continuation_items(&output, &items)?;
    let summary = BuildSummary {
        dataset,
        rng_seed: seed,
        requested_count: build.count,
        emitted_count: items.len(),
        inputs,
        untagged_tokens,
        output: output.clone(),
    };
    let manifest_path = config.out_dir.join(format!("{dataset}.manifest.json"));
    write_file(
        &manifest_path,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        ),
    )?;
    Ok(summary)
}

/// Instantiates the configured backend bindings over a shared cache.
pub fn build_backends(config: &RunConfig) -> Result<BackendSet> {
    let cache = ScoreCache::open(&config.cache_dir()).map_err(Error::Backend)?;
    let mut set = BackendSet::new(cache);
    for (model_id, binding) in &config.backends {
        let backend: Box<dyn crate::backend::ScoreBackend> = match binding.kind {
            BackendKind::Http => {
                let endpoint = binding.endpoint.as_ref().expect("validated by config");
                Box::new(HttpBackend::new(endpoint.clone()).map_err(Error::Backend)?)
            }
            BackendKind::Ngram => {
                let artifact = binding.artifact.as_ref().expect("validated by config");
                let model = if artifact.extension().is_some_and(|e| e == "json") {
                    NGramModel::load(artifact).map_err(Error::Backend)?
                } else {
                    let corpus = std::fs::read_to_string(artifact)
                        .map_err(|e| Error::io(artifact, e))?;
                    let corpus = if binding.drop_fraction > 0.0 {
                        subsample_corpus_lines(
                            &corpus,
                            binding.drop_fraction,
                            binding.subsample_seed,
                        )
                    } else {
                        corpus
                    };
                    NGramModel::train(&corpus, binding.order, binding.alpha)
                        .map_err(Error::Backend)?
                };
                Box::new(NGramBackend::new(model))
            }
            BackendKind::Replay => Box::new(ReplayBackend),
        };
        set.bind(model_id.clone(), backend);
    }
    Ok(set)
}

fn catalog_for(config: &RunConfig, experiment: Experiment) -> Result<Vec<PromptTemplate>> {
    let catalog = match &config.prompts.catalog {
        Some(path) => load_catalog(path)?,
        None => builtin_catalog(experiment),
    };
    let selected: Vec<PromptTemplate> = catalog
        .into_iter()
        .filter(|t| t.experiment == experiment)
        .filter(|t| {
            config
                .prompts
                .include
                .as_ref()
                .map_or(true, |keep| keep.iter().any(|id| id == &t.id))
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no prompt templates selected for {}",
            experiment.name()
        )));
    }
    Ok(selected)
}

fn load_pairs(config: &RunConfig) -> Result<Vec<MinimalPairItem>> {
    let mut pairs = Vec::new();
    for file in &config.stimuli.minimal_pairs {
        pairs.extend(load_minimal_pairs(&file.path, file.source)?);
    }
    if pairs.is_empty() {
        return Err(Error::Config(
            "no minimal pair stimulus files configured".into(),
        ));
    }
    Ok(pairs)
}

fn load_word_datasets(config: &RunConfig) -> Result<BTreeMap<Dataset, Vec<ContinuationItem>>> {
    let mut datasets = BTreeMap::new();
    for dataset in Dataset::ALL {
        if let Some(path) = config.stimuli.dataset_path(dataset) {
            if path.exists() {
                datasets.insert(dataset, load_continuation_items(path)?);
            }
        }
    }
    if datasets.is_empty() {
        return Err(Error::Config(
            "no word-prediction stimulus files present; run `build` first".into(),
        ));
    }
    Ok(datasets)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub experiment: Experiment,
    pub models: usize,
    pub plans: usize,
    pub requests: usize,
    pub upstream_calls: usize,
    pub records_written: usize,
    pub failures_by_model: BTreeMap<String, usize>,
    pub output: PathBuf,
}

pub fn deltas_path(config: &RunConfig, experiment: Experiment) -> PathBuf {
    config
        .out_dir
        .join(format!("deltas_{}.jsonl", experiment.name()))
}

/// Scores every Direct and Meta delta for the experiment. Resumable: all
/// scores flow through the keyed cache, so a rerun issues no upstream
/// calls. Per-plan failures are collected and summarized, not fatal to
/// the rest of the batch.
pub fn cmd_score(config: &RunConfig, experiment: Experiment) -> Result<ScoreSummary> {
    let registry = load_registry(&config.registry)?;
    config.validate_bindings(&registry)?;
    let backends = build_backends(config)?;
    let catalog = catalog_for(config, experiment)?;

    let mut plans: Vec<ScorePlan> = Vec::new();
    match experiment {
        Experiment::Acceptability => {
            let pairs = load_pairs(config)?;
            for model in registry.cards() {
                for item in &pairs {
                    plans.push(plan_direct_pair(model, item));
                    let stimulus = StimulusItem::Pair(item.clone());
                    for template in &catalog {
                        let rendered = render(&stimulus, template)?;
                        plans.push(plan_meta(model, template, &rendered)?);
                    }
                }
            }
        }
        Experiment::WordPrediction => {
            let datasets = load_word_datasets(config)?;
            for model in registry.cards() {
                for items in datasets.values() {
                    for item in items {
                        plans.push(plan_direct_word(model, item));
                        let stimulus = StimulusItem::Continuation(item.clone());
                        for template in &catalog {
                            let rendered = render(&stimulus, template)?;
                            plans.push(plan_meta(model, template, &rendered)?);
                        }
                    }
                }
            }
        }
    }

    let mut requests = Vec::new();
    let mut spans = Vec::with_capacity(plans.len());
    for plan in &plans {
        let start = requests.len();
        requests.extend(plan.requests.iter().cloned());
        spans.push(start..requests.len());
    }
    eprintln!(
        "scoring {} requests over {} plans ({} models, {} templates)",
        requests.len(),
        plans.len(),
        registry.len(),
        catalog.len()
    );
    let responses = backends.batch_score(&requests, config.parallelism);

    let mut records: Vec<DeltaRecord> = Vec::with_capacity(plans.len());
    let mut failures_by_model: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_failure: Option<String> = None;
    for (plan, span) in plans.iter().zip(spans) {
        let mut logprobs = Vec::with_capacity(span.len());
        let mut failed = false;
        for i in span {
            match &responses[i] {
                Ok(resp) => logprobs.push(resp.logprob),
                Err(e) => {
                    failed = true;
                    *failures_by_model.entry(plan.model_id.clone()).or_insert(0) += 1;
                    if first_failure.is_none() {
                        first_failure = Some(e.to_string());
                    }
                    break;
                }
            }
        }
        if !failed {
            records.push(plan.assemble(&logprobs)?);
        }
    }

    let output = deltas_path(config, experiment);
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_delta_records(&output, &records)?;
    backends.flush_cache().map_err(Error::Backend)?;

    let failed_plans: usize = failures_by_model.values().sum();
    for (model, count) in &failures_by_model {
        eprintln!("  {model}: {count} failed plans");
    }
    eprintln!(
        "wrote {} delta records to {} ({} upstream calls)",
        records.len(),
        output.display(),
        backends.upstream_calls()
    );
    let summary = ScoreSummary {
        experiment,
        models: registry.len(),
        plans: records.len() + failed_plans,
        requests: requests.len(),
        upstream_calls: backends.upstream_calls(),
        records_written: records.len(),
        failures_by_model: failures_by_model.clone(),
        output,
    };
    if failed_plans > 0 {
        return Err(Error::ScoreFailures {
            failed: failed_plans,
            total: summary.plans,
            first: first_failure.unwrap_or_else(|| "unknown".into()),
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub no_filter: bool,
    pub filter_threshold: Option<f64>,
    pub alpha: Option<f64>,
    /// Restrict to models with at least this many billions of parameters.
    pub min_size: Option<f64>,
    pub per_prompt_votes: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub out_dir: PathBuf,
    pub verdicts: BTreeMap<String, Outcome>,
    pub filtered_items: BTreeMap<String, usize>,
}

struct DatasetAnalysis {
    label: String,
    matrix: AlignmentMatrix,
    verdict: Verdict,
    regressions: serde_json::Value,
    accuracy: Vec<AccuracyRow>,
    kappa: Vec<KappaRow>,
    filtered_items: usize,
}

fn regression_entry(result: Result<stats::RegressionResult>) -> serde_json::Value {
    match result {
        Ok(fit) => serde_json::to_value(&fit).expect("regression serializes"),
        Err(e) => serde_json::json!({ "error": e.to_string() }),
    }
}

/// The family to probe for a pure same-model effect: the one with the
/// most seed-grouped cards.
fn seed_rich_family(registry: &Registry) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for card in registry.cards() {
        if card.seed_group.is_some() {
            *counts.entry(card.family.as_str()).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, n)| *n >= 2)
        .max_by_key(|(family, n)| (*n, std::cmp::Reverse(family.to_string())))
        .map(|(family, _)| family.to_string())
}

fn analyze_dataset(
    label: &str,
    table: &DeltaTable,
    registry: &Registry,
    items: &BTreeSet<String>,
    gold: Option<&BTreeMap<String, crate::deltas::Choice>>,
    alpha: f64,
    filtered_items: usize,
) -> Result<DatasetAnalysis> {
    let matrix = alignment_matrix(table, registry, items, label)?;
    let introspection = introspection_regression(&matrix.cells)?;
    let verdict = classify_outcome(&introspection, alpha);

    let mut regressions = serde_json::Map::new();
    regressions.insert(
        "introspection".into(),
        serde_json::to_value(&introspection).expect("regression serializes"),
    );
    regressions.insert(
        "size".into(),
        regression_entry(size_regression(&matrix.cells, registry)),
    );
    if let Some(gold) = gold {
        regressions.insert(
            "correctness".into(),
            regression_entry(correctness_regression(table, gold, registry)),
        );
    }
    if let Some(family) = seed_rich_family(registry) {
        let family_cells: Vec<_> = matrix
            .cells
            .iter()
            .filter(|c| {
                registry.get(&c.meta_model).is_some_and(|m| m.family == family)
                    && registry
                        .get(&c.direct_model)
                        .is_some_and(|m| m.family == family)
            })
            .cloned()
            .collect();
        regressions.insert(
            "self_effect".into(),
            regression_entry(self_effect_regression(&family_cells)),
        );
    }

    let accuracy = match gold {
        Some(gold) => accuracy_table(table, gold)?,
        None => Vec::new(),
    };
    let kappa = method_kappa(&table.restrict_items(items))?;

    Ok(DatasetAnalysis {
        label: label.to_string(),
        matrix,
        verdict,
        regressions: serde_json::Value::Object(regressions),
        accuracy,
        kappa,
        filtered_items,
    })
}

/// Runs the full analysis for one experiment and writes alignment.csv,
/// kappa.csv, accuracy.csv, regressions.json and verdict.json.
pub fn cmd_analyze(
    config: &RunConfig,
    experiment: Experiment,
    options: &AnalyzeOptions,
) -> Result<AnalyzeSummary> {
    let registry = load_registry(&config.registry)?;
    let records = load_delta_records(&deltas_path(config, experiment))?;
    let mut table = DeltaTable::from_records(&records)?;
    let alpha = options.alpha.unwrap_or(config.alpha);
    let threshold = options.filter_threshold.unwrap_or(config.filter_threshold);

    if let Some(min_size) = options.min_size {
        let keep: BTreeSet<String> = registry
            .cards()
            .iter()
            .filter(|c| c.size_params >= min_size)
            .map(|c| c.id.clone())
            .collect();
        table = table.restrict_models(&keep);
        if table.models().len() < 2 {
            return Err(Error::Analysis(format!(
                "fewer than 2 models at least {min_size}B in size"
            )));
        }
    }

    let mut analyses: Vec<DatasetAnalysis> = Vec::new();
    match experiment {
        Experiment::Acceptability => {
            let pairs = load_pairs(config)?;
            let pair_ids: BTreeSet<String> = pairs.iter().map(|p| p.id.clone()).collect();
            let all_items: BTreeSet<String> = table
                .common_items()
                .intersection(&pair_ids)
                .cloned()
                .collect();
            let table = table.restrict_items(&all_items);
            let (label, items) = if options.no_filter {
                ("exp1_unfiltered".to_string(), all_items.clone())
            } else {
                let kept = disagreement_filter(&table, threshold, options.per_prompt_votes);
                eprintln!(
                    "disagreement filter kept {} of {} items",
                    kept.len(),
                    all_items.len()
                );
                ("exp1_filtered".to_string(), kept)
            };
            let gold = gold_option1(all_items.iter().map(|s| s.as_str()));
            analyses.push(analyze_dataset(
                &label,
                &table,
                &registry,
                &items,
                Some(&gold),
                alpha,
                items.len(),
            )?);
        }
        Experiment::WordPrediction => {
            let datasets = load_word_datasets(config)?;
            for (dataset, items) in &datasets {
                let ids: BTreeSet<String> = items.iter().map(|i| i.id.clone()).collect();
                let subset = table.restrict_items(&ids);
                let present: BTreeSet<String> = subset
                    .common_items()
                    .intersection(&ids)
                    .cloned()
                    .collect();
                if present.is_empty() {
                    continue;
                }
                let gold = dataset
                    .has_gold()
                    .then(|| gold_option1(present.iter().map(|s| s.as_str())));
                analyses.push(analyze_dataset(
                    dataset.name(),
                    &subset,
                    &registry,
                    &present,
                    gold.as_ref(),
                    alpha,
                    present.len(),
                )?);
            }
            if analyses.is_empty() {
                return Err(Error::IncompleteScores(
                    "no scored word-prediction datasets found".into(),
                ));
            }
        }
    }

    let out_dir = options
        .out
        .clone()
        .unwrap_or_else(|| config.out_dir.join("analysis"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut all_rows = Vec::new();
    let mut regressions = serde_json::Map::new();
    let mut verdicts = serde_json::Map::new();
    let mut verdict_outcomes = BTreeMap::new();
    let mut filtered_items = BTreeMap::new();
    let mut kappa_csv = String::from("dataset,model,prompt_id,kappa,degenerate\n");
    let mut accuracy_csv =
        String::from("dataset,model,method,prompt_id,n_scored,n_correct,n_ties,accuracy\n");
    for analysis in &analyses {
        all_rows.extend(alignment_rows(&analysis.matrix));
        regressions.insert(analysis.label.clone(), analysis.regressions.clone());
        verdicts.insert(
            analysis.label.clone(),
            serde_json::to_value(&analysis.verdict).expect("verdict serializes"),
        );
        verdict_outcomes.insert(analysis.label.clone(), analysis.verdict.outcome);
        filtered_items.insert(analysis.label.clone(), analysis.filtered_items);
        for row in &analysis.kappa {
            kappa_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                analysis.label,
                row.model,
                row.prompt_id,
                stats::fmt_float(row.kappa),
                row.degenerate
            ));
        }
        for row in &analysis.accuracy {
            accuracy_csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                analysis.label,
                row.model,
                row.method.name(),
                row.prompt_id.as_deref().unwrap_or("-"),
                row.n_scored,
                row.n_correct,
                row.n_ties,
                stats::fmt_float(row.accuracy)
            ));
        }
    }

    write_file(&out_dir.join("alignment.csv"), &alignment_csv(&all_rows))?;
    write_file(&out_dir.join("kappa.csv"), &kappa_csv)?;
    write_file(&out_dir.join("accuracy.csv"), &accuracy_csv)?;
    write_file(
        &out_dir.join("regressions.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::Value::Object(regressions))
                .expect("regressions serialize")
        ),
    )?;
    write_file(
        &out_dir.join("verdict.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::Value::Object(verdicts))
                .expect("verdicts serialize")
        ),
    )?;

    for analysis in &analyses {
        eprintln!(
            "{}: verdict {}",
            analysis.label,
            analysis.verdict.outcome.name()
        );
    }
    Ok(AnalyzeSummary {
        out_dir,
        verdicts: verdict_outcomes,
        filtered_items,
    })
}

/// Renders SVG figures from an analysis directory's alignment.csv.
pub fn cmd_report(
    config: &RunConfig,
    analysis_dir: &Path,
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let registry = load_registry(&config.registry)?;
    let csv_path = analysis_dir.join("alignment.csv");
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let rows = parse_alignment_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::Analysis(format!(
            "{} has no alignment rows",
            csv_path.display()
        )));
    }
    let out_dir = out_dir.unwrap_or(analysis_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let datasets: BTreeSet<String> = rows.iter().map(|r| r.dataset.clone()).collect();
    let mut written = Vec::new();
    for dataset in datasets {
        let lookup = mean_r_lookup(&rows, &dataset);
        let models: BTreeSet<String> = lookup
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect();
        let order = model_display_order(&registry, &models.into_iter().collect::<Vec<_>>());
        let heatmap = heatmap_svg(&dataset, &order, &lookup)?;
        let heatmap_path = out_dir.join(format!("heatmap_{dataset}.svg"));
        write_file(&heatmap_path, &heatmap)?;
        written.push(heatmap_path);

        let cells = cells_from_rows(&rows, &dataset);
        let bars = relation_bars_svg(&dataset, &cells)?;
        let bars_path = out_dir.join(format!("relations_{dataset}.svg"));
        write_file(&bars_path, &bars)?;
        written.push(bars_path);
    }
    Ok(written)
}

/// The built-in catalog as JSON, for `catalog export`.
pub fn export_catalog(experiment: Experiment) -> String {
    crate::prompting::catalog_to_json(&builtin_catalog(experiment))
}

/// Loads and validates a registry file, returning the card count.
pub fn validate_registry_file(path: &Path) -> Result<usize> {
    Ok(load_registry(path)?.len())
}
