//! Cross-model analyses over scored deltas: accuracy, Direct-vs-Meta
//! agreement, the disagreement filter, per-pair alignment correlations,
//! the similarity-controlled regressions, and the final verdict.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::deltas::{answer_from_delta, Choice, DeltaRecord, Method};
use crate::error::{Error, Result};
use crate::registry::{classify_relation, Registry, RelationCategory};
use crate::stats::{cohens_kappa, ols_fit, pearson_r, DesignMatrix, RegressionResult};
use crate::stimuli::Dataset;

/// Scored deltas arranged for analysis: one Direct delta per (model, item)
/// and one Meta delta per (model, prompt, item).
#[derive(Debug, Clone, Default)]
pub struct DeltaTable {
    direct: BTreeMap<String, BTreeMap<String, f64>>,
    meta: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

impl DeltaTable {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a DeltaRecord>) -> Result<Self> {
        let mut table = DeltaTable::default();
        for record in records {
            match record.method {
                Method::Direct => {
                    table
                        .direct
                        .entry(record.model_id.clone())
                        .or_default()
                        .insert(record.item_id.clone(), record.delta);
                }
                Method::Meta => {
                    let prompt = record.prompt_id.clone().ok_or_else(|| {
                        Error::IncompleteScores(format!(
                            "meta record for item `{}` lacks a prompt id",
                            record.item_id
                        ))
                    })?;
                    table
                        .meta
                        .entry(record.model_id.clone())
                        .or_default()
                        .entry(prompt)
                        .or_default()
                        .insert(record.item_id.clone(), record.delta);
                }
            }
        }
        Ok(table)
    }

    /// Assembles a table directly from delta vectors; used by synthetic
    /// fixtures and replay manipulations.
    pub fn from_parts(
        direct: BTreeMap<String, BTreeMap<String, f64>>,
        meta: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    ) -> Self {
        DeltaTable { direct, meta }
    }

    pub fn models(&self) -> Vec<String> {
        self.direct.keys().cloned().collect()
    }

    pub fn prompts(&self) -> BTreeSet<String> {
        self.meta
            .values()
            .flat_map(|by_prompt| by_prompt.keys().cloned())
            .collect()
    }

    /// Items scored under Direct by every model.
    pub fn common_items(&self) -> BTreeSet<String> {
        let mut models = self.direct.values();
        let Some(first) = models.next() else {
            return BTreeSet::new();
        };
        let mut items: BTreeSet<String> = first.keys().cloned().collect();
        for other in models {
            items.retain(|item| other.contains_key(item));
        }
        items
    }

    pub fn direct_delta(&self, model: &str, item: &str) -> Option<f64> {
        self.direct.get(model).and_then(|m| m.get(item)).copied()
    }

    pub fn meta_delta(&self, model: &str, prompt: &str, item: &str) -> Option<f64> {
        self.meta
            .get(model)
            .and_then(|m| m.get(prompt))
            .and_then(|m| m.get(item))
            .copied()
    }

    /// Restricts every method to `items`.
    pub fn restrict_items(&self, items: &BTreeSet<String>) -> DeltaTable {
        let keep = |m: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
            m.iter()
                .filter(|(k, _)| items.contains(*k))
                .map(|(k, v)| (k.clone(), *v))
                .collect()
        };
        DeltaTable {
            direct: self
                .direct
                .iter()
                .map(|(model, m)| (model.clone(), keep(m)))
                .collect(),
            meta: self
                .meta
                .iter()
                .map(|(model, by_prompt)| {
                    (
                        model.clone(),
                        by_prompt
                            .iter()
                            .map(|(prompt, m)| (prompt.clone(), keep(m)))
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn restrict_models(&self, keep: &BTreeSet<String>) -> DeltaTable {
        DeltaTable {
            direct: self
                .direct
                .iter()
                .filter(|(model, _)| keep.contains(*model))
                .map(|(model, m)| (model.clone(), m.clone()))
                .collect(),
            meta: self
                .meta
                .iter()
                .filter(|(model, _)| keep.contains(*model))
                .map(|(model, m)| (model.clone(), m.clone()))
                .collect(),
        }
    }

    fn direct_vector(&self, model: &str, items: &[&str]) -> Result<Vec<f64>> {
        let by_item = self
            .direct
            .get(model)
            .ok_or_else(|| Error::IncompleteScores(format!("no direct deltas for `{model}`")))?;
        items
            .iter()
            .map(|item| {
                by_item.get(*item).copied().ok_or_else(|| {
                    Error::IncompleteScores(format!(
                        "model `{model}` lacks a direct delta for item `{item}`"
                    ))
                })
            })
            .collect()
    }

    fn meta_vector(&self, model: &str, prompt: &str, items: &[&str]) -> Result<Vec<f64>> {
        let by_item = self
            .meta
            .get(model)
            .and_then(|m| m.get(prompt))
            .ok_or_else(|| {
                Error::IncompleteScores(format!(
                    "no meta deltas for `{model}` under prompt `{prompt}`"
                ))
            })?;
        items
            .iter()
            .map(|item| {
                by_item.get(*item).copied().ok_or_else(|| {
                    Error::IncompleteScores(format!(
                        "model `{model}` prompt `{prompt}` lacks item `{item}`"
                    ))
                })
            })
            .collect()
    }
}

/// Gold labels where they exist: option 1 is the designated answer for
/// minimal pairs and for the wikipedia/news continuations. The synthetic
/// datasets have no correct answer.
pub fn gold_for_dataset<'a>(
    dataset: Dataset,
    item_ids: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, Choice>> {
    if !dataset.has_gold() {
        return Err(Error::MissingGold(dataset.name().to_string()));
    }
    Ok(gold_option1(item_ids))
}

pub fn gold_option1<'a>(item_ids: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, Choice> {
    item_ids
        .into_iter()
        .map(|id| (id.to_string(), Choice::Option1))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyRow {
    pub model: String,
    pub method: Method,
    pub prompt_id: Option<String>,
    pub n_scored: usize,
    pub n_correct: usize,
    pub n_ties: usize,
    pub accuracy: f64,
}

fn accuracy_over<'a>(
    deltas: impl Iterator<Item = (&'a String, &'a f64)>,
    gold: &BTreeMap<String, Choice>,
) -> (usize, usize, usize) {
    let mut scored = 0;
    let mut correct = 0;
    let mut ties = 0;
    for (item, delta) in deltas {
        let Some(expected) = gold.get(item) else {
            continue;
        };
        let answer = answer_from_delta(*delta);
        if answer.tie {
            ties += 1;
            continue;
        }
        scored += 1;
        if answer.choice == *expected {
            correct += 1;
        }
    }
    (scored, correct, ties)
}

/// Fraction of non-tie answers matching gold, per (model, method, prompt).
/// Ties are reported separately and excluded from the denominator.
pub fn accuracy_table(
    table: &DeltaTable,
    gold: &BTreeMap<String, Choice>,
) -> Result<Vec<AccuracyRow>> {
    if gold.is_empty() {
        return Err(Error::MissingGold("empty gold label set".into()));
    }
    let mut rows = Vec::new();
    for (model, by_item) in &table.direct {
        let (n_scored, n_correct, n_ties) = accuracy_over(by_item.iter(), gold);
        rows.push(AccuracyRow {
            model: model.clone(),
            method: Method::Direct,
            prompt_id: None,
            n_scored,
            n_correct,
            n_ties,
            accuracy: if n_scored > 0 {
                n_correct as f64 / n_scored as f64
            } else {
                f64::NAN
            },
        });
    }
    for (model, by_prompt) in &table.meta {
        for (prompt, by_item) in by_prompt {
            let (n_scored, n_correct, n_ties) = accuracy_over(by_item.iter(), gold);
            rows.push(AccuracyRow {
                model: model.clone(),
                method: Method::Meta,
                prompt_id: Some(prompt.clone()),
                n_scored,
                n_correct,
                n_ties,
                accuracy: if n_scored > 0 {
                    n_correct as f64 / n_scored as f64
                } else {
                    f64::NAN
                },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaRow {
    pub model: String,
    pub prompt_id: String,
    pub kappa: f64,
    pub degenerate: bool,
}

/// Cohen's kappa between Direct and Meta answers, per (model, prompt).
/// Both methods must cover the same items.
pub fn method_kappa(table: &DeltaTable) -> Result<Vec<KappaRow>> {
    let mut rows = Vec::new();
    for (model, by_prompt) in &table.meta {
        let direct = table
            .direct
            .get(model)
            .ok_or_else(|| Error::IncompleteScores(format!("no direct deltas for `{model}`")))?;
        for (prompt, by_item) in by_prompt {
            if by_item.len() != direct.len() || !by_item.keys().all(|k| direct.contains_key(k)) {
                return Err(Error::ItemSetMismatch {
                    model: model.clone(),
                    direct: direct.len(),
                    meta: by_item.len(),
                });
            }
            let mut a = Vec::with_capacity(by_item.len());
            let mut b = Vec::with_capacity(by_item.len());
            for (item, meta_delta) in by_item {
                a.push(answer_from_delta(direct[item]).choice);
                b.push(answer_from_delta(*meta_delta).choice);
            }
            let outcome = cohens_kappa(&a, &b)?;
            rows.push(KappaRow {
                model: model.clone(),
                prompt_id: prompt.clone(),
                kappa: outcome.value,
                degenerate: outcome.degenerate,
            });
        }
    }
    Ok(rows)
}

/// Items where the pooled answers disagree enough to be informative.
///
/// Each model contributes one Direct vote and one Meta vote (the majority
/// answer across prompts, falling back to the model's Direct answer on a
/// split). With `per_prompt_votes`, each prompt votes separately instead.
/// An item is kept iff the minority share of its votes is at least
/// `threshold`.
pub fn disagreement_filter(
    table: &DeltaTable,
    threshold: f64,
    per_prompt_votes: bool,
) -> BTreeSet<String> {
    let items = table.common_items();
    let mut kept = BTreeSet::new();
    for item in &items {
        let mut votes: Vec<Choice> = Vec::new();
        for (model, by_item) in &table.direct {
            let direct_choice = answer_from_delta(by_item[item]).choice;
            votes.push(direct_choice);
            let Some(by_prompt) = table.meta.get(model) else {
                continue;
            };
            let prompt_choices: Vec<Choice> = by_prompt
                .values()
                .filter_map(|m| m.get(item))
                .map(|delta| answer_from_delta(*delta).choice)
                .collect();
            if prompt_choices.is_empty() {
                continue;
            }
            if per_prompt_votes {
                votes.extend(prompt_choices);
            } else {
                let ones = prompt_choices
                    .iter()
                    .filter(|c| **c == Choice::Option1)
                    .count();
                let twos = prompt_choices.len() - ones;
                let pooled = match ones.cmp(&twos) {
                    std::cmp::Ordering::Greater => Choice::Option1,
                    std::cmp::Ordering::Less => Choice::Option2,
                    std::cmp::Ordering::Equal => direct_choice,
                };
                votes.push(pooled);
            }
        }
        if votes.is_empty() {
            continue;
        }
        let ones = votes.iter().filter(|c| **c == Choice::Option1).count();
        let minority = ones.min(votes.len() - ones);
        if minority as f64 / votes.len() as f64 >= threshold {
            kept.insert(item.clone());
        }
    }
    kept
}

/// One ordered model pair's alignment: Pearson r between the meta model's
/// ΔMeta (per prompt) and the direct model's ΔDirect, plus the pair's
/// empirical similarity r(ΔDirect_A, ΔDirect_B).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentCell {
    pub meta_model: String,
    pub direct_model: String,
    pub dataset: String,
    pub per_prompt_r: BTreeMap<String, f64>,
    pub mean_r: f64,
    pub relation: RelationCategory,
    pub empirical_similarity: f64,
    /// Prompts whose ΔMeta had no variance for this pair.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_prompts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingCell {
    pub meta_model: String,
    pub direct_model: String,
    pub dataset: String,
    pub relation: RelationCategory,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub cells: Vec<AlignmentCell>,
    pub missing: Vec<MissingCell>,
}

impl AlignmentMatrix {
    pub fn cell(&self, meta_model: &str, direct_model: &str) -> Option<&AlignmentCell> {
        self.cells
            .iter()
            .find(|c| c.meta_model == meta_model && c.direct_model == direct_model)
    }
}

/// Computes the full ordered-pair alignment matrix over `items`.
/// Degenerate-variance pairs are reported and marked missing rather than
/// failing the run.
pub fn alignment_matrix(
    table: &DeltaTable,
    registry: &Registry,
    items: &BTreeSet<String>,
    dataset: &str,
) -> Result<AlignmentMatrix> {
    if items.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: items.len(),
        });
    }
    let item_order: Vec<&str> = items.iter().map(|s| s.as_str()).collect();
    let models = table.models();
    for model in &models {
        registry.require(model)?;
    }

    let mut direct_vectors: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for model in &models {
        direct_vectors.insert(model, table.direct_vector(model, &item_order)?);
    }
    let prompts = table.prompts();

    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for meta_model in &models {
        let meta_vectors: BTreeMap<&str, Vec<f64>> = prompts
            .iter()
            .map(|p| {
                table
                    .meta_vector(meta_model, p, &item_order)
                    .map(|v| (p.as_str(), v))
            })
            .collect::<Result<_>>()?;
        for direct_model in &models {
            let relation = classify_relation(
                registry.require(meta_model)?,
                registry.require(direct_model)?,
            );
            let direct_vec = &direct_vectors[direct_model.as_str()];

            let empirical_similarity = if meta_model == direct_model {
                // r(x, x) is 1 by definition; set it exactly.
                Ok(1.0)
            } else {
                pearson_r(&direct_vectors[meta_model.as_str()], direct_vec)
            };
            let empirical_similarity = match empirical_similarity {
                Ok(v) => v,
                Err(Error::DegenerateVariance(_)) => {
                    missing.push(MissingCell {
                        meta_model: meta_model.clone(),
                        direct_model: direct_model.clone(),
                        dataset: dataset.to_string(),
                        relation,
                        reason: "degenerate direct-delta variance".into(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };

            let mut per_prompt_r = BTreeMap::new();
            let mut degenerate_prompts = Vec::new();
            for (prompt, meta_vec) in &meta_vectors {
                match pearson_r(meta_vec, direct_vec) {
                    Ok(r) => {
                        per_prompt_r.insert((*prompt).to_string(), r);
                    }
                    Err(Error::DegenerateVariance(_)) => {
                        degenerate_prompts.push((*prompt).to_string());
                    }
                    Err(e) => return Err(e),
                }
            }
            if per_prompt_r.is_empty() {
                missing.push(MissingCell {
                    meta_model: meta_model.clone(),
                    direct_model: direct_model.clone(),
                    dataset: dataset.to_string(),
                    relation,
                    reason: "all prompts degenerate".into(),
                });
                continue;
            }
            let mean_r = per_prompt_r.values().sum::<f64>() / per_prompt_r.len() as f64;
            cells.push(AlignmentCell {
                meta_model: meta_model.clone(),
                direct_model: direct_model.clone(),
                dataset: dataset.to_string(),
                per_prompt_r,
                mean_r,
                relation,
                empirical_similarity,
                degenerate_prompts,
            });
        }
    }
    Ok(AlignmentMatrix { cells, missing })
}

pub const EMPIRICAL_SIMILARITY_TERM: &str = "empirical_similarity";

/// OLS of mean r on empirical similarity plus treatment-coded relation
/// with `self` as the reference level.
pub fn introspection_regression(cells: &[AlignmentCell]) -> Result<RegressionResult> {
    let levels: BTreeSet<&str> = cells.iter().map(|c| c.relation.name()).collect();
    if levels.len() < 2 {
        return Err(Error::Analysis(
            "introspection regression needs at least 2 relation levels".into(),
        ));
    }
    let mut x = DesignMatrix::new(cells.len());
    x.push_column(
        EMPIRICAL_SIMILARITY_TERM,
        cells.iter().map(|c| c.empirical_similarity).collect(),
    )?;
    let labels: Vec<&str> = cells.iter().map(|c| c.relation.name()).collect();
    let all: Vec<&str> = RelationCategory::ALL.iter().map(|r| r.name()).collect();
    x.push_categorical(&labels, &all, RelationCategory::SelfPair.name())?;
    let y: Vec<f64> = cells.iter().map(|c| c.mean_r).collect();
    ols_fit(&x, &y)
}

/// OLS of mean r on log model sizes and their interaction.
pub fn size_regression(cells: &[AlignmentCell], registry: &Registry) -> Result<RegressionResult> {
    let mut meta_size = Vec::with_capacity(cells.len());
    let mut direct_size = Vec::with_capacity(cells.len());
    for cell in cells {
        meta_size.push(registry.require(&cell.meta_model)?.size_params.ln());
        direct_size.push(registry.require(&cell.direct_model)?.size_params.ln());
    }
    let interaction: Vec<f64> = meta_size
        .iter()
        .zip(&direct_size)
        .map(|(a, b)| a * b)
        .collect();
    let mut x = DesignMatrix::new(cells.len());
    x.push_column("log_meta_size", meta_size)?;
    x.push_column("log_direct_size", direct_size)?;
    x.push_column("interaction", interaction)?;
    let y: Vec<f64> = cells.iter().map(|c| c.mean_r).collect();
    ols_fit(&x, &y)
}

/// Logistic regression of per-question correctness on the evaluation
/// method, log model size, and their interaction. Ties are excluded, as
/// in the accuracy table.
pub fn correctness_regression(
    table: &DeltaTable,
    gold: &BTreeMap<String, Choice>,
    registry: &Registry,
) -> Result<RegressionResult> {
    if gold.is_empty() {
        return Err(Error::MissingGold("empty gold label set".into()));
    }
    let mut y = Vec::new();
    let mut is_meta = Vec::new();
    let mut log_size = Vec::new();
    let mut push = |delta: f64, meta: bool, size: f64, expected: Choice| {
        let answer = answer_from_delta(delta);
        if answer.tie {
            return;
        }
        y.push(if answer.choice == expected { 1.0 } else { 0.0 });
        is_meta.push(if meta { 1.0 } else { 0.0 });
        log_size.push(size.ln());
    };
    for (model, by_item) in &table.direct {
        let size = registry.require(model)?.size_params;
        for (item, delta) in by_item {
            if let Some(expected) = gold.get(item) {
                push(*delta, false, size, *expected);
            }
        }
    }
    for (model, by_prompt) in &table.meta {
        let size = registry.require(model)?.size_params;
        for by_item in by_prompt.values() {
            for (item, delta) in by_item {
                if let Some(expected) = gold.get(item) {
                    push(*delta, true, size, *expected);
                }
            }
        }
    }
    let interaction: Vec<f64> = is_meta.iter().zip(&log_size).map(|(a, b)| a * b).collect();
    let mut x = DesignMatrix::new(y.len());
    x.push_column("is_meta", is_meta)?;
    x.push_column("log_size", log_size)?;
    x.push_column("is_meta:log_size", interaction)?;
    crate::stats::logistic_fit(&x, &y)
}

pub const IS_SELF_TERM: &str = "is_self";

/// OLS of mean r on a same-model indicator over an already-restricted cell
/// set (typically one seed-group-rich family).
pub fn self_effect_regression(cells: &[AlignmentCell]) -> Result<RegressionResult> {
    let self_count = cells
        .iter()
        .filter(|c| c.relation == RelationCategory::SelfPair)
        .count();
    if self_count == 0 || self_count == cells.len() {
        return Err(Error::Analysis(
            "self-effect regression needs both self and non-self cells".into(),
        ));
    }
    let mut x = DesignMatrix::new(cells.len());
    x.push_column(
        IS_SELF_TERM,
        cells
            .iter()
            .map(|c| {
                if c.relation == RelationCategory::SelfPair {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    let y: Vec<f64> = cells.iter().map(|c| c.mean_r).collect();
    ols_fit(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    UninformativeMeta,
    InformativeMeta,
    Introspection,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::UninformativeMeta => "uninformative_meta",
            Outcome::InformativeMeta => "informative_meta",
            Outcome::Introspection => "introspection",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictEvidence {
    pub regression: RegressionResult,
    pub slope_term: String,
    pub slope_estimate: f64,
    pub slope_p_value: f64,
    pub non_self_terms: Vec<String>,
    /// Non-self terms that are negative and significant at alpha.
    pub negative_significant_terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub alpha: f64,
    pub evidence: VerdictEvidence,
}

/// Classification rule over the introspection regression:
/// - introspection iff every non-self relation coefficient is negative and
///   at least one is significant at alpha;
/// - otherwise informative meta iff the empirical-similarity slope is
///   positive and significant;
/// - otherwise uninformative meta.
pub fn classify_outcome(result: &RegressionResult, alpha: f64) -> Verdict {
    let non_self: Vec<String> = RelationCategory::non_self_names()
        .iter()
        .filter(|name| result.terms.iter().any(|t| t == *name))
        .map(|name| name.to_string())
        .collect();

    let mut all_negative = !non_self.is_empty();
    let mut negative_significant = Vec::new();
    for term in &non_self {
        let coef = result.coefficient(term).expect("term present");
        if !(coef.estimate < 0.0) {
            all_negative = false;
        } else if coef.p_value < alpha {
            negative_significant.push(term.clone());
        }
    }

    let slope = result.coefficient(EMPIRICAL_SIMILARITY_TERM);
    let (slope_estimate, slope_p_value) = slope
        .map(|c| (c.estimate, c.p_value))
        .unwrap_or((f64::NAN, f64::NAN));

    let outcome = if all_negative && !negative_significant.is_empty() {
        Outcome::Introspection
    } else if slope_estimate > 0.0 && slope_p_value < alpha {
        Outcome::InformativeMeta
    } else {
        Outcome::UninformativeMeta
    };

    Verdict {
        outcome,
        alpha,
        evidence: VerdictEvidence {
            regression: result.clone(),
            slope_term: EMPIRICAL_SIMILARITY_TERM.to_string(),
            slope_estimate,
            slope_p_value,
            non_self_terms: non_self,
            negative_significant_terms: negative_significant,
        },
    }
}
