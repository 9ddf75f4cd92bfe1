//! ΔDirect and ΔMeta computation.
//!
//! Every delta is the log-probability margin for "option 1" (the
//! grammatical sentence or the original word). Meta deltas average the two
//! prompt orderings so answer-position bias cancels:
//!
//!   delta = 1/2 [ (logP(a1|p1) - logP(a2|p1)) + (logP(a1|p2) - logP(a2|p2)) ]
//!
//! where a1/a2 are each rendering's designated answer strings for option
//! 1/option 2. With digit answers this reduces to the familiar form
//! 1/2[(logP("1"|p1) - logP("2"|p1)) + (logP("2"|p2) - logP("1"|p2))].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendSet, ScoreRequest};
use crate::error::{Error, Result};
use crate::prompting::{PromptTemplate, RenderedPromptSet, TemplateKind};
use crate::registry::{ModelCard, Variant};
use crate::stimuli::{ContinuationItem, MinimalPairItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Meta,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Meta => "meta",
        }
    }
}

/// Which option a delta's sign selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Option1,
    Option2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub choice: Choice,
    pub margin: f64,
    pub tie: bool,
}

/// Sign rule: positive prefers option 1, negative option 2. An exact zero
/// is reported as option 2 with an explicit tie flag so downstream
/// accuracy can exclude it; a deterministic rule beats a coin flip.
pub fn answer_from_delta(delta: f64) -> Answer {
    Answer {
        choice: if delta > 0.0 {
            Choice::Option1
        } else {
            Choice::Option2
        },
        margin: delta.abs(),
        tie: delta == 0.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub model_id: String,
    pub item_id: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    pub delta: f64,
    /// Labeled raw log probabilities the delta was computed from.
    pub components: BTreeMap<String, f64>,
    pub tie: bool,
}

impl DeltaRecord {
    pub fn answer(&self) -> Answer {
        answer_from_delta(self.delta)
    }

    /// Recomputes the delta from the stored components, keyed by the
    /// component naming scheme.
    pub fn recompute(&self) -> Result<f64> {
        let get = |k: &str| {
            self.components
                .get(k)
                .copied()
                .ok_or_else(|| Error::DeltaRecompute(format!("missing component `{k}`")))
        };
        match self.method {
            Method::Direct => {
                if self.components.contains_key("logP_s1") {
                    Ok(get("logP_s1")? - get("logP_s2")?)
                } else {
                    Ok(get("logP_w1")? - get("logP_w2")?)
                }
            }
            Method::Meta => {
                if self.components.contains_key("logP_1_given_s1p1") {
                    let d1 = eq1_forced(
                        get("logP_1_given_s1p1")?,
                        get("logP_2_given_s1p1")?,
                        get("logP_2_given_s1p2")?,
                        get("logP_1_given_s1p2")?,
                    );
                    let d2 = eq1_forced(
                        get("logP_1_given_s2p1")?,
                        get("logP_2_given_s2p1")?,
                        get("logP_2_given_s2p2")?,
                        get("logP_1_given_s2p2")?,
                    );
                    Ok(d1 - d2)
                } else if self.components.contains_key("logP_w1_given_p1") {
                    Ok(eq1_forced(
                        get("logP_w1_given_p1")?,
                        get("logP_w2_given_p1")?,
                        get("logP_w1_given_p2")?,
                        get("logP_w2_given_p2")?,
                    ))
                } else {
                    Ok(eq1_forced(
                        get("logP_1_given_p1")?,
                        get("logP_2_given_p1")?,
                        get("logP_2_given_p2")?,
                        get("logP_1_given_p2")?,
                    ))
                }
            }
        }
    }
}

/// Order-debiased forced-choice delta. Arguments are the log probabilities
/// of the option-1 and option-2 answer strings under each rendering.
pub fn eq1_forced(a1_p1: f64, a2_p1: f64, a1_p2: f64, a2_p2: f64) -> f64 {
    0.5 * ((a1_p1 - a2_p1) + (a1_p2 - a2_p2))
}

/// Per-sentence judgment deltas combined into a pair preference.
pub fn individual_delta(delta_s1: f64, delta_s2: f64) -> f64 {
    delta_s1 - delta_s2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Combine {
    Direct,
    MetaOneBlock,
    MetaTwoBlocks,
}

/// The requests needed for one delta, with component labels and the rule
/// for combining the scores.
#[derive(Debug, Clone)]
pub struct ScorePlan {
    pub model_id: String,
    pub item_id: String,
    pub method: Method,
    pub prompt_id: Option<String>,
    pub requests: Vec<ScoreRequest>,
    labels: Vec<String>,
    combine: Combine,
}

impl ScorePlan {
    /// Builds the record once all requests have been scored, in order.
    pub fn assemble(&self, logprobs: &[f64]) -> Result<DeltaRecord> {
        if logprobs.len() != self.requests.len() {
            return Err(Error::DeltaRecompute(format!(
                "expected {} scores, got {}",
                self.requests.len(),
                logprobs.len()
            )));
        }
        let delta = match self.combine {
            Combine::Direct => logprobs[0] - logprobs[1],
            Combine::MetaOneBlock => {
                eq1_forced(logprobs[0], logprobs[1], logprobs[2], logprobs[3])
            }
            Combine::MetaTwoBlocks => individual_delta(
                eq1_forced(logprobs[0], logprobs[1], logprobs[2], logprobs[3]),
                eq1_forced(logprobs[4], logprobs[5], logprobs[6], logprobs[7]),
            ),
        };
        let components = self
            .labels
            .iter()
            .cloned()
            .zip(logprobs.iter().copied())
            .collect();
        Ok(DeltaRecord {
            model_id: self.model_id.clone(),
            item_id: self.item_id.clone(),
            method: self.method,
            prompt_id: self.prompt_id.clone(),
            delta,
            components,
            tie: delta == 0.0,
        })
    }
}

/// Direct sentence preference: whole-sequence log probabilities with an
/// empty prefix. Never chat-wrapped.
pub fn plan_direct_pair(model: &ModelCard, item: &MinimalPairItem) -> ScorePlan {
    ScorePlan {
        model_id: model.id.clone(),
        item_id: item.id.clone(),
        method: Method::Direct,
        prompt_id: None,
        requests: vec![
            ScoreRequest::new(&model.id, "", &item.s1, false),
            ScoreRequest::new(&model.id, "", &item.s2, false),
        ],
        labels: vec!["logP_s1".into(), "logP_s2".into()],
        combine: Combine::Direct,
    }
}

/// Direct word preference: conditional log probabilities given the prefix.
pub fn plan_direct_word(model: &ModelCard, item: &ContinuationItem) -> ScorePlan {
    ScorePlan {
        model_id: model.id.clone(),
        item_id: item.id.clone(),
        method: Method::Direct,
        prompt_id: None,
        requests: vec![
            ScoreRequest::new(&model.id, &item.prefix, &item.w1, false),
            ScoreRequest::new(&model.id, &item.prefix, &item.w2, false),
        ],
        labels: vec!["logP_w1".into(), "logP_w2".into()],
        combine: Combine::Direct,
    }
}

/// Meta preference from a rendered prompt set. Meta prompts to instruct
/// models are chat-wrapped; the backend applies its own template.
pub fn plan_meta(
    model: &ModelCard,
    template: &PromptTemplate,
    rendered: &RenderedPromptSet,
) -> Result<ScorePlan> {
    let chat_wrap = model.variant == Variant::Instruct;
    let expected_blocks = match template.kind {
        TemplateKind::IndividualJudgment => 2,
        _ => 1,
    };
    if rendered.blocks.len() != expected_blocks
        || rendered.blocks.iter().any(|b| b.renderings.len() != 2)
    {
        return Err(Error::TemplateItemMismatch {
            template: template.id.clone(),
            item: rendered.item_id.clone(),
            reason: "rendered set has the wrong shape".into(),
        });
    }
    let mut requests = Vec::new();
    let mut labels = Vec::new();
    for (block_idx, block) in rendered.blocks.iter().enumerate() {
        let block_tag = match template.kind {
            TemplateKind::IndividualJudgment => {
                if block_idx == 0 {
                    "s1"
                } else {
                    "s2"
                }
            }
            _ => "",
        };
        for (rendering_idx, rendering) in block.renderings.iter().enumerate() {
            let ordering_tag = if rendering_idx == 0 { "p1" } else { "p2" };
            let answers = [&rendering.answer_for_option1, &rendering.answer_for_option2];
            for (option_idx, answer) in answers.into_iter().enumerate() {
                requests.push(ScoreRequest::new(&model.id, &rendering.text, answer, chat_wrap));
                let answer_tag = match template.kind {
                    TemplateKind::WordFormMeta => {
                        if option_idx == 0 {
                            "w1".to_string()
                        } else {
                            "w2".to_string()
                        }
                    }
                    _ => answer.clone(),
                };
                labels.push(format!("logP_{answer_tag}_given_{block_tag}{ordering_tag}"));
            }
        }
    }
    Ok(ScorePlan {
        model_id: model.id.clone(),
        item_id: rendered.item_id.clone(),
        method: Method::Meta,
        prompt_id: Some(template.id.clone()),
        requests,
        labels,
        combine: match template.kind {
            TemplateKind::IndividualJudgment => Combine::MetaTwoBlocks,
            _ => Combine::MetaOneBlock,
        },
    })
}

fn execute(backends: &BackendSet, plan: &ScorePlan) -> Result<DeltaRecord> {
    let mut logprobs = Vec::with_capacity(plan.requests.len());
    for req in &plan.requests {
        logprobs.push(backends.conditional_logprob(req)?.logprob);
    }
    plan.assemble(&logprobs)
}

pub fn delta_direct_pair(
    backends: &BackendSet,
    model: &ModelCard,
    item: &MinimalPairItem,
) -> Result<DeltaRecord> {
    execute(backends, &plan_direct_pair(model, item))
}

pub fn delta_direct_word(
    backends: &BackendSet,
    model: &ModelCard,
    item: &ContinuationItem,
) -> Result<DeltaRecord> {
    execute(backends, &plan_direct_word(model, item))
}

pub fn delta_meta_forced_choice(
    backends: &BackendSet,
    model: &ModelCard,
    template: &PromptTemplate,
    rendered: &RenderedPromptSet,
) -> Result<DeltaRecord> {
    execute(backends, &plan_meta(model, template, rendered)?)
}

pub fn delta_meta_individual(
    backends: &BackendSet,
    model: &ModelCard,
    template: &PromptTemplate,
    rendered: &RenderedPromptSet,
) -> Result<DeltaRecord> {
    execute(backends, &plan_meta(model, template, rendered)?)
}

pub fn delta_meta_wordform(
    backends: &BackendSet,
    model: &ModelCard,
    template: &PromptTemplate,
    rendered: &RenderedPromptSet,
) -> Result<DeltaRecord> {
    execute(backends, &plan_meta(model, template, rendered)?)
}

/// Writes delta records as JSONL, sorted for reproducible output.
pub fn write_delta_records(path: &std::path::Path, records: &[DeltaRecord]) -> Result<()> {
    let mut sorted: Vec<&DeltaRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.model_id, &a.item_id, a.method, &a.prompt_id).cmp(&(
            &b.model_id,
            &b.item_id,
            b.method,
            &b.prompt_id,
        ))
    });
    let mut buf = String::new();
    for record in sorted {
        buf.push_str(&serde_json::to_string(record).expect("record serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_delta_records(path: &std::path::Path) -> Result<Vec<DeltaRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DeltaRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, ScoreBackend, ScoreCache, ScoreResponse};
    use crate::prompting::{builtin_catalog, render, Experiment};
    use crate::stimuli::{Dataset, PairSource, StimulusItem};

    struct TableBackend {
        scores: BTreeMap<(String, String), f64>,
    }

    impl ScoreBackend for TableBackend {
        fn conditional_logprob(
            &self,
            req: &ScoreRequest,
        ) -> std::result::Result<ScoreResponse, BackendError> {
            let lp = self
                .scores
                .get(&(req.prefix.clone(), req.continuation.clone()))
                .copied()
                .unwrap_or(-5.0);
            Ok(ScoreResponse {
                logprob: lp,
                scored_variant: req.continuation.clone(),
                token_count: 1,
            })
        }
    }

    fn pair() -> MinimalPairItem {
        MinimalPairItem {
            id: "p1".into(),
            s1: "good one".into(),
            s2: "bad one".into(),
            source: PairSource::Blimp,
            paradigm: "x".into(),
        }
    }

    fn model(id: &str, variant: Variant) -> ModelCard {
        ModelCard {
            id: id.into(),
            family: "fam".into(),
            size_params: 1.0,
            variant,
            seed_group: None,
            base_id: None,
            data_cutoff: None,
        }
    }

    fn backends_with(scores: BTreeMap<(String, String), f64>) -> BackendSet {
        let mut set = BackendSet::new(ScoreCache::in_memory());
        set.bind("m", Box::new(TableBackend { scores }));
        set
    }

    #[test]
    fn eq1_worked_example() {
        // components (logP1|p1, logP2|p1, logP1|p2, logP2|p2) =
        // (-0.2, -1.7, -1.2, -0.4): option-1 answer under p2 is "2".
        let delta = eq1_forced(-0.2, -1.7, -0.4, -1.2);
        assert!((delta - 1.15).abs() < 1e-15);
    }

    #[test]
    fn direct_pair_arithmetic_and_antisymmetry() {
        let mut scores = BTreeMap::new();
        scores.insert((String::new(), "good one".to_string()), -10.0);
        scores.insert((String::new(), "bad one".to_string()), -12.5);
        let set = backends_with(scores);
        let m = model("m", Variant::Base);
        let rec = delta_direct_pair(&set, &m, &pair()).unwrap();
        assert!((rec.delta - 2.5).abs() < 1e-15);
        assert_eq!(rec.prompt_id, None);
        assert!(!rec.tie);

        let mut swapped = pair();
        std::mem::swap(&mut swapped.s1, &mut swapped.s2);
        let rec2 = delta_direct_pair(&set, &m, &swapped).unwrap();
        assert_eq!(rec2.delta, -rec.delta);
    }

    #[test]
    fn identical_sentences_give_zero_and_tie() {
        let set = backends_with(BTreeMap::new());
        let m = model("m", Variant::Base);
        let mut item = pair();
        item.s2 = item.s1.clone();
        let rec = delta_direct_pair(&set, &m, &item).unwrap();
        assert_eq!(rec.delta, 0.0);
        assert!(rec.tie);
        assert_eq!(rec.answer().choice, Choice::Option2);
    }

    #[test]
    fn forced_choice_meta_matches_eq1() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = &catalog[0];
        let item = StimulusItem::Pair(pair());
        let rendered = render(&item, template).unwrap();
        let [p1, p2] = &rendered.blocks[0].renderings[..] else {
            panic!();
        };
        let mut scores = BTreeMap::new();
        scores.insert((p1.text.clone(), "1".to_string()), -0.2);
        scores.insert((p1.text.clone(), "2".to_string()), -1.7);
        scores.insert((p2.text.clone(), "1".to_string()), -1.2);
        scores.insert((p2.text.clone(), "2".to_string()), -0.4);
        let set = backends_with(scores);
        let m = model("m", Variant::Base);
        let rec = delta_meta_forced_choice(&set, &m, template, &rendered).unwrap();
        assert!((rec.delta - 1.15).abs() < 1e-12);
        assert_eq!(rec.components.len(), 4);
        assert!((rec.recompute().unwrap() - rec.delta).abs() < 1e-15);
        assert_eq!(rec.components["logP_1_given_p1"], -0.2);
        assert_eq!(rec.components["logP_2_given_p2"], -0.4);
    }

    #[test]
    fn symmetric_backend_gives_zero_meta() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = &catalog[1];
        let rendered = render(&StimulusItem::Pair(pair()), template).unwrap();
        // Backend scores every continuation identically.
        let set = backends_with(BTreeMap::new());
        let m = model("m", Variant::Base);
        let rec = delta_meta_forced_choice(&set, &m, template, &rendered).unwrap();
        assert_eq!(rec.delta, 0.0);
        assert!(rec.tie);
    }

    #[test]
    fn wordform_averages_listing_orders() {
        let item = ContinuationItem {
            id: "w1".into(),
            prefix: "one two three four five six seven".into(),
            w1: "alpha".into(),
            w2: "beta".into(),
            dataset: Dataset::Randomseq,
        };
        let catalog = builtin_catalog(Experiment::WordPrediction);
        let template = catalog
            .iter()
            .find(|t| t.id == "MetaQuestionSimple-Direct")
            .unwrap();
        let rendered = render(&StimulusItem::Continuation(item), template).unwrap();
        let [p1, p2] = &rendered.blocks[0].renderings[..] else {
            panic!();
        };
        let mut scores = BTreeMap::new();
        scores.insert((p1.text.clone(), "alpha".to_string()), -2.0);
        scores.insert((p1.text.clone(), "beta".to_string()), -2.6);
        scores.insert((p2.text.clone(), "alpha".to_string()), -2.0);
        scores.insert((p2.text.clone(), "beta".to_string()), -2.6);
        let set = backends_with(scores);
        let m = model("m", Variant::Base);
        let rec = delta_meta_wordform(&set, &m, template, &rendered).unwrap();
        assert!((rec.delta - 0.6).abs() < 1e-12);
        assert!((rec.recompute().unwrap() - rec.delta).abs() < 1e-15);
    }

    #[test]
    fn individual_combines_per_sentence_deltas() {
        assert!((individual_delta(0.9, -0.3) - 1.2).abs() < 1e-15);
        assert_eq!(individual_delta(0.0, 0.0), 0.0);
        assert_eq!(individual_delta(-0.9, 0.3), -individual_delta(0.9, -0.3));

        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = catalog
            .iter()
            .find(|t| t.id == "GrammaticalityJudgmentI")
            .unwrap();
        let rendered = render(&StimulusItem::Pair(pair()), template).unwrap();
        let mut scores = BTreeMap::new();
        // s1 block: delta 0.9; s2 block: delta -0.3.
        let b1 = &rendered.blocks[0].renderings;
        scores.insert((b1[0].text.clone(), "1".into()), -0.1);
        scores.insert((b1[0].text.clone(), "2".into()), -1.0);
        scores.insert((b1[1].text.clone(), "2".into()), -0.2);
        scores.insert((b1[1].text.clone(), "1".into()), -1.1);
        let b2 = &rendered.blocks[1].renderings;
        scores.insert((b2[0].text.clone(), "1".into()), -1.0);
        scores.insert((b2[0].text.clone(), "2".into()), -0.7);
        scores.insert((b2[1].text.clone(), "2".into()), -1.0);
        scores.insert((b2[1].text.clone(), "1".into()), -0.7);
        let set = backends_with(scores);
        let m = model("m", Variant::Base);
        let rec = delta_meta_individual(&set, &m, template, &rendered).unwrap();
        assert!((rec.delta - 1.2).abs() < 1e-12);
        assert_eq!(rec.components.len(), 8);
        assert!((rec.recompute().unwrap() - rec.delta).abs() < 1e-15);
    }

    #[test]
    fn answers_follow_sign_with_tie_rule() {
        assert_eq!(answer_from_delta(2.5).choice, Choice::Option1);
        assert_eq!(answer_from_delta(-0.1).choice, Choice::Option2);
        let tie = answer_from_delta(0.0);
        assert_eq!(tie.choice, Choice::Option2);
        assert!(tie.tie);
        assert_eq!(tie.margin, 0.0);
        // Scale invariance of the induced answer.
        for delta in [-3.0, -0.5, 0.4, 9.0] {
            assert_eq!(
                answer_from_delta(delta).choice,
                answer_from_delta(delta * 17.0).choice
            );
        }
    }

    #[test]
    fn meta_requests_chat_wrap_only_instruct_models() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = &catalog[0];
        let rendered = render(&StimulusItem::Pair(pair()), template).unwrap();
        let instruct = model("m", Variant::Instruct);
        let plan = plan_meta(&instruct, template, &rendered).unwrap();
        assert!(plan.requests.iter().all(|r| r.chat_wrap));
        let base = model("m", Variant::Base);
        let plan = plan_meta(&base, template, &rendered).unwrap();
        assert!(plan.requests.iter().all(|r| !r.chat_wrap));
        let direct = plan_direct_pair(&instruct, &pair());
        assert!(direct.requests.iter().all(|r| !r.chat_wrap));
    }

    #[test]
    fn records_roundtrip_and_sort() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deltas.jsonl");
        let rec = |model: &str, item: &str| DeltaRecord {
            model_id: model.into(),
            item_id: item.into(),
            method: Method::Direct,
            prompt_id: None,
            delta: 1.0,
            components: BTreeMap::from([("logP_s1".into(), -1.0), ("logP_s2".into(), -2.0)]),
            tie: false,
        };
        write_delta_records(&path, &[rec("b", "i2"), rec("a", "i1")]).unwrap();
        let loaded = load_delta_records(&path).unwrap();
        assert_eq!(loaded[0].model_id, "a");
        assert_eq!(loaded[1].model_id, "b");
        assert!((loaded[0].recompute().unwrap() - 1.0).abs() < 1e-15);
    }
}
