//! Prompt templates and their instantiation.
//!
//! Every template is rendered in two variants: the original ordering and an
//! answer-reversed ordering, so that downstream deltas can average out
//! answer-position bias. Forced-choice reversal swaps the option texts;
//! individual-judgment reversal remaps the digits in the instruction
//! instead, since only one sentence appears.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::{ContinuationItem, MinimalPairItem, StimulusItem};

pub const DEFAULT_SUFFIX: &str = "My answer is";

pub const PH_GRAM: &str = "[GRAM]";
pub const PH_UNGRAM: &str = "[UNGRAM]";
pub const PH_SENT: &str = "[SENT]";
pub const PH_PRE: &str = "[PRE]";
pub const PH_ANS1: &str = "[ANS1]";
pub const PH_ANS2: &str = "[ANS2]";

const ALL_PLACEHOLDERS: [&str; 6] = [PH_GRAM, PH_UNGRAM, PH_SENT, PH_PRE, PH_ANS1, PH_ANS2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Acceptability,
    WordPrediction,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Acceptability => "acceptability",
            Experiment::WordPrediction => "word_prediction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    ForcedChoiceSentence,
    IndividualJudgment,
    ForcedChoiceWord,
    WordFormMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    DigitTokens,
    WordTokens,
}

fn default_suffix() -> String {
    DEFAULT_SUFFIX.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub experiment: Experiment,
    pub kind: TemplateKind,
    pub body: String,
    pub answer_mode: AnswerMode,
    #[serde(default = "default_suffix")]
    pub suffix: String,
    /// Judgment phrasing mapped to the first digit in the original ordering
    /// of an individual-judgment template ("it is grammatical").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_phrase: Option<String>,
    /// Judgment phrasing for the opposite answer ("it is ungrammatical").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_phrase: Option<String>,
}

impl PromptTemplate {
    fn required_placeholders(&self) -> Result<&'static [&'static str]> {
        use Experiment::*;
        use TemplateKind::*;
        match (self.experiment, self.kind) {
            (Acceptability, ForcedChoiceSentence) => Ok(&[PH_GRAM, PH_UNGRAM]),
            (Acceptability, IndividualJudgment) => Ok(&[PH_SENT, PH_ANS1, PH_ANS2]),
            (WordPrediction, ForcedChoiceSentence)
            | (WordPrediction, ForcedChoiceWord)
            | (WordPrediction, WordFormMeta) => Ok(&[PH_PRE, PH_ANS1, PH_ANS2]),
            _ => Err(Error::InvalidTemplate {
                template: self.id.clone(),
                reason: format!(
                    "kind {:?} does not belong to experiment {:?}",
                    self.kind, self.experiment
                ),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let required = self.required_placeholders()?;
        for ph in required {
            if !self.body.contains(ph) {
                return Err(Error::InvalidTemplate {
                    template: self.id.clone(),
                    reason: format!("body is missing required placeholder {ph}"),
                });
            }
        }
        for ph in ALL_PLACEHOLDERS {
            if !required.contains(&ph) && self.body.contains(ph) {
                return Err(Error::InvalidTemplate {
                    template: self.id.clone(),
                    reason: format!("body contains placeholder {ph} not used by this kind"),
                });
            }
        }
        if self.kind == TemplateKind::IndividualJudgment
            && (self.yes_phrase.is_none() || self.no_phrase.is_none())
        {
            return Err(Error::InvalidTemplate {
                template: self.id.clone(),
                reason: "individual-judgment templates need yes_phrase and no_phrase".into(),
            });
        }
        let expected_mode = match self.kind {
            TemplateKind::WordFormMeta => AnswerMode::WordTokens,
            _ => AnswerMode::DigitTokens,
        };
        if self.answer_mode != expected_mode {
            return Err(Error::InvalidTemplate {
                template: self.id.clone(),
                reason: format!("kind {:?} requires answer mode {expected_mode:?}", self.kind),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrdering {
    Original,
    Reversed,
}

/// One concrete prompt text with its designated answer strings.
///
/// `answer_for_option1` is the string that selects the underlying first
/// option (the grammatical sentence or the original word), whatever its
/// position in this rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rendering {
    pub ordering: PromptOrdering,
    pub text: String,
    pub answer_for_option1: String,
    pub answer_for_option2: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSubject {
    /// Both options appear in one prompt.
    Pair,
    /// Individual judgment of s1.
    Sentence1,
    /// Individual judgment of s2.
    Sentence2,
}

/// The two orderings of one prompt about one subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderingBlock {
    pub subject: BlockSubject,
    pub renderings: Vec<Rendering>,
}

/// All renderings of one template for one item: a single block for
/// forced-choice templates, one block per sentence for individual ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedPromptSet {
    pub item_id: String,
    pub template_id: String,
    pub blocks: Vec<RenderingBlock>,
}

impl RenderedPromptSet {
    pub fn rendering_count(&self) -> usize {
        self.blocks.iter().map(|b| b.renderings.len()).sum()
    }
}

/// Literal placeholder substitution. Single pass: placeholders inside
/// substituted values are never re-expanded.
fn substitute(body: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while !rest.is_empty() {
        let mut earliest: Option<(usize, usize, &str)> = None;
        for (ph, value) in bindings {
            if let Some(pos) = rest.find(ph) {
                if earliest.map_or(true, |(p, _, _)| pos < p) {
                    earliest = Some((pos, ph.len(), value));
                }
            }
        }
        match earliest {
            Some((pos, len, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + len..];
            }
            None => {
                out.push_str(rest);
                break;
            }
        }
    }
    out
}

fn finish_text(template: &PromptTemplate, substituted: String) -> String {
    if template.suffix.is_empty() {
        substituted
    } else {
        format!("{substituted} {}", template.suffix)
    }
}

fn digit_answers(ordering: PromptOrdering) -> (String, String) {
    match ordering {
        PromptOrdering::Original => ("1".to_string(), "2".to_string()),
        PromptOrdering::Reversed => ("2".to_string(), "1".to_string()),
    }
}

fn render_forced_pair(template: &PromptTemplate, item: &MinimalPairItem) -> RenderingBlock {
    let renderings = [PromptOrdering::Original, PromptOrdering::Reversed]
        .into_iter()
        .map(|ordering| {
            let (first, second) = match ordering {
                PromptOrdering::Original => (item.s1.as_str(), item.s2.as_str()),
                PromptOrdering::Reversed => (item.s2.as_str(), item.s1.as_str()),
            };
            let text = substitute(&template.body, &[(PH_GRAM, first), (PH_UNGRAM, second)]);
            let (a1, a2) = digit_answers(ordering);
            Rendering {
                ordering,
                text: finish_text(template, text),
                answer_for_option1: a1,
                answer_for_option2: a2,
            }
        })
        .collect();
    RenderingBlock {
        subject: BlockSubject::Pair,
        renderings,
    }
}

fn render_forced_word(template: &PromptTemplate, item: &ContinuationItem) -> RenderingBlock {
    let renderings = [PromptOrdering::Original, PromptOrdering::Reversed]
        .into_iter()
        .map(|ordering| {
            let (first, second) = match ordering {
                PromptOrdering::Original => (item.w1.as_str(), item.w2.as_str()),
                PromptOrdering::Reversed => (item.w2.as_str(), item.w1.as_str()),
            };
            let text = substitute(
                &template.body,
                &[(PH_PRE, item.prefix.as_str()), (PH_ANS1, first), (PH_ANS2, second)],
            );
            let (a1, a2) = match template.answer_mode {
                AnswerMode::DigitTokens => digit_answers(ordering),
                // Word answers are the candidate words themselves; reversal
                // only swaps their listing order inside the question.
                AnswerMode::WordTokens => (item.w1.clone(), item.w2.clone()),
            };
            Rendering {
                ordering,
                text: finish_text(template, text),
                answer_for_option1: a1,
                answer_for_option2: a2,
            }
        })
        .collect();
    RenderingBlock {
        subject: BlockSubject::Pair,
        renderings,
    }
}

fn render_individual(
    template: &PromptTemplate,
    subject: BlockSubject,
    sentence: &str,
) -> RenderingBlock {
    let yes = template.yes_phrase.as_deref().expect("validated");
    let no = template.no_phrase.as_deref().expect("validated");
    let renderings = [PromptOrdering::Original, PromptOrdering::Reversed]
        .into_iter()
        .map(|ordering| {
            let (first, second) = match ordering {
                PromptOrdering::Original => (yes, no),
                PromptOrdering::Reversed => (no, yes),
            };
            let text = substitute(
                &template.body,
                &[(PH_SENT, sentence), (PH_ANS1, first), (PH_ANS2, second)],
            );
            // Option 1 here means "the sentence is good": the digit mapped
            // to the yes phrase in this rendering.
            let (a1, a2) = digit_answers(ordering);
            Rendering {
                ordering,
                text: finish_text(template, text),
                answer_for_option1: a1,
                answer_for_option2: a2,
            }
        })
        .collect();
    RenderingBlock { subject, renderings }
}

/// Instantiates a template for an item in both orderings.
pub fn render(item: &StimulusItem, template: &PromptTemplate) -> Result<RenderedPromptSet> {
    template.validate()?;
    let mismatch = |reason: &str| Error::TemplateItemMismatch {
        template: template.id.clone(),
        item: item.id().to_string(),
        reason: reason.to_string(),
    };
    let blocks = match (template.experiment, item) {
        (Experiment::Acceptability, StimulusItem::Pair(pair)) => match template.kind {
            TemplateKind::ForcedChoiceSentence => vec![render_forced_pair(template, pair)],
            TemplateKind::IndividualJudgment => vec![
                render_individual(template, BlockSubject::Sentence1, &pair.s1),
                render_individual(template, BlockSubject::Sentence2, &pair.s2),
            ],
            _ => return Err(mismatch("unsupported kind for acceptability")),
        },
        (Experiment::WordPrediction, StimulusItem::Continuation(word)) => {
            vec![render_forced_word(template, word)]
        }
        _ => {
            return Err(mismatch(
                "item kind does not match the template's experiment",
            ))
        }
    };
    Ok(RenderedPromptSet {
        item_id: item.id().to_string(),
        template_id: template.id.clone(),
        blocks,
    })
}

fn forced_sentence(id: &str, experiment: Experiment, body: &str) -> PromptTemplate {
    PromptTemplate {
        id: id.to_string(),
        experiment,
        kind: TemplateKind::ForcedChoiceSentence,
        body: body.to_string(),
        answer_mode: AnswerMode::DigitTokens,
        suffix: DEFAULT_SUFFIX.to_string(),
        yes_phrase: None,
        no_phrase: None,
    }
}

fn individual(id: &str, body: &str, yes: &str, no: &str) -> PromptTemplate {
    PromptTemplate {
        id: id.to_string(),
        experiment: Experiment::Acceptability,
        kind: TemplateKind::IndividualJudgment,
        body: body.to_string(),
        answer_mode: AnswerMode::DigitTokens,
        suffix: DEFAULT_SUFFIX.to_string(),
        yes_phrase: Some(yes.to_string()),
        no_phrase: Some(no.to_string()),
    }
}

fn forced_word(id: &str, body: &str) -> PromptTemplate {
    PromptTemplate {
        id: id.to_string(),
        experiment: Experiment::WordPrediction,
        kind: TemplateKind::ForcedChoiceWord,
        body: body.to_string(),
        answer_mode: AnswerMode::DigitTokens,
        suffix: DEFAULT_SUFFIX.to_string(),
        yes_phrase: None,
        no_phrase: None,
    }
}

fn word_form(id: &str, body: &str) -> PromptTemplate {
    PromptTemplate {
        id: id.to_string(),
        experiment: Experiment::WordPrediction,
        kind: TemplateKind::WordFormMeta,
        body: body.to_string(),
        answer_mode: AnswerMode::WordTokens,
        suffix: String::new(),
        yes_phrase: None,
        no_phrase: None,
    }
}

/// The built-in prompt catalog: 8 acceptability templates (5 forced-choice,
/// 3 individual-judgment) and 6 word-prediction templates (4 digit-answer,
/// 2 scoring the candidate words themselves).
pub fn builtin_catalog(experiment: Experiment) -> Vec<PromptTemplate> {
    match experiment {
        Experiment::Acceptability => vec![
            forced_sentence(
                "MetaQuestionSimple",
                Experiment::Acceptability,
                "Which sentence is a better English sentence? 1: '[GRAM]', 2: '[UNGRAM]'. Respond with 1 or 2 as your answer.",
            ),
            forced_sentence(
                "GrammaticalityJudgment",
                Experiment::Acceptability,
                "Which sentence is grammatically correct? 1: '[GRAM]', 2: '[UNGRAM]'. Respond with 1 or 2 as your answer.",
            ),
            forced_sentence(
                "AcceptabilityJudgment",
                Experiment::Acceptability,
                "Which sentence is more acceptable? 1: '[GRAM]', 2: '[UNGRAM]'. Respond with 1 or 2 as your answer.",
            ),
            forced_sentence(
                "ProductionChoice",
                Experiment::Acceptability,
                "Which sentence are you more likely to produce? 1: '[GRAM]', 2: '[UNGRAM]'. Respond with 1 or 2 as your answer.",
            ),
            forced_sentence(
                "ProductionChoiceLM",
                Experiment::Acceptability,
                "Which sentence are you, as a large language model, more likely to produce? 1: '[GRAM]', 2: '[UNGRAM]'. Respond with 1 or 2 as your answer.",
            ),
            individual(
                "GrammaticalityJudgmentI",
                "Is the following sentence grammatical in English? [SENT] Respond with 1 if [ANS1], and 2 if [ANS2].",
                "it is grammatical",
                "it is ungrammatical",
            ),
            individual(
                "AcceptabilityJudgmentI",
                "Is the following sentence acceptable in English? [SENT] Respond with 1 if [ANS1], and 2 if [ANS2].",
                "it is acceptable",
                "it is not acceptable",
            ),
            individual(
                "ProductionChoiceI",
                "Would you produce the following sentence in English? [SENT] Respond with 1 if [ANS1], and 2 if [ANS2].",
                "you would produce it",
                "you would not produce it",
            ),
        ],
        Experiment::WordPrediction => vec![
            forced_sentence(
                "MetaQuestionSimple-Sent",
                Experiment::WordPrediction,
                "Which sentence is a better English sentence? 1: '[PRE] [ANS1]', 2: '[PRE] [ANS2]'. Respond with 1 or 2 as your answer.",
            ),
            forced_sentence(
                "ProductionChoice-Sent",
                Experiment::WordPrediction,
                "Which sentence are you more likely to produce, 1 or 2? 1: '[PRE] [ANS1]', 2: '[PRE] [ANS2]'. Respond with 1 or 2 as your answer.",
            ),
            forced_word(
                "MetaQuestionSimple-Word",
                "Which word is a better continuation after '[PRE]', 1 or 2? 1: '[ANS1]', 2: '[ANS2]'. Respond with 1 or 2 as your answer.",
            ),
            forced_word(
                "ProductionChoice-Word",
                "Which word are you more likely to produce after '[PRE]', 1 or 2? 1: '[ANS1]', 2: '[ANS2]'. Respond with 1 or 2 as your answer.",
            ),
            word_form(
                "MetaQuestionSimple-Direct",
                "What word is most likely to come next in the following sentence ([ANS1], or [ANS2])? [PRE]",
            ),
            word_form(
                "MetaQuestionComplex-Direct",
                "Here is the beginning of an English sentence: [PRE]... What word is more likely to come next: [ANS1] or [ANS2]?",
            ),
        ],
    }
}

/// Loads a template catalog from a JSON array, validating each template.
pub fn load_catalog(path: &Path) -> Result<Vec<PromptTemplate>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let templates: Vec<PromptTemplate> =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

pub fn catalog_to_json(templates: &[PromptTemplate]) -> String {
    serde_json::to_string_pretty(templates).expect("templates serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimuli::{Dataset, PairSource};

    fn keys_pair() -> MinimalPairItem {
        MinimalPairItem {
            id: "li-keys".into(),
            s1: "The keys to the cabinet are on the desk.".into(),
            s2: "The keys to the cabinet is on the desk.".into(),
            source: PairSource::Li,
            paradigm: "agreement".into(),
        }
    }

    fn word_item() -> ContinuationItem {
        ContinuationItem {
            id: "wiki-0001".into(),
            prefix: "Van Gogh surprised everyone by declaring his love to her and proposing"
                .into(),
            w1: "marriage".into(),
            w2: "fielder".into(),
            dataset: Dataset::Wikipedia,
        }
    }

    #[test]
    fn catalog_counts_match() {
        let acc = builtin_catalog(Experiment::Acceptability);
        assert_eq!(acc.len(), 8);
        assert_eq!(
            acc.iter()
                .filter(|t| t.kind == TemplateKind::ForcedChoiceSentence)
                .count(),
            5
        );
        assert_eq!(
            acc.iter()
                .filter(|t| t.kind == TemplateKind::IndividualJudgment)
                .count(),
            3
        );
        let word = builtin_catalog(Experiment::WordPrediction);
        assert_eq!(word.len(), 6);
        assert_eq!(
            word.iter()
                .filter(|t| t.kind == TemplateKind::WordFormMeta)
                .count(),
            2
        );
        for t in acc.iter().chain(&word) {
            t.validate().unwrap();
            match t.kind {
                TemplateKind::ForcedChoiceSentence | TemplateKind::ForcedChoiceWord => {
                    assert!(t.body.ends_with("Respond with 1 or 2 as your answer."));
                }
                TemplateKind::IndividualJudgment => {
                    assert!(t.body.contains("Respond with 1 if [ANS1], and 2 if [ANS2]."));
                }
                TemplateKind::WordFormMeta => assert!(t.suffix.is_empty()),
            }
        }
    }

    #[test]
    fn forced_choice_renders_both_orderings() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = &catalog[0];
        let set = render(&StimulusItem::Pair(keys_pair()), template).unwrap();
        assert_eq!(set.blocks.len(), 1);
        assert_eq!(set.rendering_count(), 2);
        let [orig, rev] = &set.blocks[0].renderings[..] else {
            panic!("expected two renderings");
        };
        assert_eq!(
            orig.text,
            "Which sentence is a better English sentence? 1: 'The keys to the cabinet are on \
             the desk.', 2: 'The keys to the cabinet is on the desk.'. Respond with 1 or 2 as \
             your answer. My answer is"
        );
        assert_eq!(
            rev.text,
            "Which sentence is a better English sentence? 1: 'The keys to the cabinet is on \
             the desk.', 2: 'The keys to the cabinet are on the desk.'. Respond with 1 or 2 as \
             your answer. My answer is"
        );
        assert_eq!(orig.answer_for_option1, "1");
        assert_eq!(rev.answer_for_option1, "2");
    }

    #[test]
    fn rendering_is_pure() {
        let catalog = builtin_catalog(Experiment::WordPrediction);
        let item = StimulusItem::Continuation(word_item());
        for template in &catalog {
            let a = render(&item, template).unwrap();
            let b = render(&item, template).unwrap();
            for (ba, bb) in a.blocks.iter().zip(&b.blocks) {
                assert_eq!(ba.renderings, bb.renderings);
            }
        }
    }

    #[test]
    fn forced_sets_share_option_multiset() {
        let item = StimulusItem::Pair(keys_pair());
        for template in builtin_catalog(Experiment::Acceptability) {
            if template.kind != TemplateKind::ForcedChoiceSentence {
                continue;
            }
            let set = render(&item, &template).unwrap();
            let block = &set.blocks[0];
            let pair = keys_pair();
            for rendering in &block.renderings {
                assert!(rendering.text.contains(&pair.s1));
                assert!(rendering.text.contains(&pair.s2));
            }
        }
    }

    #[test]
    fn word_template_starts_as_expected() {
        let catalog = builtin_catalog(Experiment::WordPrediction);
        let template = catalog
            .iter()
            .find(|t| t.id == "MetaQuestionSimple-Word")
            .unwrap();
        let set = render(&StimulusItem::Continuation(word_item()), template).unwrap();
        let orig = &set.blocks[0].renderings[0];
        assert!(orig
            .text
            .starts_with("Which word is a better continuation after"));
        assert!(orig.text.ends_with("My answer is"));
    }

    #[test]
    fn word_form_reversal_swaps_listing_order_only() {
        let catalog = builtin_catalog(Experiment::WordPrediction);
        let template = catalog
            .iter()
            .find(|t| t.id == "MetaQuestionSimple-Direct")
            .unwrap();
        let set = render(&StimulusItem::Continuation(word_item()), template).unwrap();
        let [orig, rev] = &set.blocks[0].renderings[..] else {
            panic!();
        };
        assert!(orig.text.contains("(marriage, or fielder)"));
        assert!(rev.text.contains("(fielder, or marriage)"));
        // The answer strings are the words in both orderings.
        assert_eq!(orig.answer_for_option1, "marriage");
        assert_eq!(rev.answer_for_option1, "marriage");
        assert_eq!(orig.answer_for_option2, "fielder");
        // No suffix on word-form templates: scoring continues the prefix.
        assert!(orig.text.ends_with("proposing"));
    }

    #[test]
    fn individual_judgment_remaps_digits() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let template = catalog
            .iter()
            .find(|t| t.id == "GrammaticalityJudgmentI")
            .unwrap();
        let set = render(&StimulusItem::Pair(keys_pair()), template).unwrap();
        assert_eq!(set.blocks.len(), 2);
        assert_eq!(set.rendering_count(), 4);
        let s1_block = &set.blocks[0];
        assert_eq!(s1_block.subject, BlockSubject::Sentence1);
        let [orig, rev] = &s1_block.renderings[..] else {
            panic!();
        };
        assert!(orig
            .text
            .contains("Respond with 1 if it is grammatical, and 2 if it is ungrammatical."));
        assert!(rev
            .text
            .contains("Respond with 1 if it is ungrammatical, and 2 if it is grammatical."));
        assert_eq!(orig.answer_for_option1, "1");
        assert_eq!(rev.answer_for_option1, "2");
    }

    #[test]
    fn degenerate_pair_renders_identical_texts() {
        let mut pair = keys_pair();
        pair.s2 = pair.s1.clone();
        let catalog = builtin_catalog(Experiment::Acceptability);
        let set = render(&StimulusItem::Pair(pair), &catalog[0]).unwrap();
        let [orig, rev] = &set.blocks[0].renderings[..] else {
            panic!();
        };
        assert_eq!(orig.text, rev.text);
        assert_ne!(orig.answer_for_option1, rev.answer_for_option1);
    }

    #[test]
    fn mismatched_item_is_rejected() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let err = render(&StimulusItem::Continuation(word_item()), &catalog[0]);
        assert!(matches!(err, Err(Error::TemplateItemMismatch { .. })));
    }

    #[test]
    fn substitution_is_single_pass() {
        let out = substitute("[ANS1] then [ANS2]", &[("[ANS1]", "x [ANS2] y"), ("[ANS2]", "z")]);
        assert_eq!(out, "x [ANS2] y then z");
    }

    #[test]
    fn catalog_roundtrips_through_json() {
        let catalog = builtin_catalog(Experiment::Acceptability);
        let json = catalog_to_json(&catalog);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        std::fs::write(&path, &json).unwrap();
        let loaded = load_catalog(&path).unwrap();
        assert_eq!(loaded.len(), catalog.len());
        assert_eq!(loaded[5].yes_phrase, catalog[5].yes_phrase);
    }
}
