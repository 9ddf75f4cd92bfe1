//! Stimulus loading and construction.
//!
//! Minimal pairs are loaded from JSONL. The four word-prediction datasets
//! (wikipedia, news, nonsense, randomseq) are built from sentence-per-line
//! corpora plus a frequency lexicon: the final word of each selected
//! sentence becomes the original continuation, and an alternative word is
//! matched on lemma frequency.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const MIN_WORDS: usize = 8;
pub const MAX_WORDS: usize = 25;
pub const MAX_FINAL_RANK: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Blimp,
    Li,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Wikipedia,
    News,
    Nonsense,
    Randomseq,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::Wikipedia,
        Dataset::News,
        Dataset::Nonsense,
        Dataset::Randomseq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Wikipedia => "wikipedia",
            Dataset::News => "news",
            Dataset::Nonsense => "nonsense",
            Dataset::Randomseq => "randomseq",
        }
    }

    /// Datasets where option 1 (the original word) is the correct answer.
    pub fn has_gold(self) -> bool {
        matches!(self, Dataset::Wikipedia | Dataset::News)
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A sentence pair differing in one feature; `s1` is the grammatical one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimalPairItem {
    pub id: String,
    pub s1: String,
    pub s2: String,
    pub source: PairSource,
    pub paradigm: String,
}

/// A prefix with an original final word `w1` and a frequency-matched
/// alternative `w2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationItem {
    pub id: String,
    pub prefix: String,
    pub w1: String,
    pub w2: String,
    pub dataset: Dataset,
}

impl ContinuationItem {
    pub fn validate(&self) -> Result<()> {
        if self.w1 == self.w2 {
            return Err(Error::InvalidStimulus {
                item: self.id.clone(),
                reason: "w1 and w2 must differ".into(),
            });
        }
        let words = word_count(&self.prefix) + 1;
        if !(MIN_WORDS..=MAX_WORDS).contains(&words) {
            return Err(Error::InvalidStimulus {
                item: self.id.clone(),
                reason: format!(
                    "sentence has {words} words, expected {MIN_WORDS} to {MAX_WORDS}"
                ),
            });
        }
        Ok(())
    }
}

/// A sampled sentence before the alternative word has been matched.
#[derive(Debug, Clone)]
pub struct PrefixItem {
    pub id: String,
    pub prefix: String,
    pub w1: String,
    pub dataset: Dataset,
}

/// Either kind of stimulus, for template rendering.
#[derive(Debug, Clone)]
pub enum StimulusItem {
    Pair(MinimalPairItem),
    Continuation(ContinuationItem),
}

impl StimulusItem {
    pub fn id(&self) -> &str {
        match self {
            StimulusItem::Pair(p) => &p.id,
            StimulusItem::Continuation(c) => &c.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lemma: String,
    pub lemma_freq: f64,
    pub form_freq: f64,
    pub pos_tag: String,
    pub rank: u32,
}

/// Word-frequency lexicon keyed by word form.
#[derive(Debug, Clone)]
pub struct FrequencyLexicon {
    entries: BTreeMap<String, LexiconEntry>,
    by_pos: BTreeMap<String, Vec<String>>,
}

impl FrequencyLexicon {
    pub fn from_entries(entries: BTreeMap<String, LexiconEntry>) -> Result<Self> {
        let mut seen_ranks = BTreeMap::new();
        for (word, entry) in &entries {
            if !(entry.lemma_freq > 0.0) || !(entry.form_freq > 0.0) {
                return Err(Error::InvalidLexicon(format!(
                    "word `{word}` has non-positive frequency"
                )));
            }
            if entry.rank == 0 {
                return Err(Error::InvalidLexicon(format!(
                    "word `{word}` has rank 0; ranks start at 1"
                )));
            }
            if let Some(prev) = seen_ranks.insert(entry.rank, word.clone()) {
                return Err(Error::InvalidLexicon(format!(
                    "rank {} assigned to both `{prev}` and `{word}`",
                    entry.rank
                )));
            }
        }
        let mut by_pos: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (word, entry) in &entries {
            by_pos
                .entry(entry.pos_tag.clone())
                .or_default()
                .push(word.clone());
        }
        Ok(FrequencyLexicon { entries, by_pos })
    }

    /// Parses the tab-separated lexicon format:
    /// word, lemma, lemma_freq, form_freq, pos_tag, rank.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 && line.starts_with("word\t") {
                continue; // optional header
            }
            let parse = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(parse(format!("expected 6 fields, got {}", fields.len())));
            }
            let entry = LexiconEntry {
                lemma: fields[1].to_string(),
                lemma_freq: fields[2]
                    .parse()
                    .map_err(|_| parse(format!("bad lemma_freq `{}`", fields[2])))?,
                form_freq: fields[3]
                    .parse()
                    .map_err(|_| parse(format!("bad form_freq `{}`", fields[3])))?,
                pos_tag: fields[4].to_string(),
                rank: fields[5]
                    .parse()
                    .map_err(|_| parse(format!("bad rank `{}`", fields[5])))?,
            };
            if entries.insert(fields[0].to_string(), entry).is_some() {
                return Err(parse(format!("duplicate word `{}`", fields[0])));
            }
        }
        Self::from_entries(entries)
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words in sorted order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &LexiconEntry)> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e))
    }

    /// Sorted words with rank at most `max_rank`.
    pub fn top_ranked(&self, max_rank: u32) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.rank <= max_rank)
            .map(|(w, _)| w.as_str())
            .collect()
    }

    fn words_with_pos(&self, pos_tag: &str) -> Option<&[String]> {
        self.by_pos.get(pos_tag).map(|v| v.as_slice())
    }
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Final-word normalization: trailing punctuation stripped, case folded.
pub fn normalize_word(token: &str) -> String {
    token
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

fn differs_in_exactly_one_token(s1: &str, s2: &str) -> bool {
    let t1: Vec<&str> = s1.split_whitespace().collect();
    let t2: Vec<&str> = s2.split_whitespace().collect();
    t1.len() == t2.len() && t1.iter().zip(&t2).filter(|(a, b)| a != b).count() == 1
}

/// Loads minimal pairs from JSONL, validating that li-sourced pairs differ
/// in exactly one token. Violations are rejected with a per-item report
/// rather than silently dropped.
pub fn load_minimal_pairs(path: &Path, source: PairSource) -> Result<Vec<MinimalPairItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut violations = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: MinimalPairItem = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if item.source != source {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!(
                    "item `{}` declares a different source than the file",
                    item.id
                ),
            });
        }
        if item.s1 == item.s2 {
            return Err(Error::InvalidStimulus {
                item: item.id.clone(),
                reason: "s1 and s2 must differ".into(),
            });
        }
        if source == PairSource::Li && !differs_in_exactly_one_token(&item.s1, &item.s2) {
            violations.push(item.id.clone());
            continue;
        }
        items.push(item);
    }
    if !violations.is_empty() {
        return Err(Error::MinimalityViolations {
            count: violations.len(),
            ids: violations,
        });
    }
    Ok(items)
}

/// Selects `count` sentences of 8 to 25 words whose final word has lexicon
/// rank at most 8000. The prefix is the sentence minus its final word.
/// Sampling is without replacement and deterministic in `rng_seed`.
pub fn sample_prefix_items(
    corpus: &str,
    lexicon: &FrequencyLexicon,
    dataset: Dataset,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<PrefixItem>> {
    let mut qualifying = Vec::new();
    for line in corpus.lines() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if !(MIN_WORDS..=MAX_WORDS).contains(&tokens.len()) {
            continue;
        }
        let final_word = normalize_word(tokens[tokens.len() - 1]);
        match lexicon.get(&final_word) {
            Some(entry) if entry.rank <= MAX_FINAL_RANK => {}
            _ => continue,
        }
        qualifying.push((tokens[..tokens.len() - 1].join(" "), final_word));
    }
    if qualifying.len() < count {
        return Err(Error::InsufficientSentences {
            available: qualifying.len(),
            requested: count,
        });
    }
    let mut rng = seeding::rng_from(rng_seed);
    let mut picked = rand::seq::index::sample(&mut rng, qualifying.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(i, idx)| {
            let (prefix, w1) = qualifying[idx].clone();
            PrefixItem {
                id: format!("{dataset}-{i:04}"),
                prefix,
                w1,
                dataset,
            }
        })
        .collect())
}

/// Picks the alternative word for `w1`: the lexicon word with a different
/// lemma whose lemma frequency is closest to w1's, ties broken by a
/// deterministic draw.
pub fn match_alternative(
    w1: &str,
    lexicon: &FrequencyLexicon,
    rng_seed: u64,
) -> Result<String> {
    let mut rng = seeding::rng_from(rng_seed);
    match_alternative_with_rng(w1, lexicon, &mut rng)
}

fn match_alternative_with_rng(
    w1: &str,
    lexicon: &FrequencyLexicon,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let target = lexicon
        .get(w1)
        .ok_or_else(|| Error::WordNotInLexicon(w1.to_string()))?;
    let mut best = f64::INFINITY;
    let mut ties: Vec<&str> = Vec::new();
    for (word, entry) in lexicon.entries() {
        if entry.lemma == target.lemma {
            continue;
        }
        let dist = (entry.lemma_freq - target.lemma_freq).abs();
        if dist < best {
            best = dist;
            ties.clear();
            ties.push(word);
        } else if dist == best {
            ties.push(word);
        }
    }
    if ties.is_empty() {
        return Err(Error::InvalidLexicon(format!(
            "no candidate with a lemma different from `{}`",
            target.lemma
        )));
    }
    // `ties` is sorted because lexicon iteration is sorted.
    Ok(ties[rng.gen_range(0..ties.len())].to_string())
}

/// Completes a sampled prefix into a full item by matching the alternative.
pub fn complete_item(
    item: &PrefixItem,
    lexicon: &FrequencyLexicon,
    rng_seed: u64,
) -> Result<ContinuationItem> {
    let w2 = match_alternative(&item.w1, lexicon, rng_seed)?;
    let out = ContinuationItem {
        id: item.id.clone(),
        prefix: item.prefix.clone(),
        w1: item.w1.clone(),
        w2,
        dataset: item.dataset,
    };
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NonsenseReport {
    pub items: usize,
    pub untagged_tokens: usize,
    pub unchanged_items: usize,
}

/// Builds the nonsense dataset by replacing every word of each news
/// sentence with a uniformly drawn lexicon word of the same POS tag.
/// Untagged tokens pass through unchanged and are counted in the report.
pub fn generate_nonsense(
    news_items: &[ContinuationItem],
    lexicon: &FrequencyLexicon,
    rng_seed: u64,
) -> Result<(Vec<ContinuationItem>, NonsenseReport)> {
    let mut report = NonsenseReport::default();
    let mut out = Vec::with_capacity(news_items.len());
    for (i, item) in news_items.iter().enumerate() {
        let mut rng = seeding::rng_for(rng_seed, i as u64);
        let mut tokens: Vec<String> = item
            .prefix
            .split_whitespace()
            .map(str::to_string)
            .collect();
        tokens.push(item.w1.clone());
        let mut replaced_any = false;
        for token in tokens.iter_mut() {
            let key = normalize_word(token);
            let pool = lexicon
                .get(&key)
                .and_then(|e| lexicon.words_with_pos(&e.pos_tag));
            match pool {
                Some(pool) => {
                    *token = pool[rng.gen_range(0..pool.len())].clone();
                    replaced_any = true;
                }
                None => report.untagged_tokens += 1,
            }
        }
        let w1 = tokens.pop().expect("items have at least one token");
        let prefix = tokens.join(" ");
        // A replaced final word is always a lexicon word and gets a fresh
        // frequency-matched alternative; an untagged final word passed
        // through keeps the original pairing.
        let w2 = if lexicon.get(&w1).is_some() {
            match_alternative_with_rng(&w1, lexicon, &mut rng)?
        } else {
            item.w2.clone()
        };
        if !replaced_any {
            report.unchanged_items += 1;
        }
        let nonsense = ContinuationItem {
            id: format!("nonsense-{i:04}"),
            prefix,
            w1,
            w2,
            dataset: Dataset::Nonsense,
        };
        nonsense.validate()?;
        out.push(nonsense);
    }
    report.items = out.len();
    Ok((out, report))
}

/// Generates sequences of 8 to 25 uniformly drawn lexicon words, with the
/// final word drawn from rank <= 8000 and the alternative matched on lemma
/// frequency.
pub fn generate_randomseq(
    lexicon: &FrequencyLexicon,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<ContinuationItem>> {
    let all: Vec<&str> = lexicon.words().collect();
    let top = lexicon.top_ranked(MAX_FINAL_RANK);
    if all.is_empty() || top.is_empty() {
        return Err(Error::InvalidLexicon(
            "lexicon has no words eligible for generation".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = seeding::rng_for(rng_seed, i as u64);
        let len = rng.gen_range(MIN_WORDS..=MAX_WORDS);
        let prefix_words: Vec<&str> = (0..len - 1)
            .map(|_| *all.choose(&mut rng).expect("non-empty lexicon"))
            .collect();
        let w1 = (*top.choose(&mut rng).expect("non-empty top ranks")).to_string();
        let w2 = match_alternative_with_rng(&w1, lexicon, &mut rng)?;
        let item = ContinuationItem {
            id: format!("randomseq-{i:04}"),
            prefix: prefix_words.join(" "),
            w1,
            w2,
            dataset: Dataset::Randomseq,
        };
        item.validate()?;
        out.push(item);
    }
    Ok(out)
}

/// Writes continuation items as JSONL with fields {id, prefix, w1, w2, dataset}.
pub fn write_continuation_items(path: &Path, items: &[ContinuationItem]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("item serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_continuation_items(path: &Path) -> Result<Vec<ContinuationItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ContinuationItem = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_minimal_pairs(path: &Path, items: &[MinimalPairItem]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).expect("item serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
