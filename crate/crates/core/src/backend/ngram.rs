//! Additive-smoothing n-gram language model.
//!
//! A deterministic desk-scale stand-in for LLM backends:
//! P(w | context) = (count + alpha) / (context_total + alpha * |V|),
//! where V is the corpus vocabulary. Unknown words map to a reserved
//! symbol scored as a zero-count event; the left edge is padded with
//! order-1 padding tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreBackend, ScoreRequest, ScoreResponse};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<s>";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    words: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab: BTreeSet<String>,
    /// Context tokens joined with a space -> word counts after it.
    counts: BTreeMap<String, ContextCounts>,
}

impl NGramModel {
    /// Trains on sentence-per-line text with (order-1)-token left padding.
    pub fn train(corpus: &str, order: usize, alpha: f64) -> Result<Self, BackendError> {
        if order < 1 {
            return Err(BackendError::InvalidRequest("order must be >= 1".into()));
        }
        if !(alpha > 0.0) {
            return Err(BackendError::InvalidRequest("alpha must be > 0".into()));
        }
        let mut vocab = BTreeSet::new();
        let mut counts: BTreeMap<String, ContextCounts> = BTreeMap::new();
        let mut any = false;
        for line in corpus.lines() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            any = true;
            for t in &tokens {
                vocab.insert((*t).to_string());
            }
            let mut window: Vec<&str> = vec![PAD; order - 1];
            for token in &tokens {
                let ctx = window.join(" ");
                let entry = counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.words.entry((*token).to_string()).or_insert(0) += 1;
                if order > 1 {
                    window.remove(0);
                    window.push(token);
                }
            }
        }
        if !any {
            return Err(BackendError::InvalidRequest("corpus is empty".into()));
        }
        Ok(NGramModel {
            order,
            alpha,
            vocab,
            counts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(|s| s.as_str())
    }

    fn map_token<'a>(&'a self, token: &'a str) -> &'a str {
        if self.vocab.contains(token) {
            token
        } else {
            UNK
        }
    }

    /// ln P(word | context). `context` must already hold order-1 tokens
    /// (padding and unknown mapping applied).
    fn word_logprob(&self, context: &[&str], word: &str) -> f64 {
        let ctx_key = context.join(" ");
        let v = self.vocab.len() as f64;
        let (count, total) = match self.counts.get(&ctx_key) {
            Some(cc) => (
                cc.words.get(self.map_token(word)).copied().unwrap_or(0),
                cc.total,
            ),
            None => (0, 0),
        };
        ((count as f64 + self.alpha) / (total as f64 + self.alpha * v)).ln()
    }

    /// ln P(continuation | prefix), whitespace tokenization. An empty
    /// prefix scores the continuation as a full left-padded sequence.
    pub fn conditional_logprob(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<(f64, String, u32), BackendError> {
        let cont_tokens: Vec<&str> = continuation.split_whitespace().collect();
        if cont_tokens.is_empty() {
            return Err(BackendError::InvalidRequest(
                "continuation must contain at least one token".into(),
            ));
        }
        let mut window: Vec<&str> = vec![PAD; self.order.saturating_sub(1)];
        for token in prefix.split_whitespace() {
            self.push_window(&mut window, token);
        }
        let mut logprob = 0.0;
        for token in &cont_tokens {
            logprob += self.word_logprob(&window, token);
            self.push_window(&mut window, token);
        }
        Ok((logprob, cont_tokens.join(" "), cont_tokens.len() as u32))
    }

    fn push_window<'a>(&'a self, window: &mut Vec<&'a str>, token: &'a str) {
        if self.order > 1 {
            window.remove(0);
            window.push(self.map_token(token));
        }
    }

    /// Sum of P(w | context) over the vocabulary; 1 for every context.
    pub fn context_probability_mass(&self, context_words: &[&str]) -> f64 {
        let mut window: Vec<&str> = vec![PAD; self.order.saturating_sub(1)];
        for token in context_words {
            self.push_window(&mut window, token);
        }
        self.vocab
            .iter()
            .map(|w| self.word_logprob(&window, w).exp())
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, json)
            .map_err(|e| BackendError::CacheIo(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::CacheIo(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("bad model file {}: {e}", path.display())))
    }
}

/// Drops roughly `drop_fraction` of corpus lines by a seeded per-line draw.
/// Seed variants of one corpus share almost all their training data.
pub fn subsample_corpus_lines(corpus: &str, drop_fraction: f64, seed: u64) -> String {
    let mut rng = crate::seeding::rng_from(seed);
    let mut out = String::with_capacity(corpus.len());
    for line in corpus.lines() {
        let drop = rng.gen::<f64>() < drop_fraction;
        if !drop && !line.trim().is_empty() {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// Backend binding for one n-gram model. `chat_wrap` is accepted and
/// ignored: a plain LM has no chat template.
pub struct NGramBackend {
    model: NGramModel,
}

impl NGramBackend {
    pub fn new(model: NGramModel) -> Self {
        NGramBackend { model }
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }
}

impl ScoreBackend for NGramBackend {
    fn conditional_logprob(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let (logprob, scored_variant, token_count) = self
            .model
            .conditional_logprob(&req.prefix, &req.continuation)?;
        Ok(ScoreResponse {
            logprob,
            scored_variant,
            token_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigram_matches_hand_count() {
        // Bigrams of "a b a b a c": a->b twice, a->c once, so with alpha=1
        // and |V|=3, P(b|a) = (2+1)/(3+3) = 0.5.
        let model = NGramModel::train("a b a b a c", 2, 1.0).unwrap();
        assert_eq!(model.vocab_size(), 3);
        let (lp, variant, tokens) = model.conditional_logprob("a", "b").unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        assert!((lp - (-0.6931)).abs() < 1e-4);
        assert_eq!(variant, "b");
        assert_eq!(tokens, 1);
    }

    #[test]
    fn unigram_closed_form() {
        let alpha = 0.7;
        let model = NGramModel::train("a a a", 1, alpha).unwrap();
        let (lp, _, _) = model.conditional_logprob("", "a").unwrap();
        let expected = ((3.0 + alpha) / (3.0 + alpha * 1.0)).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn distributions_normalize_per_context() {
        let model = NGramModel::train("a b a b a c\nc a b b c a", 2, 0.5).unwrap();
        for ctx in [&[][..], &["a"][..], &["b"][..], &["zzz"][..]] {
            let mass = model.context_probability_mass(ctx);
            assert!(
                (mass - 1.0).abs() < 1e-12,
                "context {ctx:?} sums to {mass}"
            );
        }
    }

    #[test]
    fn chain_rule_holds() {
        let model = NGramModel::train("a b c a b d\nb c d a", 3, 0.25).unwrap();
        let (whole, _, _) = model.conditional_logprob("a", "b c d").unwrap();
        let (first, _, _) = model.conditional_logprob("a", "b").unwrap();
        let (second, _, _) = model.conditional_logprob("a b", "c d").unwrap();
        assert!((whole - (first + second)).abs() < 1e-9);
    }

    #[test]
    fn save_load_roundtrip_scores_identically() {
        let model = NGramModel::train("the cat sat\nthe dog sat\na cat ran", 2, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = NGramModel::load(&path).unwrap();
        for (prefix, cont) in [("the", "cat"), ("", "the cat sat"), ("a dog", "ran")] {
            let (a, _, _) = model.conditional_logprob(prefix, cont).unwrap();
            let (b, _, _) = loaded.conditional_logprob(prefix, cont).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unigram_counts_are_line_order_invariant() {
        let a = NGramModel::train("x y\nz w\nq r", 1, 1.0).unwrap();
        let b = NGramModel::train("q r\nx y\nz w", 1, 1.0).unwrap();
        for word in ["x", "y", "z", "w", "q", "r", "missing"] {
            let (la, _, _) = a.conditional_logprob("", word).unwrap();
            let (lb, _, _) = b.conditional_logprob("", word).unwrap();
            assert_eq!(la.to_bits(), lb.to_bits());
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            NGramModel::train("\n  \n", 2, 1.0),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn subsampling_is_deterministic_and_small() {
        let corpus: String = (0..1000).map(|i| format!("line {i}\n")).collect();
        let a = subsample_corpus_lines(&corpus, 0.01, 42);
        let b = subsample_corpus_lines(&corpus, 0.01, 42);
        assert_eq!(a, b);
        let kept = a.lines().count();
        assert!(kept < 1000 && kept > 950, "kept {kept}");
        let c = subsample_corpus_lines(&corpus, 0.01, 43);
        assert_ne!(a, c);
    }
}
