//! Model metadata and the five-level pair-similarity taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a model is a pretrained base or an instruction-tuned variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Instruct,
}

/// Metadata for one model under evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCard {
    pub id: String,
    pub family: String,
    /// Parameter count in billions.
    pub size_params: f64,
    pub variant: Variant,
    /// Shared by models that differ only in random initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_group: Option<String>,
    /// Id of the base model this instruct model was tuned from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_cutoff: Option<NaiveDate>,
}

/// Similarity category of an ordered model pair, from highest to lowest
/// expected similarity. Categories are mutually exclusive: the first
/// matching rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationCategory {
    #[serde(rename = "self")]
    SelfPair,
    SeedVariant,
    BaseInstruct,
    SameFamily,
    Other,
}

impl RelationCategory {
    /// All categories in decreasing-similarity order.
    pub const ALL: [RelationCategory; 5] = [
        RelationCategory::SelfPair,
        RelationCategory::SeedVariant,
        RelationCategory::BaseInstruct,
        RelationCategory::SameFamily,
        RelationCategory::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationCategory::SelfPair => "self",
            RelationCategory::SeedVariant => "seed_variant",
            RelationCategory::BaseInstruct => "base_instruct",
            RelationCategory::SameFamily => "same_family",
            RelationCategory::Other => "other",
        }
    }

    pub fn non_self_names() -> [&'static str; 4] {
        ["seed_variant", "base_instruct", "same_family", "other"]
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Validated, immutable collection of model cards.
#[derive(Debug, Clone)]
pub struct Registry {
    cards: Vec<ModelCard>,
    by_id: BTreeMap<String, usize>,
}

impl Registry {
    pub fn from_cards(cards: Vec<ModelCard>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, card) in cards.iter().enumerate() {
            if !(card.size_params > 0.0) {
                return Err(Error::InvalidModelCard {
                    model: card.id.clone(),
                    reason: format!("size_params must be positive, got {}", card.size_params),
                });
            }
            if by_id.insert(card.id.clone(), i).is_some() {
                return Err(Error::DuplicateModelId(card.id.clone()));
            }
        }
        let registry = Registry { cards, by_id };
        registry.check_base_links()?;
        registry.check_seed_groups()?;
        Ok(registry)
    }

    fn check_base_links(&self) -> Result<()> {
        for card in &self.cards {
            let Some(base_id) = &card.base_id else {
                continue;
            };
            let Some(base) = self.get(base_id) else {
                return Err(Error::DanglingBaseId {
                    model: card.id.clone(),
                    base_id: base_id.clone(),
                });
            };
            if base.variant != Variant::Base {
                return Err(Error::InvalidBaseLink {
                    model: card.id.clone(),
                    base_id: base_id.clone(),
                    reason: "referenced model is not a base variant".into(),
                });
            }
            if base.family != card.family {
                return Err(Error::InvalidBaseLink {
                    model: card.id.clone(),
                    base_id: base_id.clone(),
                    reason: format!(
                        "family mismatch: `{}` vs `{}`",
                        card.family, base.family
                    ),
                });
            }
        }
        Ok(())
    }

    fn check_seed_groups(&self) -> Result<()> {
        let mut groups: BTreeMap<&str, &ModelCard> = BTreeMap::new();
        for card in &self.cards {
            let Some(group) = &card.seed_group else {
                continue;
            };
            match groups.get(group.as_str()) {
                None => {
                    groups.insert(group, card);
                }
                Some(first) => {
                    if first.family != card.family
                        || first.size_params != card.size_params
                        || first.variant != card.variant
                    {
                        return Err(Error::SeedGroupMismatch {
                            group: group.clone(),
                            reason: format!(
                                "`{}` and `{}` differ in family, size, or variant",
                                first.id, card.id
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cards(&self) -> &[ModelCard] {
        &self.cards
    }

    pub fn get(&self, id: &str) -> Option<&ModelCard> {
        self.by_id.get(id).map(|&i| &self.cards[i])
    }

    pub fn require(&self, id: &str) -> Result<&ModelCard> {
        self.get(id).ok_or_else(|| Error::Config(format!("unknown model id `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

/// Loads and validates a registry from a JSON array of model cards.
pub fn load_registry(path: &Path) -> Result<Registry> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Registry::from_cards(Vec::new());
    }
    let cards: Vec<ModelCard> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Registry::from_cards(cards)
}

/// Classifies an ordered model pair into exactly one similarity category.
///
/// Rules are checked in order: identical id, shared seed group, a direct
/// base/instruct link in either direction, same family, otherwise `other`.
/// The result is symmetric in its arguments.
pub fn classify_relation(a: &ModelCard, b: &ModelCard) -> RelationCategory {
    if a.id == b.id {
        return RelationCategory::SelfPair;
    }
    if let (Some(ga), Some(gb)) = (&a.seed_group, &b.seed_group) {
        if ga == gb {
            return RelationCategory::SeedVariant;
        }
    }
    let a_based_on_b = a.base_id.as_deref() == Some(b.id.as_str());
    let b_based_on_a = b.base_id.as_deref() == Some(a.id.as_str());
    if a_based_on_b || b_based_on_a {
        return RelationCategory::BaseInstruct;
    }
    if a.family == b.family {
        return RelationCategory::SameFamily;
    }
    RelationCategory::Other
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card(id: &str, family: &str, size: f64, variant: Variant) -> ModelCard {
        ModelCard {
            id: id.into(),
            family: family.into(),
            size_params: size,
            variant,
            seed_group: None,
            base_id: None,
            data_cutoff: None,
        }
    }

    fn seeded(id: &str, family: &str, size: f64, group: &str) -> ModelCard {
        ModelCard {
            seed_group: Some(group.into()),
            ..card(id, family, size, Variant::Base)
        }
    }

    #[test]
    fn classify_follows_precedence() {
        let s1 = seeded("olmo-13b-seed1", "olmo-2", 13.0, "olmo-2-13b");
        let s2 = seeded("olmo-13b-seed2", "olmo-2", 13.0, "olmo-2-13b");
        let qwen_base = card("qwen2.5-7b", "qwen-2.5", 7.0, Variant::Base);
        let qwen_instruct = ModelCard {
            base_id: Some("qwen2.5-7b".into()),
            ..card("qwen2.5-7b-instruct", "qwen-2.5", 7.0, Variant::Instruct)
        };
        let llama = card("llama-3.1-8b", "llama-3.1", 8.0, Variant::Base);

        assert_eq!(classify_relation(&s1, &s1), RelationCategory::SelfPair);
        assert_eq!(classify_relation(&s1, &s2), RelationCategory::SeedVariant);
        assert_eq!(
            classify_relation(&qwen_base, &qwen_instruct),
            RelationCategory::BaseInstruct
        );
        assert_eq!(
            classify_relation(&llama, &qwen_base),
            RelationCategory::Other
        );
        let qwen_other = card("qwen2.5-32b", "qwen-2.5", 32.0, Variant::Base);
        assert_eq!(
            classify_relation(&qwen_base, &qwen_other),
            RelationCategory::SameFamily
        );
    }

    #[test]
    fn classify_is_symmetric_and_total() {
        let cards = vec![
            seeded("a1", "fam-a", 7.0, "ga"),
            seeded("a2", "fam-a", 7.0, "ga"),
            card("b", "fam-a", 13.0, Variant::Base),
            ModelCard {
                base_id: Some("b".into()),
                ..card("b-instruct", "fam-a", 13.0, Variant::Instruct)
            },
            card("c", "fam-c", 1.5, Variant::Base),
        ];
        let mut self_pairs = 0;
        for x in &cards {
            for y in &cards {
                let xy = classify_relation(x, y);
                assert_eq!(xy, classify_relation(y, x));
                if x.id == y.id {
                    assert_eq!(xy, RelationCategory::SelfPair);
                    self_pairs += 1;
                }
            }
        }
        assert_eq!(self_pairs, cards.len());
    }

    #[test]
    fn seed_variants_take_precedence_over_family() {
        let s1 = seeded("m1", "fam", 7.0, "g");
        let s2 = seeded("m2", "fam", 7.0, "g");
        assert_eq!(classify_relation(&s1, &s2), RelationCategory::SeedVariant);
    }

    #[test]
    fn duplicate_id_rejected() {
        let cards = vec![
            card("x", "fam", 1.0, Variant::Base),
            card("x", "fam", 2.0, Variant::Base),
        ];
        assert!(matches!(
            Registry::from_cards(cards),
            Err(Error::DuplicateModelId(_))
        ));
    }

    #[test]
    fn dangling_base_id_rejected() {
        let cards = vec![ModelCard {
            base_id: Some("missing".into()),
            ..card("m", "fam", 1.0, Variant::Instruct)
        }];
        assert!(matches!(
            Registry::from_cards(cards),
            Err(Error::DanglingBaseId { .. })
        ));
    }

    #[test]
    fn inconsistent_seed_group_rejected() {
        let cards = vec![seeded("m1", "fam", 7.0, "g"), seeded("m2", "fam", 13.0, "g")];
        assert!(matches!(
            Registry::from_cards(cards),
            Err(Error::SeedGroupMismatch { .. })
        ));
    }

    #[test]
    fn empty_registry_is_valid() {
        let registry = Registry::from_cards(Vec::new()).unwrap();
        assert!(registry.is_empty());
    }
}
