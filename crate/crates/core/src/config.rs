//! Run configuration: a TOML file naming the registry, stimulus files,
//! prompt catalog, backend bindings, and run parameters. Relative paths
//! are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::stimuli::{Dataset, PairSource};

pub const CACHE_DIR_ENV: &str = "INTROSPECT_BENCH_CACHE_DIR";

fn default_alpha() -> f64 {
    0.05
}

fn default_threshold() -> f64 {
    0.05
}

fn default_parallelism() -> usize {
    1
}

fn default_count() -> usize {
    1000
}

fn default_order() -> usize {
    2
}

fn default_ngram_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; all generation steps derive per-item streams from it.
    pub rng_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_threshold")]
    pub filter_threshold: f64,
    pub out_dir: PathBuf,
    pub registry: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub stimuli: StimulusPaths,
    #[serde(default)]
    pub build: Option<BuildInputs>,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendBinding>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusPaths {
    #[serde(default)]
    pub minimal_pairs: Vec<MinimalPairFile>,
    pub wikipedia: Option<PathBuf>,
    pub news: Option<PathBuf>,
    pub nonsense: Option<PathBuf>,
    pub randomseq: Option<PathBuf>,
}

impl StimulusPaths {
    pub fn dataset_path(&self, dataset: Dataset) -> Option<&PathBuf> {
        match dataset {
            Dataset::Wikipedia => self.wikipedia.as_ref(),
            Dataset::News => self.news.as_ref(),
            Dataset::Nonsense => self.nonsense.as_ref(),
            Dataset::Randomseq => self.randomseq.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalPairFile {
    pub path: PathBuf,
    pub source: PairSource,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildInputs {
    pub lexicon: PathBuf,
    pub wikipedia_corpus: Option<PathBuf>,
    pub news_corpus: Option<PathBuf>,
    #[serde(default = "default_count")]
    pub count: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    /// Path to a template catalog JSON; the built-in catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Restrict to these template ids.
    pub include: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Ngram,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendBinding {
    pub kind: BackendKind,
    /// Base URL for http backends.
    pub endpoint: Option<String>,
    /// For ngram backends: a trained model JSON (*.json) or a corpus text
    /// file to train on.
    pub artifact: Option<PathBuf>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_ngram_alpha")]
    pub alpha: f64,
    /// Fraction of corpus lines dropped before training; seed variants of
    /// one corpus use the same corpus with different subsample seeds.
    #[serde(default)]
    pub drop_fraction: f64,
    #[serde(default)]
    pub subsample_seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.check()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.out_dir);
        resolve(&mut self.registry);
        for file in &mut self.stimuli.minimal_pairs {
            resolve(&mut file.path);
        }
        for slot in [
            &mut self.stimuli.wikipedia,
            &mut self.stimuli.news,
            &mut self.stimuli.nonsense,
            &mut self.stimuli.randomseq,
        ] {
            if let Some(p) = slot.as_mut() {
                resolve(p);
            }
        }
        if let Some(build) = self.build.as_mut() {
            resolve(&mut build.lexicon);
            if let Some(p) = build.wikipedia_corpus.as_mut() {
                resolve(p);
            }
            if let Some(p) = build.news_corpus.as_mut() {
                resolve(p);
            }
        }
        if let Some(p) = self.prompts.catalog.as_mut() {
            resolve(p);
        }
        for binding in self.backends.values_mut() {
            if let Some(p) = binding.artifact.as_mut() {
                resolve(p);
            }
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return Err(Error::Config(format!(
                "filter_threshold must be in [0, 1], got {}",
                self.filter_threshold
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        for (model, binding) in &self.backends {
            match binding.kind {
                BackendKind::Http => {
                    if binding.endpoint.is_none() {
                        return Err(Error::Config(format!(
                            "http backend for `{model}` needs an endpoint"
                        )));
                    }
                }
                BackendKind::Ngram => {
                    if binding.artifact.is_none() {
                        return Err(Error::Config(format!(
                            "ngram backend for `{model}` needs an artifact"
                        )));
                    }
                }
                BackendKind::Replay => {}
            }
        }
        Ok(())
    }

    /// Effective cache directory: the environment override when set,
    /// otherwise `<out_dir>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.join("cache"),
        }
    }

    /// Every registry model must have exactly one backend binding.
    pub fn validate_bindings(&self, registry: &Registry) -> Result<()> {
        for card in registry.cards() {
            if !self.backends.contains_key(&card.id) {
                return Err(Error::Config(format!(
                    "model `{}` has no backend binding",
                    card.id
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
rng_seed = 7
out_dir = "out"
registry = "registry.json"

[stimuli]
randomseq = "stimuli/randomseq.jsonl"

[backends.m1]
kind = "ngram"
artifact = "corpora/a.txt"
drop_fraction = 0.01
subsample_seed = 3
"#;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.rng_seed, 7);
        assert_eq!(config.alpha, 0.05);
        assert_eq!(config.out_dir, dir.path().join("out"));
        assert_eq!(
            config.backends["m1"].artifact.as_ref().unwrap(),
            &dir.path().join("corpora/a.txt")
        );
    }

    #[test]
    fn rejects_http_binding_without_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(
            &path,
            MINIMAL.replace("kind = \"ngram\"", "kind = \"http\""),
        )
        .unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, format!("{MINIMAL}\nunknown_key = 1\n")).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn missing_seed_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, MINIMAL.replace("rng_seed = 7\n", "")).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn cache_dir_env_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let config = RunConfig::load(&path).unwrap();
        // Without the env var the cache lives under out_dir. The override
        // itself is exercised in the pipeline integration tests to avoid
        // cross-test env races here.
        if std::env::var_os(CACHE_DIR_ENV).is_none() {
            assert_eq!(config.cache_dir(), config.out_dir.join("cache"));
        }
    }
}
