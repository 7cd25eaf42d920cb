//! Pipeline configuration: a TOML document holding every knob an experiment
//! needs, so a run differs from another by one file diff. Defaults cover the
//! built-in templates and schemas; flags on the command line override the
//! most common fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clients::CacheMode;
use crate::dialogue::Window;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    #[default]
    Recommend,
    Interview,
}

impl TaskMode {
    pub fn parse(s: &str) -> Option<TaskMode> {
        match s {
            "recommend" => Some(TaskMode::Recommend),
            "interview" => Some(TaskMode::Interview),
            _ => None,
        }
    }
}

/// Context window radius: a number of turn pairs or `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSetting(pub Option<usize>);

impl WindowSetting {
    pub fn to_window(self) -> Window {
        match self.0 {
            Some(k) => Window::Radius(k),
            None => Window::Unbounded,
        }
    }
}

impl Serialize for WindowSetting {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(k) => serializer.serialize_u64(k as u64),
            None => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowSetting {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Radius(usize),
            Named(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Radius(k) => Ok(WindowSetting(Some(k))),
            Raw::Named(s) if s == "unbounded" => Ok(WindowSetting(None)),
            Raw::Named(s) => Err(D::Error::custom(format!(
                "window k must be a number or \"unbounded\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub kg_triples: Option<PathBuf>,
    pub kg_synonyms: Option<PathBuf>,
    pub kg_types: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub schemas: Option<PathBuf>,
    pub demonstrations: Option<PathBuf>,
    /// Candidate medication list, one per line. Defaults to every
    /// medication-typed KG entity.
    pub candidates: Option<PathBuf>,
    pub generation_template: Option<PathBuf>,
    pub interview_template: Option<PathBuf>,
    pub reasoning_template: Option<PathBuf>,
    pub rewrite_template: Option<PathBuf>,
    pub relation_template: Option<PathBuf>,
    pub verification_exclusion_template: Option<PathBuf>,
    pub verification_caution_template: Option<PathBuf>,
    /// Canned search results for the offline rule backend.
    pub search_fixtures: Option<PathBuf>,
    /// Canned replies for the offline rule chat backend.
    pub chat_replies: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Radius in patient/doctor pairs; resolved per task when absent.
    pub k: Option<WindowSetting>,
    /// Absolute cap on utterances per window.
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationSelector {
    Fallback,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsConfig {
    pub k1: usize,
    pub k2: usize,
    pub link_threshold: f64,
    pub enable_np: bool,
    pub enable_kg_verification: bool,
    pub enable_llm_reasoning: bool,
    pub enable_web_search: bool,
    pub relation_selector: RelationSelector,
    pub web_results_per_query: usize,
    /// Emit pass-through confirmation prompts for conflict-free medications.
    pub emit_confirmations: bool,
}

impl Default for PromptsConfig {
    fn default() -> Self {
        PromptsConfig {
            k1: 3,
            k2: 3,
            link_threshold: 0.8,
            enable_np: true,
            enable_kg_verification: true,
            enable_llm_reasoning: true,
            enable_web_search: true,
            relation_selector: RelationSelector::Fallback,
            web_results_per_query: 1,
            emit_confirmations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: "default".into(),
            temperature: 0.2,
            max_tokens: 1024,
            retries: 2,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatBackend {
    Http,
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchBackend {
    Http,
    Rule,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientsConfig {
    pub cache_mode: CacheMode,
    pub cache_path: PathBuf,
    pub chat_backend: ChatBackend,
    pub chat_endpoint: Option<String>,
    pub search_backend: SearchBackend,
    pub search_endpoint: Option<String>,
    /// Environment variable holding the bearer token for live clients.
    pub api_key_env: String,
    /// Which extractor implementation drives stage one.
    pub extractor: ExtractorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Lexicon,
    Llm,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        ClientsConfig {
            cache_mode: CacheMode::Replay,
            cache_path: PathBuf::from("cache.jsonl"),
            chat_backend: ChatBackend::Rule,
            chat_endpoint: None,
            search_backend: SearchBackend::Rule,
            search_endpoint: None,
            api_key_env: "MEDIGRAPH_API_KEY".into(),
            extractor: ExtractorKind::Lexicon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub workers: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub mode: crate::eval::EvalMode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub task: TaskMode,
    pub paths: PathsConfig,
    pub window: WindowConfig,
    pub prompts: PromptsConfig,
    pub generation: GenerationConfig,
    pub clients: ClientsConfig,
    pub output: OutputConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        // Relative paths resolve against the config file's directory.
        if let Some(base) = path.parent() {
            config.anchor_paths(base);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        let paths = &mut self.paths;
        for field in [
            &mut paths.kg_triples,
            &mut paths.kg_synonyms,
            &mut paths.kg_types,
            &mut paths.lexicon,
            &mut paths.schemas,
            &mut paths.demonstrations,
            &mut paths.candidates,
            &mut paths.generation_template,
            &mut paths.interview_template,
            &mut paths.reasoning_template,
            &mut paths.rewrite_template,
            &mut paths.relation_template,
            &mut paths.verification_exclusion_template,
            &mut paths.verification_caution_template,
            &mut paths.search_fixtures,
            &mut paths.chat_replies,
        ] {
            anchor(field);
        }
        if self.clients.cache_path.is_relative() {
            self.clients.cache_path = base.join(&self.clients.cache_path);
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// Structural validation independent of the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.prompts.k1 < 1 || self.prompts.k2 < 1 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        if self.prompts.web_results_per_query < 1 {
            return Err(Error::Config("web_results_per_query must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.prompts.link_threshold) {
            return Err(Error::Config("link_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=2.0).contains(&self.generation.temperature) {
            return Err(Error::Config("temperature must lie in [0, 2]".into()));
        }
        if self.output.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Check that every configured file exists. Run by commands that will
    /// actually read them.
    pub fn validate_files(&self) -> Result<()> {
        let check = |label: &str, path: &Option<PathBuf>| -> Result<()> {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{label} path {} does not exist",
                        path.display()
                    )));
                }
            }
            Ok(())
        };
        check("kg_triples", &self.paths.kg_triples)?;
        check("kg_synonyms", &self.paths.kg_synonyms)?;
        check("kg_types", &self.paths.kg_types)?;
        check("lexicon", &self.paths.lexicon)?;
        check("schemas", &self.paths.schemas)?;
        check("demonstrations", &self.paths.demonstrations)?;
        check("candidates", &self.paths.candidates)?;
        check("generation_template", &self.paths.generation_template)?;
        check("interview_template", &self.paths.interview_template)?;
        check("reasoning_template", &self.paths.reasoning_template)?;
        check("rewrite_template", &self.paths.rewrite_template)?;
        check("relation_template", &self.paths.relation_template)?;
        check("verification_exclusion_template", &self.paths.verification_exclusion_template)?;
        check("verification_caution_template", &self.paths.verification_caution_template)?;
        check("search_fixtures", &self.paths.search_fixtures)?;
        check("chat_replies", &self.paths.chat_replies)?;
        Ok(())
    }

    /// Effective window radius: configured value, otherwise radius 1 for
    /// recommendation and unbounded for interviewing.
    pub fn effective_window(&self) -> Window {
        match self.window.k {
            Some(setting) => setting.to_window(),
            None => match self.task {
                TaskMode::Recommend => Window::Radius(1),
                TaskMode::Interview => Window::Unbounded,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_document() {
        let config = PipelineConfig::from_toml("").unwrap();
        assert_eq!(config.task, TaskMode::Recommend);
        assert_eq!(config.prompts.k1, 3);
        assert_eq!(config.prompts.k2, 3);
        assert_eq!(config.generation.temperature, 0.2);
        assert_eq!(config.clients.cache_mode, CacheMode::Replay);
    }

    #[test]
    fn round_trip_is_equivalent() {
        let toml_text = r#"
            task = "interview"

            [window]
            k = "unbounded"

            [prompts]
            k1 = 2
            enable_web_search = false

            [clients]
            cache_mode = "record"
            chat_backend = "rule"
        "#;
        let config = PipelineConfig::from_toml(toml_text).unwrap();
        let rendered = config.to_toml().unwrap();
        let reparsed = PipelineConfig::from_toml(&rendered).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn window_k_accepts_number_and_unbounded() {
        let numeric = PipelineConfig::from_toml("[window]\nk = 2").unwrap();
        assert_eq!(numeric.effective_window(), Window::Radius(2));
        let unbounded = PipelineConfig::from_toml("[window]\nk = \"unbounded\"").unwrap();
        assert_eq!(unbounded.effective_window(), Window::Unbounded);
        assert!(PipelineConfig::from_toml("[window]\nk = \"infinite\"").is_err());
    }

    #[test]
    fn task_sets_default_window() {
        let recommend = PipelineConfig::from_toml("task = \"recommend\"").unwrap();
        assert_eq!(recommend.effective_window(), Window::Radius(1));
        let interview = PipelineConfig::from_toml("task = \"interview\"").unwrap();
        assert_eq!(interview.effective_window(), Window::Unbounded);
    }

    #[test]
    fn zero_k1_rejected() {
        assert!(PipelineConfig::from_toml("[prompts]\nk1 = 0").is_err());
    }

    #[test]
    fn missing_file_caught_by_validation() {
        let mut config = PipelineConfig::default();
        config.paths.lexicon = Some(PathBuf::from("/nonexistent/lexicon.json"));
        assert!(config.validate_files().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("[prompts]\nk9 = 1").is_err());
    }
}
