//! End-to-end wiring: extraction, graph construction, prompt generation, and
//! response generation for one dialogue, plus an order-preserving worker
//! pool for batches.

use std::fs;
use std::io::BufReader;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clients::{
    CacheMode, ChatClient, HttpChatClient, HttpSearchClient, ReplayCache, ReplayChatClient,
    ReplaySearchClient, RuleChatClient, RuleSearchClient, SearchClient,
};
use crate::config::{
    ChatBackend, ExtractorKind, PipelineConfig, RelationSelector, SearchBackend, TaskMode,
};
use crate::dialogue::{Dialogue, Window};
use crate::error::{Error, Result};
use crate::extract::{
    validate_slot_values, ConceptMention, Extractor, Lexicon, LexiconExtractor, LlmExtractor,
    LlmExtractorConfig, SlotValue,
};
use crate::inference::{
    assemble_prompt, generate, GenerationRequest, RecommendationResult,
    GENERATION_INTERVIEW_TEMPLATE, GENERATION_RECOMMEND_TEMPLATE,
};
use crate::kg::{load_kg, EntityType, KnowledgeGraph, LoadStats};
use crate::patient_graph::{link_mention, LinkOptions, PatientGraph};
use crate::prompts::{
    kg_verification, llm_reasoning_prompts, load_schemas, match_paths, neighborhood_prompts,
    select_relation_fallback, select_relation_llm, web_search_prompts, PathSchema, PromptBundle,
    VerificationTemplates, RELATION_SELECT_TEMPLATE, REASONING_TEMPLATE, SEARCH_REWRITE_TEMPLATE,
};

pub const DEFAULT_SCHEMAS: &str = include_str!("../schemas/default.json");

/// Per-dialogue extraction output, the stage-one dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionDump {
    pub id: String,
    pub concepts: Vec<ConceptMention>,
    pub slot_values: Vec<SlotValue>,
    pub characteristics: Vec<SlotValue>,
}

/// Intermediate artifacts for one dialogue, dumped under `--trace`.
#[derive(Debug, Clone, Serialize)]
pub struct DialogueTrace {
    pub id: String,
    pub graph: PatientGraph,
    pub bundle: PromptBundle,
    pub assembled_prompt: String,
}

struct EngineTemplates {
    generation: String,
    interview: String,
    reasoning: String,
    rewrite: String,
    relation: String,
    verification: VerificationTemplates,
}

/// A loaded pipeline: knowledge graph, extractor, clients, schemas, and
/// templates, ready to process dialogues concurrently.
pub struct Engine {
    config: PipelineConfig,
    kg: Arc<KnowledgeGraph>,
    kg_stats: LoadStats,
    extractor: Box<dyn Extractor>,
    lexicon: Lexicon,
    chat: Arc<dyn ChatClient>,
    search: Option<Arc<dyn SearchClient>>,
    schemas: Vec<PathSchema>,
    templates: EngineTemplates,
    demonstrations: String,
    candidates: Vec<String>,
    window: Window,
}

fn read_optional(path: &Option<std::path::PathBuf>) -> Result<Option<String>> {
    match path {
        Some(path) => Ok(Some(fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?)),
        None => Ok(None),
    }
}

impl Engine {
    pub fn load(config: PipelineConfig) -> Result<Engine> {
        config.validate()?;
        config.validate_files()?;

        let kg_path = config.paths.kg_triples.as_ref().ok_or_else(|| {
            Error::Config("paths.kg_triples is required to run the pipeline".into())
        })?;
        let triples = fs::File::open(kg_path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", kg_path.display())))?;
        let synonyms = read_optional(&config.paths.kg_synonyms)?;
        let types = read_optional(&config.paths.kg_types)?;
        let (kg, kg_stats) =
            load_kg(BufReader::new(triples), synonyms.as_deref(), types.as_deref())?;
        kg.audit_indices()?;
        let kg = Arc::new(kg);

        let lexicon = match read_optional(&config.paths.lexicon)? {
            Some(json) => Lexicon::from_json(&json)?,
            None => Lexicon::default(),
        };

        let schemas_json = read_optional(&config.paths.schemas)?
            .unwrap_or_else(|| DEFAULT_SCHEMAS.to_string());
        let schemas = load_schemas(&schemas_json)?;

        let demonstrations = read_optional(&config.paths.demonstrations)?.unwrap_or_default();

        let templates = EngineTemplates {
            generation: read_optional(&config.paths.generation_template)?
                .unwrap_or_else(|| GENERATION_RECOMMEND_TEMPLATE.to_string()),
            interview: read_optional(&config.paths.interview_template)?
                .unwrap_or_else(|| GENERATION_INTERVIEW_TEMPLATE.to_string()),
            reasoning: read_optional(&config.paths.reasoning_template)?
                .unwrap_or_else(|| REASONING_TEMPLATE.to_string()),
            rewrite: read_optional(&config.paths.rewrite_template)?
                .unwrap_or_else(|| SEARCH_REWRITE_TEMPLATE.to_string()),
            relation: read_optional(&config.paths.relation_template)?
                .unwrap_or_else(|| RELATION_SELECT_TEMPLATE.to_string()),
            verification: VerificationTemplates {
                exclusion: read_optional(&config.paths.verification_exclusion_template)?
                    .map(|t| t.trim().to_string())
                    .unwrap_or_else(|| {
                        crate::prompts::VERIFICATION_EXCLUSION_TEMPLATE.trim().to_string()
                    }),
                caution: read_optional(&config.paths.verification_caution_template)?
                    .map(|t| t.trim().to_string())
                    .unwrap_or_else(|| {
                        crate::prompts::VERIFICATION_CAUTION_TEMPLATE.trim().to_string()
                    }),
            },
        };

        let candidates = match read_optional(&config.paths.candidates)? {
            Some(text) => text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
            None => kg
                .entities_of_type(EntityType::Medication)
                .into_iter()
                .map(String::from)
                .collect(),
        };

        let cache = Arc::new(ReplayCache::open(
            &config.clients.cache_path,
            config.clients.cache_mode,
        )?);
        let needs_live = config.clients.cache_mode != CacheMode::Replay;

        let chat_replies = read_optional(&config.paths.chat_replies)?;
        let live_chat: Option<Box<dyn ChatClient>> = if needs_live {
            Some(match config.clients.chat_backend {
                ChatBackend::Rule => {
                    let replies = match &chat_replies {
                        Some(json) => serde_json::from_str(json)
                            .map_err(|e| Error::Config(format!("chat_replies: {e}")))?,
                        None => Default::default(),
                    };
                    Box::new(RuleChatClient::with_replies(replies)) as Box<dyn ChatClient>
                }
                ChatBackend::Http => {
                    let endpoint = config.clients.chat_endpoint.clone().ok_or_else(|| {
                        Error::Config("chat_endpoint is required for the http backend".into())
                    })?;
                    let key = std::env::var(&config.clients.api_key_env).ok();
                    Box::new(HttpChatClient::new(endpoint, key)) as Box<dyn ChatClient>
                }
            })
        } else {
            None
        };
        let chat: Arc<dyn ChatClient> =
            Arc::new(ReplayChatClient::new(Arc::clone(&cache), live_chat));

        let search_fixtures = read_optional(&config.paths.search_fixtures)?;
        let search: Option<Arc<dyn SearchClient>> = match config.clients.search_backend {
            SearchBackend::None => None,
            backend => {
                let live_search: Option<Box<dyn SearchClient>> = if needs_live {
                    Some(match backend {
                        SearchBackend::Rule => {
                            let client = match &search_fixtures {
                                Some(json) => RuleSearchClient::from_json(json)
                                    .map_err(|e| Error::Config(e.to_string()))?,
                                None => RuleSearchClient::new(),
                            };
                            Box::new(client) as Box<dyn SearchClient>
                        }
                        SearchBackend::Http => {
                            let endpoint =
                                config.clients.search_endpoint.clone().ok_or_else(|| {
                                    Error::Config(
                                        "search_endpoint is required for the http backend".into(),
                                    )
                                })?;
                            let key = std::env::var(&config.clients.api_key_env).ok();
                            Box::new(HttpSearchClient::new(endpoint, key))
                                as Box<dyn SearchClient>
                        }
                        SearchBackend::None => unreachable!(),
                    })
                } else {
                    None
                };
                Some(Arc::new(ReplaySearchClient::new(cache, live_search)))
            }
        };

        let extractor: Box<dyn Extractor> = match config.clients.extractor {
            ExtractorKind::Lexicon => {
                if lexicon.is_empty() {
                    return Err(Error::Config(
                        "the lexicon extractor needs a non-empty paths.lexicon file".into(),
                    ));
                }
                Box::new(LexiconExtractor::new(lexicon.clone()))
            }
            ExtractorKind::Llm => Box::new(LlmExtractor::new(
                Arc::clone(&chat),
                LlmExtractorConfig {
                    model: config.generation.model.clone(),
                    temperature: config.generation.temperature,
                    max_tokens: config.generation.max_tokens,
                    demonstrations: demonstrations.clone(),
                    ..LlmExtractorConfig::default()
                },
                lexicon.clone(),
                Some(Arc::clone(&kg)),
            )),
        };

        let window = config.effective_window();
        Ok(Engine {
            config,
            kg,
            kg_stats,
            extractor,
            lexicon,
            chat,
            search,
            schemas,
            templates,
            demonstrations,
            candidates,
            window,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        &self.kg
    }

    pub fn kg_stats(&self) -> &LoadStats {
        &self.kg_stats
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Stage one over every patient turn: concept mentions, slot values in
    /// the configured window, and dialogue-level patient characteristics.
    pub fn extract_dialogue(&self, dialogue: &Dialogue) -> Result<ExtractionDump> {
        let mut concepts = Vec::new();
        let mut slot_values = Vec::new();
        for turn in dialogue.patient_turn_indices() {
            for concept in self.extractor.extract_concepts(dialogue, turn)? {
                let values = self.extractor.fill_slots(dialogue, &concept, self.window)?;
                validate_slot_values(&values)?;
                slot_values.extend(values);
                concepts.push(concept);
            }
        }
        let characteristics = self.extractor.extract_patient_characteristics(dialogue)?;
        validate_slot_values(&characteristics)?;
        Ok(ExtractionDump { id: dialogue.id.clone(), concepts, slot_values, characteristics })
    }

    /// Stage two: fold the extraction dump into a patient-centric graph,
    /// linking mentions against the KG.
    pub fn build_graph(&self, dump: &ExtractionDump) -> PatientGraph {
        let mut graph = PatientGraph::new();
        for concept in &dump.concepts {
            let values: Vec<SlotValue> = dump
                .slot_values
                .iter()
                .filter(|sv| sv.concept == *concept)
                .cloned()
                .collect();
            let link = self.link(&concept.surface, concept.category);
            graph.upsert_concept(concept, &values, Some(&link));
        }
        for characteristic in &dump.characteristics {
            let link =
                self.link(&characteristic.concept.surface, characteristic.concept.category);
            graph.upsert_concept(
                &characteristic.concept,
                std::slice::from_ref(characteristic),
                Some(&link),
            );
        }
        graph
    }

    fn link(&self, surface: &str, category: crate::extract::Category) -> crate::patient_graph::LinkDecision {
        // The lexicon's canonical form feeds linking when it knows the surface.
        let key = self.lexicon.canonical(surface).unwrap_or(surface);
        link_mention(
            &self.kg,
            key,
            LinkOptions {
                threshold: self.config.prompts.link_threshold,
                category: Some(category),
            },
        )
    }

    /// Stage three: neighborhood prompts and path-based prompts from the
    /// enabled knowledge sources.
    pub fn generate_prompts(&self, dialogue: &Dialogue, graph: &PatientGraph) -> Result<PromptBundle> {
        let mut bundle = PromptBundle::default();
        let neighborhood = graph.attach_neighborhood(&self.kg);
        let prompts_config = &self.config.prompts;

        if !neighborhood.is_empty() {
            bundle.relation = match prompts_config.relation_selector {
                RelationSelector::Fallback => select_relation_fallback(&neighborhood),
                RelationSelector::Llm => select_relation_llm(
                    self.chat.as_ref(),
                    dialogue,
                    &neighborhood,
                    &self.templates.relation,
                    &self.config.generation.model,
                    self.config.generation.temperature,
                    self.config.generation.max_tokens,
                )?,
            };
            if let Some(selected) = &bundle.relation {
                if selected.used_fallback {
                    bundle
                        .warnings
                        .push("relation selector fell back to fact counting".to_string());
                }
                if prompts_config.enable_np {
                    bundle.neighborhood = neighborhood_prompts(
                        &neighborhood,
                        &selected.relation,
                        prompts_config.k1,
                        &graph.positive_state_concepts(),
                    );
                }
            }
        }

        bundle.matched_paths =
            match_paths(&self.schemas, graph, &neighborhood, &self.kg, prompts_config.k2);

        if prompts_config.enable_kg_verification {
            bundle.kg_verification = kg_verification(
                &self.kg,
                &bundle.matched_paths,
                graph,
                &self.templates.verification,
                prompts_config.emit_confirmations,
            );
            // Per-source budget: no knowledge source exceeds k2 prompts.
            bundle.kg_verification.truncate(prompts_config.k2);
        }
        if prompts_config.enable_llm_reasoning {
            let (prompts, warnings) = llm_reasoning_prompts(
                self.chat.as_ref(),
                &bundle.matched_paths,
                &self.schemas,
                &self.templates.reasoning,
                &self.config.generation.model,
                self.config.generation.temperature,
                self.config.generation.max_tokens,
            )?;
            bundle.llm_reasoning = prompts;
            bundle.llm_reasoning.truncate(prompts_config.k2);
            bundle.warnings.extend(warnings);
        }
        if prompts_config.enable_web_search {
            match &self.search {
                Some(search) => {
                    let (prompts, warnings) = web_search_prompts(
                        search.as_ref(),
                        Some(self.chat.as_ref()),
                        &bundle.matched_paths,
                        &self.schemas,
                        &self.templates.rewrite,
                        prompts_config.web_results_per_query,
                        &self.config.generation.model,
                        self.config.generation.temperature,
                        self.config.generation.max_tokens,
                    );
                    bundle.web_search = prompts;
                    bundle.web_search.truncate(prompts_config.k2);
                    bundle.warnings.extend(warnings);
                }
                None => bundle
                    .warnings
                    .push("web search enabled but no search backend configured".to_string()),
            }
        }
        Ok(bundle)
    }

    fn generation_request(&self, dialogue: &Dialogue, graph: &PatientGraph, bundle: &PromptBundle) -> GenerationRequest {
        let (template, candidates) = match self.config.task {
            TaskMode::Recommend => {
                (self.templates.generation.clone(), Some(self.candidates.clone()))
            }
            TaskMode::Interview => (self.templates.interview.clone(), None),
        };
        GenerationRequest {
            dialogue_history: dialogue.render_history(),
            graph_text: graph.linearize(),
            neighborhood_block: bundle.render_neighborhood_block(),
            path_block: bundle.render_path_block(),
            candidate_medications: candidates,
            demonstrations: self.demonstrations.clone(),
            template,
            model: self.config.generation.model.clone(),
            temperature: self.config.generation.temperature,
            max_tokens: self.config.generation.max_tokens,
        }
    }

    /// Stages one to four for a whole dialogue, returning the result and the
    /// intermediate artifacts.
    pub fn recommend_dialogue(
        &self,
        dialogue: &Dialogue,
    ) -> Result<(RecommendationResult, DialogueTrace)> {
        if !dialogue.ends_with_patient_turn() {
            return Err(Error::Index(format!(
                "dialogue {}: the final turn before generation must be a patient turn",
                dialogue.id
            )));
        }
        let dump = self.extract_dialogue(dialogue)?;
        let graph = self.build_graph(&dump);
        let bundle = self.generate_prompts(dialogue, &graph)?;
        let request = self.generation_request(dialogue, &graph, &bundle);
        let assembled = assemble_prompt(&request)?;
        let mut result = generate(
            self.chat.as_ref(),
            &request,
            self.kg.synonyms(),
            self.config.generation.retries,
            self.config.generation.backoff_ms,
        )?;
        let mut warnings = bundle.warnings.clone();
        warnings.append(&mut result.warnings);
        result.warnings = warnings;
        let trace = DialogueTrace {
            id: dialogue.id.clone(),
            graph,
            bundle,
            assembled_prompt: assembled,
        };
        Ok((result, trace))
    }

}

/// Run `job` over the dialogues with a bounded worker pool. Results come
/// back in input order regardless of completion order.
pub fn run_batch<T, F>(dialogues: &[Dialogue], workers: usize, job: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(&Dialogue) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(dialogues.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..dialogues.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= dialogues.len() {
                    break;
                }
                let outcome = job(&dialogues[index]);
                results.lock().expect("results lock")[index] = Some(outcome);
            });
        }
    });

    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|slot| slot.expect("every index processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_preserves_input_order_across_worker_counts() {
        let dialogues: Vec<Dialogue> = (0..7)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                department: None,
                turns: vec![],
                gold_medications: None,
            })
            .collect();
        let sequential = run_batch(&dialogues, 1, |d| Ok::<String, Error>(d.id.clone()));
        let parallel = run_batch(&dialogues, 4, |d| Ok::<String, Error>(d.id.clone()));
        let ids: Vec<String> = sequential.into_iter().map(|r| r.unwrap()).collect();
        let ids_parallel: Vec<String> = parallel.into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(ids, ids_parallel);
        assert_eq!(ids[0], "d0");
        assert_eq!(ids[6], "d6");
    }

    #[test]
    fn batch_isolates_failures() {
        let dialogues: Vec<Dialogue> = (0..3)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                department: None,
                turns: vec![],
                gold_medications: None,
            })
            .collect();
        let results = run_batch(&dialogues, 2, |d| {
            if d.id == "d1" {
                Err(Error::Generation("poisoned".into()))
            } else {
                Ok(d.id.clone())
            }
        });
        assert!(results[0].is_ok());
        assert!(results[1].is_err());
        assert!(results[2].is_ok());
    }
}
