//! Prompt generation from the patient graph and its KG neighborhood:
//! relation-filtered neighborhood prompts plus path-based prompts retrieved
//! from three toggleable knowledge sources (KG verification, LLM reasoning,
//! web search).

mod schema;

pub use schema::{
    default_path_ranker, enumerate_paths, load_schemas, match_paths, match_paths_ranked,
    render_query, CombinedEdge, CombinedGraph, EdgeConstraint, MatchedPath, PathRanker,
    PathSchema, RoleKind, RolePattern, SchemaIntent,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clients::{ChatClient, ChatMessage, ChatRequest, SearchClient, SearchRequest};
use crate::dialogue::Dialogue;
use crate::error::Result;
use crate::extract::Category;
use crate::kg::{relations, KnowledgeGraph, NeighborhoodView, Triple};
use crate::patient_graph::PatientGraph;

pub const REASONING_TEMPLATE: &str = include_str!("../../templates/reasoning.txt");
pub const SEARCH_REWRITE_TEMPLATE: &str = include_str!("../../templates/search_rewrite.txt");
pub const RELATION_SELECT_TEMPLATE: &str = include_str!("../../templates/relation_select.txt");
pub const VERIFICATION_EXCLUSION_TEMPLATE: &str =
    include_str!("../../templates/verification_exclusion.txt");
pub const VERIFICATION_CAUTION_TEMPLATE: &str =
    include_str!("../../templates/verification_caution.txt");

/// Which knowledge source produced a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Neighborhood,
    KgVerification,
    LlmReasoning,
    WebSearch,
}

/// Auditable origin of a prompt's content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFact {
    KgTriple(Triple),
    /// A fact recorded in the patient graph, by canonical name.
    PatientFact(String),
    /// A medication that was checked and produced no conflict.
    CheckedMedication(String),
    Url(String),
    PathBinding { schema_id: String, query: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub text: String,
    pub source_facts: Vec<SourceFact>,
    /// Position after Top-k truncation within this prompt's list.
    pub rank: usize,
}

/// Relation chosen for neighborhood prompting, with a flag set when the
/// model's answer had to be coerced or replaced by the fallback selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedRelation {
    pub relation: String,
    pub used_fallback: bool,
}

/// Deterministic relation selector: the relation with the most facts in the
/// neighborhood, ties broken lexicographically.
pub fn select_relation_fallback(view: &NeighborhoodView) -> Option<SelectedRelation> {
    view.relation_counts()
        .into_iter()
        .max_by(|(ra, ca), (rb, cb)| ca.cmp(cb).then(rb.cmp(ra)))
        .map(|(relation, _)| SelectedRelation { relation, used_fallback: false })
}

/// Ask the model which knowledge type the next response needs. Out-of-set
/// answers are coerced to an available relation when the answer names exactly
/// one, otherwise the fallback selector decides and the result is flagged.
pub fn select_relation_llm(
    client: &dyn ChatClient,
    dialogue: &Dialogue,
    view: &NeighborhoodView,
    template: &str,
    model: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<Option<SelectedRelation>> {
    let available: Vec<String> = view.relation_counts().into_keys().collect();
    if available.is_empty() {
        return Ok(None);
    }
    let prompt = template
        .replace("[Relations]", &available.join(", "))
        .replace("[Context]", &dialogue.render_history());
    let request = ChatRequest {
        model: model.to_string(),
        messages: vec![ChatMessage::user(prompt)],
        temperature,
        max_tokens,
    };
    let answer = client.chat(&request)?;
    let trimmed = answer.trim();
    if let Some(exact) = available.iter().find(|r| r.as_str() == trimmed) {
        return Ok(Some(SelectedRelation { relation: exact.clone(), used_fallback: false }));
    }
    // Coercion: accept when the answer mentions exactly one available relation.
    let mentioned: Vec<&String> = available.iter().filter(|r| trimmed.contains(r.as_str())).collect();
    if mentioned.len() == 1 {
        return Ok(Some(SelectedRelation { relation: mentioned[0].clone(), used_fallback: true }));
    }
    Ok(select_relation_fallback(view).map(|mut s| {
        s.used_fallback = true;
        s
    }))
}

/// Human wording for a relation inside a neighborhood prompt.
pub fn verbalize_relation(relation: &str) -> String {
    match relation {
        relations::DRUG_TREATMENT => "is commonly treated with".to_string(),
        relations::SYMPTOM_OF => "is a symptom of".to_string(),
        relations::CONTRAINDICATION => "is contraindicated with".to_string(),
        relations::INTERACTION => "interacts with".to_string(),
        relations::CAUTION => "requires caution with".to_string(),
        relations::USAGE => "has usage note".to_string(),
        other => other.replace('_', " "),
    }
}

/// Top-k1 neighborhood facts with the selected relation, rendered one prompt
/// per fact. Facts whose head concept is in a claimed-positive state rank
/// first; the rest follow lexicographically.
pub fn neighborhood_prompts(
    view: &NeighborhoodView,
    relation: &str,
    k1: usize,
    positive_concepts: &BTreeSet<String>,
) -> Vec<Prompt> {
    let mut facts: Vec<(&(String, String), &Vec<Triple>)> =
        view.iter().filter(|((r, _), _)| r == relation).collect();
    facts.sort_by_cached_key(|((_, tail), witnesses)| {
        let head = witnesses.first().map(|t| t.head.clone()).unwrap_or_default();
        let positive = witnesses.iter().any(|t| positive_concepts.contains(&t.head));
        (!positive, head, tail.clone())
    });
    facts
        .into_iter()
        .take(k1)
        .enumerate()
        .map(|(rank, ((relation, tail), witnesses))| {
            let head = witnesses.first().map(|t| t.head.as_str()).unwrap_or_default();
            Prompt {
                kind: PromptKind::Neighborhood,
                text: format!("{head} {} {tail}", verbalize_relation(relation)),
                source_facts: witnesses.iter().cloned().map(SourceFact::KgTriple).collect(),
                rank,
            }
        })
        .collect()
}

/// Attribute relations consulted during verification, in check order.
pub const VERIFICATION_ATTRIBUTES: [&str; 4] = [
    relations::CONTRAINDICATION,
    relations::INTERACTION,
    relations::USAGE,
    relations::CAUTION,
];

fn render_verification(template: &str, medication: &str, attribute: &str, conflict: &str) -> String {
    template
        .replace("{medication}", medication)
        .replace("{attribute}", attribute)
        .replace("{conflict}", conflict)
}

/// Verification templates; contraindication and interaction conflicts render
/// with the exclusion wording, usage and caution with the caution wording.
#[derive(Debug, Clone)]
pub struct VerificationTemplates {
    pub exclusion: String,
    pub caution: String,
}

impl Default for VerificationTemplates {
    fn default() -> Self {
        VerificationTemplates {
            exclusion: VERIFICATION_EXCLUSION_TEMPLATE.trim().to_string(),
            caution: VERIFICATION_CAUTION_TEMPLATE.trim().to_string(),
        }
    }
}

/// Medications bound by the matched paths: concept nodes of medication
/// category plus bound KG entities typed as medications.
pub fn bound_medications(paths: &[MatchedPath], graph: &PatientGraph, kg: &KnowledgeGraph) -> BTreeSet<String> {
    let mut meds = BTreeSet::new();
    for path in paths {
        for node in path.bound_nodes() {
            let is_medication_concept = graph
                .concept(node)
                .map(|c| c.category == Category::Medication)
                .unwrap_or(false);
            let is_medication_entity =
                kg.entity_type(node) == Some(crate::kg::EntityType::Medication);
            if is_medication_concept || is_medication_entity {
                meds.insert(node.to_string());
            }
        }
    }
    meds
}

/// Check every bound medication's KG attributes against the patient's
/// recorded facts. A conflict (canonical-name equality after synonym
/// resolution) emits an exclusion or caution prompt; medications with no
/// conflict emit a confirmation prompt only when `emit_confirmations` is set.
pub fn kg_verification(
    kg: &KnowledgeGraph,
    paths: &[MatchedPath],
    graph: &PatientGraph,
    templates: &VerificationTemplates,
    emit_confirmations: bool,
) -> Vec<Prompt> {
    let patient_facts = graph.conflictable_facts();
    let mut prompts = Vec::new();
    for medication in bound_medications(paths, graph, kg) {
        let mut conflicted = false;
        for attribute in VERIFICATION_ATTRIBUTES {
            for value in kg.attribute_facts(&medication, attribute) {
                let canonical = kg.resolve_synonym(&value).unwrap_or(&value).to_string();
                if !patient_facts.contains(&canonical) {
                    continue;
                }
                conflicted = true;
                let template = match attribute {
                    relations::CONTRAINDICATION | relations::INTERACTION => &templates.exclusion,
                    _ => &templates.caution,
                };
                prompts.push(Prompt {
                    kind: PromptKind::KgVerification,
                    text: render_verification(template, &medication, attribute, &canonical),
                    source_facts: vec![
                        SourceFact::KgTriple(Triple::new(
                            medication.clone(),
                            attribute,
                            value.clone(),
                        )),
                        SourceFact::PatientFact(canonical),
                    ],
                    rank: prompts.len(),
                });
            }
        }
        if !conflicted && emit_confirmations {
            prompts.push(Prompt {
                kind: PromptKind::KgVerification,
                text: format!("No recorded conflicts for {medication}."),
                source_facts: vec![SourceFact::CheckedMedication(medication)],
                rank: prompts.len(),
            });
        }
    }
    prompts
}

/// Render each path's query, ask the model for a short suggestion, and wrap
/// the answer as a prompt carrying the originating path. Empty answers are
/// dropped with a warning; transport failures propagate (they are retriable
/// upstream).
pub fn llm_reasoning_prompts(
    client: &dyn ChatClient,
    paths: &[MatchedPath],
    schemas: &[PathSchema],
    template: &str,
    model: &str,
    temperature: f64,
    max_tokens: u32,
) -> Result<(Vec<Prompt>, Vec<String>)> {
    let mut prompts = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let query = render_query(&schemas[path.schema_index], path);
        let prompt_text = template.replace("[Question]", &query);
        let request = ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::user(prompt_text)],
            temperature,
            max_tokens,
        };
        let answer = client.chat(&request)?;
        if answer.trim().is_empty() {
            warnings.push(format!("empty reasoning answer for query {query:?}; prompt dropped"));
            continue;
        }
        prompts.push(Prompt {
            kind: PromptKind::LlmReasoning,
            text: answer.trim().to_string(),
            source_facts: vec![SourceFact::PathBinding {
                schema_id: path.schema_id.clone(),
                query,
            }],
            rank: prompts.len(),
        });
    }
    Ok((prompts, warnings))
}

/// Rewrite each path's query into a search query (model rewrite when a chat
/// client is supplied, otherwise the rendered query itself), run the search,
/// and wrap the top snippets. Search failures skip the path with a warning
/// so generation proceeds without it.
#[allow(clippy::too_many_arguments)]
pub fn web_search_prompts(
    search: &dyn SearchClient,
    rewriter: Option<&dyn ChatClient>,
    paths: &[MatchedPath],
    schemas: &[PathSchema],
    rewrite_template: &str,
    results_per_query: usize,
    model: &str,
    temperature: f64,
    max_tokens: u32,
) -> (Vec<Prompt>, Vec<String>) {
    let mut prompts = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let question = render_query(&schemas[path.schema_index], path);
        let query = match rewriter {
            Some(client) => {
                let request = ChatRequest {
                    model: model.to_string(),
                    messages: vec![ChatMessage::user(
                        rewrite_template.replace("[Question]", &question),
                    )],
                    temperature,
                    max_tokens,
                };
                match client.chat(&request) {
                    Ok(answer) => {
                        let line = answer.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
                        if line.trim().is_empty() { question.clone() } else { line.trim().to_string() }
                    }
                    Err(e) => {
                        warnings.push(format!("query rewrite failed ({e}); using template query"));
                        question.clone()
                    }
                }
            }
            None => question.clone(),
        };
        match search.search(&SearchRequest { query: query.clone(), max_results: results_per_query }) {
            Ok(results) => {
                for result in results {
                    prompts.push(Prompt {
                        kind: PromptKind::WebSearch,
                        text: result.snippet.clone(),
                        source_facts: vec![
                            SourceFact::Url(result.url.clone()),
                            SourceFact::PathBinding {
                                schema_id: path.schema_id.clone(),
                                query: query.clone(),
                            },
                        ],
                        rank: prompts.len(),
                    });
                }
            }
            Err(e) => {
                warnings.push(format!("web search failed for {query:?} ({e}); prompt skipped"));
            }
        }
    }
    (prompts, warnings)
}

/// Everything prompt generation produced for one turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub relation: Option<SelectedRelation>,
    pub neighborhood: Vec<Prompt>,
    pub matched_paths: Vec<MatchedPath>,
    pub kg_verification: Vec<Prompt>,
    pub llm_reasoning: Vec<Prompt>,
    pub web_search: Vec<Prompt>,
    pub warnings: Vec<String>,
}

impl PromptBundle {
    /// Path-based prompts merged in the fixed source order: KG verification,
    /// LLM reasoning, web search.
    pub fn path_prompts(&self) -> Vec<&Prompt> {
        self.kg_verification
            .iter()
            .chain(self.llm_reasoning.iter())
            .chain(self.web_search.iter())
            .collect()
    }

    pub fn render_neighborhood_block(&self) -> String {
        self.neighborhood.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn render_path_block(&self) -> String {
        self.path_prompts().iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}
