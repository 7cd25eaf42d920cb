//! Path schemas and pattern matching over the combined patient/KG graph.
//!
//! A schema is an ordered list of edge constraints over node roles. Role
//! strings double as variables: every occurrence of the same role string in
//! one schema binds the same node, and distinct role strings bind distinct
//! nodes. A `#tag` suffix distinguishes two variables of the same role
//! (`concept:disease#a`, `concept:disease#b`).
//!
//! The matchable edge set is the graph's structural edges: patient
//! membership edges plus KG-derived neighborhood edges. Slot-value edges
//! carry state, not structure; they drive ranking and verification instead
//! of pattern positions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::Category;
use crate::kg::{KnowledgeGraph, NeighborhoodView};
use crate::patient_graph::PatientGraph;

/// Whether matched paths feed candidate acquisition or exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaIntent {
    AcquireCandidates,
    ExcludeCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleKind {
    Patient,
    Concept(Category),
    KgEntity,
}

/// A role pattern such as `patient`, `concept:symptom`, or `kg_entity#b`.
/// The full string (tag included) is the variable name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RolePattern {
    raw: String,
    #[serde(skip)]
    kind: RoleKind,
}

impl RolePattern {
    pub fn parse(raw: &str) -> Result<RolePattern> {
        let base = raw.split('#').next().unwrap_or(raw);
        let kind = match base {
            "patient" => RoleKind::Patient,
            "kg_entity" => RoleKind::KgEntity,
            other => match other.strip_prefix("concept:").and_then(Category::parse) {
                Some(category) => RoleKind::Concept(category),
                None => {
                    return Err(Error::schema(
                        "path schema",
                        format!("unknown role pattern {raw:?}"),
                    ))
                }
            },
        };
        Ok(RolePattern { raw: raw.to_string(), kind })
    }

    pub fn variable(&self) -> &str {
        &self.raw
    }

    pub fn kind(&self) -> RoleKind {
        self.kind
    }
}

impl TryFrom<String> for RolePattern {
    type Error = Error;
    fn try_from(raw: String) -> Result<RolePattern> {
        RolePattern::parse(&raw)
    }
}

impl From<RolePattern> for String {
    fn from(p: RolePattern) -> String {
        p.raw
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeConstraint {
    pub source: RolePattern,
    /// Relation name, or `*` for any relation.
    pub relation: String,
    pub target: RolePattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSchema {
    pub id: String,
    pub intent: SchemaIntent,
    pub pattern: Vec<EdgeConstraint>,
    /// Question template with `{N.source}`/`{N.target}` placeholders naming
    /// pattern positions.
    pub query_template: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{(\d+)\.(source|target)\}").unwrap())
}

impl PathSchema {
    pub fn validate(&self) -> Result<()> {
        if self.pattern.is_empty() {
            return Err(Error::schema(
                "path schema",
                format!("schema {:?} has an empty pattern", self.id),
            ));
        }
        let mut saw_placeholder = false;
        for captures in placeholder_re().captures_iter(&self.query_template) {
            saw_placeholder = true;
            let position: usize = captures[1].parse().expect("digits parse");
            if position >= self.pattern.len() {
                return Err(Error::schema(
                    "path schema",
                    format!(
                        "schema {:?} references position {position} but has {} pattern steps",
                        self.id,
                        self.pattern.len()
                    ),
                ));
            }
        }
        // A literal-only template is suspicious but legal; a template with
        // malformed braces referencing nothing is caught here.
        let _ = saw_placeholder;
        Ok(())
    }
}

/// Load and validate a schema file: a JSON list of schemas.
pub fn load_schemas(json: &str) -> Result<Vec<PathSchema>> {
    let schemas: Vec<PathSchema> =
        serde_json::from_str(json).map_err(|e| Error::parse("schema file", e.to_string()))?;
    for schema in &schemas {
        schema.validate()?;
    }
    Ok(schemas)
}

/// One structural edge of the combined graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CombinedEdge {
    pub source: String,
    pub relation: String,
    pub target: String,
    pub from_kg: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeInfo {
    pub is_patient: bool,
    pub category: Option<Category>,
    pub is_kg_entity: bool,
}

/// The matchable view over `G_p` plus its KG neighborhood.
#[derive(Debug, Clone, Default)]
pub struct CombinedGraph {
    pub edges: Vec<CombinedEdge>,
    pub nodes: BTreeMap<String, NodeInfo>,
}

impl CombinedGraph {
    pub fn build(
        graph: &PatientGraph,
        neighborhood: &NeighborhoodView,
        kg: &KnowledgeGraph,
    ) -> CombinedGraph {
        let mut nodes: BTreeMap<String, NodeInfo> = BTreeMap::new();
        for patient in graph.patient_nodes() {
            nodes.entry(patient.clone()).or_default().is_patient = true;
        }
        for (id, concept) in graph.concept_nodes() {
            nodes.entry(id.clone()).or_default().category = Some(concept.category);
        }

        let mut edge_set: BTreeSet<CombinedEdge> = BTreeSet::new();
        for edge in graph.edges() {
            // Only membership edges are structural; slot edges target literals.
            if graph.patient_nodes().contains(&edge.source) {
                edge_set.insert(CombinedEdge {
                    source: edge.source,
                    relation: edge.relation,
                    target: edge.target,
                    from_kg: false,
                });
            }
        }
        for (_, witnesses) in neighborhood.iter() {
            for triple in witnesses {
                nodes.entry(triple.head.clone()).or_default();
                nodes.entry(triple.tail.clone()).or_default();
                edge_set.insert(CombinedEdge {
                    source: triple.head.clone(),
                    relation: triple.relation.clone(),
                    target: triple.tail.clone(),
                    from_kg: true,
                });
            }
        }

        for (name, info) in nodes.iter_mut() {
            info.is_kg_entity = kg.contains_entity(name);
        }

        CombinedGraph { edges: edge_set.into_iter().collect(), nodes }
    }

    fn satisfies(&self, node: &str, kind: RoleKind) -> bool {
        let Some(info) = self.nodes.get(node) else { return false };
        match kind {
            RoleKind::Patient => info.is_patient,
            RoleKind::Concept(category) => info.category == Some(category),
            RoleKind::KgEntity => info.is_kg_entity,
        }
    }
}

/// A schema instantiated against the combined graph: one bound edge per
/// pattern position plus the variable assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPath {
    pub schema_id: String,
    pub schema_index: usize,
    pub intent: SchemaIntent,
    pub bindings: Vec<CombinedEdge>,
    pub variables: BTreeMap<String, String>,
}

impl MatchedPath {
    /// Nodes bound anywhere in the path.
    pub fn bound_nodes(&self) -> BTreeSet<&str> {
        self.bindings
            .iter()
            .flat_map(|e| [e.source.as_str(), e.target.as_str()])
            .collect()
    }

    /// Deterministic render used as a ranking tiebreaker.
    pub fn render(&self) -> String {
        self.bindings
            .iter()
            .map(|e| format!("{} -{}-> {}", e.source, e.relation, e.target))
            .collect::<Vec<_>>()
            .join(" | ")
    }
}

/// Render a schema's query template against a matched path.
pub fn render_query(schema: &PathSchema, path: &MatchedPath) -> String {
    placeholder_re()
        .replace_all(&schema.query_template, |captures: &regex::Captures| {
            let position: usize = captures[1].parse().expect("digits parse");
            let edge = &path.bindings[position];
            match &captures[2] {
                "source" => edge.source.clone(),
                _ => edge.target.clone(),
            }
        })
        .into_owned()
}

/// Every binding of every schema against the combined graph, by backtracking
/// over pattern positions. Same-variable occurrences bind the same node;
/// distinct variables bind distinct nodes. No truncation or ranking here.
pub fn enumerate_paths(schemas: &[PathSchema], graph: &CombinedGraph) -> Vec<MatchedPath> {
    let mut out = Vec::new();
    for (schema_index, schema) in schemas.iter().enumerate() {
        let mut assignment: Vec<CombinedEdge> = Vec::with_capacity(schema.pattern.len());
        let mut variables: BTreeMap<String, String> = BTreeMap::new();
        backtrack(schema, schema_index, graph, 0, &mut assignment, &mut variables, &mut out);
    }
    out
}

fn backtrack(
    schema: &PathSchema,
    schema_index: usize,
    graph: &CombinedGraph,
    position: usize,
    assignment: &mut Vec<CombinedEdge>,
    variables: &mut BTreeMap<String, String>,
    out: &mut Vec<MatchedPath>,
) {
    if position == schema.pattern.len() {
        out.push(MatchedPath {
            schema_id: schema.id.clone(),
            schema_index,
            intent: schema.intent,
            bindings: assignment.clone(),
            variables: variables.clone(),
        });
        return;
    }
    let constraint = &schema.pattern[position];
    for edge in &graph.edges {
        if constraint.relation != "*" && edge.relation != constraint.relation {
            continue;
        }
        if !graph.satisfies(&edge.source, constraint.source.kind())
            || !graph.satisfies(&edge.target, constraint.target.kind())
        {
            continue;
        }
        let mut added: Vec<String> = Vec::new();
        if !bind(variables, &mut added, constraint.source.variable(), &edge.source)
            || !bind(variables, &mut added, constraint.target.variable(), &edge.target)
        {
            for var in added {
                variables.remove(&var);
            }
            continue;
        }
        assignment.push(edge.clone());
        backtrack(schema, schema_index, graph, position + 1, assignment, variables, out);
        assignment.pop();
        for var in added {
            variables.remove(&var);
        }
    }
}

// Same variable -> same node; a node may serve only one variable.
fn bind(
    variables: &mut BTreeMap<String, String>,
    added: &mut Vec<String>,
    variable: &str,
    node: &str,
) -> bool {
    match variables.get(variable) {
        Some(bound) => bound == node,
        None => {
            if variables.values().any(|n| n == node) {
                return false;
            }
            variables.insert(variable.to_string(), node.to_string());
            added.push(variable.to_string());
            true
        }
    }
}

/// Ranking key for matched paths; smaller sorts first.
pub type PathRanker = dyn Fn(&MatchedPath) -> (bool, usize, String) + Sync;

/// The default ranking: paths touching a positive-state concept first, then
/// schema order, then the lexicographic rendering of the bindings.
pub fn default_path_ranker(positive: BTreeSet<String>) -> impl Fn(&MatchedPath) -> (bool, usize, String) + Sync {
    move |path: &MatchedPath| {
        let touches_positive = path.bound_nodes().iter().any(|n| positive.contains(*n));
        (!touches_positive, path.schema_index, path.render())
    }
}

/// Rank all bindings with the default ranker and keep the best `k2`.
pub fn match_paths(
    schemas: &[PathSchema],
    graph: &PatientGraph,
    neighborhood: &NeighborhoodView,
    kg: &KnowledgeGraph,
    k2: usize,
) -> Vec<MatchedPath> {
    let ranker = default_path_ranker(graph.positive_state_concepts());
    match_paths_ranked(schemas, graph, neighborhood, kg, k2, &ranker)
}

/// As [`match_paths`] with a caller-supplied ranking key.
pub fn match_paths_ranked(
    schemas: &[PathSchema],
    graph: &PatientGraph,
    neighborhood: &NeighborhoodView,
    kg: &KnowledgeGraph,
    k2: usize,
    ranker: &PathRanker,
) -> Vec<MatchedPath> {
    let combined = CombinedGraph::build(graph, neighborhood, kg);
    let mut paths = enumerate_paths(schemas, &combined);
    paths.sort_by_cached_key(|path| ranker(path));
    paths.truncate(k2);
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{slots, ConceptMention, SlotValue};
    use crate::kg::{EntityType, Triple};
    use crate::patient_graph::{link_mention, LinkOptions};

    fn schema_json() -> &'static str {
        r#"[
            {
                "id": "treatments-for-conditions",
                "intent": "acquire_candidates",
                "pattern": [
                    {"source": "patient", "relation": "*", "target": "concept:symptom"},
                    {"source": "concept:symptom", "relation": "drug_treatment", "target": "kg_entity"}
                ],
                "query_template": "What medications effectively treat {0.target}?"
            }
        ]"#
    }

    fn toy_kg() -> KnowledgeGraph {
        let triples = vec![
            Triple::new("itching", "drug_treatment", "Loratadine"),
            Triple::new("itching", "drug_treatment", "Calamine"),
        ];
        let types = [
            ("itching".to_string(), EntityType::Symptom),
            ("Loratadine".to_string(), EntityType::Medication),
            ("Calamine".to_string(), EntityType::Medication),
        ]
        .into_iter()
        .collect();
        KnowledgeGraph::from_triples(triples).with_types(types)
    }

    fn graph_with_itching(kg: &KnowledgeGraph) -> PatientGraph {
        let mut g = PatientGraph::new();
        let mention = ConceptMention {
            surface: "itching".into(),
            category: Category::Symptom,
            turn_index: 0,
            char_span: None,
        };
        let sv = SlotValue {
            concept: mention.clone(),
            slot: slots::STATE.into(),
            value: "patient claims positive".into(),
            evidence_turns: BTreeSet::from([0]),
        };
        let link = link_mention(kg, "itching", LinkOptions::default());
        g.upsert_concept(&mention, &[sv], Some(&link));
        g
    }

    #[test]
    fn schema_file_parses_and_validates() {
        let schemas = load_schemas(schema_json()).unwrap();
        assert_eq!(schemas.len(), 1);
        assert_eq!(schemas[0].pattern.len(), 2);
        assert_eq!(schemas[0].intent, SchemaIntent::AcquireCandidates);
    }

    #[test]
    fn out_of_range_placeholder_rejected() {
        let bad = r#"[{
            "id": "bad",
            "intent": "acquire_candidates",
            "pattern": [{"source": "patient", "relation": "*", "target": "kg_entity"}],
            "query_template": "Mentions {3.target}?"
        }]"#;
        assert!(load_schemas(bad).is_err());
    }

    #[test]
    fn unknown_role_rejected() {
        let bad = r#"[{
            "id": "bad",
            "intent": "acquire_candidates",
            "pattern": [{"source": "martian", "relation": "*", "target": "kg_entity"}],
            "query_template": "?"
        }]"#;
        assert!(load_schemas(bad).is_err());
    }

    #[test]
    fn empty_pattern_rejected() {
        let bad = r#"[{
            "id": "bad",
            "intent": "acquire_candidates",
            "pattern": [],
            "query_template": "?"
        }]"#;
        assert!(load_schemas(bad).is_err());
    }

    #[test]
    fn itching_loratadine_path_matches() {
        let kg = toy_kg();
        let g = graph_with_itching(&kg);
        let n = g.attach_neighborhood(&kg);
        let schemas = load_schemas(schema_json()).unwrap();
        let paths = match_paths(&schemas, &g, &n, &kg, 3);
        assert_eq!(paths.len(), 2);
        let meds: BTreeSet<&str> =
            paths.iter().map(|p| p.bindings[1].target.as_str()).collect();
        assert_eq!(meds, BTreeSet::from(["Loratadine", "Calamine"]));
        // Bindings satisfy every constraint against the combined graph.
        for path in &paths {
            assert_eq!(path.bindings[0].source, "patient");
            assert_eq!(path.bindings[0].target, "itching");
            assert_eq!(path.bindings[1].relation, "drug_treatment");
        }
    }

    #[test]
    fn empty_patient_graph_matches_nothing() {
        let kg = toy_kg();
        let g = PatientGraph::new();
        let n = g.attach_neighborhood(&kg);
        let schemas = load_schemas(schema_json()).unwrap();
        assert!(match_paths(&schemas, &g, &n, &kg, 3).is_empty());
    }

    #[test]
    fn truncation_keeps_k2_best() {
        let kg = toy_kg();
        let g = graph_with_itching(&kg);
        let n = g.attach_neighborhood(&kg);
        let schemas = load_schemas(schema_json()).unwrap();
        let all = match_paths(&schemas, &g, &n, &kg, 10);
        let one = match_paths(&schemas, &g, &n, &kg, 1);
        assert_eq!(all.len(), 2);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], all[0]);
        // Deterministic ranking: Calamine sorts before Loratadine.
        assert_eq!(one[0].bindings[1].target, "Calamine");
    }

    #[test]
    fn same_variable_binds_same_node_distinct_variables_distinct_nodes() {
        let kg = toy_kg();
        let g = graph_with_itching(&kg);
        let n = g.attach_neighborhood(&kg);
        let two_meds = r#"[{
            "id": "two-distinct-treatments",
            "intent": "acquire_candidates",
            "pattern": [
                {"source": "concept:symptom", "relation": "drug_treatment", "target": "kg_entity#a"},
                {"source": "concept:symptom", "relation": "drug_treatment", "target": "kg_entity#b"}
            ],
            "query_template": "Compare {0.target} with {1.target}."
        }]"#;
        let schemas = load_schemas(two_meds).unwrap();
        let combined = CombinedGraph::build(&g, &n, &kg);
        let paths = enumerate_paths(&schemas, &combined);
        // Two orderings of (Calamine, Loratadine); never the same node twice.
        assert_eq!(paths.len(), 2);
        for path in &paths {
            assert_ne!(path.bindings[0].target, path.bindings[1].target);
            assert_eq!(path.bindings[0].source, path.bindings[1].source);
        }
    }

    #[test]
    fn query_rendering_substitutes_bound_nodes() {
        let kg = toy_kg();
        let g = graph_with_itching(&kg);
        let n = g.attach_neighborhood(&kg);
        let schemas = load_schemas(schema_json()).unwrap();
        let paths = match_paths(&schemas, &g, &n, &kg, 3);
        let query = render_query(&schemas[0], &paths[0]);
        assert_eq!(query, "What medications effectively treat itching?");
    }

    #[test]
    fn slot_edges_are_not_structural() {
        let kg = toy_kg();
        let g = graph_with_itching(&kg);
        let n = g.attach_neighborhood(&kg);
        let combined = CombinedGraph::build(&g, &n, &kg);
        assert!(combined
            .edges
            .iter()
            .all(|e| e.relation != slots::STATE));
    }
}
