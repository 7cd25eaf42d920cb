//! Patient-centric graph: a patient node, concept nodes built from extracted
//! mentions, slot-value state edges, and links into the knowledge graph.
//!
//! The graph only grows. Slot values are superseded in place, and the
//! superseded edge stays visible through provenance. The version counter
//! advances exactly when an upsert changed something, so prompt caches can
//! check staleness cheaply.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extract::{slots, Category, ConceptMention, SlotValue};
use crate::kg::{EntityType, KnowledgeGraph, NeighborhoodView};

/// Reserved id of the primary patient node.
pub const PRIMARY_PATIENT: &str = "patient";

/// How a mention was resolved against the knowledge graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMethod {
    Exact,
    Synonym,
    EditDistance,
}

/// Outcome of linking one surface form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    pub surface: String,
    pub candidate: Option<String>,
    pub method: LinkMethod,
    /// Normalized similarity in [0, 1]; exact and synonym hits score 1.0.
    pub score: f64,
    pub accepted: bool,
}

impl LinkDecision {
    fn rejected(surface: &str, candidate: Option<String>, score: f64) -> LinkDecision {
        LinkDecision {
            surface: surface.to_string(),
            candidate,
            method: LinkMethod::EditDistance,
            score,
            accepted: false,
        }
    }
}

/// Linking knobs: acceptance threshold and the mention category used to gate
/// edit-distance candidates by entity type.
#[derive(Debug, Clone, Copy)]
pub struct LinkOptions {
    pub threshold: f64,
    pub category: Option<Category>,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { threshold: 0.8, category: None }
    }
}

/// Levenshtein distance over Unicode scalars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut previous: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = previous[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(previous[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

fn similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

// Edit-distance candidates are gated by declared entity type so a symptom
// mention never links to a medication. Untyped (Other) entities stay open to
// every category since real KG schemas leave many entities undeclared.
fn type_compatible(category: Option<Category>, entity_type: EntityType) -> bool {
    match category {
        None => true,
        Some(Category::Medication) => {
            matches!(entity_type, EntityType::Medication | EntityType::Other)
        }
        Some(Category::Disease | Category::Symptom) => matches!(
            entity_type,
            EntityType::Disease | EntityType::Symptom | EntityType::Other
        ),
        Some(Category::PatientCharacteristic) => {
            matches!(entity_type, EntityType::Attribute | EntityType::Other)
        }
    }
}

/// Resolve a mention surface to a canonical KG entity: exact name first, then
/// the synonym table, then the best case-folded edit-distance candidate among
/// type-compatible entities.
pub fn link_mention(kg: &KnowledgeGraph, surface: &str, options: LinkOptions) -> LinkDecision {
    if kg.contains_entity(surface) {
        return LinkDecision {
            surface: surface.to_string(),
            candidate: Some(surface.to_string()),
            method: LinkMethod::Exact,
            score: 1.0,
            accepted: true,
        };
    }
    if let Some(canonical) = kg.resolve_synonym(surface) {
        if kg.contains_entity(canonical) {
            return LinkDecision {
                surface: surface.to_string(),
                candidate: Some(canonical.to_string()),
                method: LinkMethod::Synonym,
                score: 1.0,
                accepted: true,
            };
        }
    }

    let folded = surface.to_lowercase();
    let mut best: Option<(f64, &str)> = None;
    for entity in kg.entities() {
        let entity_type = kg.entity_type(entity).unwrap_or(EntityType::Other);
        if !type_compatible(options.category, entity_type) {
            continue;
        }
        let score = similarity(&folded, &entity.to_lowercase());
        let better = match best {
            None => true,
            // Ties break toward the lexicographically smaller candidate.
            Some((best_score, best_entity)) => {
                score > best_score || (score == best_score && entity < best_entity)
            }
        };
        if better {
            best = Some((score, entity));
        }
    }
    match best {
        Some((score, entity)) if score >= options.threshold => LinkDecision {
            surface: surface.to_string(),
            candidate: Some(entity.to_string()),
            method: LinkMethod::EditDistance,
            score,
            accepted: true,
        },
        Some((score, entity)) => {
            LinkDecision::rejected(surface, Some(entity.to_string()), score)
        }
        None => LinkDecision::rejected(surface, None, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub canonical: String,
    pub category: Category,
    pub linked: bool,
}

/// A current graph edge: patient membership edges point at concept nodes,
/// slot edges point at literal values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub relation: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub edge: GraphEdge,
    pub evidence_turns: BTreeSet<usize>,
    /// Set when a later value replaced this edge.
    pub superseded: bool,
}

/// Membership relation from the patient node, by concept category.
pub fn membership_relation(category: Category) -> &'static str {
    match category {
        Category::Disease => "has_disease",
        Category::Symptom => "has_symptom",
        Category::Medication => "mentions_medication",
        Category::PatientCharacteristic => "has_characteristic",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "GraphWire", from = "GraphWire")]
pub struct PatientGraph {
    patient_nodes: BTreeSet<String>,
    primary_patient: String,
    concept_nodes: BTreeMap<String, ConceptNode>,
    membership_edges: BTreeSet<GraphEdge>,
    // (node, slot) -> current value and evidence
    slot_edges: BTreeMap<(String, String), (String, BTreeSet<usize>)>,
    provenance: Vec<ProvenanceRecord>,
    version: u64,
}

/// Wire form of the graph. Current edges are flattened into one list
/// (membership edges first, then slot edges); the split is recovered on read
/// by whether the edge source is a patient node.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphWire {
    patient_nodes: BTreeSet<String>,
    primary_patient: String,
    concept_nodes: BTreeMap<String, ConceptNode>,
    edges: Vec<WireEdge>,
    provenance: Vec<ProvenanceRecord>,
    version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireEdge {
    source: String,
    relation: String,
    target: String,
    evidence_turns: BTreeSet<usize>,
}

impl From<PatientGraph> for GraphWire {
    fn from(graph: PatientGraph) -> GraphWire {
        let mut edges = Vec::new();
        for edge in &graph.membership_edges {
            let evidence_turns = graph
                .provenance
                .iter()
                .find(|p| p.edge == *edge)
                .map(|p| p.evidence_turns.clone())
                .unwrap_or_default();
            edges.push(WireEdge {
                source: edge.source.clone(),
                relation: edge.relation.clone(),
                target: edge.target.clone(),
                evidence_turns,
            });
        }
        for ((source, relation), (target, evidence_turns)) in &graph.slot_edges {
            edges.push(WireEdge {
                source: source.clone(),
                relation: relation.clone(),
                target: target.clone(),
                evidence_turns: evidence_turns.clone(),
            });
        }
        GraphWire {
            patient_nodes: graph.patient_nodes,
            primary_patient: graph.primary_patient,
            concept_nodes: graph.concept_nodes,
            edges,
            provenance: graph.provenance,
            version: graph.version,
        }
    }
}

impl From<GraphWire> for PatientGraph {
    fn from(wire: GraphWire) -> PatientGraph {
        let mut membership_edges = BTreeSet::new();
        let mut slot_edges = BTreeMap::new();
        for edge in wire.edges {
            if wire.patient_nodes.contains(&edge.source) {
                membership_edges.insert(GraphEdge {
                    source: edge.source,
                    relation: edge.relation,
                    target: edge.target,
                });
            } else {
                slot_edges
                    .insert((edge.source, edge.relation), (edge.target, edge.evidence_turns));
            }
        }
        PatientGraph {
            patient_nodes: wire.patient_nodes,
            primary_patient: wire.primary_patient,
            concept_nodes: wire.concept_nodes,
            membership_edges,
            slot_edges,
            provenance: wire.provenance,
            version: wire.version,
        }
    }
}

impl PatientGraph {
    pub fn new() -> PatientGraph {
        PatientGraph {
            patient_nodes: BTreeSet::from([PRIMARY_PATIENT.to_string()]),
            primary_patient: PRIMARY_PATIENT.to_string(),
            ..PatientGraph::default()
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn primary_patient(&self) -> &str {
        &self.primary_patient
    }

    pub fn patient_nodes(&self) -> &BTreeSet<String> {
        &self.patient_nodes
    }

    /// Add a secondary patient node. Only done on an explicit extractor flag;
    /// all slot edges still default to the primary patient.
    pub fn add_patient(&mut self, id: &str) {
        if self.patient_nodes.insert(id.to_string()) {
            self.version += 1;
        }
    }

    pub fn concept_nodes(&self) -> &BTreeMap<String, ConceptNode> {
        &self.concept_nodes
    }

    pub fn concept(&self, id: &str) -> Option<&ConceptNode> {
        self.concept_nodes.get(id)
    }

    /// Current edges: patient membership edges then concept slot edges.
    pub fn edges(&self) -> Vec<GraphEdge> {
        let mut out: Vec<GraphEdge> = self.membership_edges.iter().cloned().collect();
        out.extend(self.slot_edges.iter().map(|((source, relation), (target, _))| GraphEdge {
            source: source.clone(),
            relation: relation.clone(),
            target: target.clone(),
        }));
        out
    }

    pub fn provenance(&self) -> &[ProvenanceRecord] {
        &self.provenance
    }

    pub fn slot_value(&self, node: &str, slot: &str) -> Option<&str> {
        self.slot_edges
            .get(&(node.to_string(), slot.to_string()))
            .map(|(value, _)| value.as_str())
    }

    /// Canonical names of linked concept nodes: the seeds for KG retrieval.
    pub fn linked_entities(&self) -> Vec<&str> {
        self.concept_nodes
            .values()
            .filter(|node| node.linked)
            .map(|node| node.canonical.as_str())
            .collect()
    }

    /// Concept nodes whose state is claimed positive by either party.
    pub fn positive_state_concepts(&self) -> BTreeSet<String> {
        self.concept_nodes
            .keys()
            .filter(|id| {
                matches!(
                    self.slot_value(id, slots::STATE),
                    Some("patient claims positive") | Some("doctor claims positive")
                )
            })
            .cloned()
            .collect()
    }

    /// Characteristic nodes currently in force (value other than no/unknown),
    /// e.g. `pregnancy` once the patient said they are pregnant.
    pub fn active_characteristics(&self) -> BTreeSet<String> {
        self.concept_nodes
            .iter()
            .filter(|(_, node)| node.category == Category::PatientCharacteristic)
            .filter(|(id, _)| {
                !matches!(self.slot_value(id, slots::VALUE), Some("no") | Some("unknown") | None)
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Medications the patient reports taking.
    pub fn medications_taken(&self) -> BTreeSet<String> {
        self.concept_nodes
            .iter()
            .filter(|(_, node)| node.category == Category::Medication)
            .filter(|(id, _)| self.slot_value(id, slots::WHETHER_TAKEN) == Some("yes"))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Facts that stand for the patient in conflict checks: active
    /// characteristics, positive-state concepts, and medications being
    /// taken (so interaction attributes have something to match), all by
    /// canonical name.
    pub fn conflictable_facts(&self) -> BTreeSet<String> {
        let mut facts = self.active_characteristics();
        facts.extend(self.positive_state_concepts());
        facts.extend(self.medications_taken());
        facts
    }

    /// Insert or refresh one concept with its slot values. The node id is the
    /// accepted link's canonical name, otherwise the surface form. Returns
    /// true when the graph changed (and the version advanced).
    pub fn upsert_concept(
        &mut self,
        mention: &ConceptMention,
        values: &[SlotValue],
        link: Option<&LinkDecision>,
    ) -> bool {
        let mut changed = false;
        let (node_id, linked) = match link {
            Some(decision) if decision.accepted => (
                decision.candidate.clone().expect("accepted link has a candidate"),
                true,
            ),
            _ => (mention.surface.clone(), false),
        };

        match self.concept_nodes.get_mut(&node_id) {
            Some(node) => {
                // A node can gain a link later; it never loses one.
                if linked && !node.linked {
                    node.linked = true;
                    changed = true;
                }
            }
            None => {
                self.concept_nodes.insert(
                    node_id.clone(),
                    ConceptNode {
                        canonical: node_id.clone(),
                        category: mention.category,
                        linked,
                    },
                );
                changed = true;
            }
        }

        let membership = GraphEdge {
            source: self.primary_patient.clone(),
            relation: membership_relation(mention.category).to_string(),
            target: node_id.clone(),
        };
        if !self.membership_edges.contains(&membership) {
            self.provenance.push(ProvenanceRecord {
                edge: membership.clone(),
                evidence_turns: BTreeSet::from([mention.turn_index]),
                superseded: false,
            });
            self.membership_edges.insert(membership);
            changed = true;
        }

        for value in values {
            let key = (node_id.clone(), value.slot.clone());
            match self.slot_edges.get(&key) {
                Some((current, turns))
                    if *current == value.value && *turns == value.evidence_turns => {}
                Some((current, _)) => {
                    let old = GraphEdge {
                        source: node_id.clone(),
                        relation: value.slot.clone(),
                        target: current.clone(),
                    };
                    for record in self.provenance.iter_mut() {
                        if record.edge == old && !record.superseded {
                            record.superseded = true;
                        }
                    }
                    self.push_slot(key, value);
                    changed = true;
                }
                None => {
                    self.push_slot(key, value);
                    changed = true;
                }
            }
        }

        if changed {
            self.version += 1;
        }
        changed
    }

    fn push_slot(&mut self, key: (String, String), value: &SlotValue) {
        let edge = GraphEdge {
            source: key.0.clone(),
            relation: key.1.clone(),
            target: value.value.clone(),
        };
        self.provenance.push(ProvenanceRecord {
            edge,
            evidence_turns: value.evidence_turns.clone(),
            superseded: false,
        });
        self.slot_edges.insert(key, (value.value.clone(), value.evidence_turns.clone()));
    }

    /// One-hop KG neighborhood of the linked concept nodes. Read-only: the
    /// KG-derived view stays distinct from dialogue-derived edges.
    pub fn attach_neighborhood(&self, kg: &KnowledgeGraph) -> NeighborhoodView {
        kg.neighborhood(self.linked_entities())
    }

    /// One line per current edge, `subject predicate object`: patient
    /// membership edges first, then concept slot edges, lexicographic within
    /// each group. Deterministic for a fixed graph.
    pub fn linearize(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        for edge in &self.membership_edges {
            lines.push(format!("{} {} {}", edge.source, edge.relation, edge.target));
        }
        for ((source, relation), (target, _)) in &self.slot_edges {
            lines.push(format!("{source} {relation} {target}"));
        }
        lines.join("\n")
    }

    pub fn to_json(&self) -> crate::error::Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> crate::error::Result<PatientGraph> {
        Ok(serde_json::from_str(json)?)
    }
}
