//! Medical knowledge graph: triple store, indices, neighborhoods, and
//! attribute lookups.
//!
//! The graph is immutable after load. Neighborhood expansion follows outgoing
//! edges only; incoming expansion exists behind a separate method and is
//! never used implicitly.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// A directed fact: edge of type `relation` from `head` to `tail`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Triple {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Declared type of an entity. Tails without a declared type are literals
/// and never seed further hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Disease,
    Symptom,
    Medication,
    Attribute,
    Other,
}

impl EntityType {
    fn parse(s: &str) -> Option<EntityType> {
        match s.to_ascii_lowercase().as_str() {
            "disease" => Some(EntityType::Disease),
            "symptom" => Some(EntityType::Symptom),
            "medication" => Some(EntityType::Medication),
            "attribute" => Some(EntityType::Attribute),
            "other" => Some(EntityType::Other),
            _ => None,
        }
    }
}

/// Core relation vocabulary shipped for fixtures. The relation set itself is
/// open: any string in the triples file is a valid relation.
pub mod relations {
    pub const DRUG_TREATMENT: &str = "drug_treatment";
    pub const CONTRAINDICATION: &str = "contraindication";
    pub const INTERACTION: &str = "interaction";
    pub const USAGE: &str = "usage";
    pub const CAUTION: &str = "caution";
    pub const SYMPTOM_OF: &str = "symptom_of";
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct EntityLinks {
    outgoing: Vec<usize>,
    incoming: Vec<usize>,
}

/// Entity/relation/fact triple store with lookup indices and a synonym table.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    entity_index: BTreeMap<String, EntityLinks>,
    relation_index: BTreeMap<String, Vec<usize>>,
    entity_types: BTreeMap<String, EntityType>,
    synonyms: BTreeMap<String, String>,
    dangling_synonyms: BTreeSet<String>,
}

/// Counts reported alongside a successful load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub dangling_synonyms: usize,
}

/// One-hop outgoing neighborhood of an entity set: the `(relation, entity)`
/// pairs reachable from any member, each carrying its witnessing triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborhoodView {
    facts: BTreeMap<(String, String), Vec<Triple>>,
}

impl NeighborhoodView {
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.facts.keys().map(|(r, e)| (r.as_str(), e.as_str()))
    }

    pub fn pair_set(&self) -> BTreeSet<(String, String)> {
        self.facts.keys().cloned().collect()
    }

    pub fn witnesses(&self, relation: &str, entity: &str) -> &[Triple] {
        self.facts
            .get(&(relation.to_string(), entity.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All witnessing triples grouped by pair, in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &Vec<Triple>)> {
        self.facts.iter()
    }

    /// Relations present, with the number of distinct facts per relation.
    pub fn relation_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for (relation, _) in self.facts.keys() {
            *counts.entry(relation.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Facts whose relation equals `relation`, as witnessing triples, one
    /// representative triple per (relation, tail) pair.
    pub fn facts_with_relation(&self, relation: &str) -> Vec<&Triple> {
        self.facts
            .iter()
            .filter(|((r, _), _)| r == relation)
            .filter_map(|(_, w)| w.first())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    fn insert(&mut self, triple: &Triple) {
        let key = (triple.relation.clone(), triple.tail.clone());
        let witnesses = self.facts.entry(key).or_default();
        if !witnesses.contains(triple) {
            witnesses.push(triple.clone());
            witnesses.sort();
        }
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

// Collects JSON object entries without collapsing duplicate keys, so
// conflicting duplicate declarations can be reported instead of silently
// taking the last value.
struct JsonPairs(Vec<(String, String)>);

impl<'de> Deserialize<'de> for JsonPairs {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        struct Visitor;
        impl<'de> serde::de::Visitor<'de> for Visitor {
            type Value = JsonPairs;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a JSON object of string to string")
            }

            fn visit_map<A>(self, mut map: A) -> std::result::Result<JsonPairs, A::Error>
            where
                A: serde::de::MapAccess<'de>,
            {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(JsonPairs(pairs))
            }
        }
        deserializer.deserialize_map(Visitor)
    }
}

/// Load a knowledge graph from a triples TSV plus optional synonym and type
/// declarations. Duplicate triples are collapsed; indices are built once.
pub fn load_kg(
    triples_source: impl BufRead,
    synonyms_source: Option<&str>,
    types_source: Option<&str>,
) -> Result<(KnowledgeGraph, LoadStats)> {
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    for (line_no, line) in triples_source.lines().enumerate() {
        let line = line?;
        let position = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                format!("triples line {position}"),
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let triple = Triple::new(nfc(fields[0].trim()), nfc(fields[1].trim()), nfc(fields[2].trim()));
        if triple.head.is_empty() || triple.relation.is_empty() || triple.tail.is_empty() {
            return Err(Error::parse(
                format!("triples line {position}"),
                "triple components must be non-empty",
            ));
        }
        if seen.insert(triple.clone()) {
            triples.push(triple);
        }
    }

    let mut entity_types = BTreeMap::new();
    if let Some(types_json) = types_source {
        let JsonPairs(pairs) = serde_json::from_str(types_json)
            .map_err(|e| Error::parse("types source", e.to_string()))?;
        for (entity, type_name) in pairs {
            let entity = nfc(&entity);
            let entity_type = EntityType::parse(&type_name).ok_or_else(|| {
                Error::schema("types source", format!("unknown entity type {type_name:?}"))
            })?;
            if let Some(existing) = entity_types.get(&entity) {
                if *existing != entity_type {
                    return Err(Error::schema(
                        "types source",
                        format!("conflicting type declarations for {entity:?}"),
                    ));
                }
            }
            entity_types.insert(entity, entity_type);
        }
    }

    let mut synonyms = BTreeMap::new();
    if let Some(synonyms_json) = synonyms_source {
        let JsonPairs(pairs) = serde_json::from_str(synonyms_json)
            .map_err(|e| Error::parse("synonyms source", e.to_string()))?;
        for (surface, canonical) in pairs {
            synonyms.insert(nfc(&surface), nfc(&canonical));
        }
    }

    let mut kg = KnowledgeGraph {
        triples,
        entity_index: BTreeMap::new(),
        relation_index: BTreeMap::new(),
        entity_types,
        synonyms,
        dangling_synonyms: BTreeSet::new(),
    };
    kg.rebuild_indices();
    kg.dangling_synonyms = kg
        .synonyms
        .values()
        .filter(|canonical| !kg.entity_index.contains_key(*canonical))
        .cloned()
        .collect();

    let stats = LoadStats {
        entities: kg.entity_index.len(),
        relations: kg.relation_index.len(),
        triples: kg.triples.len(),
        dangling_synonyms: kg.dangling_synonyms.len(),
    };
    Ok((kg, stats))
}

impl KnowledgeGraph {
    /// Build a graph directly from triples, for fixtures and tests.
    pub fn from_triples(triples: Vec<Triple>) -> KnowledgeGraph {
        let mut seen = BTreeSet::new();
        let mut deduped = Vec::new();
        for t in triples {
            if seen.insert(t.clone()) {
                deduped.push(t);
            }
        }
        let mut kg = KnowledgeGraph {
            triples: deduped,
            ..KnowledgeGraph::default()
        };
        kg.rebuild_indices();
        kg
    }

    pub fn with_synonyms(mut self, synonyms: BTreeMap<String, String>) -> KnowledgeGraph {
        self.synonyms = synonyms;
        self.dangling_synonyms = self
            .synonyms
            .values()
            .filter(|c| !self.entity_index.contains_key(*c))
            .cloned()
            .collect();
        self
    }

    pub fn with_types(mut self, types: BTreeMap<String, EntityType>) -> KnowledgeGraph {
        self.entity_types = types;
        self.rebuild_indices();
        self
    }

    // Entities are all heads plus every tail with a declared type. Untyped
    // tails stay literals: reachable as neighborhood pairs and attribute
    // values but absent from the entity index.
    fn rebuild_indices(&mut self) {
        self.entity_index.clear();
        self.relation_index.clear();
        for (i, t) in self.triples.iter().enumerate() {
            self.entity_index.entry(t.head.clone()).or_default().outgoing.push(i);
            if self.entity_types.contains_key(&t.tail) {
                self.entity_index.entry(t.tail.clone()).or_default().incoming.push(i);
            }
            self.relation_index.entry(t.relation.clone()).or_default().push(i);
        }
        // Typed entities with no edges still count as known entities.
        for entity in self.entity_types.keys() {
            self.entity_index.entry(entity.clone()).or_default();
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains_entity(&self, name: &str) -> bool {
        self.entity_index.contains_key(name)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entity_index.keys().map(String::as_str)
    }

    /// Declared type, defaulting to `Other` for known but undeclared entities.
    pub fn entity_type(&self, name: &str) -> Option<EntityType> {
        if let Some(t) = self.entity_types.get(name) {
            Some(*t)
        } else if self.contains_entity(name) {
            Some(EntityType::Other)
        } else {
            None
        }
    }

    pub fn resolve_synonym(&self, surface: &str) -> Option<&str> {
        self.synonyms.get(surface).map(String::as_str)
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn dangling_synonyms(&self) -> &BTreeSet<String> {
        &self.dangling_synonyms
    }

    /// Entities of a given declared type, in lexicographic order.
    pub fn entities_of_type(&self, entity_type: EntityType) -> Vec<&str> {
        self.entity_types
            .iter()
            .filter(|(_, t)| **t == entity_type)
            .map(|(e, _)| e.as_str())
            .collect()
    }

    /// One-hop outgoing neighborhood of `subgraph_entities`. Entities absent
    /// from the graph contribute nothing.
    pub fn neighborhood<'a, I>(&self, subgraph_entities: I) -> NeighborhoodView
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut view = NeighborhoodView::default();
        for entity in subgraph_entities {
            if let Some(links) = self.entity_index.get(entity) {
                for &i in &links.outgoing {
                    view.insert(&self.triples[i]);
                }
            }
        }
        view
    }

    /// Incoming-hop expansion: `(relation, head)` pairs of triples whose tail
    /// is in the set. Off the default path; callers opt in explicitly.
    pub fn neighborhood_incoming<'a, I>(&self, subgraph_entities: I) -> NeighborhoodView
    where
        I: IntoIterator<Item = &'a str>,
    {
        let entities: BTreeSet<&str> = subgraph_entities.into_iter().collect();
        let mut view = NeighborhoodView::default();
        for t in &self.triples {
            if entities.contains(t.tail.as_str()) {
                // Pair is (relation, head); the witness stays the original triple.
                let key = (t.relation.clone(), t.head.clone());
                let witnesses = view.facts.entry(key).or_default();
                if !witnesses.contains(t) {
                    witnesses.push(t.clone());
                    witnesses.sort();
                }
            }
        }
        view
    }

    /// Literal values of `(entity, attribute_relation, ·)` triples.
    pub fn attribute_facts(&self, entity: &str, attribute_relation: &str) -> BTreeSet<String> {
        match self.entity_index.get(entity) {
            Some(links) => links
                .outgoing
                .iter()
                .map(|&i| &self.triples[i])
                .filter(|t| t.relation == attribute_relation)
                .map(|t| t.tail.clone())
                .collect(),
            None => BTreeSet::new(),
        }
    }

    /// Rebuild both indices from the triple list and compare with the stored
    /// ones. Returns an error describing the first divergence.
    pub fn audit_indices(&self) -> Result<()> {
        let mut rebuilt = self.clone();
        rebuilt.rebuild_indices();
        if rebuilt.entity_index != self.entity_index {
            return Err(Error::schema("index audit", "entity index diverges from triples"));
        }
        if rebuilt.relation_index != self.relation_index {
            return Err(Error::schema("index audit", "relation index diverges from triples"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_kg() -> KnowledgeGraph {
        let triples = vec![
            Triple::new("cold", "drug_treatment", "Aspirin"),
            Triple::new("cold", "drug_treatment", "Berberine"),
            Triple::new("Losartan", "contraindication", "pregnancy"),
            Triple::new("Labetalol", "caution", "bronchitis"),
            Triple::new("influenza", "symptom_of", "fever"),
        ];
        let mut types = BTreeMap::new();
        types.insert("cold".into(), EntityType::Disease);
        types.insert("influenza".into(), EntityType::Disease);
        types.insert("Aspirin".into(), EntityType::Medication);
        types.insert("Berberine".into(), EntityType::Medication);
        types.insert("Losartan".into(), EntityType::Medication);
        types.insert("Labetalol".into(), EntityType::Medication);
        let mut synonyms = BTreeMap::new();
        synonyms.insert("流感".into(), "influenza".into());
        KnowledgeGraph::from_triples(triples)
            .with_types(types)
            .with_synonyms(synonyms)
    }

    #[test]
    fn load_deduplicates_triples() {
        let tsv = "cold\tdrug_treatment\tAspirin\ncold\tdrug_treatment\tAspirin\ncold\tdrug_treatment\tBerberine\n";
        let (kg, stats) = load_kg(tsv.as_bytes(), None, None).unwrap();
        assert_eq!(kg.triples().len(), 2);
        assert_eq!(stats.triples, 2);
    }

    #[test]
    fn load_empty_triples_yields_empty_graph() {
        let (kg, stats) = load_kg("".as_bytes(), None, None).unwrap();
        assert!(kg.triples().is_empty());
        assert_eq!(stats.entities, 0);
        assert_eq!(stats.relations, 0);
    }

    #[test]
    fn load_skips_comment_lines() {
        let tsv = "# header comment\ncold\tdrug_treatment\tAspirin\n";
        let (kg, _) = load_kg(tsv.as_bytes(), None, None).unwrap();
        assert_eq!(kg.triples().len(), 1);
    }

    #[test]
    fn malformed_line_is_positioned_parse_error() {
        let tsv = "cold\tdrug_treatment\tAspirin\nbad line without tabs\n";
        let err = load_kg(tsv.as_bytes(), None, None).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "triples line 2"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn conflicting_type_declaration_is_schema_error() {
        let types = r#"{"cold": "disease", "cold": "symptom"}"#;
        let err = load_kg("".as_bytes(), None, Some(types)).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn repeated_identical_type_declaration_is_fine() {
        let types = r#"{"cold": "disease", "cold": "disease"}"#;
        assert!(load_kg("".as_bytes(), None, Some(types)).is_ok());
    }

    #[test]
    fn synonym_resolves_to_canonical() {
        let tsv = "influenza\tsymptom_of\tfever\n";
        let synonyms = r#"{"流感": "influenza"}"#;
        let (kg, stats) = load_kg(tsv.as_bytes(), Some(synonyms), None).unwrap();
        assert_eq!(kg.resolve_synonym("流感"), Some("influenza"));
        assert_eq!(stats.dangling_synonyms, 0);
    }

    #[test]
    fn dangling_synonym_is_flagged_not_fatal() {
        let synonyms = r#"{"x": "NotInGraph"}"#;
        let (kg, stats) = load_kg("a\tr\tb\n".as_bytes(), Some(synonyms), None).unwrap();
        assert_eq!(stats.dangling_synonyms, 1);
        assert!(kg.dangling_synonyms().contains("NotInGraph"));
    }

    #[test]
    fn neighborhood_of_cold_lists_both_treatments() {
        let kg = toy_kg();
        let n = kg.neighborhood(["cold"]);
        let pairs = n.pair_set();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.contains(&("drug_treatment".into(), "Aspirin".into())));
        assert!(pairs.contains(&("drug_treatment".into(), "Berberine".into())));
        assert_eq!(
            n.witnesses("drug_treatment", "Aspirin"),
            &[Triple::new("cold", "drug_treatment", "Aspirin")]
        );
    }

    #[test]
    fn neighborhood_of_empty_set_is_empty() {
        let kg = toy_kg();
        assert!(kg.neighborhood([]).is_empty());
    }

    #[test]
    fn neighborhood_of_unknown_entity_is_empty() {
        let kg = toy_kg();
        assert!(kg.neighborhood(["unknown_entity"]).is_empty());
    }

    #[test]
    fn neighborhood_is_outgoing_only() {
        let kg = toy_kg();
        // "pregnancy" is a tail; nothing points out of it.
        assert!(kg.neighborhood(["pregnancy"]).is_empty());
        // The incoming variant finds Losartan.
        let incoming = kg.neighborhood_incoming(["pregnancy"]);
        assert!(incoming
            .pair_set()
            .contains(&("contraindication".into(), "Losartan".into())));
    }

    #[test]
    fn attribute_facts_losartan_contraindication() {
        let kg = toy_kg();
        let facts = kg.attribute_facts("Losartan", "contraindication");
        assert_eq!(facts.into_iter().collect::<Vec<_>>(), vec!["pregnancy"]);
    }

    #[test]
    fn attribute_facts_labetalol_caution() {
        let kg = toy_kg();
        let facts = kg.attribute_facts("Labetalol", "caution");
        assert_eq!(facts.into_iter().collect::<Vec<_>>(), vec!["bronchitis"]);
    }

    #[test]
    fn attribute_facts_absent_edge_is_empty() {
        let kg = toy_kg();
        assert!(kg.attribute_facts("Aspirin", "contraindication").is_empty());
    }

    #[test]
    fn index_audit_passes_after_load() {
        let kg = toy_kg();
        kg.audit_indices().unwrap();
    }

    #[test]
    fn untyped_tails_are_literals_not_entities() {
        let kg = toy_kg();
        assert!(!kg.contains_entity("pregnancy"));
        assert!(kg.contains_entity("Aspirin"));
        assert_eq!(kg.entity_type("Aspirin"), Some(EntityType::Medication));
        assert_eq!(kg.entity_type("pregnancy"), None);
    }

    #[test]
    fn entities_of_type_lists_medications() {
        let kg = toy_kg();
        let meds = kg.entities_of_type(EntityType::Medication);
        assert_eq!(meds, vec!["Aspirin", "Berberine", "Labetalol", "Losartan"]);
    }
}
