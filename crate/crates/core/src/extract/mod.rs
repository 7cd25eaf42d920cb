//! Two-stage medical information extraction: concept mention detection per
//! patient utterance, then slot-value state filling over a context window.
//!
//! Two implementations ship behind the same contract: a deterministic
//! lexicon/rule extractor used for offline tests and a chat-model-backed
//! extractor driven by prompt template files.

mod lexicon;
mod llm;

pub use lexicon::{Lexicon, LexiconEntry, LexiconExtractor};
pub use llm::{LlmExtractor, LlmExtractorConfig};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Dialogue, Window};
use crate::error::{Error, Result};

/// Category of an extracted medical concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Disease,
    Symptom,
    Medication,
    PatientCharacteristic,
}

impl Category {
    pub fn parse(s: &str) -> Option<Category> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "disease" => Some(Category::Disease),
            "symptom" => Some(Category::Symptom),
            "medication" | "drug" | "medicine" => Some(Category::Medication),
            "patient_characteristic" | "patientcharacteristic" | "characteristic" => {
                Some(Category::PatientCharacteristic)
            }
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Disease => "disease",
            Category::Symptom => "symptom",
            Category::Medication => "medication",
            Category::PatientCharacteristic => "patient_characteristic",
        }
    }
}

/// A concept mention found in one utterance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptMention {
    pub surface: String,
    pub category: Category,
    pub turn_index: usize,
    /// Character offsets into the source utterance, when known.
    pub char_span: Option<(usize, usize)>,
}

/// A (concept, slot, value) state annotation with the turns that evidence it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotValue {
    pub concept: ConceptMention,
    pub slot: String,
    pub value: String,
    pub evidence_turns: BTreeSet<usize>,
}

/// Slot names and closed vocabularies.
pub mod slots {
    pub const STATE: &str = "state";
    pub const PAST_MEDICAL_HISTORY: &str = "past_medical_history";
    pub const MEMORY: &str = "memory";
    pub const WHETHER_TAKEN: &str = "whether_taken";
    pub const WHETHER_EFFECTIVE: &str = "whether_effective";
    pub const WHETHER_DOCTOR_RECOMMEND: &str = "whether_doctor_recommend";
    /// Slot carrying a patient characteristic's value on its node.
    pub const VALUE: &str = "value";

    pub const STATE_VALUES: [&str; 5] = [
        "patient claims positive",
        "patient claims negative",
        "doctor claims positive",
        "doctor claims negative",
        "unknown",
    ];
    pub const YES_NO_UNKNOWN: [&str; 3] = ["yes", "no", "unknown"];
}

/// Closed slots applicable to a category, in their canonical order. The
/// free-text memory slot is additionally applicable to every category except
/// patient characteristics.
pub fn applicable_slots(category: Category) -> &'static [&'static str] {
    match category {
        Category::Disease | Category::Symptom => &[slots::STATE, slots::PAST_MEDICAL_HISTORY],
        Category::Medication => &[
            slots::WHETHER_TAKEN,
            slots::WHETHER_EFFECTIVE,
            slots::WHETHER_DOCTOR_RECOMMEND,
        ],
        Category::PatientCharacteristic => &[slots::VALUE],
    }
}

/// Whether `value` is legal for `slot` on a concept of `category`.
pub fn is_valid_value(category: Category, slot: &str, value: &str) -> bool {
    match (category, slot) {
        (Category::Disease | Category::Symptom, slots::STATE) => {
            slots::STATE_VALUES.contains(&value)
        }
        (Category::Disease | Category::Symptom, slots::PAST_MEDICAL_HISTORY) => {
            slots::YES_NO_UNKNOWN.contains(&value)
        }
        (
            Category::Medication,
            slots::WHETHER_TAKEN | slots::WHETHER_EFFECTIVE | slots::WHETHER_DOCTOR_RECOMMEND,
        ) => slots::YES_NO_UNKNOWN.contains(&value),
        (_, slots::MEMORY) => !value.is_empty(),
        (Category::PatientCharacteristic, slots::VALUE) => !value.is_empty(),
        _ => false,
    }
}

/// Reject any slot value outside its closed vocabulary.
pub fn validate_slot_values(values: &[SlotValue]) -> Result<()> {
    for sv in values {
        if !is_valid_value(sv.concept.category, &sv.slot, &sv.value) {
            return Err(Error::schema(
                "slot values",
                format!(
                    "value {:?} is not legal for slot {:?} on a {} concept",
                    sv.value,
                    sv.slot,
                    sv.concept.category.as_str()
                ),
            ));
        }
    }
    Ok(())
}

/// Collapse duplicate mentions (same surface and category in the same turn),
/// keeping the first occurrence.
pub fn dedup_mentions(mentions: Vec<ConceptMention>) -> Vec<ConceptMention> {
    let mut seen = BTreeSet::new();
    mentions
        .into_iter()
        .filter(|m| seen.insert((m.surface.clone(), m.category, m.turn_index)))
        .collect()
}

/// Extraction contract shared by the lexicon and chat-model implementations.
///
/// Implementations must be deterministic given identical inputs and a fixed
/// replay cache, and safe for concurrent calls.
pub trait Extractor: Send + Sync {
    /// All medical concepts mentioned in patient turn `turn`, deduplicated.
    fn extract_concepts(&self, dialogue: &Dialogue, turn: usize) -> Result<Vec<ConceptMention>>;

    /// Slot-value states for `concept`, reading evidence from the context
    /// window around its turn. Every applicable closed slot is emitted;
    /// slots without evidence hold `"unknown"`.
    fn fill_slots(
        &self,
        dialogue: &Dialogue,
        concept: &ConceptMention,
        window: Window,
    ) -> Result<Vec<SlotValue>>;

    /// Patient characteristics (gender, age, blood pressure, pregnant state)
    /// mentioned anywhere in the dialogue; absent characteristics are
    /// omitted, never defaulted.
    fn extract_patient_characteristics(&self, dialogue: &Dialogue) -> Result<Vec<SlotValue>>;
}

/// Characteristic names recognized on the patient node.
pub mod characteristics {
    pub const GENDER: &str = "gender";
    pub const AGE: &str = "age";
    pub const BLOOD_PRESSURE: &str = "blood_pressure";
    pub const PREGNANT: &str = "pregnant";
}

/// Build the SlotValue carrying a characteristic's value. The characteristic
/// itself is modeled as a concept mention so it becomes a first-class graph
/// node reachable from the patient.
pub fn characteristic_slot_value(name: &str, value: &str, turn: usize) -> SlotValue {
    SlotValue {
        concept: ConceptMention {
            surface: name.to_string(),
            category: Category::PatientCharacteristic,
            turn_index: turn,
            char_span: None,
        },
        slot: slots::VALUE.to_string(),
        value: value.to_string(),
        evidence_turns: BTreeSet::from([turn]),
    }
}
