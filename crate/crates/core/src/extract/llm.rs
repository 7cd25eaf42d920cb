//! Chat-model-backed extractor.
//!
//! Prompts are rendered from template files; completions are parsed
//! strict-first (whole output as JSON) with a bracket-scanning fallback for
//! models that wrap the payload in prose. Parse failures surface as errors
//! carrying the raw output, never as silently dropped mentions.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::Value;

use crate::clients::{ChatClient, ChatMessage, ChatRequest};
use crate::dialogue::{Dialogue, Role, Utterance, Window};
use crate::error::{Error, Result};
use crate::kg::{EntityType, KnowledgeGraph};

use super::{
    characteristic_slot_value, characteristics, dedup_mentions, slots, Category, ConceptMention,
    Extractor, Lexicon, SlotValue,
};

pub const NER_TEMPLATE: &str = include_str!("../../templates/ner.txt");
pub const SLOTS_CONDITION_TEMPLATE: &str = include_str!("../../templates/slots_condition.txt");
pub const SLOTS_MEDICATION_TEMPLATE: &str = include_str!("../../templates/slots_medication.txt");
pub const CHARACTERISTICS_TEMPLATE: &str = include_str!("../../templates/characteristics.txt");

/// Templates, demonstrations, and sampling settings for the LLM extractor.
#[derive(Debug, Clone)]
pub struct LlmExtractorConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub ner_template: String,
    pub slots_condition_template: String,
    pub slots_medication_template: String,
    pub characteristics_template: String,
    /// In-context demonstrations, inserted verbatim at `[Demonstrations]`.
    pub demonstrations: String,
}

impl Default for LlmExtractorConfig {
    fn default() -> Self {
        LlmExtractorConfig {
            model: "default".into(),
            temperature: 0.2,
            max_tokens: 1024,
            ner_template: NER_TEMPLATE.into(),
            slots_condition_template: SLOTS_CONDITION_TEMPLATE.into(),
            slots_medication_template: SLOTS_MEDICATION_TEMPLATE.into(),
            characteristics_template: CHARACTERISTICS_TEMPLATE.into(),
            demonstrations: String::new(),
        }
    }
}

pub struct LlmExtractor {
    client: Arc<dyn ChatClient>,
    config: LlmExtractorConfig,
    /// Category hints for plain-string entity output, usually the lexicon.
    hints: Lexicon,
    kg: Option<Arc<KnowledgeGraph>>,
}

impl LlmExtractor {
    pub fn new(
        client: Arc<dyn ChatClient>,
        config: LlmExtractorConfig,
        hints: Lexicon,
        kg: Option<Arc<KnowledgeGraph>>,
    ) -> LlmExtractor {
        LlmExtractor { client, config, hints, kg }
    }

    fn chat(&self, prompt: String) -> Result<String> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        Ok(self.client.chat(&request)?)
    }

    fn render(&self, template: &str, context: &str, concept: Option<&str>) -> String {
        let mut out = template
            .replace("[Context]", context)
            .replace("[Demonstrations]", &self.config.demonstrations);
        if let Some(concept) = concept {
            out = out.replace("[Disease/Symptom]", concept);
        }
        out
    }

    // Lexicon hint, then KG entity type after synonym resolution, then the
    // builtin characteristic names. Uncategorizable entities are dropped.
    fn categorize(&self, entity: &str) -> Option<Category> {
        if let Some(category) = self.hints.category(entity) {
            return Some(category);
        }
        if let Some(kg) = &self.kg {
            let canonical = kg.resolve_synonym(entity).unwrap_or(entity);
            match kg.entity_type(canonical) {
                Some(EntityType::Disease) => return Some(Category::Disease),
                Some(EntityType::Symptom) => return Some(Category::Symptom),
                Some(EntityType::Medication) => return Some(Category::Medication),
                _ => {}
            }
        }
        match entity.to_lowercase().as_str() {
            "pregnant" | "pregnancy" => Some(Category::PatientCharacteristic),
            _ => None,
        }
    }
}

fn render_window(turns: &[Utterance]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.role.as_str(), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Strict-then-lenient JSON extraction: parse the whole trimmed completion
/// first, then the first balanced bracket run.
fn parse_json_payload(raw: &str, open: char, close: char) -> Result<Value> {
    let trimmed = raw.trim().trim_start_matches("```json").trim_matches('`').trim();
    if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
        return Ok(value);
    }
    if let Some(span) = balanced_span(raw, open, close) {
        if let Ok(value) = serde_json::from_str::<Value>(span) {
            return Ok(value);
        }
    }
    Err(Error::ExtractionFormat {
        message: format!("no parseable {open}{close} payload"),
        raw: raw.to_string(),
    })
}

fn balanced_span(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            c if c == open => depth += 1,
            c if c == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

fn map_state_value(raw: &str) -> Option<&'static str> {
    match raw.trim().to_lowercase().replace('_', "-").as_str() {
        "patient-positive" | "patient positive" | "patient claims positive" => {
            Some("patient claims positive")
        }
        "patient-negative" | "patient negative" | "patient claims negative" => {
            Some("patient claims negative")
        }
        "doctor-positive" | "doctor positive" | "doctor claims positive" => {
            Some("doctor claims positive")
        }
        "doctor-negative" | "doctor negative" | "doctor claims negative" => {
            Some("doctor claims negative")
        }
        "unknown" => Some("unknown"),
        _ => None,
    }
}

fn map_yes_no_unknown(raw: &str) -> Option<&'static str> {
    match raw.trim().to_lowercase().as_str() {
        "yes" | "true" => Some("yes"),
        "no" | "false" => Some("no"),
        "unknown" | "" => Some("unknown"),
        _ => None,
    }
}

// Accepts both the template's spaced key names and snake_case.
fn lookup<'a>(object: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    for (key, value) in object {
        let normalized = key.trim().trim_start_matches('#').to_lowercase().replace([' ', '-'], "_");
        if names.contains(&normalized.as_str()) {
            return Some(value);
        }
    }
    None
}

fn value_to_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(value_to_text)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("; "),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn evidence_for(window: &[Utterance], surface: &str) -> BTreeSet<usize> {
    let folded = surface.to_lowercase();
    window
        .iter()
        .filter(|u| u.text.to_lowercase().contains(&folded))
        .map(|u| u.index)
        .collect()
}

impl Extractor for LlmExtractor {
    fn extract_concepts(&self, dialogue: &Dialogue, turn: usize) -> Result<Vec<ConceptMention>> {
        let utterance = dialogue
            .turns
            .get(turn)
            .ok_or_else(|| Error::Index(format!("turn {turn} out of range")))?;
        if utterance.role != Role::Patient {
            return Err(Error::Index(format!("turn {turn} is not a patient turn")));
        }
        let prompt = self.render(&self.config.ner_template, &utterance.text, None);
        let completion = self.chat(prompt)?;
        let payload = parse_json_payload(&completion, '[', ']')?;
        let items = payload.as_array().ok_or_else(|| Error::ExtractionFormat {
            message: "expected a JSON array of entities".into(),
            raw: completion.clone(),
        })?;

        let mut mentions = Vec::new();
        for item in items {
            let (entity, category) = match item {
                Value::String(s) => {
                    let Some(category) = self.categorize(s) else { continue };
                    (s.clone(), category)
                }
                Value::Object(fields) => {
                    let entity = lookup(fields, &["entity", "text", "name"])
                        .and_then(Value::as_str)
                        .ok_or_else(|| Error::ExtractionFormat {
                            message: "entity object without an \"entity\" field".into(),
                            raw: completion.clone(),
                        })?
                        .to_string();
                    let category = match lookup(fields, &["category", "type"]).and_then(Value::as_str) {
                        Some(raw) => Category::parse(raw).ok_or_else(|| Error::ExtractionFormat {
                            message: format!("unknown category {raw:?}"),
                            raw: completion.clone(),
                        })?,
                        None => match self.categorize(&entity) {
                            Some(c) => c,
                            None => continue,
                        },
                    };
                    (entity, category)
                }
                other => {
                    return Err(Error::ExtractionFormat {
                        message: format!("unexpected entity item {other}"),
                        raw: completion.clone(),
                    })
                }
            };
            let span = find_span(&utterance.text, &entity);
            mentions.push(ConceptMention {
                surface: entity,
                category,
                turn_index: turn,
                char_span: span,
            });
        }
        Ok(dedup_mentions(mentions))
    }

    fn fill_slots(
        &self,
        dialogue: &Dialogue,
        concept: &ConceptMention,
        window: Window,
    ) -> Result<Vec<SlotValue>> {
        let turns = dialogue.context_window(concept.turn_index, window)?;
        let context = render_window(turns);
        let template = match concept.category {
            Category::Disease | Category::Symptom => &self.config.slots_condition_template,
            Category::Medication => &self.config.slots_medication_template,
            Category::PatientCharacteristic => return Ok(Vec::new()),
        };
        let prompt = self.render(template, &context, Some(&concept.surface));
        let completion = self.chat(prompt)?;
        let payload = parse_json_payload(&completion, '{', '}')?;
        let object = payload.as_object().ok_or_else(|| Error::ExtractionFormat {
            message: "expected a JSON object of slot values".into(),
            raw: completion.clone(),
        })?;

        let evidence = evidence_for(turns, &concept.surface);
        let mut out = Vec::new();
        let mut push = |slot: &str, value: String| {
            let turns = if value == "unknown" { BTreeSet::new() } else { evidence.clone() };
            out.push(SlotValue {
                concept: concept.clone(),
                slot: slot.to_string(),
                value,
                evidence_turns: turns,
            });
        };

        match concept.category {
            Category::Disease | Category::Symptom => {
                let state_raw = lookup(object, &["main_state", "state"])
                    .map(value_to_text)
                    .unwrap_or_else(|| "unknown".into());
                let state = map_state_value(&state_raw).ok_or_else(|| Error::ExtractionFormat {
                    message: format!("state value {state_raw:?} outside vocabulary"),
                    raw: completion.clone(),
                })?;
                push(slots::STATE, state.into());

                let history_raw = lookup(object, &["past_medical_history"])
                    .map(value_to_text)
                    .unwrap_or_else(|| "unknown".into());
                let history =
                    map_yes_no_unknown(&history_raw).ok_or_else(|| Error::ExtractionFormat {
                        message: format!("past_medical_history value {history_raw:?} outside vocabulary"),
                        raw: completion.clone(),
                    })?;
                push(slots::PAST_MEDICAL_HISTORY, history.into());
            }
            Category::Medication => {
                for (slot, keys) in [
                    (slots::WHETHER_TAKEN, ["whether_taken"].as_slice()),
                    (slots::WHETHER_EFFECTIVE, ["whether_effective"].as_slice()),
                    (slots::WHETHER_DOCTOR_RECOMMEND, ["whether_doctor_recommend"].as_slice()),
                ] {
                    let raw = lookup(object, keys)
                        .map(value_to_text)
                        .unwrap_or_else(|| "unknown".into());
                    let value = map_yes_no_unknown(&raw).ok_or_else(|| Error::ExtractionFormat {
                        message: format!("{slot} value {raw:?} outside vocabulary"),
                        raw: completion.clone(),
                    })?;
                    push(slot, value.into());
                }
            }
            Category::PatientCharacteristic => unreachable!("returned early above"),
        }

        let memory = lookup(object, &["other_relevant_information", "memory"])
            .map(value_to_text)
            .unwrap_or_default();
        if !memory.is_empty() {
            push(slots::MEMORY, memory);
        }
        Ok(out)
    }

    fn extract_patient_characteristics(&self, dialogue: &Dialogue) -> Result<Vec<SlotValue>> {
        let context = dialogue.render_history();
        let prompt = self.render(&self.config.characteristics_template, &context, None);
        let completion = self.chat(prompt)?;
        let payload = parse_json_payload(&completion, '{', '}')?;
        let object = payload.as_object().ok_or_else(|| Error::ExtractionFormat {
            message: "expected a JSON object of characteristics".into(),
            raw: completion.clone(),
        })?;

        let evidence_turn = dialogue.last_patient_turn().unwrap_or(0);
        let mut out = Vec::new();
        for name in [
            characteristics::GENDER,
            characteristics::AGE,
            characteristics::BLOOD_PRESSURE,
            characteristics::PREGNANT,
        ] {
            if let Some(value) = lookup(object, &[name]) {
                let text = value_to_text(value);
                if !text.is_empty() && text != "unknown" {
                    out.push(characteristic_slot_value(name, &text, evidence_turn));
                }
            }
        }
        Ok(out)
    }
}

fn find_span(text: &str, surface: &str) -> Option<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let folded: Vec<char> = chars.iter().flat_map(|c| c.to_lowercase()).collect();
    let needle: Vec<char> = surface.chars().flat_map(|c| c.to_lowercase()).collect();
    if needle.is_empty() || folded.len() != chars.len() {
        return None;
    }
    folded
        .windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|start| (start, start + needle.len()))
}
