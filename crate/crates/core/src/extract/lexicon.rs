//! Deterministic lexicon/rule extractor: dictionary matching for mentions,
//! cue lists for states, regexes for patient characteristics.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use unicode_normalization::UnicodeNormalization;

use crate::dialogue::{Dialogue, Role, Utterance, Window};
use crate::error::{Error, Result};

use super::{
    characteristic_slot_value, characteristics, dedup_mentions, slots, Category, ConceptMention,
    Extractor, SlotValue,
};

/// One lexicon entry: the category of a surface form and its canonical name.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct LexiconEntry {
    pub category: String,
    pub canonical: String,
}

/// Surface-form dictionary driving mention detection.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    // casefolded surface -> (category, canonical)
    entries: BTreeMap<String, (Category, String)>,
}

impl Lexicon {
    /// Parse the lexicon JSON: `{"surface": {"category": str, "canonical": str}}`.
    pub fn from_json(json: &str) -> Result<Lexicon> {
        let raw: BTreeMap<String, LexiconEntry> =
            serde_json::from_str(json).map_err(|e| Error::parse("lexicon", e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (surface, entry) in raw {
            let category = Category::parse(&entry.category).ok_or_else(|| {
                Error::schema(
                    "lexicon",
                    format!("unknown category {:?} for surface {surface:?}", entry.category),
                )
            })?;
            let surface: String = surface.nfc().collect();
            entries.insert(casefold(&surface), (category, entry.canonical.nfc().collect()));
        }
        Ok(Lexicon { entries })
    }

    pub fn from_entries<I>(entries: I) -> Lexicon
    where
        I: IntoIterator<Item = (String, Category, String)>,
    {
        Lexicon {
            entries: entries
                .into_iter()
                .map(|(surface, category, canonical)| (casefold(&surface), (category, canonical)))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical name for a surface, if the lexicon knows it.
    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.entries.get(&casefold(surface)).map(|(_, c)| c.as_str())
    }

    pub fn category(&self, surface: &str) -> Option<Category> {
        self.entries.get(&casefold(surface)).map(|(c, _)| *c)
    }

    /// Leftmost-longest dictionary matches over `text`, with char spans.
    fn scan(&self, text: &str) -> Vec<(String, Category, (usize, usize))> {
        let chars: Vec<char> = text.chars().collect();
        let folded: Vec<char> = chars.iter().flat_map(|c| c.to_lowercase()).collect();
        // Casefolding is done per char so folded positions align with chars.
        debug_assert_eq!(chars.len(), folded.len());
        let surfaces: Vec<(Vec<char>, &Category, &String)> = self
            .entries
            .iter()
            .map(|(s, (cat, canon))| (s.chars().collect(), cat, canon))
            .collect();

        let mut hits = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let mut best: Option<(usize, Category)> = None;
            for (surface, cat, _) in &surfaces {
                let n = surface.len();
                if n == 0 || i + n > folded.len() {
                    continue;
                }
                if folded[i..i + n] == surface[..]
                    && word_boundary(&folded, i, i + n)
                    && best.is_none_or(|(len, _)| n > len)
                {
                    best = Some((n, **cat));
                }
            }
            if let Some((n, category)) = best {
                let matched: String = chars[i..i + n].iter().collect();
                hits.push((matched, category, (i, i + n)));
                i += n;
            } else {
                i += 1;
            }
        }
        hits
    }
}

fn casefold(s: &str) -> String {
    s.to_lowercase()
}

// ASCII word boundary check; non-alphabetic scripts always pass.
fn word_boundary(chars: &[char], start: usize, end: usize) -> bool {
    let inner_alpha = chars[start..end].iter().any(|c| c.is_ascii_alphanumeric());
    if !inner_alpha {
        return true;
    }
    let before_ok = start == 0 || !chars[start - 1].is_ascii_alphanumeric();
    let after_ok = end >= chars.len() || !chars[end].is_ascii_alphanumeric();
    before_ok && after_ok
}

fn negation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(no|not|denies|deny|denied|without|never)\b|n't|没有|不是|并非|无")
            .unwrap()
    })
}

fn history_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(history of|had .{0,40} before|previously had|past medical history)\b")
            .unwrap()
    })
}

fn no_history_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bno (past medical )?history of\b").unwrap())
}

fn taken_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(took|taken|taking|take|used|using|tried)\b").unwrap())
}

fn not_taken_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(haven't taken|didn't take|not taking|never took|stopped taking)\b")
            .unwrap()
    })
}

fn effective_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(helped|worked|effective|relieved)\b").unwrap())
}

fn ineffective_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(didn't help|no effect|not work(ing)?|didn't work|ineffective|useless)\b")
            .unwrap()
    })
}

fn recommend_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(recommend|suggest|prescribe|you (can|could|should) (try|take)|try taking)\b")
            .unwrap()
    })
}

fn duration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bfor (a|an|one|two|three|several|a few|\d+) (day|days|week|weeks|month|months|year|years)\b",
        )
        .unwrap()
    })
}

/// Split into clauses at sentence punctuation; cue checks stay local to the
/// clause that mentions the concept.
fn clauses(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', ';', '。', '！', '？', '；'])
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .collect()
}

fn contains_surface(clause: &str, surface: &str) -> bool {
    casefold(clause).contains(&casefold(surface))
}

type StateScan = (Option<(String, usize)>, Vec<(String, usize)>);

/// Deterministic extractor backed by a [`Lexicon`] plus cue rules.
#[derive(Debug, Clone, Default)]
pub struct LexiconExtractor {
    lexicon: Lexicon,
}

impl LexiconExtractor {
    pub fn new(lexicon: Lexicon) -> LexiconExtractor {
        LexiconExtractor { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    // Latest evidence wins; earlier conflicting values are reported so the
    // memory slot can retain them. Returns the current (value, turn) and the
    // superseded (value, turn) history.
    fn scan_states(&self, window: &[Utterance], surface: &str) -> StateScan {
        let mut current: Option<(String, usize)> = None;
        let mut superseded = Vec::new();
        for utterance in window {
            for clause in clauses(&utterance.text) {
                if !contains_surface(clause, surface) {
                    continue;
                }
                let polarity = if negation_re().is_match(clause) { "negative" } else { "positive" };
                let claimant = match utterance.role {
                    Role::Patient => "patient",
                    Role::Doctor => "doctor",
                };
                let value = format!("{claimant} claims {polarity}");
                if let Some((previous, turn)) = &current {
                    if *previous != value {
                        superseded.push((previous.clone(), *turn));
                    }
                }
                current = Some((value, utterance.index));
            }
        }
        (current, superseded)
    }

    fn disease_symptom_slots(
        &self,
        window: &[Utterance],
        concept: &ConceptMention,
    ) -> Vec<SlotValue> {
        let (state, superseded) = self.scan_states(window, &concept.surface);
        let mut memory_parts: Vec<String> = Vec::new();
        let mut memory_turns = BTreeSet::new();

        let mut history = ("unknown".to_string(), BTreeSet::new());
        for utterance in window {
            for clause in clauses(&utterance.text) {
                if !contains_surface(clause, &concept.surface) {
                    continue;
                }
                if no_history_re().is_match(clause) {
                    history = ("no".into(), BTreeSet::from([utterance.index]));
                } else if history_re().is_match(clause) {
                    history = ("yes".into(), BTreeSet::from([utterance.index]));
                }
                if let Some(m) = duration_re().find(clause) {
                    let phrase = m.as_str().to_string();
                    if !memory_parts.contains(&phrase) {
                        memory_parts.push(phrase);
                        memory_turns.insert(utterance.index);
                    }
                }
            }
        }
        for (value, turn) in &superseded {
            memory_parts.push(format!("superseded state {value:?} (turn {turn})"));
            memory_turns.insert(*turn);
        }

        let (state_value, state_turns) = match state {
            Some((value, turn)) => (value, BTreeSet::from([turn])),
            None => ("unknown".to_string(), BTreeSet::new()),
        };
        let mut out = vec![
            SlotValue {
                concept: concept.clone(),
                slot: slots::STATE.into(),
                value: state_value,
                evidence_turns: state_turns,
            },
            SlotValue {
                concept: concept.clone(),
                slot: slots::PAST_MEDICAL_HISTORY.into(),
                value: history.0,
                evidence_turns: history.1,
            },
        ];
        if !memory_parts.is_empty() {
            out.push(SlotValue {
                concept: concept.clone(),
                slot: slots::MEMORY.into(),
                value: memory_parts.join("; "),
                evidence_turns: memory_turns,
            });
        }
        out
    }

    fn medication_slots(&self, window: &[Utterance], concept: &ConceptMention) -> Vec<SlotValue> {
        let mut taken = ("unknown".to_string(), BTreeSet::new());
        let mut effective = ("unknown".to_string(), BTreeSet::new());
        let mut recommended = ("unknown".to_string(), BTreeSet::new());
        let mut memory_parts: Vec<String> = Vec::new();
        let mut memory_turns = BTreeSet::new();

        for utterance in window {
            for clause in clauses(&utterance.text) {
                if !contains_surface(clause, &concept.surface) {
                    continue;
                }
                let turn = BTreeSet::from([utterance.index]);
                if utterance.role == Role::Patient {
                    if not_taken_re().is_match(clause) {
                        taken = ("no".into(), turn.clone());
                    } else if taken_re().is_match(clause) {
                        taken = ("yes".into(), turn.clone());
                    }
                    if ineffective_re().is_match(clause) {
                        effective = ("no".into(), turn.clone());
                    } else if effective_re().is_match(clause) {
                        effective = ("yes".into(), turn.clone());
                    }
                } else if recommend_re().is_match(clause) {
                    let value = if negation_re().is_match(clause) { "no" } else { "yes" };
                    recommended = (value.into(), turn.clone());
                }
                if let Some(m) = duration_re().find(clause) {
                    let phrase = m.as_str().to_string();
                    if !memory_parts.contains(&phrase) {
                        memory_parts.push(phrase);
                        memory_turns.insert(utterance.index);
                    }
                }
            }
        }

        let mut out = vec![
            SlotValue {
                concept: concept.clone(),
                slot: slots::WHETHER_TAKEN.into(),
                value: taken.0,
                evidence_turns: taken.1,
            },
            SlotValue {
                concept: concept.clone(),
                slot: slots::WHETHER_EFFECTIVE.into(),
                value: effective.0,
                evidence_turns: effective.1,
            },
            SlotValue {
                concept: concept.clone(),
                slot: slots::WHETHER_DOCTOR_RECOMMEND.into(),
                value: recommended.0,
                evidence_turns: recommended.1,
            },
        ];
        if !memory_parts.is_empty() {
            out.push(SlotValue {
                concept: concept.clone(),
                slot: slots::MEMORY.into(),
                value: memory_parts.join("; "),
                evidence_turns: memory_turns,
            });
        }
        out
    }
}

fn age_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(\d{1,3})[- ]years?[- ]old\b|\baged? (\d{1,3})\b").unwrap())
}

fn gender_male_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(man|male|boy|gentleman)\b").unwrap())
}

fn gender_female_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(woman|female|girl|lady)\b").unwrap())
}

fn pregnant_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bpregnan(t|cy)\b|怀孕").unwrap())
}

fn blood_pressure_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bblood pressure (?:is |was |of )?(\d{2,3}\s*/\s*\d{2,3})\b").unwrap()
    })
}

fn high_bp_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(high|low) blood pressure\b").unwrap())
}

impl Extractor for LexiconExtractor {
    fn extract_concepts(&self, dialogue: &Dialogue, turn: usize) -> Result<Vec<ConceptMention>> {
        let utterance = dialogue
            .turns
            .get(turn)
            .ok_or_else(|| Error::Index(format!("turn {turn} out of range")))?;
        if utterance.role != Role::Patient {
            return Err(Error::Index(format!("turn {turn} is not a patient turn")));
        }
        let mentions = self
            .lexicon
            .scan(&utterance.text)
            .into_iter()
            .map(|(surface, category, span)| ConceptMention {
                surface,
                category,
                turn_index: turn,
                char_span: Some(span),
            })
            .collect();
        Ok(dedup_mentions(mentions))
    }

    fn fill_slots(
        &self,
        dialogue: &Dialogue,
        concept: &ConceptMention,
        window: Window,
    ) -> Result<Vec<SlotValue>> {
        let turns = dialogue.context_window(concept.turn_index, window)?;
        let values = match concept.category {
            Category::Disease | Category::Symptom => self.disease_symptom_slots(turns, concept),
            Category::Medication => self.medication_slots(turns, concept),
            Category::PatientCharacteristic => Vec::new(),
        };
        Ok(values)
    }

    fn extract_patient_characteristics(&self, dialogue: &Dialogue) -> Result<Vec<SlotValue>> {
        let mut found: BTreeMap<&str, (String, usize)> = BTreeMap::new();
        for utterance in &dialogue.turns {
            if utterance.role != Role::Patient {
                continue;
            }
            let text = &utterance.text;
            if let Some(caps) = age_re().captures(text) {
                let age = caps.get(1).or_else(|| caps.get(2)).unwrap().as_str();
                found.insert(characteristics::AGE, (age.to_string(), utterance.index));
            }
            if gender_female_re().is_match(text) {
                found.insert(characteristics::GENDER, ("female".into(), utterance.index));
            } else if gender_male_re().is_match(text) {
                found.insert(characteristics::GENDER, ("male".into(), utterance.index));
            }
            if let Some(m) = pregnant_re().find(text) {
                let negated = clauses(text)
                    .iter()
                    .any(|c| c.contains(m.as_str()) && negation_re().is_match(c));
                let value = if negated { "no" } else { "yes" };
                found.insert(characteristics::PREGNANT, (value.into(), utterance.index));
            }
            if let Some(caps) = blood_pressure_re().captures(text) {
                found.insert(
                    characteristics::BLOOD_PRESSURE,
                    (caps[1].replace(' ', ""), utterance.index),
                );
            } else if let Some(caps) = high_bp_re().captures(text) {
                found.insert(
                    characteristics::BLOOD_PRESSURE,
                    (caps[1].to_lowercase(), utterance.index),
                );
            }
        }
        Ok(found
            .into_iter()
            .map(|(name, (value, turn))| characteristic_slot_value(name, &value, turn))
            .collect())
    }
}
