//! Dialogue representation and turn bookkeeping.
//!
//! A dialogue is an ordered list of patient/doctor utterances. All downstream
//! stages (extraction windows, graph provenance, generation) address turns by
//! their ordinal index, so indices are assigned once at load and never change.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Speaker of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Doctor,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Patient => "patient",
            Role::Doctor => "doctor",
        }
    }
}

/// Medical department a dialogue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Department {
    Respiratory,
    Gastroenterology,
    Dermatology,
    Other,
}

impl Department {
    fn parse(s: &str) -> Department {
        match s.to_ascii_lowercase().as_str() {
            "respiratory" => Department::Respiratory,
            "gastroenterology" => Department::Gastroenterology,
            "dermatology" => Department::Dermatology,
            _ => Department::Other,
        }
    }
}

/// One turn of a dialogue. `index` is the ordinal position assigned at load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub role: Role,
    pub text: String,
}

/// A full patient/doctor dialogue, optionally with gold medications for
/// evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub department: Option<Department>,
    pub turns: Vec<Utterance>,
    pub gold_medications: Option<BTreeSet<String>>,
}

/// Context window radius, in patient/doctor turn pairs around the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Radius(usize),
    Unbounded,
}

// Wire format. Field names are normative; turn indices are implicit in order.
#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    department: Option<String>,
    turns: Vec<TurnRecord>,
    gold_medications: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    role: String,
    text: String,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Load dialogues from a JSON Lines stream, one record per line.
///
/// Every record must parse or the whole load fails with a positioned error.
/// Text is NFC-normalized so replay fingerprints stay stable across input
/// encodings of the same content.
pub fn load_dialogues(reader: impl BufRead) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let position = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("line {position}"), e.to_string()))?;
        out.push(dialogue_from_record(record, position)?);
    }
    Ok(out)
}

fn dialogue_from_record(record: DialogueRecord, line: usize) -> Result<Dialogue> {
    let location = format!("line {line}");
    if record.id.trim().is_empty() {
        return Err(Error::schema(location, "dialogue id must be non-empty"));
    }
    let mut turns = Vec::with_capacity(record.turns.len());
    for (index, turn) in record.turns.into_iter().enumerate() {
        let role = match turn.role.as_str() {
            "patient" => Role::Patient,
            "doctor" => Role::Doctor,
            other => {
                return Err(Error::schema(
                    location,
                    format!("unknown role {other:?} in turn {index}"),
                ))
            }
        };
        let text = nfc(&turn.text);
        if text.trim().is_empty() {
            return Err(Error::schema(
                location,
                format!("empty text in turn {index}"),
            ));
        }
        turns.push(Utterance { index, role, text });
    }
    Ok(Dialogue {
        id: nfc(&record.id),
        department: record.department.as_deref().map(Department::parse),
        turns,
        gold_medications: record
            .gold_medications
            .map(|g| g.into_iter().map(|m| nfc(&m)).collect()),
    })
}

/// Serialize dialogues back to the JSON Lines wire format.
pub fn serialize_dialogues(dialogues: &[Dialogue]) -> Result<String> {
    let mut out = String::new();
    for d in dialogues {
        let record = DialogueRecord {
            id: d.id.clone(),
            department: d.department.map(|dep| {
                match dep {
                    Department::Respiratory => "respiratory",
                    Department::Gastroenterology => "gastroenterology",
                    Department::Dermatology => "dermatology",
                    Department::Other => "other",
                }
                .to_string()
            }),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecord {
                    role: t.role.as_str().to_string(),
                    text: t.text.clone(),
                })
                .collect(),
            gold_medications: d
                .gold_medications
                .as_ref()
                .map(|g| g.iter().cloned().collect()),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

impl Dialogue {
    /// Utterances whose index lies in `[center - 2k, center + 2k]`, clipped to
    /// dialogue bounds. A radius of k patient turns spans 2k utterances since
    /// patient and doctor turns interleave. `Unbounded` returns the whole
    /// history up to and including `center`.
    pub fn context_window(&self, center: usize, window: Window) -> Result<&[Utterance]> {
        let turn = self
            .turns
            .get(center)
            .ok_or_else(|| Error::Index(format!("turn {center} out of range")))?;
        if turn.role != Role::Patient {
            return Err(Error::Index(format!("turn {center} is not a patient turn")));
        }
        let (lo, hi) = match window {
            Window::Unbounded => (0, center),
            Window::Radius(k) => {
                let span = 2 * k;
                let lo = center.saturating_sub(span);
                let hi = (center + span).min(self.turns.len() - 1);
                (lo, hi)
            }
        };
        Ok(&self.turns[lo..=hi])
    }

    /// Like [`Dialogue::context_window`] with an absolute cap on the number
    /// of utterances. When the window exceeds the cap, the oldest utterances
    /// are dropped first.
    pub fn context_window_capped(
        &self,
        center: usize,
        window: Window,
        cap: Option<usize>,
    ) -> Result<&[Utterance]> {
        let slice = self.context_window(center, window)?;
        match cap {
            Some(cap) if slice.len() > cap => Ok(&slice[slice.len() - cap..]),
            _ => Ok(slice),
        }
    }

    /// Merge consecutive same-role turns into single utterances, reassigning
    /// indices. Never applied implicitly: merging loses the original turn
    /// indices used by graph provenance.
    pub fn merge_consecutive(&self) -> Dialogue {
        let mut turns: Vec<Utterance> = Vec::new();
        for turn in &self.turns {
            match turns.last_mut() {
                Some(last) if last.role == turn.role => {
                    last.text.push(' ');
                    last.text.push_str(&turn.text);
                }
                _ => turns.push(Utterance {
                    index: turns.len(),
                    role: turn.role,
                    text: turn.text.clone(),
                }),
            }
        }
        Dialogue {
            id: self.id.clone(),
            department: self.department,
            turns,
            gold_medications: self.gold_medications.clone(),
        }
    }

    /// Index of the last patient turn, the position the next doctor turn is
    /// generated from.
    pub fn last_patient_turn(&self) -> Option<usize> {
        self.turns.iter().rev().find(|t| t.role == Role::Patient).map(|t| t.index)
    }

    /// True when the dialogue ends on a patient turn, the precondition for
    /// generating the next doctor response.
    pub fn ends_with_patient_turn(&self) -> bool {
        matches!(self.turns.last(), Some(t) if t.role == Role::Patient)
    }

    pub fn patient_turn_indices(&self) -> Vec<usize> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Patient)
            .map(|t| t.index)
            .collect()
    }

    /// Render the dialogue history as `patient:`/`doctor:` prefixed lines.
    pub fn render_history(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.role.as_str(), t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(n: usize) -> Dialogue {
        // Alternating patient/doctor, patient first.
        let turns = (0..n)
            .map(|i| Utterance {
                index: i,
                role: if i % 2 == 0 { Role::Patient } else { Role::Doctor },
                text: format!("turn {i}"),
            })
            .collect();
        Dialogue {
            id: "d".into(),
            department: None,
            turns,
            gold_medications: None,
        }
    }

    #[test]
    fn load_single_record_with_three_turns() {
        let jsonl = r#"{"id":"d1","department":"respiratory","turns":[{"role":"patient","text":"I have a cough"},{"role":"doctor","text":"How long?"},{"role":"patient","text":"A week"}],"gold_medications":null}"#;
        let dialogues = load_dialogues(jsonl.as_bytes()).unwrap();
        assert_eq!(dialogues.len(), 1);
        let d = &dialogues[0];
        assert_eq!(d.id, "d1");
        assert_eq!(d.department, Some(Department::Respiratory));
        assert_eq!(d.turns.len(), 3);
        assert_eq!(d.turns[0].index, 0);
        assert_eq!(d.turns[2].role, Role::Patient);
    }

    #[test]
    fn load_empty_file_yields_empty_sequence() {
        let dialogues = load_dialogues("".as_bytes()).unwrap();
        assert!(dialogues.is_empty());
    }

    #[test]
    fn unknown_role_is_schema_error_with_line() {
        let jsonl = r#"{"id":"d1","department":null,"turns":[{"role":"nurse","text":"hi"}],"gold_medications":null}"#;
        let err = load_dialogues(jsonl.as_bytes()).unwrap_err();
        match err {
            Error::Schema { location, message } => {
                assert_eq!(location, "line 1");
                assert!(message.contains("nurse"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error_with_line() {
        let jsonl = "{\"id\":\"a\",\"department\":null,\"turns\":[],\"gold_medications\":null}\nnot json";
        let err = load_dialogues(jsonl.as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_turn_text_rejected() {
        let jsonl = r#"{"id":"d1","department":null,"turns":[{"role":"patient","text":"   "}],"gold_medications":null}"#;
        assert!(load_dialogues(jsonl.as_bytes()).is_err());
    }

    #[test]
    fn text_is_nfc_normalized_on_load() {
        // e + combining acute accent normalizes to the precomposed form.
        let jsonl = "{\"id\":\"d1\",\"department\":null,\"turns\":[{\"role\":\"patient\",\"text\":\"cafe\\u0301\"}],\"gold_medications\":null}";
        let dialogues = load_dialogues(jsonl.as_bytes()).unwrap();
        assert_eq!(dialogues[0].turns[0].text, "caf\u{e9}");
    }

    #[test]
    fn round_trip_is_stable() {
        let jsonl = "{\"id\":\"d1\",\"department\":\"dermatology\",\"turns\":[{\"role\":\"patient\",\"text\":\"itchy skin\"},{\"role\":\"doctor\",\"text\":\"since when?\"}],\"gold_medications\":[\"Loratadine\"]}\n";
        let dialogues = load_dialogues(jsonl.as_bytes()).unwrap();
        let serialized = serialize_dialogues(&dialogues).unwrap();
        let reloaded = load_dialogues(serialized.as_bytes()).unwrap();
        assert_eq!(dialogues, reloaded);
        // Byte-equivalence modulo field ordering: our writer uses the declared
        // field order, so a second pass is byte-identical.
        assert_eq!(serialized, serialize_dialogues(&reloaded).unwrap());
    }

    #[test]
    fn window_center_2_k_1_covers_0_to_4() {
        let d = dialogue(6);
        let w = d.context_window(2, Window::Radius(1)).unwrap();
        let indices: Vec<usize> = w.iter().map(|u| u.index).collect();
        assert_eq!(indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn window_left_clips_at_start() {
        let d = dialogue(6);
        let w = d.context_window(0, Window::Radius(1)).unwrap();
        let indices: Vec<usize> = w.iter().map(|u| u.index).collect();
        assert_eq!(indices, vec![0, 1, 2]);
    }

    #[test]
    fn unbounded_window_is_full_history_up_to_center() {
        let mut d = dialogue(6);
        d.turns[5].role = Role::Patient; // make index 5 a valid center
        let w = d.context_window(5, Window::Unbounded).unwrap();
        let indices: Vec<usize> = w.iter().map(|u| u.index).collect();
        assert_eq!(indices, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn window_center_out_of_range_errors() {
        let d = dialogue(4);
        assert!(matches!(d.context_window(9, Window::Radius(1)), Err(Error::Index(_))));
    }

    #[test]
    fn window_rejects_doctor_center() {
        let d = dialogue(4);
        assert!(d.context_window(1, Window::Radius(1)).is_err());
    }

    #[test]
    fn window_size_bounded_by_4k_plus_1() {
        let d = dialogue(40);
        for k in 0..5 {
            for center in d.patient_turn_indices() {
                let w = d.context_window(center, Window::Radius(k)).unwrap();
                assert!(w.len() <= 4 * k + 1);
                // Contiguity: indices ascend by one.
                for pair in w.windows(2) {
                    assert_eq!(pair[1].index, pair[0].index + 1);
                }
            }
        }
    }

    #[test]
    fn capped_window_drops_oldest() {
        let d = dialogue(10);
        // Radius 2 around center 6 spans [2, 9]; cap 3 keeps the newest 3.
        let w = d.context_window_capped(6, Window::Radius(2), Some(3)).unwrap();
        let indices: Vec<usize> = w.iter().map(|u| u.index).collect();
        assert_eq!(indices, vec![7, 8, 9]);
    }

    #[test]
    fn merge_consecutive_same_role_turns() {
        let d = Dialogue {
            id: "d".into(),
            department: None,
            turns: vec![
                Utterance { index: 0, role: Role::Patient, text: "a".into() },
                Utterance { index: 1, role: Role::Patient, text: "b".into() },
                Utterance { index: 2, role: Role::Doctor, text: "c".into() },
            ],
            gold_medications: None,
        };
        let merged = d.merge_consecutive();
        assert_eq!(merged.turns.len(), 2);
        assert_eq!(merged.turns[0].text, "a b");
        assert_eq!(merged.turns[1].index, 1);
        // The original is untouched.
        assert_eq!(d.turns.len(), 3);
    }

    #[test]
    fn last_patient_turn_found() {
        let d = dialogue(5);
        assert_eq!(d.last_patient_turn(), Some(4));
        assert!(d.ends_with_patient_turn());
    }
}
