//! Recommendation metrics (per-dialogue Jaccard and F1 averaged over the
//! set), the weighted diagnostic score, and aggregate reporting with
//! error-taxonomy tags.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Empty-gold handling: strict mode treats an empty gold set as a data
/// fault; lenient mode scores the degenerate empty/empty pair as 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub id: String,
    pub gold: BTreeSet<String>,
    pub predicted: BTreeSet<String>,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Manual error-taxonomy tags attached to a report, never auto-inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    OverlookedFactors,
    LackMedicationKnowledge,
    OverlookedMainSymptom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_dialogue: Vec<DialogueScore>,
    pub mean_jaccard: f64,
    pub mean_f1: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub error_tags: BTreeMap<String, ErrorTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScore {
    pub aspects: f64,
    pub information: f64,
    pub score: f64,
}

/// Per-dialogue set overlap: jaccard |Y ∩ Ŷ| / |Y ∪ Ŷ|, precision and recall
/// from the intersection, f1 = 2PR/(P+R) with 0 when P+R = 0. Sets compare
/// on canonical names.
pub fn score_dialogue(
    id: impl Into<String>,
    gold: &BTreeSet<String>,
    predicted: &BTreeSet<String>,
    mode: EvalMode,
) -> Result<DialogueScore> {
    let id = id.into();
    if gold.is_empty() && mode == EvalMode::Strict {
        return Err(Error::Evaluation(format!(
            "dialogue {id}: empty gold medication set in strict mode"
        )));
    }
    let intersection = gold.intersection(predicted).count() as f64;
    let union = gold.union(predicted).count() as f64;

    let jaccard = if union == 0.0 { 1.0 } else { intersection / union };
    let precision = if predicted.is_empty() {
        if gold.is_empty() { 1.0 } else { 0.0 }
    } else {
        intersection / predicted.len() as f64
    };
    let recall = if gold.is_empty() {
        if predicted.is_empty() { 1.0 } else { 0.0 }
    } else {
        intersection / gold.len() as f64
    };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };

    Ok(DialogueScore {
        id,
        gold: gold.clone(),
        predicted: predicted.clone(),
        jaccard,
        precision,
        recall,
        f1,
    })
}

/// Arithmetic means over the per-dialogue scores.
pub fn aggregate(scores: Vec<DialogueScore>) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::Evaluation("cannot aggregate an empty score list".into()));
    }
    let count = scores.len();
    let mean_jaccard = scores.iter().map(|s| s.jaccard).sum::<f64>() / count as f64;
    let mean_f1 = scores.iter().map(|s| s.f1).sum::<f64>() / count as f64;
    Ok(EvalReport {
        per_dialogue: scores,
        mean_jaccard,
        mean_f1,
        count,
        error_tags: BTreeMap::new(),
    })
}

/// Weighted coverage of the interviewing checklist:
/// 0.3 x aspect coverage + 0.7 x information coverage.
pub fn diagnostic_score(
    aspects_hits: usize,
    aspects_total: usize,
    info_hits: usize,
    info_total: usize,
) -> Result<DiagnosticScore> {
    if aspects_total == 0 || info_total == 0 {
        return Err(Error::Argument("checklist totals must be at least 1".into()));
    }
    if aspects_hits > aspects_total || info_hits > info_total {
        return Err(Error::Argument(format!(
            "hits exceed totals: {aspects_hits}/{aspects_total}, {info_hits}/{info_total}"
        )));
    }
    let aspects = aspects_hits as f64 / aspects_total as f64;
    let information = info_hits as f64 / info_total as f64;
    Ok(DiagnosticScore { aspects, information, score: 0.3 * aspects + 0.7 * information })
}

/// Interviewing checklist: named aspect and information items, each marked
/// hit or miss by the harness or by hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checklist {
    pub aspects: BTreeMap<String, bool>,
    pub information: BTreeMap<String, bool>,
}

impl Checklist {
    pub fn from_json(json: &str) -> Result<Checklist> {
        serde_json::from_str(json).map_err(|e| Error::parse("checklist", e.to_string()))
    }

    pub fn score(&self) -> Result<DiagnosticScore> {
        diagnostic_score(
            self.aspects.values().filter(|hit| **hit).count(),
            self.aspects.len(),
            self.information.values().filter(|hit| **hit).count(),
            self.information.len(),
        )
    }
}
