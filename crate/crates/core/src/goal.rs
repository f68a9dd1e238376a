//! Goals, goal similarity and schema compatibility.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workflow::FieldSet;

/// A goal: descriptor tokens plus the input/output interface it implies.
///
/// `subgoal_template` is ground truth for composite goals. It is written
/// under an oracle-only key and must never reach the solver; see
/// [`Goal::stripped`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub tokens: BTreeSet<String>,
    pub input_schema: FieldSet,
    pub output_schema: FieldSet,
    #[serde(rename = "oracle_subgoal_template", default, skip_serializing_if = "Option::is_none")]
    pub subgoal_template: Option<Vec<String>>,
}

impl Goal {
    pub fn new<T, S>(id: &str, tokens: T, input_schema: FieldSet, output_schema: FieldSet) -> Self
    where
        T: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Goal {
            id: id.to_string(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            input_schema,
            output_schema,
            subgoal_template: None,
        }
    }

    /// Copy without oracle-only data.
    pub fn stripped(&self) -> Goal {
        Goal { subgoal_template: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    Jaccard,
    WeightedOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBackend {
    pub kind: SimilarityKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

impl Default for SimilarityBackend {
    fn default() -> Self {
        SimilarityBackend { kind: SimilarityKind::Jaccard, parameters: BTreeMap::new() }
    }
}

impl SimilarityBackend {
    pub fn weighted_overlap(lambda: f64) -> Self {
        let mut parameters = BTreeMap::new();
        parameters.insert("lambda".to_string(), lambda.clamp(0.0, 1.0));
        SimilarityBackend { kind: SimilarityKind::WeightedOverlap, parameters }
    }

    /// Score of two non-empty token sets, without the emptiness check.
    pub fn score_tokens(&self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
        let inter = a.intersection(b).count() as f64;
        match self.kind {
            SimilarityKind::Jaccard => {
                let union = (a.len() + b.len()) as f64 - inter;
                if union == 0.0 {
                    0.0
                } else {
                    inter / union
                }
            }
            SimilarityKind::WeightedOverlap => {
                // Blend of overlap coefficient (lambda = 1) and
                // max-normalized overlap (lambda = 0).
                let lambda = self.parameters.get("lambda").copied().unwrap_or(0.5).clamp(0.0, 1.0);
                let (lo, hi) = (a.len().min(b.len()) as f64, a.len().max(b.len()) as f64);
                let denom = lambda * lo + (1.0 - lambda) * hi;
                if denom == 0.0 {
                    0.0
                } else {
                    (inter / denom).min(1.0)
                }
            }
        }
    }
}

/// Similarity of two goals in `[0, 1]`.
pub fn similarity(backend: &SimilarityBackend, a: &Goal, b: &Goal) -> Result<f64> {
    for g in [a, b] {
        if g.tokens.is_empty() {
            return Err(Error::EmptyGoal(g.id.clone()));
        }
    }
    Ok(backend.score_tokens(&a.tokens, &b.tokens))
}

/// True iff everything `consumer` needs is among `producer_outputs`.
pub fn schema_compat(producer_outputs: &FieldSet, consumer: &Goal) -> bool {
    consumer.input_schema.is_subset(producer_outputs)
}
