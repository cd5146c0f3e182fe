//! Quadruplet/triplet conversion.
//!
//! The hatefulness label is fully determined by the targeted group: a record is
//! non-hateful exactly when its group is the reserved non-hate token. Dropping
//! the label is therefore lossless for rule-consistent data.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::model::{
    parse_annotation, AnnotationError, AnnotationFormat, AnnotationList, Hatefulness, Quadruplet,
    Triplet,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrRule {
    pub non_hate_group_token: String,
}

impl Default for TrRule {
    fn default() -> Self {
        Self {
            non_hate_group_token: "non-hate".to_string(),
        }
    }
}

impl TrRule {
    pub fn validate(&self) -> Result<(), String> {
        if self.non_hate_group_token.trim().is_empty() {
            return Err("non_hate_group_token must not be blank".to_string());
        }
        Ok(())
    }

    pub fn label_for_group(&self, group: &str) -> Hatefulness {
        if group == self.non_hate_group_token.trim() {
            Hatefulness::NonHate
        } else {
            Hatefulness::Hate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("group `{group}` is inconsistent with label {label:?}")]
pub struct RuleViolation {
    pub group: String,
    pub label: Hatefulness,
}

pub fn quad_to_triplet(q: &Quadruplet, rule: &TrRule) -> Result<Triplet, RuleViolation> {
    if rule.label_for_group(&q.targeted_group) != q.hateful {
        return Err(RuleViolation {
            group: q.targeted_group.clone(),
            label: q.hateful,
        });
    }
    Ok(Triplet {
        target: q.target.clone(),
        argument: q.argument.clone(),
        targeted_group: q.targeted_group.clone(),
    })
}

pub fn triplet_to_quad(t: &Triplet, rule: &TrRule) -> Quadruplet {
    Quadruplet {
        target: t.target.clone(),
        argument: t.argument.clone(),
        targeted_group: t.targeted_group.clone(),
        hateful: rule.label_for_group(&t.targeted_group),
    }
}

pub fn recover_quadruplets(list: &AnnotationList<Triplet>, rule: &TrRule) -> AnnotationList<Quadruplet> {
    let items = list.items().iter().map(|t| triplet_to_quad(t, rule)).collect();
    AnnotationList::new(items).expect("non-empty input maps to non-empty output")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OnViolation {
    #[default]
    Skip,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub sample_id: u64,
    pub record_index: usize,
    pub record: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    /// Samples removed because every one of their records violated the rule.
    pub dropped_samples: Vec<u64>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty() && self.dropped_samples.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("sample {id}: {source}")]
    Parse { id: u64, source: AnnotationError },
    #[error("{} rule violation(s), first in sample {}", .0.violations.len(), .0.violations[0].sample_id)]
    Aborted(ViolationReport),
}

/// Rewrites every sample's `output` from quadruplets to triplets, keeping ids
/// and order.
pub fn transform_dataset(
    samples: &[Sample],
    rule: &TrRule,
    format: &AnnotationFormat,
    on_violation: OnViolation,
) -> Result<(Vec<Sample>, ViolationReport), TransformError> {
    let mut report = ViolationReport::default();
    let mut out = Vec::with_capacity(samples.len());

    for sample in samples {
        let quads: AnnotationList<Quadruplet> = parse_annotation(&sample.output, format)
            .map_err(|source| TransformError::Parse { id: sample.id, source })?;
        let mut kept = Vec::with_capacity(quads.len());
        for (idx, q) in quads.items().iter().enumerate() {
            match quad_to_triplet(q, rule) {
                Ok(t) => kept.push(t),
                Err(v) => {
                    let single = AnnotationList::new(vec![q.clone()]).expect("one item");
                    report.violations.push(Violation {
                        sample_id: sample.id,
                        record_index: idx,
                        record: single.serialize(format),
                        reason: v.to_string(),
                    });
                }
            }
        }
        match AnnotationList::new(kept) {
            Ok(list) => out.push(Sample {
                id: sample.id,
                content: sample.content.clone(),
                output: list.serialize(format),
            }),
            Err(_) => report.dropped_samples.push(sample.id),
        }
    }

    if on_violation == OnViolation::Abort && !report.violations.is_empty() {
        return Err(TransformError::Aborted(report));
    }
    Ok((out, report))
}
