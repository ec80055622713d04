//! Object-presence and spatial-relation gating.
//!
//! A generation attempt is allowed to proceed only if every requested object
//! is predicted present *and* every requested pairwise spatial relation holds
//! between predicted centroids. The presence predictions come from pluggable
//! detectors; two reference detectors live here: a stochastic one
//! characterized by an operating point (recall, TN-rate) and a deterministic
//! one thresholding cross-attention energy.
//!
//! Coordinates are normalized to `[0,1]` with the origin at the top-left and
//! y growing downward, so "top" means smaller y.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One object requested by a prompt: its 0-based position in the prompt's
/// object list plus its free-text label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub index: usize,
    pub name: String,
}

impl ObjectRef {
    pub fn new(index: usize, name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Param(format!("object {index} has an empty name")));
        }
        Ok(Self { index, name })
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} ({})", self.index, self.name)
    }
}

/// Normalized image coordinates of an object's center of mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
}

impl Centroid {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y))
        {
            return Err(Error::Param(format!(
                "centroid ({x}, {y}) outside the unit square"
            )));
        }
        Ok(Self { x, y })
    }
}

/// The four supported pairwise spatial relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Top,
    Bottom,
    Left,
    Right,
}

impl RelationKind {
    pub const ALL: [RelationKind; 4] = [
        RelationKind::Top,
        RelationKind::Bottom,
        RelationKind::Left,
        RelationKind::Right,
    ];
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationKind::Top => "top",
            RelationKind::Bottom => "bottom",
            RelationKind::Left => "left",
            RelationKind::Right => "right",
        };
        f.write_str(s)
    }
}

/// A pairwise spatial constraint between two objects, addressed by index.
/// The relation describes the subject relative to the object: "0 left of 1"
/// requires object 0's centroid strictly left of object 1's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationSpec {
    pub subject: usize,
    pub object: usize,
    pub kind: RelationKind,
}

impl RelationSpec {
    pub fn new(subject: usize, object: usize, kind: RelationKind) -> Result<Self> {
        if subject == object {
            return Err(Error::Param(format!(
                "relation {kind} relates object {subject} to itself"
            )));
        }
        Ok(Self {
            subject,
            object,
            kind,
        })
    }
}

/// Per-object binary presence prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresencePrediction {
    pub object: ObjectRef,
    pub present: bool,
}

/// Outcome of the joint gate: proceed iff every object is predicted present
/// and every relation holds. The failure lists enumerate each violated
/// conjunct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub proceed: bool,
    pub presence_ok: bool,
    pub relations_ok: bool,
    pub failed_objects: Vec<ObjectRef>,
    pub failed_relations: Vec<RelationSpec>,
}

impl GateDecision {
    pub(crate) fn from_conjuncts(
        predictions: &[PresencePrediction],
        relation_results: &[(RelationSpec, bool)],
    ) -> Self {
        let failed_objects: Vec<ObjectRef> = predictions
            .iter()
            .filter(|p| !p.present)
            .map(|p| p.object.clone())
            .collect();
        let failed_relations: Vec<RelationSpec> = relation_results
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(rel, _)| *rel)
            .collect();
        let presence_ok = failed_objects.is_empty();
        let relations_ok = failed_relations.is_empty();
        GateDecision {
            proceed: presence_ok && relations_ok,
            presence_ok,
            relations_ok,
            failed_objects,
            failed_relations,
        }
    }
}

/// Stochastic characterization of a presence detector: the probability that
/// a truly-present object is predicted present (recall) and the probability
/// that a truly-absent object is predicted absent (TN-rate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub recall: f64,
    pub tn_rate: f64,
    pub label: String,
}

impl DetectorProfile {
    pub fn new(recall: f64, tn_rate: f64, label: impl Into<String>) -> Result<Self> {
        for (name, v) in [("recall", recall), ("tn_rate", tn_rate)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::Param(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(Self {
            recall,
            tn_rate,
            label: label.into(),
        })
    }

    /// Never errs: recall = TN-rate = 1.
    pub fn perfect() -> Self {
        Self {
            recall: 1.0,
            tn_rate: 1.0,
            label: "perfect".to_owned(),
        }
    }
}

/// Square grid of non-negative cross-attention activations for one object at
/// one timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    values: Vec<f64>,
    side: usize,
    pub object: ObjectRef,
    pub timestep: u32,
}

impl AttentionMap {
    pub fn new(values: Vec<f64>, side: usize, object: ObjectRef, timestep: u32) -> Result<Self> {
        if side == 0 {
            return Err(Error::Param("attention map side must be >= 1".into()));
        }
        if values.len() != side * side {
            return Err(Error::Param(format!(
                "attention map for {object} has {} entries, expected {}",
                values.len(),
                side * side
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Param(format!(
                "attention map for {object} has a negative or non-finite entry"
            )));
        }
        Ok(Self {
            values,
            side,
            object,
            timestep,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Maximum activation over the grid.
    pub fn max_activation(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

fn validate_tolerance(tolerance: f64) -> Result<()> {
    if !(tolerance.is_finite() && (0.0..0.5).contains(&tolerance)) {
        return Err(Error::Param(format!(
            "relation tolerance {tolerance} outside [0, 0.5)"
        )));
    }
    Ok(())
}

/// Checks whether `subject` stands in the given relation to `object` with a
/// margin strictly greater than `tolerance` (a fraction of image size, applied
/// per axis). Equality at the margin fails.
pub fn check_relation(
    subject: Centroid,
    object: Centroid,
    kind: RelationKind,
    tolerance: f64,
) -> Result<bool> {
    validate_tolerance(tolerance)?;
    let holds = match kind {
        RelationKind::Left => subject.x + tolerance < object.x,
        RelationKind::Right => subject.x > object.x + tolerance,
        RelationKind::Top => subject.y + tolerance < object.y,
        RelationKind::Bottom => subject.y > object.y + tolerance,
    };
    Ok(holds)
}

/// Presence criterion: true iff every requested object is predicted present.
/// A prompt with zero objects is malformed input.
pub fn gate_presence(predictions: &[PresencePrediction]) -> Result<bool> {
    if predictions.is_empty() {
        return Err(Error::Param(
            "presence gate needs at least one object prediction".into(),
        ));
    }
    Ok(predictions.iter().all(|p| p.present))
}

/// Joint gate: the conjunction of the presence criterion and every relation
/// check. With `relations` empty this reduces exactly to [`gate_presence`].
///
/// Centroids are keyed by object index. Every relation endpoint must have a
/// prediction and a centroid; otherwise the inputs are inconsistent.
pub fn gate_joint(
    predictions: &[PresencePrediction],
    relations: &[RelationSpec],
    centroids: &BTreeMap<usize, Centroid>,
    tolerance: f64,
) -> Result<GateDecision> {
    validate_tolerance(tolerance)?;
    // Errors on an empty prediction list.
    gate_presence(predictions)?;

    let mut known = BTreeSet::new();
    for p in predictions {
        if !known.insert(p.object.index) {
            return Err(Error::Param(format!(
                "duplicate prediction for object index {}",
                p.object.index
            )));
        }
    }

    let mut relation_results = Vec::with_capacity(relations.len());
    for rel in relations {
        for endpoint in [rel.subject, rel.object] {
            if !known.contains(&endpoint) {
                return Err(Error::Consistency(format!(
                    "relation {} -> {} ({}) references unknown object index {endpoint}",
                    rel.subject, rel.object, rel.kind
                )));
            }
        }
        let c_subject = centroids.get(&rel.subject).ok_or_else(|| {
            Error::Consistency(format!("no centroid for relation subject {}", rel.subject))
        })?;
        let c_object = centroids.get(&rel.object).ok_or_else(|| {
            Error::Consistency(format!("no centroid for relation object {}", rel.object))
        })?;
        let holds = check_relation(*c_subject, *c_object, rel.kind, tolerance)?;
        relation_results.push((*rel, holds));
    }

    Ok(GateDecision::from_conjuncts(predictions, &relation_results))
}

/// Simulates one detector call against ground truth: a present object is
/// predicted present with probability `recall`, an absent one is predicted
/// absent with probability `tn_rate`. Draws are independent per object.
pub fn stochastic_detector<R: Rng + ?Sized>(
    object: &ObjectRef,
    truth_present: bool,
    profile: &DetectorProfile,
    rng: &mut R,
) -> PresencePrediction {
    let present = if truth_present {
        rng.random::<f64>() < profile.recall
    } else {
        rng.random::<f64>() >= profile.tn_rate
    };
    PresencePrediction {
        object: object.clone(),
        present,
    }
}

/// Deterministic detector over cross-attention energy: present iff the peak
/// activation strictly exceeds `threshold`. Weakly activated maps are the
/// telltale of a missing object.
pub fn attention_energy_detector(map: &AttentionMap, threshold: f64) -> Result<PresencePrediction> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::Param(format!(
            "attention threshold {threshold} must be positive"
        )));
    }
    Ok(PresencePrediction {
        object: map.object.clone(),
        present: map.max_activation() > threshold,
    })
}
