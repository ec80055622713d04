//! Generation-record manifests.
//!
//! A manifest is a JSON array with one object per (prompt, seed) generation.
//! Each record stores the requested objects, the ground-truth presence set
//! and centroids observed on the final image, and the detector's per-object
//! presence predictions at the critical timesteps of the collection grid.
//! Attention/latent tensor payloads are not part of the manifest; only the
//! metadata needed by the metrics and the replay driver is.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::cost::DEFAULT_CT_GRID;
use crate::error::{Error, Result};
use crate::gating::{Centroid, ObjectRef, PresencePrediction, RelationSpec};

/// Ground truth and detector outputs for one (prompt, seed) generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub seed: u64,
    #[serde(default)]
    pub generator_id: String,
    /// Objects requested by the prompt; `index` equals list position.
    pub requested_objects: Vec<ObjectRef>,
    /// Indices of objects actually present in the final image.
    pub present_objects: BTreeSet<usize>,
    /// Final-image centroids, keyed by object index; present objects only.
    #[serde(default)]
    pub centroids: BTreeMap<usize, Centroid>,
    /// Detector presence predictions per critical timestep, aligned with
    /// `requested_objects`.
    #[serde(default)]
    pub per_ct_predictions: BTreeMap<u32, Vec<PresencePrediction>>,
    /// Pairwise spatial constraints requested by the prompt, if any.
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
}

impl GenerationRecord {
    /// Number of requested objects present in the final image.
    pub fn present_count(&self) -> usize {
        self.present_objects.len()
    }

    /// True iff every requested object is present in the final image.
    pub fn truth_complete(&self) -> bool {
        self.present_objects.len() == self.requested_objects.len()
    }

    /// Checks every schema invariant. Deserialization does not go through
    /// the validating constructors, so ingestion calls this per record.
    pub fn validate(&self) -> Result<()> {
        if self.requested_objects.is_empty() {
            return Err(Error::Data("requested_objects is empty".into()));
        }
        for (position, obj) in self.requested_objects.iter().enumerate() {
            if obj.index != position {
                return Err(Error::Data(format!(
                    "requested_objects[{position}] has index {}, expected {position}",
                    obj.index
                )));
            }
            if obj.name.is_empty() {
                return Err(Error::Data(format!(
                    "requested_objects[{position}] has an empty name"
                )));
            }
        }
        let known: BTreeSet<usize> = (0..self.requested_objects.len()).collect();
        if let Some(bad) = self.present_objects.difference(&known).next() {
            return Err(Error::Data(format!(
                "present_objects references unknown object index {bad}"
            )));
        }
        for (&index, centroid) in &self.centroids {
            if !self.present_objects.contains(&index) {
                return Err(Error::Data(format!(
                    "centroids keyed by object {index}, which is not present"
                )));
            }
            Centroid::new(centroid.x, centroid.y).map_err(|e| {
                Error::Data(format!("centroid for object {index}: {e}"))
            })?;
        }
        for (&ct, predictions) in &self.per_ct_predictions {
            if !DEFAULT_CT_GRID.contains(&ct) {
                return Err(Error::Data(format!(
                    "per_ct_predictions timestep {ct} is not on the collection grid {DEFAULT_CT_GRID:?}"
                )));
            }
            if predictions.len() != self.requested_objects.len() {
                return Err(Error::Data(format!(
                    "predictions at ct {ct} cover {} objects, expected {}",
                    predictions.len(),
                    self.requested_objects.len()
                )));
            }
            for (expected, prediction) in self.requested_objects.iter().zip(predictions) {
                if prediction.object != *expected {
                    return Err(Error::Data(format!(
                        "prediction at ct {ct} is for {}, expected {expected}",
                        prediction.object
                    )));
                }
            }
        }
        for rel in &self.relations {
            RelationSpec::new(rel.subject, rel.object, rel.kind)
                .map_err(|e| Error::Data(format!("{e}")))?;
            for endpoint in [rel.subject, rel.object] {
                if !known.contains(&endpoint) {
                    return Err(Error::Data(format!(
                        "relation references unknown object index {endpoint}"
                    )));
                }
            }
        }
        if !self.relations.is_empty() {
            for &index in &self.present_objects {
                if !self.centroids.contains_key(&index) {
                    return Err(Error::Data(format!(
                        "present object {} lacks a centroid but relations are requested",
                        self.requested_objects[index]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn located(record_index: usize, record: &GenerationRecord, err: Error) -> Error {
    Error::Data(format!(
        "record {record_index} (prompt {:?}, seed {}): {err}",
        record.prompt, record.seed
    ))
}

/// Parses and validates a manifest from JSON text.
pub fn ingest_manifest_str(json: &str) -> Result<Vec<GenerationRecord>> {
    let records: Vec<GenerationRecord> =
        serde_json::from_str(json).map_err(|e| Error::Data(format!("manifest parse: {e}")))?;
    let mut seen: BTreeSet<(&str, u64)> = BTreeSet::new();
    for (i, record) in records.iter().enumerate() {
        record.validate().map_err(|e| located(i, record, e))?;
        if !seen.insert((record.prompt.as_str(), record.seed)) {
            return Err(Error::Data(format!(
                "record {i}: duplicate (prompt {:?}, seed {})",
                record.prompt, record.seed
            )));
        }
    }
    Ok(records)
}

/// Parses and validates a manifest from a reader.
pub fn ingest_manifest<R: Read>(mut reader: R) -> Result<Vec<GenerationRecord>> {
    let mut buf = String::new();
    reader
        .read_to_string(&mut buf)
        .map_err(|e| Error::Data(format!("manifest read: {e}")))?;
    ingest_manifest_str(&buf)
}

/// Serializes records to canonical manifest JSON (sorted maps, fixed field
/// order, trailing newline); ingest-then-serialize is byte-stable.
pub fn write_manifest(records: &[GenerationRecord]) -> String {
    let mut out =
        serde_json::to_string_pretty(records).expect("records serialize infallibly");
    out.push('\n');
    out
}
