//! Metrics over labeled generation records.
//!
//! All metrics are pure aggregations over [`GenerationRecord`]s: the
//! minimum-subject counts (MG-N) with per-seed statistics, the localization
//! metrics (MG-loc and Relation Consistency), and image-level confusion
//! statistics of the detector at a critical timestep. Undefined metrics
//! (empty conditioning sets) are reported as `None`, never as 0.

mod manifest;

pub use manifest::{ingest_manifest, ingest_manifest_str, write_manifest, GenerationRecord};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::check_relation;

/// Mean and per-seed spread of one MG-N value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgStat {
    pub mean: f64,
    /// Population standard deviation over seeds; `None` with fewer than two
    /// seed groups.
    pub std: Option<f64>,
}

/// Per-seed values of a metric plus their mean and population standard
/// deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub per_seed: BTreeMap<u64, f64>,
    pub mean: f64,
    pub std: f64,
}

/// Localization metrics for the one-relation evaluation protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    /// Percentage of records with both relation endpoints present.
    pub mg2: f64,
    /// Percentage of records with both endpoints present and the relation
    /// satisfied on ground-truth centroids.
    pub mg_loc: f64,
    /// `100 * mg_loc / mg2`; `None` when no record has both endpoints.
    pub relation_consistency: Option<f64>,
    /// Size of the conditioning set (records with both endpoints present).
    pub both_present: u64,
}

/// Image-level confusion of the detector at one critical timestep. Positive
/// means "complete image allowed to proceed".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    /// `100 * TP / (TP + FN)` over truth-complete records; `None` if none.
    pub recall: Option<f64>,
    /// `100 * TN / (TN + FP)` over truth-incomplete records; `None` if none.
    pub tn_rate: Option<f64>,
}

/// Full metric report for one record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub record_count: u64,
    pub seed_count: u64,
    /// MG-N keyed by N.
    pub mg: BTreeMap<u32, MgStat>,
    /// Localization metrics; `None` unless every record carries exactly one
    /// relation.
    pub relation: Option<RelationMetrics>,
    /// Detector confusion at the requested timestep, when one was given.
    pub confusion: Option<ConfusionReport>,
}

fn require_records(records: &[GenerationRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Param("record set is empty".into()));
    }
    Ok(())
}

/// Percentage of records whose final image contains at least `n` of the
/// requested objects.
pub fn compute_mg_n(records: &[GenerationRecord], n: u32) -> Result<f64> {
    require_records(records)?;
    if n == 0 {
        return Err(Error::Param("MG-N needs n >= 1".into()));
    }
    let hits = records
        .iter()
        .filter(|r| r.present_count() >= n as usize)
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Groups records by seed and reports per-seed MG-N with mean and population
/// standard deviation. Needs at least two seed groups.
pub fn compute_seed_stats(records: &[GenerationRecord], n: u32) -> Result<SeedStats> {
    require_records(records)?;
    let mut groups: BTreeMap<u64, Vec<GenerationRecord>> = BTreeMap::new();
    for record in records {
        groups.entry(record.seed).or_default().push(record.clone());
    }
    if groups.len() < 2 {
        return Err(Error::Param(
            "seed statistics need at least two seed groups; std is undefined for one".into(),
        ));
    }
    let mut per_seed = BTreeMap::new();
    for (seed, group) in &groups {
        per_seed.insert(*seed, compute_mg_n(group, n)?);
    }
    let count = per_seed.len() as f64;
    let mean = per_seed.values().sum::<f64>() / count;
    let variance = per_seed
        .values()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / count;
    Ok(SeedStats {
        per_seed,
        mean,
        std: variance.sqrt(),
    })
}

/// Localization metrics for record sets where each record carries exactly
/// one relation: MG2 (both endpoints present), MG-loc (both present and the
/// relation satisfied on ground-truth centroids), and Relation Consistency
/// (MG-loc conditioned on both present).
pub fn compute_relation_metrics(
    records: &[GenerationRecord],
    tolerance: f64,
) -> Result<RelationMetrics> {
    require_records(records)?;
    let mut both_present = 0u64;
    let mut satisfied = 0u64;
    for (i, record) in records.iter().enumerate() {
        let [rel] = record.relations.as_slice() else {
            return Err(Error::Param(format!(
                "record {i} carries {} relations; this metric needs exactly one",
                record.relations.len()
            )));
        };
        if !(record.present_objects.contains(&rel.subject)
            && record.present_objects.contains(&rel.object))
        {
            continue;
        }
        both_present += 1;
        let c_subject = record.centroids.get(&rel.subject).ok_or_else(|| {
            Error::Data(format!("record {i}: present object {} lacks a centroid", rel.subject))
        })?;
        let c_object = record.centroids.get(&rel.object).ok_or_else(|| {
            Error::Data(format!("record {i}: present object {} lacks a centroid", rel.object))
        })?;
        if check_relation(*c_subject, *c_object, rel.kind, tolerance)? {
            satisfied += 1;
        }
    }
    let total = records.len() as f64;
    Ok(RelationMetrics {
        mg2: 100.0 * both_present as f64 / total,
        mg_loc: 100.0 * satisfied as f64 / total,
        relation_consistency: (both_present > 0)
            .then(|| 100.0 * satisfied as f64 / both_present as f64),
        both_present,
    })
}

/// Image-level confusion at `ct`: a record is predicted complete iff every
/// per-object prediction at `ct` is present, and truth-complete iff every
/// requested object is in the ground-truth presence set.
pub fn compute_confusion(records: &[GenerationRecord], ct: u32) -> Result<ConfusionReport> {
    require_records(records)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (i, record) in records.iter().enumerate() {
        let predictions = record.per_ct_predictions.get(&ct).ok_or_else(|| {
            Error::Data(format!(
                "record {i} (prompt {:?}, seed {}) has no predictions at ct {ct}",
                record.prompt, record.seed
            ))
        })?;
        let predicted_complete = predictions.iter().all(|p| p.present);
        match (record.truth_complete(), predicted_complete) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    Ok(ConfusionReport {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        recall: (tp + fn_ > 0).then(|| 100.0 * tp as f64 / (tp + fn_) as f64),
        tn_rate: (tn + fp > 0).then(|| 100.0 * tn as f64 / (tn + fp) as f64),
    })
}

/// Builds the full report: MG-N over `n_range` (with seed spread when at
/// least two seeds exist), localization metrics when every record carries
/// exactly one relation, and confusion when `ct` is given.
pub fn build_metric_report(
    records: &[GenerationRecord],
    n_range: std::ops::RangeInclusive<u32>,
    tolerance: f64,
    ct: Option<u32>,
) -> Result<MetricReport> {
    require_records(records)?;
    let seed_count = {
        let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds.len() as u64
    };

    let mut mg = BTreeMap::new();
    for n in n_range {
        let stat = if seed_count >= 2 {
            let stats = compute_seed_stats(records, n)?;
            MgStat {
                mean: stats.mean,
                std: Some(stats.std),
            }
        } else {
            MgStat {
                mean: compute_mg_n(records, n)?,
                std: None,
            }
        };
        mg.insert(n, stat);
    }

    let relation = if records.iter().all(|r| r.relations.len() == 1) {
        Some(compute_relation_metrics(records, tolerance)?)
    } else {
        None
    };

    let confusion = match ct {
        Some(ct) => Some(compute_confusion(records, ct)?),
        None => None,
    };

    Ok(MetricReport {
        record_count: records.len() as u64,
        seed_count,
        mg,
        relation,
        confusion,
    })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders a report as CSV with columns `metric,n,mean,std,count`. Undefined
/// values stay empty.
pub fn metric_report_csv(report: &MetricReport) -> String {
    let mut out = String::from("metric,n,mean,std,count\n");
    for (n, stat) in &report.mg {
        out.push_str(&format!(
            "mg,{},{},{},{}\n",
            n,
            stat.mean,
            csv_cell(stat.std),
            report.record_count
        ));
    }
    if let Some(rel) = &report.relation {
        out.push_str(&format!("mg_loc,,{},,{}\n", rel.mg_loc, report.record_count));
        out.push_str(&format!(
            "relation_consistency,,{},,{}\n",
            csv_cell(rel.relation_consistency),
            rel.both_present
        ));
    }
    if let Some(confusion) = &report.confusion {
        out.push_str(&format!(
            "recall,,{},,{}\n",
            csv_cell(confusion.recall),
            confusion.true_positives + confusion.false_negatives
        ));
        out.push_str(&format!(
            "tn_rate,,{},,{}\n",
            csv_cell(confusion.tn_rate),
            confusion.true_negatives + confusion.false_positives
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::{Centroid, ObjectRef, PresencePrediction, RelationKind, RelationSpec};

    fn object(i: usize) -> ObjectRef {
        ObjectRef::new(i, format!("obj{i}")).unwrap()
    }

    /// Record with `total` requested objects of which the first `present`
    /// are present.
    fn record(prompt: &str, seed: u64, present: usize, total: usize) -> GenerationRecord {
        GenerationRecord {
            prompt: prompt.into(),
            seed,
            generator_id: "toy".into(),
            requested_objects: (0..total).map(object).collect(),
            present_objects: (0..present).collect(),
            centroids: BTreeMap::new(),
            per_ct_predictions: BTreeMap::new(),
            relations: vec![],
        }
    }

    fn relation_record(
        prompt: &str,
        both_present: bool,
        satisfied: bool,
    ) -> GenerationRecord {
        let mut r = record(prompt, 1, if both_present { 2 } else { 1 }, 2);
        r.relations = vec![RelationSpec::new(0, 1, RelationKind::Left).unwrap()];
        if both_present {
            let (x0, x1) = if satisfied { (0.2, 0.8) } else { (0.8, 0.2) };
            r.centroids = BTreeMap::from([
                (0, Centroid::new(x0, 0.5).unwrap()),
                (1, Centroid::new(x1, 0.5).unwrap()),
            ]);
        } else {
            r.centroids = BTreeMap::from([(0, Centroid::new(0.2, 0.5).unwrap())]);
        }
        r
    }

    #[test]
    fn mg_n_hand_counts() {
        let records: Vec<GenerationRecord> = [5, 4, 2, 1]
            .iter()
            .enumerate()
            .map(|(i, &present)| record(&format!("p{i}"), 1, present, 5))
            .collect();
        assert_eq!(compute_mg_n(&records, 2).unwrap(), 75.0);
        assert_eq!(compute_mg_n(&records, 5).unwrap(), 25.0);
        assert_eq!(compute_mg_n(&records, 1).unwrap(), 100.0);
        assert!(compute_mg_n(&[], 2).is_err());
        assert!(compute_mg_n(&records, 0).is_err());
    }

    #[test]
    fn mg_is_monotone_in_n() {
        let records: Vec<GenerationRecord> = (0..20)
            .map(|i| record(&format!("p{i}"), i % 3, (i % 6) as usize, 6))
            .collect();
        let values: Vec<f64> = (1..=6)
            .map(|n| compute_mg_n(&records, n).unwrap())
            .collect();
        for pair in values.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    #[test]
    fn seed_stats_hand_arithmetic() {
        // Seed 1: MG2 = 90 (9/10), seed 2: MG2 = 92 (23/25).
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(record(&format!("a{i}"), 1, if i < 9 { 2 } else { 1 }, 2));
        }
        for i in 0..25 {
            records.push(record(&format!("b{i}"), 2, if i < 23 { 2 } else { 1 }, 2));
        }
        let stats = compute_seed_stats(&records, 2).unwrap();
        assert_eq!(stats.per_seed[&1], 90.0);
        assert_eq!(stats.per_seed[&2], 92.0);
        assert_eq!(stats.mean, 91.0);
        assert_eq!(stats.std, 1.0);
    }

    #[test]
    fn seed_stats_degenerate_cases() {
        let records = vec![record("a", 1, 2, 2), record("b", 1, 2, 2)];
        assert!(compute_seed_stats(&records, 2).is_err());

        let identical = vec![record("a", 1, 2, 2), record("b", 2, 2, 2)];
        let stats = compute_seed_stats(&identical, 2).unwrap();
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn relation_metrics_hand_counts() {
        // 10 records: 6 both-present, 3 of those satisfy the relation.
        let mut records = Vec::new();
        for i in 0..3 {
            records.push(relation_record(&format!("s{i}"), true, true));
        }
        for i in 0..3 {
            records.push(relation_record(&format!("v{i}"), true, false));
        }
        for i in 0..4 {
            records.push(relation_record(&format!("m{i}"), false, false));
        }
        let m = compute_relation_metrics(&records, 0.05).unwrap();
        assert_eq!(m.mg2, 60.0);
        assert_eq!(m.mg_loc, 30.0);
        assert_eq!(m.relation_consistency, Some(50.0));
        assert_eq!(m.both_present, 6);
    }

    #[test]
    fn relation_consistency_undefined_when_never_both_present() {
        let records: Vec<GenerationRecord> = (0..4)
            .map(|i| relation_record(&format!("m{i}"), false, false))
            .collect();
        let m = compute_relation_metrics(&records, 0.05).unwrap();
        assert_eq!(m.mg2, 0.0);
        assert_eq!(m.relation_consistency, None);
    }

    #[test]
    fn relation_metrics_require_exactly_one_relation() {
        let records = vec![record("plain", 1, 2, 2)];
        assert!(compute_relation_metrics(&records, 0.05).is_err());
    }

    #[test]
    fn confusion_hand_counts() {
        let with_predictions = |truth_complete: bool, predicted: bool, i: usize| {
            let mut r = record(&format!("c{i}"), 1, if truth_complete { 2 } else { 1 }, 2);
            r.per_ct_predictions.insert(
                25,
                vec![
                    PresencePrediction {
                        object: object(0),
                        present: true,
                    },
                    PresencePrediction {
                        object: object(1),
                        present: predicted,
                    },
                ],
            );
            r
        };
        let records = vec![
            with_predictions(true, true, 0),
            with_predictions(true, false, 1),
            with_predictions(false, false, 2),
            with_predictions(false, true, 3),
        ];
        let c = compute_confusion(&records, 25).unwrap();
        assert_eq!(
            (c.true_positives, c.false_negatives, c.true_negatives, c.false_positives),
            (1, 1, 1, 1)
        );
        assert_eq!(c.recall, Some(50.0));
        assert_eq!(c.tn_rate, Some(50.0));

        assert!(compute_confusion(&records, 16).is_err());

        let one_class = vec![with_predictions(true, true, 0)];
        let c = compute_confusion(&one_class, 25).unwrap();
        assert_eq!(c.recall, Some(100.0));
        assert_eq!(c.tn_rate, None);
    }

    #[test]
    fn report_composes_and_renders_csv() {
        let mut records: Vec<GenerationRecord> = (0..8)
            .map(|i| record(&format!("p{i}"), i % 2, (i % 3) as usize + 1, 3))
            .collect();
        for r in &mut records {
            r.per_ct_predictions.insert(
                25,
                (0..3)
                    .map(|j| PresencePrediction {
                        object: object(j),
                        present: r.present_objects.contains(&j),
                    })
                    .collect(),
            );
        }
        let report = build_metric_report(&records, 1..=3, 0.05, Some(25)).unwrap();
        assert_eq!(report.record_count, 8);
        assert_eq!(report.seed_count, 2);
        assert_eq!(report.mg.len(), 3);
        assert!(report.relation.is_none());
        let confusion = report.confusion.as_ref().unwrap();
        assert_eq!(confusion.recall, Some(100.0));
        assert_eq!(confusion.tn_rate, Some(100.0));

        let csv = metric_report_csv(&report);
        assert!(csv.starts_with("metric,n,mean,std,count\n"));
        assert!(csv.contains("\nrecall,,100,,"));

        // Permutation invariance.
        let mut shuffled = records.clone();
        shuffled.reverse();
        let report2 = build_metric_report(&shuffled, 1..=3, 0.05, Some(25)).unwrap();
        assert_eq!(report.mg, report2.mg);
        assert_eq!(report.confusion, report2.confusion);
    }

    #[test]
    fn requested_set_membership_counts() {
        // present_objects are validated to be a subset of requested; the
        // count used by MG-N is exactly the intersection size.
        let r = record("p", 1, 3, 5);
        assert_eq!(r.present_count(), 3);
        assert!(!r.truth_complete());
        let full = record("q", 1, 5, 5);
        assert!(full.truth_complete());
    }
}
