//! Restart orchestration: run a generation session against a pluggable
//! generator/detector pair, abort at the critical timestep when the gate
//! fails, retry with fresh seeds up to a cap, and fall back to the
//! best-scoring seed when the cap is reached.
//!
//! One session is strictly sequential (each abort decision feeds the next
//! attempt); independent sessions can run concurrently with their own
//! generator/detector instances.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::GenerationRecord;
use crate::gating::{
    check_relation, gate_joint, stochastic_detector, AttentionMap, Centroid, DetectorProfile,
    GateDecision, ObjectRef, PresencePrediction, RelationSpec,
};
use crate::rng::derive_seed;

/// Where the seeds of successive attempts come from: an explicit ordered
/// list, or a deterministic generator derived from a master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSequence {
    Explicit(Vec<u64>),
    Generated { master_seed: u64 },
}

impl SeedSequence {
    fn seed(&self, index: u32) -> Option<u64> {
        match self {
            SeedSequence::Explicit(seeds) => seeds.get(index as usize).copied(),
            SeedSequence::Generated { master_seed } => {
                Some(derive_seed(*master_seed, "session-seed", u64::from(index)))
            }
        }
    }
}

/// Session parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Timestep at which the gate is evaluated, once per attempt.
    pub critical_timestep: u32,
    pub total_steps: u32,
    /// Cap on gated attempts before the fallback rule applies.
    pub max_restarts: u32,
    /// Relation tolerance as a fraction of image size.
    pub tolerance: f64,
    pub seeds: SeedSequence,
}

impl SessionConfig {
    pub fn new(critical_timestep: u32) -> Self {
        Self {
            critical_timestep,
            total_steps: 50,
            max_restarts: 5,
            tolerance: 0.05,
            seeds: SeedSequence::Generated { master_seed: 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_restarts == 0 {
            return Err(Error::Config("max_restarts must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.critical_timestep > self.total_steps {
            return Err(Error::Config(format!(
                "critical_timestep {} beyond total_steps {}",
                self.critical_timestep, self.total_steps
            )));
        }
        if !(self.tolerance.is_finite() && (0.0..0.5).contains(&self.tolerance)) {
            return Err(Error::Config(format!(
                "tolerance {} outside [0, 0.5)",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// How the fallback seed's run is completed after the restart cap: resumed
/// from its cached state at the critical timestep (cost `T - CT`) or
/// regenerated from scratch (cost `T`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackMode {
    ResumeFromCheckpoint,
    RestartFromScratch,
}

/// What a generator exposes at the critical timestep of one seeded attempt:
/// ground-truth (or simulated) per-object presence, centroids, and whatever
/// attention maps the detector requires.
#[derive(Clone, Debug, PartialEq)]
pub struct AttemptSignals {
    /// Aligned with the generator's object list.
    pub truth_present: Vec<bool>,
    /// Keyed by object index.
    pub centroids: BTreeMap<usize, Centroid>,
    pub attention: Vec<AttentionMap>,
}

impl AttemptSignals {
    pub fn presence_only(truth_present: Vec<bool>) -> Self {
        Self {
            truth_present,
            centroids: BTreeMap::new(),
            attention: Vec::new(),
        }
    }
}

/// A generation backend. `observe` runs the attempt up to the critical
/// timestep and reports what the gate needs; whether the backend can cache
/// that state and resume it later decides the fallback accounting.
pub trait Generator {
    fn objects(&self) -> &[ObjectRef];
    fn observe(&mut self, seed: u64, critical_timestep: u32) -> Result<AttemptSignals>;
    fn supports_resume(&self) -> bool {
        true
    }
}

/// A presence detector over attempt signals.
pub trait Detector {
    fn predict(
        &mut self,
        objects: &[ObjectRef],
        signals: &AttemptSignals,
    ) -> Result<Vec<PresencePrediction>>;
}

/// Detector that reports the ground truth unchanged.
pub struct PerfectDetector;

impl Detector for PerfectDetector {
    fn predict(
        &mut self,
        objects: &[ObjectRef],
        signals: &AttemptSignals,
    ) -> Result<Vec<PresencePrediction>> {
        check_signal_arity(objects, signals)?;
        Ok(objects
            .iter()
            .zip(&signals.truth_present)
            .map(|(object, &present)| PresencePrediction {
                object: object.clone(),
                present,
            })
            .collect())
    }
}

/// Detector that perturbs the ground truth through a stochastic operating
/// point, drawing independently per object.
pub struct ProfileDetector<R: Rng> {
    pub profile: DetectorProfile,
    rng: R,
}

impl<R: Rng> ProfileDetector<R> {
    pub fn new(profile: DetectorProfile, rng: R) -> Self {
        Self { profile, rng }
    }
}

impl<R: Rng> Detector for ProfileDetector<R> {
    fn predict(
        &mut self,
        objects: &[ObjectRef],
        signals: &AttemptSignals,
    ) -> Result<Vec<PresencePrediction>> {
        check_signal_arity(objects, signals)?;
        Ok(objects
            .iter()
            .zip(&signals.truth_present)
            .map(|(object, &truth)| stochastic_detector(object, truth, &self.profile, &mut self.rng))
            .collect())
    }
}

/// Detector thresholding the peak activation of each object's attention map.
pub struct AttentionThresholdDetector {
    pub threshold: f64,
}

impl Detector for AttentionThresholdDetector {
    fn predict(
        &mut self,
        objects: &[ObjectRef],
        signals: &AttemptSignals,
    ) -> Result<Vec<PresencePrediction>> {
        objects
            .iter()
            .map(|object| {
                let map = signals
                    .attention
                    .iter()
                    .find(|m| m.object == *object)
                    .ok_or_else(|| {
                        Error::Consistency(format!("no attention map for object {object}"))
                    })?;
                crate::gating::attention_energy_detector(map, self.threshold)
            })
            .collect()
    }
}

fn check_signal_arity(objects: &[ObjectRef], signals: &AttemptSignals) -> Result<()> {
    if signals.truth_present.len() != objects.len() {
        return Err(Error::Consistency(format!(
            "signals cover {} objects, generator has {}",
            signals.truth_present.len(),
            objects.len()
        )));
    }
    Ok(())
}

/// Scripted backend: a fixed map from seed to the signals observed at the
/// critical timestep. Useful for tests and deterministic replays of
/// hand-built scenarios.
pub struct ScriptedGenerator {
    objects: Vec<ObjectRef>,
    script: BTreeMap<u64, AttemptSignals>,
    resume: bool,
}

impl ScriptedGenerator {
    pub fn new(objects: Vec<ObjectRef>, resume: bool) -> Self {
        Self {
            objects,
            script: BTreeMap::new(),
            resume,
        }
    }

    pub fn insert(&mut self, seed: u64, signals: AttemptSignals) {
        self.script.insert(seed, signals);
    }
}

impl Generator for ScriptedGenerator {
    fn objects(&self) -> &[ObjectRef] {
        &self.objects
    }

    fn observe(&mut self, seed: u64, _critical_timestep: u32) -> Result<AttemptSignals> {
        self.script
            .get(&seed)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no scripted attempt for seed {seed}")))
    }

    fn supports_resume(&self) -> bool {
        self.resume
    }
}

/// One gated attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptOutcome {
    pub seed: u64,
    pub decision: GateDecision,
    /// `critical_timestep` if aborted, `total_steps` if run to completion;
    /// the fallback attempt additionally pays its completion cost.
    pub steps_consumed: u32,
    /// Number of objects predicted present; relation failures do not reduce
    /// it.
    pub predicted_present_count: u32,
    /// True iff this attempt produced the session's output.
    #[serde(rename = "final")]
    pub is_final: bool,
}

/// Full trace of one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub attempts: Vec<AttemptOutcome>,
    pub chosen_seed: u64,
    pub total_steps_consumed: u64,
    pub fallback_used: bool,
    /// Accounting mode that applies to a fallback completion on this
    /// backend (recorded even when no fallback was needed).
    pub fallback_mode: FallbackMode,
}

/// Seed of the attempt with the highest predicted-present count; ties break
/// toward the earliest attempt.
pub fn select_fallback_seed(attempts: &[AttemptOutcome]) -> Result<u64> {
    Ok(attempts[fallback_index(attempts)?].seed)
}

fn fallback_index(attempts: &[AttemptOutcome]) -> Result<usize> {
    if attempts.is_empty() {
        return Err(Error::Param("fallback selection over zero attempts".into()));
    }
    let mut best = 0;
    for (i, attempt) in attempts.iter().enumerate().skip(1) {
        if attempt.predicted_present_count > attempts[best].predicted_present_count {
            best = i;
        }
    }
    Ok(best)
}

struct EvaluatedAttempt {
    seed: u64,
    decision: GateDecision,
    predicted_present_count: u32,
}

/// The state machine shared by the live and replay drivers. `evaluate` runs
/// attempt `i` up to the critical timestep and gates it.
fn drive_session(
    config: &SessionConfig,
    resume_supported: bool,
    mut evaluate: impl FnMut(u32) -> Result<EvaluatedAttempt>,
) -> Result<SessionResult> {
    config.validate()?;
    let ct = config.critical_timestep;
    let total = config.total_steps;
    let fallback_mode = if resume_supported {
        FallbackMode::ResumeFromCheckpoint
    } else {
        FallbackMode::RestartFromScratch
    };

    let mut attempts: Vec<AttemptOutcome> = Vec::new();
    let mut steps: u64 = 0;
    for i in 0..config.max_restarts {
        let evaluated = evaluate(i)?;
        let proceed = evaluated.decision.proceed;
        let consumed = if proceed { total } else { ct };
        steps += u64::from(consumed);
        attempts.push(AttemptOutcome {
            seed: evaluated.seed,
            decision: evaluated.decision,
            steps_consumed: consumed,
            predicted_present_count: evaluated.predicted_present_count,
            is_final: proceed,
        });
        if proceed {
            return Ok(SessionResult {
                chosen_seed: evaluated.seed,
                attempts,
                total_steps_consumed: steps,
                fallback_used: false,
                fallback_mode,
            });
        }
    }

    // Every gated attempt failed: finish the best-scoring one.
    let best = fallback_index(&attempts)?;
    let completion_cost = match fallback_mode {
        FallbackMode::ResumeFromCheckpoint => total - ct,
        FallbackMode::RestartFromScratch => total,
    };
    attempts[best].steps_consumed += completion_cost;
    attempts[best].is_final = true;
    steps += u64::from(completion_cost);
    Ok(SessionResult {
        chosen_seed: attempts[best].seed,
        attempts,
        total_steps_consumed: steps,
        fallback_used: true,
        fallback_mode,
    })
}

/// Runs one session: for each seed in order, evaluate the joint gate at the
/// critical timestep; proceed to completion on a pass, abort and take the
/// next seed on a fail; after `max_restarts` failed gates, complete the
/// attempt with the highest predicted-present count.
pub fn run_session<G: Generator, D: Detector>(
    config: &SessionConfig,
    generator: &mut G,
    detector: &mut D,
    relations: &[RelationSpec],
) -> Result<SessionResult> {
    let resume = generator.supports_resume();
    drive_session(config, resume, |i| {
        let seed = config.seeds.seed(i).ok_or_else(|| {
            Error::Config(format!(
                "seed sequence exhausted at attempt {i} before max_restarts {}",
                config.max_restarts
            ))
        })?;
        let signals = generator.observe(seed, config.critical_timestep)?;
        let predictions = detector.predict(generator.objects(), &signals)?;
        let decision = gate_joint(&predictions, relations, &signals.centroids, config.tolerance)?;
        let predicted_present_count = predictions.iter().filter(|p| p.present).count() as u32;
        Ok(EvaluatedAttempt {
            seed,
            decision,
            predicted_present_count,
        })
    })
}

/// Detector source for a replayed session.
#[derive(Clone, Debug)]
pub enum ReplayDetector {
    /// Use the predictions recorded at the critical timestep.
    Recorded,
    /// Re-derive predictions from ground truth through a stochastic
    /// operating point.
    Profile(DetectorProfile),
}

/// Per-object confusion tallied over replayed attempts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectLevelCounts {
    pub true_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub false_positives: u64,
}

impl ObjectLevelCounts {
    fn tally(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.true_positives += 1,
            (true, false) => self.false_negatives += 1,
            (false, false) => self.true_negatives += 1,
            (false, true) => self.false_positives += 1,
        }
    }

    pub fn merge(&mut self, other: &ObjectLevelCounts) {
        self.true_positives += other.true_positives;
        self.false_negatives += other.false_negatives;
        self.true_negatives += other.true_negatives;
        self.false_positives += other.false_positives;
    }

    /// Measured per-object recall in percent.
    pub fn recall(&self) -> Option<f64> {
        let denom = self.true_positives + self.false_negatives;
        (denom > 0).then(|| 100.0 * self.true_positives as f64 / denom as f64)
    }

    /// Measured per-object TN-rate in percent.
    pub fn tn_rate(&self) -> Option<f64> {
        let denom = self.true_negatives + self.false_positives;
        (denom > 0).then(|| 100.0 * self.true_negatives as f64 / denom as f64)
    }
}

/// A replayed session plus the object-level detector confusion measured
/// along the way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub session: SessionResult,
    pub object_counts: ObjectLevelCounts,
}

/// Drives the same state machine from recorded per-seed data instead of a
/// live generator: record order is the seed order, ground truth comes from
/// the records, and predictions come from `detector`.
///
/// Relations are taken from each record when `use_relations` is set; a
/// relation whose endpoints lack recorded centroids counts as violated
/// (it cannot be verified). Replay regenerates nothing, so the fallback
/// accounting mode is the caller's choice.
pub fn replay_from_manifest<R: Rng + ?Sized>(
    config: &SessionConfig,
    records: &[GenerationRecord],
    detector: &ReplayDetector,
    use_relations: bool,
    fallback: FallbackMode,
    rng: &mut R,
) -> Result<ReplayOutcome> {
    if records.is_empty() {
        return Err(Error::Param("replay needs at least one record".into()));
    }
    for record in &records[1..] {
        if record.prompt != records[0].prompt
            || record.requested_objects != records[0].requested_objects
        {
            return Err(Error::Data(format!(
                "replay records must share one prompt; {:?} differs from {:?}",
                record.prompt, records[0].prompt
            )));
        }
    }

    let mut counts = ObjectLevelCounts::default();
    let session = drive_session(
        config,
        fallback == FallbackMode::ResumeFromCheckpoint,
        |i| {
            let record = records.get(i as usize).ok_or_else(|| {
                Error::Config(format!(
                    "seed sequence exhausted at attempt {i} before max_restarts {}",
                    config.max_restarts
                ))
            })?;
            let predictions = match detector {
                ReplayDetector::Recorded => record
                    .per_ct_predictions
                    .get(&config.critical_timestep)
                    .cloned()
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "record for seed {} has no predictions at ct {}",
                            record.seed, config.critical_timestep
                        ))
                    })?,
                ReplayDetector::Profile(profile) => record
                    .requested_objects
                    .iter()
                    .map(|object| {
                        let truth = record.present_objects.contains(&object.index);
                        stochastic_detector(object, truth, profile, rng)
                    })
                    .collect(),
            };
            for prediction in &predictions {
                let truth = record.present_objects.contains(&prediction.object.index);
                counts.tally(truth, prediction.present);
            }

            let relation_results: Vec<(RelationSpec, bool)> = if use_relations {
                record
                    .relations
                    .iter()
                    .map(|rel| {
                        let holds = match (
                            record.centroids.get(&rel.subject),
                            record.centroids.get(&rel.object),
                        ) {
                            (Some(s), Some(o)) => {
                                check_relation(*s, *o, rel.kind, config.tolerance)?
                            }
                            _ => false,
                        };
                        Ok((*rel, holds))
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };

            let decision = GateDecision::from_conjuncts(&predictions, &relation_results);
            let predicted_present_count =
                predictions.iter().filter(|p| p.present).count() as u32;
            Ok(EvaluatedAttempt {
                seed: record.seed,
                decision,
                predicted_present_count,
            })
        },
    )?;

    Ok(ReplayOutcome {
        session,
        object_counts: counts,
    })
}

/// Steps the ungated baseline would consume on the same seed order: full
/// runs until the first truly complete one, capped at `max_restarts`.
pub fn baseline_steps(truth_complete: &[bool], total_steps: u32, max_restarts: u32) -> u64 {
    let budget = truth_complete.len().min(max_restarts as usize);
    for (i, &complete) in truth_complete[..budget].iter().enumerate() {
        if complete {
            return (i as u64 + 1) * u64::from(total_steps);
        }
    }
    budget as u64 * u64::from(total_steps)
}
