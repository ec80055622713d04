//! `earlygate orchestrate`: drive the gated restart policy over recorded
//! generations and compare against the ungated baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use earlygate_core::evaluation::{ingest_manifest_str, GenerationRecord};
use earlygate_core::gating::DetectorProfile;
use earlygate_core::orchestrator::{
    baseline_steps, replay_from_manifest, FallbackMode, ObjectLevelCounts, ReplayDetector,
    ReplayOutcome, SessionConfig,
};
use earlygate_core::rng::indexed_substream;

use crate::config::OrchestrateSection;
use crate::output::write_json;
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Use the predictions recorded in the manifest.
    Recorded,
    /// Re-derive predictions from ground truth through --recall/--tn-rate.
    Profile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackKind {
    /// Fallback completion resumes from the critical timestep (cost T - CT).
    Resume,
    /// Fallback completion regenerates from scratch (cost T).
    Scratch,
}

#[derive(Args)]
pub struct OrchestrateArgs {
    /// Manifest of recorded generations (JSON).
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,

    /// Critical timestep at which the gate is evaluated.
    #[arg(long)]
    ct: Option<u32>,

    /// Steps in a full generation.
    #[arg(long)]
    total_steps: Option<u32>,

    /// Cap on gated attempts before the fallback rule applies.
    #[arg(long)]
    max_restarts: Option<u32>,

    /// Relation tolerance as a fraction of image size.
    #[arg(long)]
    tolerance: Option<f64>,

    /// Presence detector driving the gate.
    #[arg(long, value_enum)]
    detector: Option<DetectorKind>,

    /// Detector recall for --detector profile.
    #[arg(long)]
    recall: Option<f64>,

    /// Detector TN-rate for --detector profile.
    #[arg(long)]
    tn_rate: Option<f64>,

    /// Also gate on the relations recorded in the manifest.
    #[arg(long)]
    relations: bool,

    /// Fallback completion accounting.
    #[arg(long, value_enum)]
    fallback: Option<FallbackKind>,

    /// Write the full session traces as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrchestrateParams {
    pub manifest: String,
    pub critical_timestep: u32,
    pub total_steps: u32,
    pub max_restarts: u32,
    pub tolerance: f64,
    pub detector: DetectorKind,
    pub recall: f64,
    pub tn_rate: f64,
    pub relations: bool,
    pub fallback: FallbackKind,
    pub master_seed: u64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum PromptEntry {
    Done {
        prompt: String,
        #[serde(flatten)]
        outcome: ReplayOutcome,
    },
    Failed {
        prompt: String,
        error: String,
    },
}

#[derive(Serialize)]
struct Aggregate {
    prompt_count: u64,
    succeeded: u64,
    failed: u64,
    fallback_sessions: u64,
    steps_gated: u64,
    steps_baseline: u64,
    steps_saved_fraction: Option<f64>,
    measured_recall: Option<f64>,
    measured_tn_rate: Option<f64>,
}

#[derive(Serialize)]
struct OrchestrateReport {
    effective_config: OrchestrateParams,
    prompts: Vec<PromptEntry>,
    aggregate: Aggregate,
}

fn resolve(
    args: &OrchestrateArgs,
    file: &OrchestrateSection,
    master_seed: u64,
) -> CliResult<OrchestrateParams> {
    let manifest = args
        .manifest
        .as_ref()
        .map(|p| p.display().to_string())
        .or_else(|| file.manifest.clone())
        .ok_or_else(|| CliError::usage("--manifest is required"))?;
    Ok(OrchestrateParams {
        manifest,
        critical_timestep: args.ct.or(file.ct).unwrap_or(25),
        total_steps: args.total_steps.or(file.total_steps).unwrap_or(50),
        max_restarts: args.max_restarts.or(file.max_restarts).unwrap_or(5),
        tolerance: args.tolerance.or(file.tolerance).unwrap_or(0.05),
        detector: args
            .detector
            .or(file.detector)
            .unwrap_or(DetectorKind::Recorded),
        recall: args.recall.or(file.recall).unwrap_or(0.9340),
        tn_rate: args.tn_rate.or(file.tn_rate).unwrap_or(0.7695),
        relations: args.relations || file.relations.unwrap_or(false),
        fallback: args
            .fallback
            .or(file.fallback)
            .unwrap_or(FallbackKind::Resume),
        master_seed,
    })
}

/// Groups records by prompt, preserving first-appearance order and the
/// per-prompt record order of the manifest (record order is seed order).
fn group_by_prompt(records: Vec<GenerationRecord>) -> Vec<(String, Vec<GenerationRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<GenerationRecord>> = BTreeMap::new();
    for record in records {
        if !groups.contains_key(&record.prompt) {
            order.push(record.prompt.clone());
        }
        groups.entry(record.prompt.clone()).or_default().push(record);
    }
    order
        .into_iter()
        .map(|prompt| {
            let group = groups.remove(&prompt).expect("grouped above");
            (prompt, group)
        })
        .collect()
}

pub fn run(args: OrchestrateArgs, file: &OrchestrateSection, master_seed: u64) -> CliResult<()> {
    let params = resolve(&args, file, master_seed)?;

    let text = fs::read_to_string(&params.manifest)
        .map_err(|e| CliError::data(format!("manifest {}: {e}", params.manifest)))?;
    let records = ingest_manifest_str(&text)?;
    if records.is_empty() {
        return Err(CliError::usage("manifest contains no records"));
    }

    let mut config = SessionConfig::new(params.critical_timestep);
    config.total_steps = params.total_steps;
    config.max_restarts = params.max_restarts;
    config.tolerance = params.tolerance;
    config.validate()?;

    let detector = match params.detector {
        DetectorKind::Recorded => ReplayDetector::Recorded,
        DetectorKind::Profile => ReplayDetector::Profile(DetectorProfile::new(
            params.recall,
            params.tn_rate,
            "orchestrate",
        )?),
    };
    let fallback = match params.fallback {
        FallbackKind::Resume => FallbackMode::ResumeFromCheckpoint,
        FallbackKind::Scratch => FallbackMode::RestartFromScratch,
    };

    let mut entries = Vec::new();
    let mut aggregate = Aggregate {
        prompt_count: 0,
        succeeded: 0,
        failed: 0,
        fallback_sessions: 0,
        steps_gated: 0,
        steps_baseline: 0,
        steps_saved_fraction: None,
        measured_recall: None,
        measured_tn_rate: None,
    };
    let mut counts = ObjectLevelCounts::default();

    for (prompt_index, (prompt, group)) in group_by_prompt(records).into_iter().enumerate() {
        aggregate.prompt_count += 1;
        let mut rng = indexed_substream(params.master_seed, "orchestrate-detector", prompt_index as u64);
        match replay_from_manifest(
            &config,
            &group,
            &detector,
            params.relations,
            fallback,
            &mut rng,
        ) {
            Ok(outcome) => {
                aggregate.succeeded += 1;
                aggregate.steps_gated += outcome.session.total_steps_consumed;
                let truths: Vec<bool> = group.iter().map(|r| r.truth_complete()).collect();
                aggregate.steps_baseline +=
                    baseline_steps(&truths, params.total_steps, params.max_restarts);
                if outcome.session.fallback_used {
                    aggregate.fallback_sessions += 1;
                }
                counts.merge(&outcome.object_counts);
                entries.push(PromptEntry::Done { prompt, outcome });
            }
            Err(err) => {
                aggregate.failed += 1;
                entries.push(PromptEntry::Failed {
                    prompt,
                    error: err.to_string(),
                });
            }
        }
    }

    if aggregate.steps_baseline > 0 {
        aggregate.steps_saved_fraction =
            Some(1.0 - aggregate.steps_gated as f64 / aggregate.steps_baseline as f64);
    }
    aggregate.measured_recall = counts.recall();
    aggregate.measured_tn_rate = counts.tn_rate();

    println!(
        "prompts: {} ({} ok, {} failed), fallback sessions: {}",
        aggregate.prompt_count, aggregate.succeeded, aggregate.failed, aggregate.fallback_sessions
    );
    println!(
        "steps: gated {} vs baseline {} (saved {})",
        aggregate.steps_gated,
        aggregate.steps_baseline,
        aggregate
            .steps_saved_fraction
            .map(|f| format!("{:.2}%", 100.0 * f))
            .unwrap_or_else(|| "n/a".into())
    );
    println!(
        "measured detector: recall {} tn_rate {}",
        aggregate
            .measured_recall
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into()),
        aggregate
            .measured_tn_rate
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into())
    );

    let all_failed = aggregate.failed == aggregate.prompt_count;
    if let Some(path) = &args.out {
        write_json(
            path,
            &OrchestrateReport {
                effective_config: params,
                prompts: entries,
                aggregate,
            },
        )?;
    }
    if all_failed {
        return Err(CliError::data("every prompt failed to replay"));
    }
    Ok(())
}
