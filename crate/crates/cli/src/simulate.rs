//! `earlygate simulate`: time-saving sweeps over critical timesteps.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use earlygate_core::cost::{sweep_csv, sweep_report, CostModelParams, SweepRow, DEFAULT_CT_GRID};
use earlygate_core::gating::DetectorProfile;

use crate::config::{ProfileRow, SimulateSection};
use crate::output::{write_json, write_text};
use crate::CliResult;

#[derive(Args)]
pub struct SimulateArgs {
    /// Probability that a fresh seed yields a complete image.
    #[arg(long)]
    p: Option<f64>,

    /// Detector recall (probability a present object is predicted present).
    #[arg(long)]
    recall: Option<f64>,

    /// Detector TN-rate (probability an absent object is predicted absent).
    #[arg(long)]
    tn_rate: Option<f64>,

    /// Number of requested objects per prompt.
    #[arg(long)]
    k: Option<u32>,

    /// Steps in a full generation.
    #[arg(long)]
    total_steps: Option<u32>,

    /// Cost of one full generation.
    #[arg(long)]
    unit_time: Option<f64>,

    /// Extra cost charged per gate evaluation.
    #[arg(long)]
    overhead: Option<f64>,

    /// Monte Carlo simulations per sweep point.
    #[arg(long)]
    sims: Option<u64>,

    /// Comma-separated critical timesteps to sweep.
    #[arg(long, value_delimiter = ',', value_name = "CT,...")]
    ct_grid: Option<Vec<u32>>,

    /// Write the sweep as CSV.
    #[arg(long, value_name = "PATH")]
    out_csv: Option<PathBuf>,

    /// Write the sweep (with the effective config) as JSON.
    #[arg(long, value_name = "PATH")]
    out_json: Option<PathBuf>,
}

/// Effective parameters after flag/config/default resolution.
#[derive(Clone, Debug, Serialize)]
pub struct SimulateParams {
    pub p_complete: f64,
    pub recall: f64,
    pub tn_rate: f64,
    pub num_objects: u32,
    pub total_steps: u32,
    pub unit_time: f64,
    pub overhead_per_check: f64,
    pub num_simulations: u64,
    pub ct_grid: Vec<u32>,
    pub profiles: Option<Vec<ProfileRow>>,
    pub master_seed: u64,
}

#[derive(Serialize)]
struct SimulateReport {
    effective_config: SimulateParams,
    rows: Vec<SweepRow>,
}

fn resolve(args: &SimulateArgs, file: &SimulateSection, master_seed: u64) -> SimulateParams {
    SimulateParams {
        p_complete: args.p.or(file.p).unwrap_or(0.4),
        recall: args.recall.or(file.recall).unwrap_or(0.9340),
        tn_rate: args.tn_rate.or(file.tn_rate).unwrap_or(0.7695),
        num_objects: args.k.or(file.k).unwrap_or(3),
        total_steps: args.total_steps.or(file.total_steps).unwrap_or(50),
        unit_time: args.unit_time.or(file.unit_time).unwrap_or(1.0),
        overhead_per_check: args.overhead.or(file.overhead).unwrap_or(0.0),
        num_simulations: args.sims.or(file.sims).unwrap_or(10_000),
        ct_grid: args
            .ct_grid
            .clone()
            .or_else(|| file.ct_grid.clone())
            .unwrap_or_else(|| DEFAULT_CT_GRID.to_vec()),
        profiles: file.profiles.clone(),
        master_seed,
    }
}

pub fn run(args: SimulateArgs, file: &SimulateSection, master_seed: u64) -> CliResult<()> {
    let params = resolve(&args, file, master_seed);

    if params.num_simulations == 0 {
        return Err(crate::CliError::usage("num_simulations must be >= 1"));
    }
    let base = CostModelParams::new(
        params.p_complete,
        DetectorProfile::new(params.recall, params.tn_rate, "sweep")?,
        params.num_objects,
        0,
    )?
    .with_total_steps(params.total_steps)?
    .with_unit_time(params.unit_time)?
    .with_overhead_per_check(params.overhead_per_check)?;

    let rows: Vec<(u32, DetectorProfile)> = match &params.profiles {
        Some(profiles) => profiles
            .iter()
            .map(|row| {
                DetectorProfile::new(row.recall, row.tn_rate, format!("ct{}", row.ct))
                    .map(|profile| (row.ct, profile))
            })
            .collect::<Result<_, _>>()?,
        None => params
            .ct_grid
            .iter()
            .map(|&ct| (ct, base.profile.clone()))
            .collect(),
    };

    let report_rows = sweep_report(&base, &rows, params.num_simulations, params.master_seed)?;

    println!("{:>4}  {:>8}  {:>8}  {:>12}  {:>12}  {:>10}", "ct", "recall", "tn_rate", "closed_form", "monte_carlo", "std_error");
    for row in &report_rows {
        println!(
            "{:>4}  {:>8.4}  {:>8.4}  {:>12.6}  {:>12.6}  {:>10.6}",
            row.ct, row.recall, row.tn_rate, row.saving_closed_form, row.saving_mc, row.std_error
        );
    }

    if let Some(path) = &args.out_csv {
        write_text(path, &sweep_csv(&report_rows))?;
    }
    if let Some(path) = &args.out_json {
        write_json(
            path,
            &SimulateReport {
                effective_config: params,
                rows: report_rows,
            },
        )?;
    }
    Ok(())
}
