//! `earlygate pfi-demo`: reconstruction error of the final-state projection
//! as a function of the critical timestep.
//!
//! For each trial a clean latent, a true noise vector, and a perturbation
//! are drawn once and shared across timesteps. The latent is noised to the
//! timestep, projected back with the perturbed noise estimate, and the
//! relative reconstruction error is averaged per timestep. With sigma = 0
//! the projection is exact; with sigma > 0 the error grows with the
//! timestep's noise-to-signal ratio.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use earlygate_core::cost::DEFAULT_CT_GRID;
use earlygate_core::pfi::{
    add_noise, project_pfi, relative_error, LatentState, LinearDecoder, ScheduleSpec,
};
use earlygate_core::rng::substream;

use crate::config::PfiDemoSection;
use crate::output::{write_json, write_text};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct PfiDemoArgs {
    /// Schedule file (TOML: alpha_bar list or linear-beta parameters).
    #[arg(long, value_name = "PATH")]
    schedule: Option<PathBuf>,

    /// Latent dimension.
    #[arg(long)]
    dim: Option<usize>,

    /// Standard deviation of the noise-estimate perturbation.
    #[arg(long)]
    sigma: Option<f64>,

    /// Trials averaged per timestep.
    #[arg(long)]
    trials: Option<u32>,

    /// Comma-separated critical timesteps to evaluate.
    #[arg(long, value_delimiter = ',', value_name = "CT,...")]
    ct_grid: Option<Vec<u32>>,

    /// Write the error table (with the effective config) as JSON.
    #[arg(long, value_name = "PATH")]
    out_json: Option<PathBuf>,

    /// Write the error table as CSV.
    #[arg(long, value_name = "PATH")]
    out_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PfiDemoParams {
    pub schedule: ScheduleSpec,
    pub dim: usize,
    pub sigma: f64,
    pub trials: u32,
    pub ct_grid: Vec<u32>,
    pub master_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
struct ErrorRow {
    ct: u32,
    alpha_bar: f64,
    mean_relative_error: f64,
}

#[derive(Serialize)]
struct PfiDemoReport {
    effective_config: PfiDemoParams,
    rows: Vec<ErrorRow>,
}

pub fn run(args: PfiDemoArgs, file: &PfiDemoSection, master_seed: u64) -> CliResult<()> {
    let schedule_spec = match &args.schedule {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("schedule {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("schedule {}: {e}", path.display())))?
        }
        None => file.schedule.clone().unwrap_or_default(),
    };
    let schedule = schedule_spec.build()?;
    let total = schedule.total_steps();

    let params = PfiDemoParams {
        schedule: schedule_spec,
        dim: args.dim.or(file.dim).unwrap_or(16),
        sigma: args.sigma.or(file.sigma).unwrap_or(0.1),
        trials: args.trials.or(file.trials).unwrap_or(256),
        ct_grid: args
            .ct_grid
            .clone()
            .or_else(|| file.ct_grid.clone())
            .unwrap_or_else(|| DEFAULT_CT_GRID.iter().copied().filter(|&ct| ct <= total).collect()),
        master_seed,
    };
    if params.dim == 0 {
        return Err(CliError::usage("dim must be >= 1"));
    }
    if params.trials == 0 {
        return Err(CliError::usage("trials must be >= 1"));
    }
    if !(params.sigma.is_finite() && params.sigma >= 0.0) {
        return Err(CliError::usage(format!("sigma {} must be >= 0", params.sigma)));
    }
    if let Some(&bad) = params.ct_grid.iter().find(|&&ct| ct > total) {
        return Err(CliError::usage(format!(
            "critical timestep {bad} beyond schedule horizon {total}"
        )));
    }

    // One set of draws shared across timesteps, so the per-timestep error
    // comparison is paired.
    fn sample<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
    let mut rng = substream(params.master_seed, "pfi-demo");
    let mut draws = Vec::with_capacity(params.trials as usize);
    for _ in 0..params.trials {
        let z0 = sample(&mut rng, params.dim);
        let eps = sample(&mut rng, params.dim);
        let perturbation = sample(&mut rng, params.dim);
        draws.push((z0, eps, perturbation));
    }

    let decoder = LinearDecoder::identity(params.dim);
    let mut rows = Vec::with_capacity(params.ct_grid.len());
    for &ct in &params.ct_grid {
        let mut total_error = 0.0;
        for (z0, eps, perturbation) in &draws {
            let z_ct = add_noise(z0, eps, ct, &schedule)?;
            let eps_hat: Vec<f64> = eps
                .iter()
                .zip(perturbation)
                .map(|(e, g)| e + params.sigma * g)
                .collect();
            let state = LatentState::new(z_ct, ct)?;
            let result = project_pfi(&state, &eps_hat, &schedule, &decoder)?;
            total_error += relative_error(&result.decoded, z0);
        }
        rows.push(ErrorRow {
            ct,
            alpha_bar: schedule.alpha_bar(ct),
            mean_relative_error: total_error / f64::from(params.trials),
        });
    }

    println!("{:>4}  {:>12}  {:>20}", "ct", "alpha_bar", "mean_rel_error");
    for row in &rows {
        println!(
            "{:>4}  {:>12.6}  {:>20.12e}",
            row.ct, row.alpha_bar, row.mean_relative_error
        );
    }

    if let Some(path) = &args.out_csv {
        let mut csv = String::from("ct,alpha_bar,mean_relative_error\n");
        for row in &rows {
            csv.push_str(&format!(
                "{},{},{}\n",
                row.ct, row.alpha_bar, row.mean_relative_error
            ));
        }
        write_text(path, &csv)?;
    }
    if let Some(path) = &args.out_json {
        write_json(
            path,
            &PfiDemoReport {
                effective_config: params,
                rows,
            },
        )?;
    }
    Ok(())
}
