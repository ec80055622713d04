//! `earlygate evaluate`: fidelity metrics over a generation manifest.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use earlygate_core::evaluation::{
    build_metric_report, ingest_manifest_str, metric_report_csv, MetricReport,
};

use crate::config::EvaluateSection;
use crate::output::{write_json, write_text};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Manifest of recorded generations (JSON).
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,

    /// Smallest N of the MG-N range.
    #[arg(long)]
    n_min: Option<u32>,

    /// Largest N of the MG-N range.
    #[arg(long)]
    n_max: Option<u32>,

    /// Relation tolerance as a fraction of image size.
    #[arg(long)]
    tolerance: Option<f64>,

    /// Critical timestep for detector confusion statistics.
    #[arg(long)]
    ct: Option<u32>,

    /// Write the report as JSON.
    #[arg(long, value_name = "PATH")]
    out_json: Option<PathBuf>,

    /// Write the report as CSV (columns metric,n,mean,std,count).
    #[arg(long, value_name = "PATH")]
    out_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluateParams {
    pub manifest: String,
    pub n_min: u32,
    pub n_max: u32,
    pub tolerance: f64,
    pub ct: Option<u32>,
    pub master_seed: u64,
}

#[derive(Serialize)]
struct EvaluateReport {
    effective_config: EvaluateParams,
    report: MetricReport,
}

pub fn run(args: EvaluateArgs, file: &EvaluateSection, master_seed: u64) -> CliResult<()> {
    let manifest = args
        .manifest
        .as_ref()
        .map(|p| p.display().to_string())
        .or_else(|| file.manifest.clone())
        .ok_or_else(|| CliError::usage("--manifest is required"))?;
    let params = EvaluateParams {
        manifest,
        n_min: args.n_min.or(file.n_min).unwrap_or(2),
        n_max: args.n_max.or(file.n_max).unwrap_or(5),
        tolerance: args.tolerance.or(file.tolerance).unwrap_or(0.05),
        ct: args.ct.or(file.ct),
        master_seed,
    };
    if params.n_min == 0 || params.n_min > params.n_max {
        return Err(CliError::usage(format!(
            "invalid N range {}..={}",
            params.n_min, params.n_max
        )));
    }

    let text = fs::read_to_string(&params.manifest)
        .map_err(|e| CliError::data(format!("manifest {}: {e}", params.manifest)))?;
    let records = ingest_manifest_str(&text)?;

    let report = build_metric_report(
        &records,
        params.n_min..=params.n_max,
        params.tolerance,
        params.ct,
    )?;

    for (n, stat) in &report.mg {
        match stat.std {
            Some(std) => println!("MG-{n}  {:.2} +/- {:.2}", stat.mean, std),
            None => println!("MG-{n}  {:.2}", stat.mean),
        }
    }
    match &report.relation {
        Some(rel) => {
            println!("MG2 {:.2}  MG-loc {:.2}", rel.mg2, rel.mg_loc);
            match rel.relation_consistency {
                Some(c) => println!("relation consistency {c:.2}"),
                None => {
                    println!("relation consistency n/a");
                    eprintln!("warning: no record has both relation endpoints present; consistency is undefined");
                }
            }
        }
        None => eprintln!(
            "warning: records do not all carry exactly one relation; localization metrics skipped"
        ),
    }
    if let Some(confusion) = &report.confusion {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
        println!(
            "confusion at ct {}: tp {} fp {} tn {} fn {} recall {} tn_rate {}",
            params.ct.expect("confusion implies ct"),
            confusion.true_positives,
            confusion.false_positives,
            confusion.true_negatives,
            confusion.false_negatives,
            fmt(confusion.recall),
            fmt(confusion.tn_rate)
        );
        if confusion.recall.is_none() {
            eprintln!("warning: no truth-complete records; recall is undefined");
        }
        if confusion.tn_rate.is_none() {
            eprintln!("warning: no truth-incomplete records; tn_rate is undefined");
        }
    }

    if let Some(path) = &args.out_csv {
        write_text(path, &metric_report_csv(&report))?;
    }
    if let Some(path) = &args.out_json {
        write_json(
            path,
            &EvaluateReport {
                effective_config: params,
                report,
            },
        )?;
    }
    Ok(())
}
