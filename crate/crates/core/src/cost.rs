//! Expected-generation-time analysis for the early-abort policy.
//!
//! A baseline pipeline regenerates with fresh seeds until an image contains
//! every requested object, paying one full generation per attempt. The gated
//! pipeline checks presence at the critical timestep `CT` and aborts failed
//! attempts after only `CT/T` of the cost. Both a Monte Carlo simulation of
//! that loop and its closed-form reduction live here; the closed form serves
//! as the independent oracle for the simulation.
//!
//! Per-attempt accounting (all attempts evaluate the gate once at `CT`):
//! truly-complete attempts cost one unit whether accepted (TP) or falsely
//! rejected (FN, the loop restarts); incomplete attempts cost `CT/T` of a
//! unit when the detector halts them (TN) and a full unit when it lets them
//! finish (FP). The loop ends on the first TP.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::DetectorProfile;
use crate::rng::indexed_substream;

/// Critical-timestep grid the record datasets are collected on.
pub const DEFAULT_CT_GRID: [u32; 18] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 25, 40,
];

/// Inputs of the time-saving model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    /// Probability that a fresh seed yields a complete image.
    pub p_complete: f64,
    /// Detector operating point used at the critical timestep.
    pub profile: DetectorProfile,
    /// Number of requested objects, each checked independently.
    pub num_objects: u32,
    /// Timestep at which the gate is evaluated.
    pub critical_timestep: u32,
    /// Steps in a full generation.
    pub total_steps: u32,
    /// Cost of one full generation (dimensionless by default).
    pub unit_time: f64,
    /// Extra cost charged per gate evaluation (0 reproduces the reference
    /// accounting, which ignores detector overhead).
    pub overhead_per_check: f64,
}

impl CostModelParams {
    pub fn new(
        p_complete: f64,
        profile: DetectorProfile,
        num_objects: u32,
        critical_timestep: u32,
    ) -> Result<Self> {
        let params = Self {
            p_complete,
            profile,
            num_objects,
            critical_timestep,
            total_steps: 50,
            unit_time: 1.0,
            overhead_per_check: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_total_steps(mut self, total_steps: u32) -> Result<Self> {
        self.total_steps = total_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_unit_time(mut self, unit_time: f64) -> Result<Self> {
        self.unit_time = unit_time;
        self.validate()?;
        Ok(self)
    }

    pub fn with_overhead_per_check(mut self, overhead: f64) -> Result<Self> {
        self.overhead_per_check = overhead;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_complete.is_finite() && self.p_complete > 0.0 && self.p_complete <= 1.0) {
            return Err(Error::Param(format!(
                "p_complete {} outside (0, 1]",
                self.p_complete
            )));
        }
        if self.num_objects == 0 {
            return Err(Error::Param("num_objects must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Param("total_steps must be >= 1".into()));
        }
        if self.critical_timestep > self.total_steps {
            return Err(Error::Param(format!(
                "critical_timestep {} beyond total_steps {}",
                self.critical_timestep, self.total_steps
            )));
        }
        if !(self.unit_time.is_finite() && self.unit_time > 0.0) {
            return Err(Error::Param(format!(
                "unit_time {} must be positive",
                self.unit_time
            )));
        }
        if !(self.overhead_per_check.is_finite() && self.overhead_per_check >= 0.0) {
            return Err(Error::Param(format!(
                "overhead_per_check {} must be >= 0",
                self.overhead_per_check
            )));
        }
        // Checked by DetectorProfile::new, re-checked for hand-built structs.
        DetectorProfile::new(self.profile.recall, self.profile.tn_rate, "")?;
        Ok(())
    }

    /// Cost of an attempt halted at the critical timestep.
    fn abort_cost(&self) -> f64 {
        self.unit_time * f64::from(self.critical_timestep) / f64::from(self.total_steps)
    }

    /// Probability that one attempt is accepted: truly complete and every
    /// object predicted present.
    fn acceptance_probability(&self) -> f64 {
        self.p_complete * self.profile.recall.powi(self.num_objects as i32)
    }

    fn check_acceptance_reachable(&self) -> Result<()> {
        if self.acceptance_probability() <= 0.0 {
            return Err(Error::Divergence(format!(
                "acceptance probability p * recall^k = {} * {}^{} is zero",
                self.p_complete, self.profile.recall, self.num_objects
            )));
        }
        Ok(())
    }

    /// Expected time of the baseline restart loop, `unit_time / p_complete`.
    pub fn baseline_time(&self) -> f64 {
        self.unit_time / self.p_complete
    }
}

/// Monte Carlo estimate of the time saved by gating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    /// `1 - mean_time_gated / mean_time_baseline`; negative when the gate
    /// costs more than it saves.
    pub time_saved_fraction: f64,
    pub mean_time_gated: f64,
    pub mean_time_baseline: f64,
    pub num_simulations: u64,
    /// Standard error of `time_saved_fraction`, from the sample variance of
    /// per-simulation totals.
    pub std_error: f64,
}

/// Map from object count to the completion probability of a fresh seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionProfile {
    by_count: BTreeMap<u32, f64>,
}

impl CompletionProfile {
    pub fn new(by_count: BTreeMap<u32, f64>) -> Result<Self> {
        for (&k, &p) in &by_count {
            if k == 0 {
                return Err(Error::Param("object count 0 in completion profile".into()));
            }
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(Error::Param(format!(
                    "completion probability {p} for {k} objects outside (0, 1]"
                )));
            }
        }
        Ok(Self { by_count })
    }

    pub fn p_complete(&self, num_objects: u32) -> Option<f64> {
        self.by_count.get(&num_objects).copied()
    }

    pub fn counts(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.by_count.iter().map(|(&k, &p)| (k, p))
    }
}

// Simulations per deterministic RNG chunk. Chunks are merged in index order,
// so results are bit-identical for a fixed seed regardless of thread count.
const SIMS_PER_CHUNK: u64 = 4096;

struct ChunkStats {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

fn simulate_one<R: Rng + ?Sized>(params: &CostModelParams, rng: &mut R) -> f64 {
    let unit = params.unit_time;
    let abort = params.abort_cost();
    let k = params.num_objects;
    let recall = params.profile.recall;
    let tn_rate = params.profile.tn_rate;
    let mut total = 0.0;
    loop {
        total += params.overhead_per_check;
        let actually_complete = rng.random::<f64>() < params.p_complete;
        if actually_complete {
            let mut all_predicted_present = true;
            for _ in 0..k {
                if rng.random::<f64>() >= recall {
                    all_predicted_present = false;
                }
            }
            // TP and FN both consume a full generation; only a TP stops.
            total += unit;
            if all_predicted_present {
                return total;
            }
        } else {
            let mut halted = false;
            for _ in 0..k {
                if rng.random::<f64>() < tn_rate {
                    halted = true;
                }
            }
            total += if halted { abort } else { unit };
        }
    }
}

fn run_chunk(params: &CostModelParams, n: u64, seed: u64, chunk_index: u64) -> ChunkStats {
    let mut rng = indexed_substream(seed, "cost-sim", chunk_index);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let total = simulate_one(params, &mut rng);
        sum += total;
        sum_sq += total * total;
    }
    ChunkStats { n, sum, sum_sq }
}

/// Runs the restart loop `num_simulations` times and reports the estimated
/// saving over the baseline with its standard error.
///
/// Simulations are split into fixed-size chunks, each with its own substream
/// of `master_seed`, and merged in chunk order: the result is bit-identical
/// for a fixed seed independent of how many threads execute the chunks.
pub fn simulate_time_saved(
    params: &CostModelParams,
    num_simulations: u64,
    master_seed: u64,
) -> Result<SimulationResult> {
    params.validate()?;
    params.check_acceptance_reachable()?;
    if num_simulations == 0 {
        return Err(Error::Param("num_simulations must be >= 1".into()));
    }

    let chunks = num_simulations.div_ceil(SIMS_PER_CHUNK);
    let stats: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let n = SIMS_PER_CHUNK.min(num_simulations - i * SIMS_PER_CHUNK);
            run_chunk(params, n, master_seed, i)
        })
        .collect();

    let mut n = 0u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for s in &stats {
        n += s.n;
        sum += s.sum;
        sum_sq += s.sum_sq;
    }

    let mean = sum / n as f64;
    let baseline = params.baseline_time();
    let variance = if n > 1 {
        ((sum_sq - sum * sum / n as f64) / (n - 1) as f64).max(0.0)
    } else {
        0.0
    };
    let se_mean = (variance / n as f64).sqrt();

    Ok(SimulationResult {
        time_saved_fraction: 1.0 - mean / baseline,
        mean_time_gated: mean,
        mean_time_baseline: baseline,
        num_simulations: n,
        std_error: se_mean / baseline,
    })
}

/// Analytic reduction of the restart loop; the independent oracle for
/// [`simulate_time_saved`].
///
/// With `s = p * recall^k` the acceptance probability per attempt,
/// `f = 1 - (1 - tn_rate)^k` the halt probability of an incomplete attempt,
/// and `T_ct = (CT/T) * unit_time`:
///
/// ```text
/// E_cycle = p * unit + (1 - p) * (f * T_ct + (1 - f) * unit) + overhead
/// E_total = E_cycle / s
/// saving  = 1 - E_total / (unit / p) = 1 - E_cycle / (recall^k * unit)
/// ```
pub fn expected_time_saved_closed_form(params: &CostModelParams) -> Result<f64> {
    params.validate()?;
    params.check_acceptance_reachable()?;
    let p = params.p_complete;
    let unit = params.unit_time;
    let k = params.num_objects as i32;
    let halt = 1.0 - (1.0 - params.profile.tn_rate).powi(k);
    let e_cycle = p * unit
        + (1.0 - p) * (halt * params.abort_cost() + (1.0 - halt) * unit)
        + params.overhead_per_check;
    let e_total = e_cycle / params.acceptance_probability();
    Ok(1.0 - e_total / params.baseline_time())
}

/// Closed-form savings over a critical-timestep grid with one fixed profile.
pub fn sweep_critical_timestep(
    base: &CostModelParams,
    ct_grid: &[u32],
) -> Result<Vec<(u32, f64)>> {
    let rows: Vec<(u32, DetectorProfile)> = ct_grid
        .iter()
        .map(|&ct| (ct, base.profile.clone()))
        .collect();
    sweep_with_profiles(base, &rows)
}

/// Closed-form savings over (critical timestep, detector profile) pairs, for
/// detectors whose operating point depends on the timestep they were
/// calibrated at.
pub fn sweep_with_profiles(
    base: &CostModelParams,
    rows: &[(u32, DetectorProfile)],
) -> Result<Vec<(u32, f64)>> {
    rows.iter()
        .map(|(ct, profile)| {
            let mut params = base.clone();
            params.critical_timestep = *ct;
            params.profile = profile.clone();
            expected_time_saved_closed_form(&params).map(|saving| (*ct, saving))
        })
        .collect()
}

/// One line of a sweep report: closed-form and Monte Carlo savings side by
/// side for a parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ct: u32,
    pub recall: f64,
    pub tn_rate: f64,
    pub p: f64,
    pub k: u32,
    pub saving_closed_form: f64,
    pub saving_mc: f64,
    pub std_error: f64,
}

/// Runs the full sweep: per row, the closed form plus `num_simulations`
/// Monte Carlo draws on a row-indexed substream of `master_seed`.
pub fn sweep_report(
    base: &CostModelParams,
    rows: &[(u32, DetectorProfile)],
    num_simulations: u64,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    rows.iter()
        .enumerate()
        .map(|(i, (ct, profile))| {
            let mut params = base.clone();
            params.critical_timestep = *ct;
            params.profile = profile.clone();
            let closed = expected_time_saved_closed_form(&params)?;
            let mc = simulate_time_saved(
                &params,
                num_simulations,
                crate::rng::derive_seed(master_seed, "sweep-row", i as u64),
            )?;
            Ok(SweepRow {
                ct: *ct,
                recall: params.profile.recall,
                tn_rate: params.profile.tn_rate,
                p: params.p_complete,
                k: params.num_objects,
                saving_closed_form: closed,
                saving_mc: mc.time_saved_fraction,
                std_error: mc.std_error,
            })
        })
        .collect()
}

/// Renders sweep rows as CSV with a fixed header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ct,recall,tn_rate,p,k,saving_closed_form,saving_mc,std_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.ct, r.recall, r.tn_rate, r.p, r.k, r.saving_closed_form, r.saving_mc, r.std_error
        ));
    }
    out
}

/// Closed-form saving of a mixed workload: object counts drawn with the
/// given weights, each count completing with its probability from the
/// completion profile.
pub fn mixture_saving(
    base: &CostModelParams,
    completion: &CompletionProfile,
    weights: &BTreeMap<u32, f64>,
) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::Param("mixture weights are empty".into()));
    }
    let mut total_weight = 0.0;
    let mut acc = 0.0;
    for (&k, &w) in weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Param(format!("weight {w} for {k} objects invalid")));
        }
        if w == 0.0 {
            continue;
        }
        let p = completion.p_complete(k).ok_or_else(|| {
            Error::Param(format!("completion profile has no entry for {k} objects"))
        })?;
        let mut params = base.clone();
        params.num_objects = k;
        params.p_complete = p;
        acc += w * expected_time_saved_closed_form(&params)?;
        total_weight += w;
    }
    if total_weight <= 0.0 {
        return Err(Error::Param("mixture weights sum to zero".into()));
    }
    Ok(acc / total_weight)
}
