//! Latent projection math: forecast the final latent of an iterative
//! denoising generator from an intermediate step.
//!
//! The generator state is a toy latent vector evolving under a cumulative
//! noise schedule `alpha_bar`. Given the latent at step `t` and a noise
//! estimate, the deterministic update inverts the forward noising to a
//! predicted clean latent and re-noises it to any earlier step; projecting
//! straight to step 0 and decoding yields the predicted final image (PFI),
//! a forecast of what the run will produce if left to finish.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative noise schedule: `alpha_bar[t]` for `t = 0..=total_steps`, with
/// `alpha_bar[0] = 1` and strictly decreasing values in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit `alpha_bar` values (length `T + 1`).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Schedule(
                "alpha_bar needs at least two entries (t = 0 and t = 1)".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Schedule(format!(
                "alpha_bar[0] must be exactly 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if !(b.is_finite() && b > 0.0 && b <= 1.0) {
                return Err(Error::Schedule(format!(
                    "alpha_bar[{}] = {b} outside (0, 1]",
                    t + 1
                )));
            }
            if b >= a {
                return Err(Error::Schedule(format!(
                    "alpha_bar must strictly decrease, violated at t = {}",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Builds the cumulative schedule from a linear beta ramp over
    /// `total_steps` steps: `alpha_bar[t] = prod_{i<t} (1 - beta_i)`.
    pub fn linear_beta(total_steps: u32, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Schedule("total_steps must be >= 1".into()));
        }
        for (name, v) in [("beta_start", beta_start), ("beta_end", beta_end)] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::Schedule(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if beta_end < beta_start {
            return Err(Error::Schedule(format!(
                "beta_end {beta_end} smaller than beta_start {beta_start}"
            )));
        }
        let steps = total_steps as usize;
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let frac = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// The default 50-step linear-beta schedule with beta in `[1e-4, 2e-2]`.
    pub fn default_linear() -> Self {
        Self::linear_beta(50, 1e-4, 2e-2).expect("default schedule constants are valid")
    }

    pub fn total_steps(&self) -> u32 {
        (self.alpha_bar.len() - 1) as u32
    }

    /// `alpha_bar` at step `t`. Panics if `t` exceeds `total_steps`; the
    /// operations below validate timesteps before indexing.
    pub fn alpha_bar(&self, t: u32) -> f64 {
        self.alpha_bar[t as usize]
    }

    pub fn alpha_bar_values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// Declarative schedule description, loadable from a config file: either
/// explicit `alpha_bar` values or linear-beta parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    AlphaBar {
        alpha_bar: Vec<f64>,
    },
    LinearBeta {
        total_steps: u32,
        beta_start: f64,
        beta_end: f64,
    },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self {
            ScheduleSpec::AlphaBar { alpha_bar } => NoiseSchedule::from_alpha_bar(alpha_bar.clone()),
            ScheduleSpec::LinearBeta {
                total_steps,
                beta_start,
                beta_end,
            } => NoiseSchedule::linear_beta(*total_steps, *beta_start, *beta_end),
        }
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::LinearBeta {
            total_steps: 50,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

/// A latent vector at a given timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: u32,
}

impl LatentState {
    pub fn new(z: Vec<f64>, t: u32) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::Param("latent dimension must be >= 1".into()));
        }
        Ok(Self { z, t })
    }
}

/// Projection of an intermediate latent to the final step, plus its decoded
/// form under the session's toy decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PfiResult {
    pub predicted_final_latent: Vec<f64>,
    pub decoded: Vec<f64>,
    pub source_timestep: u32,
}

/// Toy linear decoder standing in for the image decoder. Linearity makes the
/// projection identities exactly testable.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecoder {
    // row-major out_dim x in_dim
    weights: Vec<f64>,
    out_dim: usize,
    in_dim: usize,
}

impl LinearDecoder {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            weights,
            out_dim: dim,
            in_dim: dim,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let out_dim = rows.len();
        let in_dim = rows.first().map_or(0, Vec::len);
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::Decoder("decoder matrix must be non-empty".into()));
        }
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != in_dim {
                return Err(Error::Decoder(format!(
                    "decoder row {i} has {} entries, expected {in_dim}",
                    row.len()
                )));
            }
            weights.extend_from_slice(row);
        }
        Ok(Self {
            weights,
            out_dim,
            in_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.in_dim {
            return Err(Error::Decoder(format!(
                "latent has dimension {}, decoder expects {}",
                z.len(),
                self.in_dim
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            *o = row.iter().zip(z).map(|(w, v)| w * v).sum();
        }
        Ok(out)
    }
}

fn check_dims(state: &LatentState, epsilon: &[f64], schedule: &NoiseSchedule) -> Result<()> {
    if state.z.is_empty() {
        return Err(Error::Param("latent dimension must be >= 1".into()));
    }
    if epsilon.len() != state.z.len() {
        return Err(Error::Param(format!(
            "noise has dimension {}, latent has {}",
            epsilon.len(),
            state.z.len()
        )));
    }
    if state.t > schedule.total_steps() {
        return Err(Error::Param(format!(
            "timestep {} beyond schedule horizon {}",
            state.t,
            schedule.total_steps()
        )));
    }
    Ok(())
}

/// Forward construction: `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn add_noise(x0: &[f64], epsilon: &[f64], t: u32, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let state = LatentState::new(x0.to_vec(), t)?;
    check_dims(&state, epsilon, schedule)?;
    let a = schedule.alpha_bar(t);
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0
        .iter()
        .zip(epsilon)
        .map(|(x, e)| sa * x + sb * e)
        .collect())
}

/// Inverts the forward noising at the state's timestep:
/// `(z_t - sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_bar_t)`.
/// At `t = 0` the latent is already final and is returned unchanged.
pub fn predict_x0(state: &LatentState, epsilon: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_dims(state, epsilon, schedule)?;
    if state.t == 0 {
        return Ok(state.z.clone());
    }
    let a = schedule.alpha_bar(state.t);
    if a <= 0.0 {
        return Err(Error::Schedule(format!(
            "alpha_bar at t = {} is not positive",
            state.t
        )));
    }
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(state
        .z
        .iter()
        .zip(epsilon)
        .map(|(z, e)| (z - sb * e) / sa)
        .collect())
}

/// Deterministic scheduler update from `state.t` down to `t_next`:
/// re-noise the predicted clean latent to the target step with the same
/// noise estimate. With `t_next = 0` this collapses to [`predict_x0`].
pub fn scheduler_update(
    state: &LatentState,
    epsilon: &[f64],
    t_next: u32,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    check_dims(state, epsilon, schedule)?;
    if t_next >= state.t {
        return Err(Error::Param(format!(
            "update must move backward: t_next = {t_next} >= t = {}",
            state.t
        )));
    }
    let x0 = predict_x0(state, epsilon, schedule)?;
    let a = schedule.alpha_bar(t_next);
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    let z = x0
        .iter()
        .zip(epsilon)
        .map(|(x, e)| sa * x + sb * e)
        .collect();
    LatentState::new(z, t_next)
}

/// Projects the state straight to the final step and decodes it.
pub fn project_pfi(
    state: &LatentState,
    epsilon: &[f64],
    schedule: &NoiseSchedule,
    decoder: &LinearDecoder,
) -> Result<PfiResult> {
    let predicted_final_latent = if state.t == 0 {
        check_dims(state, epsilon, schedule)?;
        state.z.clone()
    } else {
        scheduler_update(state, epsilon, 0, schedule)?.z
    };
    let decoded = decoder.decode(&predicted_final_latent)?;
    Ok(PfiResult {
        predicted_final_latent,
        decoded,
        source_timestep: state.t,
    })
}

/// Largest relative deviation between two vectors, normalized by the
/// reference norm. Used by the exactness checks.
pub fn relative_error(actual: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = actual
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
