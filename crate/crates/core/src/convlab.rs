//! Convergence experiments for the greedy decomposition.
//!
//! [`run_decay`] traces `log ‖r_i‖` for a Gaussian weight vector and fits a
//! line to the part before the gate, where the search still resolves the
//! residual. [`oracle_gap_check`] compares every greedy step with the
//! exhaustive per-step optimum on small vectors.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::multipoint::{
    best_coefficient, decompose, l2_norm, oracle_decompose_step, search_range_end, DecomposeParams,
    StepPolicy,
};
use crate::quantgrid::QuantGrid;

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a line to `(x_i, y_i)`; `None` for fewer than two points or constant `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    let syy: f64 = y[..n].iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRun {
    pub seed: u64,
    pub dim: usize,
    pub bits: u32,
    pub policy: StepPolicy,
    /// `log ‖r_i‖` for `i = 0..=steps`; index 0 is `log ‖w‖`. Once the search
    /// stalls the residual can no longer change, so the stalled value repeats.
    pub log_residuals: Vec<f64>,
    /// Step size and residual gap for each iteration `i ≥ 1` (stalled rows repeat).
    pub step_sizes: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Adaptive step: the step where no improving coefficient existed.
    /// Fixed step: the first step whose `γ` exceeded the residual gap.
    pub gate_step: Option<usize>,
    /// Step at which the search stopped improving, if it did.
    pub stall_step: Option<usize>,
    /// Fit over `log_residuals[0..=gate]` (all accepted residuals when ungated).
    pub fit: Option<LineFit>,
}

impl DecayRun {
    /// Largest `|ℓ_{i+1} − ℓ_i|` (on `‖r‖`, not its log) from `from` onwards.
    pub fn max_change_after(&self, from: usize) -> f64 {
        let r: Vec<f64> = self.log_residuals.iter().map(|l| l.exp()).collect();
        r.windows(2)
            .skip(from)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,log_residual,gamma,delta_r\n");
        for (i, l) in self.log_residuals.iter().enumerate() {
            let (g, d) = if i == 0 {
                (String::new(), String::new())
            } else {
                (
                    self.step_sizes[i - 1].to_string(),
                    self.gaps[i - 1].to_string(),
                )
            };
            let _ = writeln!(out, "{i},{l},{g},{d}");
        }
        out
    }
}

/// Greedy decomposition of `w` on the `bits`-bit unit grid for up to `steps`
/// pairs, recording the residual trajectory.
pub fn trace_decay(
    w: &[f64],
    bits: u32,
    steps: usize,
    policy: StepPolicy,
    seed: u64,
) -> Result<DecayRun> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!(
            "steps must be at least 2, got {steps}"
        )));
    }
    let grid = QuantGrid::unit(bits)?;
    let params = DecomposeParams::new(steps).with_policy(policy);
    let (_, trace) = decompose(w, grid, params)?;

    let mut log_residuals: Vec<f64> = trace.residual_norms.iter().map(|r| r.ln()).collect();
    let mut step_sizes = trace.step_sizes.clone();
    let mut gaps = trace.gaps.clone();
    let exact = trace.residual_norms.last() == Some(&0.0);
    if !exact {
        // repeated attempts after a stall see the same residual and fail the same way
        let (last_step, last_gap) = (
            step_sizes.last().copied().unwrap_or(f64::NAN),
            gaps.last().copied().unwrap_or(f64::NAN),
        );
        let last = *log_residuals.last().expect("trace starts with ‖w‖");
        while log_residuals.len() <= steps {
            log_residuals.push(last);
        }
        step_sizes.truncate(steps);
        gaps.truncate(steps);
        while step_sizes.len() < steps {
            step_sizes.push(last_step);
            gaps.push(last_gap);
        }
    } else {
        step_sizes.truncate(log_residuals.len() - 1);
        gaps.truncate(log_residuals.len() - 1);
    }

    let gate_step = match policy {
        StepPolicy::Adaptive { .. } => trace.stall_step,
        StepPolicy::Fixed { .. } => trace.gate_step.or(trace.stall_step),
    };
    let accepted = trace.residual_norms.len() - 1;
    let fit_end = gate_step.unwrap_or(accepted).min(accepted);
    let xs: Vec<f64> = (0..=fit_end).map(|i| i as f64).collect();
    let ys: Vec<f64> = log_residuals[..=fit_end].to_vec();
    let finite = ys.iter().all(|v| v.is_finite());
    let fit = if finite { fit_line(&xs, &ys) } else { None };

    Ok(DecayRun {
        seed,
        dim: w.len(),
        bits,
        policy,
        log_residuals,
        step_sizes,
        gaps,
        gate_step,
        stall_step: trace.stall_step,
        fit,
    })
}

/// Standard-normal vector of length `d` from `seed`.
pub fn gaussian_vector(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Decay experiment on a standard-normal `w ∈ R^d`.
pub fn run_decay(
    d: usize,
    bits: u32,
    steps: usize,
    policy: StepPolicy,
    seed: u64,
) -> Result<DecayRun> {
    trace_decay(&gaussian_vector(d, seed), bits, steps, policy, seed)
}

/// One greedy step compared against the exhaustive optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GapStep {
    pub trial: usize,
    pub step: usize,
    pub residual_sq: f64,
    pub greedy_sq: f64,
    pub oracle_sq: f64,
    pub gamma: f64,
    /// `2‖r‖‖w̃*‖ + (2a* + η)‖w̃*‖²`: admissible excess per unit `η` for this step.
    pub bound_constant: f64,
    /// The oracle's `a*` is itself a lattice point.
    pub on_lattice: bool,
}

impl GapStep {
    pub fn gap(&self) -> f64 {
        self.greedy_sq - self.oracle_sq
    }

    /// `‖r − a*w̃*‖² / ‖r‖²`.
    pub fn contraction(&self) -> f64 {
        self.oracle_sq / self.residual_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub dim: usize,
    pub bits: u32,
    pub max_step: f64,
    pub steps: Vec<GapStep>,
}

impl GapReport {
    /// Largest observed `(greedy² − oracle²)/η`.
    pub fn empirical_constant(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.gap() / self.max_step)
            .fold(0.0, f64::max)
    }

    pub fn max_contraction(&self) -> f64 {
        self.steps
            .iter()
            .map(GapStep::contraction)
            .fold(0.0, f64::max)
    }

    /// Steps with `greedy² > oracle² + c·η` (`slack` absorbs rounding).
    pub fn bound_violations(&self, slack: f64) -> usize {
        self.steps
            .iter()
            .filter(|s| s.greedy_sq > s.oracle_sq + s.bound_constant * self.max_step + slack)
            .count()
    }

    /// Steps where greedy beat the oracle by more than `slack`; always a bug.
    pub fn dominance_violations(&self, slack: f64) -> usize {
        self.steps
            .iter()
            .filter(|s| s.greedy_sq < s.oracle_sq - slack)
            .count()
    }

    pub fn mean_first_step_gap(&self) -> f64 {
        let first: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step == 0)
            .map(GapStep::gap)
            .collect();
        first.iter().sum::<f64>() / first.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "trial,step,residual_sq,greedy_sq,oracle_sq,gamma,bound_constant,contraction\n",
        );
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.trial,
                s.step,
                s.residual_sq,
                s.greedy_sq,
                s.oracle_sq,
                s.gamma,
                s.bound_constant,
                s.contraction()
            );
        }
        out
    }
}

fn is_lattice_point(a: f64, step: f64, range_end: f64) -> bool {
    let j = (a / step).round();
    j >= 1.0 && j * step <= range_end && (a - j * step).abs() <= 1e-12 * a.max(1.0)
}

/// Greedy-versus-oracle comparison along the greedy trajectory of one vector.
pub fn gap_trace(
    trial: usize,
    w: &[f64],
    bits: u32,
    max_step: f64,
    steps: usize,
) -> Result<Vec<GapStep>> {
    let grid = QuantGrid::unit(bits)?;
    let policy = StepPolicy::Adaptive { max_step };
    let mut r = w.to_vec();
    let mut out = Vec::new();
    for step in 0..steps {
        let norm = l2_norm(&r);
        if norm == 0.0 {
            break;
        }
        let (gamma, _) = policy.step_for(&r, &grid);
        let range_end = search_range_end(norm, &grid);
        let greedy = best_coefficient(&r, &grid, gamma, range_end, None)?;
        let oracle = oracle_decompose_step(&r, &grid)?;
        let z = oracle.codes.dequantize();
        let zn = l2_norm(&z);
        out.push(GapStep {
            trial,
            step,
            residual_sq: norm * norm,
            greedy_sq: greedy.residual_norm.powi(2),
            oracle_sq: oracle.residual_norm.powi(2),
            gamma,
            bound_constant: 2.0 * norm * zn + (2.0 * oracle.coeff + max_step) * zn * zn,
            on_lattice: is_lattice_point(oracle.coeff, gamma, range_end),
        });
        if !(greedy.residual_norm < norm) {
            break;
        }
        let dz = greedy.codes.dequantize();
        for (x, v) in r.iter_mut().zip(dz) {
            *x -= greedy.coeff * v;
        }
    }
    Ok(out)
}

/// Runs `trials` standard-normal vectors of dimension `d` for up to `steps`
/// greedy steps each, checking every step against the oracle.
pub fn oracle_gap_check(
    d: usize,
    bits: u32,
    trials: usize,
    max_step: f64,
    steps: usize,
    seed: u64,
) -> Result<GapReport> {
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let w = gaussian_vector(d, seed.wrapping_add(t as u64));
            gap_trace(t, &w, bits, max_step, steps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapReport {
        dim: d,
        bits,
        max_step,
        steps: per_trial.into_iter().flatten().collect(),
    })
}

/// Mean first-step gap for `η`, `η/4`, `η/16` on the same vectors.
pub fn gap_sweep(d: usize, bits: u32, trials: usize, max_step: f64, seed: u64) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (slot, div) in out.iter_mut().zip([1.0, 4.0, 16.0]) {
        *slot = oracle_gap_check(d, bits, trials, max_step / div, 1, seed)?.mean_first_step_gap();
    }
    Ok(out)
}
