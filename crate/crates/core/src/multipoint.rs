//! Greedy multipoint decomposition `w ≈ Σ a_i · w̃_i` with low-bit `w̃_i`.
//!
//! Each step approximates the current residual `r` by a single scaled
//! low-bit vector. For a fixed coefficient `a` the best vector is the
//! nearest rounding `[r / a]_Q`, so only `a` has to be searched; it is
//! taken from the lattice `{γ, 2γ, …} ∩ (0, I_max]` with
//! `γ = min(Δ_r / (2^(b-1) - 1), η)` and `I_max = 2 (2^(b-1) - 1) ‖r‖`,
//! where `Δ_r` is the minimal gap of `r`.
//!
//! The grid search is exact over the lattice but does not visit every
//! point: `a ↦ [r / a]_Q` is piecewise constant with breakpoints where some
//! `|r_j| / a` crosses a rounding midpoint, and on each piece the objective
//! is a convex quadratic in `a`. Only the lattice points bracketing each
//! piece's vertex and its ends are evaluated.

use crate::error::{Error, Result};
use crate::quantgrid::{QuantGrid, QuantizedVector};

/// Default cap on the grid-search step size.
pub const DEFAULT_MAX_STEP: f64 = 1.0 / 1024.0;

/// Largest dimension accepted by [`oracle_decompose_step`].
pub const ORACLE_MAX_DIM: usize = 12;
const ORACLE_MAX_CANDIDATES: f64 = (1u64 << 26) as f64;

// Lattice indices are carried as f64; beyond 2^53 they stop being exact.
const MAX_LATTICE_POINTS: f64 = 9_007_199_254_740_992.0;
// Relative slack on closed-form piece minima before direct re-evaluation.
const CANDIDATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// `γ = min(Δ_r / (2^(b-1) - 1), max_step)`; `Δ_r = ∞` falls back to `max_step`.
    Adaptive { max_step: f64 },
    /// Constant step regardless of the residual.
    Fixed { step: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Adaptive {
            max_step: DEFAULT_MAX_STEP,
        }
    }
}

impl StepPolicy {
    fn validate(&self) -> Result<()> {
        let v = match *self {
            StepPolicy::Adaptive { max_step } => max_step,
            StepPolicy::Fixed { step } => step,
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid-search step must be finite and positive, got {v}"
            )));
        }
        Ok(())
    }

    /// Step size for residual `r`, plus the magnitude gap it was derived from.
    pub fn step_for(&self, r: &[f64], grid: &QuantGrid) -> (f64, f64) {
        let gap = magnitude_gap(r);
        let step = match *self {
            StepPolicy::Adaptive { max_step } => {
                if gap.is_finite() {
                    (gap / f64::from(grid.half_levels())).min(max_step)
                } else {
                    max_step
                }
            }
            StepPolicy::Fixed { step } => step,
        };
        (step, gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeParams {
    /// Maximum number of pairs `n`.
    pub max_pairs: usize,
    pub policy: StepPolicy,
    /// Extra coefficient tried in the first step only. Passing the channel's
    /// clipping factor `K` makes the one-pair result never worse than plain
    /// rounding.
    pub anchor: Option<f64>,
}

impl DecomposeParams {
    pub fn new(max_pairs: usize) -> Self {
        DecomposeParams {
            max_pairs,
            policy: StepPolicy::default(),
            anchor: None,
        }
    }

    pub fn with_policy(mut self, policy: StepPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_anchor(mut self, anchor: f64) -> Self {
        self.anchor = Some(anchor);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub coeff: f64,
    pub codes: QuantizedVector,
}

/// Ordered `(a_i, w̃_i)` pairs sharing one zero-centred grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipointCode {
    grid: QuantGrid,
    dim: usize,
    pairs: Vec<Pair>,
}

impl MultipointCode {
    pub fn new(grid: QuantGrid, dim: usize, pairs: Vec<Pair>) -> Result<Self> {
        for p in &pairs {
            if p.codes.grid() != &grid {
                return Err(Error::InvalidGrid(
                    "all pairs of a multipoint code must share one grid".into(),
                ));
            }
            if p.codes.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.codes.len(),
                });
            }
            if !p.coeff.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite coefficient {}",
                    p.coeff
                )));
            }
        }
        Ok(MultipointCode { grid, dim, pairs })
    }

    pub fn grid(&self) -> &QuantGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The first `n` pairs.
    pub fn truncated(&self, n: usize) -> MultipointCode {
        MultipointCode {
            grid: self.grid,
            dim: self.dim,
            pairs: self.pairs[..n.min(self.pairs.len())].to_vec(),
        }
    }

    /// `Σ a_i · dequantize(w̃_i)`, accumulated in pair order.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for p in &self.pairs {
            for (o, z) in out.iter_mut().zip(p.codes.dequantize()) {
                *o += p.coeff * z;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecompositionTrace {
    /// `‖r_1‖ = ‖w‖` followed by the norm after every accepted pair.
    pub residual_norms: Vec<f64>,
    /// Step size used by every attempted step (accepted or not).
    pub step_sizes: Vec<f64>,
    /// Magnitude gap of the residual at every attempted step (`∞` when undefined).
    pub gaps: Vec<f64>,
    /// First attempted step whose grid-search step exceeded the residual's gap.
    pub gate_step: Option<usize>,
    /// Step at which the search found no strictly improving coefficient.
    pub stall_step: Option<usize>,
}

/// Minimal gap: `min |(|t_i| - |t_j|)| / 2` over pairs with `t_i ≠ t_j`.
///
/// Returns `∞` when no such pair exists. Two distinct entries of equal
/// magnitude (`c` and `-c`) give 0.
pub fn minimal_gap(t: &[f64]) -> f64 {
    let mut values: Vec<f64> = t.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() < 2 {
        return f64::INFINITY;
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags.windows(2)
        .map(|w| (w[1] - w[0]) / 2.0)
        .fold(f64::INFINITY, f64::min)
}

/// Minimal gap over distinct magnitudes only: `c` and `-c` count as one
/// element. This is the gap used to size the grid-search step, since a zero
/// step would stall the search.
pub fn magnitude_gap(t: &[f64]) -> f64 {
    let mut mags: Vec<f64> = t.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    mags.windows(2)
        .map(|w| (w[1] - w[0]) / 2.0)
        .fold(f64::INFINITY, f64::min)
}

/// Upper end of the coefficient search range, `2 (2^(b-1) - 1) ‖r‖`.
pub fn search_range_end(residual_norm: f64, grid: &QuantGrid) -> f64 {
    2.0 * f64::from(grid.half_levels()) * residual_norm
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Best single-pair approximation of a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub coeff: f64,
    pub codes: QuantizedVector,
    pub residual_norm: f64,
}

fn squared_error_at(r: &[f64], grid: &QuantGrid, a: f64, codes: &mut [i32]) -> f64 {
    let mut acc = 0.0;
    for (c, &x) in codes.iter_mut().zip(r) {
        *c = grid.nearest_code(x / a);
        let e = x - a * grid.signed_level(*c);
        acc += e * e;
    }
    acc
}

/// Lattice points `j·γ` satisfy `1 ≤ j ≤ last`.
fn lattice_last(step: f64, range_end: f64) -> f64 {
    let mut last = (range_end / step).floor();
    while last >= 1.0 && last * step > range_end {
        last -= 1.0;
    }
    while (last + 1.0) * step <= range_end {
        last += 1.0;
    }
    last
}

/// Grid search for `a* = argmin_a ‖r - a [r/a]_Q‖` over `{γ, 2γ, …} ∩ (0, I_max]`
/// plus the optional `anchor`. Ties go to the smaller `a`.
pub fn best_coefficient(
    r: &[f64],
    grid: &QuantGrid,
    step: f64,
    range_end: f64,
    anchor: Option<f64>,
) -> Result<Candidate> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "grid-search step must be positive, got {step}"
        )));
    }
    if !(range_end.is_finite() && range_end > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "search range end must be positive, got {range_end}"
        )));
    }
    if grid.offset() != 0.0 {
        return Err(Error::InvalidGrid(
            "pair vectors must live on a zero-centred grid".into(),
        ));
    }
    if let Some(pos) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    if r.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroResidual);
    }
    if range_end / step > MAX_LATTICE_POINTS {
        return Err(Error::InvalidParameter(format!(
            "search lattice with step {step} over (0, {range_end}] is too fine"
        )));
    }

    let last = lattice_last(step, range_end);
    let scored = lattice_candidates(r, grid, step, range_end, last);
    let norm_sq: f64 = r.iter().map(|x| x * x).sum();
    let tol = CANDIDATE_TOLERANCE * norm_sq;

    let mut codes = vec![0i32; r.len()];
    let mut best: Option<(f64, f64, Vec<i32>)> = None;
    let mut consider = |a: f64, best: &mut Option<(f64, f64, Vec<i32>)>| {
        let err = squared_error_at(r, grid, a, &mut codes);
        let better = match best {
            None => true,
            Some((ba, be, _)) => err < *be || (err == *be && a < *ba),
        };
        if better {
            *best = Some((a, err, codes.clone()));
        }
    };
    if let Some(a) = anchor {
        if a.is_finite() && a > 0.0 {
            consider(a, &mut best);
        }
    }
    // a point's closed-form value is accurate within its own piece, so once
    // the values pass the best direct error nothing further can win
    for (value, j) in scored {
        if let Some((_, be, _)) = &best {
            if norm_sq + value > be + tol {
                break;
            }
        }
        consider(j * step, &mut best);
    }
    let (coeff, _, codes) = best.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "search lattice with step {step} over (0, {range_end}] is empty"
        ))
    })?;
    let codes = QuantizedVector::from_signed(*grid, &codes)?;
    let residual_norm = l2_norm(
        &r.iter()
            .zip(codes.dequantize())
            .map(|(x, z)| x - coeff * z)
            .collect::<Vec<_>>(),
    );
    Ok(Candidate {
        coeff,
        codes,
        residual_norm,
    })
}

/// Lattice indices that can hold the minimum.
///
/// `a ↦ [r/a]_Q` is piecewise constant with breakpoints
/// `|r_j| · m / (K (h + 1/2))`, and on each piece the objective is the
/// quadratic `‖r‖² − 2a⟨r,z⟩ + a²‖z‖²`. Sweeping the breakpoints in order
/// keeps `⟨r,z⟩` and `‖z‖²` current, so each piece's best lattice point
/// (the clamped floor or ceiling of the vertex) costs O(1). Returns
/// `(‖r − a z‖² − ‖r‖², j)` sorted by that closed-form value.
fn lattice_candidates(
    r: &[f64],
    grid: &QuantGrid,
    step: f64,
    range_end: f64,
    last: f64,
) -> Vec<(f64, f64)> {
    if last < 1.0 {
        return Vec::new();
    }
    let m = grid.half_levels();
    let mf = f64::from(m);
    let k = grid.scale();

    let mut events: Vec<(f64, usize)> = Vec::with_capacity(r.len() * m as usize);
    for (i, &x) in r.iter().enumerate() {
        let ax = x.abs();
        if ax == 0.0 {
            continue;
        }
        for h in 0..m {
            let b = ax * mf / (k * (f64::from(h) + 0.5));
            if b < range_end {
                events.push((b, i));
            }
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    // as a → 0⁺ every nonzero entry clips to ±m
    let mut mags: Vec<i32> = r.iter().map(|&x| if x == 0.0 { 0 } else { m }).collect();
    let level = |x: f64, s: i32| {
        if x < 0.0 {
            -grid.signed_level(s)
        } else {
            grid.signed_level(s)
        }
    };
    let mut dot = 0.0;
    let mut sq = 0.0;
    for (&x, &s) in r.iter().zip(&mags) {
        let z = level(x, s);
        dot += x * z;
        sq += z * z;
    }

    let mut scored: Vec<(f64, f64)> = Vec::new();
    let mut piece = |lo: f64, hi: f64, dot: f64, sq: f64| {
        // points strictly inside the piece, widened by one on each side for
        // lattice points that land on a breakpoint up to rounding
        let inner_lo = (lo / step).ceil().max(1.0);
        let inner_hi = (hi / step).floor().min(last);
        let outer_lo = (lo / step).floor().max(1.0);
        let outer_hi = ((hi / step).floor() + 1.0).min(last);
        if outer_lo > outer_hi {
            return;
        }
        let value = |j: f64| {
            let a = j * step;
            a * (a * sq - 2.0 * dot)
        };
        if sq > 0.0 && inner_lo <= inner_hi {
            let v = (dot / sq / step).floor();
            for j in [v, v + 1.0] {
                let j = j.clamp(inner_lo, inner_hi);
                scored.push((value(j), j));
            }
        }
        for j in [outer_lo, outer_hi] {
            scored.push((value(j), j));
        }
    };

    let mut lo = 0.0;
    let mut idx = 0;
    while idx < events.len() {
        let b = events[idx].0;
        piece(lo, b, dot, sq);
        while idx < events.len() && events[idx].0 == b {
            let i = events[idx].1;
            let x = r[i];
            let old = level(x, mags[i]);
            mags[i] -= 1;
            let new = level(x, mags[i]);
            dot += x * (new - old);
            sq += new * new - old * old;
            idx += 1;
        }
        lo = b;
    }
    piece(lo, range_end, dot, sq);

    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    scored.dedup_by(|a, b| a.1 == b.1);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    scored
}

/// Stepwise greedy decomposer; each [`GreedyDecomposer::step`] appends one pair.
#[derive(Debug, Clone)]
pub struct GreedyDecomposer {
    grid: QuantGrid,
    params: DecomposeParams,
    residual: Vec<f64>,
    pairs: Vec<Pair>,
    trace: DecompositionTrace,
    done: bool,
}

impl GreedyDecomposer {
    pub fn new(w: &[f64], grid: QuantGrid, params: DecomposeParams) -> Result<Self> {
        params.policy.validate()?;
        if params.max_pairs == 0 {
            return Err(Error::InvalidParameter(
                "max_pairs must be at least 1".into(),
            ));
        }
        if grid.offset() != 0.0 {
            return Err(Error::InvalidGrid(
                "pair vectors must live on a zero-centred grid".into(),
            ));
        }
        if let Some(pos) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let trace = DecompositionTrace {
            residual_norms: vec![l2_norm(w)],
            ..Default::default()
        };
        Ok(GreedyDecomposer {
            grid,
            params,
            residual: w.to_vec(),
            pairs: Vec::new(),
            trace,
            done: false,
        })
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_norm(&self) -> f64 {
        *self
            .trace
            .residual_norms
            .last()
            .expect("trace starts with ‖w‖")
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn trace(&self) -> &DecompositionTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Attempt one more pair. Returns `Ok(true)` if a pair was accepted.
    pub fn step(&mut self) -> Result<bool> {
        if self.done || self.pairs.len() >= self.params.max_pairs {
            self.done = true;
            return Ok(false);
        }
        let norm = self.residual_norm();
        if norm == 0.0 {
            self.done = true;
            return Ok(false);
        }
        let attempt = self.trace.step_sizes.len();
        let (step, gap) = self.params.policy.step_for(&self.residual, &self.grid);
        self.trace.step_sizes.push(step);
        self.trace.gaps.push(gap);
        if self.trace.gate_step.is_none() && step > gap {
            self.trace.gate_step = Some(attempt);
        }
        let range_end = search_range_end(norm, &self.grid);
        let anchor = if self.pairs.is_empty() {
            self.params.anchor
        } else {
            None
        };
        if range_end / step > MAX_LATTICE_POINTS
            || (lattice_last(step, range_end) < 1.0 && anchor.is_none())
        {
            self.stall(attempt);
            return Ok(false);
        }
        let cand = best_coefficient(&self.residual, &self.grid, step, range_end, anchor)?;
        let next: Vec<f64> = self
            .residual
            .iter()
            .zip(cand.codes.dequantize())
            .map(|(x, z)| x - cand.coeff * z)
            .collect();
        let next_norm = l2_norm(&next);
        if !(next_norm < norm) {
            self.stall(attempt);
            return Ok(false);
        }
        self.residual = next;
        self.trace.residual_norms.push(next_norm);
        self.pairs.push(Pair {
            coeff: cand.coeff,
            codes: cand.codes,
        });
        Ok(true)
    }

    fn stall(&mut self, attempt: usize) {
        self.trace.stall_step = Some(attempt);
        self.done = true;
    }

    /// Run until `max_pairs`, a zero residual, or a stall.
    pub fn run(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    pub fn code(&self) -> MultipointCode {
        MultipointCode {
            grid: self.grid,
            dim: self.residual.len(),
            pairs: self.pairs.clone(),
        }
    }

    pub fn finish(self) -> (MultipointCode, DecompositionTrace) {
        let dim = self.residual.len();
        (
            MultipointCode {
                grid: self.grid,
                dim,
                pairs: self.pairs,
            },
            self.trace,
        )
    }
}

/// Greedy decomposition of `w` into at most `params.max_pairs` pairs on `grid`.
///
/// Stops early on a zero residual or when no lattice coefficient strictly
/// reduces the residual norm.
pub fn decompose(
    w: &[f64],
    grid: QuantGrid,
    params: DecomposeParams,
) -> Result<(MultipointCode, DecompositionTrace)> {
    let mut g = GreedyDecomposer::new(w, grid, params)?;
    g.run()?;
    Ok(g.finish())
}

/// `a_i = w_i / level_max`, `w̃_i = one_hot(i)` for every nonzero `w_i`; exact.
pub fn one_hot_code(w: &[f64], grid: QuantGrid) -> Result<MultipointCode> {
    if grid.offset() != 0.0 {
        return Err(Error::InvalidGrid(
            "pair vectors must live on a zero-centred grid".into(),
        ));
    }
    let m = grid.half_levels();
    let top = grid.signed_level(m);
    let mut pairs = Vec::new();
    for (i, &x) in w.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if x == 0.0 {
            continue;
        }
        let mut codes = vec![0i32; w.len()];
        codes[i] = m;
        pairs.push(Pair {
            coeff: x / top,
            codes: QuantizedVector::from_signed(grid, &codes)?,
        });
    }
    MultipointCode::new(grid, w.len(), pairs)
}

/// Greedy decomposition with `n = d` pairs. If the greedy residual is not
/// within `1e-12 · ‖w‖`, the exact one-hot construction is returned instead;
/// the flag reports whether that happened.
pub fn decompose_to_exactness(
    w: &[f64],
    grid: QuantGrid,
    policy: StepPolicy,
) -> Result<(MultipointCode, bool)> {
    if w.is_empty() {
        return Ok((MultipointCode::new(grid, 0, Vec::new())?, false));
    }
    let params = DecomposeParams::new(w.len()).with_policy(policy);
    let (code, trace) = decompose(w, grid, params)?;
    let last = *trace.residual_norms.last().unwrap_or(&0.0);
    if last <= 1e-12 * l2_norm(w) {
        Ok((code, false))
    } else {
        Ok((one_hot_code(w, grid)?, true))
    }
}

/// True per-step optimum `min_{a, w̃ ∈ Q^d} ‖r - a w̃‖` by enumerating every
/// `w̃` with the closed-form `a = ⟨w̃, r⟩ / ‖w̃‖²`. The returned coefficient is
/// non-negative (the sign is moved into `w̃`). First enumerated optimum wins.
pub fn oracle_decompose_step(r: &[f64], grid: &QuantGrid) -> Result<Candidate> {
    let d = r.len();
    if grid.offset() != 0.0 {
        return Err(Error::InvalidGrid(
            "pair vectors must live on a zero-centred grid".into(),
        ));
    }
    let levels = grid.level_count();
    if d > ORACLE_MAX_DIM || (levels as f64).powi(d as i32) > ORACLE_MAX_CANDIDATES {
        let max_d = (ORACLE_MAX_CANDIDATES.ln() / (levels as f64).ln()).floor() as usize;
        return Err(Error::DimensionTooLarge(d, max_d.min(ORACLE_MAX_DIM)));
    }
    if let Some(pos) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    let m = grid.half_levels();
    if r.iter().all(|&v| v == 0.0) {
        return Ok(Candidate {
            coeff: 0.0,
            codes: QuantizedVector::from_signed(*grid, &vec![0; d])?,
            residual_norm: 0.0,
        });
    }

    let mut codes = vec![-m; d];
    let mut best_gain = f64::NEG_INFINITY;
    let mut best_codes = vec![0i32; d];
    loop {
        let mut dot = 0.0;
        let mut sq = 0.0;
        for (&c, &x) in codes.iter().zip(r) {
            let z = grid.signed_level(c);
            dot += z * x;
            sq += z * z;
        }
        if sq > 0.0 {
            let gain = dot * dot / sq;
            if gain > best_gain {
                best_gain = gain;
                best_codes.copy_from_slice(&codes);
            }
        }
        // odometer increment
        let mut i = 0;
        while i < d {
            if codes[i] < m {
                codes[i] += 1;
                break;
            }
            codes[i] = -m;
            i += 1;
        }
        if i == d {
            break;
        }
    }

    let z: Vec<f64> = best_codes.iter().map(|&c| grid.signed_level(c)).collect();
    let dot: f64 = z.iter().zip(r).map(|(a, b)| a * b).sum();
    let sq: f64 = z.iter().map(|a| a * a).sum();
    let mut coeff = dot / sq;
    if coeff < 0.0 {
        coeff = -coeff;
        for c in best_codes.iter_mut() {
            *c = -*c;
        }
    }
    let codes = QuantizedVector::from_signed(*grid, &best_codes)?;
    let residual_norm = l2_norm(
        &r.iter()
            .zip(codes.dequantize())
            .map(|(x, z)| x - coeff * z)
            .collect::<Vec<_>>(),
    );
    Ok(Candidate {
        coeff,
        codes,
        residual_norm,
    })
}
