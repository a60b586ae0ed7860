//! Network-level multipoint quantization.
//!
//! Every output channel starts from plain rounding on its layer's grid. A
//! channel whose output error on the calibration batch reaches the threshold
//! `ε` is re-expressed as a greedy multipoint code, adding pairs until the
//! error drops below `ε` or `n_max` pairs are used (the plan is then marked
//! saturated). Clipping factors come from a 20-point grid search over
//! `{0.05, 0.10, …, 1.00} · max|w − B|`.
//!
//! The calibration batch of each layer is the full-precision input to that
//! layer, supplied by the container; no forward pass happens here.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{channel_cost_mixed, ChannelCost};
use crate::error::{Error, Result};
use crate::intpipe::check_precision;
use crate::multipoint::{
    DecomposeParams, GreedyDecomposer, MultipointCode, Pair, StepPolicy, DEFAULT_MAX_STEP,
};
use crate::quantgrid::{QuantGrid, MAX_BITS, MIN_BITS};
use crate::tensor::{dot, CalibrationBatch, Matrix};
use crate::tensorio::{Layer, Model, QuantizedLayer, QuantizedModel};

/// Number of points in the clipping-factor search.
pub const CLIP_STEPS: u32 = 20;
/// Scale used when every governed weight equals the offset.
pub const DEGENERATE_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Naive,
    Multipoint,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Naive => "naive",
            Scheme::Multipoint => "multipoint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerLayer,
    PerChannel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub granularity: Granularity,
    /// `B = 0` when set, otherwise `B` is the min/max midpoint of the governed weights.
    pub symmetric: bool,
    /// Output-error threshold `ε`; `+∞` disables multipoint entirely.
    pub epsilon: f64,
    /// Cap `η` on the grid-search step.
    pub max_step: f64,
    /// Escalation cap `n_max`.
    pub max_pairs: usize,
    /// Fixed-point precision `p` of stored coefficients.
    pub precision: u32,
    /// Search the clipping factor; otherwise `K = max|w − B|`.
    pub clip_weights: bool,
    /// Layers forced to `high_precision_bits` weights.
    pub high_precision_layers: Vec<String>,
    pub high_precision_bits: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            weight_bits: 4,
            activation_bits: 8,
            granularity: Granularity::PerLayer,
            symmetric: true,
            epsilon: f64::INFINITY,
            max_step: DEFAULT_MAX_STEP,
            max_pairs: 8,
            precision: crate::intpipe::DEFAULT_PRECISION,
            clip_weights: true,
            high_precision_layers: Vec::new(),
            high_precision_bits: 8,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, b) in [
            ("weight bits", self.weight_bits),
            ("activation bits", self.activation_bits),
            ("high-precision bits", self.high_precision_bits),
        ] {
            if !(MIN_BITS..=MAX_BITS).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "{what} must be in [{MIN_BITS}, {MAX_BITS}], got {b}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.max_step.is_finite() && self.max_step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be finite and positive, got {}",
                self.max_step
            )));
        }
        if self.max_pairs == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        check_precision(self.precision)
    }

    pub fn bits_for(&self, layer: &str) -> u32 {
        if self.high_precision_layers.iter().any(|l| l == layer) {
            self.high_precision_bits
        } else {
            self.weight_bits
        }
    }

    fn decompose_params(&self, anchor: f64) -> DecomposeParams {
        DecomposeParams::new(self.max_pairs)
            .with_policy(StepPolicy::Adaptive {
                max_step: self.max_step,
            })
            .with_anchor(anchor)
    }
}

/// Per-channel decision record.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub channel: usize,
    pub scheme: Scheme,
    /// The channel's `(b, K, B)`; pairs live on its zero-centred unit version.
    pub grid: QuantGrid,
    pub code: MultipointCode,
    pub achieved_error: f64,
    pub saturated: bool,
}

impl ChannelPlan {
    pub fn n(&self) -> usize {
        self.code.len()
    }

    /// `B + Σ a_i · w̃_i`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let b = self.grid.offset();
        self.code.reconstruct().into_iter().map(|v| v + b).collect()
    }

    /// Structural checks plus the error recomputed from the stored code.
    pub fn validate(&self, w: &[f64], batch: &CalibrationBatch) -> Result<()> {
        if self.code.grid() != &self.grid.to_unit() {
            return Err(Error::Invariant(format!(
                "channel {}: pair grid does not match channel grid",
                self.channel
            )));
        }
        if self.scheme == Scheme::Naive
            && (self.n() != 1 || self.code.pairs()[0].coeff != self.grid.scale())
        {
            return Err(Error::Invariant(format!(
                "channel {}: naive plan must be one pair with a = K",
                self.channel
            )));
        }
        let e = output_error(w, &self.reconstruct(), batch)?;
        if e != self.achieved_error {
            return Err(Error::Invariant(format!(
                "channel {}: stored error {} but recomputed {}",
                self.channel, self.achieved_error, e
            )));
        }
        Ok(())
    }
}

/// Mean over the batch of `(δᵀx)²` with `δ = w − w_hat`.
pub fn output_error(w: &[f64], w_hat: &[f64], batch: &CalibrationBatch) -> Result<f64> {
    if w.len() != w_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: w_hat.len(),
        });
    }
    let delta: Vec<f64> = w.iter().zip(w_hat).map(|(a, b)| a - b).collect();
    difference_error(&delta, batch)
}

/// Output error as a function of the weight difference alone.
pub fn difference_error(delta: &[f64], batch: &CalibrationBatch) -> Result<f64> {
    if delta.len() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: batch.dim(),
            actual: delta.len(),
        });
    }
    let sum: f64 = batch
        .samples()
        .iter_rows()
        .map(|x| {
            let y = dot(delta, x);
            y * y
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Plain rounding onto `grid` as a one-pair code `(K, [(w − B)/K])`.
pub fn naive_code(w: &[f64], grid: &QuantGrid) -> Result<MultipointCode> {
    let unit = grid.to_unit();
    let k = grid.scale();
    let b = grid.offset();
    let centered: Vec<f64> = w.iter().map(|x| (x - b) / k).collect();
    let codes = unit.round_vector(&centered)?;
    MultipointCode::new(unit, w.len(), vec![Pair { coeff: k, codes }])
}

/// Clipping-factor candidates `{j/20 · max_abs}` for `j = 1..=20`, ascending.
pub fn clip_candidates(max_abs: f64) -> Vec<f64> {
    (1..=CLIP_STEPS)
        .map(|j| f64::from(j) / f64::from(CLIP_STEPS) * max_abs)
        .collect()
}

fn naive_reconstruction(w: &[f64], grid: &QuantGrid) -> Vec<f64> {
    let unit = grid.to_unit();
    let k = grid.scale();
    let b = grid.offset();
    w.iter()
        .map(|&x| k * unit.signed_level(unit.nearest_code((x - b) / k)) + b)
        .collect()
}

/// `argmin_K Σ_{w ∈ W} e(w, [w]_Q(K), D)` over the clip candidates. Ties
/// prefer the larger `K`. All-zero (`w ≡ B`) weights return [`DEGENERATE_SCALE`].
pub fn clip_search_weights(
    weights: &[&[f64]],
    batch: &CalibrationBatch,
    bits: u32,
    offset: f64,
) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter(
            "clip search needs at least one weight vector".into(),
        ));
    }
    let max_abs = weights
        .iter()
        .flat_map(|w| w.iter())
        .fold(0.0f64, |m, &x| m.max((x - offset).abs()));
    if max_abs == 0.0 {
        return Ok(DEGENERATE_SCALE);
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for k in clip_candidates(max_abs) {
        let grid = QuantGrid::new(bits, k, offset)?;
        let mut total = 0.0;
        for w in weights {
            total += output_error(w, &naive_reconstruction(w, &grid), batch)?;
        }
        if total <= best.1 {
            best = (k, total);
        }
    }
    Ok(best.0)
}

/// Clipping factor for activations minimizing the mean squared rounding
/// error of the samples on a zero-centred `bits`-bit grid. Ties prefer larger `K`.
pub fn clip_search_activations(batch: &CalibrationBatch, bits: u32) -> Result<f64> {
    let values = batch.samples().as_slice();
    let max_abs = batch.samples().max_abs();
    if max_abs == 0.0 {
        return Ok(DEGENERATE_SCALE);
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for k in clip_candidates(max_abs) {
        let grid = QuantGrid::new(bits, k, 0.0)?;
        let mse = values
            .iter()
            .map(|&a| {
                let e = a - grid.signed_level(grid.nearest_code(a));
                e * e
            })
            .sum::<f64>()
            / values.len() as f64;
        if mse <= best.1 {
            best = (k, mse);
        }
    }
    Ok(best.0)
}

fn midpoint_offset<'a>(weights: impl Iterator<Item = &'a f64>) -> f64 {
    let (lo, hi) = weights.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if lo.is_finite() {
        (hi + lo) / 2.0
    } else {
        0.0
    }
}

fn grid_for(
    weights: &[&[f64]],
    batch: &CalibrationBatch,
    bits: u32,
    cfg: &QuantConfig,
) -> Result<QuantGrid> {
    let offset = if cfg.symmetric {
        0.0
    } else {
        midpoint_offset(weights.iter().flat_map(|w| w.iter()))
    };
    let scale = if cfg.clip_weights {
        clip_search_weights(weights, batch, bits, offset)?
    } else {
        let m = weights
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |m, &x| m.max((x - offset).abs()));
        if m == 0.0 {
            DEGENERATE_SCALE
        } else {
            m
        }
    };
    QuantGrid::new(bits, scale, offset)
}

/// Per-channel grids for a layer according to the configured granularity.
pub fn layer_grids(
    weights: &Matrix,
    batch: &CalibrationBatch,
    bits: u32,
    cfg: &QuantConfig,
) -> Result<Vec<QuantGrid>> {
    match cfg.granularity {
        Granularity::PerLayer => {
            let rows: Vec<&[f64]> = weights.iter_rows().collect();
            let g = grid_for(&rows, batch, bits, cfg)?;
            Ok(vec![g; weights.rows()])
        }
        Granularity::PerChannel => (0..weights.rows())
            .into_par_iter()
            .map(|i| grid_for(&[weights.row(i)], batch, bits, cfg))
            .collect(),
    }
}

/// Apply the escalation rule to one channel.
pub fn plan_channel(
    channel: usize,
    w: &[f64],
    grid: QuantGrid,
    batch: &CalibrationBatch,
    cfg: &QuantConfig,
) -> Result<ChannelPlan> {
    let naive = naive_code(w, &grid)?;
    let naive_plan = |code: MultipointCode, saturated: bool| -> Result<ChannelPlan> {
        let mut plan = ChannelPlan {
            channel,
            scheme: Scheme::Naive,
            grid,
            code,
            achieved_error: 0.0,
            saturated,
        };
        plan.achieved_error = output_error(w, &plan.reconstruct(), batch)?;
        Ok(plan)
    };
    let plan = naive_plan(naive, false)?;
    if !(plan.achieved_error >= cfg.epsilon) {
        return Ok(plan);
    }

    let offset = grid.offset();
    let centered: Vec<f64> = w.iter().map(|x| x - offset).collect();
    let mut dec = GreedyDecomposer::new(
        &centered,
        grid.to_unit(),
        cfg.decompose_params(grid.scale()),
    )?;
    let mut last_error = None;
    while dec.step()? {
        let candidate = ChannelPlan {
            channel,
            scheme: Scheme::Multipoint,
            grid,
            code: dec.code(),
            achieved_error: 0.0,
            saturated: false,
        };
        let e = output_error(w, &candidate.reconstruct(), batch)?;
        if e < cfg.epsilon {
            return Ok(ChannelPlan {
                achieved_error: e,
                ..candidate
            });
        }
        last_error = Some((candidate, e));
    }
    match last_error {
        Some((candidate, e)) => Ok(ChannelPlan {
            achieved_error: e,
            saturated: true,
            ..candidate
        }),
        // the search could not even match plain rounding
        None => Ok(ChannelPlan {
            saturated: true,
            ..plan
        }),
    }
}

fn layer_batch(layer: &Layer) -> Result<&CalibrationBatch> {
    let batch = layer
        .calibration
        .as_ref()
        .ok_or_else(|| Error::MissingCalibration(layer.decl.name.clone()))?;
    if batch.dim() != layer.weights.cols() {
        return Err(Error::DimensionMismatch {
            expected: layer.weights.cols(),
            actual: batch.dim(),
        });
    }
    Ok(batch)
}

pub fn quantize_layer(layer: &Layer, cfg: &QuantConfig) -> Result<QuantizedLayer> {
    let batch = layer_batch(layer)?;
    let bits = cfg.bits_for(&layer.decl.name);
    let grids = layer_grids(&layer.weights, batch, bits, cfg)?;
    let channels = grids
        .into_par_iter()
        .enumerate()
        .map(|(i, g)| plan_channel(i, layer.weights.row(i), g, batch, cfg))
        .collect::<Result<Vec<_>>>()?;
    let act_k = clip_search_activations(batch, cfg.activation_bits)?;
    Ok(QuantizedLayer {
        name: layer.decl.name.clone(),
        in_features: layer.weights.cols(),
        activation: Some((cfg.activation_bits, act_k)),
        channels,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkSummary {
    pub channels: usize,
    pub multipoint_channels: usize,
    pub saturated_channels: usize,
    pub total_pairs: usize,
    pub mean_error: f64,
}

impl NetworkSummary {
    pub fn of(model: &QuantizedModel) -> Self {
        let plans: Vec<&ChannelPlan> = model
            .layers
            .iter()
            .flat_map(|l| l.channels.iter())
            .collect();
        let channels = plans.len();
        NetworkSummary {
            channels,
            multipoint_channels: plans
                .iter()
                .filter(|p| p.scheme == Scheme::Multipoint)
                .count(),
            saturated_channels: plans.iter().filter(|p| p.saturated).count(),
            total_pairs: plans.iter().map(|p| p.n()).sum(),
            mean_error: if channels == 0 {
                0.0
            } else {
                plans.iter().map(|p| p.achieved_error).sum::<f64>() / channels as f64
            },
        }
    }
}

/// Quantize every layer. Each layer needs a calibration batch.
pub fn quantize_network(
    model: &Model,
    cfg: &QuantConfig,
) -> Result<(QuantizedModel, NetworkSummary)> {
    cfg.validate()?;
    let layers = model
        .layers
        .iter()
        .map(|l| quantize_layer(l, cfg))
        .collect::<Result<Vec<_>>>()?;
    let q = QuantizedModel {
        precision: cfg.precision,
        layers,
    };
    let summary = NetworkSummary::of(&q);
    Ok((q, summary))
}

/// Plain rounding of every channel (multipoint disabled).
pub fn naive_network(model: &Model, cfg: &QuantConfig) -> Result<(QuantizedModel, NetworkSummary)> {
    let cfg = QuantConfig {
        epsilon: f64::INFINITY,
        ..cfg.clone()
    };
    quantize_network(model, &cfg)
}

/// Errors of one channel at every escalation level: plain rounding first,
/// then after each greedy pair up to `n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLadder {
    pub dim: usize,
    pub bits: u32,
    pub naive_error: f64,
    pub multipoint_errors: Vec<f64>,
}

impl ChannelLadder {
    /// `(scheme, n)` that [`plan_channel`] would choose for threshold `epsilon`.
    pub fn choice(&self, epsilon: f64) -> (Scheme, usize) {
        if !(self.naive_error >= epsilon) {
            return (Scheme::Naive, 1);
        }
        match self.multipoint_errors.iter().position(|&e| e < epsilon) {
            Some(i) => (Scheme::Multipoint, i + 1),
            None if self.multipoint_errors.is_empty() => (Scheme::Naive, 1),
            None => (Scheme::Multipoint, self.multipoint_errors.len()),
        }
    }

    pub fn error_at(&self, epsilon: f64) -> f64 {
        match self.choice(epsilon) {
            (Scheme::Naive, _) => self.naive_error,
            (Scheme::Multipoint, n) => self.multipoint_errors[n - 1],
        }
    }

    pub fn cost_at(&self, epsilon: f64, activation_bits: u32) -> ChannelCost {
        let (scheme, n) = self.choice(epsilon);
        channel_cost_mixed(self.dim, self.bits, activation_bits, scheme, n)
    }
}

/// Ladders for every channel of every layer, computed once with `ε = 0⁺`
/// semantics so that any threshold can be evaluated without re-running the search.
pub fn build_ladders(model: &Model, cfg: &QuantConfig) -> Result<Vec<Vec<ChannelLadder>>> {
    cfg.validate()?;
    model
        .layers
        .iter()
        .map(|layer| {
            let batch = layer_batch(layer)?;
            let bits = cfg.bits_for(&layer.decl.name);
            let grids = layer_grids(&layer.weights, batch, bits, cfg)?;
            grids
                .into_par_iter()
                .enumerate()
                .map(|(i, grid)| {
                    let w = layer.weights.row(i);
                    let naive = naive_reconstruction(w, &grid);
                    let naive_error = output_error(w, &naive, batch)?;
                    let offset = grid.offset();
                    let centered: Vec<f64> = w.iter().map(|x| x - offset).collect();
                    let mut dec = GreedyDecomposer::new(
                        &centered,
                        grid.to_unit(),
                        cfg.decompose_params(grid.scale()),
                    )?;
                    let mut errors = Vec::new();
                    while dec.step()? {
                        let rec: Vec<f64> = dec
                            .code()
                            .reconstruct()
                            .into_iter()
                            .map(|v| v + offset)
                            .collect();
                        errors.push(output_error(w, &rec, batch)?);
                    }
                    Ok(ChannelLadder {
                        dim: w.len(),
                        bits,
                        naive_error,
                        multipoint_errors: errors,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// One point of an `ε` sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetPoint {
    pub epsilon: f64,
    /// Multipoint OPs divided by all-naive OPs.
    pub op_ratio: f64,
    pub mean_error: f64,
    pub multipoint_channels: usize,
}

/// Every distinct outcome of the threshold rule, from `ε = +∞` downwards.
///
/// Candidate thresholds sit just above each ladder error, which is where a
/// channel switches level.
pub fn epsilon_sweep(ladders: &[Vec<ChannelLadder>], activation_bits: u32) -> Vec<BudgetPoint> {
    let all: Vec<&ChannelLadder> = ladders.iter().flatten().collect();
    let mut thresholds: Vec<f64> = all
        .iter()
        .flat_map(|l| std::iter::once(l.naive_error).chain(l.multipoint_errors.iter().copied()))
        .filter(|e| *e > 0.0)
        .map(|e| e.next_up())
        .collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let naive_ops: f64 = all
        .iter()
        .map(|l| channel_cost_mixed(l.dim, l.bits, activation_bits, Scheme::Naive, 1).ops())
        .sum();
    thresholds
        .into_iter()
        .map(|eps| {
            let ops: f64 = all
                .iter()
                .map(|l| l.cost_at(eps, activation_bits).ops())
                .sum();
            let mean_error =
                all.iter().map(|l| l.error_at(eps)).sum::<f64>() / all.len().max(1) as f64;
            BudgetPoint {
                epsilon: eps,
                op_ratio: if naive_ops > 0.0 {
                    ops / naive_ops
                } else {
                    1.0
                },
                mean_error,
                multipoint_channels: all
                    .iter()
                    .filter(|l| l.choice(eps).0 == Scheme::Multipoint)
                    .count(),
            }
        })
        .collect()
}

/// Sweep point whose OP ratio is closest to `target`; ties prefer the larger `ε`.
pub fn epsilon_for_op_ratio(points: &[BudgetPoint], target: f64) -> Option<BudgetPoint> {
    points
        .iter()
        .copied()
        .fold(None, |best: Option<BudgetPoint>, p| match best {
            Some(b) if (b.op_ratio - target).abs() <= (p.op_ratio - target).abs() => Some(b),
            _ => Some(p),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{LayerDecl, LayerKind};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn batch(rows: &[Vec<f64>]) -> CalibrationBatch {
        CalibrationBatch::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn gaussian_batch(n: usize, d: usize, seed: u64) -> CalibrationBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        CalibrationBatch::new(Matrix::from_vec(n, d, data).unwrap()).unwrap()
    }

    fn layer(name: &str, w: Matrix, calib: Option<CalibrationBatch>) -> Layer {
        Layer {
            decl: LayerDecl {
                name: name.into(),
                kind: LayerKind::Linear,
                out_channels: w.rows(),
                in_features: w.cols(),
                weight_file: format!("{name}.bin"),
                calib_file: calib.as_ref().map(|_| format!("{name}.calib")),
                calib_samples: calib.as_ref().map(|c| c.len()),
            },
            weights: w,
            calibration: calib,
        }
    }

    #[test]
    fn output_error_examples() {
        let b = batch(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(output_error(&[1.0, 0.0], &[1.0, 0.0], &b).unwrap(), 0.0);
        assert_eq!(output_error(&[1.0, 0.0], &[0.0, 0.0], &b).unwrap(), 1.0);
        assert!(output_error(&[1.0], &[0.0, 0.0], &b).is_err());
        assert!(difference_error(&[1.0, 2.0, 3.0], &b).is_err());
    }

    proptest! {
        #[test]
        fn error_depends_only_on_difference(
            w in proptest::collection::vec(-1.0f64..1.0, 3),
            v in proptest::collection::vec(-1.0f64..1.0, 3),
            u in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let b = gaussian_batch(8, 3, 1);
            let e1 = output_error(&w, &v, &b).unwrap();
            let wu: Vec<f64> = w.iter().zip(&u).map(|(a, c)| a + c).collect();
            let vu: Vec<f64> = v.iter().zip(&u).map(|(a, c)| a + c).collect();
            let e2 = output_error(&wu, &vu, &b).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-9 * (1.0 + e1));
        }
    }

    #[test]
    fn weight_on_full_range_grid_keeps_full_range() {
        let b = gaussian_batch(16, 4, 2);
        let w = [0.6, -0.6, 0.0, 0.2];
        // 0.2 = 0.6/3 sits on the 3-bit grid with K = 0.6
        let k = clip_search_weights(&[&w], &b, 3, 0.0).unwrap();
        assert_eq!(k, 0.6);
    }

    #[test]
    fn outlier_weights_prefer_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w: Vec<f64> = (0..64)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        w[3] = 2.0;
        let b = gaussian_batch(64, 64, 6);
        let k = clip_search_weights(&[&w], &b, 4, 0.0).unwrap();
        assert!(k < 2.0);
        let err = |k: f64| {
            let g = QuantGrid::new(4, k, 0.0).unwrap();
            output_error(&w, &naive_reconstruction(&w, &g), &b).unwrap()
        };
        assert!(err(k) < err(2.0));
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let b = gaussian_batch(4, 3, 2);
        assert_eq!(
            clip_search_weights(&[&[0.0; 3]], &b, 4, 0.0).unwrap(),
            DEGENERATE_SCALE
        );
        let g = QuantGrid::new(4, DEGENERATE_SCALE, 0.0).unwrap();
        let plan = plan_channel(
            0,
            &[0.0; 3],
            g,
            &b,
            &QuantConfig {
                epsilon: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(plan.scheme, Scheme::Naive);
        assert_eq!(plan.code.pairs()[0].codes.signed_codes(), vec![0, 0, 0]);
        assert_eq!(plan.achieved_error, 0.0);
    }

    #[test]
    fn activation_clip_examples() {
        let on_grid = batch(&[vec![0.0, 1.5], vec![-1.5, 0.5]]);
        assert_eq!(clip_search_activations(&on_grid, 3).unwrap(), 1.5);
        let constant = batch(&[vec![0.7; 3], vec![0.7; 3]]);
        assert_eq!(clip_search_activations(&constant, 4).unwrap(), 0.7);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..2048)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                if rng.random::<bool>() {
                    e
                } else {
                    -e
                }
            })
            .collect();
        let heavy = CalibrationBatch::new(Matrix::from_vec(256, 8, data).unwrap()).unwrap();
        let k = clip_search_activations(&heavy, 4).unwrap();
        assert!(k < heavy.samples().max_abs());
    }

    #[test]
    fn infinite_threshold_is_plain_rounding() {
        let b = gaussian_batch(32, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g = QuantGrid::new(2, 1.0, 0.0).unwrap();
        let plan = plan_channel(0, &w, g, &b, &QuantConfig::default()).unwrap();
        assert_eq!(plan.scheme, Scheme::Naive);
        assert_eq!(plan.n(), 1);
        let direct = g.round_vector(&w).unwrap().dequantize();
        assert_eq!(plan.reconstruct(), direct);
        plan.validate(&w, &b).unwrap();
    }

    #[test]
    fn only_non_representable_channel_escalates() {
        let b = gaussian_batch(32, 4, 8);
        let w =
            Matrix::from_rows(&[vec![0.5, -0.5, 0.0, 0.5], vec![0.5, -0.13, 0.31, 0.07]]).unwrap();
        let cfg = QuantConfig {
            weight_bits: 2,
            epsilon: 1e-12,
            clip_weights: false,
            ..Default::default()
        };
        let q = quantize_layer(&layer("toy", w.clone(), Some(b.clone())), &cfg).unwrap();
        assert_eq!(q.channels[0].scheme, Scheme::Naive);
        assert_eq!(q.channels[0].achieved_error, 0.0);
        assert_eq!(q.channels[1].scheme, Scheme::Multipoint);
        for (i, p) in q.channels.iter().enumerate() {
            p.validate(w.row(i), &b).unwrap();
            assert!(p.saturated || p.achieved_error < cfg.epsilon);
        }
    }

    #[test]
    fn finer_granularity_never_loses() {
        let b = gaussian_batch(64, 16, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..4 * 16)
            .map(|i| (1.0 + (i / 16) as f64) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w = Matrix::from_vec(4, 16, data).unwrap();
        let l = layer("g", w, Some(b));
        let total = |granularity| {
            let cfg = QuantConfig {
                granularity,
                ..Default::default()
            };
            quantize_layer(&l, &cfg)
                .unwrap()
                .channels
                .iter()
                .map(|p| p.achieved_error)
                .sum::<f64>()
        };
        assert!(total(Granularity::PerChannel) <= total(Granularity::PerLayer));
    }

    #[test]
    fn asymmetric_uses_midpoint_offset() {
        let b = gaussian_batch(8, 3, 1);
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let cfg = QuantConfig {
            symmetric: false,
            clip_weights: false,
            ..Default::default()
        };
        let q = quantize_layer(&layer("a", w, Some(b)), &cfg).unwrap();
        let g = q.channels[0].grid;
        assert_eq!((g.offset(), g.scale()), (2.0, 1.0));
        assert_eq!(q.channels[0].achieved_error, 0.0);
    }

    #[test]
    fn missing_calibration_names_layer() {
        let model = Model {
            layers: vec![layer("head", Matrix::zeros(2, 2), None)],
        };
        match quantize_network(&model, &QuantConfig::default()) {
            Err(Error::MissingCalibration(name)) => assert_eq!(name, "head"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn high_precision_layers_get_eight_bits() {
        let b = gaussian_batch(8, 4, 1);
        let cfg = QuantConfig {
            high_precision_layers: vec!["first".into()],
            ..Default::default()
        };
        let model = Model {
            layers: vec![
                layer(
                    "first",
                    Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap(),
                    Some(b.clone()),
                ),
                layer(
                    "mid",
                    Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap(),
                    Some(b),
                ),
            ],
        };
        let (q, _) = quantize_network(&model, &cfg).unwrap();
        assert_eq!(q.layers[0].channels[0].grid.bits(), 8);
        assert_eq!(q.layers[1].channels[0].grid.bits(), 4);
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::default().validate().is_ok());
        for bad in [
            QuantConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            QuantConfig {
                epsilon: f64::NAN,
                ..Default::default()
            },
            QuantConfig {
                max_pairs: 0,
                ..Default::default()
            },
            QuantConfig {
                precision: 0,
                ..Default::default()
            },
            QuantConfig {
                precision: 32,
                ..Default::default()
            },
            QuantConfig {
                weight_bits: 9,
                ..Default::default()
            },
            QuantConfig {
                max_step: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    /// Largest eigenvalue of the sample second-moment matrix by power iteration.
    fn second_moment_lambda_max(b: &CalibrationBatch) -> f64 {
        let d = b.dim();
        let mut m = vec![0.0; d * d];
        for x in b.samples().iter_rows() {
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] += x[i] * x[j] / b.len() as f64;
                }
            }
        }
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mv: Vec<f64> = (0..d).map(|i| dot(&m[i * d..(i + 1) * d], &v)).collect();
            let norm = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = mv.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    #[test]
    fn escalation_error_tracks_residual_bound() {
        let b = gaussian_batch(64, 12, 21);
        let lambda = second_moment_lambda_max(&b) * (1.0 + 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let w: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
            let l = layer(
                "x",
                Matrix::from_vec(1, 12, w.clone()).unwrap(),
                Some(b.clone()),
            );
            let cfg = QuantConfig {
                weight_bits: 2,
                ..Default::default()
            };
            let ladder = &build_ladders(&Model { layers: vec![l] }, &cfg).unwrap()[0][0];
            let g =
                QuantGrid::new(2, clip_search_weights(&[&w], &b, 2, 0.0).unwrap(), 0.0).unwrap();
            let (code, trace) =
                crate::multipoint::decompose(&w, g.to_unit(), cfg.decompose_params(g.scale()))
                    .unwrap();
            assert_eq!(code.len(), ladder.multipoint_errors.len());
            for (e, r) in ladder
                .multipoint_errors
                .iter()
                .zip(&trace.residual_norms[1..])
            {
                assert!(*e <= r * r * lambda + 1e-12);
            }
        }
    }

    #[test]
    fn ladder_choice_matches_direct_planning() {
        let b = gaussian_batch(32, 10, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data: Vec<f64> = (0..6 * 10)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let model = Model {
            layers: vec![layer("l", Matrix::from_vec(6, 10, data).unwrap(), Some(b))],
        };
        let base = QuantConfig {
            weight_bits: 3,
            max_pairs: 4,
            ..Default::default()
        };
        let ladders = build_ladders(&model, &base).unwrap();
        for p in epsilon_sweep(&ladders, 8) {
            let cfg = QuantConfig {
                epsilon: p.epsilon,
                ..base.clone()
            };
            let (q, s) = quantize_network(&model, &cfg).unwrap();
            assert_eq!(s.multipoint_channels, p.multipoint_channels);
            for (plan, ladder) in q.layers[0].channels.iter().zip(&ladders[0]) {
                let (scheme, n) = ladder.choice(p.epsilon);
                assert_eq!((plan.scheme, plan.n()), (scheme, n));
                assert_eq!(plan.achieved_error, ladder.error_at(p.epsilon));
            }
        }
    }

    #[test]
    fn parallel_and_sequential_plans_agree() {
        let b = gaussian_batch(32, 16, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..8 * 16)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let w = Matrix::from_vec(8, 16, data).unwrap();
        let cfg = QuantConfig {
            epsilon: 0.05,
            ..Default::default()
        };
        let l = layer("p", w.clone(), Some(b.clone()));
        let par = quantize_layer(&l, &cfg).unwrap();
        let grids = layer_grids(&w, &b, 4, &cfg).unwrap();
        let seq: Vec<ChannelPlan> = (0..8)
            .rev()
            .map(|i| plan_channel(i, w.row(i), grids[i], &b, &cfg).unwrap())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        assert_eq!(par.channels, seq);
    }
}
