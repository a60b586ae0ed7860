//! Integer inference pipeline for multipoint channels.
//!
//! Coefficients are stored as `A_i = [2^p · a_i]` and the dot product
//! `Σ a_i w̃_iᵀx` is evaluated in three integer steps:
//!
//! 1. `s_i = w̃_iᵀx` for each pair in a 32-bit accumulator,
//! 2. `Σ A_i · s_i` (n multiplies, n − 1 adds) in 64 bits,
//! 3. division by `2^p` as an arithmetic right shift (rounds toward −∞).
//!
//! Every stage uses checked arithmetic; overflow is an error, never a wrap.
//! Codes are the signed grid codes, so the grid step `K · eps_b` belongs in
//! the coefficient and the offset `B` is handled outside this module.

use crate::error::{Error, MacStep, Result};
use crate::quantgrid::QuantGrid;
use crate::tensor::CalibrationBatch;
use crate::tensorio::QuantizedLayer;

pub const DEFAULT_PRECISION: u32 = 16;
pub const MAX_PRECISION: u32 = 31;
pub const MAX_ACTIVATION_BITS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointCoeff {
    pub value: i32,
    pub precision: u32,
}

impl FixedPointCoeff {
    pub fn to_f64(self) -> f64 {
        f64::from(self.value) / (1u64 << self.precision) as f64
    }
}

pub fn check_precision(p: u32) -> Result<()> {
    if !(1..=MAX_PRECISION).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "coefficient precision p must be in [1, {MAX_PRECISION}], got {p}"
        )));
    }
    Ok(())
}

/// `A = round(2^p · a)` with ties away from zero.
pub fn encode_coeff(a: f64, precision: u32) -> Result<FixedPointCoeff> {
    check_precision(precision)?;
    if !a.is_finite() {
        return Err(Error::CoefficientOverflow {
            value: a,
            precision,
        });
    }
    let scaled = (a * (1u64 << precision) as f64).round();
    if scaled < f64::from(i32::MIN) || scaled > f64::from(i32::MAX) {
        return Err(Error::CoefficientOverflow {
            value: a,
            precision,
        });
    }
    Ok(FixedPointCoeff {
        value: scaled as i32,
        precision,
    })
}

/// Signed `N`-bit activations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntActivation {
    values: Vec<i32>,
    bits: u32,
}

impl IntActivation {
    pub fn new(values: Vec<i32>, bits: u32) -> Result<Self> {
        if !(1..=MAX_ACTIVATION_BITS).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "activation bits must be in [1, {MAX_ACTIVATION_BITS}], got {bits}"
            )));
        }
        let lo = -(1i32 << (bits - 1));
        let hi = (1i32 << (bits - 1)) - 1;
        if let Some(pos) = values.iter().position(|v| !(lo..=hi).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "activation {} at {pos} outside the {bits}-bit signed range",
                values[pos]
            )));
        }
        Ok(IntActivation { values, bits })
    }

    /// Nearest-level codes of `x` on a zero-centred activation grid.
    pub fn quantize(x: &[f64], grid: &QuantGrid) -> Result<Self> {
        if grid.offset() != 0.0 {
            return Err(Error::InvalidGrid(
                "activation grid must be zero-centred".into(),
            ));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let values = x.iter().map(|&v| grid.nearest_code(v)).collect();
        Self::new(values, grid.bits())
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Step 1 for a single vector: `w̃ᵀx` in a checked 32-bit accumulator.
pub fn dot_naive_int(codes: &[i32], x: &IntActivation) -> Result<i32> {
    if codes.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: codes.len(),
        });
    }
    codes
        .iter()
        .zip(x.values())
        .try_fold(0i32, |acc, (&w, &v)| {
            w.checked_mul(v).and_then(|p| acc.checked_add(p))
        })
        .ok_or(Error::Overflow(MacStep::Accumulate))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacOutput {
    /// Step 1 results `s_i = w̃_iᵀx`.
    pub partials: Vec<i32>,
    /// Step 2 result `Σ A_i s_i`.
    pub accumulated: i64,
    /// Step 3 result `⌊Σ A_i s_i / 2^p⌋`.
    pub output: i64,
}

impl MacOutput {
    /// Worst-case gap between `output` and the exact `Σ a_i s_i`:
    /// coefficient rounding contributes `Σ |s_i| · 2^(−p−1)`, the final shift
    /// less than one unit.
    pub fn error_bound(&self, precision: u32) -> f64 {
        let scale = 0.5 / (1u64 << precision) as f64;
        self.partials
            .iter()
            .map(|&s| f64::from(s).abs() * scale)
            .sum::<f64>()
            + 1.0
    }
}

pub fn dot_multipoint_int(
    codes: &[Vec<i32>],
    x: &IntActivation,
    coeffs: &[FixedPointCoeff],
) -> Result<MacOutput> {
    if codes.len() != coeffs.len() {
        return Err(Error::DimensionMismatch {
            expected: codes.len(),
            actual: coeffs.len(),
        });
    }
    let precision = match coeffs.first() {
        Some(c) => c.precision,
        None => {
            return Ok(MacOutput {
                partials: Vec::new(),
                accumulated: 0,
                output: 0,
            })
        }
    };
    if coeffs.iter().any(|c| c.precision != precision) {
        return Err(Error::InvalidParameter(
            "all coefficients must share one precision".into(),
        ));
    }
    check_precision(precision)?;

    let partials = codes
        .iter()
        .map(|c| dot_naive_int(c, x))
        .collect::<Result<Vec<_>>>()?;
    let accumulated = partials
        .iter()
        .zip(coeffs)
        .try_fold(0i64, |acc, (&s, a)| {
            i64::from(a.value)
                .checked_mul(i64::from(s))
                .and_then(|p| acc.checked_add(p))
        })
        .ok_or(Error::Overflow(MacStep::Coefficient))?;
    Ok(MacOutput {
        partials,
        accumulated,
        output: accumulated >> precision,
    })
}

/// Integer-versus-float comparison over one layer's calibration batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyStats {
    pub channels: usize,
    pub evaluations: usize,
    pub max_deviation: f64,
    /// Largest `deviation / bound` seen.
    pub max_bound_fraction: f64,
    pub violations: usize,
}

impl VerifyStats {
    pub fn merge(&mut self, o: &VerifyStats) {
        self.channels += o.channels;
        self.evaluations += o.evaluations;
        self.max_deviation = self.max_deviation.max(o.max_deviation);
        self.max_bound_fraction = self.max_bound_fraction.max(o.max_bound_fraction);
        self.violations += o.violations;
    }
}

/// Runs every channel of `layer` through the integer pipeline at `precision`
/// on each calibration sample, quantized with the layer's activation grid,
/// and compares with `Σ a_i · deq(w̃_i)ᵀx` in floating point.
///
/// Both sides are in units of the activation step and exclude the offset
/// `B`. `multipoint_only` skips plainly rounded channels.
pub fn verify_layer(
    layer: &QuantizedLayer,
    batch: &CalibrationBatch,
    precision: u32,
    multipoint_only: bool,
) -> Result<VerifyStats> {
    check_precision(precision)?;
    let (act_bits, act_k) = layer.activation.ok_or_else(|| {
        Error::InvalidParameter(format!("layer `{}` has no activation grid", layer.name))
    })?;
    if batch.dim() != layer.in_features {
        return Err(Error::DimensionMismatch {
            expected: layer.in_features,
            actual: batch.dim(),
        });
    }
    let act_grid = QuantGrid::new(act_bits, act_k, 0.0)?;
    let inputs = batch
        .samples()
        .iter_rows()
        .map(|x| IntActivation::quantize(x, &act_grid))
        .collect::<Result<Vec<_>>>()?;

    let mut stats = VerifyStats::default();
    for plan in &layer.channels {
        if multipoint_only && plan.scheme == crate::netquant::Scheme::Naive {
            continue;
        }
        let eps = plan.code.grid().epsilon();
        let codes: Vec<Vec<i32>> = plan
            .code
            .pairs()
            .iter()
            .map(|p| p.codes.signed_codes())
            .collect();
        let levels: Vec<Vec<f64>> = plan
            .code
            .pairs()
            .iter()
            .map(|p| p.codes.dequantize())
            .collect();
        let coeffs = plan
            .code
            .pairs()
            .iter()
            .map(|p| encode_coeff(p.coeff * eps, precision))
            .collect::<Result<Vec<_>>>()?;
        stats.channels += 1;
        for x in &inputs {
            let out = dot_multipoint_int(&codes, x, &coeffs)?;
            let reference: f64 = plan
                .code
                .pairs()
                .iter()
                .zip(&levels)
                .map(|(p, z)| {
                    p.coeff
                        * z.iter()
                            .zip(x.values())
                            .map(|(l, &v)| l * f64::from(v))
                            .sum::<f64>()
                })
                .sum();
            let deviation = (out.output as f64 - reference).abs();
            let bound = out.error_bound(precision);
            // float evaluation of the reference carries its own rounding
            let slack = 1e-9 * (1.0 + reference.abs());
            if deviation > bound + slack {
                stats.violations += 1;
            }
            stats.evaluations += 1;
            stats.max_deviation = stats.max_deviation.max(deviation);
            stats.max_bound_fraction = stats.max_bound_fraction.max(deviation / bound);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{Signed, ToPrimitive};
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_coeff(0.75, 4).unwrap().value, 12);
        let third = encode_coeff(1.0 / 3.0, 4).unwrap();
        assert_eq!(third.value, 5);
        assert!((1.0 / 3.0 - third.to_f64()).abs() <= 1.0 / 32.0);
        assert!((1.0f64 / 3.0 - 5.0 / 16.0 - 1.0 / 48.0).abs() < 1e-15);
        assert_eq!(encode_coeff(0.0, 16).unwrap().value, 0);
        // ties away from zero
        assert_eq!(encode_coeff(0.5 / 16.0, 4).unwrap().value, 1);
        assert_eq!(encode_coeff(-0.5 / 16.0, 4).unwrap().value, -1);
    }

    #[test]
    fn encode_overflow_and_bad_precision() {
        assert!(matches!(
            encode_coeff(1.0, 31),
            Err(Error::CoefficientOverflow { .. })
        ));
        assert!(encode_coeff(-1.0, 31).is_ok());
        assert!(encode_coeff(40000.0, 16).is_err());
        assert!(encode_coeff(f64::NAN, 16).is_err());
        assert!(encode_coeff(1.0, 0).is_err());
        assert!(encode_coeff(1.0, 32).is_err());
    }

    #[test]
    fn identity_coefficient_reproduces_dot() {
        let x = IntActivation::new(vec![3, -4, 7, 1], 4).unwrap();
        let codes = vec![vec![1, -1, 0, 1]];
        let a = FixedPointCoeff {
            value: 1 << 8,
            precision: 8,
        };
        let out = dot_multipoint_int(&codes, &x, &[a]).unwrap();
        assert_eq!(out.output, 3 + 4 + 1);
        assert_eq!(out.output, i64::from(dot_naive_int(&codes[0], &x).unwrap()));
    }

    #[test]
    fn zero_activation_gives_zero() {
        let x = IntActivation::new(vec![0; 5], 8).unwrap();
        let codes = vec![vec![1, 2, 3, -3, 0], vec![-1; 5]];
        let coeffs = [
            encode_coeff(0.37, 12).unwrap(),
            encode_coeff(-1.5, 12).unwrap(),
        ];
        assert_eq!(dot_multipoint_int(&codes, &x, &coeffs).unwrap().output, 0);
    }

    #[test]
    fn naive_dot_examples() {
        let ones = IntActivation::new(vec![1; 5], 2).unwrap();
        assert_eq!(dot_naive_int(&[1; 5], &ones).unwrap(), 5);
        let x = IntActivation::new(vec![1, 1, -1, -1], 2).unwrap();
        assert_eq!(dot_naive_int(&[1, -1, 1, -1], &x).unwrap(), 0);
        assert!(dot_naive_int(&[1, 2], &x).is_err());
    }

    #[test]
    fn shift_rounds_toward_negative_infinity() {
        let x = IntActivation::new(vec![1], 2).unwrap();
        let out = dot_multipoint_int(
            &[vec![-1]],
            &x,
            &[FixedPointCoeff {
                value: 3,
                precision: 2,
            }],
        )
        .unwrap();
        assert_eq!(out.accumulated, -3);
        assert_eq!(out.output, -1);
    }

    #[test]
    fn accumulator_overflow_is_reported() {
        let big = (1 << 15) - 1;
        let x = IntActivation::new(vec![big; 4], 16).unwrap();
        let codes = vec![big; 4];
        assert!(matches!(
            dot_naive_int(&codes, &x),
            Err(Error::Overflow(MacStep::Accumulate))
        ));
    }

    #[test]
    fn activation_range_checked() {
        assert!(IntActivation::new(vec![8], 4).is_err());
        assert!(IntActivation::new(vec![-8, 7], 4).is_ok());
        assert!(IntActivation::new(vec![0], 0).is_err());
    }

    #[test]
    fn random_instance_against_big_integer_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: Vec<i32> = (0..8).map(|_| rng.random_range(-128..128)).collect();
            let w: Vec<i32> = (0..8).map(|_| rng.random_range(-7..=7)).collect();
            let exact: BigInt = w
                .iter()
                .zip(&x)
                .map(|(a, b)| BigInt::from(*a) * BigInt::from(*b))
                .sum();
            let got = dot_naive_int(&w, &IntActivation::new(x, 8).unwrap()).unwrap();
            assert_eq!(BigInt::from(got), exact);
        }
    }

    fn synthetic_layer(seed: u64, epsilon: f64) -> (QuantizedLayer, CalibrationBatch) {
        use crate::netquant::{quantize_layer, QuantConfig};
        use crate::synth::{synthetic_mlp, SynthSpec};
        let model = synthetic_mlp(&SynthSpec {
            widths: vec![16, 12],
            samples: 32,
            seed,
            ..Default::default()
        })
        .unwrap();
        let layer = &model.layers[0];
        let cfg = QuantConfig {
            epsilon,
            ..Default::default()
        };
        (
            quantize_layer(layer, &cfg).unwrap(),
            layer.calibration.clone().unwrap(),
        )
    }

    #[test]
    fn verify_within_bound_at_fine_and_coarse_precision() {
        let (layer, batch) = synthetic_layer(1, 1e-4);
        let fine = verify_layer(&layer, &batch, 16, true).unwrap();
        let coarse = verify_layer(&layer, &batch, 2, true).unwrap();
        assert!(fine.channels > 0);
        assert_eq!(fine.evaluations, fine.channels * 32);
        assert_eq!((fine.violations, coarse.violations), (0, 0));
        assert!(coarse.max_deviation > fine.max_deviation);
        let all = verify_layer(&layer, &batch, 16, false).unwrap();
        assert_eq!(all.channels, 12);
    }

    #[test]
    fn identity_coefficient_channel_is_exact() {
        use crate::multipoint::MultipointCode;
        use crate::netquant::{naive_code, ChannelPlan, Scheme};
        // K = 1 on the 2-bit grid makes a·eps_b = 1, i.e. A = 2^p
        let grid = QuantGrid::new(2, 1.0, 0.0).unwrap();
        let code: MultipointCode = naive_code(&[0.9, -0.2, 0.6, -1.0], &grid).unwrap();
        let layer = QuantizedLayer {
            name: "id".into(),
            in_features: 4,
            activation: Some((8, 2.0)),
            channels: vec![ChannelPlan {
                channel: 0,
                scheme: Scheme::Naive,
                grid,
                code,
                achieved_error: 0.0,
                saturated: false,
            }],
        };
        let batch = CalibrationBatch::new(
            crate::tensor::Matrix::from_rows(&[
                vec![0.3, -1.1, 2.0, 0.7],
                vec![-2.0, 0.01, 0.5, 1.9],
            ])
            .unwrap(),
        )
        .unwrap();
        let stats = verify_layer(&layer, &batch, 16, false).unwrap();
        assert_eq!(stats.max_deviation, 0.0);
        assert!(verify_layer(&layer, &batch, 16, true).unwrap().channels == 0);
    }

    proptest! {
        #[test]
        fn encode_error_within_half_ulp(a in -1000.0f64..1000.0, p in 1u32..=20) {
            let c = encode_coeff(a, p).unwrap();
            prop_assert!((a - c.to_f64()).abs() <= 0.5 / (1u64 << p) as f64 + 1e-12);
        }

        #[test]
        fn small_instance_within_bound(
            seed in any::<u64>(),
            a1 in -2.0f64..2.0,
            a2 in -2.0f64..2.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = 8;
            let x: Vec<i32> = (0..16).map(|_| rng.random_range(-8..8)).collect();
            let codes: Vec<Vec<i32>> = (0..2).map(|_| (0..16).map(|_| rng.random_range(-1..=1)).collect()).collect();
            let coeffs = [encode_coeff(a1, p).unwrap(), encode_coeff(a2, p).unwrap()];
            let act = IntActivation::new(x, 4).unwrap();
            let out = dot_multipoint_int(&codes, &act, &coeffs).unwrap();
            let exact = [a1, a2]
                .iter()
                .zip(&out.partials)
                .map(|(a, s)| BigRational::from_float(*a).unwrap() * BigRational::from_integer(BigInt::from(*s)))
                .fold(BigRational::from_integer(BigInt::from(0)), |acc, v| acc + v);
            let dev = (exact - BigRational::from_integer(BigInt::from(out.output))).abs();
            prop_assert!(dev.to_f64().unwrap() <= out.error_bound(p));
        }
    }
}
