//! Seeded synthetic MLPs for experiments and tests.
//!
//! Weights are Gaussian with standard deviation `1/√in`. Optional outlier
//! channels get one weight inflated by `outlier_scale`. Calibration inputs of
//! the first layer are standard normal; every later layer sees the ReLU of the
//! previous layer's full-precision output.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{CalibrationBatch, Matrix};
use crate::tensorio::{Layer, LayerDecl, LayerKind, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    pub samples: usize,
    /// Outlier channels per layer.
    pub outlier_channels: usize,
    pub outlier_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            widths: vec![64, 64, 32],
            samples: 256,
            outlier_channels: 0,
            outlier_scale: 8.0,
            seed: 0,
        }
    }
}

pub fn layer_name(i: usize) -> String {
    format!("fc{}", i + 1)
}

pub fn synthetic_mlp(spec: &SynthSpec) -> Result<Model> {
    if spec.widths.len() < 2 || spec.widths.contains(&0) {
        return Err(Error::InvalidParameter(
            "need an input width and at least one positive layer width".into(),
        ));
    }
    if spec.samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if !(spec.outlier_scale.is_finite() && spec.outlier_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "outlier scale must be finite and positive, got {}",
            spec.outlier_scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    };

    let mut inputs = Matrix::from_vec(
        spec.samples,
        spec.widths[0],
        normal(spec.samples * spec.widths[0], &mut rng),
    )?;
    let mut layers = Vec::new();
    for (i, pair) in spec.widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let std = 1.0 / (fan_in as f64).sqrt();
        let data = normal(fan_in * fan_out, &mut rng)
            .into_iter()
            .map(|v| v * std)
            .collect();
        let mut weights = Matrix::from_vec(fan_out, fan_in, data)?;
        let outliers = spec.outlier_channels.min(fan_out);
        for ch in sample(&mut rng, fan_out, outliers) {
            let j = rng.random_range(0..fan_in);
            let sign = if weights.row(ch)[j] < 0.0 { -1.0 } else { 1.0 };
            weights.row_mut(ch)[j] = sign * spec.outlier_scale * 3.0 * std;
        }
        let outputs = inputs.matmul_transposed(&weights)?;
        let name = layer_name(i);
        layers.push(Layer {
            decl: LayerDecl {
                name: name.clone(),
                kind: LayerKind::Linear,
                out_channels: fan_out,
                in_features: fan_in,
                weight_file: format!("{name}.weight.bin"),
                calib_file: Some(format!("{name}.calib.bin")),
                calib_samples: Some(spec.samples),
            },
            weights,
            calibration: Some(CalibrationBatch::new(inputs)?),
        });
        let relu = outputs.as_slice().iter().map(|v| v.max(0.0)).collect();
        inputs = Matrix::from_vec(outputs.rows(), outputs.cols(), relu)?;
    }
    Ok(Model { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let spec = SynthSpec {
            widths: vec![8, 6, 4],
            samples: 10,
            outlier_channels: 1,
            ..Default::default()
        };
        let m = synthetic_mlp(&spec).unwrap();
        assert_eq!(m.layers.len(), 2);
        assert_eq!(
            (m.layers[1].weights.rows(), m.layers[1].weights.cols()),
            (4, 6)
        );
        let c = m.layers[1].calibration.as_ref().unwrap();
        assert_eq!((c.len(), c.dim()), (10, 6));
        assert!(c.samples().as_slice().iter().all(|&v| v >= 0.0));
        assert_eq!(m, synthetic_mlp(&spec).unwrap());
        m.manifest().validate().unwrap();
    }

    #[test]
    fn second_layer_sees_first_layer_output() {
        let m = synthetic_mlp(&SynthSpec {
            widths: vec![3, 2, 1],
            samples: 4,
            ..Default::default()
        })
        .unwrap();
        let x = m.layers[0].calibration.as_ref().unwrap().samples();
        let y = x.matmul_transposed(&m.layers[0].weights).unwrap();
        let next = m.layers[1].calibration.as_ref().unwrap().samples();
        for (a, b) in y.as_slice().iter().zip(next.as_slice()) {
            assert_eq!(a.max(0.0), *b);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec {
                widths: vec![4],
                ..Default::default()
            },
            SynthSpec {
                widths: vec![4, 0],
                ..Default::default()
            },
            SynthSpec {
                samples: 0,
                ..Default::default()
            },
        ] {
            assert!(synthetic_mlp(&spec).is_err());
        }
    }
}
