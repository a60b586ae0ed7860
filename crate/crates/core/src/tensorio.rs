//! On-disk containers.
//!
//! A model directory holds `manifest.json` plus one raw little-endian `f32`
//! file per layer weight (row-major, `out_channels × in_features`) and,
//! optionally, one per calibration batch (`calib_samples × in_features`).
//! Convolutions are stored pre-flattened: one kernel per row, with the
//! im2col patches as calibration samples.
//!
//! A quantized directory holds `qmanifest.json` and one `.codes` file per
//! layer. Each channel's pairs are written back to back as signed bytes
//! `s = k - (2^(b-1) - 1)` at the channel's `codes_offset`. Real numbers are
//! written as shortest round-trip decimal strings, so reloading is bit-exact.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intpipe::encode_coeff;
use crate::multipoint::{MultipointCode, Pair};
use crate::netquant::{ChannelPlan, Scheme};
use crate::quantgrid::{QuantGrid, QuantizedVector};
use crate::tensor::{CalibrationBatch, Matrix};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const QMANIFEST_FILE: &str = "qmanifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub in_features: usize,
    pub weight_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub version: u32,
    pub layers: Vec<LayerDecl>,
}

impl ModelManifest {
    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for l in &self.layers {
            if l.name.is_empty() {
                return Err(Error::Manifest("layer with empty name".into()));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(Error::DuplicateLayer(l.name.clone()));
            }
            if l.out_channels == 0 || l.in_features == 0 {
                return Err(Error::Manifest(format!(
                    "layer `{}`: out_channels and in_features must be positive",
                    l.name
                )));
            }
            match (&l.calib_file, l.calib_samples) {
                (Some(_), None) => {
                    return Err(Error::Manifest(format!(
                        "layer `{}`: calib_file given without calib_samples",
                        l.name
                    )))
                }
                (_, Some(0)) => {
                    return Err(Error::Manifest(format!(
                        "layer `{}`: calib_samples must be positive",
                        l.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub decl: LayerDecl,
    pub weights: Matrix,
    pub calibration: Option<CalibrationBatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            version: FORMAT_VERSION,
            layers: self.layers.iter().map(|l| l.decl.clone()).collect(),
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.decl.name == name)
    }
}

fn read_f32_file(
    path: &Path,
    layer: &str,
    field: &'static str,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            layer: layer.to_string(),
            field,
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 4 * (rows * cols) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            layer: layer.to_string(),
            field,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                layer: layer.to_string(),
                field,
                index,
            });
        }
        data.push(f64::from(v));
    }
    Matrix::from_vec(rows, cols, data)
}

fn write_f32_file(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * m.as_slice().len());
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load `manifest.json` and every weight and calibration file it names.
///
/// Calibration paths resolve against `calib_dir` when given, otherwise
/// against `dir`.
pub fn load_model(dir: &Path, calib_dir: Option<&Path>) -> Result<Model> {
    let manifest: ModelManifest = read_json(&dir.join(MANIFEST_FILE))?;
    manifest.validate()?;
    let calib_root = calib_dir.unwrap_or(dir);
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for decl in manifest.layers {
        let weights = read_f32_file(
            &dir.join(&decl.weight_file),
            &decl.name,
            "weight_file",
            decl.out_channels,
            decl.in_features,
        )?;
        let calibration = match (&decl.calib_file, decl.calib_samples) {
            (Some(file), Some(n)) => {
                let m = read_f32_file(
                    &calib_root.join(file),
                    &decl.name,
                    "calib_file",
                    n,
                    decl.in_features,
                )?;
                Some(CalibrationBatch::new(m)?)
            }
            _ => None,
        };
        layers.push(Layer {
            decl,
            weights,
            calibration,
        });
    }
    Ok(Model { layers })
}

/// Write a model directory. Weights and calibration samples are narrowed to `f32`.
pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    let manifest = model.manifest();
    manifest.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for layer in &model.layers {
        let d = &layer.decl;
        if layer.weights.rows() != d.out_channels || layer.weights.cols() != d.in_features {
            return Err(Error::Manifest(format!(
                "layer `{}`: weight matrix is {}×{}, declared {}×{}",
                d.name,
                layer.weights.rows(),
                layer.weights.cols(),
                d.out_channels,
                d.in_features
            )));
        }
        write_f32_file(&dir.join(&d.weight_file), &layer.weights)?;
        match (&layer.calibration, &d.calib_file) {
            (Some(c), Some(file)) => {
                if Some(c.len()) != d.calib_samples || c.dim() != d.in_features {
                    return Err(Error::Manifest(format!(
                        "layer `{}`: calibration batch does not match calib_samples/in_features",
                        d.name
                    )));
                }
                write_f32_file(&dir.join(file), c.samples())?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::Manifest(format!(
                    "layer `{}`: calibration data and calib_file must be given together",
                    d.name
                )))
            }
        }
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// One quantized layer: a plan per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub name: String,
    pub in_features: usize,
    /// Activation bit width and clipping factor, when activations were calibrated.
    pub activation: Option<(u32, f64)>,
    pub channels: Vec<ChannelPlan>,
}

impl QuantizedLayer {
    pub fn out_channels(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    /// Shared fixed-point precision of the stored integer coefficients.
    pub precision: u32,
    pub layers: Vec<QuantizedLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QManifestFile {
    version: u32,
    p: u32,
    layers: Vec<QLayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QLayerEntry {
    name: String,
    in_features: usize,
    out_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    act_bits: Option<u32>,
    #[serde(rename = "act_K", default, skip_serializing_if = "Option::is_none")]
    act_k: Option<String>,
    channels: Vec<QChannelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QChannelEntry {
    channel: usize,
    scheme: Scheme,
    bits: u32,
    #[serde(rename = "K")]
    k: String,
    #[serde(rename = "B")]
    b: String,
    n: usize,
    p: u32,
    /// Fixed-point `A_i = [2^p · a_i · eps_b]`, the multiplier of the integer code dot product.
    coeffs: Vec<i64>,
    /// Real coefficients `a_i` of the unit-grid pairs.
    a: Vec<String>,
    codes_file: String,
    codes_offset: u64,
    error: String,
    saturated: bool,
}

fn f64_str(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Manifest(format!("{what}: `{s}` is not a decimal number")))
}

/// Integer coefficients `A_i` for a code: the fixed-point multipliers of `s_iᵀx`.
pub fn integer_coeffs(code: &MultipointCode, precision: u32) -> Result<Vec<i64>> {
    let eps = code.grid().epsilon();
    code.pairs()
        .iter()
        .map(|p| encode_coeff(p.coeff * eps, precision).map(|c| i64::from(c.value)))
        .collect()
}

fn codes_file_name(index: usize) -> String {
    format!("layer{index:04}.codes")
}

/// Write `qmanifest.json` and the per-layer code files into `dir`.
pub fn save_quantized(dir: &Path, model: &QuantizedModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate() {
        let codes_file = codes_file_name(li);
        let mut bytes: Vec<u8> = Vec::new();
        let mut channels = Vec::with_capacity(layer.channels.len());
        for plan in &layer.channels {
            if plan.code.dim() != layer.in_features {
                return Err(Error::DimensionMismatch {
                    expected: layer.in_features,
                    actual: plan.code.dim(),
                });
            }
            let offset = bytes.len() as u64;
            for pair in plan.code.pairs() {
                bytes.extend(pair.codes.signed_codes().iter().map(|&s| s as i8 as u8));
            }
            channels.push(QChannelEntry {
                channel: plan.channel,
                scheme: plan.scheme,
                bits: plan.grid.bits(),
                k: f64_str(plan.grid.scale()),
                b: f64_str(plan.grid.offset()),
                n: plan.n(),
                p: model.precision,
                coeffs: integer_coeffs(&plan.code, model.precision)?,
                a: plan.code.pairs().iter().map(|p| f64_str(p.coeff)).collect(),
                codes_file: codes_file.clone(),
                codes_offset: offset,
                error: f64_str(plan.achieved_error),
                saturated: plan.saturated,
            });
        }
        let path = dir.join(&codes_file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        layers.push(QLayerEntry {
            name: layer.name.clone(),
            in_features: layer.in_features,
            out_channels: layer.channels.len(),
            act_bits: layer.activation.map(|(b, _)| b),
            act_k: layer.activation.map(|(_, k)| f64_str(k)),
            channels,
        });
    }
    let file = QManifestFile {
        version: FORMAT_VERSION,
        p: model.precision,
        layers,
    };
    write_json(&dir.join(QMANIFEST_FILE), &file)
}

/// Read a quantized directory written by [`save_quantized`].
pub fn load_quantized(dir: &Path) -> Result<QuantizedModel> {
    let file: QManifestFile = read_json(&dir.join(QMANIFEST_FILE))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported qmanifest version {}",
            file.version
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    let mut names = HashSet::new();
    for entry in file.layers {
        if !names.insert(entry.name.clone()) {
            return Err(Error::DuplicateLayer(entry.name));
        }
        if entry.channels.len() != entry.out_channels {
            return Err(Error::Manifest(format!(
                "layer `{}`: {} channel entries for out_channels = {}",
                entry.name,
                entry.channels.len(),
                entry.out_channels
            )));
        }
        let activation = match (entry.act_bits, &entry.act_k) {
            (Some(b), Some(k)) => Some((b, parse_f64(k, "act_K")?)),
            (None, None) => None,
            _ => {
                return Err(Error::Manifest(format!(
                    "layer `{}`: act_bits and act_K must be given together",
                    entry.name
                )))
            }
        };
        let mut cache: Option<(String, Vec<u8>)> = None;
        let mut channels = Vec::with_capacity(entry.channels.len());
        for ch in &entry.channels {
            let bytes = match &cache {
                Some((name, b)) if name == &ch.codes_file => b,
                _ => {
                    let path = dir.join(&ch.codes_file);
                    if !path.is_file() {
                        return Err(Error::MissingFile {
                            layer: entry.name.clone(),
                            field: "codes_file",
                            path,
                        });
                    }
                    let b = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    &cache.insert((ch.codes_file.clone(), b)).1
                }
            };
            channels.push(decode_channel(&entry.name, entry.in_features, ch, bytes)?);
        }
        layers.push(QuantizedLayer {
            name: entry.name,
            in_features: entry.in_features,
            activation,
            channels,
        });
    }
    Ok(QuantizedModel {
        precision: file.p,
        layers,
    })
}

fn decode_channel(layer: &str, d: usize, ch: &QChannelEntry, bytes: &[u8]) -> Result<ChannelPlan> {
    let ctx =
        |msg: String| Error::Manifest(format!("layer `{layer}`, channel {}: {msg}", ch.channel));
    if ch.a.len() != ch.n || ch.coeffs.len() != ch.n {
        return Err(ctx(format!(
            "n = {} but {} coefficients and {} integer coefficients",
            ch.n,
            ch.a.len(),
            ch.coeffs.len()
        )));
    }
    let grid = QuantGrid::new(ch.bits, parse_f64(&ch.k, "K")?, parse_f64(&ch.b, "B")?)?;
    let unit = grid.to_unit();
    let start = ch.codes_offset as usize;
    let end = start + ch.n * d;
    if end > bytes.len() {
        return Err(Error::SizeMismatch {
            layer: layer.to_string(),
            field: "codes_file",
            expected: end as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut pairs = Vec::with_capacity(ch.n);
    for (i, a) in ch.a.iter().enumerate() {
        let raw = &bytes[start + i * d..start + (i + 1) * d];
        let signed: Vec<i32> = raw.iter().map(|&b| i32::from(b as i8)).collect();
        pairs.push(Pair {
            coeff: parse_f64(a, "a")?,
            codes: QuantizedVector::from_signed(unit, &signed)?,
        });
    }
    let code = MultipointCode::new(unit, d, pairs)?;
    let expected = integer_coeffs(&code, ch.p)?;
    if expected != ch.coeffs {
        return Err(ctx("integer coefficients disagree with a and p".into()));
    }
    Ok(ChannelPlan {
        channel: ch.channel,
        scheme: ch.scheme,
        grid,
        code,
        achieved_error: parse_f64(&ch.error, "error")?,
        saturated: ch.saturated,
    })
}

/// Path of the model manifest inside `dir`.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
