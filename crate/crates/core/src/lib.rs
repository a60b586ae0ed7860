//! Multipoint post-training quantization.
//!
//! A weight channel `w` is approximated either by plain rounding onto a
//! low-bit uniform grid or by a short sum `Σ a_i · w̃_i` of real coefficients
//! times low-bit vectors, found greedily. Calibration data decides per channel
//! how many pairs are worth paying for.
//!
//! - [`quantgrid`]: uniform grids and nearest rounding.
//! - [`multipoint`]: greedy decomposition and the exhaustive small-vector oracle.
//! - [`netquant`]: output error, clipping search, per-channel escalation.
//! - [`intpipe`]: fixed-point coefficients and the integer MAC pipeline.
//! - [`costmodel`]: memory and operation counts.
//! - [`tensorio`]: model and artifact containers.
//! - [`convlab`]: convergence experiments.
//! - [`synth`]: seeded synthetic models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convlab;
pub mod costmodel;
pub mod error;
pub mod intpipe;
pub mod multipoint;
pub mod netquant;
pub mod quantgrid;
pub mod synth;
pub mod tensor;
pub mod tensorio;

pub use costmodel::{channel_cost, model_report, ChannelCost, CostReport};
pub use error::{Error, MacStep, Result};
pub use multipoint::{decompose, DecomposeParams, MultipointCode, Pair, StepPolicy};
pub use netquant::{quantize_network, ChannelPlan, Granularity, QuantConfig, Scheme};
pub use quantgrid::{QuantGrid, QuantizedVector};
pub use tensor::{CalibrationBatch, Matrix};
pub use tensorio::{load_model, load_quantized, save_model, save_quantized, Model, QuantizedModel};
