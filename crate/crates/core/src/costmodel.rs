//! Memory and binary-operation counts for quantized layers.
//!
//! One channel of dimension `d` with `N`-bit weights and activations:
//!
//! | scheme     | memory (bits) | MUL binops        | ADD binops                |
//! |------------|---------------|-------------------|---------------------------|
//! | naive      | `dN`          | `dN²`             | `(d−1)N`                  |
//! | multipoint | `ndN + 32n`   | `n(dN² + 32²)`    | `n(d−1)N + 32(n−1)`       |
//!
//! An `m × n`-bit multiply costs `mn` binops and one OP is 64 binops. With
//! different weight and activation widths, multiplies cost `d·N_w·N_a` and
//! adds run at `max(N_w, N_a)` bits. Only multiplies are counted as OPs.

use std::fmt::{self, Write as _};

use crate::netquant::Scheme;
use crate::tensorio::QuantizedModel;

/// Binary operations per OP.
pub const BINOPS_PER_OP: u64 = 64;
/// Bit width of a stored fixed-point coefficient.
pub const COEFF_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelCost {
    pub memory_bits: u64,
    pub mul_binops: u64,
    pub add_binops: u64,
}

impl ChannelCost {
    pub fn ops(&self) -> f64 {
        binops_to_ops(self.mul_binops)
    }
}

impl std::ops::Add for ChannelCost {
    type Output = ChannelCost;

    fn add(self, o: ChannelCost) -> ChannelCost {
        ChannelCost {
            memory_bits: self.memory_bits + o.memory_bits,
            mul_binops: self.mul_binops + o.mul_binops,
            add_binops: self.add_binops + o.add_binops,
        }
    }
}

impl std::iter::Sum for ChannelCost {
    fn sum<I: Iterator<Item = ChannelCost>>(iter: I) -> Self {
        iter.fold(ChannelCost::default(), |a, b| a + b)
    }
}

pub fn binops_to_ops(binops: u64) -> f64 {
    binops as f64 / BINOPS_PER_OP as f64
}

/// OPs of one `m × n`-bit multiplication.
pub fn multiply_ops(m_bits: u32, n_bits: u32) -> f64 {
    binops_to_ops(u64::from(m_bits) * u64::from(n_bits))
}

/// Cost with a single bit width for weights and activations.
pub fn channel_cost(dim: usize, bits: u32, scheme: Scheme, n: usize) -> ChannelCost {
    channel_cost_mixed(dim, bits, bits, scheme, n)
}

pub fn channel_cost_mixed(
    dim: usize,
    weight_bits: u32,
    activation_bits: u32,
    scheme: Scheme,
    n: usize,
) -> ChannelCost {
    let d = dim as u64;
    let (w, a) = (u64::from(weight_bits), u64::from(activation_bits));
    let add_bits = w.max(a);
    let single = ChannelCost {
        memory_bits: d * w,
        mul_binops: d * w * a,
        add_binops: d.saturating_sub(1) * add_bits,
    };
    match scheme {
        Scheme::Naive => single,
        Scheme::Multipoint => {
            let n = n as u64;
            ChannelCost {
                memory_bits: n * single.memory_bits + COEFF_BITS * n,
                mul_binops: n * (single.mul_binops + COEFF_BITS * COEFF_BITS),
                add_binops: n * single.add_binops + COEFF_BITS * n.saturating_sub(1),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub channels: usize,
    pub multipoint_channels: usize,
    pub total: ChannelCost,
    /// Same layer with every channel plainly rounded.
    pub naive: ChannelCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub activation_bits: u32,
    pub layers: Vec<LayerCost>,
    /// Layers present in the model but left out of the totals.
    pub excluded: Vec<String>,
}

impl CostReport {
    pub fn total(&self) -> ChannelCost {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn naive_total(&self) -> ChannelCost {
        self.layers.iter().map(|l| l.naive).sum()
    }

    /// Multipoint OPs relative to plain rounding of the same layers.
    pub fn op_ratio(&self) -> f64 {
        let naive = self.naive_total().ops();
        if naive == 0.0 {
            1.0
        } else {
            self.total().ops() / naive
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,channels,multipoint_channels,memory_mb,ops,naive_ops\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                l.name,
                l.channels,
                l.multipoint_channels,
                bits_to_mb(l.total.memory_bits),
                l.total.ops(),
                l.naive.ops()
            );
        }
        out
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>8} {:>6} {:>12} {:>12}",
            "layer", "channels", "multi", "memory", "OPs"
        )?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<20} {:>8} {:>6} {:>12} {:>12}",
                l.name,
                l.channels,
                l.multipoint_channels,
                format_mb(l.total.memory_bits),
                format_ops(l.total.ops())
            )?;
        }
        let t = self.total();
        writeln!(
            f,
            "total: {} memory, {} OPs ({} naive, ratio {:.4})",
            format_mb(t.memory_bits),
            format_ops(t.ops()),
            format_ops(self.naive_total().ops()),
            self.op_ratio()
        )?;
        if !self.excluded.is_empty() {
            writeln!(f, "excluded: {}", self.excluded.join(", "))?;
        }
        Ok(())
    }
}

pub fn bits_to_mb(bits: u64) -> f64 {
    bits as f64 / 8.0 / (1u64 << 20) as f64
}

pub fn format_mb(bits: u64) -> String {
    format!("{:.6}MB", bits_to_mb(bits))
}

/// `M = 10⁶`, `G = 10⁹`.
pub fn format_ops(ops: f64) -> String {
    if ops >= 1e9 {
        format!("{:.3}G", ops / 1e9)
    } else if ops >= 1e6 {
        format!("{:.3}M", ops / 1e6)
    } else {
        format!("{ops:.1}")
    }
}

/// Costs of a quantized model. Layers named in `exclude` are skipped.
pub fn model_report(
    model: &QuantizedModel,
    activation_bits: u32,
    exclude: &[String],
) -> CostReport {
    let mut layers = Vec::new();
    let mut excluded = Vec::new();
    for layer in &model.layers {
        if exclude.iter().any(|e| e == &layer.name) {
            excluded.push(layer.name.clone());
            continue;
        }
        let a_bits = layer.activation.map_or(activation_bits, |(b, _)| b);
        let mut total = ChannelCost::default();
        let mut naive = ChannelCost::default();
        let mut multi = 0;
        for plan in &layer.channels {
            let bits = plan.grid.bits();
            total =
                total + channel_cost_mixed(layer.in_features, bits, a_bits, plan.scheme, plan.n());
            naive = naive + channel_cost_mixed(layer.in_features, bits, a_bits, Scheme::Naive, 1);
            multi += usize::from(plan.scheme == Scheme::Multipoint);
        }
        layers.push(LayerCost {
            name: layer.name.clone(),
            channels: layer.channels.len(),
            multipoint_channels: multi,
            total,
            naive,
        });
    }
    CostReport {
        activation_bits,
        layers,
        excluded,
    }
}
