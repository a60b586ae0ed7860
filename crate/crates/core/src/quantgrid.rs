//! Uniform b-bit quantization grid `Q = K * [-1 : eps_b : 1] + B`.
//!
//! The grid has `2^b - 1` levels, `eps_b = 1 / (2^(b-1) - 1)`, and is
//! symmetric about the offset `B`. Levels are addressed either by their
//! non-negative index `k in [0, 2^b - 2]` or by the signed code
//! `s = k - (2^(b-1) - 1)`, which is what the integer pipeline consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u32 = 2;
/// Codes are stored as signed bytes, so eight bits is the ceiling.
pub const MAX_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    bits: u32,
    scale: f64,
    offset: f64,
}

impl QuantGrid {
    pub fn new(bits: u32, scale: f64, offset: f64) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidGrid(format!(
                "bits must be in [{MIN_BITS}, {MAX_BITS}], got {bits}"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "scale must be finite and positive, got {scale}"
            )));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "offset must be finite, got {offset}"
            )));
        }
        Ok(QuantGrid {
            bits,
            scale,
            offset,
        })
    }

    /// The grid `[-1 : eps_b : 1]` (K = 1, B = 0).
    pub fn unit(bits: u32) -> Result<Self> {
        Self::new(bits, 1.0, 0.0)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Same bit width with K = 1, B = 0.
    pub fn to_unit(&self) -> Self {
        QuantGrid {
            bits: self.bits,
            scale: 1.0,
            offset: 0.0,
        }
    }

    /// `2^(b-1) - 1`: index of the center level and the largest signed code.
    pub fn half_levels(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / f64::from(self.half_levels())
    }

    pub fn level_count(&self) -> usize {
        (1usize << self.bits) - 1
    }

    /// Value of the level with signed code `s` (unchecked range).
    #[inline]
    pub fn signed_level(&self, s: i32) -> f64 {
        self.scale * (f64::from(s) / f64::from(self.half_levels())) + self.offset
    }

    pub fn level(&self, index: usize) -> Result<f64> {
        let s = self.signed_from_index(index as i64)?;
        Ok(self.signed_level(s))
    }

    pub fn levels(&self) -> Vec<f64> {
        let m = self.half_levels();
        (-m..=m).map(|s| self.signed_level(s)).collect()
    }

    pub fn signed_from_index(&self, index: i64) -> Result<i32> {
        if index < 0 || index >= self.level_count() as i64 {
            return Err(Error::IndexOutOfRange {
                index,
                bits: self.bits,
            });
        }
        Ok(index as i32 - self.half_levels())
    }

    /// Signed code of the nearest level; out-of-range inputs clip to the ends.
    /// Ties go to the level closer to the offset.
    #[inline]
    pub fn nearest_code(&self, t: f64) -> i32 {
        let m = self.half_levels();
        let mf = f64::from(m);
        let u = ((t - self.offset) / self.scale * mf).clamp(-mf - 2.0, mf + 2.0);
        let base = u.floor() as i32;
        let mut best = base.clamp(-m, m);
        let mut best_dist = (t - self.signed_level(best)).abs();
        for s in (base - 1)..=(base + 2) {
            let s = s.clamp(-m, m);
            if s == best {
                continue;
            }
            let dist = (t - self.signed_level(s)).abs();
            if dist < best_dist || (dist == best_dist && s.abs() < best.abs()) {
                best = s;
                best_dist = dist;
            }
        }
        best
    }

    /// Nearest grid level and its index.
    pub fn round_scalar(&self, t: f64) -> Result<(f64, usize)> {
        if !t.is_finite() {
            return Err(Error::NonFinite(0));
        }
        let s = self.nearest_code(t);
        Ok((self.signed_level(s), (s + self.half_levels()) as usize))
    }

    /// Elementwise nearest rounding. Higher-rank tensors are passed flattened.
    pub fn round_vector(&self, t: &[f64]) -> Result<QuantizedVector> {
        if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let m = self.half_levels();
        let indices = t
            .iter()
            .map(|&v| (self.nearest_code(v) + m) as u8)
            .collect();
        Ok(QuantizedVector {
            grid: *self,
            indices,
        })
    }
}

/// Grid-level indices for a vector, together with the grid they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVector {
    grid: QuantGrid,
    indices: Vec<u8>,
}

impl QuantizedVector {
    pub fn from_indices(grid: QuantGrid, indices: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = indices
            .iter()
            .find(|&&k| usize::from(k) >= grid.level_count())
        {
            return Err(Error::IndexOutOfRange {
                index: i64::from(bad),
                bits: grid.bits(),
            });
        }
        Ok(QuantizedVector { grid, indices })
    }

    /// Build from signed codes in `[-(2^(b-1)-1), 2^(b-1)-1]`.
    pub fn from_signed(grid: QuantGrid, codes: &[i32]) -> Result<Self> {
        let m = grid.half_levels();
        let indices = codes
            .iter()
            .map(|&s| {
                if s.abs() > m {
                    Err(Error::IndexOutOfRange {
                        index: i64::from(s) + i64::from(m),
                        bits: grid.bits(),
                    })
                } else {
                    Ok((s + m) as u8)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedVector { grid, indices })
    }

    pub fn grid(&self) -> &QuantGrid {
        &self.grid
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn signed_codes(&self) -> Vec<i32> {
        let m = self.grid.half_levels();
        self.indices.iter().map(|&k| i32::from(k) - m).collect()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let m = self.grid.half_levels();
        self.indices
            .iter()
            .map(|&k| self.grid.signed_level(i32::from(k) - m))
            .collect()
    }
}
