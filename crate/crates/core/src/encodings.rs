//! Fixed cosine time encoding and small vector helpers.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const DEFAULT_TIME_DIM: usize = 100;

/// `φ(Δt)_i = cos(Δt · ω_i)` with `ω_i = 10^(−2(i−1)/d_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    omega: Vec<f64>,
}

impl TimeEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            bail!(InvalidArgument, "time encoding dimension must be positive");
        }
        let omega = (0..dim).map(|i| 10f64.powf(-2.0 * i as f64 / dim as f64)).collect();
        Ok(Self { omega })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.omega
    }

    pub fn encode(&self, dt: f64) -> Result<Vec<f64>> {
        if !dt.is_finite() {
            bail!(InvalidArgument, "time delta must be finite, got {dt}");
        }
        if dt < 0.0 {
            bail!(InvalidArgument, "time delta must be non-negative, got {dt}");
        }
        Ok(self.omega.iter().map(|w| (dt * w).cos()).collect())
    }

    /// `φ(0)`, the all-ones query encoding.
    pub fn zero(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}

impl Default for TimeEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_TIME_DIM).unwrap()
    }
}

pub fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

/// Zero-pads or truncates to exactly `len` entries.
pub fn pad_or_truncate(x: &[f64], len: usize) -> Vec<f64> {
    let mut out = x[..x.len().min(len)].to_vec();
    out.resize(len, 0.0);
    out
}
