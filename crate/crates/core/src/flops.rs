//! Arithmetic-operation accounting.
//!
//! `+ − × ÷ exp sqrt` each count as one operation. Comparisons, `min`/`max`
//! selections and memory traffic are free. Counts are attached to the
//! formulas at the call sites, so a field interaction has a fixed cost
//! independent of which branch of the piecewise field is taken.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

/// Predicted obstacle position at horizon step `k` (`t = k·dt`, two fused
/// multiply-adds).
pub const PREDICT_POSITION: u64 = 5;
/// Euclidean distance in the plane: two differences, two squares, one sum, one sqrt.
pub const DISTANCE: u64 = 6;
/// `1/max(d, ε) − 1/d_safe`.
pub const RPF_VALUE: u64 = 3;
/// Scaling by `η·α` and accumulation into the field sum.
pub const WEIGHTED_ACCUMULATE: u64 = 3;
/// `−1/d²` chain rule onto `(dx, dy)/d`, scaled and accumulated.
pub const RPF_GRADIENT: u64 = 9;
/// Sigmoid evolution factor `1 + λ/(1 + e^{−(d̄−d)/d_safe})`.
pub const EVOLUTION_FACTOR: u64 = 6;
/// Mean of the history window after a push (running sum update and divide).
pub const HISTORY_MEAN: u64 = 3;
/// TTC, both semi-axes with caps, ERF and the exponential risk metric.
pub const ELLIPSE: u64 = 24;

/// One field interaction: a single (state, obstacle) value-and-gradient evaluation.
pub const INTERACTION: u64 =
    PREDICT_POSITION + DISTANCE + RPF_VALUE + WEIGHTED_ACCUMULATE + RPF_GRADIENT;

/// Interior-mutable counter so pure evaluation routines can take `&FlopCounter`.
#[derive(Debug, Default)]
pub struct FlopCounter {
    flops: Cell<u64>,
    interactions: Cell<u64>,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.flops.set(self.flops.get() + n);
    }

    pub fn add_interactions(&self, n: u64) {
        self.interactions.set(self.interactions.get() + n);
        self.add(n * INTERACTION);
    }

    pub fn snapshot(&self) -> FlopSnapshot {
        FlopSnapshot {
            flops: self.flops.get(),
            interactions: self.interactions.get(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSnapshot {
    pub flops: u64,
    pub interactions: u64,
}

impl FlopSnapshot {
    pub fn since(self, earlier: FlopSnapshot) -> FlopSnapshot {
        FlopSnapshot {
            flops: self.flops - earlier.flops,
            interactions: self.interactions - earlier.interactions,
        }
    }
}
