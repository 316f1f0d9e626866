//! Morton keys for linear quadtrees (2D) and octrees (3D).
//!
//! A key identifies one octant by refinement level and integer coordinates.
//! The total order used throughout is the space-filling-curve order: keys are
//! compared by their first descendant at the maximum level, ties broken by the
//! smaller level first, so an ancestor sorts immediately before its subtree.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Maximum refinement level in 2D; two 29-bit coordinates interleave into 58
/// bits of a u64.
pub const L_MAX_2D: u8 = 29;
/// Maximum refinement level in 3D; three 19-bit coordinates interleave into 57
/// bits of a u64.
pub const L_MAX_3D: u8 = 19;

/// Maximum level for the given dimension.
pub fn max_level(dim: usize) -> u8 {
    match dim {
        2 => L_MAX_2D,
        3 => L_MAX_3D,
        _ => panic!("dimension must be 2 or 3, got {dim}"),
    }
}

/// One octant (3D) or quadrant (2D) of a tree.
///
/// Unused coordinate slots (z in 2D) stay zero so that keys of either
/// dimension share one representation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct MortonKey {
    level: u8,
    coords: [u32; 3],
}

impl MortonKey {
    /// The root octant of a tree.
    pub fn root() -> Self {
        MortonKey {
            level: 0,
            coords: [0, 0, 0],
        }
    }

    /// Encode a key from level and per-axis integer coordinates.
    pub fn encode(dim: usize, level: u8, coords: &[u32]) -> Result<Self> {
        if coords.len() != dim {
            return Err(Error::InvalidKey(format!(
                "expected {dim} coordinates, got {}",
                coords.len()
            )));
        }
        if level > max_level(dim) {
            return Err(Error::InvalidKey(format!(
                "level {level} exceeds maximum {}",
                max_level(dim)
            )));
        }
        let mut c = [0u32; 3];
        for (i, &x) in coords.iter().enumerate() {
            if u64::from(x) >= 1u64 << level {
                return Err(Error::InvalidKey(format!(
                    "coordinate {x} out of range for level {level}"
                )));
            }
            c[i] = x;
        }
        Ok(MortonKey { level, coords: c })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn coords(&self) -> [u32; 3] {
        self.coords
    }

    /// Morton code of this key's first descendant at the maximum level.
    /// Bit interleaving is x-fastest: the x bit is the least significant of
    /// each triple/pair.
    pub fn code(&self, dim: usize) -> u64 {
        let shift = u32::from(max_level(dim) - self.level);
        match dim {
            2 => {
                spread_2(u64::from(self.coords[0]) << shift)
                    | spread_2(u64::from(self.coords[1]) << shift) << 1
            }
            3 => {
                spread_3(u64::from(self.coords[0]) << shift)
                    | spread_3(u64::from(self.coords[1]) << shift) << 1
                    | spread_3(u64::from(self.coords[2]) << shift) << 2
            }
            _ => unreachable!(),
        }
    }

    /// Morton code of this key's last descendant at the maximum level.
    pub fn last_descendant_code(&self, dim: usize) -> u64 {
        let shift = u32::from(max_level(dim) - self.level) * dim as u32;
        self.code(dim) + ((1u64 << shift) - 1)
    }

    /// Space-filling-curve comparison. An ancestor orders before every proper
    /// descendant.
    pub fn compare(&self, other: &MortonKey, dim: usize) -> Ordering {
        self.code(dim)
            .cmp(&other.code(dim))
            .then(self.level.cmp(&other.level))
    }

    pub fn parent(&self) -> Result<MortonKey> {
        if self.level == 0 {
            return Err(Error::InvalidKey("root has no parent".into()));
        }
        Ok(MortonKey {
            level: self.level - 1,
            coords: [
                self.coords[0] >> 1,
                self.coords[1] >> 1,
                self.coords[2] >> 1,
            ],
        })
    }

    /// Child `i` in Morton order, `i < 2^dim`; bit j of `i` selects the upper
    /// half along axis j.
    pub fn child(&self, dim: usize, i: u32) -> Result<MortonKey> {
        if self.level >= max_level(dim) {
            return Err(Error::InvalidKey(format!(
                "cannot refine below level {}",
                max_level(dim)
            )));
        }
        if i >= 1 << dim {
            return Err(Error::InvalidKey(format!("child index {i} out of range")));
        }
        let mut coords = [0u32; 3];
        for axis in 0..dim {
            coords[axis] = (self.coords[axis] << 1) | ((i >> axis) & 1);
        }
        Ok(MortonKey {
            level: self.level + 1,
            coords,
        })
    }

    /// All `2^dim` children in Morton order.
    pub fn children(&self, dim: usize) -> Result<Vec<MortonKey>> {
        (0..1u32 << dim).map(|i| self.child(dim, i)).collect()
    }

    /// True iff `self`'s box contains `other`'s box (including equality).
    pub fn is_ancestor(&self, other: &MortonKey) -> bool {
        if self.level > other.level {
            return false;
        }
        let shift = other.level - self.level;
        (0..3).all(|i| other.coords[i] >> shift == self.coords[i])
    }

    /// Half-open axis-aligned box of this key in the tree's reference cube
    /// [0,1)^dim.
    pub fn to_box(&self, dim: usize) -> RefBox {
        let h = 0.5f64.powi(i32::from(self.level));
        let mut lo = [0.0; 3];
        let mut hi = [1.0; 3];
        for i in 0..dim {
            lo[i] = f64::from(self.coords[i]) * h;
            hi[i] = f64::from(self.coords[i] + 1) * h;
        }
        RefBox { lo, hi }
    }
}

/// Half-open axis-aligned box `[lo, hi)` in tree reference coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl RefBox {
    /// Membership under the half-open rule: the upper face counts as inside
    /// only where the box touches the tree boundary (`hi == 1`), so every
    /// in-domain point has exactly one owning box.
    pub fn contains(&self, dim: usize, p: &[f64]) -> bool {
        (0..dim).all(|i| {
            p[i] >= self.lo[i] && (p[i] < self.hi[i] || (self.hi[i] == 1.0 && p[i] == 1.0))
        })
    }

    pub fn measure(&self, dim: usize) -> f64 {
        (0..dim).map(|i| self.hi[i] - self.lo[i]).product()
    }
}

// Spread the low 32 bits of x so bit i lands at position 2i.
fn spread_2(mut x: u64) -> u64 {
    x &= 0xffff_ffff;
    x = (x | x << 16) & 0x0000_ffff_0000_ffff;
    x = (x | x << 8) & 0x00ff_00ff_00ff_00ff;
    x = (x | x << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    (x | x << 1) & 0x5555_5555_5555_5555
}

// Spread the low 21 bits of x so bit i lands at position 3i.
fn spread_3(mut x: u64) -> u64 {
    x &= 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    (x | x << 2) & 0x1249_2492_4924_9249
}
