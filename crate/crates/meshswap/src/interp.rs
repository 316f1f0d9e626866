//! Cell-center query generation and multilinear interpolation within one
//! uniform-grid patch.
//!
//! The stencil is clamped at patch boundaries: queries between the patch edge
//! and the outermost cell centers use constant extrapolation, which keeps the
//! exchange self-contained per patch at the cost of a first-order band along
//! patch edges.

use crate::coords::reference_to_physical;
use crate::error::{Error, Result};
use crate::forest::{Patch, Tree};

/// Fractional position in a patch's cell-center index space, clamped to
/// `[0, cells - 1]` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchLocalCoord {
    pub frac: [f64; 3],
}

/// Physical cell-center points of a patch in row-major (x fastest) order.
/// Cell j along an axis has its center at (j + 0.5) / cells within the
/// patch's reference box.
pub fn cell_centers(patch: &Patch, tree: &Tree, dim: usize) -> Vec<[f64; 3]> {
    let b = patch.key.to_box(dim);
    let mut out = Vec::with_capacity(patch.cell_count());
    let mut idx = [0usize; 3];
    loop {
        let mut reference = [0.0; 3];
        for i in 0..dim {
            let frac = (idx[i] as f64 + 0.5) / patch.cells[i] as f64;
            reference[i] = b.lo[i] + frac * (b.hi[i] - b.lo[i]);
        }
        out.push(reference_to_physical(&reference, tree, dim));
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < patch.cells[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == dim {
                return out;
            }
        }
    }
}

/// Map a tree-reference point to the patch's cell-center index space.
/// The caller guarantees the point lies in the patch box (the search does
/// this); violations are reported, not silently clamped away.
pub fn locate_in_patch(point_ref: &[f64], patch: &Patch, dim: usize) -> Result<PatchLocalCoord> {
    let b = patch.key.to_box(dim);
    if !b.contains(dim, point_ref) {
        return Err(Error::NotOwningPatch {
            point: point_ref[..dim].to_vec(),
        });
    }
    let mut frac = [0.0; 3];
    for i in 0..dim {
        let cells = patch.cells[i] as f64;
        let rel = (point_ref[i] - b.lo[i]) / (b.hi[i] - b.lo[i]);
        frac[i] = (rel * cells - 0.5).clamp(0.0, cells - 1.0);
    }
    Ok(PatchLocalCoord { frac })
}

/// Bilinear (2D) / trilinear (3D) interpolation of the named fields at `c`.
/// Exact for fields multilinear in physical coordinates and for constants.
pub fn interpolate_multilinear(
    patch: &Patch,
    c: &PatchLocalCoord,
    field_names: &[String],
    dim: usize,
) -> Result<Vec<f64>> {
    let mut i0 = [0usize; 3];
    let mut w = [0.0f64; 3];
    for axis in 0..dim {
        let f = c.frac[axis];
        let base = (f.floor() as usize).min(patch.cells[axis] - 1);
        i0[axis] = base;
        w[axis] = f - base as f64;
    }
    let stride = [1, patch.cells[0], patch.cells[0] * patch.cells[1]];
    let mut out = Vec::with_capacity(field_names.len());
    for name in field_names {
        let values = patch.field(name)?;
        // Gather the 2^dim stencil corners, then reduce one axis at a time
        // with a + w * (b - a); that form preserves constants bit-exactly.
        let mut corners = [0.0f64; 8];
        for corner in 0..1usize << dim {
            let mut index = 0usize;
            for axis in 0..dim {
                let i = if corner >> axis & 1 == 1 {
                    (i0[axis] + 1).min(patch.cells[axis] - 1)
                } else {
                    i0[axis]
                };
                index += i * stride[axis];
            }
            corners[corner] = values[index];
        }
        let mut len = 1usize << dim;
        for axis in (0..dim).rev() {
            len /= 2;
            for j in 0..len {
                let a = corners[j];
                let b = corners[j + len];
                corners[j] = a + w[axis] * (b - a);
            }
        }
        out.push(corners[0]);
    }
    Ok(out)
}
