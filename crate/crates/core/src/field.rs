//! Displacement-field algebra: backward warping, composition, inversion and resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{add3, map_voxels, norm3, DisplacementField, GridMeta, ScalarVolume, Vec3};

/// Default stopping tolerance for [`invert_field`] (mm).
pub const INVERT_TOL: f64 = 0.01;
/// Default iteration cap for [`invert_field`].
pub const INVERT_MAX_ITER: usize = 50;

/// Trilinear sample of `vol` at world point `p` (clamp-to-edge outside the grid).
pub fn sample_trilinear(vol: &ScalarVolume, p: &Vec3) -> f64 {
    vol.sample(p)
}

/// Backward warp: `out(x) = img(x + u(x))`.
pub fn warp_image(img: &ScalarVolume, field: &DisplacementField) -> Result<ScalarVolume> {
    img.meta.ensure_same(&field.meta, "warp_image")?;
    let values = map_voxels(&img.meta, |idx, x| img.sample(&add3(&x, &field.u[idx])));
    Ok(ScalarVolume {
        meta: img.meta.clone(),
        values,
    })
}

/// `outer ∘ inner`: `u(x) = u_inner(x) + u_outer(x + u_inner(x))`.
pub fn compose_fields(
    outer: &DisplacementField,
    inner: &DisplacementField,
) -> Result<DisplacementField> {
    outer.meta.ensure_same(&inner.meta, "compose_fields")?;
    let u = map_voxels(&inner.meta, |idx, x| {
        let b = inner.u[idx];
        add3(&b, &outer.sample(&add3(&x, &b)))
    });
    Ok(DisplacementField {
        meta: inner.meta.clone(),
        u,
    })
}

/// Result of a fixed-point field inversion.
#[derive(Debug, Clone)]
pub struct FieldInverse {
    pub field: DisplacementField,
    /// `‖field ∘ inverse − id‖_∞` in mm.
    pub residual: f64,
    pub iterations: usize,
}

/// Inverts `field` by the fixed-point iteration `v ← −u ∘ (id + v)` starting from `v = 0`.
///
/// Stops once the largest voxel update falls below `tol`. Fails with
/// [`Error::NonConvergence`] when the final composition residual exceeds `10 * tol`.
pub fn invert_field(field: &DisplacementField, tol: f64, max_iter: usize) -> Result<FieldInverse> {
    let meta = &field.meta;
    let mut v = DisplacementField::identity(meta.clone());
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let next: Vec<(Vec3, f64)> = map_voxels(meta, |idx, x| {
            let s = field.sample(&add3(&x, &v.u[idx]));
            let nv = [-s[0], -s[1], -s[2]];
            let d = [nv[0] - v.u[idx][0], nv[1] - v.u[idx][1], nv[2] - v.u[idx][2]];
            (nv, norm3(&d))
        });
        let mut max_update: f64 = 0.0;
        for (dst, (nv, d)) in v.u.iter_mut().zip(next) {
            *dst = nv;
            max_update = max_update.max(d);
        }
        if max_update < tol {
            break;
        }
    }
    let residual = compose_fields(field, &v)?.max_norm();
    if residual > 10.0 * tol {
        return Err(Error::NonConvergence {
            residual,
            tol,
            iterations,
        });
    }
    Ok(FieldInverse {
        field: v,
        residual,
        iterations,
    })
}

/// Resamples `vol` onto an arbitrary grid by trilinear sampling at the target's voxel centres.
pub fn resample_volume_onto(vol: &ScalarVolume, target: &GridMeta) -> ScalarVolume {
    if &vol.meta == target {
        return vol.clone();
    }
    ScalarVolume {
        meta: target.clone(),
        values: map_voxels(target, |_, p| vol.sample(&p)),
    }
}

pub fn resample_field_onto(field: &DisplacementField, target: &GridMeta) -> DisplacementField {
    if &field.meta == target {
        return field.clone();
    }
    DisplacementField {
        meta: target.clone(),
        u: map_voxels(target, |_, p| field.sample(&p)),
    }
}

/// Resamples to `new_dims` voxels over the same physical box (spacing rescaled).
pub fn resample_volume(vol: &ScalarVolume, new_dims: [usize; 3]) -> Result<ScalarVolume> {
    let target = vol.meta.with_dims(new_dims)?;
    Ok(resample_volume_onto(vol, &target))
}

/// Componentwise analogue of [`resample_volume`]; displacements stay in mm.
pub fn resample_field(field: &DisplacementField, new_dims: [usize; 3]) -> Result<DisplacementField> {
    let target = field.meta.with_dims(new_dims)?;
    Ok(resample_field_onto(field, &target))
}

/// Voxelwise `Σ w_i f_i` over fields on a shared grid.
pub fn weighted_sum(fields: &[(&DisplacementField, f64)]) -> Result<DisplacementField> {
    let (first, _) = fields.first().ok_or(Error::EmptyList("weighted_sum"))?;
    for (f, _) in &fields[1..] {
        first.meta.ensure_same(&f.meta, "weighted_sum")?;
    }
    let u = map_voxels(&first.meta, |idx, _| {
        let mut acc = [0.0; 3];
        for (f, w) in fields {
            let v = f.u[idx];
            acc[0] += w * v[0];
            acc[1] += w * v[1];
            acc[2] += w * v[2];
        }
        acc
    });
    Ok(DisplacementField {
        meta: first.meta.clone(),
        u,
    })
}

/// Summary statistics of a displacement field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub max_mm: f64,
    pub mean_mm: f64,
}

impl FieldStats {
    pub fn of(field: &DisplacementField) -> Self {
        FieldStats {
            max_mm: field.max_norm(),
            mean_mm: field.mean_norm(),
        }
    }
}
