//! Regular axis-aligned grids and the containers that live on them.
//!
//! Voxel `(i, j, k)` sits at world position `origin + (i, j, k) * spacing` (mm)
//! and is stored at linear index `i + nx * (j + ny * k)` (x fastest).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Chunk length for deterministic parallel reductions.
const REDUCE_CHUNK: usize = 4096;

/// Continuous indices this close to an integer are treated as lying on the node.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub origin: Vec3,
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        let meta = GridMeta {
            dims,
            spacing,
            origin,
        };
        meta.validate()?;
        Ok(meta)
    }

    /// Grid of `dims` voxels with isotropic `spacing`, centred on the world origin.
    pub fn centered(dims: [usize; 3], spacing: f64) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing);
        Self::new(dims, [spacing; 3], origin)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] < 2 {
                return Err(Error::InvalidDims(format!(
                    "axis {a} has {} voxels, need at least 2",
                    self.dims[a]
                )));
            }
            if !(self.spacing[a] > 0.0 && self.spacing[a].is_finite()) {
                return Err(Error::InvalidDims(format!(
                    "axis {a} spacing {} must be positive",
                    self.spacing[a]
                )));
            }
            if !self.origin[a].is_finite() {
                return Err(Error::InvalidDims(format!("axis {a} origin is not finite")));
            }
        }
        Ok(())
    }

    pub fn n_vox(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn world(&self, idx: usize) -> Vec3 {
        let ijk = self.ijk(idx);
        [0, 1, 2].map(|a| self.origin[a] + ijk[a] as f64 * self.spacing[a])
    }

    /// Physical size of the voxel box covered by the grid.
    pub fn extent(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing[a])
    }

    /// World coordinates of the grid centre.
    pub fn center(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.origin[a] + 0.5 * (self.dims[a] as f64 - 1.0) * self.spacing[a])
    }

    pub fn ensure_same(&self, other: &GridMeta, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    /// Grid covering the same physical box with `new_dims` voxels.
    pub fn with_dims(&self, new_dims: [usize; 3]) -> Result<GridMeta> {
        let spacing: Vec3 =
            [0, 1, 2].map(|a| self.spacing[a] * self.dims[a] as f64 / new_dims[a] as f64);
        let origin: Vec3 =
            [0, 1, 2].map(|a| self.origin[a] - 0.5 * self.spacing[a] + 0.5 * spacing[a]);
        GridMeta::new(new_dims, spacing, origin)
    }

    /// Trilinear interpolation stencil at world point `p`, clamped to the grid.
    #[inline]
    pub(crate) fn stencil(&self, p: &Vec3) -> Stencil {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut f = [0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let mut c = ((p[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (n - 1) as f64);
            // snap round-off so node positions reproduce node values exactly
            let r = c.round();
            if (c - r).abs() < NODE_SNAP {
                c = r;
            }
            let i0 = (c.floor() as usize).min(n - 1);
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            f[a] = c - i0 as f64;
        }
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let mut idx = [0usize; 8];
        for (n, slot) in idx.iter_mut().enumerate() {
            let kx = if n & 1 == 0 { lo[0] } else { hi[0] };
            let ky = if n & 2 == 0 { lo[1] } else { hi[1] };
            let kz = if n & 4 == 0 { lo[2] } else { hi[2] };
            *slot = kx + nx * ky + nxy * kz;
        }
        Stencil { idx, f }
    }
}

/// Eight corner indices (bit 0: x, bit 1: y, bit 2: z) and the fractional offsets.
///
/// Interpolation is a tree of `a + f * (b - a)` lerps, so constant data and
/// node positions are reproduced exactly.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub f: [f64; 3],
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let v = |n: usize| values[self.idx[n]];
        let [fx, fy, fz] = self.f;
        let x00 = lerp(v(0), v(1), fx);
        let x10 = lerp(v(2), v(3), fx);
        let x01 = lerp(v(4), v(5), fx);
        let x11 = lerp(v(6), v(7), fx);
        lerp(lerp(x00, x10, fy), lerp(x01, x11, fy), fz)
    }

    #[inline]
    pub fn apply_vec(&self, values: &[Vec3]) -> Vec3 {
        let [fx, fy, fz] = self.f;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let v = |n: usize| values[self.idx[n]][c];
            let x00 = lerp(v(0), v(1), fx);
            let x10 = lerp(v(2), v(3), fx);
            let x01 = lerp(v(4), v(5), fx);
            let x11 = lerp(v(6), v(7), fx);
            *o = lerp(lerp(x00, x10, fy), lerp(x01, x11, fy), fz);
        }
        out
    }
}

/// Evaluates `f` at every voxel in index order, in parallel.
pub(crate) fn map_voxels<T, F>(meta: &GridMeta, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Vec3) -> T + Sync,
{
    (0..meta.n_vox())
        .into_par_iter()
        .map(|idx| f(idx, meta.world(idx)))
        .collect()
}

/// Sum of `f(i)` for `i in 0..n`, with a summation order independent of the thread count.
pub(crate) fn det_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partials: Vec<f64> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * REDUCE_CHUNK).min(n);
            (c * REDUCE_CHUNK..end).map(&f).sum()
        })
        .collect();
    partials.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarVolume {
    pub meta: GridMeta,
    pub values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(meta: GridMeta, values: Vec<f64>) -> Result<Self> {
        meta.validate()?;
        if values.len() != meta.n_vox() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} voxels",
                values.len(),
                meta.n_vox()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite value at voxel {i}")));
        }
        Ok(ScalarVolume { meta, values })
    }

    pub fn constant(meta: GridMeta, value: f64) -> Self {
        let n = meta.n_vox();
        ScalarVolume {
            meta,
            values: vec![value; n],
        }
    }

    pub fn from_fn<F>(meta: GridMeta, f: F) -> Self
    where
        F: Fn(Vec3) -> f64 + Sync,
    {
        let values = map_voxels(&meta, |_, p| f(p));
        ScalarVolume { meta, values }
    }

    /// Trilinear sample at world point `p`; outside the grid the nearest edge value is used.
    pub fn sample(&self, p: &Vec3) -> f64 {
        self.meta.stencil(p).apply(&self.values)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        det_sum(self.values.len(), |i| self.values[i]) / self.values.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &ScalarVolume) -> Result<f64> {
        self.meta.ensure_same(&other.meta, "mean_abs_diff")?;
        let n = self.values.len();
        Ok(det_sum(n, |i| (self.values[i] - other.values[i]).abs()) / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskVolume {
    pub meta: GridMeta,
    pub labels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(meta: GridMeta, labels: Vec<u8>) -> Result<Self> {
        meta.validate()?;
        if labels.len() != meta.n_vox() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} voxels",
                labels.len(),
                meta.n_vox()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::ShapeMismatch(format!(
                "label {} at voxel {i} is not 0/1",
                labels[i]
            )));
        }
        Ok(MaskVolume { meta, labels })
    }

    pub fn empty(meta: GridMeta) -> Self {
        let n = meta.n_vox();
        MaskVolume {
            meta,
            labels: vec![0; n],
        }
    }

    pub fn from_fn<F>(meta: GridMeta, f: F) -> Self
    where
        F: Fn(Vec3) -> bool + Sync,
    {
        let labels = map_voxels(&meta, |_, p| f(p) as u8);
        MaskVolume { meta, labels }
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume {
            meta: self.meta.clone(),
            values: self.labels.iter().map(|&l| l as f64).collect(),
        }
    }

    /// Binarises a scalar raster: `1` where `value >= threshold`.
    pub fn threshold(vol: &ScalarVolume, threshold: f64) -> Self {
        MaskVolume {
            meta: vol.meta.clone(),
            labels: vol.values.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }

    /// Voxelwise union of masks sharing one grid.
    pub fn union(masks: &[&MaskVolume]) -> Result<Self> {
        let first = masks.first().ok_or(Error::EmptyList("mask union"))?;
        let mut out = (*first).clone();
        for m in &masks[1..] {
            first.meta.ensure_same(&m.meta, "mask union")?;
            for (o, &l) in out.labels.iter_mut().zip(&m.labels) {
                *o |= l;
            }
        }
        Ok(out)
    }
}

/// Displacement field `u` in mm; the mapping is `phi(x) = x + u(x)` in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub meta: GridMeta,
    pub u: Vec<Vec3>,
}

impl DisplacementField {
    pub fn new(meta: GridMeta, u: Vec<Vec3>) -> Result<Self> {
        meta.validate()?;
        if u.len() != meta.n_vox() {
            return Err(Error::ShapeMismatch(format!(
                "{} vectors for {} voxels",
                u.len(),
                meta.n_vox()
            )));
        }
        if let Some(i) = u.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::ShapeMismatch(format!(
                "non-finite displacement at voxel {i}"
            )));
        }
        Ok(DisplacementField { meta, u })
    }

    pub fn identity(meta: GridMeta) -> Self {
        Self::constant(meta, [0.0; 3])
    }

    pub fn constant(meta: GridMeta, c: Vec3) -> Self {
        let n = meta.n_vox();
        DisplacementField {
            meta,
            u: vec![c; n],
        }
    }

    pub fn from_fn<F>(meta: GridMeta, f: F) -> Self
    where
        F: Fn(Vec3) -> Vec3 + Sync,
    {
        let u = map_voxels(&meta, |_, p| f(p));
        DisplacementField { meta, u }
    }

    pub fn sample(&self, p: &Vec3) -> Vec3 {
        self.meta.stencil(p).apply_vec(&self.u)
    }

    /// Largest displacement magnitude (mm).
    pub fn max_norm(&self) -> f64 {
        self.u.iter().map(norm3).fold(0.0, f64::max)
    }

    pub fn mean_norm(&self) -> f64 {
        det_sum(self.u.len(), |i| norm3(&self.u[i])) / self.u.len() as f64
    }

    /// ∞-norm of the voxelwise difference `self - other`.
    pub fn max_diff(&self, other: &DisplacementField) -> Result<f64> {
        self.meta.ensure_same(&other.meta, "max_diff")?;
        Ok(self
            .u
            .iter()
            .zip(&other.u)
            .map(|(a, b)| norm3(&sub3(a, b)))
            .fold(0.0, f64::max))
    }

    pub fn component(&self, c: usize) -> ScalarVolume {
        ScalarVolume {
            meta: self.meta.clone(),
            values: self.u.iter().map(|v| v[c]).collect(),
        }
    }

    pub fn from_components(comps: [&ScalarVolume; 3]) -> Result<Self> {
        comps[0].meta.ensure_same(&comps[1].meta, "field components")?;
        comps[0].meta.ensure_same(&comps[2].meta, "field components")?;
        let u = (0..comps[0].values.len())
            .map(|i| [comps[0].values[i], comps[1].values[i], comps[2].values[i]])
            .collect();
        Ok(DisplacementField {
            meta: comps[0].meta.clone(),
            u,
        })
    }
}

#[inline]
pub fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n: usize) -> GridMeta {
        GridMeta::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridMeta::new([1, 4, 4], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridMeta::new([4, 4, 4], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
    }

    #[test]
    fn index_roundtrip_is_x_fastest() {
        let m = GridMeta::new([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(m.index(1, 0, 0), 1);
        assert_eq!(m.index(0, 1, 0), 3);
        assert_eq!(m.index(0, 0, 1), 12);
        for idx in 0..m.n_vox() {
            let [i, j, k] = m.ijk(idx);
            assert_eq!(m.index(i, j, k), idx);
        }
    }

    #[test]
    fn constant_volume_samples_constant() {
        let v = ScalarVolume::constant(meta(4), 2.5);
        for p in [[0.3, 1.7, 2.2], [-5.0, 10.0, 0.5], [3.0, 3.0, 3.0]] {
            assert_eq!(v.sample(&p), 2.5);
        }
    }

    #[test]
    fn exact_at_voxel_centres() {
        let m = GridMeta::new([5, 4, 3], [0.7, 1.3, 2.0], [-1.0, 2.0, 0.5]).unwrap();
        let v = ScalarVolume::from_fn(m.clone(), |p| (p[0] * 3.1).sin() + p[1] * p[2]);
        for idx in 0..m.n_vox() {
            assert_eq!(v.sample(&m.world(idx)), v.values[idx]);
        }
        let xi = ScalarVolume::new(
            m.clone(),
            (0..m.n_vox()).map(|i| m.ijk(i)[0] as f64).collect(),
        )
        .unwrap();
        assert_eq!(xi.sample(&m.world(m.index(3, 2, 1))), 3.0);
    }

    #[test]
    fn midpoint_of_alternating_cube() {
        // 2x2x2 volume with values 0,1 alternating along x.
        let v = ScalarVolume::new(meta(2), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(v.sample(&[0.5, 0.0, 0.0]), 0.5);
        assert_eq!(v.sample(&[0.5, 0.3, 0.9]), 0.5);
        assert!((v.sample(&[0.25, 0.5, 0.5]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn outside_points_clamp_to_edge() {
        let m = meta(4);
        let v = ScalarVolume::from_fn(m, |p| p[0] + 10.0 * p[1]);
        assert_eq!(v.sample(&[-3.0, 1.0, 1.0]), 10.0);
        assert_eq!(v.sample(&[7.0, 1.0, 9.0]), 13.0);
    }

    #[test]
    fn with_dims_preserves_extent() {
        let m = GridMeta::new([64, 32, 16], [1.0, 2.0, 4.0], [0.0; 3]).unwrap();
        let h = m.with_dims([32, 16, 8]).unwrap();
        assert_eq!(h.spacing, [2.0, 4.0, 8.0]);
        assert_eq!(h.extent(), m.extent());
        assert_eq!(h.origin, [0.5, 1.0, 2.0]);
        assert_eq!(h.center(), m.center());
    }

    #[test]
    fn det_sum_matches_sequential() {
        let n = 10_000;
        let s = det_sum(n, |i| i as f64);
        assert_eq!(s, (n * (n - 1) / 2) as f64);
    }

    #[test]
    fn mask_rejects_non_binary_labels() {
        assert!(MaskVolume::new(meta(2), vec![0, 1, 2, 0, 0, 0, 0, 0]).is_err());
    }
}
