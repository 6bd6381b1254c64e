//! Diffusive smoothness penalties on displacement fields.
//!
//! The energy is `½ Σ_c Σ_edges ((u_c(y) − u_c(x)) / h)²` over all pairs of
//! face-adjacent voxels, so its exact gradient is `−Δu` (the 7-point Laplacian
//! with reflecting boundaries). The sliding variant drops every edge whose two
//! ends carry different mask labels: differences never cross the sliding
//! surface and each side is regularised on its own.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{DisplacementField, MaskVolume, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regularizer {
    /// Sliding-motion preserving: diffusion decoupled across a mask boundary.
    Smp,
    /// Diffusive regularisation over the whole grid.
    Dnl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerEval {
    pub energy: f64,
    pub gradient: Vec<Vec3>,
}

/// Diffusive energy and its gradient `−Δu`.
pub fn reg_grad_dnl(field: &DisplacementField) -> RegularizerEval {
    diffusion(field, None)
}

/// Diffusion decoupled across the boundary of `mask`.
pub fn reg_grad_smp(field: &DisplacementField, mask: &MaskVolume) -> Result<RegularizerEval> {
    field.meta.ensure_same(&mask.meta, "reg_grad_smp")?;
    Ok(diffusion(field, Some(&mask.labels)))
}

pub(crate) fn energy_only(field: &DisplacementField, labels: Option<&[u8]>) -> f64 {
    edge_energy(field, labels)
}

pub(crate) fn diffusion(field: &DisplacementField, labels: Option<&[u8]>) -> RegularizerEval {
    RegularizerEval {
        energy: edge_energy(field, labels),
        gradient: laplacian(field, labels),
    }
}

fn edge_energy(field: &DisplacementField, labels: Option<&[u8]>) -> f64 {
    let meta = &field.meta;
    let [nx, ny, nz] = meta.dims;
    let strides = [1, nx, nx * ny];
    let inv_h2 = meta.spacing.map(|h| 1.0 / (h * h));
    let u = &field.u;
    let mut total = 0.0;
    // per-slice partial sums keep the summation order fixed
    let partials: Vec<f64> = {
        use rayon::prelude::*;
        (0..nz)
            .into_par_iter()
            .map(|k| {
                let mut acc = 0.0;
                for j in 0..ny {
                    for i in 0..nx {
                        let x = i + nx * (j + ny * k);
                        let ijk = [i, j, k];
                        for a in 0..3 {
                            if ijk[a] + 1 >= meta.dims[a] {
                                continue;
                            }
                            let y = x + strides[a];
                            if let Some(l) = labels {
                                if l[x] != l[y] {
                                    continue;
                                }
                            }
                            let d0 = u[y][0] - u[x][0];
                            let d1 = u[y][1] - u[x][1];
                            let d2 = u[y][2] - u[x][2];
                            acc += (d0 * d0 + d1 * d1 + d2 * d2) * inv_h2[a];
                        }
                    }
                }
                acc
            })
            .collect()
    };
    for p in partials {
        total += p;
    }
    0.5 * total
}

fn laplacian(field: &DisplacementField, labels: Option<&[u8]>) -> Vec<Vec3> {
    let meta = &field.meta;
    let strides = [1, meta.dims[0], meta.dims[0] * meta.dims[1]];
    let inv_h2 = meta.spacing.map(|h| 1.0 / (h * h));
    let u = &field.u;
    crate::grid::map_voxels(meta, |x, _| {
        let ijk = meta.ijk(x);
        let mut g = [0.0; 3];
        for a in 0..3 {
            let mut visit = |y: usize| {
                if let Some(l) = labels {
                    if l[x] != l[y] {
                        return;
                    }
                }
                for c in 0..3 {
                    g[c] += (u[x][c] - u[y][c]) * inv_h2[a];
                }
            };
            if ijk[a] > 0 {
                visit(x - strides[a]);
            }
            if ijk[a] + 1 < meta.dims[a] {
                visit(x + strides[a]);
            }
        }
        g
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(n: usize) -> GridMeta {
        GridMeta::new([n, n, n], [1.0, 1.5, 0.8], [0.0; 3]).unwrap()
    }

    fn random_field(n: usize, seed: u64) -> DisplacementField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = meta(n);
        let u = (0..m.n_vox())
            .map(|_| [0; 3].map(|_| rng.random_range(-0.5..0.5)))
            .collect();
        DisplacementField::new(m, u).unwrap()
    }

    fn random_mask(n: usize, seed: u64) -> MaskVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = meta(n);
        let labels = (0..m.n_vox()).map(|_| rng.random_range(0..2u8)).collect();
        MaskVolume::new(m, labels).unwrap()
    }

    /// Central finite differences of the energy, component by component.
    fn fd_check(field: &DisplacementField, labels: Option<&[u8]>) {
        let ev = diffusion(field, labels);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for x in (0..field.u.len()).step_by(7) {
            for c in 0..3 {
                let mut p = field.clone();
                p.u[x][c] += h;
                let mut m = field.clone();
                m.u[x][c] -= h;
                let fd = (energy_only(&p, labels) - energy_only(&m, labels)) / (2.0 * h);
                let g = ev.gradient[x][c];
                let rel = (fd - g).abs() / g.abs().max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn constant_field_has_no_energy() {
        let f = DisplacementField::constant(meta(5), [1.0, -2.0, 0.5]);
        let ev = reg_grad_dnl(&f);
        assert_eq!(ev.energy, 0.0);
        assert!(ev.gradient.iter().all(|g| *g == [0.0; 3]));
        let s = reg_grad_smp(&f, &random_mask(5, 3)).unwrap();
        assert_eq!(s.energy, 0.0);
    }

    #[test]
    fn linear_field_has_zero_interior_laplacian() {
        let m = meta(6);
        let f = DisplacementField::from_fn(m.clone(), |p| [p[0], 0.0, 0.0]);
        let ev = reg_grad_dnl(&f);
        for idx in 0..m.n_vox() {
            let ijk = m.ijk(idx);
            if ijk.iter().all(|&i| i > 0 && i < 5) {
                assert!(ev.gradient[idx][0].abs() < 1e-12);
            }
        }
        // one unit step per x-edge: energy = ½ · (#x-edges)
        assert!((ev.energy - 0.5 * (5 * 36) as f64).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = random_field(8, 11);
        fd_check(&f, None);
        let mask = random_mask(8, 12);
        fd_check(&f, Some(&mask.labels));
    }

    #[test]
    fn all_ones_mask_equals_dnl() {
        let f = random_field(7, 5);
        let ones = MaskVolume::new(f.meta.clone(), vec![1; f.meta.n_vox()]).unwrap();
        assert_eq!(reg_grad_smp(&f, &ones).unwrap(), reg_grad_dnl(&f));
    }

    #[test]
    fn discontinuity_at_mask_boundary_is_free() {
        let m = meta(8);
        let mask = MaskVolume::from_fn(m.clone(), |p| p[2] > 3.0);
        let f = DisplacementField::from_fn(m.clone(), |p| {
            if p[2] > 3.0 {
                [2.0, 0.0, 0.0]
            } else {
                [-1.0, 0.5, 0.0]
            }
        });
        let s = reg_grad_smp(&f, &mask).unwrap();
        assert_eq!(s.energy, 0.0);
        assert!(s.gradient.iter().all(|g| *g == [0.0; 3]));
        assert!(reg_grad_dnl(&f).energy > 0.0);
    }
}
