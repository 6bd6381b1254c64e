//! Variational deformable registration.
//!
//! Minimises `D(fixed, moving ∘ φ) + weight · R(φ) / N` over displacement
//! fields by gradient descent with backtracking, coarse to fine. The returned
//! field is a backward map: `warp_image(moving, field) ≈ fixed`.

mod metric;
mod pyramid;
mod regularizer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{resample_field_onto, warp_image};
use crate::grid::{add3, det_sum, map_voxels, norm3, DisplacementField, MaskVolume, ScalarVolume, Vec3};

pub use metric::{metric_nssd, metric_ssd, Metric};
pub use pyramid::{box_smooth, downsample_mask, downsample_volume};
pub use regularizer::{reg_grad_dnl, reg_grad_smp, Regularizer, RegularizerEval};

/// Halvings tried by the line search before a level is declared converged.
const MAX_HALVINGS: usize = 10;
/// Coarsest pyramid levels are never smaller than this along any axis.
const MIN_LEVEL_DIM: usize = 8;
/// Width (voxels) of the Gaussian applied to descent directions.
const DIRECTION_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub metric: Metric,
    pub regularizer: Regularizer,
    /// Regulariser weight (α for intra-patient, β for inter-patient registration).
    pub weight: f64,
    pub levels: usize,
    pub iters_per_level: usize,
    /// Largest displacement update per iteration (mm).
    pub step_size: f64,
    #[serde(default)]
    pub sliding_mask: Option<MaskVolume>,
}

impl RegistrationConfig {
    /// NSSD + sliding-preserving regularisation with α = 0.1.
    pub fn intra_default() -> Self {
        RegistrationConfig {
            metric: Metric::Nssd,
            regularizer: Regularizer::Smp,
            weight: 0.1,
            levels: 3,
            iters_per_level: 100,
            step_size: 0.5,
            sliding_mask: None,
        }
    }

    /// SSD + diffusive regularisation with β = 1.0.
    pub fn inter_default() -> Self {
        RegistrationConfig {
            metric: Metric::Ssd,
            regularizer: Regularizer::Dnl,
            weight: 1.0,
            levels: 3,
            iters_per_level: 100,
            step_size: 0.5,
            sliding_mask: None,
        }
    }

    pub fn with_sliding_mask(mut self, mask: MaskVolume) -> Self {
        self.sliding_mask = Some(mask);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight {} must be >= 0", self.weight)));
        }
        if self.levels < 1 || self.iters_per_level < 1 {
            return Err(Error::InvalidConfig(
                "levels and iters_per_level must be >= 1".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_size {} must be > 0",
                self.step_size
            )));
        }
        if self.regularizer == Regularizer::Smp && self.sliding_mask.is_none() {
            return Err(Error::InvalidConfig(
                "SMP regularisation needs a sliding_mask".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub field: DisplacementField,
    /// Distance measure of the final field at full resolution.
    pub final_metric: f64,
    /// Objective value after every accepted iteration, all levels in order.
    pub metric_trace: Vec<f64>,
    /// Index in `metric_trace` where the finest level starts.
    pub last_level_start: usize,
}

/// Registers `moving` onto `fixed`; both must share one grid.
pub fn register(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    fixed.meta.ensure_same(&moving.meta, "register")?;
    cfg.validate()?;
    let sliding = match (cfg.regularizer, &cfg.sliding_mask) {
        (Regularizer::Smp, Some(mask)) => {
            fixed.meta.ensure_same(&mask.meta, "sliding mask")?;
            Some(mask.clone())
        }
        _ => None,
    };

    // finest first
    let mut levels = vec![(fixed.clone(), moving.clone(), sliding)];
    while levels.len() < cfg.levels {
        let (f, m, s) = levels.last().unwrap();
        let dims = f.meta.dims.map(|n| n.div_ceil(2));
        if dims.iter().any(|&n| n < MIN_LEVEL_DIM) {
            break;
        }
        let next = (
            downsample_volume(f, dims)?,
            downsample_volume(m, dims)?,
            s.as_ref().map(|s| downsample_mask(s, dims)).transpose()?,
        );
        levels.push(next);
    }

    let mut field: Option<DisplacementField> = None;
    let mut trace = Vec::new();
    let mut last_level_start = 0;
    for (level, (f, m, s)) in levels.iter().enumerate().rev() {
        let zero = DisplacementField::identity(f.meta.clone());
        let start = match field.take() {
            Some(prev) => resample_field_onto(&prev, &f.meta),
            None => zero.clone(),
        };
        let problem = Level::new(f, m, s.as_ref(), cfg);
        // never start a level worse off than the identity
        let e_start = problem.objective(&start);
        let e_zero = problem.objective(&zero);
        let (mut u, mut energy) = if e_start <= e_zero {
            (start, e_start)
        } else {
            (zero, e_zero)
        };
        if !energy.is_finite() {
            return Err(Error::NonFiniteEnergy {
                level,
                iteration: 0,
            });
        }
        last_level_start = trace.len();
        let mut step = cfg.step_size;
        for iteration in 0..cfg.iters_per_level {
            let grad = problem.direction(&u);
            let gmax = grad.iter().map(norm3).fold(0.0, f64::max);
            if gmax == 0.0 {
                break;
            }
            let mut accepted = false;
            let mut trial_step = step;
            for _ in 0..=MAX_HALVINGS {
                let scale = trial_step / gmax;
                let trial = DisplacementField {
                    meta: u.meta.clone(),
                    u: u.u
                        .iter()
                        .zip(&grad)
                        .map(|(v, g)| [v[0] - scale * g[0], v[1] - scale * g[1], v[2] - scale * g[2]])
                        .collect(),
                };
                let e = problem.objective(&trial);
                if !e.is_finite() {
                    return Err(Error::NonFiniteEnergy { level, iteration });
                }
                if e < energy {
                    u = trial;
                    energy = e;
                    accepted = true;
                    break;
                }
                trial_step *= 0.5;
            }
            if !accepted {
                break;
            }
            trace.push(energy);
            step = (2.0 * trial_step).min(cfg.step_size);
        }
        field = Some(u);
    }

    let field = field.expect("at least one level");
    let warped = warp_image(moving, &field)?;
    let final_metric = cfg.metric.value(&fixed.values, &warped.values);
    Ok(RegistrationResult {
        field,
        final_metric,
        metric_trace: trace,
        last_level_start,
    })
}

/// One pyramid level of the optimisation problem.
struct Level<'a> {
    fixed: &'a ScalarVolume,
    moving: &'a ScalarVolume,
    moving_grad: Vec<Vec3>,
    labels: Option<&'a [u8]>,
    metric: Metric,
    weight: f64,
}

impl<'a> Level<'a> {
    fn new(
        fixed: &'a ScalarVolume,
        moving: &'a ScalarVolume,
        mask: Option<&'a MaskVolume>,
        cfg: &RegistrationConfig,
    ) -> Self {
        Level {
            fixed,
            moving,
            moving_grad: image_gradient(moving),
            labels: mask.map(|m| m.labels.as_slice()),
            metric: cfg.metric,
            weight: cfg.weight,
        }
    }

    fn warped(&self, u: &DisplacementField) -> Vec<f64> {
        map_voxels(&u.meta, |idx, x| self.moving.sample(&add3(&x, &u.u[idx])))
    }

    fn objective(&self, u: &DisplacementField) -> f64 {
        let warped = self.warped(u);
        let d = self.metric.value(&self.fixed.values, &warped);
        let n = warped.len() as f64;
        d + self.weight * regularizer::energy_only(u, self.labels) / n
    }

    /// Objective gradient and `|∇m|²` at the displaced positions.
    fn gradient(&self, u: &DisplacementField) -> (Vec<Vec3>, Vec<f64>) {
        let warped = self.warped(u);
        let ev = self.metric.eval(&self.fixed.values, &warped);
        let reg = regularizer::diffusion(u, self.labels);
        let n = warped.len() as f64;
        let meta = &u.meta;
        map_voxels(meta, |idx, x| {
            let st = meta.stencil(&add3(&x, &u.u[idx]));
            let gm = st.apply_vec(&self.moving_grad);
            let dw = ev.d_warped[idx];
            let r = reg.gradient[idx];
            let g = [0, 1, 2].map(|c| dw * gm[c] + self.weight * r[c] / n);
            (g, gm[0] * gm[0] + gm[1] * gm[1] + gm[2] * gm[2])
        })
        .into_iter()
        .unzip()
    }

    /// Search direction `K P g`: `P` divides by a diagonal Gauss–Newton
    /// curvature estimate `|∇m|² + κ` (`κ` the mean squared gradient
    /// magnitude) and `K` is a Gaussian filter. The line search rejects any
    /// step that does not lower the objective.
    fn direction(&self, u: &DisplacementField) -> Vec<Vec3> {
        let (g, gm2) = self.gradient(u);
        let kappa = det_sum(gm2.len(), |i| gm2[i]) / gm2.len() as f64;
        if !(kappa > 0.0) {
            return smooth_direction(&u.meta, g);
        }
        let h = g.iter().zip(&gm2).map(|(v, q)| v.map(|c| c / (q + kappa))).collect();
        smooth_direction(&u.meta, h)
    }
}

/// Gaussian smoothing of the descent direction (σ in voxels), applied per axis.
///
/// Borders are zero-padded with a fixed normalisation so the filter stays symmetric.
fn smooth_direction(meta: &crate::grid::GridMeta, grad: Vec<Vec3>) -> Vec<Vec3> {
    let sigma = DIRECTION_SIGMA;
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    let strides = [1, meta.dims[0], meta.dims[0] * meta.dims[1]];
    let mut cur = grad;
    for a in 0..3 {
        let src = cur;
        let n = meta.dims[a] as isize;
        cur = map_voxels(meta, |idx, _| {
            let i = meta.ijk(idx)[a] as isize;
            let base = idx as isize - i * strides[a] as isize;
            let mut acc = [0.0; 3];
            for (t, w) in kernel.iter().enumerate() {
                let j = i + t as isize - radius;
                if j < 0 || j >= n {
                    continue;
                }
                let v = src[(base + j * strides[a] as isize) as usize];
                acc[0] += w * v[0];
                acc[1] += w * v[1];
                acc[2] += w * v[2];
            }
            acc.map(|c| c / total)
        });
    }
    cur
}

/// Central-difference intensity gradient in mm⁻¹ (one-sided at the borders).
fn image_gradient(vol: &ScalarVolume) -> Vec<Vec3> {
    let meta = &vol.meta;
    let strides = [1, meta.dims[0], meta.dims[0] * meta.dims[1]];
    let v = &vol.values;
    map_voxels(meta, |idx, _| {
        let ijk = meta.ijk(idx);
        [0, 1, 2].map(|a| {
            let h = meta.spacing[a];
            let lo = if ijk[a] > 0 { idx - strides[a] } else { idx };
            let hi = if ijk[a] + 1 < meta.dims[a] { idx + strides[a] } else { idx };
            let span = (hi - lo) / strides[a];
            (v[hi] - v[lo]) / (span as f64 * h)
        })
    })
}

/// Diffusive energy of `field` (no mask).
pub fn diffusive_energy(field: &DisplacementField) -> f64 {
    regularizer::energy_only(field, None)
}

/// Mean displacement over voxels where `mask` is set.
pub fn mean_displacement(field: &DisplacementField, mask: &MaskVolume) -> Result<Vec3> {
    field.meta.ensure_same(&mask.meta, "mean_displacement")?;
    let count = mask.count().max(1) as f64;
    let labels = &mask.labels;
    Ok([0, 1, 2].map(|c| det_sum(labels.len(), |i| labels[i] as f64 * field.u[i][c]) / count))
}
