//! Per-voxel linear regression of displacement on `(v, v', 1)`.
//!
//! Displacements of all phases are stacked into `V` (one column per phase,
//! component-major rows) and the coefficients minimise `‖V − A·Z‖_F`, giving
//! `A = V·Z⁺`. The model predicts `u(x) = a1(x)·v + a2(x)·v' + a3(x)`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{resample_field_onto, warp_image};
use crate::grid::{det_sum, map_voxels, DisplacementField, GridMeta, ScalarVolume, Vec3};
use crate::rvf;
use crate::surrogate::SurrogateSignal;

pub const SCHEMA: &str = "motionmodel-1";
pub const MANIFEST: &str = "model.json";
/// Singular values of `Z·Zᵀ` below this fraction of the largest are dropped.
pub const PINV_CUTOFF: f64 = 1e-10;

/// `Z` (rows `v`, `v'`, `1`; one column per phase) and its pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorMatrix {
    z: DMatrix<f64>,
    pinv: DMatrix<f64>,
    rank: usize,
}

impl RegressorMatrix {
    pub fn new(v: &[f64], v_prime: &[f64]) -> Result<Self> {
        if v.len() != v_prime.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} volumes but {} derivatives",
                v.len(),
                v_prime.len()
            )));
        }
        if v.is_empty() {
            return Err(Error::EmptyList("regressor samples"));
        }
        if v.iter().chain(v_prime).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite surrogate sample".into()));
        }
        let k = v.len();
        let z = DMatrix::from_fn(3, k, |r, c| match r {
            0 => v[c],
            1 => v_prime[c],
            _ => 1.0,
        });
        // s_i² < cutoff · s_max² is the same test as on the eigenvalues of Z·Zᵀ
        let svd = z.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let keep = |s: f64| s > 0.0 && s * s >= PINV_CUTOFF * s_max * s_max;
        let rank = svd.singular_values.iter().filter(|&&s| keep(s)).count();
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let mut pinv = DMatrix::zeros(k, 3);
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if keep(s) {
                pinv += vt.row(i).transpose() * u.column(i).transpose() / s;
            }
        }
        if rank < 3 {
            log::warn!("surrogate regressors have rank {rank} < 3; using the minimum-norm fit");
        }
        Ok(RegressorMatrix { z, pinv, rank })
    }

    pub fn from_signal(signal: &SurrogateSignal) -> Result<Self> {
        Self::new(&signal.v, &signal.v_prime)
    }

    pub fn n_phases(&self) -> usize {
        self.z.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// `Z⁺`, `N_phases × 3`.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }
}

/// Coefficient fields of the linear motion model.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    /// mm/ml, pairs with `v`.
    pub a1: DisplacementField,
    /// mm·s/ml, pairs with `v'`.
    pub a2: DisplacementField,
    /// Intercept (mm).
    pub a3: DisplacementField,
}

/// Stacks fields into `3·N_vox × N_phases`: all x components, then y, then z.
pub fn serialize_fields(fields: &[DisplacementField]) -> Result<DMatrix<f64>> {
    let first = fields.first().ok_or(Error::EmptyList("fields"))?;
    for f in fields {
        first.meta.ensure_same(&f.meta, "serialize_fields")?;
    }
    let n = first.meta.n_vox();
    Ok(DMatrix::from_fn(3 * n, fields.len(), |r, c| fields[c].u[r % n][r / n]))
}

/// Inverse of [`serialize_fields`] for a single column.
pub fn deserialize_field(v: &DMatrix<f64>, column: usize, meta: &GridMeta) -> Result<DisplacementField> {
    let n = meta.n_vox();
    if v.nrows() != 3 * n || column >= v.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "matrix {}×{} does not hold column {column} of {n} voxels",
            v.nrows(),
            v.ncols()
        )));
    }
    let col = v.column(column);
    Ok(DisplacementField {
        meta: meta.clone(),
        u: (0..n).map(|i| [col[i], col[n + i], col[2 * n + i]]).collect(),
    })
}

pub fn deserialize_fields(v: &DMatrix<f64>, meta: &GridMeta) -> Result<Vec<DisplacementField>> {
    (0..v.ncols()).map(|c| deserialize_field(v, c, meta)).collect()
}

/// Least-squares fit on a materialised `V`.
pub fn fit(v: &DMatrix<f64>, z: &RegressorMatrix, meta: &GridMeta) -> Result<MotionModel> {
    if v.ncols() != z.n_phases() {
        return Err(Error::ShapeMismatch(format!(
            "V has {} columns, Z has {} phases",
            v.ncols(),
            z.n_phases()
        )));
    }
    let a = v * z.pinv();
    Ok(MotionModel {
        a1: deserialize_field(&a, 0, meta)?,
        a2: deserialize_field(&a, 1, meta)?,
        a3: deserialize_field(&a, 2, meta)?,
    })
}

/// Same fit streamed voxel by voxel, without building `V`.
pub fn fit_fields(fields: &[DisplacementField], z: &RegressorMatrix) -> Result<MotionModel> {
    let first = fields.first().ok_or(Error::EmptyList("fields"))?;
    if fields.len() != z.n_phases() {
        return Err(Error::ShapeMismatch(format!(
            "{} fields, Z has {} phases",
            fields.len(),
            z.n_phases()
        )));
    }
    for f in fields {
        first.meta.ensure_same(&f.meta, "fit_fields")?;
    }
    let p = z.pinv();
    let coeffs: Vec<[Vec3; 3]> = map_voxels(&first.meta, |idx, _| {
        let mut a = [[0.0; 3]; 3];
        for (j, f) in fields.iter().enumerate() {
            let u = f.u[idx];
            for (k, ak) in a.iter_mut().enumerate() {
                let w = p[(j, k)];
                for c in 0..3 {
                    ak[c] += u[c] * w;
                }
            }
        }
        a
    });
    let take = |k: usize| DisplacementField {
        meta: first.meta.clone(),
        u: coeffs.iter().map(|a| a[k]).collect(),
    };
    Ok(MotionModel {
        a1: take(0),
        a2: take(1),
        a3: take(2),
    })
}

/// Residual of a fit against the fields it was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `‖V − A·Z‖_F` (mm).
    pub residual: f64,
    /// `‖V − mean_j V‖_F` (mm).
    pub total_variation: f64,
    pub rank: usize,
}

impl FitReport {
    /// Unexplained share of the field variance, `residual² / total²`.
    pub fn unexplained_fraction(&self) -> f64 {
        if self.total_variation == 0.0 {
            0.0
        } else {
            (self.residual / self.total_variation).powi(2)
        }
    }
}

impl MotionModel {
    pub fn zero(meta: GridMeta) -> Self {
        let z = DisplacementField::identity(meta);
        MotionModel {
            a1: z.clone(),
            a2: z.clone(),
            a3: z,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.a1.meta
    }

    pub fn validate(&self) -> Result<()> {
        self.a1.meta.ensure_same(&self.a2.meta, "motion model")?;
        self.a1.meta.ensure_same(&self.a3.meta, "motion model")?;
        for f in [&self.a1, &self.a2, &self.a3] {
            if f.u.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidConfig("non-finite model coefficient".into()));
            }
        }
        Ok(())
    }

    /// `a1·v + a2·v' + a3`.
    pub fn predict(&self, v: f64, v_prime: f64) -> DisplacementField {
        DisplacementField {
            meta: self.a1.meta.clone(),
            u: self
                .a1
                .u
                .iter()
                .zip(&self.a2.u)
                .zip(&self.a3.u)
                .map(|((a1, a2), a3)| [0, 1, 2].map(|c| a1[c] * v + a2[c] * v_prime + a3[c]))
                .collect(),
        }
    }

    pub fn predict_sample(&self, signal: &SurrogateSignal, t_index: usize) -> Result<DisplacementField> {
        if t_index >= signal.len() {
            return Err(Error::IndexOutOfRange {
                index: t_index,
                len: signal.len(),
            });
        }
        Ok(self.predict(signal.v[t_index], signal.v_prime[t_index]))
    }

    /// Residual of this model on `fields` with regressors `z`.
    pub fn report(&self, fields: &[DisplacementField], z: &RegressorMatrix) -> Result<FitReport> {
        if fields.len() != z.n_phases() {
            return Err(Error::ShapeMismatch(format!(
                "{} fields, Z has {} phases",
                fields.len(),
                z.n_phases()
            )));
        }
        for f in fields {
            self.meta().ensure_same(&f.meta, "fit report")?;
        }
        let k = fields.len() as f64;
        let zm = z.z();
        let n = self.meta().n_vox();
        let residual = det_sum(n, |i| {
            let mut acc = 0.0;
            for (j, f) in fields.iter().enumerate() {
                for c in 0..3 {
                    let pred = self.a1.u[i][c] * zm[(0, j)] + self.a2.u[i][c] * zm[(1, j)] + self.a3.u[i][c];
                    acc += (f.u[i][c] - pred).powi(2);
                }
            }
            acc
        });
        let total = det_sum(n, |i| {
            let mut acc = 0.0;
            for c in 0..3 {
                let mean = fields.iter().map(|f| f.u[i][c]).sum::<f64>() / k;
                acc += fields.iter().map(|f| (f.u[i][c] - mean).powi(2)).sum::<f64>();
            }
            acc
        });
        Ok(FitReport {
            residual: residual.sqrt(),
            total_variation: total.sqrt(),
            rank: z.rank(),
        })
    }

    /// Coefficients resampled onto another grid (physical positions preserved).
    pub fn resample_onto(&self, meta: &GridMeta) -> MotionModel {
        MotionModel {
            a1: resample_field_onto(&self.a1, meta),
            a2: resample_field_onto(&self.a2, meta),
            a3: resample_field_onto(&self.a3, meta),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        rvf::write_field(dir.join("a1.rvf"), &self.a1)?;
        rvf::write_field(dir.join("a2.rvf"), &self.a2)?;
        rvf::write_field(dir.join("a3.rvf"), &self.a3)?;
        let manifest = ModelManifest {
            schema: SCHEMA.into(),
            grid: self.meta().clone(),
            units: Units::default(),
            a1: "a1.rvf".into(),
            a2: "a2.rvf".into(),
            a3: "a3.rvf".into(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a model saved with [`MotionModel::save`]. Coefficients are
    /// stored as f32, so values round-trip to single precision.
    pub fn load(dir: &Path) -> Result<MotionModel> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: ModelManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.schema != SCHEMA {
            return Err(Error::format(&path, format!("unsupported schema '{}'", m.schema)));
        }
        let model = MotionModel {
            a1: rvf::read_field(dir.join(&m.a1))?,
            a2: rvf::read_field(dir.join(&m.a2))?,
            a3: rvf::read_field(dir.join(&m.a3))?,
        };
        model.validate()?;
        m.grid.ensure_same(model.meta(), "model manifest")?;
        Ok(model)
    }
}

/// `warp_image(ref_image, predict(v(t), v'(t)))`.
pub fn animate(
    ref_image: &ScalarVolume,
    model: &MotionModel,
    signal: &SurrogateSignal,
    t_index: usize,
) -> Result<ScalarVolume> {
    ref_image.meta.ensure_same(model.meta(), "animate")?;
    let field = model.predict_sample(signal, t_index)?;
    warp_image(ref_image, &field)
}

#[derive(Debug, Serialize, Deserialize)]
struct Units {
    a1: String,
    a2: String,
    a3: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            a1: "mm/ml".into(),
            a2: "mm*s/ml".into(),
            a3: "mm".into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    schema: String,
    grid: GridMeta,
    units: Units,
    a1: String,
    a2: String,
    a3: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(n: usize) -> GridMeta {
        GridMeta::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    fn random_field(m: &GridMeta, rng: &mut ChaCha8Rng, scale: f64) -> DisplacementField {
        let u = (0..m.n_vox())
            .map(|_| [0; 3].map(|_| rng.random_range(-scale..scale)))
            .collect();
        DisplacementField::new(m.clone(), u).unwrap()
    }

    fn breathing() -> RegressorMatrix {
        let v: Vec<f64> = (0..10)
            .map(|j| 1000.0 * (std::f64::consts::PI * j as f64 / 10.0).sin().powi(2))
            .collect();
        let s = SurrogateSignal::from_phases(v).unwrap();
        RegressorMatrix::from_signal(&s).unwrap()
    }

    fn synth(model: &MotionModel, z: &RegressorMatrix) -> Vec<DisplacementField> {
        (0..z.n_phases())
            .map(|j| model.predict(z.z()[(0, j)], z.z()[(1, j)]))
            .collect()
    }

    #[test]
    fn serialization_blocking() {
        let m = meta(2);
        let mut f = DisplacementField::identity(m.clone());
        f.u[0] = [1.0, 2.0, 3.0];
        let v = serialize_fields(&[f.clone()]).unwrap();
        assert_eq!(v.shape(), (24, 1));
        assert_eq!((v[(0, 0)], v[(8, 0)], v[(16, 0)]), (1.0, 2.0, 3.0));
        assert_eq!(deserialize_field(&v, 0, &m).unwrap(), f);
        let zero = serialize_fields(&[DisplacementField::identity(m)]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = meta(4);
        let fields: Vec<_> = (0..5).map(|_| random_field(&m, &mut rng, 3.0)).collect();
        let v = serialize_fields(&fields).unwrap();
        assert_eq!(deserialize_fields(&v, &m).unwrap(), fields);
        assert!(serialize_fields(&[]).is_err());
    }

    #[test]
    fn recovers_exact_linear_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = meta(5);
        let truth = MotionModel {
            a1: random_field(&m, &mut rng, 0.005),
            a2: random_field(&m, &mut rng, 0.005),
            a3: random_field(&m, &mut rng, 1.0),
        };
        let z = breathing();
        assert_eq!(z.rank(), 3);
        let fields = synth(&truth, &z);
        let streamed = fit_fields(&fields, &z).unwrap();
        let v = serialize_fields(&fields).unwrap();
        let dense = fit(&v, &z, &m).unwrap();
        for (got, want) in [
            (&streamed.a1, &truth.a1),
            (&streamed.a2, &truth.a2),
            (&streamed.a3, &truth.a3),
            (&dense.a1, &truth.a1),
            (&dense.a3, &truth.a3),
        ] {
            let rel = got.max_diff(want).unwrap() / want.max_norm();
            assert!(rel < 1e-10, "{rel}");
        }
        let rep = streamed.report(&fields, &z).unwrap();
        assert!(rep.residual < 1e-8);
        for (j, f) in fields.iter().enumerate() {
            let p = streamed.predict(z.z()[(0, j)], z.z()[(1, j)]);
            assert!(p.max_diff(f).unwrap() < 1e-8);
        }
    }

    #[test]
    fn hand_solved_single_voxel() {
        let m = GridMeta::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let z = RegressorMatrix::new(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(z.rank(), 2);
        let f0 = DisplacementField::identity(m.clone());
        let f1 = DisplacementField::constant(m, [2.0, 0.0, 0.0]);
        let model = fit_fields(&[f0, f1], &z).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(model.a1.u[0][0], 2.0));
        assert!(close(model.a2.u[0][0], 0.0));
        assert!(close(model.a3.u[0][0], 0.0));
    }

    #[test]
    fn constant_surrogate_is_rank_deficient_but_fits() {
        let m = meta(3);
        let z = RegressorMatrix::new(&[500.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(z.rank(), 1);
        let f = DisplacementField::constant(m, [1.0, -1.0, 0.5]);
        let model = fit_fields(&vec![f.clone(); 4], &z).unwrap();
        assert!(model.validate().is_ok());
        assert!(model.predict(500.0, 0.0).max_diff(&f).unwrap() < 1e-9);
        assert!(model.a2.max_norm() < 1e-15);
    }

    #[test]
    fn identical_fields_give_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = meta(4);
        let f = random_field(&m, &mut rng, 2.0);
        let z = breathing();
        let model = fit_fields(&vec![f.clone(); z.n_phases()], &z).unwrap();
        assert!(model.a1.max_norm() < 1e-8);
        assert!(model.a2.max_norm() < 1e-8);
        assert!(model.a3.max_diff(&f).unwrap() < 1e-8);
    }

    #[test]
    fn fit_is_a_least_squares_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = meta(3);
        let z = breathing();
        let fields: Vec<_> = (0..z.n_phases()).map(|_| random_field(&m, &mut rng, 2.0)).collect();
        let v = serialize_fields(&fields).unwrap();
        let model = fit(&v, &z, &m).unwrap();
        let a = DMatrix::from_fn(v.nrows(), 3, |r, k| {
            let f = [&model.a1, &model.a2, &model.a3][k];
            f.u[r % m.n_vox()][r / m.n_vox()]
        });
        let best = (&v - &a * z.z()).norm();
        for _ in 0..100 {
            let mut d = DMatrix::from_fn(a.nrows(), 3, |_, _| rng.random_range(-1.0..1.0));
            d *= 1e-3 / d.norm();
            let r = (&v - (&a + d) * z.z()).norm();
            assert!(r >= best, "{r} < {best}");
        }
    }

    #[test]
    fn predict_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = meta(3);
        let model = MotionModel {
            a1: random_field(&m, &mut rng, 1.0),
            a2: random_field(&m, &mut rng, 1.0),
            a3: DisplacementField::identity(m.clone()),
        };
        // zero intercept keeps the identity exact in floating point
        let base = model.predict(0.0, 0.0);
        assert_eq!(base.max_norm(), 0.0);
        let p = model.predict(2.0, -4.0);
        let q = model.predict(1.0, -2.0);
        for (a, b) in p.u.iter().zip(&q.u) {
            for c in 0..3 {
                assert_eq!(a[c], 2.0 * b[c]);
            }
        }
        let zero = MotionModel::zero(m);
        assert_eq!(zero.predict(123.0, 4.0).max_norm(), 0.0);
    }

    #[test]
    fn animate_with_zero_model_is_identity() {
        let m = meta(4);
        let img = ScalarVolume::from_fn(m.clone(), |p| p[0] * p[1] - p[2]);
        let s = SurrogateSignal::from_phases(vec![0.0, 300.0, 100.0]).unwrap();
        let zero = MotionModel::zero(m.clone());
        for t in 0..3 {
            assert_eq!(animate(&img, &zero, &s, t).unwrap(), img);
        }
        assert!(matches!(
            animate(&img, &zero, &s, 3),
            Err(Error::IndexOutOfRange { .. })
        ));
        let other = ScalarVolume::constant(meta(3), 0.0);
        assert!(matches!(animate(&other, &zero, &s, 0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn shape_errors() {
        let z = breathing();
        let v = DMatrix::zeros(24, 3);
        assert!(matches!(fit(&v, &z, &meta(2)), Err(Error::ShapeMismatch(_))));
        assert!(RegressorMatrix::new(&[1.0], &[]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = meta(3);
        let model = MotionModel {
            a1: random_field(&m, &mut rng, 1.0),
            a2: random_field(&m, &mut rng, 1.0),
            a3: random_field(&m, &mut rng, 1.0),
        };
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = MotionModel::load(dir.path()).unwrap();
        assert!(back.a1.max_diff(&model.a1).unwrap() < 1e-6);
        assert!(back.a3.max_diff(&model.a3).unwrap() < 1e-6);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest["schema"], SCHEMA);
        assert_eq!(manifest["units"]["a2"], "mm*s/ml");
    }
}
