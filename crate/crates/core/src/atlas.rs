//! Population mean motion atlas and transfer to unseen static volumes.
//!
//! All fields are backward maps. For a patient `p` with reference-phase image
//! `P` and a reference patient with image `R`, the inter-patient field
//! `r = register(R, P)` maps reference coordinates into the patient
//! (`P ∘ (id + r) ≈ R`). A patient phase field `u_j` is carried into the
//! reference frame by conjugation,
//!
//! ```text
//! ψ_j = r⁻¹ ∘ u_j ∘ r      (r applied first)
//! ```
//!
//! so that `R ∘ (id + ψ_j)` reproduces the patient's phase `j` seen from the
//! reference anatomy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset4D;
use crate::error::{Error, Result};
use crate::field::{
    compose_fields, invert_field, resample_field_onto, resample_volume_onto, weighted_sum, INVERT_MAX_ITER,
    INVERT_TOL,
};
use crate::grid::{DisplacementField, GridMeta, MaskVolume, ScalarVolume};
use crate::registration::{register, Regularizer, RegistrationConfig};
use crate::regression::{fit_fields, FitReport, MotionModel, RegressorMatrix};
use crate::rvf;
use crate::surrogate::{average_signals, SurrogateSignal};

pub const SCHEMA: &str = "atlas-1";
pub const MANIFEST: &str = "atlas.json";
/// Transfer refuses grids whose extent differs from the atlas by more than this factor.
pub const MAX_EXTENT_RATIO: f64 = 2.0;

/// Intra-patient registration results of one 4D patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientMotionSet {
    pub patient_id: String,
    pub ref_phase_index: usize,
    /// `phase_j ≈ ref_image ∘ (id + phase_fields[j])`; zero at the reference phase.
    pub phase_fields: Vec<DisplacementField>,
    pub signal: SurrogateSignal,
    pub ref_image: ScalarVolume,
    pub masks: BTreeMap<String, MaskVolume>,
}

impl PatientMotionSet {
    pub fn meta(&self) -> &GridMeta {
        &self.ref_image.meta
    }

    pub fn n_phases(&self) -> usize {
        self.phase_fields.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase_fields.is_empty() {
            return Err(Error::EmptyList("phase fields"));
        }
        if self.ref_phase_index >= self.phase_fields.len() {
            return Err(Error::IndexOutOfRange {
                index: self.ref_phase_index,
                len: self.phase_fields.len(),
            });
        }
        if self.signal.len() != self.phase_fields.len() {
            return Err(Error::InconsistentPhaseCount(format!(
                "{}: {} fields but {} signal samples",
                self.patient_id,
                self.phase_fields.len(),
                self.signal.len()
            )));
        }
        for f in &self.phase_fields {
            self.meta().ensure_same(&f.meta, "patient fields")?;
        }
        for m in self.masks.values() {
            self.meta().ensure_same(&m.meta, "patient masks")?;
        }
        Ok(())
    }

    /// Runs the intra-patient registrations of `ds` (each phase against the
    /// reference phase). For SMP the sliding mask is taken from `cfg` or
    /// else looked up in the dataset as `sliding_mask`.
    pub fn from_dataset(ds: &Dataset4D, cfg: &RegistrationConfig, sliding_mask: Option<&str>) -> Result<Self> {
        ds.validate()?;
        let mut cfg = cfg.clone();
        if cfg.regularizer == Regularizer::Smp && cfg.sliding_mask.is_none() {
            let name = sliding_mask.ok_or_else(|| {
                Error::InvalidConfig("SMP regularisation needs a sliding mask name".into())
            })?;
            cfg.sliding_mask = Some(ds.mask(name)?);
        }
        let reference = ds.ref_image();
        let phase_fields = ds
            .phases
            .par_iter()
            .enumerate()
            .map(|(j, phase)| {
                if j == ds.ref_phase_index {
                    Ok(DisplacementField::identity(reference.meta.clone()))
                } else {
                    log::info!("{}: registering phase {j}", ds.patient_id);
                    register(phase, reference, &cfg).map(|r| r.field)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatientMotionSet {
            patient_id: ds.patient_id.clone(),
            ref_phase_index: ds.ref_phase_index,
            phase_fields,
            signal: ds.signal.clone(),
            ref_image: reference.clone(),
            masks: ds.masks.clone(),
        })
    }

    /// Per-voxel regression of the phase fields on the patient's own signal.
    pub fn fit_model(&self) -> Result<(MotionModel, FitReport)> {
        self.validate()?;
        let z = RegressorMatrix::from_signal(&self.signal)?;
        let model = fit_fields(&self.phase_fields, &z)?;
        let report = model.report(&self.phase_fields, &z)?;
        Ok((model, report))
    }

    /// Images, fields and masks resampled onto `meta` (physical positions kept).
    pub fn onto_grid(&self, meta: &GridMeta) -> PatientMotionSet {
        if self.meta() == meta {
            return self.clone();
        }
        PatientMotionSet {
            patient_id: self.patient_id.clone(),
            ref_phase_index: self.ref_phase_index,
            phase_fields: self.phase_fields.iter().map(|f| resample_field_onto(f, meta)).collect(),
            signal: self.signal.clone(),
            ref_image: resample_volume_onto(&self.ref_image, meta),
            masks: self
                .masks
                .iter()
                .map(|(k, m)| (k.clone(), resample_mask_onto(m, meta)))
                .collect(),
        }
    }
}

pub fn resample_mask_onto(mask: &MaskVolume, meta: &GridMeta) -> MaskVolume {
    MaskVolume::threshold(&resample_volume_onto(&mask.to_scalar(), meta), 0.5)
}

/// Inter-patient field from the reference frame into `patient`
/// (`warp_image(patient.ref_image, field) ≈ reference.ref_image`).
pub fn register_to_reference(
    patient: &PatientMotionSet,
    reference: &PatientMotionSet,
    cfg: &RegistrationConfig,
) -> Result<DisplacementField> {
    let moving = patient.onto_grid(reference.meta());
    Ok(register(&reference.ref_image, &moving.ref_image, cfg)?.field)
}

/// `phi_inter ∘ phi_j ∘ phi_inter⁻¹`, innermost applied first, with the
/// inverse computed by fixed-point iteration.
pub fn transport_field(phi_j: &DisplacementField, phi_inter: &DisplacementField) -> Result<DisplacementField> {
    let inverse = invert_field(phi_inter, INVERT_TOL, INVERT_MAX_ITER)?;
    transport_field_with_inverse(phi_j, phi_inter, &inverse.field)
}

/// Conjugation when the inverse of `phi_inter` is already known.
pub fn transport_field_with_inverse(
    phi_j: &DisplacementField,
    phi_inter: &DisplacementField,
    phi_inter_inv: &DisplacementField,
) -> Result<DisplacementField> {
    compose_fields(&compose_fields(phi_inter, phi_j)?, phi_inter_inv)
}

/// Voxelwise mean of displacement vectors.
pub fn average_fields(fields: &[DisplacementField]) -> Result<DisplacementField> {
    if fields.is_empty() {
        return Err(Error::EmptyList("fields"));
    }
    let w = 1.0 / fields.len() as f64;
    let terms: Vec<_> = fields.iter().map(|f| (f, w)).collect();
    weighted_sum(&terms)
}

fn average_volumes(vols: &[ScalarVolume]) -> Result<ScalarVolume> {
    let first = vols.first().ok_or(Error::EmptyList("volumes"))?;
    for v in vols {
        first.meta.ensure_same(&v.meta, "average_volumes")?;
    }
    let n = vols.len() as f64;
    Ok(ScalarVolume {
        meta: first.meta.clone(),
        values: (0..first.values.len())
            .map(|i| vols.iter().map(|v| v.values[i]).sum::<f64>() / n)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasOptions {
    /// Whether the reference patient's own fields and signal enter the averages.
    pub include_reference: bool,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions {
            include_reference: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAtlas {
    pub ref_patient_id: String,
    pub ref_phase_index: usize,
    /// Mean phase fields on the reference grid.
    pub mean_phase_fields: Vec<DisplacementField>,
    pub mean_signal: SurrogateSignal,
    pub mean_image: ScalarVolume,
    pub mean_model: MotionModel,
    /// Structures of the reference patient.
    pub masks: BTreeMap<String, MaskVolume>,
    pub patient_ids: Vec<String>,
}

impl MeanAtlas {
    pub fn meta(&self) -> &GridMeta {
        &self.mean_image.meta
    }
}

/// Builds the mean atlas in the frame of patient `reference_id`.
pub fn build_mean_atlas(
    patients: &[PatientMotionSet],
    reference_id: &str,
    cfg: &RegistrationConfig,
) -> Result<MeanAtlas> {
    build_mean_atlas_with(patients, reference_id, cfg, AtlasOptions::default())
}

pub fn build_mean_atlas_with(
    patients: &[PatientMotionSet],
    reference_id: &str,
    cfg: &RegistrationConfig,
    opts: AtlasOptions,
) -> Result<MeanAtlas> {
    let reference = patients
        .iter()
        .find(|p| p.patient_id == reference_id)
        .ok_or_else(|| Error::InvalidConfig(format!("reference '{reference_id}' is not in the population")))?;
    for p in patients {
        p.validate()?;
        if p.n_phases() != reference.n_phases() {
            return Err(Error::InconsistentPhaseCount(format!(
                "{} has {} phases, reference {} has {}",
                p.patient_id,
                p.n_phases(),
                reference_id,
                reference.n_phases()
            )));
        }
    }
    let meta = reference.meta().clone();
    let n_phases = reference.n_phases();

    struct Contribution {
        fields: Vec<DisplacementField>,
        image: ScalarVolume,
        signal: SurrogateSignal,
        is_reference: bool,
    }

    let contributions = patients
        .par_iter()
        .map(|p| -> Result<Contribution> {
            if p.patient_id == reference_id {
                return Ok(Contribution {
                    fields: p.phase_fields.clone(),
                    image: p.ref_image.clone(),
                    signal: p.signal.clone(),
                    is_reference: true,
                });
            }
            log::info!("registering {} to reference {reference_id}", p.patient_id);
            let local = p.onto_grid(&meta);
            let reg = register(&reference.ref_image, &local.ref_image, cfg)?.field;
            let forward = invert_field(&reg, INVERT_TOL, INVERT_MAX_ITER)?.field;
            let fields = local
                .phase_fields
                .iter()
                .map(|u| transport_field_with_inverse(u, &forward, &reg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Contribution {
                fields,
                image: crate::field::warp_image(&local.ref_image, &reg)?,
                signal: p.signal.clone(),
                is_reference: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let motion: Vec<&Contribution> = contributions
        .iter()
        .filter(|c| opts.include_reference || !c.is_reference)
        .collect();
    if motion.is_empty() {
        return Err(Error::TooFewPatients { got: 0, need: 1 });
    }
    let mean_phase_fields = (0..n_phases)
        .map(|j| {
            let fj: Vec<DisplacementField> = motion.iter().map(|c| c.fields[j].clone()).collect();
            average_fields(&fj)
        })
        .collect::<Result<Vec<_>>>()?;
    let signals: Vec<SurrogateSignal> = motion.iter().map(|c| c.signal.clone()).collect();
    let mean_signal = average_signals(&signals)?;
    let images: Vec<ScalarVolume> = contributions.iter().map(|c| c.image.clone()).collect();
    let mean_image = average_volumes(&images)?;
    let z = RegressorMatrix::from_signal(&mean_signal)?;
    let mean_model = fit_fields(&mean_phase_fields, &z)?;

    Ok(MeanAtlas {
        ref_patient_id: reference_id.to_string(),
        ref_phase_index: reference.ref_phase_index,
        mean_phase_fields,
        mean_signal,
        mean_image,
        mean_model,
        masks: reference.masks.clone(),
        patient_ids: patients.iter().map(|p| p.patient_id.clone()).collect(),
    })
}

/// Everything produced while transferring an atlas to a new volume.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub model: MotionModel,
    /// `warp_image(atlas.mean_image, atlas_to_new) ≈ new_image`.
    pub atlas_to_new: DisplacementField,
    pub phase_fields: Vec<DisplacementField>,
}

/// Motion model of a new static volume, on the volume's own grid.
pub fn transfer_to_new(atlas: &MeanAtlas, new_image: &ScalarVolume, cfg: &RegistrationConfig) -> Result<MotionModel> {
    Ok(transfer_detailed(atlas, new_image, cfg)?.model)
}

pub fn transfer_detailed(atlas: &MeanAtlas, new_image: &ScalarVolume, cfg: &RegistrationConfig) -> Result<Transfer> {
    let meta = &new_image.meta;
    check_resampling_range(atlas.meta(), meta)?;
    let (mean_image, fields) = if atlas.meta() == meta {
        (atlas.mean_image.clone(), atlas.mean_phase_fields.clone())
    } else {
        (
            resample_volume_onto(&atlas.mean_image, meta),
            atlas.mean_phase_fields.iter().map(|f| resample_field_onto(f, meta)).collect(),
        )
    };
    let reg = register(new_image, &mean_image, cfg)?.field;
    let forward = invert_field(&reg, INVERT_TOL, INVERT_MAX_ITER)?.field;
    let phase_fields = fields
        .iter()
        .map(|u| transport_field_with_inverse(u, &forward, &reg))
        .collect::<Result<Vec<_>>>()?;
    let z = RegressorMatrix::from_signal(&atlas.mean_signal)?;
    let model = fit_fields(&phase_fields, &z)?;
    Ok(Transfer {
        model,
        atlas_to_new: reg,
        phase_fields,
    })
}

fn check_resampling_range(atlas: &GridMeta, new: &GridMeta) -> Result<()> {
    let (a, b) = (atlas.extent(), new.extent());
    for axis in 0..3 {
        let ratio = b[axis] / a[axis];
        if !(1.0 / MAX_EXTENT_RATIO..=MAX_EXTENT_RATIO).contains(&ratio) {
            return Err(Error::GridMismatch(format!(
                "new volume extent {:.1} mm vs atlas {:.1} mm on axis {axis} is beyond the resampling range",
                b[axis], a[axis]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasManifest {
    schema: String,
    ref_patient_id: String,
    ref_phase_index: usize,
    patient_ids: Vec<String>,
    grid: GridMeta,
    mean_image: String,
    phase_fields: Vec<String>,
    signal: String,
    model: String,
    masks: BTreeMap<String, String>,
}

impl MeanAtlas {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        rvf::write_volume(dir.join("mean_image.rvf"), &self.mean_image)?;
        let mut phase_fields = Vec::new();
        for (j, f) in self.mean_phase_fields.iter().enumerate() {
            let name = format!("field_{j:02}.rvf");
            rvf::write_field(dir.join(&name), f)?;
            phase_fields.push(name);
        }
        self.mean_signal.write_csv(dir.join("signal.csv"))?;
        self.mean_model.save(&dir.join("model"))?;
        let mut masks = BTreeMap::new();
        for (k, m) in &self.masks {
            let name = format!("mask_{k}.rvf");
            rvf::write_mask(dir.join(&name), m)?;
            masks.insert(k.clone(), name);
        }
        let manifest = AtlasManifest {
            schema: SCHEMA.into(),
            ref_patient_id: self.ref_patient_id.clone(),
            ref_phase_index: self.ref_phase_index,
            patient_ids: self.patient_ids.clone(),
            grid: self.meta().clone(),
            mean_image: "mean_image.rvf".into(),
            phase_fields,
            signal: "signal.csv".into(),
            model: "model".into(),
            masks,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads an atlas directory. Volumes are stored as f32.
    pub fn load(dir: &Path) -> Result<MeanAtlas> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: AtlasManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.schema != SCHEMA {
            return Err(Error::format(&path, format!("unsupported schema '{}'", m.schema)));
        }
        let mean_image = rvf::read_volume(dir.join(&m.mean_image))?;
        m.grid.ensure_same(&mean_image.meta, "atlas manifest")?;
        let mean_phase_fields = m
            .phase_fields
            .iter()
            .map(|f| rvf::read_field(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let mut masks = BTreeMap::new();
        for (k, f) in &m.masks {
            masks.insert(k.clone(), rvf::read_mask(dir.join(f))?);
        }
        let atlas = MeanAtlas {
            ref_patient_id: m.ref_patient_id,
            ref_phase_index: m.ref_phase_index,
            mean_phase_fields,
            mean_signal: SurrogateSignal::read_csv(dir.join(&m.signal))?,
            mean_image,
            mean_model: MotionModel::load(&dir.join(&m.model))?,
            masks,
            patient_ids: m.patient_ids,
        };
        if atlas.mean_signal.len() != atlas.mean_phase_fields.len() {
            return Err(Error::InconsistentPhaseCount(format!(
                "atlas has {} fields but {} signal samples",
                atlas.mean_phase_fields.len(),
                atlas.mean_signal.len()
            )));
        }
        for f in &atlas.mean_phase_fields {
            atlas.meta().ensure_same(&f.meta, "atlas fields")?;
        }
        atlas.meta().ensure_same(atlas.mean_model.meta(), "atlas model")?;
        Ok(atlas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> GridMeta {
        GridMeta::centered([16; 3], 2.0).unwrap()
    }

    fn smooth_field(m: &GridMeta, amp: f64, phase: f64) -> DisplacementField {
        DisplacementField::from_fn(m.clone(), move |p| {
            let k = 2.0 * std::f64::consts::PI / 40.0;
            [
                amp * (k * p[1] + phase).sin(),
                0.5 * amp * (k * p[2]).cos(),
                amp * (k * p[0]).sin() * (k * p[1]).cos(),
            ]
        })
    }

    #[test]
    fn averaging() {
        let m = meta();
        let c = |x: f64| DisplacementField::constant(m.clone(), [x, 0.0, 0.0]);
        let avg = average_fields(&[c(1.0), c(2.0), c(3.0)]).unwrap();
        assert!(avg.max_diff(&c(2.0)).unwrap() < 1e-15);
        let f = smooth_field(&m, 2.0, 0.3);
        assert_eq!(average_fields(&[f.clone()]).unwrap(), f);
        let neg = DisplacementField {
            meta: m.clone(),
            u: f.u.iter().map(|v| v.map(|c| -c)).collect(),
        };
        assert_eq!(average_fields(&[f.clone(), neg]).unwrap().max_norm(), 0.0);
        assert!(matches!(average_fields(&[]), Err(Error::EmptyList(_))));
        let g = smooth_field(&m, 1.0, 1.0);
        let ab = average_fields(&[f.clone(), g.clone()]).unwrap();
        let ba = average_fields(&[g, f]).unwrap();
        assert!(ab.max_diff(&ba).unwrap() < 1e-15);
    }

    #[test]
    fn transport_by_identity_is_identity() {
        let m = meta();
        let u = smooth_field(&m, 2.0, 0.0);
        let id = DisplacementField::identity(m);
        let t = transport_field(&u, &id).unwrap();
        assert!(t.max_diff(&u).unwrap() < 1e-6);
    }

    #[test]
    fn transporting_identity_stays_near_identity() {
        let m = meta();
        let r = smooth_field(&m, 2.0, 0.5);
        let t = transport_field(&DisplacementField::identity(m), &r).unwrap();
        assert!(t.max_norm() < 0.1, "{}", t.max_norm());
    }

    #[test]
    fn translations_commute_under_conjugation() {
        let m = meta();
        let c = DisplacementField::constant(m.clone(), [1.5, -2.0, 0.5]);
        let d = DisplacementField::constant(m, [0.0, 1.0, -3.0]);
        let t = transport_field(&d, &c).unwrap();
        assert!(t.max_diff(&d).unwrap() < 1e-3);
    }

    fn patient(id: &str, m: &GridMeta, amp: f64) -> PatientMotionSet {
        let v: Vec<f64> = (0..6)
            .map(|j| 1000.0 * (std::f64::consts::PI * j as f64 / 6.0).sin().powi(2))
            .collect();
        let signal = SurrogateSignal::from_phases(v.clone()).unwrap();
        let phase_fields = v
            .iter()
            .map(|&vj| DisplacementField::constant(m.clone(), [0.0, 0.0, -amp * vj / 1000.0]))
            .collect();
        PatientMotionSet {
            patient_id: id.into(),
            ref_phase_index: 0,
            phase_fields,
            signal,
            ref_image: ScalarVolume::from_fn(m.clone(), |p| (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 80.0).exp()),
            masks: BTreeMap::new(),
        }
    }

    #[test]
    fn singleton_atlas_is_the_patient() {
        let m = meta();
        let p = patient("a", &m, 3.0);
        let atlas = build_mean_atlas(&[p.clone()], "a", &RegistrationConfig::inter_default()).unwrap();
        assert_eq!(atlas.mean_phase_fields, p.phase_fields);
        assert_eq!(atlas.mean_image, p.ref_image);
        assert_eq!(atlas.mean_signal, p.signal);
        let (model, _) = p.fit_model().unwrap();
        assert_eq!(atlas.mean_model, model);
    }

    #[test]
    fn duplicates_average_to_the_original() {
        let m = meta();
        let a = patient("a", &m, 3.0);
        let mut b = a.clone();
        b.patient_id = "b".into();
        let atlas = build_mean_atlas(&[a.clone(), b], "a", &RegistrationConfig::inter_default()).unwrap();
        for (x, y) in atlas.mean_phase_fields.iter().zip(&a.phase_fields) {
            assert!(x.max_diff(y).unwrap() < 1e-3);
        }
    }

    #[test]
    fn reference_flag_controls_motion_averaging() {
        let m = meta();
        let a = patient("a", &m, 2.0);
        let mut b = patient("b", &m, 4.0);
        b.ref_image = a.ref_image.clone();
        let cfg = RegistrationConfig::inter_default();
        let with = build_mean_atlas(&[a.clone(), b.clone()], "a", &cfg).unwrap();
        let without = build_mean_atlas_with(
            &[a, b],
            "a",
            &cfg,
            AtlasOptions {
                include_reference: false,
            },
        )
        .unwrap();
        let peak = with.mean_signal.peak_index();
        assert!((with.mean_phase_fields[peak].max_norm() - 3.0).abs() < 1e-6);
        assert!((without.mean_phase_fields[peak].max_norm() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn inconsistent_phase_counts_are_rejected() {
        let m = meta();
        let a = patient("a", &m, 2.0);
        let mut b = patient("b", &m, 2.0);
        b.phase_fields.pop();
        b.signal = SurrogateSignal::from_phases(b.signal.v[..5].to_vec()).unwrap();
        let err = build_mean_atlas(&[a, b], "a", &RegistrationConfig::inter_default()).unwrap_err();
        assert!(matches!(err, Error::InconsistentPhaseCount(_)));
    }

    #[test]
    fn transfer_rejects_far_off_grids() {
        let m = meta();
        let a = patient("a", &m, 2.0);
        let atlas = build_mean_atlas(&[a], "a", &RegistrationConfig::inter_default()).unwrap();
        let big = ScalarVolume::constant(GridMeta::centered([16; 3], 5.0).unwrap(), 0.0);
        assert!(matches!(
            transfer_to_new(&atlas, &big, &RegistrationConfig::inter_default()),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn identity_transfer_reproduces_the_atlas_model() {
        let m = meta();
        let a = patient("a", &m, 2.0);
        let atlas = build_mean_atlas(&[a], "a", &RegistrationConfig::inter_default()).unwrap();
        let model = transfer_to_new(&atlas, &atlas.mean_image, &RegistrationConfig::inter_default()).unwrap();
        for j in 0..atlas.mean_signal.len() {
            let p = model.predict_sample(&atlas.mean_signal, j).unwrap();
            let q = atlas.mean_model.predict_sample(&atlas.mean_signal, j).unwrap();
            assert!(p.max_diff(&q).unwrap() < 0.1);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let m = meta();
        let mut a = patient("a", &m, 2.0);
        a.masks.insert("liver".into(), MaskVolume::from_fn(m.clone(), |p| p[2] < 0.0));
        let atlas = build_mean_atlas(&[a], "a", &RegistrationConfig::inter_default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        atlas.save(dir.path()).unwrap();
        let back = MeanAtlas::load(dir.path()).unwrap();
        assert_eq!(back.masks, atlas.masks);
        assert_eq!(back.patient_ids, atlas.patient_ids);
        assert!(back.mean_phase_fields[3].max_diff(&atlas.mean_phase_fields[3]).unwrap() < 1e-5);
    }
}
