//! Overlap scores and the leave-one-out harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{build_mean_atlas_with, transfer_detailed, AtlasOptions, PatientMotionSet};
use crate::dataset::Dataset4D;
use crate::error::{Error, Result};
use crate::field::warp_image;
use crate::grid::{DisplacementField, MaskVolume};
use crate::phantom::PhantomTruth;
use crate::pipeline::PipelineConfig;

/// `2|A∩B| / (|A| + |B|)`, and 1 when both masks are empty.
pub fn dice(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    a.meta.ensure_same(&b.meta, "dice")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        na += x as usize;
        nb += y as usize;
        inter += (x & y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Backward warp of the 0/1 raster with trilinear sampling, thresholded at ½.
pub fn warp_mask(mask: &MaskVolume, field: &DisplacementField) -> Result<MaskVolume> {
    let w = warp_image(&mask.to_scalar(), field)?;
    Ok(MaskVolume::threshold(&w, 0.5))
}

/// A population member: its dataset and, when known, masks at every phase.
#[derive(Debug, Clone)]
pub struct Subject {
    pub dataset: Dataset4D,
    pub phase_masks: Option<Vec<BTreeMap<String, MaskVolume>>>,
    /// Ground-truth motion; used instead of registration when present and
    /// the harness is told to trust it.
    pub true_fields: Option<Vec<DisplacementField>>,
}

impl From<Dataset4D> for Subject {
    fn from(dataset: Dataset4D) -> Self {
        Subject {
            dataset,
            phase_masks: None,
            true_fields: None,
        }
    }
}

impl From<PhantomTruth> for Subject {
    fn from(t: PhantomTruth) -> Self {
        Subject {
            dataset: t.dataset,
            phase_masks: Some(t.true_masks),
            true_fields: Some(t.true_fields),
        }
    }
}

/// Where the intra-patient fields of the training patients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MotionSource {
    /// Intra-patient registration of every phase.
    #[default]
    Registration,
    /// Ground-truth phantom fields.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureDice {
    /// Atlas mask against the held-out mask without any warp.
    pub pre: f64,
    /// After the atlas-to-new registration.
    pub registered: f64,
    /// After additionally applying the predicted motion at `motion_phase`.
    pub motion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub reference: String,
    pub motion_phase: usize,
    pub structures: BTreeMap<String, StructureDice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub values: Vec<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(mut values: Vec<f64>) -> Summary {
        let sorted = {
            let mut s = values.clone();
            s.sort_by(f64::total_cmp);
            s
        };
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        values.shrink_to_fit();
        Summary {
            median,
            min: sorted[0],
            max: sorted[n - 1],
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub pre: Summary,
    pub registered: Summary,
    pub motion: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub folds: Vec<FoldResult>,
    pub structures: BTreeMap<String, StructureSummary>,
}

impl DiceReport {
    fn from_folds(mut folds: Vec<FoldResult>) -> DiceReport {
        folds.sort_by(|a, b| a.held_out.cmp(&b.held_out));
        let mut structures = BTreeMap::new();
        let names: Vec<String> = folds[0].structures.keys().cloned().collect();
        for name in names {
            let col = |f: &dyn Fn(&StructureDice) -> f64| -> Summary {
                Summary::of(folds.iter().map(|fold| f(&fold.structures[&name])).collect())
            };
            let motion = if folds.iter().all(|f| f.structures[&name].motion.is_some()) {
                Some(col(&|d| d.motion.unwrap()))
            } else {
                None
            };
            structures.insert(
                name.clone(),
                StructureSummary {
                    pre: col(&|d| d.pre),
                    registered: col(&|d| d.registered),
                    motion,
                },
            );
        }
        DiceReport { folds, structures }
    }

    /// Folds and structures where registration lowered the overlap.
    pub fn regressions(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for f in &self.folds {
            for (name, d) in &f.structures {
                if d.registered < d.pre {
                    out.push((f.held_out.clone(), name.clone()));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "structure", "pre", "reg", "reg_min", "motion", "mot_min"
        );
        for (name, st) in &self.structures {
            let (m, mmin) = match &st.motion {
                Some(m) => (format!("{:.4}", m.median), format!("{:.4}", m.min)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}",
                name, st.pre.median, st.registered.median, st.registered.min, m, mmin
            );
        }
        s
    }

    /// Rows `fold,structure,stage,dice`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fold,structure,stage,dice\n");
        for f in &self.folds {
            for (name, d) in &f.structures {
                let _ = writeln!(s, "{},{},pre,{}", f.held_out, name, d.pre);
                let _ = writeln!(s, "{},{},registered,{}", f.held_out, name, d.registered);
                if let Some(m) = d.motion {
                    let _ = writeln!(s, "{},{},motion,{}", f.held_out, name, m);
                }
            }
        }
        s
    }

    /// Writes `dice.json`, `dice.txt` and `dice_folds.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("dice.json", self.to_json()),
            ("dice.txt", self.to_table()),
            ("dice_folds.csv", self.to_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooOptions {
    pub motion_source: MotionSource,
    /// Structures to score; all masks common to the population when `None`.
    pub structures: Option<Vec<String>>,
}

impl Default for LooOptions {
    fn default() -> Self {
        LooOptions {
            motion_source: MotionSource::Registration,
            structures: None,
        }
    }
}

/// Leave-one-out: each patient in turn is the transfer target of an atlas
/// built from the others (reference = first remaining id).
pub fn leave_one_out(population: &[Subject], cfg: &PipelineConfig) -> Result<DiceReport> {
    leave_one_out_with(population, cfg, &LooOptions::default())
}

pub fn leave_one_out_with(population: &[Subject], cfg: &PipelineConfig, opts: &LooOptions) -> Result<DiceReport> {
    if population.len() < 3 {
        return Err(Error::TooFewPatients {
            got: population.len(),
            need: 3,
        });
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| population[a].dataset.patient_id.cmp(&population[b].dataset.patient_id));
    if order
        .windows(2)
        .any(|w| population[w[0]].dataset.patient_id == population[w[1]].dataset.patient_id)
    {
        return Err(Error::InvalidConfig("patient ids must be unique".into()));
    }

    let structures: Vec<String> = match &opts.structures {
        Some(s) => s.clone(),
        None => population[0]
            .dataset
            .masks
            .keys()
            .filter(|k| population.iter().all(|p| p.dataset.masks.contains_key(*k)))
            .cloned()
            .collect(),
    };
    if structures.is_empty() {
        return Err(Error::EmptyList("structures"));
    }

    // intra-patient motion is fold independent
    let motion: Vec<PatientMotionSet> = order
        .iter()
        .map(|&i| motion_set(&population[i], cfg, opts.motion_source))
        .collect::<Result<_>>()?;

    let folds = (0..order.len())
        .into_par_iter()
        .map(|h| {
            let held = &population[order[h]];
            let training: Vec<PatientMotionSet> = motion
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != h)
                .map(|(_, m)| m.clone())
                .collect();
            let reference = training[0].patient_id.clone();
            log::info!("fold {}: atlas on reference {reference}", held.dataset.patient_id);
            let atlas = build_mean_atlas_with(
                &training,
                &reference,
                &cfg.inter,
                AtlasOptions {
                    include_reference: cfg.include_reference,
                },
            )?;
            let target = held.dataset.ref_image();
            let transfer = transfer_detailed(&atlas, target, &cfg.inter)?;
            let motion_phase = held.dataset.signal.peak_index();
            let predicted = transfer.model.predict_sample(&held.dataset.signal, motion_phase)?;
            let mut scores = BTreeMap::new();
            for name in &structures {
                let atlas_mask = atlas
                    .masks
                    .get(name)
                    .ok_or_else(|| Error::InvalidConfig(format!("atlas has no mask '{name}'")))?;
                let atlas_mask = if atlas_mask.meta == target.meta {
                    atlas_mask.clone()
                } else {
                    crate::atlas::resample_mask_onto(atlas_mask, &target.meta)
                };
                let truth = &held.dataset.masks[name];
                let warped = warp_mask(&atlas_mask, &transfer.atlas_to_new)?;
                let moved = match &held.phase_masks {
                    Some(pm) => Some(dice(&warp_mask(&warped, &predicted)?, &pm[motion_phase][name])?),
                    None => None,
                };
                scores.insert(
                    name.clone(),
                    StructureDice {
                        pre: dice(&atlas_mask, truth)?,
                        registered: dice(&warped, truth)?,
                        motion: moved,
                    },
                );
            }
            Ok(FoldResult {
                held_out: held.dataset.patient_id.clone(),
                reference,
                motion_phase,
                structures: scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiceReport::from_folds(folds))
}

fn motion_set(s: &Subject, cfg: &PipelineConfig, source: MotionSource) -> Result<PatientMotionSet> {
    match (source, &s.true_fields) {
        (MotionSource::Truth, Some(fields)) => Ok(PatientMotionSet {
            patient_id: s.dataset.patient_id.clone(),
            ref_phase_index: s.dataset.ref_phase_index,
            phase_fields: fields.clone(),
            signal: s.dataset.signal.clone(),
            ref_image: s.dataset.ref_image().clone(),
            masks: s.dataset.masks.clone(),
        }),
        (MotionSource::Truth, None) => Err(Error::InvalidConfig(format!(
            "{} has no ground-truth motion",
            s.dataset.patient_id
        ))),
        (MotionSource::Registration, _) => {
            PatientMotionSet::from_dataset(&s.dataset, &cfg.intra, Some(&cfg.sliding_mask))
        }
    }
}
