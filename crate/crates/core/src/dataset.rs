//! A 4D acquisition: phase images, the spirometry signal sampled at each
//! phase, and structure masks on the reference phase.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridMeta, MaskVolume, ScalarVolume};
use crate::rvf;
use crate::surrogate::SurrogateSignal;

pub const MANIFEST: &str = "dataset.json";
pub const SCHEMA: &str = "ds4d-1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset4D {
    pub patient_id: String,
    pub ref_phase_index: usize,
    pub phases: Vec<ScalarVolume>,
    /// One sample per phase.
    pub signal: SurrogateSignal,
    /// Structures delineated on the reference phase.
    pub masks: BTreeMap<String, MaskVolume>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PhaseEntry {
    index: usize,
    image: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema: String,
    patient_id: String,
    ref_phase_index: usize,
    phases: Vec<PhaseEntry>,
    signal: String,
    masks: BTreeMap<String, String>,
}

impl Dataset4D {
    pub fn meta(&self) -> &GridMeta {
        &self.phases[self.ref_phase_index].meta
    }

    pub fn ref_image(&self) -> &ScalarVolume {
        &self.phases[self.ref_phase_index]
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::EmptyList("phases"));
        }
        if self.ref_phase_index >= self.phases.len() {
            return Err(Error::IndexOutOfRange {
                index: self.ref_phase_index,
                len: self.phases.len(),
            });
        }
        if self.signal.len() != self.phases.len() {
            return Err(Error::InconsistentPhaseCount(format!(
                "{}: {} phases but {} signal samples",
                self.patient_id,
                self.phases.len(),
                self.signal.len()
            )));
        }
        let meta = self.meta();
        for p in &self.phases {
            meta.ensure_same(&p.meta, "dataset phases")?;
        }
        for m in self.masks.values() {
            meta.ensure_same(&m.meta, "dataset masks")?;
        }
        Ok(())
    }

    /// Looks up a mask, or the union of several when `name` is a
    /// `+`-separated list such as `lung_right+lung_left`.
    pub fn mask(&self, name: &str) -> Result<MaskVolume> {
        let parts: Vec<&MaskVolume> = name
            .split('+')
            .map(|n| {
                self.masks.get(n.trim()).ok_or_else(|| {
                    Error::InvalidConfig(format!("{}: no mask named '{}'", self.patient_id, n.trim()))
                })
            })
            .collect::<Result<_>>()?;
        MaskVolume::union(&parts)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut phases = Vec::new();
        for (j, p) in self.phases.iter().enumerate() {
            let name = format!("phase_{j:02}.rvf");
            rvf::write_volume(dir.join(&name), p)?;
            phases.push(PhaseEntry { index: j, image: name });
        }
        let mut masks = BTreeMap::new();
        for (k, m) in &self.masks {
            let name = format!("mask_{k}.rvf");
            rvf::write_mask(dir.join(&name), m)?;
            masks.insert(k.clone(), name);
        }
        self.signal.write_csv(&dir.join("signal.csv"))?;
        let manifest = Manifest {
            schema: SCHEMA.into(),
            patient_id: self.patient_id.clone(),
            ref_phase_index: self.ref_phase_index,
            phases,
            signal: "signal.csv".into(),
            masks,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads from a dataset directory or from the manifest file itself.
    pub fn load(location: &Path) -> Result<Dataset4D> {
        let (dir, path) = if location.is_dir() {
            (location, location.join(MANIFEST))
        } else {
            (location.parent().unwrap_or(Path::new(".")), location.to_path_buf())
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.schema != SCHEMA {
            return Err(Error::format(&path, format!("unsupported schema '{}'", m.schema)));
        }
        let mut entries = m.phases;
        entries.sort_by_key(|p| p.index);
        if entries.iter().enumerate().any(|(j, p)| p.index != j) {
            return Err(Error::format(&path, "phase indices must be 0..n without gaps"));
        }
        let phases = entries
            .iter()
            .map(|p| rvf::read_volume(dir.join(&p.image)))
            .collect::<Result<Vec<_>>>()?;
        let mut masks = BTreeMap::new();
        for (k, f) in &m.masks {
            masks.insert(k.clone(), rvf::read_mask(dir.join(f))?);
        }
        let signal = SurrogateSignal::read_csv(&dir.join(&m.signal))?;
        let ds = Dataset4D {
            patient_id: m.patient_id,
            ref_phase_index: m.ref_phase_index,
            phases,
            signal,
            masks,
        };
        ds.validate()?;
        Ok(ds)
    }
}
