//! Settings shared by every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset4D;
use crate::error::{Error, Result};
use crate::field::resample_volume_onto;
use crate::grid::MaskVolume;
use crate::registration::RegistrationConfig;

/// Union of lung masks used for sliding-motion regularisation by default.
pub const DEFAULT_SLIDING_MASK: &str = "lung_right+lung_left";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Intra-patient (phase to reference phase) registration.
    pub intra: RegistrationConfig,
    /// Inter-patient and atlas-to-new registration.
    pub inter: RegistrationConfig,
    /// Working grid size per axis.
    pub resolution: usize,
    pub seed: u64,
    /// Mask name (or `+`-joined names) used as sliding surface for SMP.
    pub sliding_mask: String,
    pub include_reference: bool,
    pub out: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            intra: RegistrationConfig::intra_default(),
            inter: RegistrationConfig::inter_default(),
            resolution: 64,
            seed: 0,
            sliding_mask: DEFAULT_SLIDING_MASK.into(),
            include_reference: true,
            out: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !r.is_power_of_two() || !(32..=256).contains(&r) {
            return Err(Error::InvalidConfig(format!(
                "resolution {r} must be a power of two in [32, 256]"
            )));
        }
        // SMP masks are filled in per dataset
        let mut intra = self.intra.clone();
        if intra.sliding_mask.is_none() {
            intra.regularizer = crate::registration::Regularizer::Dnl;
        }
        intra.validate()?;
        self.inter.validate()
    }

    /// `ds` on the working grid (same physical box, `resolution³` voxels).
    pub fn working_dataset(&self, ds: &Dataset4D) -> Result<Dataset4D> {
        let dims = [self.resolution; 3];
        if ds.meta().dims == dims {
            return Ok(ds.clone());
        }
        let meta = ds.meta().with_dims(dims)?;
        log::info!("{}: resampling {:?} -> {:?}", ds.patient_id, ds.meta().dims, dims);
        Ok(Dataset4D {
            patient_id: ds.patient_id.clone(),
            ref_phase_index: ds.ref_phase_index,
            phases: ds.phases.iter().map(|p| resample_volume_onto(p, &meta)).collect(),
            signal: ds.signal.clone(),
            masks: ds
                .masks
                .iter()
                .map(|(k, m)| {
                    let s = resample_volume_onto(&m.to_scalar(), &meta);
                    (k.clone(), MaskVolume::threshold(&s, 0.5))
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_rules() {
        assert!(PipelineConfig::default().validate().is_ok());
        for r in [16, 48, 512] {
            let c = PipelineConfig {
                resolution: r,
                ..Default::default()
            };
            assert!(c.validate().is_err(), "{r}");
        }
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"resolution": 32, "seed": 7}"#).unwrap();
        assert_eq!(c.resolution, 32);
        assert_eq!(c.seed, 7);
        assert_eq!(c.inter, RegistrationConfig::inter_default());
    }
}
