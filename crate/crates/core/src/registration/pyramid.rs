//! Multi-resolution pyramid: 3³ box smoothing followed by decimation.

use crate::error::Result;
use crate::field::resample_volume_onto;
use crate::grid::{map_voxels, MaskVolume, ScalarVolume};

/// Separable 3-tap mean filter with clamp-to-edge borders.
pub fn box_smooth(vol: &ScalarVolume) -> ScalarVolume {
    let meta = &vol.meta;
    let strides = [1, meta.dims[0], meta.dims[0] * meta.dims[1]];
    let mut values = vol.values.clone();
    for a in 0..3 {
        let src = values;
        values = map_voxels(meta, |idx, _| {
            let i = meta.ijk(idx)[a];
            let lo = if i > 0 { idx - strides[a] } else { idx };
            let hi = if i + 1 < meta.dims[a] { idx + strides[a] } else { idx };
            (src[lo] + src[idx] + src[hi]) / 3.0
        });
    }
    ScalarVolume {
        meta: meta.clone(),
        values,
    }
}

/// Smooths then resamples onto `dims` voxels covering the same box.
pub fn downsample_volume(vol: &ScalarVolume, dims: [usize; 3]) -> Result<ScalarVolume> {
    let target = vol.meta.with_dims(dims)?;
    Ok(resample_volume_onto(&box_smooth(vol), &target))
}

/// Mask decimation by smoothing the 0/1 raster and thresholding at ½.
pub fn downsample_mask(mask: &MaskVolume, dims: [usize; 3]) -> Result<MaskVolume> {
    let coarse = downsample_volume(&mask.to_scalar(), dims)?;
    Ok(MaskVolume::threshold(&coarse, 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridMeta;

    #[test]
    fn smoothing_preserves_constants_and_ramps() {
        let m = GridMeta::new([6, 5, 4], [1.0; 3], [0.0; 3]).unwrap();
        let c = ScalarVolume::constant(m.clone(), 2.0);
        assert_eq!(box_smooth(&c), c);
        let ramp = ScalarVolume::from_fn(m.clone(), |p| p[0] + 2.0 * p[1]);
        let s = box_smooth(&ramp);
        let idx = m.index(2, 2, 1);
        assert!((s.values[idx] - ramp.values[idx]).abs() < 1e-12);
    }

    #[test]
    fn mask_downsampling_keeps_large_blocks() {
        let m = GridMeta::new([16; 3], [1.0; 3], [0.0; 3]).unwrap();
        let mask = MaskVolume::from_fn(m, |p| p[0] < 7.5);
        let d = downsample_mask(&mask, [8; 3]).unwrap();
        assert_eq!(d.count(), 4 * 64);
    }
}
