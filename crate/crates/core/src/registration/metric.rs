//! Intensity distance measures and their derivatives with respect to the warped image.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{det_sum, ScalarVolume};

/// Standard deviations below this are treated as a constant image.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    /// Mean squared difference after z-scoring both images.
    Nssd,
    /// Mean squared difference of raw intensities.
    Ssd,
}

/// `(1/N) Σ (fixed − warped)²` with no intensity normalisation.
pub fn metric_ssd(fixed: &ScalarVolume, warped: &ScalarVolume) -> Result<f64> {
    fixed.meta.ensure_same(&warped.meta, "metric_ssd")?;
    Ok(ssd(&fixed.values, &warped.values))
}

/// Mean squared difference of the z-scored images.
pub fn metric_nssd(fixed: &ScalarVolume, warped: &ScalarVolume) -> Result<f64> {
    fixed.meta.ensure_same(&warped.meta, "metric_nssd")?;
    let f = ZScore::of(&fixed.values);
    let w = ZScore::of(&warped.values);
    let n = fixed.values.len();
    Ok(det_sum(n, |i| {
        let d = f.apply(fixed.values[i]) - w.apply(warped.values[i]);
        d * d
    }) / n as f64)
}

fn ssd(a: &[f64], b: &[f64]) -> f64 {
    det_sum(a.len(), |i| {
        let d = a[i] - b[i];
        d * d
    }) / a.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ZScore {
    mean: f64,
    std: f64,
}

impl ZScore {
    pub(crate) fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = det_sum(values.len(), |i| values[i]) / n;
        let var = det_sum(values.len(), |i| {
            let d = values[i] - mean;
            d * d
        }) / n;
        ZScore {
            mean,
            std: var.sqrt(),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, v: f64) -> f64 {
        if self.std < MIN_STD {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }
}

/// Metric value plus `∂D/∂warped(x)` for every voxel.
pub(crate) struct MetricEval {
    #[cfg_attr(not(test), allow(dead_code))]
    pub value: f64,
    pub d_warped: Vec<f64>,
}

impl Metric {
    pub(crate) fn value(&self, fixed: &[f64], warped: &[f64]) -> f64 {
        match self {
            Metric::Ssd => ssd(fixed, warped),
            Metric::Nssd => {
                let zf = ZScore::of(fixed);
                let zw = ZScore::of(warped);
                det_sum(fixed.len(), |i| {
                    let d = zf.apply(fixed[i]) - zw.apply(warped[i]);
                    d * d
                }) / fixed.len() as f64
            }
        }
    }

    pub(crate) fn eval(&self, fixed: &[f64], warped: &[f64]) -> MetricEval {
        let n = fixed.len() as f64;
        match self {
            Metric::Ssd => MetricEval {
                value: ssd(fixed, warped),
                d_warped: fixed
                    .iter()
                    .zip(warped)
                    .map(|(f, w)| 2.0 * (w - f) / n)
                    .collect(),
            },
            Metric::Nssd => {
                let zf = ZScore::of(fixed);
                let zw = ZScore::of(warped);
                let r: Vec<f64> = fixed
                    .iter()
                    .zip(warped)
                    .map(|(&f, &w)| zw.apply(w) - zf.apply(f))
                    .collect();
                let value = det_sum(r.len(), |i| r[i] * r[i]) / n;
                if zw.std < MIN_STD {
                    return MetricEval {
                        value,
                        d_warped: vec![0.0; r.len()],
                    };
                }
                // d/dw_i of (1/N)Σ(w̃−f̃)² through the mean and std of w
                let mean_r = det_sum(r.len(), |i| r[i]) / n;
                let mean_rw = det_sum(r.len(), |i| r[i] * zw.apply(warped[i])) / n;
                let scale = 2.0 / (n * zw.std);
                let d_warped = r
                    .iter()
                    .zip(warped)
                    .map(|(&ri, &w)| scale * (ri - mean_r - zw.apply(w) * mean_rw))
                    .collect();
                MetricEval { value, d_warped }
            }
        }
    }
}
